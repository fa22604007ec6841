from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from aparl.errors import ConfigError, IndexOutOfRange, InvalidHorizon, SupportTooLarge
from aparl.mdp import (
    TabularMdp,
    Trajectory,
    TrajectorySupport,
    chain,
    enumerate_trajectories,
    format_mdp,
    grid_index,
    gridworld,
    make_rng,
    parse_mdp,
    sample_trajectories,
    sample_trajectory,
    trajectory_prob,
)
from aparl.policy import SoftmaxPolicy


def random_mdp(rng, S=3, A=2, H=3, sparse=False):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    if sparse:
        P = np.where(rng.random(P.shape) < 0.3, 0.0, P)
        P[..., 0] += 1e-3
        P /= P.sum(axis=2, keepdims=True)
    return TabularMdp(P, rng.dirichlet(np.ones(S)), 0.9, H, H)


def random_policy(rng, S, A, scale=1.0):
    return SoftmaxPolicy.tabular(S, A, rng.normal(scale=scale, size=S * A))


def naive_prob(mdp, policy, tau):
    # straight product of the factors, one at a time
    pi = policy.probs_table()
    p = mdp.initial_dist[tau.steps[0][0]]
    for h, (s, a) in enumerate(tau.steps):
        p *= pi[s, a]
        if h + 1 < len(tau.steps):
            p *= mdp.transitions[s, a, tau.steps[h + 1][0]]
    return p


def test_rows_must_be_distributions():
    P = np.full((2, 1, 2), 0.5)
    P[0, 0] = [0.7, 0.4]
    with pytest.raises(ValueError):
        TabularMdp(P, np.array([1.0, 0.0]), 0.9, 2, 2)
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.array([0.6, 0.6]), 0.9, 2, 2)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
def test_discount_open_interval(gamma):
    with pytest.raises(ValueError):
        TabularMdp(np.ones((1, 1, 1)), np.ones(1), gamma, 2, 2)


def test_single_state_single_action():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones(1), 0.9, 2, 2)
    out = enumerate_trajectories(mdp, SoftmaxPolicy.tabular(1, 1), 2)
    assert len(out) == 1
    tau, p = out[0]
    assert tau.steps == ((0, 0), (0, 0))
    assert p == pytest.approx(1.0, abs=1e-15)


def test_two_state_deterministic_uniform():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    mdp = TabularMdp(P, np.array([1.0, 0.0]), 0.9, 2, 2)
    out = enumerate_trajectories(mdp, SoftmaxPolicy.tabular(2, 2), 2)
    assert len(out) == 4
    assert all(p == pytest.approx(0.25, abs=1e-15) for _, p in out)


def test_enumeration_matches_naive_loop():
    rng = make_rng(3)
    mdp = random_mdp(rng, S=3, A=2, H=3, sparse=True)
    pol = random_policy(rng, 3, 2)
    out = enumerate_trajectories(mdp, pol, 3)
    # independent enumeration: every (s, a) sequence, keep positive ones
    expected = {}
    for seq in itertools.product(range(3), range(2), range(3), range(2), range(3), range(2)):
        tau = Trajectory(tuple(zip(seq[0::2], seq[1::2])))
        p = naive_prob(mdp, pol, tau)
        if p > 0:
            expected[tau.steps] = p
    got = {tau.steps: p for tau, p in out}
    assert got.keys() == expected.keys()
    for k, p in expected.items():
        assert got[k] == pytest.approx(p, rel=1e-12)


def test_invalid_horizon():
    mdp = chain(3)
    with pytest.raises(InvalidHorizon):
        enumerate_trajectories(mdp, SoftmaxPolicy.tabular(3, 2), 0)
    with pytest.raises(InvalidHorizon):
        sample_trajectories(mdp, SoftmaxPolicy.tabular(3, 2), -1, 5, make_rng(0))


def test_support_guard():
    mdp = gridworld(3, horizon_lower=5)
    with pytest.raises(SupportTooLarge):
        TrajectorySupport.build(mdp, 12, limit=10_000)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), S=st.integers(1, 4), A=st.integers(1, 3), H=st.integers(1, 5))
def test_enumeration_normalised(seed, S, A, H):
    rng = make_rng(seed)
    mdp = random_mdp(rng, S, A, H, sparse=bool(seed % 2))
    pol = random_policy(rng, S, A, scale=2.0)
    total = sum(p for _, p in enumerate_trajectories(mdp, pol, H))
    assert total == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_trajectory_prob_factorisation(seed):
    rng = make_rng(seed)
    mdp = random_mdp(rng, 3, 3, 4)
    pol = random_policy(rng, 3, 3)
    tau = sample_trajectory(mdp, pol, 4, rng)
    assert trajectory_prob(mdp, pol, tau) == pytest.approx(naive_prob(mdp, pol, tau), rel=1e-12)


def test_trajectory_prob_saturated_deterministic():
    mdp = chain(5, horizon_lower=3)
    theta = np.zeros(10)
    theta[1::2] = 60.0  # always move right; saturated
    pol = SoftmaxPolicy.tabular(5, 2, theta)
    tau = Trajectory(((2, 1), (3, 1), (4, 1)))
    assert trajectory_prob(mdp, pol, tau) == pytest.approx(1.0, abs=1e-6)


def test_trajectory_prob_zero_transition():
    mdp = chain(5, horizon_lower=2)
    tau = Trajectory(((2, 1), (1, 0)))  # moving right cannot land on 1
    assert trajectory_prob(mdp, SoftmaxPolicy.tabular(5, 2), tau) == 0.0


def test_trajectory_prob_matches_enumeration():
    rng = make_rng(11)
    mdp = random_mdp(rng, 3, 2, 3)
    pol = random_policy(rng, 3, 2)
    for tau, p in enumerate_trajectories(mdp, pol, 3):
        assert trajectory_prob(mdp, pol, tau) == pytest.approx(p, rel=1e-12)


def test_trajectory_prob_bad_index():
    mdp = chain(3)
    with pytest.raises(IndexOutOfRange):
        trajectory_prob(mdp, SoftmaxPolicy.tabular(3, 2), Trajectory(((0, 2), (1, 0))))
    with pytest.raises(IndexOutOfRange):
        trajectory_prob(mdp, SoftmaxPolicy.tabular(3, 2), Trajectory(((5, 0),)))


def test_sample_unique_trajectory():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones(1), 0.5, 3, 3)
    for seed in range(3):
        assert sample_trajectory(mdp, SoftmaxPolicy.tabular(1, 1), 3, make_rng(seed)).steps == ((0, 0),) * 3


def test_sample_deterministic_given_seed():
    mdp = gridworld(3)
    pol = SoftmaxPolicy.tabular(9, 4, make_rng(0).normal(size=36))
    a = sample_trajectories(mdp, pol, 5, 50, make_rng(42, 7))
    b = sample_trajectories(mdp, pol, 5, 50, make_rng(42, 7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def _two_state():
    P = np.array([[[0.8, 0.2], [0.3, 0.7]], [[0.6, 0.4], [0.1, 0.9]]])
    mdp = TabularMdp(P, np.array([0.7, 0.3]), 0.9, 3, 3)
    return mdp, SoftmaxPolicy.tabular(2, 2, np.array([0.3, -0.2, 0.5, 0.1]))


def test_sample_frequencies_within_three_se():
    mdp, pol = _two_state()
    n = 100_000
    s, a = sample_trajectories(mdp, pol, 3, n, make_rng(5))
    sup = mdp.support(3)
    p = sup.probs(pol)
    codes = {tuple(np.r_[sup.states[i], sup.actions[i]]): i for i in range(len(sup))}
    counts = np.zeros(len(sup))
    idx = [codes[tuple(row)] for row in np.c_[s, a]]
    np.add.at(counts, idx, 1)
    se = np.sqrt(p * (1 - p) / n)
    z = np.abs(counts / n - p) / se
    # 3 SE per cell; with 64 cells a handful of 3-sigma excursions is not expected
    assert (z > 3).sum() <= 1
    chi2, pval = stats.chisquare(counts, n * p)
    assert pval > 1e-3


def test_chain_and_gridworld_shapes():
    mdp = chain(5)
    assert mdp.num_states == 5 and mdp.num_actions == 2
    assert mdp.initial_dist[2] == 1.0
    assert mdp.transitions[0, 0, 0] == 1.0 and mdp.transitions[4, 1, 4] == 1.0
    g = gridworld(3, walls=[(1, 1)])
    assert g.num_states == 9 and g.num_actions == 4
    assert g.transitions[grid_index(3, 0, 1), 1, grid_index(3, 0, 1)] == 1.0  # down into the wall
    assert g.transitions[0, 3, 1] == 1.0  # right
    with pytest.raises(ValueError):
        gridworld(3, walls=[(0, 0)])


def test_mdp_text_round_trip():
    rng = make_rng(1)
    mdp = random_mdp(rng, 3, 2, 4)
    back = parse_mdp(format_mdp(mdp))
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.initial_dist, mdp.initial_dist)
    assert (back.discount, back.horizon_lower, back.horizon_upper) == (mdp.discount, 4, 4)


def test_mdp_text_errors_carry_line_numbers():
    text = "states 1\nactions 1\ndiscount 0.5\nhorizon_lower 2\ninitial 1\nbogus 3\ntransition 0 0 1\n"
    with pytest.raises(ConfigError) as err:
        parse_mdp(text)
    assert err.value.line == 6 and "bogus" in str(err.value)
    with pytest.raises(ConfigError):
        parse_mdp("states 2\nactions 1\ndiscount 0.5\nhorizon_lower 2\ninitial 1 0\ntransition 0 0 1 0\n")
