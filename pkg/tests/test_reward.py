from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aparl.errors import DegenerateBatch, IndexOutOfRange
from aparl.mdp import Trajectory, chain, make_rng, sample_trajectory
from aparl.policy import SoftmaxPolicy
from aparl.reward import (
    LEARNED,
    TEACHER,
    ConstantUtility,
    DiscountedFeatureSum,
    GoalProximity,
    LinearReward,
    PreferenceArrays,
    PreferencePair,
    QuadraticRegularizer,
    Teacher,
    UtilitySpec,
    ZeroRegularizer,
    bt_prob,
    format_pairs,
    parse_pairs,
    pref_loglik,
    pref_loglik_grad_term1,
    teacher_label,
    trajectory_return,
    validate_pairs,
)
from aparl.verify import fd_gradient

finite = st.floats(-50, 50, allow_nan=False)


def random_reward(seed, S=3, A=2, n=3):
    rng = make_rng(seed)
    return LinearReward(rng.normal(size=n), rng.normal(size=(S, A, n)))


def random_batch(seed, B=6, H=4, S=3, A=2):
    rng = make_rng(seed, 1)
    pairs = []
    for _ in range(B):
        t0 = Trajectory.from_arrays(rng.integers(0, S, H), rng.integers(0, A, H))
        t1 = Trajectory.from_arrays(rng.integers(0, S, H), rng.integers(0, A, H))
        pairs.append(PreferencePair(t0, t1, int(rng.integers(2))))
    return pairs


def test_reward_bound_recorded():
    r = random_reward(0)
    assert np.abs(r.table()).max() <= r.bound + 1e-12
    assert r(1, 0) == pytest.approx(r.nu @ r.reward_features[1, 0])


def test_return_modes():
    r = LinearReward.constant(2, 2)
    tau = Trajectory(((0, 0), (1, 1), (0, 1)))
    assert trajectory_return(r, tau, mode=LEARNED) == 3.0
    assert trajectory_return(r, tau, 0.5, TEACHER) == pytest.approx(1.75, abs=1e-15)


def test_return_matches_loop():
    r = random_reward(2)
    rng = make_rng(2, 1)
    tau = Trajectory.from_arrays(rng.integers(0, 3, 5), rng.integers(0, 2, 5))
    gamma, H = 0.8, 5
    loop_learned = sum(r(s, a) for s, a in tau.steps)
    loop_teacher = sum(gamma ** (H - 1 - h) * r(s, a) for h, (s, a) in enumerate(tau.steps))
    assert trajectory_return(r, tau) == pytest.approx(loop_learned, rel=1e-12)
    assert trajectory_return(r, tau, gamma, TEACHER) == pytest.approx(loop_teacher, rel=1e-12)


def test_bt_examples():
    assert bt_prob(1.3, 1.3, 4.0) == 0.5
    assert bt_prob(10.0, -3.0, 0.0) == 0.5
    assert bt_prob(np.log(3.0), 0.0, 1.0) == pytest.approx(0.75, abs=1e-15)
    assert bt_prob(1.0, 0.0, np.inf) == 1.0 and bt_prob(0.0, 1.0, np.inf) == 0.0


@given(a=finite, b=finite, beta=st.floats(0, 20))
def test_bt_complement(a, b, beta):
    assert bt_prob(a, b, beta) + bt_prob(b, a, beta) == pytest.approx(1.0, abs=1e-12)


@given(a=finite, b=finite, c=finite, beta=st.floats(0, 5))
def test_bt_shift_invariance(a, b, c, beta):
    assert bt_prob(a + c, b + c, beta) == pytest.approx(bt_prob(a, b, beta), abs=1e-12)


@given(d1=st.floats(-10, 10), d2=st.floats(-10, 10), beta=st.floats(0.1, 3))
def test_bt_monotone(d1, d2, beta):
    assume(abs(d1 - d2) > 1e-6)
    lo, hi = sorted((d1, d2))
    assert bt_prob(hi, 0.0, beta) > bt_prob(lo, 0.0, beta)


def test_deterministic_teacher():
    r = random_reward(3)
    rng = make_rng(3, 2)
    for _ in range(20):
        t0 = Trajectory.from_arrays(rng.integers(0, 3, 4), rng.integers(0, 2, 4))
        t1 = Trajectory.from_arrays(rng.integers(0, 3, 4), rng.integers(0, 2, 4))
        r0, r1 = trajectory_return(r, t0, 0.9, TEACHER), trajectory_return(r, t1, 0.9, TEACHER)
        if r0 == r1:
            continue
        labels = {teacher_label(t0, t1, r, np.inf, 0.9, make_rng(k)) for k in range(10)}
        assert labels == {int(r0 > r1)}


def test_deterministic_teacher_tie_is_fair_coin():
    r = LinearReward.constant(2, 2)
    t = Trajectory(((0, 0), (1, 1)))
    rng = make_rng(9)
    ys = [teacher_label(t, t, r, np.inf, 0.9, rng) for _ in range(4000)]
    assert abs(np.mean(ys) - 0.5) < 0.03


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.01, 10), b=st.floats(-5, 5))
def test_deterministic_teacher_affine_invariance(seed, a, b):
    r = random_reward(seed)
    moved = LinearReward(np.r_[a * r.nu, b], np.concatenate([r.reward_features, np.ones((3, 2, 1))], axis=2))
    rng = make_rng(seed, 3)
    t0 = Trajectory.from_arrays(rng.integers(0, 3, 4), rng.integers(0, 2, 4))
    t1 = Trajectory.from_arrays(rng.integers(0, 3, 4), rng.integers(0, 2, 4))
    assume(abs(trajectory_return(r, t0, 0.9, TEACHER) - trajectory_return(r, t1, 0.9, TEACHER)) > 1e-9)
    y = teacher_label(t0, t1, r, np.inf, 0.9, make_rng(0))
    assert teacher_label(t0, t1, moved, np.inf, 0.9, make_rng(1)) == y


def test_teacher_rejects_unequal_lengths():
    r = LinearReward.constant(2, 2)
    with pytest.raises(ValueError):
        teacher_label(Trajectory(((0, 0),)), Trajectory(((0, 0), (1, 1))), r, 1.0, 0.9, make_rng(0))


def test_teacher_frequencies():
    r = random_reward(5)
    t0 = Trajectory(((0, 0), (1, 1), (2, 0)))
    t1 = Trajectory(((2, 1), (1, 0), (0, 0)))
    rng = make_rng(5, 1)
    ys = [teacher_label(t0, t1, r, 0.0, 0.9, rng) for _ in range(10_000)]
    assert abs(np.mean(ys) - 0.5) <= 0.015
    teacher = Teacher(r, 2.0, 0.9)
    p = bt_prob(trajectory_return(r, t0, 0.9, TEACHER), trajectory_return(r, t1, 0.9, TEACHER), 2.0)
    ys = [teacher.label(t0, t1, rng) for _ in range(10_000)]
    assert abs(np.mean(ys) - p) <= 3 * np.sqrt(p * (1 - p) / 10_000)


def test_loglik_examples():
    r = LinearReward.constant(2, 2)
    t = Trajectory(((0, 0), (1, 1)))
    assert pref_loglik(r, [PreferencePair(t, t, 1)]) == pytest.approx(-0.693147, abs=1e-6)
    r = LinearReward.tabular(np.array([[np.log(3.0), 0.0], [0.0, 0.0]]))
    pair = PreferencePair(Trajectory(((0, 0),)), Trajectory(((1, 0),)), 1)
    assert pref_loglik(r, [pair]) == pytest.approx(-0.287682, abs=1e-6)


def test_empty_batch():
    r = LinearReward.constant(2, 2)
    with pytest.raises(DegenerateBatch):
        pref_loglik(r, [])
    with pytest.raises(DegenerateBatch):
        pref_loglik_grad_term1(r, [])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_loglik_strictly_negative_and_term1_is_its_gradient(seed):
    r = random_reward(seed)
    batch = random_batch(seed)
    assert pref_loglik(r, batch) < 0
    g = pref_loglik_grad_term1(r, batch)
    fd = fd_gradient(lambda nu: pref_loglik(r.with_nu(nu), batch), r.nu)
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_single_pair_gradient():
    r = random_reward(7)
    batch = random_batch(7, B=1)
    g = pref_loglik_grad_term1(r, batch)
    fd = fd_gradient(lambda nu: pref_loglik(r.with_nu(nu), batch), r.nu)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_term1_symmetric_cancellation():
    r = random_reward(8)
    t0 = Trajectory(((0, 0), (1, 1)))
    t1 = Trajectory(((1, 1), (0, 0)))  # same steps, other order: same returns and feature sums
    for y in (0, 1):
        g = pref_loglik_grad_term1(r, [PreferencePair(t0, t1, y), PreferencePair(t0, t1, 1 - y)])
        assert np.allclose(g, 0.0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_term1_label_swap(seed):
    r = random_reward(seed)
    (p,) = random_batch(seed, B=1)
    swapped = PreferencePair(p.tau1, p.tau0, 1 - p.label)
    assert np.allclose(pref_loglik_grad_term1(r, [p]), pref_loglik_grad_term1(r, [swapped]), atol=1e-14)


def test_pairs_text_round_trip():
    batch = random_batch(3, B=5)
    text = format_pairs(batch)
    assert text.splitlines()[0].count(";") == 2
    back = parse_pairs(text)
    assert [(p.tau0.steps, p.tau1.steps, p.label) for p in back] == [(p.tau0.steps, p.tau1.steps, p.label) for p in batch]
    arr = PreferenceArrays.from_pairs(batch)
    assert [p.tau0.steps for p in arr.pairs()] == [p.tau0.steps for p in batch]
    with pytest.raises(ValueError):
        parse_pairs("2;0,0;0,0\n")


def test_validate_pairs_against_mdp():
    mdp = chain(3, horizon_lower=2)
    ok = PreferencePair(Trajectory(((1, 0), (0, 1))), Trajectory(((1, 1), (2, 1))), 1)
    validate_pairs([ok], mdp)
    with pytest.raises(IndexOutOfRange):
        validate_pairs([PreferencePair(Trajectory(((1, 0), (5, 1))), ok.tau1, 0)], mdp)
    with pytest.raises(IndexOutOfRange):
        validate_pairs([PreferencePair(Trajectory(((1, 0),)), Trajectory(((1, 0),)), 0)], mdp)


@pytest.mark.parametrize(
    "utility",
    [
        ConstantUtility(2.0),
        DiscountedFeatureSum(make_rng(0).normal(size=(3, 2, 2)), 0.9, 0.5),
        GoalProximity(np.linspace(0, 1, 3), 0.9),
    ],
)
@pytest.mark.parametrize("reg", [ZeroRegularizer(), QuadraticRegularizer(0.3, np.array([1.0, -1.0]))])
def test_catalog_gradients(utility, reg):
    spec = UtilitySpec(utility, reg)
    rng = make_rng(1)
    states, actions = rng.integers(0, 3, (4, 5)), rng.integers(0, 2, (4, 5))
    nu = rng.normal(size=2)
    fd = np.stack([fd_gradient(lambda v: spec.values(states, actions, v)[t], nu) for t in range(4)])
    assert np.allclose(spec.grads(states, actions, nu), fd, atol=1e-6)
    assert np.allclose(spec.reg_grad(nu), fd_gradient(spec.reg, nu), atol=1e-6)


def test_catalog_is_closed():
    with pytest.raises(TypeError):
        UtilitySpec(lambda s, a, nu: 0.0)

    class Wrong(QuadraticRegularizer):
        def grad(self, nu):
            return np.zeros(np.size(nu))

    with pytest.raises(ValueError):
        UtilitySpec(ConstantUtility(), Wrong(1.0, np.zeros(2)))


def test_sampled_pairs_have_upper_horizon():
    mdp = chain(5, horizon_lower=3, horizon_upper=4)
    pol = SoftmaxPolicy.tabular(5, 2)
    rng = make_rng(0)
    pair = PreferencePair(sample_trajectory(mdp, pol, 4, rng), sample_trajectory(mdp, pol, 4, rng), 1)
    validate_pairs([pair], mdp)
