from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aparl.errors import IndexOutOfRange, NonFiniteParameter
from aparl.mdp import make_rng
from aparl.policy import SoftmaxPolicy, format_params, parse_params
from aparl.verify import fd_gradient


def random_policy(seed, S=3, A=3, d=4, scale=1.0):
    rng = make_rng(seed)
    return SoftmaxPolicy(rng.normal(scale=scale, size=d), rng.normal(size=(S, A, d)))


def test_uniform_at_zero():
    pol = SoftmaxPolicy.tabular(3, 2)
    for s in range(3):
        assert np.allclose(pol.action_probs(s), [0.5, 0.5], atol=1e-15)


def test_logistic_ln3():
    theta = np.zeros(4)
    theta[2] = np.log(3.0)  # state 1, action 0
    pol = SoftmaxPolicy.tabular(2, 2, theta)
    assert np.allclose(pol.action_probs(1), [0.75, 0.25], atol=1e-15)


def test_shift_invariance():
    rng = make_rng(1)
    theta = rng.normal(size=6)
    base = SoftmaxPolicy.tabular(2, 3, theta)
    shifted = theta.copy()
    shifted[3:] += 17.5  # every logit of state 1
    assert np.allclose(SoftmaxPolicy.tabular(2, 3, shifted).action_probs(1), base.action_probs(1), atol=1e-14)


def test_non_finite_theta_rejected():
    with pytest.raises(NonFiniteParameter):
        SoftmaxPolicy.tabular(2, 2, np.array([0.0, np.nan, 0.0, 0.0]))


def test_large_theta_no_overflow():
    pol = SoftmaxPolicy.tabular(1, 3, np.array([800.0, -800.0, 0.0]))
    assert pol.saturated
    assert np.allclose(pol.action_probs(0), [1.0, 0.0, 0.0])


def test_tabular_score_at_zero():
    pol = SoftmaxPolicy.tabular(3, 2)
    sc = pol.score(1, 0)
    expected = np.zeros(6)
    expected[2], expected[3] = 0.5, -0.5
    assert np.allclose(sc, expected, atol=1e-15)


def test_tabular_log_hessian_block():
    pol = SoftmaxPolicy.tabular(3, 2)
    H = pol.log_policy_hessian(1, 0)
    assert np.allclose(H[2:4, 2:4], [[-0.25, 0.25], [0.25, -0.25]], atol=1e-15)
    assert np.count_nonzero(H) == 4


def test_index_errors():
    pol = SoftmaxPolicy.tabular(2, 2)
    with pytest.raises(IndexOutOfRange):
        pol.action_probs(2)
    with pytest.raises(IndexOutOfRange):
        pol.score(0, 5)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), scale=st.floats(0.0, 5.0))
def test_probabilities_and_score_identity(seed, scale):
    pol = random_policy(seed, scale=scale)
    P = pol.probs_table()
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    for s in range(pol.num_states):
        mean_score = sum(P[s, a] * pol.score(s, a) for a in range(pol.num_actions))
        assert np.max(np.abs(mean_score)) <= 1e-12 * max(1.0, pol.feature_bound)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_score_matches_fd(seed):
    pol = random_policy(seed)
    rng = make_rng(seed, 1)
    s, a = int(rng.integers(3)), int(rng.integers(3))
    fd = fd_gradient(lambda th: pol.with_theta(th).log_probs_table()[s, a], pol.theta, 1e-5)
    sc = pol.score(s, a)
    assert np.max(np.abs(fd - sc)) <= 1e-6 * max(1.0, np.max(np.abs(sc)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_log_hessian_matches_fd_and_is_nsd(seed):
    pol = random_policy(seed)
    rng = make_rng(seed, 2)
    s, a = int(rng.integers(3)), int(rng.integers(3))
    H = pol.log_policy_hessian(s, a)
    fd = np.stack([fd_gradient(lambda th: pol.with_theta(th).score(s, a)[i], pol.theta, 1e-5) for i in range(pol.dim)])
    assert np.max(np.abs(H - fd)) <= 1e-5
    assert np.allclose(H, H.T, atol=0)
    assert np.linalg.eigvalsh(H).max() <= 1e-10
    for b in range(pol.num_actions):
        assert np.array_equal(pol.log_policy_hessian(s, b), H)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), scale=st.floats(0.0, 10.0))
def test_score_bound(seed, scale):
    pol = random_policy(seed, scale=scale)
    norms = np.linalg.norm(pol.score_table(), axis=2)
    assert norms.max() <= 2 * pol.feature_bound + 1e-12


def test_tables_match_pointwise():
    pol = random_policy(4)
    assert np.allclose(pol.log_hessian_table()[1], pol.log_policy_hessian(1, 2), atol=1e-14)
    assert np.allclose(pol.score_table()[2, 1], pol.score(2, 1), atol=0)


@given(arrays(np.float64, st.integers(0, 12), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_param_text_round_trip(theta):
    line = format_params(theta)
    assert "\n" not in line
    assert np.array_equal(parse_params(line), theta)
