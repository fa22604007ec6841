from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from aparl import hypergrad as hg
from aparl import verify
from aparl.envs import get_env
from aparl.errors import NonFiniteEvaluation
from aparl.lower import lower_gradient
from aparl.mdp import TabularMdp, make_rng
from aparl.policy import SoftmaxPolicy
from aparl.reward import ConstantUtility, QuadraticRegularizer, UtilitySpec
from aparl.verify import (
    bilevel_fd_oracle,
    componentwise_rel_error,
    fd_gradient,
    fd_jacobian,
    max_state_policy_tv,
    rel_or_abs_error,
    reports_to_csv,
    run_check_suite,
    solve_at,
    tv_trajectory_divergence,
)


def test_fd_examples():
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(fd_gradient(lambda z: 0.5 * float(z @ z), x), x, atol=1e-9)
    assert np.all(fd_gradient(lambda z: 4.0, x) == 0.0)
    assert np.allclose(fd_gradient(lambda z: float(np.sin(z).sum()), x), np.cos(x), atol=1e-9)
    A = make_rng(0).normal(size=(2, 3))
    assert np.allclose(fd_jacobian(lambda z: A @ z, x), A, atol=1e-9)


def test_fd_non_finite():
    with pytest.raises(NonFiniteEvaluation):
        fd_gradient(lambda z: np.inf, np.zeros(2))
    with pytest.raises(NonFiniteEvaluation):
        fd_jacobian(lambda z: np.array([np.nan]), np.zeros(2))


def test_error_measures():
    assert rel_or_abs_error([1.0, 2.0], [1.0, 2.5]) == pytest.approx(0.2)
    assert rel_or_abs_error([0.1], [0.0]) == pytest.approx(0.1)
    assert componentwise_rel_error([1.1, 2.0], [1.0, 2.0]) == pytest.approx(0.1)


def test_bilevel_oracle_without_features():
    env = dataclasses.replace(
        get_env("gridworld-goal"),
        reward_features=np.zeros((9, 4, 2)),
        utility=UtilitySpec(ConstantUtility(0.0), QuadraticRegularizer(1.0, np.zeros(2))),
    )
    nu = np.array([0.4, -0.7])
    assert np.allclose(bilevel_fd_oracle(env, nu), -nu, atol=1e-8)


def test_oracle_step_refinement_does_not_grow_discrepancy():
    env = get_env("chain")
    pol = solve_at(env, env.nu0)
    g = hg.upper_grad_utility(env.mdp, env.reward(), pol, env.utility, hg.ImplicitSolveConfig(damping=0.0, theta_reg=env.theta_reg)).grad
    coarse = np.max(np.abs(g - bilevel_fd_oracle(env, env.nu0, eps=1e-3, policy0=pol)))
    fine = np.max(np.abs(g - bilevel_fd_oracle(env, env.nu0, eps=1e-4, policy0=pol)))
    assert fine <= coarse + 1e-8


def test_solve_at_is_stationary():
    env = get_env("rlhf-2state")
    pol = solve_at(env, env.nu0, tol=1e-10)
    assert np.linalg.norm(lower_gradient(env.mdp, env.reward(), pol, env.lower_config())) <= 1e-10


def test_tv_examples():
    mdp = TabularMdp(np.ones((1, 2, 1)), np.ones(1), 0.9, 3, 3)
    left = SoftmaxPolicy.tabular(1, 2, np.array([60.0, 0.0]))
    right = SoftmaxPolicy.tabular(1, 2, np.array([0.0, 60.0]))
    assert tv_trajectory_divergence(mdp, left, left, 3) == 0.0
    assert tv_trajectory_divergence(mdp, left, right, 3) == pytest.approx(1.0, abs=1e-12)
    assert max_state_policy_tv(left, right) == pytest.approx(1.0, abs=1e-12)
    uniform = SoftmaxPolicy.tabular(1, 2)
    # one step: TV is the per-state TV; three steps: 1 - 0.5^3
    assert tv_trajectory_divergence(mdp, left, uniform, 1) == pytest.approx(0.5, abs=1e-12)
    assert tv_trajectory_divergence(mdp, left, uniform, 3) == pytest.approx(0.875, abs=1e-12)


def test_suite_selection():
    assert run_check_suite(None) == []
    assert run_check_suite([]) == []
    with pytest.raises(KeyError):
        run_check_suite(["nope"])
    reports = run_check_suite(["preference", "trivial"])
    assert [r.check for r in reports][0] == "trivial"
    assert all(r.passed for r in reports)


def test_suite_deterministic():
    a = reports_to_csv(run_check_suite(["gradient", "tv-bound"], seed=3))
    b = reports_to_csv(run_check_suite(["gradient", "tv-bound"], seed=3))
    assert a == b


def test_manifest_guard(monkeypatch):
    verify._assert_manifest()
    monkeypatch.delitem(verify._COVERAGE, "mixed_jacobian")
    with pytest.raises(AssertionError, match="mixed_jacobian"):
        verify._assert_manifest()


def test_broken_operation_is_caught(monkeypatch):
    real = hg.mixed_jacobian
    monkeypatch.setattr(hg, "mixed_jacobian", lambda *a: 1.01 * real(*a))
    reports = run_check_suite(["mixed-jacobian"])
    assert not any(r.passed for r in reports)
