"""Lower level: exact values, policy gradients and the policy-ascent loops.

The lower objective is the finite-horizon discounted value

    V(theta) = E_rho(tau; theta) [ sum_{h<H} gamma^h r_nu(s_h, a_h) ]

optionally minus a ridge term ``theta_reg / 2 * ||theta||^2``.  With softmax
policies the unregularised value has no finite maximiser (it is approached
only as the policy turns deterministic) and tabular features make its
Hessian singular, so a small ridge is what gives theta*(nu) a finite,
isolated value.  ``theta_reg = 0`` recovers the plain objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteParameter, NotConverged
from .mdp import TabularMdp, sample_trajectories
from .policy import SoftmaxPolicy
from .reward import LinearReward

EXACT = "exact"
MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class LowerConfig:
    step_size_lower: float = 0.5
    inner_iters: int = 50
    mode: str = EXACT
    num_samples: int = 1000
    grad_tol: float = 1e-8
    max_oracle_iters: int = 5000
    theta_reg: float = 0.0

    def __post_init__(self):
        if not self.step_size_lower > 0:
            raise ValueError("step_size_lower must be positive")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.inner_iters < 0 or self.max_oracle_iters < 1:
            raise ValueError("iteration counts must be non-negative")
        if self.mode not in (EXACT, MONTE_CARLO):
            raise ValueError(f"unknown lower mode {self.mode!r}")
        if self.mode == MONTE_CARLO and self.num_samples < 1:
            raise ValueError("monte_carlo mode needs num_samples >= 1")
        if self.theta_reg < 0:
            raise ValueError("theta_reg must be non-negative")


def _start_dist(mdp: TabularMdp, start_state) -> np.ndarray:
    if start_state is None:
        return mdp.initial_dist
    if np.ndim(start_state) == 0:
        d = np.zeros(mdp.num_states)
        d[int(start_state)] = 1.0
        return d
    return np.asarray(start_state, dtype=float)


def exact_value(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, start_state=None, horizon=None) -> float:
    """Backward dynamic programming over h = H-1 ... 0 (defaults to H_lower)."""
    H = mdp.horizon_lower if horizon is None else horizon
    pi = policy.probs_table()
    r = reward.table()
    V = np.zeros(mdp.num_states)
    for _ in range(H):
        Q = r + mdp.discount * (mdp.transitions @ V)
        V = (pi * Q).sum(axis=1)
    return float(_start_dist(mdp, start_state) @ V)


def reward_to_go(r_steps: np.ndarray, discount: float) -> np.ndarray:
    """G_j = sum_{h >= j} gamma^h r_h along the last axis."""
    disc = discount ** np.arange(r_steps.shape[-1], dtype=float)
    return np.flip(np.cumsum(np.flip(r_steps * disc, -1), axis=-1), -1)


def scatter_sa(values: np.ndarray, states: np.ndarray, actions: np.ndarray, num_states: int, num_actions: int) -> np.ndarray:
    """Accumulate per-step weights into an (S, A) table."""
    flat = (states * num_actions + actions).ravel()
    return np.bincount(flat, weights=values.ravel(), minlength=num_states * num_actions).reshape(num_states, num_actions)


def policy_gradient_samples(
    mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-trajectory REINFORCE integrands, shape (n, d)."""
    states, actions = sample_trajectories(mdp, policy, mdp.horizon_lower, n, rng)
    G = reward_to_go(reward.table()[states, actions], mdp.discount)
    return np.einsum("nj,njd->nd", G, policy.score_table()[states, actions])


def policy_gradient(
    mdp: TabularMdp,
    reward: LinearReward,
    policy: SoftmaxPolicy,
    cfg: LowerConfig | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """grad_theta V as E[ sum_h gamma^h r_h sum_{j<=h} score_j ] (no ridge term)."""
    cfg = cfg or LowerConfig()
    if cfg.mode == MONTE_CARLO:
        if rng is None:
            raise ValueError("monte_carlo mode needs an rng")
        return policy_gradient_samples(mdp, reward, policy, cfg.num_samples, rng).mean(axis=0)
    sup = mdp.support(mdp.horizon_lower)
    rho = sup.probs(policy)
    G = reward_to_go(reward.table()[sup.states, sup.actions], mdp.discount)
    W = scatter_sa(rho[:, None] * G, sup.states, sup.actions, mdp.num_states, mdp.num_actions)
    return np.einsum("sa,sad->d", W, policy.score_table())


def lower_gradient(mdp, reward, policy, cfg: LowerConfig, rng=None) -> np.ndarray:
    g = policy_gradient(mdp, reward, policy, cfg, rng)
    if cfg.theta_reg:
        g = g - cfg.theta_reg * policy.theta
    return g


def lower_objective(mdp, reward, policy, cfg: LowerConfig) -> float:
    v = exact_value(mdp, reward, policy)
    return v - 0.5 * cfg.theta_reg * float(policy.theta @ policy.theta)


@dataclass(frozen=True)
class InnerLoopResult:
    policy: SoftmaxPolicy
    grad_norms: tuple[float, ...]  # ||lower gradient|| at theta^0 ... theta^K


def inner_loop(
    mdp: TabularMdp,
    reward: LinearReward,
    policy0: SoftmaxPolicy,
    cfg: LowerConfig,
    rng: np.random.Generator | None = None,
    iters: int | None = None,
) -> InnerLoopResult:
    """K ascent steps theta <- theta + alpha * grad; ``iters`` overrides cfg.inner_iters."""
    K = cfg.inner_iters if iters is None else iters
    theta = policy0.theta.copy()
    policy = policy0
    norms = []
    for k in range(K + 1):
        g = lower_gradient(mdp, reward, policy, cfg, rng)
        norms.append(float(np.linalg.norm(g)))
        if k == K:
            break
        theta = theta + cfg.step_size_lower * g
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameter(f"policy parameters diverged at inner step {k}; reduce step_size_lower", partial=theta)
        policy = policy.with_theta(theta)
    return InnerLoopResult(policy, tuple(norms))


@dataclass(frozen=True)
class LowerSolution:
    policy: SoftmaxPolicy
    converged: bool
    grad_norm: float
    iterations: int


def solve_lower_exact(
    mdp: TabularMdp,
    reward: LinearReward,
    policy0: SoftmaxPolicy,
    cfg: LowerConfig,
    grad_tol: float | None = None,
    strict: bool = False,
) -> LowerSolution:
    """Exact policy ascent run until the gradient norm drops below ``grad_tol``.

    The step is halved whenever it would lower the objective, so the iterates
    are monotone even when ``step_size_lower`` is too large for the instance.
    With ``strict`` a non-converged run raises NotConverged.
    """
    if cfg.mode != EXACT:
        raise ValueError("solve_lower_exact runs in exact mode only")
    tol = cfg.grad_tol if grad_tol is None else grad_tol
    policy = policy0
    alpha = cfg.step_size_lower
    obj = lower_objective(mdp, reward, policy, cfg)
    g = lower_gradient(mdp, reward, policy, cfg)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol and it < cfg.max_oracle_iters:
        it += 1
        while True:
            cand = policy.with_theta(policy.theta + alpha * g)
            cand_obj = lower_objective(mdp, reward, cand, cfg)
            if cand_obj >= obj - 1e-15 or alpha < 1e-12:
                break
            alpha *= 0.5
        policy, obj = cand, cand_obj
        g = lower_gradient(mdp, reward, policy, cfg)
        gn = float(np.linalg.norm(g))
    converged = gn <= tol
    if strict and not converged:
        raise NotConverged(gn, it)
    return LowerSolution(policy, converged, gn, it)
