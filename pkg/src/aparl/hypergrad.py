"""Second-order lower-level quantities and upper-level gradient assembly.

All expectations are exact sums over the enumerated trajectory support.
Conventions: theta has dimension d, nu has dimension n, the mixed Jacobian
is (n, d) and the implicit matrix M = -J H^{-1} is (n, d), so that
grad_nu log pi_theta*(nu)(a|s) = M @ score(s, a).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit, expit

from .errors import DegenerateBatch, SingularHessian
from .lower import reward_to_go, scatter_sa
from .mdp import TabularMdp
from .policy import SoftmaxPolicy
from .reward import (
    LinearReward,
    PreferenceArrays,
    Teacher,
    UtilitySpec,
    _as_arrays,
    feature_sums,
    pair_loglik,
    pref_loglik_grad_term1,
    returns,
)

HESSIAN_EXACT = "exact"
HESSIAN_LOG_ONLY = "paper_eq14"
_SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class ImplicitSolveConfig:
    damping: float = 1e-6
    hessian_mode: str = HESSIAN_EXACT
    # ridge coefficient of the lower objective; must match LowerConfig.theta_reg
    theta_reg: float = 0.0

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.hessian_mode not in (HESSIAN_EXACT, HESSIAN_LOG_ONLY):
            raise ValueError(f"unknown hessian_mode {self.hessian_mode!r}")


@dataclass(frozen=True)
class HypergradResult:
    grad: np.ndarray
    terms: dict = field(default_factory=dict)


def _step_tables(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, horizon: int):
    sup = mdp.support(horizon)
    rho = sup.probs(policy)
    disc = mdp.discount ** np.arange(horizon, dtype=float)
    w = reward.table()[sup.states, sup.actions] * disc  # gamma^h r_h, (T, H)
    return sup, rho, w


def hessian_parts(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy) -> tuple[np.ndarray, np.ndarray]:
    """(score outer-product term, log-policy-Hessian term) of grad^2_theta V.

    The full Hessian is their sum.  The ``paper_eq14`` mode keeps only the
    second; the first is what that shortcut drops:
        E[ sum_h gamma^h r_h C_h C_h^T ],   C_h = sum_{j<=h} score_j.
    """
    sup, rho, w = _step_tables(mdp, reward, policy, mdp.horizon_lower)
    C = np.cumsum(policy.score_table()[sup.states, sup.actions], axis=1)  # (T, H, d)
    d = C.shape[2]
    X = C.reshape(-1, d)
    outer = (X * (rho[:, None] * w).reshape(-1, 1)).T @ X
    G = np.flip(np.cumsum(np.flip(w, 1), axis=1), 1)
    state_w = np.bincount(sup.states.ravel(), weights=(rho[:, None] * G).ravel(), minlength=mdp.num_states)
    logh = np.einsum("s,sde->de", state_w, policy.log_hessian_table())
    return outer, logh


def value_hessian(
    mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, cfg: ImplicitSolveConfig | None = None
) -> np.ndarray:
    """grad^2_theta V, symmetrised.  ``paper_eq14`` mode keeps only the log-policy term."""
    cfg = cfg or ImplicitSolveConfig()
    outer, logh = hessian_parts(mdp, reward, policy)
    H = logh if cfg.hessian_mode == HESSIAN_LOG_ONLY else outer + logh
    return 0.5 * (H + H.T)


def mixed_jacobian(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy) -> np.ndarray:
    """(n, d) matrix of d^2 V / d nu_i d theta_j."""
    sup = mdp.support(mdp.horizon_lower)
    rho = sup.probs(policy)
    psi = reward.reward_features[sup.states, sup.actions]  # (T, H, n)
    psi_togo = reward_to_go(np.moveaxis(psi, 2, 1), mdp.discount)  # (T, n, H)
    sc = policy.score_table()[sup.states, sup.actions]  # (T, H, d)
    A = np.moveaxis(rho[:, None, None] * psi_togo, 1, 2).reshape(-1, psi.shape[2])
    return A.T @ sc.reshape(-1, sc.shape[2])


def value_nu_gradient(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy) -> np.ndarray:
    """grad_nu V = E[ sum_h gamma^h psi(s_h, a_h) ] at fixed theta."""
    sup = mdp.support(mdp.horizon_lower)
    rho = sup.probs(policy)
    disc = mdp.discount ** np.arange(mdp.horizon_lower, dtype=float)
    W = scatter_sa(rho[:, None] * disc, sup.states, sup.actions, mdp.num_states, mdp.num_actions)
    return np.einsum("sa,san->n", W, reward.reward_features)


def lower_hessian(mdp, reward, policy, cfg: ImplicitSolveConfig) -> np.ndarray:
    """Hessian of the lower objective (value Hessian minus the ridge)."""
    H = value_hessian(mdp, reward, policy, cfg)
    if cfg.theta_reg:
        H = H - cfg.theta_reg * np.eye(H.shape[0])
    return H


def implicit_matrix(
    mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, cfg: ImplicitSolveConfig | None = None
) -> np.ndarray:
    """Solve M (H + damping) = -J for M.

    The damping is applied along the Hessian's definite direction (-delta I
    when H is negative definite, +delta I when positive definite, -delta I
    when indefinite), so it never pushes an eigenvalue toward zero.
    """
    cfg = cfg or ImplicitSolveConfig()
    J = mixed_jacobian(mdp, reward, policy)
    H = lower_hessian(mdp, reward, policy, cfg)
    if not np.any(J):
        return np.zeros_like(J)
    eig = np.linalg.eigvalsh(H)
    sign = 1.0 if eig.min() > 0 else -1.0
    Hd = H + sign * cfg.damping * np.eye(H.shape[0])
    if np.abs(np.linalg.eigvalsh(Hd)).min() > _SINGULAR_TOL:
        return np.linalg.solve(Hd, -J.T).T
    sol, _, rank, _ = np.linalg.lstsq(Hd, -J.T, rcond=None)
    if rank == 0:
        raise SingularHessian("lower Hessian has rank 0; implicit matrix undefined")
    return sol.T


def _score_sums(policy: SoftmaxPolicy, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return policy.score_table()[states, actions].sum(axis=-2)


# --- generic utility objective ---------------------------------------------


def upper_objective_utility(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, utility: UtilitySpec) -> float:
    sup = mdp.support(mdp.horizon_upper)
    rho = sup.probs(policy)
    U = utility.values(sup.states, sup.actions, reward.nu)
    return float(rho @ U) + utility.reg(reward.nu)


def upper_grad_utility(
    mdp: TabularMdp,
    reward: LinearReward,
    policy: SoftmaxPolicy,
    utility: UtilitySpec,
    cfg: ImplicitSolveConfig | None = None,
) -> HypergradResult:
    """Surrogate gradient of E_rho[U_nu] + Z(nu) evaluated at ``policy``.

    term_a: E[U * sum_h M score_h]    (policy moves with nu)
    term_b: E[grad_nu U]              (utility depends on nu directly)
    term_c: grad_nu Z
    """
    cfg = cfg or ImplicitSolveConfig()
    sup = mdp.support(mdp.horizon_upper)
    rho = sup.probs(policy)
    U = utility.values(sup.states, sup.actions, reward.nu)
    S = _score_sums(policy, sup.states, sup.actions)
    M = implicit_matrix(mdp, reward, policy, cfg)
    term_a = M @ (S.T @ (rho * U))
    term_b = rho @ utility.grads(sup.states, sup.actions, reward.nu)
    term_c = utility.reg_grad(reward.nu)
    return HypergradResult(term_a + term_b + term_c, {"term_a": term_a, "term_b": term_b, "term_c": term_c})


# --- RLHF objective --------------------------------------------------------


def _pair_tables(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, teacher: Teacher):
    """Pair-level tables over groups of trajectories.

    Every pair quantity depends on a trajectory only through its reward
    feature sum (which fixes the learned return for all nu) and its teacher
    return, so trajectories sharing both are merged.  This turns the T x T
    pair sums into G x G sums with G usually far below T.
    """
    sup = mdp.support(mdp.horizon_upper)
    key = ("pair_groups", id(reward.reward_features), id(teacher))
    cached = sup._groups.get(key)
    if cached is None or cached[0] is not reward.reward_features or cached[1] is not teacher:
        Psi = feature_sums(reward.reward_features, sup.states, sup.actions)
        Rt = teacher.returns(sup.states, sup.actions)
        sig, inv = np.unique(np.column_stack([Psi, Rt]), axis=0, return_inverse=True)
        h1 = np.asarray(teacher.prefer_prob(sig[:, -1][:, None], sig[:, -1][None, :]))
        cached = (reward.reward_features, teacher, sig[:, :-1], inv.reshape(-1), h1)
        sup._groups[key] = cached
    _, _, Psi_g, inv, h1 = cached
    rho = sup.probs(policy)
    rho_g = np.bincount(inv, weights=rho, minlength=len(Psi_g))
    R = Psi_g @ reward.nu
    diff = R[:, None] - R[None, :]
    F = h1 * log_expit(diff) + (1.0 - h1) * log_expit(-diff)
    return sup, rho, inv, rho_g, Psi_g, diff, h1, F


def upper_objective_rlhf(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy, teacher: Teacher) -> float:
    """E over (tau0, tau1) ~ rho x rho and y ~ teacher of the preference log-likelihood."""
    *_, rho_g, _, _, _, F = _pair_tables(mdp, reward, policy, teacher)
    return float(rho_g @ F @ rho_g)


def upper_grad_rlhf(
    mdp: TabularMdp,
    reward: LinearReward,
    policy: SoftmaxPolicy,
    teacher: Teacher | None,
    cfg: ImplicitSolveConfig | None = None,
    batch=None,
    include_term2: bool = True,
) -> HypergradResult:
    """Gradient of the preference objective: term1 (reward fit) + term2 (data shift).

    With ``batch=None`` the expectation over pairs is exact and labels are
    marginalised under the teacher.  Otherwise term1 and term2 are averages
    over the frozen batch, with term2 using the current policy's scores.
    """
    cfg = cfg or ImplicitSolveConfig()
    n = reward.dim
    if batch is None:
        if teacher is None:
            raise ValueError("exact mode needs the teacher to marginalise labels")
        sup, rho, inv, rho_g, Psi_g, diff, h1, F = _pair_tables(mdp, reward, policy, teacher)
        D = np.outer(rho_g, rho_g) * (h1 - expit(diff))
        term1 = D.sum(axis=1) @ Psi_g - D.sum(axis=0) @ Psi_g
        if include_term2 and np.any(reward.reward_features):
            S = _score_sums(policy, sup.states, sup.actions)
            # E over pairs of F(tau0, tau1) (S0 + S1), regrouped per trajectory
            per_group = F @ rho_g + F.T @ rho_g
            term2 = implicit_matrix(mdp, reward, policy, cfg) @ (S.T @ (rho * per_group[inv]))
        else:
            term2 = np.zeros(n)
    else:
        arr = _as_arrays(batch)
        if len(arr) == 0:
            raise DegenerateBatch("empty preference batch")
        term1 = pref_loglik_grad_term1(reward, arr)
        if include_term2 and np.any(reward.reward_features):
            ones = np.ones(arr.states0.shape[1])
            f = pair_loglik(
                returns(reward.table(), arr.states0, arr.actions0, ones),
                returns(reward.table(), arr.states1, arr.actions1, ones),
                arr.labels,
            )
            S = _score_sums(policy, arr.states0, arr.actions0) + _score_sums(policy, arr.states1, arr.actions1)
            term2 = implicit_matrix(mdp, reward, policy, cfg) @ (S.T @ f) / len(arr)
        else:
            term2 = np.zeros(n)
    return HypergradResult(term1 + term2, {"term1": term1, "term2": term2})
