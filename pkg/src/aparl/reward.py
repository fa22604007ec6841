"""Parameterised rewards, preference models and the simulated teacher."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .errors import DegenerateBatch, IndexOutOfRange
from .mdp import Trajectory

LEARNED = "learned"  # undiscounted sum of rewards (learned preference model)
TEACHER = "teacher"  # reversed-discount weights gamma^(H-1-h) (simulated human)


@dataclass(frozen=True, eq=False)
class LinearReward:
    """r_nu(s, a) = nu . psi(s, a) with ``reward_features`` of shape (S, A, n)."""

    nu: np.ndarray
    reward_features: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float, copy=True).reshape(-1)
        psi = np.array(self.reward_features, dtype=float, copy=True)
        if psi.ndim != 3 or psi.shape[2] != nu.size:
            raise ValueError(f"reward_features must be (S, A, {nu.size}), got {psi.shape}")
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(psi))):
            raise ValueError("reward parameters and features must be finite")
        nu.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "reward_features", psi)
        table = psi @ nu
        table.setflags(write=False)
        object.__setattr__(self, "_table", table)

    @classmethod
    def tabular(cls, table) -> "LinearReward":
        """Reward with one parameter per (s, a); ``nu`` is the flattened table."""
        table = np.asarray(table, dtype=float)
        S, A = table.shape
        return cls(table.reshape(-1), np.eye(S * A).reshape(S, A, S * A))

    @classmethod
    def constant(cls, num_states: int, num_actions: int, value: float = 1.0) -> "LinearReward":
        return cls(np.array([value]), np.ones((num_states, num_actions, 1)))

    def with_nu(self, nu) -> "LinearReward":
        return LinearReward(nu, self.reward_features)

    @property
    def dim(self) -> int:
        return self.nu.size

    def table(self) -> np.ndarray:
        return self._table

    def __call__(self, s: int, a: int) -> float:
        return float(self._table[s, a])

    @property
    def feature_bound(self) -> float:
        """max ||psi(s, a)||; the Lipschitz constant of r_nu in nu."""
        return float(np.linalg.norm(self.reward_features, axis=2).max())

    @property
    def bound(self) -> float:
        """||nu|| * max ||psi||, an upper bound on |r_nu|."""
        return float(np.linalg.norm(self.nu)) * self.feature_bound


def step_weights(horizon: int, discount: float = 1.0, mode: str = LEARNED) -> np.ndarray:
    if mode == LEARNED:
        return np.ones(horizon)
    if mode == TEACHER:
        return discount ** np.arange(horizon - 1, -1, -1, dtype=float)
    raise ValueError(f"unknown return mode {mode!r}")


def returns(table: np.ndarray, states: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted returns of a stack of trajectories, shape (T,)."""
    return (table[states, actions] * weights).sum(axis=-1)


def trajectory_return(reward: LinearReward, tau: Trajectory, discount: float = 1.0, mode: str = LEARNED) -> float:
    w = step_weights(len(tau), discount, mode)
    return float(returns(reward.table(), tau.states, tau.actions, w))


def bt_prob(return0, return1, beta=1.0):
    """P(tau0 preferred) under a Bradley-Terry model with temperature ``beta``.

    ``beta = inf`` gives the hard comparison (0.5 on ties).
    """
    diff = np.asarray(return0, dtype=float) - np.asarray(return1, dtype=float)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if math.isinf(beta):
        out = 0.5 * (1.0 + np.sign(diff))
    else:
        out = expit(beta * diff)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class Teacher:
    """Simulated human labelling pairs from a hidden ground-truth reward."""

    true_reward: LinearReward
    beta: float = 1.0
    discount: float = 1.0

    def returns(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        w = step_weights(states.shape[-1], self.discount, TEACHER)
        return returns(self.true_reward.table(), states, actions, w)

    def prefer_prob(self, ret0, ret1):
        """h(y = 1 | tau0, tau1) from teacher-mode returns."""
        return bt_prob(ret0, ret1, self.beta)

    def label(self, tau0: Trajectory, tau1: Trajectory, rng: np.random.Generator) -> int:
        return teacher_label(tau0, tau1, self.true_reward, self.beta, self.discount, rng)


def teacher_label(
    tau0: Trajectory,
    tau1: Trajectory,
    true_reward: LinearReward,
    beta: float,
    discount: float,
    rng: np.random.Generator,
) -> int:
    if len(tau0) != len(tau1):
        raise ValueError("teacher compares equal-length trajectories only")
    r0 = trajectory_return(true_reward, tau0, discount, TEACHER)
    r1 = trajectory_return(true_reward, tau1, discount, TEACHER)
    if math.isinf(beta):
        if r0 != r1:
            return int(r0 > r1)
        return int(rng.random() < 0.5)
    return int(rng.random() < bt_prob(r0, r1, beta))


@dataclass(frozen=True)
class PreferencePair:
    tau0: Trajectory
    tau1: Trajectory
    label: int  # 1 means tau0 preferred

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if len(self.tau0) != len(self.tau1):
            raise ValueError("both trajectories in a pair must have the same length")


@dataclass(frozen=True, eq=False)
class PreferenceArrays:
    """Stacked view of a preference batch: (B, H) state/action arrays and (B,) labels."""

    states0: np.ndarray
    actions0: np.ndarray
    states1: np.ndarray
    actions1: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_pairs(cls, batch: Sequence[PreferencePair]) -> "PreferenceArrays":
        if len(batch) == 0:
            raise DegenerateBatch("empty preference batch")
        lengths = {len(p.tau0) for p in batch}
        if len(lengths) != 1:
            raise ValueError("all pairs in a batch must share one horizon")
        return cls(
            np.array([p.tau0.states for p in batch]),
            np.array([p.tau0.actions for p in batch]),
            np.array([p.tau1.states for p in batch]),
            np.array([p.tau1.actions for p in batch]),
            np.array([p.label for p in batch], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def concat(self, other: "PreferenceArrays") -> "PreferenceArrays":
        return PreferenceArrays(
            *(np.concatenate([a, b]) for a, b in zip(self._fields(), other._fields()))
        )

    def _fields(self):
        return (self.states0, self.actions0, self.states1, self.actions1, self.labels)

    def pairs(self) -> list[PreferencePair]:
        return [
            PreferencePair(
                Trajectory.from_arrays(self.states0[i], self.actions0[i]),
                Trajectory.from_arrays(self.states1[i], self.actions1[i]),
                int(self.labels[i]),
            )
            for i in range(len(self))
        ]


def _as_arrays(batch) -> PreferenceArrays:
    if isinstance(batch, PreferenceArrays):
        return batch
    return PreferenceArrays.from_pairs(list(batch))


def pair_loglik(ret0, ret1, y):
    """Per-pair y log P(tau0 > tau1) + (1 - y) log P(tau1 > tau0) with beta = 1."""
    diff = np.asarray(ret0) - np.asarray(ret1)
    return y * log_expit(diff) + (1.0 - y) * log_expit(-diff)


def pref_loglik(reward: LinearReward, batch) -> float:
    arr = _as_arrays(batch)
    w = np.ones(arr.states0.shape[1])
    r0 = returns(reward.table(), arr.states0, arr.actions0, w)
    r1 = returns(reward.table(), arr.states1, arr.actions1, w)
    return float(np.mean(pair_loglik(r0, r1, arr.labels)))


def feature_sums(reward_features: np.ndarray, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """grad_nu R_nu(tau) = sum_h psi(s_h, a_h), shape (..., n)."""
    return reward_features[states, actions].sum(axis=-2)


def pref_loglik_grad_term1(reward: LinearReward, batch) -> np.ndarray:
    arr = _as_arrays(batch)
    psi = reward.reward_features
    g0 = feature_sums(psi, arr.states0, arr.actions0)
    g1 = feature_sums(psi, arr.states1, arr.actions1)
    w = np.ones(arr.states0.shape[1])
    p0 = bt_prob(returns(reward.table(), arr.states0, arr.actions0, w),
                 returns(reward.table(), arr.states1, arr.actions1, w), 1.0)
    p0 = np.atleast_1d(p0)
    y = arr.labels[:, None]
    per = y * g0 + (1 - y) * g1 - g0 * p0[:, None] - g1 * (1 - p0)[:, None]
    return per.mean(axis=0)


# --- preference batch text format ----------------------------------------
# one pair per line:  y;s,a s,a ...;s,a s,a ...


def format_pairs(batch: Iterable[PreferencePair]) -> str:
    def traj(t: Trajectory) -> str:
        return " ".join(f"{s},{a}" for s, a in t.steps)

    return "".join(f"{p.label};{traj(p.tau0)};{traj(p.tau1)}\n" for p in batch)


def parse_pairs(text: str) -> list[PreferencePair]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            y, t0, t1 = line.split(";")
            steps = [tuple(tuple(int(v) for v in tok.split(",")) for tok in t.split()) for t in (t0, t1)]
            out.append(PreferencePair(Trajectory(steps[0]), Trajectory(steps[1]), int(y)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed preference pair ({exc})") from None
    return out


def validate_pairs(batch: Sequence[PreferencePair], mdp) -> None:
    for p in batch:
        for t in (p.tau0, p.tau1):
            t.validate(mdp)
            if len(t) != mdp.horizon_upper:
                raise IndexOutOfRange(f"pair trajectory has length {len(t)}, expected {mdp.horizon_upper}")


# --- utility catalog -----------------------------------------------------
# Each utility maps stacked trajectories (T, H) and nu to values (T,) and
# nu-gradients (T, n).  Each regulariser maps nu to Z(nu) and its gradient.


@dataclass(frozen=True, eq=False)
class ConstantUtility:
    value: float = 1.0

    def __call__(self, states, actions, nu):
        return np.full(states.shape[0], float(self.value))

    def grad(self, states, actions, nu):
        return np.zeros((states.shape[0], np.size(nu)))

    probe_shape = (None, None, None)


@dataclass(frozen=True, eq=False)
class DiscountedFeatureSum:
    """U_nu(tau) = weight * sum_h gamma^h nu . psi(s_h, a_h)."""

    reward_features: np.ndarray
    discount: float
    weight: float = 1.0

    def _disc(self, H):
        return self.discount ** np.arange(H, dtype=float)

    def __call__(self, states, actions, nu):
        r = self.reward_features[states, actions] @ np.asarray(nu)
        return self.weight * (r * self._disc(states.shape[1])).sum(axis=1)

    def grad(self, states, actions, nu):
        psi = self.reward_features[states, actions]
        return self.weight * np.einsum("th,thn->tn", np.broadcast_to(self._disc(states.shape[1]), states.shape), psi)

    @property
    def probe_shape(self):
        return self.reward_features.shape


@dataclass(frozen=True, eq=False)
class GoalProximity:
    """U(tau) = weight * sum_h gamma^h score(s_h) for a fixed per-state score."""

    state_scores: np.ndarray
    discount: float
    weight: float = 1.0

    def __call__(self, states, actions, nu):
        disc = self.discount ** np.arange(states.shape[1], dtype=float)
        return self.weight * (np.asarray(self.state_scores)[states] * disc).sum(axis=1)

    def grad(self, states, actions, nu):
        return np.zeros((states.shape[0], np.size(nu)))

    @property
    def probe_shape(self):
        return (len(self.state_scores), None, None)


def goal_scores(n: int, goal: tuple[int, int]) -> np.ndarray:
    """1 at the goal cell falling linearly to 0 at the farthest cell (Manhattan distance)."""
    gi, gj = goal
    d = np.array([abs(i - gi) + abs(j - gj) for i in range(n) for j in range(n)], dtype=float)
    return 1.0 - d / max(d.max(), 1.0)


@dataclass(frozen=True, eq=False)
class QuadraticRegularizer:
    """Z(nu) = -scale/2 * ||nu - center||^2."""

    scale: float
    center: np.ndarray

    def __call__(self, nu):
        diff = np.asarray(nu) - self.center
        return -0.5 * self.scale * float(diff @ diff)

    def grad(self, nu):
        return -self.scale * (np.asarray(nu) - self.center)

    @property
    def probe_shape(self):
        return (None, None, np.size(self.center))


@dataclass(frozen=True, eq=False)
class ZeroRegularizer:
    def __call__(self, nu):
        return 0.0

    def grad(self, nu):
        return np.zeros(np.size(nu))

    probe_shape = (None, None, None)


UTILITIES = (ConstantUtility, DiscountedFeatureSum, GoalProximity)
REGULARIZERS = (QuadraticRegularizer, ZeroRegularizer)

_REG_TOL = 1e-6
_REG_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    """Designer utility U_nu(tau) plus regulariser Z(nu), from the closed catalog.

    Construction runs a central-difference check of both gradients on a
    seeded probe and refuses components whose gradients disagree.
    """

    utility: object = field(default_factory=ConstantUtility)
    regularizer: object = field(default_factory=ZeroRegularizer)

    def __post_init__(self):
        if not isinstance(self.utility, UTILITIES):
            raise TypeError(f"{type(self.utility).__name__} is not a catalog utility")
        if not isinstance(self.regularizer, REGULARIZERS):
            raise TypeError(f"{type(self.regularizer).__name__} is not a catalog regulariser")
        self._check_gradients()

    def _check_gradients(self) -> None:
        dims = [1, 1, 1]
        for comp in (self.utility, self.regularizer):
            for i, v in enumerate(comp.probe_shape):
                if v is not None:
                    dims[i] = v
        S, A, n = dims
        rng = np.random.default_rng(0)
        states = rng.integers(0, S, size=(2, 3))
        actions = rng.integers(0, A, size=(2, 3))
        nu = rng.normal(size=n)
        fd_u = np.zeros((2, n))
        fd_z = np.zeros(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = _REG_EPS
            fd_u[:, i] = (self.utility(states, actions, nu + e) - self.utility(states, actions, nu - e)) / (2 * _REG_EPS)
            fd_z[i] = (self.regularizer(nu + e) - self.regularizer(nu - e)) / (2 * _REG_EPS)
        err_u = np.abs(fd_u - self.utility.grad(states, actions, nu)).max()
        err_z = np.abs(fd_z - self.regularizer.grad(nu)).max()
        if err_u > _REG_TOL or err_z > _REG_TOL:
            raise ValueError(f"catalog gradient check failed (utility {err_u:.2e}, regulariser {err_z:.2e})")

    def values(self, states, actions, nu) -> np.ndarray:
        return self.utility(states, actions, nu)

    def grads(self, states, actions, nu) -> np.ndarray:
        return self.utility.grad(states, actions, nu)

    def reg(self, nu) -> float:
        return float(self.regularizer(nu))

    def reg_grad(self, nu) -> np.ndarray:
        return np.asarray(self.regularizer.grad(nu), dtype=float)
