"""Finite-horizon tabular MDPs, exact trajectory enumeration and sampling.

Horizon convention used everywhere in the package: a trajectory of horizon H
holds exactly H steps ``(s_0, a_0), ..., (s_{H-1}, a_{H-1})``.  The state
reached after the last action carries no reward, so it is marginalised out
and never stored; its transition factor sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConfigError, IndexOutOfRange, InvalidHorizon, SupportTooLarge

if TYPE_CHECKING:
    from .policy import SoftmaxPolicy

SUPPORT_LIMIT = 10**7
_ROW_TOL = 1e-12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``seed`` and a stream path.

    Distinct ``stream`` tuples give statistically independent generators, so
    each component of a run can own its randomness without coordination.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(x) for x in stream]])
    return np.random.Generator(np.random.Philox(ss))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transitions: np.ndarray  # (S, A, S)
    initial_dist: np.ndarray  # (S,)
    discount: float
    horizon_lower: int
    horizon_upper: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        P = _frozen(self.transitions)
        rho0 = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {P.shape}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError("need at least one state and one action")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ValueError("transition probabilities must be finite and non-negative")
        bad = np.abs(P.sum(axis=2) - 1.0) > _ROW_TOL
        if np.any(bad):
            s, a = np.argwhere(bad)[0]
            raise ValueError(f"transition row ({s}, {a}) sums to {P[s, a].sum()!r}, not 1")
        if rho0.shape != (P.shape[0],):
            raise ValueError(f"initial_dist must have shape ({P.shape[0]},)")
        if np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > _ROW_TOL:
            raise ValueError("initial_dist must be a probability vector")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        for name in ("horizon_lower", "horizon_upper"):
            h = getattr(self, name)
            if int(h) != h or h <= 0:
                raise InvalidHorizon(f"{name} must be a positive integer, got {h}")
            object.__setattr__(self, name, int(h))
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "initial_dist", rho0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def support(self, horizon: int) -> "TrajectorySupport":
        """Policy-independent trajectory support for ``horizon`` (cached)."""
        if horizon not in self._cache:
            self._cache[horizon] = TrajectorySupport.build(self, horizon)
        return self._cache[horizon]


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(s), int(a)) for s, a in self.steps))

    @classmethod
    def from_arrays(cls, states: Sequence[int], actions: Sequence[int]) -> "Trajectory":
        return cls(tuple(zip(states, actions)))

    @property
    def states(self) -> np.ndarray:
        return np.array([s for s, _ in self.steps], dtype=np.int64)

    @property
    def actions(self) -> np.ndarray:
        return np.array([a for _, a in self.steps], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.steps)

    def validate(self, mdp: TabularMdp) -> None:
        for h, (s, a) in enumerate(self.steps):
            if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
                raise IndexOutOfRange(f"step {h}: ({s}, {a}) outside {mdp.num_states} states x {mdp.num_actions} actions")


@dataclass(frozen=True, eq=False)
class TrajectorySupport:
    """Every trajectory reachable under a fully supported policy.

    ``base_prob`` holds the initial-state and transition factors, which do not
    depend on the policy; multiplying by the policy factors gives rho(tau).
    """

    states: np.ndarray  # (T, H) int
    actions: np.ndarray  # (T, H) int
    base_prob: np.ndarray  # (T,)
    _groups: dict = field(default_factory=dict, init=False, repr=False)

    @classmethod
    def build(cls, mdp: TabularMdp, horizon: int, limit: int = SUPPORT_LIMIT) -> "TrajectorySupport":
        if int(horizon) != horizon or horizon <= 0:
            raise InvalidHorizon(f"horizon must be a positive integer, got {horizon}")
        P = mdp.transitions
        S, A = mdp.num_states, mdp.num_actions
        s0 = np.flatnonzero(mdp.initial_dist > 0)
        states = s0[:, None]
        actions = np.zeros((len(s0), 0), dtype=np.int64)
        base = mdp.initial_dist[s0].copy()
        for h in range(horizon):
            # branch over every action at the current last state
            n = len(base)
            if n * A > limit:
                raise SupportTooLarge(n * A, limit)
            states = np.repeat(states, A, axis=0)
            base = np.repeat(base, A)
            act = np.tile(np.arange(A), n)
            actions = np.concatenate([np.repeat(actions, A, axis=0), act[:, None]], axis=1)
            if h == horizon - 1:
                break
            last = states[:, -1]
            rows = P[last, act]  # (n*A, S)
            idx, nxt = np.nonzero(rows > 0)
            if len(idx) > limit:
                raise SupportTooLarge(len(idx), limit)
            states = np.concatenate([states[idx], nxt[:, None]], axis=1)
            actions = actions[idx]
            base = base[idx] * rows[idx, nxt]
        states = np.ascontiguousarray(states.astype(np.int64))
        actions = np.ascontiguousarray(actions.astype(np.int64))
        for arr in (states, actions, base):
            arr.setflags(write=False)
        assert states.shape == actions.shape == (len(base), horizon)
        return cls(states, actions, base)

    def __len__(self) -> int:
        return len(self.base_prob)

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def probs(self, policy: "SoftmaxPolicy") -> np.ndarray:
        pi = policy.probs_table()
        return self.base_prob * np.prod(pi[self.states, self.actions], axis=1)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory.from_arrays(self.states[i], self.actions[i])


def enumerate_trajectories(mdp: TabularMdp, policy: "SoftmaxPolicy", horizon: int) -> list[tuple[Trajectory, float]]:
    """All trajectories with positive probability, paired with rho(tau; theta)."""
    sup = mdp.support(horizon)
    p = sup.probs(policy)
    return [(sup.trajectory(i), float(p[i])) for i in np.flatnonzero(p > 0)]


def trajectory_prob(mdp: TabularMdp, policy: "SoftmaxPolicy", tau: Trajectory) -> float:
    tau.validate(mdp)
    if len(tau) == 0:
        raise InvalidHorizon("empty trajectory")
    pi = policy.probs_table()
    s, a = tau.states, tau.actions
    p = mdp.initial_dist[s[0]] * np.prod(pi[s, a])
    if len(tau) > 1:
        p *= np.prod(mdp.transitions[s[:-1], a[:-1], s[1:]])
    return float(p)


def sample_trajectories(
    mdp: TabularMdp, policy: "SoftmaxPolicy", horizon: int, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` trajectories; returns ``(states, actions)`` arrays of shape (n, horizon)."""
    if int(horizon) != horizon or horizon <= 0:
        raise InvalidHorizon(f"horizon must be a positive integer, got {horizon}")
    pi_cdf = np.cumsum(policy.probs_table(), axis=1)
    P_cdf = np.cumsum(mdp.transitions, axis=2)
    rho_cdf = np.cumsum(mdp.initial_dist)
    states = np.empty((n, horizon), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)

    def draw(cdf_rows: np.ndarray) -> np.ndarray:
        u = rng.random(len(cdf_rows))[:, None]
        # clip guards against a last cdf entry that rounds just below 1
        return np.minimum((u >= cdf_rows).sum(axis=1), cdf_rows.shape[1] - 1)

    s = draw(np.broadcast_to(rho_cdf, (n, len(rho_cdf))))
    for h in range(horizon):
        a = draw(pi_cdf[s])
        states[:, h] = s
        actions[:, h] = a
        if h < horizon - 1:
            s = draw(P_cdf[s, a])
    return states, actions


def sample_trajectory(mdp: TabularMdp, policy: "SoftmaxPolicy", horizon: int, rng: np.random.Generator) -> Trajectory:
    s, a = sample_trajectories(mdp, policy, horizon, 1, rng)
    return Trajectory.from_arrays(s[0], a[0])


# --- built-in generators -------------------------------------------------

GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def chain(
    n: int,
    start: int | None = None,
    discount: float = 0.9,
    horizon_lower: int = 4,
    horizon_upper: int | None = None,
    slip: float = 0.0,
) -> TabularMdp:
    """Chain of ``n`` states; action 0 moves left, action 1 moves right.

    With probability ``slip`` the move fails and the agent stays put.
    """
    if n < 1:
        raise ValueError("chain needs at least one state")
    P = np.zeros((n, 2, n))
    for s in range(n):
        for a, step in enumerate((-1, 1)):
            t = min(max(s + step, 0), n - 1)
            P[s, a, t] += 1.0 - slip
            P[s, a, s] += slip
    rho0 = np.zeros(n)
    rho0[n // 2 if start is None else start] = 1.0
    return TabularMdp(P, rho0, discount, horizon_lower, horizon_upper or horizon_lower)


def grid_index(n: int, i: int, j: int) -> int:
    return i * n + j


def gridworld(
    n: int,
    walls: Iterable[tuple[int, int]] = (),
    start: tuple[int, int] = (0, 0),
    discount: float = 0.9,
    horizon_lower: int = 5,
    horizon_upper: int | None = None,
    slip: float = 0.0,
) -> TabularMdp:
    """N x N maze world with actions up/down/left/right.

    Moves into a wall or off the grid leave the agent in place.  Wall cells
    keep a state index (so indices stay ``i * n + j``) but are unreachable.
    With probability ``slip`` a move fails and the agent stays.
    """
    walls = {tuple(w) for w in walls}
    if tuple(start) in walls:
        raise ValueError("start cell is a wall")
    S = n * n
    P = np.zeros((S, 4, S))
    for i in range(n):
        for j in range(n):
            s = grid_index(n, i, j)
            for a, (di, dj) in enumerate(GRID_MOVES):
                ti, tj = i + di, j + dj
                if not (0 <= ti < n and 0 <= tj < n) or (ti, tj) in walls:
                    ti, tj = i, j
                P[s, a, grid_index(n, ti, tj)] += 1.0 - slip
                P[s, a, s] += slip
    rho0 = np.zeros(S)
    rho0[grid_index(n, *start)] = 1.0
    return TabularMdp(P, rho0, discount, horizon_lower, horizon_upper or horizon_lower)


# --- plain-text format ---------------------------------------------------
#
#   # comment
#   states 3
#   actions 2
#   discount 0.9
#   horizon_lower 4
#   horizon_upper 4
#   initial 1 0 0
#   transition 0 0  0.5 0.5 0      (one line per (s, a): S probabilities)
#
# Keywords may appear in any order, but dimensions must precede rows.


def parse_mdp(text: str) -> TabularMdp:
    dims: dict[str, float] = {}
    initial = None
    rows: dict[tuple[int, int], list[float]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            if key in ("states", "actions", "horizon_lower", "horizon_upper"):
                (v,) = vals
                dims[key] = int(v)
            elif key == "discount":
                (v,) = vals
                dims[key] = float(v)
            elif key == "initial":
                initial = [float(v) for v in vals]
            elif key == "transition":
                if "states" not in dims or "actions" not in dims:
                    raise ConfigError("transition row before states/actions", lineno, key=key)
                s, a = int(vals[0]), int(vals[1])
                if (s, a) in rows:
                    raise ConfigError(f"duplicate transition row ({s}, {a})", lineno, key=key)
                rows[(s, a)] = [float(v) for v in vals[2:]]
            else:
                raise ConfigError(f"unknown keyword {key!r}", lineno, 1, key=key)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed {key!r} line: {exc}", lineno, key=key) from None
    for key in ("states", "actions", "discount", "horizon_lower"):
        if key not in dims:
            raise ConfigError(f"missing {key!r}", key=key)
    S, A = int(dims["states"]), int(dims["actions"])
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            row = rows.get((s, a))
            if row is None or len(row) != S:
                raise ConfigError(f"transition row ({s}, {a}) missing or not of length {S}", key="transition")
            P[s, a] = row
    if initial is None or len(initial) != S:
        raise ConfigError(f"initial distribution missing or not of length {S}", key="initial")
    H = int(dims["horizon_lower"])
    return TabularMdp(P, np.array(initial), dims["discount"], H, int(dims.get("horizon_upper", H)))


def format_mdp(mdp: TabularMdp) -> str:
    out = [
        f"states {mdp.num_states}",
        f"actions {mdp.num_actions}",
        f"discount {mdp.discount!r}",
        f"horizon_lower {mdp.horizon_lower}",
        f"horizon_upper {mdp.horizon_upper}",
        "initial " + " ".join(repr(float(x)) for x in mdp.initial_dist),
    ]
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            out.append(f"transition {s} {a} " + " ".join(repr(float(x)) for x in mdp.transitions[s, a]))
    return "\n".join(out) + "\n"


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        return parse_mdp(fh.read())
