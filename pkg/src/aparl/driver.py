"""The alternating reward/policy loop, its naive RLHF baseline and run traces.

Sign convention: both the utility objective and the preference
log-likelihood are maximised, so the reward update is an ascent step
``nu <- nu + alpha_u * grad``.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import EnvBundle
from .errors import EmptyTrace, NonFiniteParameter, SchemaMismatch
from .hypergrad import (
    HESSIAN_EXACT,
    ImplicitSolveConfig,
    upper_grad_rlhf,
    upper_grad_utility,
    upper_objective_rlhf,
    upper_objective_utility,
)
from .lower import LowerConfig, inner_loop
from .mdp import make_rng, sample_trajectories
from .reward import PreferenceArrays, pref_loglik

UTILITY = "utility"
RLHF = "rlhf"
RLHF_EXACT = "exact"
RLHF_BATCH = "batch"

# RNG stream ids within a run seed
_STREAM_INIT, _STREAM_PAIRS, _STREAM_LABELS, _STREAM_LOWER = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    outer_iters: int = 200
    lower: LowerConfig | None = None  # None: the environment's default (its ridge included)
    step_size_upper: float = 0.05
    k_schedule: str = "fixed"  # or "linear": K = t + 1
    objective: str = UTILITY
    rlhf_mode: str = RLHF_EXACT
    pairs_per_iter: int = 10
    seed: int = 0
    nu0: np.ndarray | None = None
    theta0: np.ndarray | None = None
    cold_start: bool = False
    damping: float = 1e-6
    hessian_mode: str = HESSIAN_EXACT
    # std of seeded Gaussian jitter added to nu0 and theta0; lets exact-mode seeds differ
    init_scale: float = 0.0

    def __post_init__(self):
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if not self.step_size_upper > 0:
            raise ValueError("step_size_upper must be positive")
        if self.k_schedule not in ("fixed", "linear"):
            raise ValueError(f"unknown k_schedule {self.k_schedule!r}")
        if self.objective not in (UTILITY, RLHF):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.rlhf_mode not in (RLHF_EXACT, RLHF_BATCH):
            raise ValueError(f"unknown rlhf mode {self.rlhf_mode!r}")
        if self.pairs_per_iter < 1:
            raise ValueError("pairs_per_iter must be >= 1")

    def inner_iters_at(self, t: int, lower: LowerConfig) -> int:
        return t + 1 if self.k_schedule == "linear" else lower.inner_iters


@dataclass(frozen=True, eq=False)
class IterRecord:
    iteration: int
    nu: np.ndarray
    theta: np.ndarray
    grad: np.ndarray
    terms: dict
    objective: float
    align_return: float
    inner_grad_norms: tuple[float, ...]
    wall_ms: float

    @property
    def grad_norm_sq(self) -> float:
        return float(self.grad @ self.grad)

    @property
    def implicit_term(self) -> np.ndarray:
        """The part of the gradient carried by the policy's dependence on nu."""
        key = "term2" if "term2" in self.terms else "term_a"
        return self.terms.get(key, np.zeros_like(self.grad))


@dataclass(eq=False)
class RunTrace:
    method: str
    seed: int
    records: list[IterRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> IterRecord:
        if not self.records:
            raise EmptyTrace("trace has no records")
        return self.records[-1]

    def grad_norms(self) -> np.ndarray:
        return np.array([np.sqrt(r.grad_norm_sq) for r in self.records])


# Run settings used for the reported experiments on each registered instance.
STANDARD_RUNS: dict[str, dict] = {
    "chain": dict(objective=UTILITY, step_size_upper=0.5),
    "gridworld-goal": dict(objective=UTILITY, step_size_upper=0.5),
    "rlhf-2state": dict(objective=RLHF, step_size_upper=0.5),
    "rlhf-gridworld": dict(objective=RLHF, step_size_upper=0.2, init_scale=0.1),
}


def standard_config(env_name: str, **overrides) -> RunConfig:
    return RunConfig(**{**STANDARD_RUNS.get(env_name, {}), **overrides})


def _upper_gradient(env: EnvBundle, cfg: RunConfig, reward, policy, icfg, dataset, include_term2: bool):
    if cfg.objective == UTILITY:
        if env.utility is None:
            raise ValueError(f"{env.name} defines no designer utility")
        res = upper_grad_utility(env.mdp, reward, policy, env.utility, icfg)
        if not include_term2:
            res = replace(res, grad=res.grad - res.terms["term_a"])
        obj = upper_objective_utility(env.mdp, reward, policy, env.utility)
        return res, obj
    if cfg.rlhf_mode == RLHF_EXACT:
        res = upper_grad_rlhf(env.mdp, reward, policy, env.teacher, icfg, include_term2=include_term2)
        obj = upper_objective_rlhf(env.mdp, reward, policy, env.teacher)
    else:
        res = upper_grad_rlhf(env.mdp, reward, policy, env.teacher, icfg, batch=dataset, include_term2=include_term2)
        obj = pref_loglik(reward, dataset)
    return res, obj


def _collect_pairs(env: EnvBundle, policy, n: int, pair_rng, label_rng) -> PreferenceArrays:
    H = env.mdp.horizon_upper
    s, a = sample_trajectories(env.mdp, policy, H, 2 * n, pair_rng)
    s0, a0, s1, a1 = s[:n], a[:n], s[n:], a[n:]
    t = env.teacher
    p = np.atleast_1d(t.prefer_prob(t.returns(s0, a0), t.returns(s1, a1)))
    u = label_rng.random(n)
    # beta = inf gives p in {0, 0.5, 1}: ties fall to the fair coin
    labels = (u < p).astype(float)
    return PreferenceArrays(s0, a0, s1, a1, labels)


def _run(env: EnvBundle, cfg: RunConfig, method: str, include_term2: bool, timing: bool = True) -> RunTrace:
    if cfg.objective == RLHF and env.teacher is None:
        raise ValueError(f"{env.name} has no teacher; rlhf objective unavailable")
    lower = cfg.lower or env.lower_config()
    icfg = ImplicitSolveConfig(damping=cfg.damping, hessian_mode=cfg.hessian_mode, theta_reg=lower.theta_reg)
    nu = np.array(env.nu0 if cfg.nu0 is None else cfg.nu0, dtype=float)
    theta0 = env.policy(cfg.theta0).theta
    if cfg.init_scale:
        init_rng = make_rng(cfg.seed, _STREAM_INIT)
        nu = nu + cfg.init_scale * init_rng.standard_normal(nu.size)
        theta0 = theta0 + cfg.init_scale * init_rng.standard_normal(theta0.size)
    policy0 = env.policy(theta0)
    policy = policy0
    pair_rng = make_rng(cfg.seed, _STREAM_PAIRS)
    label_rng = make_rng(cfg.seed, _STREAM_LABELS)
    lower_rng = make_rng(cfg.seed, _STREAM_LOWER)
    dataset = None
    trace = RunTrace(method, cfg.seed)
    for t in range(cfg.outer_iters + 1):
        start = time.perf_counter()
        reward = env.reward(nu)
        if cfg.cold_start:
            policy = policy0
        try:
            inner = inner_loop(env.mdp, reward, policy, lower, lower_rng, iters=cfg.inner_iters_at(t, lower))
        except NonFiniteParameter as exc:
            exc.partial = trace
            raise
        policy = inner.policy
        if cfg.objective == RLHF and cfg.rlhf_mode == RLHF_BATCH:
            fresh = _collect_pairs(env, policy, cfg.pairs_per_iter, pair_rng, label_rng)
            dataset = fresh if dataset is None else dataset.concat(fresh)
        res, obj = _upper_gradient(env, cfg, reward, policy, icfg, dataset, include_term2)
        wall = (time.perf_counter() - start) * 1e3 if timing else 0.0
        trace.records.append(
            IterRecord(
                t, nu.copy(), policy.theta.copy(), res.grad, res.terms, obj,
                env.alignment_return(policy), inner.grad_norms, wall,
            )
        )
        if t == cfg.outer_iters:
            break
        nu = nu + cfg.step_size_upper * res.grad
        if not np.all(np.isfinite(nu)):
            raise NonFiniteParameter(f"reward parameters diverged at outer step {t}", partial=trace)
    return trace


def run_aparl(env: EnvBundle, cfg: RunConfig, timing: bool = True) -> RunTrace:
    """Alternate K inner policy-ascent steps with an implicit-gradient reward step.

    The final record holds (nu_T, theta^K(nu_T)).
    """
    return _run(env, cfg, "aparl", include_term2=True, timing=timing)


def run_naive_rlhf(env: EnvBundle, cfg: RunConfig, timing: bool = True) -> RunTrace:
    """Same loop, but the reward step ignores how the data depends on the policy."""
    if cfg.objective != RLHF:
        raise ValueError("the naive baseline is defined for the rlhf objective only")
    return _run(env, cfg, "naive", include_term2=False, timing=timing)


@dataclass(frozen=True)
class Stationarity:
    running_mean: np.ndarray  # running_mean[t-1] = mean of the first t squared gradient norms
    slope: float  # log-log slope of squared gradient norms over the second half


def stationarity_trace(trace) -> Stationarity:
    """Prefix running means of ||grad||^2 and the decay exponent of ||grad||^2.

    Accepts a RunTrace or a plain sequence of gradient norms g_1 ... g_T.
    The slope is fitted on log ||g_t||^2 against log t for t in the second
    half, skipping zero norms.
    """
    norms = trace.grad_norms() if isinstance(trace, RunTrace) else np.asarray(trace, dtype=float)
    if norms.size == 0:
        raise EmptyTrace("no gradient norms to summarise")
    sq = norms**2
    running = np.cumsum(sq) / np.arange(1, sq.size + 1)
    t = np.arange(1, sq.size + 1, dtype=float)
    half = slice(sq.size // 2, None)
    keep = sq[half] > 0
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(t[half][keep]), np.log(sq[half][keep]), 1)[0])
    else:
        slope = float("nan")
    return Stationarity(running, slope)


# --- CSV ---------------------------------------------------------------------


def trace_columns(nu_dim: int) -> list[str]:
    return ["iteration", *[f"nu_{i}" for i in range(nu_dim)], "grad_norm_sq", "objective", "align_return", "term2_norm", "wall_ms"]


def trace_to_csv(trace: RunTrace, timing: bool = False) -> str:
    """Fixed-schema CSV; ``wall_ms`` is written as 0 unless ``timing`` so exact runs are byte-stable."""
    buf = io.StringIO()
    n = trace.records[0].nu.size if trace.records else 0
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(n))
    for r in trace.records:
        w.writerow([
            r.iteration,
            *[repr(float(x)) for x in r.nu],
            repr(r.grad_norm_sq),
            repr(float(r.objective)),
            repr(float(r.align_return)),
            repr(float(np.linalg.norm(r.implicit_term))),
            repr(round(r.wall_ms, 3)) if timing else "0",
        ])
    return buf.getvalue()


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as float arrays; raises SchemaMismatch on a bad header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch("iteration", str(path))
    header = rows[0]
    n = sum(1 for c in header if c.startswith("nu_"))
    expected = trace_columns(n)
    for i, col in enumerate(expected):
        if i >= len(header) or header[i] != col:
            raise SchemaMismatch(header[i] if i < len(header) else col, str(path))
    if len(header) != len(expected):
        raise SchemaMismatch(header[len(expected)], str(path))
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float).reshape(-1, len(header))
    return {c: data[:, i] for i, c in enumerate(header)}
