"""Brute-force and finite-difference oracles, and the check suite built on them.

Every check returns CheckReport rows; a failed comparison is a report with
``passed=False``, never an exception.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import hypergrad as hg
from .driver import run_aparl, standard_config, stationarity_trace
from .envs import EnvBundle, get_env
from .errors import NonFiniteEvaluation, NotConverged
from .lower import exact_value, inner_loop, lower_gradient, policy_gradient, solve_lower_exact
from .mdp import TabularMdp, Trajectory, enumerate_trajectories, make_rng, sample_trajectories
from .policy import SoftmaxPolicy
from .reward import LinearReward, PreferenceArrays, Teacher, bt_prob, pref_loglik, pref_loglik_grad_term1


@dataclass(frozen=True)
class CheckReport:
    check: str
    instance: str
    error: float
    tolerance: float
    passed: bool
    computed: tuple[float, ...] = ()
    oracle: tuple[float, ...] = ()
    detail: str = ""


REPORT_COLUMNS = ["check", "instance", "error", "tolerance", "passed", "computed", "oracle", "detail"]


def _vec(x) -> tuple[float, ...]:
    return tuple(float(v) for v in np.ravel(x))


def report(check: str, instance: str, computed, oracle, error: float, tol: float, detail: str = "") -> CheckReport:
    ok = bool(np.isfinite(error) and error <= tol)
    return CheckReport(check, instance, float(error), float(tol), ok, _vec(computed), _vec(oracle), detail)


def rel_or_abs_error(computed, oracle) -> float:
    """max |a - o| scaled by max(1, max |o|)."""
    a, o = np.asarray(computed, float), np.asarray(oracle, float)
    return float(np.max(np.abs(a - o), initial=0.0) / max(1.0, float(np.max(np.abs(o), initial=0.0))))


def componentwise_rel_error(computed, oracle, floor: float = 1e-8) -> float:
    a, o = np.asarray(computed, float), np.asarray(oracle, float)
    return float(np.max(np.abs(a - o) / np.maximum(np.abs(o), floor), initial=0.0))


# --- oracles -----------------------------------------------------------------


def fd_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = eps
        fp, fm = f((x + e).reshape(x.shape)), f((x - e).reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite value on the stencil at coordinate {i}")
        g[i] = (fp - fm) / (2 * eps)
    return g.reshape(x.shape)


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x, eps: float = 1e-5) -> np.ndarray:
    """Column i = central difference of a vector function along coordinate i."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = eps
        fp, fm = np.asarray(f(x + e)), np.asarray(f(x - e))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"non-finite value on the stencil at coordinate {i}")
        cols.append((fp - fm) / (2 * eps))
    return np.stack(cols, axis=-1)


def upper_objective(env: EnvBundle, reward: LinearReward, policy: SoftmaxPolicy, objective: str) -> float:
    if objective == "utility":
        return hg.upper_objective_utility(env.mdp, reward, policy, env.utility)
    return hg.upper_objective_rlhf(env.mdp, reward, policy, env.teacher)


def solve_at(env: EnvBundle, nu, tol: float = 1e-10, policy0=None, max_iters: int = 20000) -> SoftmaxPolicy:
    """theta*(nu) to gradient norm ``tol``.

    Plain ascent gets close; a few Newton steps on the exact lower Hessian
    finish the job (first-order ascent crawls on the flat softmax directions).
    Convergence is certified by the final strict ascent call, which returns
    immediately when the gradient is already below ``tol``.
    """
    cfg = env.lower_config(max_oracle_iters=max_iters)
    reward = env.reward(nu)
    start = env.policy() if policy0 is None else policy0
    pol = solve_lower_exact(env.mdp, reward, start, cfg, grad_tol=max(tol, 1e-6)).policy
    icfg = hg.ImplicitSolveConfig(damping=0.0, theta_reg=env.theta_reg)
    for _ in range(20):
        g = lower_gradient(env.mdp, reward, pol, cfg)
        if np.linalg.norm(g) <= tol:
            break
        H = hg.lower_hessian(env.mdp, reward, pol, icfg)
        if np.linalg.eigvalsh(H).max() >= 0:
            break  # not locally concave: leave it to ascent
        pol = pol.with_theta(pol.theta - np.linalg.solve(H, g))
    return solve_lower_exact(env.mdp, reward, pol, cfg, grad_tol=tol, strict=True).policy


def bilevel_fd_oracle(
    env: EnvBundle, nu, eps: float = 1e-4, oracle_tol: float = 1e-10, objective: str | None = None, policy0=None
) -> np.ndarray:
    """Central differences of G(nu, theta*(nu)), re-solving the lower level at each stencil point.

    Each stencil solve is warm-started from theta*(nu).
    """
    objective = objective or ("utility" if env.utility is not None else "rlhf")
    nu = np.asarray(nu, dtype=float)
    center = solve_at(env, nu, oracle_tol, policy0)
    g = np.empty(nu.size)
    for i in range(nu.size):
        vals = []
        for sgn in (1.0, -1.0):
            x = nu.copy()
            x[i] += sgn * eps
            try:
                pol = solve_at(env, x, oracle_tol, center)
            except NotConverged as exc:
                raise NotConverged(exc.grad_norm, exc.iters, where=f"nu[{i}] {'+' if sgn > 0 else '-'} eps") from None
            vals.append(upper_objective(env, env.reward(x), pol, objective))
        g[i] = (vals[0] - vals[1]) / (2 * eps)
    return g


def tv_trajectory_divergence(mdp: TabularMdp, policy1: SoftmaxPolicy, policy2: SoftmaxPolicy, horizon: int) -> float:
    """Half the L1 distance between the two trajectory distributions."""
    sup = mdp.support(horizon)
    return 0.5 * float(np.abs(sup.probs(policy1) - sup.probs(policy2)).sum())


def max_state_policy_tv(policy1: SoftmaxPolicy, policy2: SoftmaxPolicy) -> float:
    return 0.5 * float(np.abs(policy1.probs_table() - policy2.probs_table()).sum(axis=1).max())


def omitted_hessian_term(mdp: TabularMdp, reward: LinearReward, policy: SoftmaxPolicy) -> np.ndarray:
    """Trajectory-by-trajectory sum of rho * sum_h gamma^h r_h C_h C_h^T.

    Deliberately loop-based so it shares no vectorised code with hessian_parts.
    """
    d = policy.dim
    out = np.zeros((d, d))
    r = reward.table()
    for tau, p in enumerate_trajectories(mdp, policy, mdp.horizon_lower):
        c = np.zeros(d)
        for h, (s, a) in enumerate(tau.steps):
            c = c + policy.score(s, a)
            out += p * mdp.discount**h * r[s, a] * np.outer(c, c)
    return out


# --- random instances ----------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    name: str
    mdp: TabularMdp
    policy: SoftmaxPolicy
    reward: LinearReward


def random_instance(rng: np.random.Generator, name: str, max_states: int = 4, max_actions: int = 3, max_horizon: int = 4) -> Instance:
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    H = int(rng.integers(2, max_horizon + 1))
    P = rng.dirichlet(np.ones(S), size=(S, A))
    init = rng.dirichlet(np.ones(S))
    mdp = TabularMdp(P, init, float(rng.uniform(0.5, 1.0)), H, H)
    if rng.random() < 0.5:
        feats = np.eye(S * A).reshape(S, A, S * A)
    else:
        feats = rng.normal(size=(S, A, int(rng.integers(2, 5))))
    policy = SoftmaxPolicy(rng.normal(scale=0.7, size=feats.shape[2]), feats)
    n = int(rng.integers(1, 4))
    reward = LinearReward(rng.normal(size=n), rng.normal(size=(S, A, n)))
    return Instance(f"{name}(S={S},A={A},H={H},d={policy.dim},n={n})", mdp, policy, reward)


def suite_instances(seed: int, count: int = 20) -> list[Instance]:
    rng = make_rng(seed, 101)
    return [random_instance(rng, f"random-{i}") for i in range(count)]


# --- checks --------------------------------------------------------------------

# analytic first/second-order operations that must each have an oracle check
MANIFEST = (
    "exact_value",
    "policy_gradient",
    "value_nu_gradient",
    "value_hessian",
    "value_hessian_log_only",
    "mixed_jacobian",
    "implicit_matrix",
    "upper_grad_utility",
    "upper_grad_rlhf",
    "score_table",
    "log_hessian_table",
    "pref_loglik_grad_term1",
)

CHECKS: dict[str, Callable[[int], list[CheckReport]]] = {}
_COVERAGE: dict[str, str] = {}


def register(name: str, covers: tuple[str, ...] = ()):
    def deco(fn):
        CHECKS[name] = fn
        for op in covers:
            _COVERAGE[op] = name
        return fn

    return deco


def _assert_manifest() -> None:
    missing = [op for op in MANIFEST if op not in _COVERAGE]
    if missing:
        raise AssertionError(f"no oracle check registered for: {', '.join(missing)}")


@register("trivial")
def check_trivial(seed: int) -> list[CheckReport]:
    """Closed-form sanity checks; fast."""
    out = []
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones(1), 0.5, 3, 3)
    v = exact_value(mdp, LinearReward.constant(1, 1), SoftmaxPolicy.tabular(1, 1))
    out.append(report("trivial", "1-state r=1 gamma=0.5 H=3", v, 1.75, abs(v - 1.75), 1e-12))
    p = bt_prob(np.log(3.0), 0.0, 1.0)
    out.append(report("trivial", "bt_prob gap ln3", p, 0.75, abs(p - 0.75), 1e-12))
    x = make_rng(seed, 102).normal(size=4)
    g = fd_gradient(lambda z: 0.5 * float(z @ z), x)
    out.append(report("trivial", "fd of half squared norm", g, x, float(np.max(np.abs(g - x))), 1e-9))
    return out


@register("gradient", covers=("exact_value", "policy_gradient", "value_nu_gradient", "score_table"))
def check_gradient(seed: int) -> list[CheckReport]:
    out = []
    for inst in suite_instances(seed):
        mdp, pol, rew = inst.mdp, inst.policy, inst.reward
        # exact_value against the enumerated sum
        ev = exact_value(mdp, rew, pol)
        sup = mdp.support(mdp.horizon_lower)
        disc = mdp.discount ** np.arange(mdp.horizon_lower)
        enum = float(sup.probs(pol) @ (rew.table()[sup.states, sup.actions] @ disc))
        out.append(report("gradient", inst.name + " exact_value", ev, enum, abs(ev - enum), 1e-10))
        g = policy_gradient(mdp, rew, pol)
        fd = fd_gradient(lambda th: exact_value(mdp, rew, pol.with_theta(th)), pol.theta)
        out.append(report("gradient", inst.name + " policy_gradient", g, fd, rel_or_abs_error(g, fd), 1e-5))
        gn = hg.value_nu_gradient(mdp, rew, pol)
        fdn = fd_gradient(lambda nu: exact_value(mdp, rew.with_nu(nu), pol), rew.nu)
        out.append(report("gradient", inst.name + " value_nu_gradient", gn, fdn, rel_or_abs_error(gn, fdn), 1e-6))
        sc = pol.score_table()
        fds = fd_jacobian(lambda th: pol.with_theta(th).log_probs_table(), pol.theta)
        out.append(report("gradient", inst.name + " score_table", sc[0, 0], fds[0, 0], rel_or_abs_error(sc, fds), 1e-6))
    return out


@register("hessian", covers=("value_hessian", "value_hessian_log_only", "log_hessian_table"))
def check_hessian(seed: int) -> list[CheckReport]:
    out = []
    exact = hg.ImplicitSolveConfig(hessian_mode=hg.HESSIAN_EXACT)
    log_only = hg.ImplicitSolveConfig(hessian_mode=hg.HESSIAN_LOG_ONLY)
    for inst in suite_instances(seed):
        mdp, pol, rew = inst.mdp, inst.policy, inst.reward
        H = hg.value_hessian(mdp, rew, pol, exact)
        fd = fd_jacobian(lambda th: policy_gradient(mdp, rew, pol.with_theta(th)), pol.theta)
        out.append(report("hessian", inst.name + " value_hessian", H.diagonal(), fd.diagonal(), rel_or_abs_error(H, fd), 1e-3))
        outer, logh = hg.hessian_parts(mdp, rew, pol)
        asym = float(np.max(np.abs((outer + logh) - (outer + logh).T)))
        out.append(report("hessian", inst.name + " symmetry", [asym], [0.0], asym, 1e-10))
        resid = H - hg.value_hessian(mdp, rew, pol, log_only)
        omitted = omitted_hessian_term(mdp, rew, pol)
        err = float(np.max(np.abs(resid - omitted)))
        out.append(report("hessian", inst.name + " omitted-term residual", [np.linalg.norm(resid)], [np.linalg.norm(omitted)], err, 1e-10))
        lh = pol.log_hessian_table()
        fdl = fd_jacobian(lambda th: pol.with_theta(th).score_table()[:, 0, :], pol.theta)
        out.append(report("hessian", inst.name + " log_hessian_table", lh[0].diagonal(), fdl[0].diagonal(), rel_or_abs_error(lh, fdl), 1e-6))
    return out


@register("mixed-jacobian", covers=("mixed_jacobian",))
def check_mixed_jacobian(seed: int) -> list[CheckReport]:
    out = []
    for inst in suite_instances(seed):
        mdp, pol, rew = inst.mdp, inst.policy, inst.reward
        J = hg.mixed_jacobian(mdp, rew, pol)
        fd = fd_jacobian(lambda nu: policy_gradient(mdp, rew.with_nu(nu), pol), rew.nu).T
        out.append(report("mixed-jacobian", inst.name + " d/dnu grad_theta", J.ravel()[:4], fd.ravel()[:4], rel_or_abs_error(J, fd), 1e-6))
        fd2 = fd_jacobian(lambda th: hg.value_nu_gradient(mdp, rew, pol.with_theta(th)), pol.theta)
        out.append(report("mixed-jacobian", inst.name + " d/dtheta grad_nu", J.ravel()[:4], fd2.ravel()[:4], rel_or_abs_error(J, fd2), 1e-6))
    return out


def _hypergrad_pair(env: EnvBundle, objective: str, damping: float = 0.0):
    """(analytic at theta*(nu0), bilevel oracle, theta*) on a registered bundle."""
    pol = solve_at(env, env.nu0)
    icfg = hg.ImplicitSolveConfig(damping=damping, theta_reg=env.theta_reg)
    if objective == "utility":
        g = hg.upper_grad_utility(env.mdp, env.reward(), pol, env.utility, icfg).grad
    else:
        g = hg.upper_grad_rlhf(env.mdp, env.reward(), pol, env.teacher, icfg).grad
    return g, bilevel_fd_oracle(env, env.nu0, objective=objective, policy0=pol), pol


HYPERGRAD_INSTANCES = {"gridworld-goal": "utility", "rlhf-2state": "rlhf"}
CLAIRVOYANCE_KS = (1, 5, 25, 125)


def clairvoyance_gaps(env: EnvBundle, oracle, Ks=CLAIRVOYANCE_KS, policy0=None) -> list[float]:
    """||grad at theta^K - oracle|| after K inner steps at nu0.

    The default start is warm, theta*(nu0 / 2), as in the outer loop where
    each inner run starts from the previous reward's policy.  From the
    uniform policy the gap is not monotone in K (the surrogate is poor
    while the Hessian is nearly singular).
    """
    icfg = hg.ImplicitSolveConfig(damping=0.0, theta_reg=env.theta_reg)
    start = solve_at(env, 0.5 * env.nu0, 1e-8) if policy0 is None else policy0
    gaps = []
    for K in Ks:
        pol = inner_loop(env.mdp, env.reward(), start, env.lower_config(), iters=K).policy
        g = hg.upper_grad_utility(env.mdp, env.reward(), pol, env.utility, icfg).grad
        gaps.append(float(np.linalg.norm(g - oracle)))
    return gaps


@register("hypergradient", covers=("implicit_matrix", "upper_grad_utility", "upper_grad_rlhf"))
def check_hypergradient(seed: int) -> list[CheckReport]:
    out = []
    for name, objective in HYPERGRAD_INSTANCES.items():
        env = get_env(name)
        g, oracle, pol = _hypergrad_pair(env, objective)
        out.append(report("hypergradient", f"{name} {objective}", g, oracle, componentwise_rel_error(g, oracle), 1e-2))
        icfg = hg.ImplicitSolveConfig(damping=0.0, theta_reg=env.theta_reg)
        M = hg.implicit_matrix(env.mdp, env.reward(), pol, icfg)
        resid = M @ hg.lower_hessian(env.mdp, env.reward(), pol, icfg) + hg.mixed_jacobian(env.mdp, env.reward(), pol)
        err = float(np.max(np.abs(resid)))
        out.append(report("hypergradient", f"{name} implicit_matrix residual", [err], [0.0], err, 1e-8))
        if objective == "utility":
            gaps = clairvoyance_gaps(env, oracle)
            bad = sum(1 for a, b in zip(gaps, gaps[1:]) if not b < a)
            out.append(report("hypergradient", f"{name} gap at theta^K, K={CLAIRVOYANCE_KS}", gaps, [], float(bad), 0.0,
                              "count of non-shrinking steps"))
    return out


@register("preference", covers=("pref_loglik_grad_term1",))
def check_preference(seed: int) -> list[CheckReport]:
    env = get_env("rlhf-2state")
    rng = make_rng(seed, 103)
    s, a = sample_trajectories(env.mdp, env.policy(), env.mdp.horizon_upper, 40, rng)
    arr = PreferenceArrays(s[:20], a[:20], s[20:], a[20:], rng.integers(0, 2, 20).astype(float))
    g = pref_loglik_grad_term1(env.reward(), arr)
    fd = fd_gradient(lambda nu: pref_loglik(env.reward(nu), arr), env.nu0)
    return [report("preference", "rlhf-2state 20 pairs", g, fd, rel_or_abs_error(g, fd), 1e-6)]


TV_BOUND_INSTANCES = ("chain", "gridworld-goal", "rlhf-2state")


@register("tv-bound")
def check_tv_bound(seed: int, pairs: int = 100) -> list[CheckReport]:
    out = []
    rng = make_rng(seed, 104)
    for name in TV_BOUND_INSTANCES:
        env = get_env(name)
        H = env.mdp.horizon_lower
        worst = -np.inf
        for _ in range(pairs):
            scale = rng.choice([0.1, 1.0, 3.0])
            p1 = env.policy(rng.normal(scale=scale, size=env.policy_features.shape[2]))
            p2 = env.policy(rng.normal(scale=scale, size=env.policy_features.shape[2]))
            lhs = tv_trajectory_divergence(env.mdp, p1, p2, H)
            rhs = H * max_state_policy_tv(p1, p2)
            worst = max(worst, lhs - rhs)
        out.append(report("tv-bound", f"{name} {pairs} pairs", [worst], [0.0], max(worst, 0.0), 1e-10, "max(TV_traj - H*maxTV_state)"))
    return out


@register("teacher-frequency")
def check_teacher(seed: int, draws: int = 10_000) -> list[CheckReport]:
    out = []
    env = get_env("rlhf-2state")
    tau0 = Trajectory.from_arrays([0, 1, 1], [0, 1, 1])
    tau1 = Trajectory.from_arrays([1, 0, 0], [0, 0, 1])
    true = env.teacher.true_reward
    for beta, stream in ((0.0, 1), (2.0, 2)):
        t = Teacher(true, beta, env.teacher.discount)
        rng = make_rng(seed, 105, stream)
        ys = np.array([t.label(tau0, tau1, rng) for _ in range(draws)], dtype=float)
        p = float(t.prefer_prob(t.returns(tau0.states[None], tau0.actions[None])[0], t.returns(tau1.states[None], tau1.actions[None])[0]))
        freq = ys.mean()
        if beta == 0.0:
            out.append(report("teacher-frequency", "beta=0", [freq], [0.5], abs(freq - 0.5), 0.015))
        else:
            se = np.sqrt(p * (1 - p) / draws)
            out.append(report("teacher-frequency", "beta=2", [freq], [p], abs(freq - p) / se, 3.0, "error in standard errors"))
    t = Teacher(true, np.inf, env.teacher.discount)
    rng = make_rng(seed, 105, 3)
    r0 = t.returns(tau0.states[None], tau0.actions[None])[0]
    r1 = t.returns(tau1.states[None], tau1.actions[None])[0]
    want = 1.0 if r0 > r1 else 0.0
    ys = np.array([t.label(tau0, tau1, rng) for _ in range(200)], dtype=float)
    out.append(report("teacher-frequency", "beta=inf", [ys.mean()], [want], float(np.max(np.abs(ys - want))), 0.0))
    return out


TREND_KS = (5, 25, 125)


def inner_floor(trace) -> float:
    """Mean over the second half of the run of the squared final inner gradient norm."""
    last = np.array([r.inner_grad_norms[-1] ** 2 for r in trace.records])
    return float(last[last.size // 2 :].mean())


@register("trend")
def check_trend(seed: int, outer_iters: int = 200, floor_iters: int = 40) -> list[CheckReport]:
    env = get_env("gridworld-goal")
    out = []
    cfg = standard_config("gridworld-goal", outer_iters=outer_iters, seed=seed)
    trace = run_aparl(env, cfg, timing=False)
    st = stationarity_trace(trace)
    ratio = st.running_mean[-1] / st.running_mean[4]
    out.append(report("trend", f"gridworld-goal T={outer_iters} ratio avg(T)/avg(5)", [ratio], [0.2], ratio, 0.2, f"slope {st.slope:.3f}"))
    t = np.arange(1, min(20, st.running_mean.size) + 1, dtype=float)
    c = float((st.running_mean[: t.size] / t).sum() / (1.0 / t**2).sum())
    floors = []
    for K in TREND_KS:
        lower = env.lower_config(inner_iters=K)
        tr = run_aparl(env, standard_config("gridworld-goal", outer_iters=floor_iters, seed=seed, lower=lower), timing=False)
        floors.append(inner_floor(tr))
    bound = max(c / st.running_mean.size, floors[1])
    out.append(report("trend", "running avg vs max(c/T, floor)", [st.running_mean[-1]], [bound], 0.0, 0.0, f"c={c:.4g}; reported only"))
    bad = sum(1 for a, b in zip(floors, floors[1:]) if not b < a)
    out.append(report("trend", f"inner floor over K={TREND_KS}", floors, [], float(bad), 0.0, "count of non-decreasing steps"))
    return out


_assert_manifest()

ALL = tuple(CHECKS)


def run_check_suite(selection=None, seed: int = 0) -> list[CheckReport]:
    """Run the named checks ("all" for every check); unknown names raise KeyError.

    Reports come back grouped in registration order regardless of ``selection`` order.
    """
    if not selection:
        return []
    names = set(ALL) if "all" in selection else set(selection)
    unknown = names - set(ALL)
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(sorted(unknown))}; known: {', '.join(ALL)}")
    out: list[CheckReport] = []
    for name in ALL:
        if name in names:
            out.extend(CHECKS[name](seed))
    return out


def reports_to_csv(reports: list[CheckReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([
            r.check, r.instance, repr(r.error), repr(r.tolerance), "PASS" if r.passed else "FAIL",
            " ".join(f"{v:.12g}" for v in r.computed), " ".join(f"{v:.12g}" for v in r.oracle), r.detail,
        ])
    return buf.getvalue()


def format_table(reports: list[CheckReport]) -> str:
    lines = [f"{'check':<18} {'instance':<52} {'error':>11} {'tol':>9}  result"]
    for r in reports:
        lines.append(f"{r.check:<18} {r.instance[:52]:<52} {r.error:>11.3e} {r.tolerance:>9.1e}  {'PASS' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} passed")
    return "\n".join(lines)
