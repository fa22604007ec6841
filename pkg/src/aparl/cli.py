"""Command-line front end: ``aparl run | verify | plotdata | list-envs``.

Exit codes: 0 ok, 1 a verification check failed, 2 bad config or
arguments, 3 runtime failure (any partial trace is still written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .driver import RunConfig, RunTrace, read_trace_csv, run_aparl, run_naive_rlhf, stationarity_trace, trace_to_csv
from .envs import REGISTRY, get_env
from .errors import AparlError, ConfigError, SchemaMismatch
from .lower import LowerConfig
from .verify import ALL as ALL_CHECKS
from .verify import format_table, reports_to_csv, run_check_suite

OUTPUT_ENV_VAR = "APARL_OUTPUT_DIR"
DEFAULT_OUTPUT = "aparl-out"

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

METHODS = ("aparl", "naive")
SUMMARY_COLUMNS = [
    "env", "method", "seed", "iterations", "final_align_return", "oracle_return",
    "final_objective", "final_grad_norm_sq", "running_mean_grad_norm_sq", "stationarity_slope",
]


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, DEFAULT_OUTPUT))


# --- config ------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    env: str
    seeds: list[int]
    methods: tuple[str, ...] = ("aparl",)
    output: Path | None = None
    env_overrides: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    lower: dict = field(default_factory=dict)

    def run_config(self, seed: int) -> RunConfig:
        env = get_env(self.env, **self.env_overrides)
        # [lower] theta_reg, if given, wins over the environment's ridge
        lower = LowerConfig(**{"theta_reg": env.theta_reg, **self.lower})
        return RunConfig(**self.run, lower=lower, seed=seed)


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in re.split(r"[,\s]+", text.strip()) if t], dtype=float)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_EXPERIMENT_KEYS = {
    "env": str,
    "seeds": lambda t: [int(x) for x in re.split(r"[,\s]+", t.strip()) if x],
    "methods": lambda t: tuple(x for x in re.split(r"[,\s]+", t.strip()) if x),
    "output": Path,
}
_ENV_KEYS = {"theta_reg": float, "nu0": _floats}
_RUN_KEYS = {
    "outer_iters": int, "step_size_upper": float, "k_schedule": str, "objective": str,
    "rlhf_mode": str, "pairs_per_iter": int, "nu0": _floats, "theta0": _floats,
    "cold_start": _bool, "damping": float, "hessian_mode": str, "init_scale": float,
}
_LOWER_KEYS = {
    "step_size_lower": float, "inner_iters": int, "mode": str, "num_samples": int,
    "grad_tol": float, "max_oracle_iters": int, "theta_reg": float,
}
SECTIONS = {"experiment": _EXPERIMENT_KEYS, "env": _ENV_KEYS, "run": _RUN_KEYS, "lower": _LOWER_KEYS}

# every run key must be a RunConfig field (lower is its own section)
assert set(_RUN_KEYS) <= {f.name for f in fields(RunConfig)}
assert set(_LOWER_KEYS) <= {f.name for f in fields(LowerConfig)}


def _locate(lines: list[str], section: str, key: str) -> tuple[int | None, int | None]:
    """1-based (line, column of the value) of ``key`` inside ``[section]``."""
    current = None
    pat = re.compile(r"^(\s*)([^=:\s][^=:]*?)\s*[=:]\s*")
    for i, raw in enumerate(lines, 1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            continue
        m = pat.match(raw)
        if current == section and m and m.group(2).strip().lower() == key:
            return i, m.end() + 1
    return None, None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", line=exc.lineno, column=1) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", line=exc.lineno, column=1, key=exc.option) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno, column=1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", line=lineno, column=1) from None

    values: dict[str, dict] = {name: {} for name in SECTIONS}
    for section in cp.sections():
        if section not in SECTIONS:
            line = next((i for i, l in enumerate(lines, 1) if l.strip() == f"[{section}]"), None)
            raise ConfigError(f"unknown section [{section}]", line=line, column=1)
        spec = SECTIONS[section]
        for key, raw in cp.items(section):
            line, col = _locate(lines, section, key)
            if key not in spec:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line=line, column=1, key=key)
            try:
                values[section][key] = spec[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", line=line, column=col, key=key) from None

    exp = values["experiment"]
    if "env" not in exp:
        raise ConfigError("[experiment] needs an env", key="env")
    if exp["env"] not in REGISTRY:
        line, col = _locate(lines, "experiment", "env")
        raise ConfigError(f"unknown environment {exp['env']!r}; known: {', '.join(sorted(REGISTRY))}", line=line, column=col, key="env")
    seeds = exp.get("seeds", [0])
    if not seeds:
        line, col = _locate(lines, "experiment", "seeds")
        raise ConfigError("seeds must be non-empty", line=line, column=col, key="seeds")
    methods = exp.get("methods", ("aparl",))
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        line, col = _locate(lines, "experiment", "methods")
        raise ConfigError(f"unknown method(s) {bad}; choose from {METHODS}", line=line, column=col, key="methods")
    cfg = ExperimentConfig(exp["env"], seeds, tuple(methods), exp.get("output"), values["env"], values["run"], values["lower"])
    try:  # surface invalid combinations now, not mid-run
        cfg.run_config(seeds[0])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path))


# --- run -----------------------------------------------------------------------


def trace_filename(method: str, seed: int) -> str:
    return f"trace_{method}_seed{seed}.csv"


def summary_row(env_name: str, trace: RunTrace, oracle: float) -> dict:
    st = stationarity_trace(trace)
    final = trace.final
    return {
        "env": env_name,
        "method": trace.method,
        "seed": trace.seed,
        "iterations": len(trace) - 1,
        "final_align_return": repr(float(final.align_return)),
        "oracle_return": repr(float(oracle)),
        "final_objective": repr(float(final.objective)),
        "final_grad_norm_sq": repr(final.grad_norm_sq),
        "running_mean_grad_norm_sq": repr(float(st.running_mean[-1])),
        "stationarity_slope": repr(st.slope),
    }


def write_summary(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def execute(cfg: ExperimentConfig, out: Path, timing: bool = False) -> list[dict]:
    """Run every (method, seed); writes traces as they finish and the summary last."""
    out.mkdir(parents=True, exist_ok=True)
    env = get_env(cfg.env, **cfg.env_overrides)
    oracle = env.oracle_return() if env.teacher is not None else float("nan")
    runners = {"aparl": run_aparl, "naive": run_naive_rlhf}
    rows = []
    for seed in cfg.seeds:
        rc = cfg.run_config(seed)
        for method in cfg.methods:
            trace = runners[method](env, rc, timing=timing)
            (out / trace_filename(method, seed)).write_text(trace_to_csv(trace, timing=timing))
            rows.append(summary_row(cfg.env, trace, oracle))
    write_summary(out / "summary.csv", rows)
    return rows


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seeds:
            cfg.seeds = args.seeds
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else (cfg.output or default_output_dir())
    try:
        rows = execute(cfg, out, timing=args.timing)
    except (AparlError, FloatingPointError, ValueError) as exc:
        partial = getattr(exc, "partial", None)
        if isinstance(partial, RunTrace) and partial.records:
            path = out / f"partial_{trace_filename(partial.method, partial.seed)}"
            path.write_text(trace_to_csv(partial, timing=args.timing))
            print(f"partial trace written to {path}", file=sys.stderr)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for r in rows:
        print(f"{r['method']:<6} seed {r['seed']:>3}  align {float(r['final_align_return']):.6f}  "
              f"oracle {float(r['oracle_return']):.6f}  avg|g|^2 {float(r['running_mean_grad_norm_sq']):.3e}")
    print(f"wrote {len(rows)} traces and summary.csv to {out}")
    return EXIT_OK


# --- verify ----------------------------------------------------------------------


def cmd_verify(args) -> int:
    selection = list(ALL_CHECKS) if args.all or not args.only else args.only
    try:
        reports = run_check_suite(selection, seed=args.seed)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.csv").write_text(reports_to_csv(reports))
    print(format_table(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


# --- plotdata --------------------------------------------------------------------

PLOT_COLUMNS = ["series", "iteration", "mean", "stderr", "lower", "upper", "n"]
_TRACE_RE = re.compile(r"trace_(?P<method>[A-Za-z0-9-]+)_seed(?P<seed>-?\d+)\.csv$")


def aggregate(series: dict[str, list[np.ndarray]]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per method: mean and standard error across seeds, truncated to the shortest trace."""
    out = {}
    for method, runs in series.items():
        T = min(len(r) for r in runs)
        X = np.stack([r[:T] for r in runs])
        se = X.std(axis=0, ddof=1) / np.sqrt(len(runs)) if len(runs) > 1 else np.zeros(T)
        out[method] = (X.mean(axis=0), se)
    return out


def plot_data(paths: list[Path], column: str = "align_return", oracle: float | None = None):
    """Read trace CSVs and return (rows for the CSV, aggregated series)."""
    series: dict[str, list[np.ndarray]] = {}
    for p in paths:
        m = _TRACE_RE.search(p.name)
        method = m.group("method") if m else p.stem
        data = read_trace_csv(p)
        if column not in data:
            raise SchemaMismatch(column, str(p))
        series.setdefault(method, []).append(data[column])
    agg = aggregate(series)
    rows = []
    for method in sorted(agg):
        mean, se = agg[method]
        for t, (mu, s) in enumerate(zip(mean, se)):
            rows.append([method, t, repr(float(mu)), repr(float(s)), repr(float(mu - s)), repr(float(mu + s)), len(series[method])])
    if oracle is not None and agg:
        T = max(len(m) for m, _ in agg.values())
        for t in range(T):
            rows.append(["oracle", t, repr(oracle), "0.0", repr(oracle), repr(oracle), 1])
    return rows, agg


def write_svg(path: Path, agg, oracle: float | None, column: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed id salt and no date stamp keep the SVG byte-stable
    plt.rcParams["svg.hashsalt"] = "aparl"
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted(agg):
        mean, se = agg[method]
        t = np.arange(mean.size)
        ax.plot(t, mean, label=method)
        ax.fill_between(t, mean - se, mean + se, alpha=0.25)
    if oracle is not None:
        ax.axhline(oracle, color="red", linestyle="--", label="oracle")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(column)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _trace_paths(inputs: list[str]) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("trace_*.csv")))
        elif p.exists():
            paths.append(p)
    return paths


def cmd_plotdata(args) -> int:
    paths = _trace_paths(args.traces)
    if not paths:
        print("error: no trace CSVs found", file=sys.stderr)
        return EXIT_CONFIG
    env_name = args.env
    if env_name is None:
        summary = paths[0].parent / "summary.csv"
        if summary.exists():
            rows = read_summary(summary)
            env_name = rows[0]["env"] if rows else None
    oracle = None
    if env_name is not None:
        env = get_env(env_name)
        if env.teacher is not None:
            oracle = env.oracle_return()
    try:
        rows, agg = plot_data(paths, args.column, oracle)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "plotdata.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        w.writerows(rows)
    write_svg(out / "plotdata.svg", agg, oracle, args.column)
    for method in sorted(agg):
        mean, se = agg[method]
        print(f"{method:<6} final mean {mean[-1]:.6f} stderr {se[-1]:.6f}")
    if oracle is not None:
        print(f"oracle {oracle:.6f}")
    return EXIT_OK


def cmd_list_envs(args) -> int:
    for name in REGISTRY:
        env = get_env(name)
        kind = ("utility" if env.utility is not None else "") + (" rlhf" if env.teacher is not None else "")
        print(f"{name:<16} {kind.strip():<8} {env.description}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aparl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help=f"output directory (default: config 'output', ${OUTPUT_ENV_VAR}, or ./{DEFAULT_OUTPUT})")
    p.add_argument("--seeds", type=int, nargs="+", help="override the config's seeds")
    p.add_argument("--timing", action="store_true", help="record wall-clock per iteration (CSV no longer byte-stable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the oracle check suite")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--all", action="store_true")
    g.add_argument("--only", nargs="+", metavar="CHECK", help=f"subset of: {', '.join(ALL_CHECKS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="aggregate trace CSVs into plot-ready CSV and SVG")
    p.add_argument("traces", nargs="+", help="trace CSV files or run directories")
    p.add_argument("--env", help="environment for the oracle line (default: from summary.csv)")
    p.add_argument("--column", default="align_return")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("list-envs", help="list registered environments")
    p.set_defaults(func=cmd_list_envs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
