"""Command-line surface: design, estimate, simulate, skeletal, verify.

File conventions: the covariate file is a headerless numeric CSV grid; the
outcome file has a header naming columns from {a, b, mu}; assignment vectors
are a single headerless column of +-1. Every JSON report embeds a manifest
(command, config snapshot, seed, tool version, input digests, timestamp)
sufficient to reproduce the run. The timestamp honors SOURCE_DATE_EPOCH so
that pinned environments get byte-identical reports.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure,
4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, backend
from ._jsonio import dumps
from .errors import (
    ConsistencyError,
    DataError,
    GswError,
    LogicError,
    NumericError,
    ParameterError,
    VerificationError,
)
from .estimator import OutcomeData, build_report
from .linalg import build_setup
from .montecarlo import SimConfig, run_replications
from .sampler import FREEZE_TOL, run_gsw
from .skeletal import TRAJECTORY_COLUMNS, run_coupled
from . import verify as verify_suites

SCHEMA_VERSION = 1
CONFIG_KEYS = ("phi", "seed", "replications", "mode", "epsilon_override", "freeze_tol")


@dataclass
class Dataset:
    X: np.ndarray
    a: np.ndarray | None
    b: np.ndarray | None
    mu: np.ndarray | None
    x_path: str
    outcomes_path: str | None


def _parse_float(token: str, path: str, row: int, col: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col}: cannot parse {token!r} as a number")
    if not np.isfinite(value):
        raise DataError(f"{path}: row {row}, column {col}: non-finite value {token!r}")
    return value


def load_matrix_csv(path: str) -> np.ndarray:
    """Headerless numeric grid; raises DataError naming the offending row."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise DataError(f"{path}: row {lineno} has {len(tokens)} fields, expected {width}")
            rows.append([_parse_float(t.strip(), path, lineno, c + 1) for c, t in enumerate(tokens)])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def load_vector_csv(path: str) -> np.ndarray:
    mat = load_matrix_csv(path)
    if mat.shape[1] != 1:
        raise DataError(f"{path}: expected a single column, found {mat.shape[1]}")
    return mat[:, 0]


def load_outcomes_csv(path: str) -> dict:
    """Outcome columns keyed by header names drawn from {a, b, mu}."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty outcomes file")
    header = [h.strip() for h in lines[0].split(",")]
    allowed = {"a", "b", "mu"}
    if not set(header) <= allowed or len(set(header)) != len(header):
        raise DataError(f"{path}: header must be distinct columns from {sorted(allowed)}, got {header}")
    columns: dict[str, list[float]] = {h: [] for h in header}
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split(",")
        if len(tokens) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(tokens)} fields, expected {len(header)}")
        for c, (h, t) in enumerate(zip(header, tokens)):
            columns[h].append(_parse_float(t.strip(), path, lineno, c + 1))
    return {h: np.array(vals, dtype=np.float64) for h, vals in columns.items()}


def load_dataset(x_path: str, outcomes_path: str | None) -> Dataset:
    """Read and cross-validate the covariate and outcome files."""
    X = load_matrix_csv(x_path)
    a = b = mu = None
    if outcomes_path is not None:
        cols = load_outcomes_csv(outcomes_path)
        a, b, mu = cols.get("a"), cols.get("b"), cols.get("mu")
        if (a is None) != (b is None):
            raise DataError(f"{outcomes_path}: columns a and b must be given together")
        lengths = {len(v) for v in cols.values()}
        if len(lengths) != 1 or lengths.pop() != X.shape[0]:
            raise DataError(f"{outcomes_path}: outcome length does not match the {X.shape[0]} covariate rows")
        if a is not None and mu is not None and not np.array_equal(mu, a + b):
            raise DataError(f"{outcomes_path}: mu column disagrees with a + b")
        if a is not None and mu is None:
            mu = a + b
    return Dataset(X=X, a=a, b=b, mu=mu, x_path=x_path, outcomes_path=outcomes_path)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, seed, inputs: list[str]) -> dict:
    """Reproducibility record embedded in every report."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    created = int(epoch) if epoch is not None else int(time.time())
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "backend": backend.backend_name(),
        "input_digests": {p: _sha256(p) for p in inputs},
        "created_utc": created,
    }


def _ensure_parent(path: str, no_mkdir: bool) -> None:
    parent = Path(path).parent
    if parent and not parent.exists():
        if no_mkdir:
            raise DataError(f"output directory {parent} does not exist (--no-mkdir given)")
        parent.mkdir(parents=True, exist_ok=True)


def emit_report(report: dict, path: str, no_mkdir: bool = False) -> None:
    """Write a canonical JSON report (stable ordering, 17-digit floats)."""
    _ensure_parent(path, no_mkdir)
    text = dumps(report)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write report to {path}: {exc}") from exc


def write_csv(path: str, header: list[str] | None, rows, no_mkdir: bool = False) -> None:
    _ensure_parent(path, no_mkdir)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(c) for c in row) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def read_config_file(path: str) -> dict:
    """Flat key=value configuration; unknown keys are rejected by name."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParameterError(f"{path}: line {lineno} is not key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ParameterError(f"{path}: unknown config key {key!r} (allowed: {', '.join(CONFIG_KEYS)})")
            values[key] = val
    return values


def _merge_config(args, file_values: dict) -> dict:
    """File values fill in whatever the command line left unset."""
    out = {}
    casts = {"phi": float, "seed": int, "replications": int, "mode": str,
             "epsilon_override": float, "freeze_tol": float}
    for key in CONFIG_KEYS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            out[key] = cli_val
        elif key in file_values:
            out[key] = casts[key](file_values[key])
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gswdesign", description="Balanced randomized designs via the Gram-Schmidt walk")
    parser.add_argument("--no-mkdir", action="store_true", help="fail instead of creating output directories")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outcomes=False):
        p.add_argument("--x", required=True, help="covariate CSV (headerless grid)")
        if outcomes:
            p.add_argument("--outcomes", help="outcome CSV with header columns from {a,b,mu}")
        p.add_argument("--phi", type=float, default=None, help="robustness parameter in (0,1)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", help="flat key=value config file; flags override it")
        p.add_argument("--freeze-tol", dest="freeze_tol", type=float, default=None)

    p = sub.add_parser("design", help="draw one +-1 assignment vector")
    common(p)
    p.add_argument("--out", required=True, help="output CSV for the assignment column")

    p = sub.add_parser("estimate", help="ATE estimate and variance handles")
    common(p, outcomes=True)
    p.add_argument("--z", help="assignment CSV from a design run")
    p.add_argument("--out", required=True, help="output JSON report")

    p = sub.add_parser("simulate", help="replicated Monte Carlo diagnostics")
    common(p, outcomes=True)
    p.add_argument("--mode", choices=["gsw", "skeletal", "coupled", "iid"], default=None)
    p.add_argument("--reps", dest="replications", type=int, default=None)
    p.add_argument("--target", choices=["auto", "tau_hat", "zv"], default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--epsilon-override", dest="epsilon_override", type=float, default=None)
    p.add_argument("--out", required=True, help="output JSON diagnostics")
    p.add_argument("--samples-csv", help="optional CSV of raw samples")
    p.add_argument("--hist-csv", help="optional CSV of histogram bins")

    p = sub.add_parser("skeletal", help="one coupled trajectory dump")
    common(p, outcomes=True)
    p.add_argument("--epsilon-override", dest="epsilon_override", type=float, default=None)
    p.add_argument("--out", required=True, help="output CSV trajectory")
    p.add_argument("--summary", help="optional JSON summary")

    p = sub.add_parser("verify", help="run oracle and invariant suites")
    p.add_argument("--suite", default="all", choices=sorted(verify_suites.SUITES) + ["all"])
    p.add_argument("--seed", type=int, default=20260808)
    return parser


def _require(config: dict, key: str):
    if key not in config or config[key] is None:
        raise ParameterError(f"missing required setting {key!r} (flag or config file)")
    return config[key]


def cmd_design(args) -> int:
    config = _merge_config(args, read_config_file(args.config) if args.config else {})
    dataset = load_dataset(args.x, None)
    setup = build_setup(dataset.X, _require(config, "phi"))
    seed = _require(config, "seed")
    z = run_gsw(setup, seed, freeze_tol=config.get("freeze_tol", FREEZE_TOL))
    write_csv(args.out, None, ([int(zi)] for zi in z), args.no_mkdir)
    manifest = build_manifest("design", config, seed, [args.x])
    emit_report({"schema_version": SCHEMA_VERSION, "kind": "design_manifest", "n": setup.n,
                 "d": setup.d, "manifest": manifest}, args.out + ".manifest.json", args.no_mkdir)
    return 0


def cmd_estimate(args) -> int:
    config = _merge_config(args, read_config_file(args.config) if args.config else {})
    dataset = load_dataset(args.x, args.outcomes)
    if dataset.mu is None:
        raise DataError("estimate needs an outcomes file with mu or both a and b")
    setup = build_setup(dataset.X, _require(config, "phi"))
    outcomes = OutcomeData.from_pair(dataset.a, dataset.b) if dataset.a is not None else None
    z = None
    if args.z:
        z = load_vector_csv(args.z)
        if z.shape[0] != setup.n:
            raise DataError(f"{args.z}: assignment length {z.shape[0]} does not match n={setup.n}")
    report = build_report(setup, outcomes, dataset.mu, z)
    inputs = [args.x] + ([args.outcomes] if args.outcomes else []) + ([args.z] if args.z else [])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "estimate_report",
        "n": setup.n,
        "d": setup.d,
        "phi": setup.phi,
        "tau": report.tau,
        "tau_hat": report.tau_hat,
        "mse_bound": report.mse_bound,
        "mse_bound_tightened": report.mse_bound_tightened,
        "var_iid": report.var_iid,
        "var_gsw_asymptotic": report.var_gsw_asymptotic,
        "kappa": report.kappa,
        "formal_condition_value": report.formal_condition_value,
        "diagnostics": report.diagnostics,
        "rank_deficient": report.rank_deficient,
        "estimation_enabled": outcomes is not None,
        "manifest": build_manifest("estimate", config, config.get("seed"), inputs),
    }
    emit_report(payload, args.out, args.no_mkdir)
    return 0


def cmd_simulate(args) -> int:
    config = _merge_config(args, read_config_file(args.config) if args.config else {})
    dataset = load_dataset(args.x, args.outcomes)
    seed = _require(config, "seed")
    mode = config.get("mode") or "gsw"
    sim = SimConfig(
        n=dataset.X.shape[0],
        d=dataset.X.shape[1],
        phi=_require(config, "phi"),
        replications=_require(config, "replications"),
        seed=seed,
        mode=mode,
        X=dataset.X,
        a=dataset.a,
        b=dataset.b,
        mu=dataset.mu,
        target=args.target,
        workers=args.workers,
        freeze_tol=config.get("freeze_tol", FREEZE_TOL),
        epsilon_override=config.get("epsilon_override"),
    )
    diag = run_replications(sim)
    inputs = [args.x] + ([args.outcomes] if args.outcomes else [])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulation_diagnostics",
        "config": {"n": sim.n, "d": sim.d, "phi": sim.phi, "replications": sim.replications,
                   "seed": seed, "mode": mode, "target": diag.target},
        "mean": diag.mean,
        "variance": diag.variance,
        "variance_ratio": diag.variance_ratio,
        "ks_distance": diag.ks_distance,
        "mc_standard_error": diag.mc_standard_error,
        "variance_se": diag.variance_se,
        "checks": {"degenerate_variance": diag.degenerate,
                   "all_samples_finite": bool(np.all(np.isfinite(diag.samples)))},
        "extras": diag.extras,
        "manifest": build_manifest("simulate", config, seed, inputs),
    }
    emit_report(payload, args.out, args.no_mkdir)
    if args.samples_csv:
        write_csv(args.samples_csv, ["sample"], ([s] for s in diag.samples), args.no_mkdir)
    if args.hist_csv:
        counts, edges = np.histogram(diag.samples, bins=64)
        write_csv(args.hist_csv, ["bin_left", "bin_right", "count"],
                  ([edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)), args.no_mkdir)
    return 0


def cmd_skeletal(args) -> int:
    config = _merge_config(args, read_config_file(args.config) if args.config else {})
    dataset = load_dataset(args.x, args.outcomes)
    setup = build_setup(dataset.X, _require(config, "phi"))
    seed = _require(config, "seed")
    if dataset.mu is not None:
        from .estimator import residual_projection

        v = residual_projection(dataset.mu, setup.X).v
    else:
        raise DataError("skeletal needs an outcomes file (mu or a,b) to build the contrast vector")
    traj = run_coupled(setup, v, seed, eps_n=config.get("epsilon_override"),
                       freeze_tol=config.get("freeze_tol", FREEZE_TOL))
    write_csv(args.out, list(TRAJECTORY_COLUMNS), traj.records, args.no_mkdir)
    if args.summary:
        inputs = [args.x] + ([args.outcomes] if args.outcomes else [])
        emit_report({
            "schema_version": SCHEMA_VERSION,
            "kind": "skeletal_summary",
            "n": traj.n,
            "eps_n": traj.eps_n,
            "threshold_t": traj.threshold_t,
            "kappa": traj.kappa,
            "vacuous": traj.vacuous,
            "case1_steps": traj.case1_steps,
            "M_gs": traj.M_gs,
            "M_tilde": traj.M_tilde,
            "M": traj.M,
            "qv_sum": traj.qv_sum,
            "v_norm_sq": float(v @ v),
            "orthogonality_gap": traj.orthogonality_gap,
            "manifest": build_manifest("skeletal", config, seed, inputs),
        }, args.summary, args.no_mkdir)
    return 0


def cmd_verify(args) -> int:
    names = sorted(verify_suites.SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        rows = verify_suites.SUITES[name](args.seed)
        print(f"suite {name}:")
        for check, ok, detail in rows:
            status = "ok  " if ok else "FAIL"
            print(f"  [{status}] {check}: {detail}")
            failed += 0 if ok else 1
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    handlers = {"design": cmd_design, "estimate": cmd_estimate, "simulate": cmd_simulate,
                "skeletal": cmd_skeletal, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ConsistencyError, LogicError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except GswError as exc:  # pragma: no cover - catch-all for new subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
