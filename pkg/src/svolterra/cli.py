"""Command-line front end.

    svolterra fbm --H 0.75 --N 1024 --n-paths 100 --seed 7 -o out/
    svolterra acceptance -o acc/

Every run writes its data files plus ``manifest.json`` (config echo,
seeds, sha256 of each file, wall-clock, version) into ``output_path``.
Exit codes: 0 success, 1 numeric failure (``error.json`` written),
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, DomainError, PicardConvergenceError
from .fraccalc import Grid, estimate_holder_exponent
from .kernel import FbmKernel, build_kernel_matrix
from .malliavin import Direction, consistency_report
from .simulate import covariance_matrix_rh, ensemble_covariance, fbm_kernel_ensemble, sample_brownian
from .solver import SdeProblem, SolverConfig, solve_ensemble

__all__ = ["COMMANDS", "PROBLEMS", "RunConfig", "UsageError", "load_config", "main", "run"]

COMMANDS = ("fbm", "solve", "malliavin", "verify-cov", "holder", "kernel-dump", "acceptance")
FORMATS = ("csv", "json")
MALLIAVIN_CASES = ("additive", "multiplicative")


class UsageError(ValueError):
    """Bad configuration; ``field`` names the offending key when there is one."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _mean_reverting(H: float) -> SdeProblem:
    return SdeProblem(
        1.0,
        lambda t, x: -x,
        lambda t, x: 0.5 / np.sqrt(1.0 + x * x),
        FbmKernel(H),
        db_dx=lambda t, x: -np.ones_like(x),
        dsigma_dx=lambda t, x: -0.5 * x / (1.0 + x * x) ** 1.5,
    )


def _additive(H: float) -> SdeProblem:
    return SdeProblem(
        0.0,
        lambda t, x: -x,
        lambda t, x: np.ones_like(x),
        FbmKernel(H),
        db_dx=lambda t, x: -np.ones_like(x),
    )


def _sine_drift(H: float) -> SdeProblem:
    return SdeProblem(
        0.5,
        lambda t, x: np.sin(x) - x,
        lambda t, x: 0.5 / np.sqrt(1.0 + x * x),
        FbmKernel(H),
        db_dx=lambda t, x: np.cos(x) - 1.0,
        dsigma_dx=lambda t, x: -0.5 * x / (1.0 + x * x) ** 1.5,
    )


# named problems for ``solve``; each maps H to an SdeProblem with the fBm kernel
PROBLEMS = {
    "mean-reverting": _mean_reverting,
    "additive": _additive,
    "sine-drift": _sine_drift,
}


@dataclass(frozen=True)
class RunConfig:
    command: str = "fbm"
    H: float = 0.5
    N: int = 256
    n_paths: int = 100
    seed: int = 0
    tol: float = 1e-8
    output_path: str = "svolterra-out"
    format: str = "csv"
    problem: str = "mean-reverting"
    case: str = "multiplicative"

    def __post_init__(self) -> None:
        _validate(self)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float, np.floating)) and not isinstance(v, bool)


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise UsageError(f"command must be one of {COMMANDS}", "command")
    if not _is_real(cfg.H) or not 0.0 < cfg.H < 1.0:
        raise UsageError(f"H must be a real number in (0, 1), got {cfg.H!r}", "H")
    if not _is_int(cfg.N) or cfg.N < 4 or cfg.N & (cfg.N - 1):
        raise UsageError(f"N must be a power of two >= 4, got {cfg.N!r}", "N")
    if not _is_int(cfg.n_paths) or cfg.n_paths < 1:
        raise UsageError(f"n_paths must be an integer >= 1, got {cfg.n_paths!r}", "n_paths")
    if not _is_int(cfg.seed) or cfg.seed < 0:
        raise UsageError(f"seed must be a non-negative integer, got {cfg.seed!r}", "seed")
    if not _is_real(cfg.tol) or not (cfg.tol > 0 and math.isfinite(cfg.tol)):
        raise UsageError(f"tol must be a positive real, got {cfg.tol!r}", "tol")
    if not isinstance(cfg.output_path, str) or not cfg.output_path:
        raise UsageError("output_path must be a non-empty string", "output_path")
    if cfg.format not in FORMATS:
        raise UsageError(f"format must be one of {FORMATS}, got {cfg.format!r}", "format")
    if cfg.problem not in PROBLEMS:
        raise UsageError(f"problem must be one of {sorted(PROBLEMS)}, got {cfg.problem!r}", "problem")
    if cfg.case not in MALLIAVIN_CASES:
        raise UsageError(f"case must be one of {MALLIAVIN_CASES}, got {cfg.case!r}", "case")


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _read_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(FIELD_NAMES))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}", unknown[0])
    return data


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``overrides`` (entries equal to None are skipped)."""
    values = _read_config_file(path)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


# -- pipelines ---------------------------------------------------------------------


def _csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _paths_file(stem: str, t: np.ndarray, columns: dict[str, np.ndarray], fmt: str) -> dict[str, bytes]:
    """Nodes as rows, one column per path, time first (or the JSON equivalent)."""
    if fmt == "csv":
        names = list(columns)
        rows = ([repr(float(t[i]))] + [repr(float(columns[n][i])) for n in names] for i in range(t.size))
        return {f"{stem}.csv": _csv_bytes(["t"] + names, rows)}
    obj = {"t": t.tolist(), "columns": {k: v.tolist() for k, v in columns.items()}}
    return {f"{stem}.json": _json_bytes(obj)}


def _run_fbm(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    ens = fbm_kernel_ensemble(cfg.H, Grid(cfg.N), cfg.n_paths, cfg.seed)
    cols = {f"path_{s}": ens.paths[k] for k, s in enumerate(ens.seeds)}
    return _paths_file("fbm_paths", ens.grid.nodes, cols, cfg.format), ens.seeds


def _run_solve(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    problem = PROBLEMS[cfg.problem](cfg.H)
    sol = solve_ensemble(problem, cfg.n_paths, cfg.seed, SolverConfig(Grid(cfg.N), tol=cfg.tol))
    ens = sol.ensemble
    cols = {f"path_{s}": ens.paths[k] for k, s in enumerate(ens.seeds)}
    files = _paths_file("solutions", ens.grid.nodes, cols, cfg.format)
    files["picard_diagnostics.json"] = _json_bytes(sol.diagnostics())
    return files, ens.seeds


def _run_malliavin(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    from .acceptance import malliavin_case

    grid = Grid(cfg.N)
    problem, xi = malliavin_case(cfg.H, cfg.case)
    bm = sample_brownian(grid, cfg.seed)
    rep = consistency_report(problem, bm, Direction.from_callable(grid, xi), SolverConfig(grid, tol=cfg.tol))
    paths = rep.pop("paths")
    files = _paths_file("derivatives", grid.nodes, {k: v.values for k, v in paths.items()}, cfg.format)
    files["consistency.json"] = _json_bytes(rep)
    return files, [cfg.seed]


def _run_verify_cov(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    if cfg.n_paths < 2:
        raise UsageError("verify-cov needs n_paths >= 2", "n_paths")
    grid = Grid(cfg.N)
    ens = fbm_kernel_ensemble(cfg.H, grid, cfg.n_paths, cfg.seed)
    cov, se = ensemble_covariance(ens)
    ref = covariance_matrix_rh(cfg.H, grid)
    allowed = 4.0 * se + 0.03 * np.abs(ref)
    t = grid.nodes
    idx = [(i, k) for i in range(1, t.size) for k in range(i, t.size)]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(cov - ref) / allowed
    summary = {
        "H": cfg.H,
        "n_paths": cfg.n_paths,
        "max_abs_error": float(np.max(np.abs(cov - ref))),
        "max_error_over_allowance": float(np.max(ratio[1:, 1:])),
        "allowance": "4 standard errors + 3% of |R_H|",
    }
    summary["within_allowance"] = summary["max_error_over_allowance"] <= 1.0
    if cfg.format == "csv":
        rows = ([i, k, repr(float(t[i])), repr(float(t[k])), repr(float(cov[i, k])),
                 repr(float(ref[i, k])), repr(float(se[i, k]))] for i, k in idx)
        table = {"covariance.csv": _csv_bytes(["i", "k", "s", "t", "empirical", "reference", "std_error"], rows)}
    else:
        table = {"covariance.json": _json_bytes({"t": t.tolist(), "empirical": cov.tolist(),
                                                 "reference": ref.tolist(), "std_error": se.tolist()})}
    return {**table, "covariance_summary.json": _json_bytes(summary)}, ens.seeds


def _run_holder(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    ens = fbm_kernel_ensemble(cfg.H, Grid(cfg.N), cfg.n_paths, cfg.seed)
    est = [estimate_holder_exponent(ens.path(k)) for k in range(len(ens))]
    summary = {"H": cfg.H, "N": cfg.N, "median": float(np.median(est)),
               "min": float(min(est)), "max": float(max(est))}
    if cfg.format == "csv":
        table = {"holder.csv": _csv_bytes(["path_seed", "estimate"],
                                          ([s, repr(float(e))] for s, e in zip(ens.seeds, est)))}
    else:
        table = {"holder.json": _json_bytes({str(s): e for s, e in zip(ens.seeds, est)})}
    return {**table, "holder_summary.json": _json_bytes(summary)}, ens.seeds


def _run_kernel_dump(cfg: RunConfig) -> tuple[dict[str, bytes], list[int]]:
    grid = Grid(cfg.N)
    files = {}
    for mode in ("deterministic", "stochastic"):
        w = build_kernel_matrix(FbmKernel(cfg.H), grid, mode).weights
        rows, cols = np.nonzero(np.tril(np.ones_like(w, dtype=bool), k=-1))
        if cfg.format == "csv":
            files[f"kernel_{mode}.csv"] = _csv_bytes(
                ["row", "col", "weight"],
                ([r, c, repr(float(w[r, c]))] for r, c in zip(rows.tolist(), cols.tolist())),
            )
        else:
            files[f"kernel_{mode}.json"] = _json_bytes({"H": cfg.H, "N": cfg.N, "weights": w.tolist()})
    return files, []


PIPELINES = {
    "fbm": _run_fbm,
    "solve": _run_solve,
    "malliavin": _run_malliavin,
    "verify-cov": _run_verify_cov,
    "holder": _run_holder,
    "kernel-dump": _run_kernel_dump,
}


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _manifest(cfg: RunConfig, files: dict[str, bytes], seeds: list[int], seconds: float, status: str) -> dict:
    return {
        "command": cfg.command,
        "config": asdict(cfg),
        "seeds": seeds,
        "files": {name: _sha256(data) for name, data in sorted(files.items())},
        "wall_clock_s": seconds,
        "version": __version__,
        "status": status,
    }


def _prepare_output(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output_path {path} is not writable: {exc}", "output_path") from exc
    return out


def _error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        rec["diagnostics"] = diag
    if isinstance(exc, PicardConvergenceError):
        rec["deltas"] = exc.deltas
    if isinstance(exc, UsageError) and exc.field:
        rec["field"] = exc.field
    return rec


def run(cfg: RunConfig, *, echo=print) -> int:
    """Execute the configured pipeline; returns the process exit status."""
    out = _prepare_output(cfg.output_path)
    t0 = time.perf_counter()
    try:
        if cfg.command == "acceptance":
            return _run_acceptance(cfg, out, t0, echo)
        files, seeds = PIPELINES[cfg.command](cfg)
    except UsageError:
        raise
    except (ConvergenceError, DomainError, FloatingPointError) as exc:
        record = _error_record(exc)
        (out / "error.json").write_bytes(_json_bytes(record))
        manifest = _manifest(cfg, {"error.json": _json_bytes(record)}, [], time.perf_counter() - t0, "error")
        (out / "manifest.json").write_bytes(_json_bytes(manifest))
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    for name, data in files.items():
        (out / name).write_bytes(data)
    manifest = _manifest(cfg, files, seeds, time.perf_counter() - t0, "ok")
    (out / "manifest.json").write_bytes(_json_bytes(manifest))
    echo(f"wrote {len(files)} file(s) to {out}")
    return 0


def _run_acceptance(cfg: RunConfig, out: Path, t0: float, echo) -> int:
    from .acceptance import run_suite

    results = run_suite(cfg.seed, out, echo=echo)
    summary = {"seed": cfg.seed, "all_passed": all(r.passed for r in results),
               "criteria": {str(r.number): r.passed for r in results}}
    (out / "acceptance.json").write_bytes(_json_bytes(summary))
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    manifest = _manifest(cfg, files, [cfg.seed], time.perf_counter() - t0, "ok")
    manifest["criterion_seconds"] = {str(r.number): r.seconds for r in results}
    (out / "manifest.json").write_bytes(_json_bytes(manifest))
    return 0 if summary["all_passed"] else 1


# -- argument parsing ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--H", type=float, dest="H")
    common.add_argument("--N", type=int, dest="N")
    common.add_argument("--n-paths", type=int, dest="n_paths")
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("-o", "--output-path", dest="output_path")
    common.add_argument("--format", choices=FORMATS)
    common.add_argument("--problem", choices=sorted(PROBLEMS), help="named problem for 'solve'")
    common.add_argument("--case", choices=MALLIAVIN_CASES, help="sigma type for 'malliavin'")

    parser = argparse.ArgumentParser(prog="svolterra", description="Stochastic Volterra equations with the fBm kernel.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fbm": "simulate fBm paths from the Volterra kernel",
        "solve": "solve a named equation by Picard iteration",
        "malliavin": "compare the three directional-derivative routes on one path",
        "verify-cov": "ensemble covariance against the fBm covariance",
        "holder": "Hölder exponent estimates of simulated paths",
        "kernel-dump": "write the kernel weight matrices",
        "acceptance": "run the acceptance suite",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k in FIELD_NAMES and v is not None}
    try:
        if args.config:
            cfg = load_config(args.config, flags)
        else:
            cfg = RunConfig(**flags)
        return run(cfg)
    except UsageError as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
