"""Acceptance suite: closed-form and brute-force checks of the whole pipeline.

Each criterion returns a :class:`CriterionResult`. :func:`run_suite` runs
them in order, optionally writing artifacts to a directory. Artifact
contents depend only on the seed; wall-clock times go to the manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import tempfile
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fraccalc import Grid, GridFunction, duality_residual, estimate_holder_exponent
from .kernel import FbmKernel, IdentityKernel, build_kernel_matrix, kh_eval
from .malliavin import Direction, consistency_report
from .simulate import (
    PathEnsemble,
    covariance_matrix_rh,
    ensemble_covariance,
    fbm_cholesky_ensemble,
    fbm_kernel_ensemble,
    pooled_z_scores,
    sample_brownian,
    v_h,
)
from .solver import SdeProblem, SolverConfig, picard_solve, solve_ensemble
from .specialfn import hyp2f1, hyp2f1_series

__all__ = [
    "CriterionResult",
    "CRITERIA",
    "malliavin_case",
    "run_suite",
    "warmup",
]

CHOLESKY_SEED_OFFSET = 10**6


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict
    budget_s: float
    seconds: float = 0.0
    artifacts: dict[str, bytes] = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name} ({self.seconds:.1f}s / {self.budget_s:.0f}s)"

    def record(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed, "metrics": self.metrics}


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def warmup() -> None:
    """Compile the numba kernels so that criterion timings exclude JIT cost."""
    hyp2f1(0.25, -0.25, 0.75, np.array([-3.0, 0.2, 0.7, 0.97]))
    hyp2f1_series(1.0, 1.0, 2.0, -0.3)
    for H in (0.3, 0.7):
        build_kernel_matrix(FbmKernel(H), Grid(8), "deterministic")
        build_kernel_matrix(FbmKernel(H), Grid(8), "stochastic")
    kh_eval(0.3, np.array([0.5]), np.array([0.25]))


def criterion_1(seed: int) -> CriterionResult:
    rng = np.random.default_rng(seed)
    a = rng.uniform(1e-6, 1.0, 10_000)
    b = rng.uniform(1e-6, 1.0, 10_000)
    s, t = np.minimum(a, b), np.maximum(a, b)
    keep = s < t
    vals = kh_eval(0.5, t[keep], s[keep])
    point_err = float(np.max(np.abs(vals - 1.0)))
    grid = Grid(256)
    mat_err = 0.0
    for mode in ("deterministic", "stochastic"):
        w_f = build_kernel_matrix(FbmKernel(0.5), grid, mode).weights
        w_i = build_kernel_matrix(IdentityKernel(), grid, mode).weights
        mat_err = max(mat_err, float(np.max(np.abs(w_f - w_i))))
    ok = point_err <= 1e-10 and mat_err <= 1e-10
    return CriterionResult(1, "kernel degeneracy at H=1/2", ok,
                           {"max_point_error": point_err, "max_matrix_error": mat_err}, 1.0)


def criterion_2(seed: int) -> CriterionResult:
    z = np.linspace(-50.0, 0.0, 201)[:-1]
    exact = -np.log1p(-z) / z
    got = hyp2f1(1.0, 1.0, 2.0, z)
    log_err = float(np.max(np.abs(got - exact) / np.abs(exact)))
    w = np.linspace(-0.5, 0.0, 102)[1:-1]
    worst = 0.0
    for a, b, c in [(1.0, 1.0, 2.0), (0.25, -0.25, 0.75), (-0.25, 0.25, 1.25), (0.7, 1.3, 2.9)]:
        pf = hyp2f1(a, b, c, w)
        se = hyp2f1_series(a, b, c, w)
        worst = max(worst, float(np.max(np.abs(pf - se) / np.abs(se))))
    ok = log_err <= 1e-10 and worst <= 1e-10
    return CriterionResult(2, "hypergeometric accuracy", ok,
                           {"max_rel_error_log": log_err, "max_rel_pfaff_vs_series": worst}, 1.0)


def criterion_3(seed: int) -> CriterionResult:
    grid = Grid(64)
    n = 20_000
    metrics: dict = {}
    ok = True
    for H in (0.25, 0.75):
        ens = fbm_kernel_ensemble(H, grid, n, seed)
        cov, se = ensemble_covariance(ens)
        ref = covariance_matrix_rh(H, grid)
        allowed = 4.0 * se + 0.03 * np.abs(ref)
        ratio = float(np.max(np.abs(cov - ref)[1:, 1:] / allowed[1:, 1:]))
        chol_seeds = [seed + CHOLESKY_SEED_OFFSET + k for k in range(n)]
        chol = PathEnsemble(grid, fbm_cholesky_ensemble(H, grid, chol_seeds), chol_seeds)
        cov_c, se_c = ensemble_covariance(chol)
        z = float(np.max(pooled_z_scores(cov, se, cov_c, se_c)))
        metrics[f"H={H}"] = {"max_error_over_allowance": ratio, "max_pooled_z_vs_cholesky": z}
        ok = ok and ratio <= 1.0 and z <= 5.0
    return CriterionResult(3, "fBm covariance law", ok, metrics, 120.0)


def criterion_4(seed: int) -> CriterionResult:
    grid = Grid(256)
    metrics: dict = {"v_h(0.5)": v_h(0.5)}
    ok = v_h(0.5) == 1.0
    for H in (0.25, 0.5, 0.75):
        ens = fbm_kernel_ensemble(H, grid, 20_000, seed)
        var = float(np.var(ens.paths[:, -1], ddof=1))
        rel = abs(var / v_h(H) - 1.0)
        metrics[f"H={H}"] = {"variance_t1": var, "v_h": v_h(H), "relative_error": rel}
        ok = ok and rel <= 0.03
    return CriterionResult(4, "variance constant V_H", ok, metrics, 60.0)


def criterion_5(seed: int) -> CriterionResult:
    grid = Grid(2**14)
    metrics: dict = {}
    ok = True
    lines = ["H,path_seed,estimate"]
    for H in (0.25, 0.5, 0.75):
        ens = fbm_kernel_ensemble(H, grid, 50, seed)
        est = [estimate_holder_exponent(ens.path(k)) for k in range(len(ens))]
        lines += [f"{H!r},{s},{e!r}" for s, e in zip(ens.seeds, est)]
        med = float(np.median(est))
        metrics[f"H={H}"] = {"median": med, "min": float(min(est)), "max": float(max(est))}
        ok = ok and abs(med - H) <= 0.10
    res = CriterionResult(5, "path regularity (Hölder exponent)", ok, metrics, 120.0)
    res.artifacts["holder_estimates.csv"] = ("\n".join(lines) + "\n").encode()
    return res


def _picard_test_problem() -> SdeProblem:
    return SdeProblem(
        x0=1.0,
        b=lambda t, x: -x,
        sigma=lambda t, x: 0.5 / np.sqrt(1.0 + x * x),
        kernel=FbmKernel(0.75),
        db_dx=lambda t, x: -np.ones_like(x),
        dsigma_dx=lambda t, x: -0.5 * x / (1.0 + x * x) ** 1.5,
    )


def criterion_6(seed: int) -> CriterionResult:
    cfg = SolverConfig(Grid(2**10), tol=1e-8, max_picard_iters=30)
    sol = solve_ensemble(_picard_test_problem(), 100, seed, cfg)
    ratios_ok = True
    worst_tail = 0.0
    for d in sol.deltas:
        r = np.array(d[1:]) / np.array(d[:-1])
        tail = r[-3:] if r.size >= 3 else r
        worst_tail = max(worst_tail, float(np.max(tail)))
        ratios_ok = ratios_ok and bool(np.all(tail < 1.0))
    ok = bool(sol.iters.max() <= 30) and ratios_ok
    metrics = {
        "max_iters": int(sol.iters.max()),
        "mean_iters": float(sol.iters.mean()),
        "worst_last3_delta_ratio": worst_tail,
    }
    res = CriterionResult(6, "Picard convergence", ok, metrics, 60.0)
    res.artifacts["picard_diagnostics.json"] = _json_bytes(sol.diagnostics())
    return res


def criterion_7(seed: int) -> CriterionResult:
    problem = SdeProblem(1.0, lambda t, x: x, lambda t, x: np.zeros_like(x), IdentityKernel())
    errors = {}
    for k in (10, 11, 12):
        grid = Grid(2**k)
        bm = sample_brownian(grid, seed)
        cfg = SolverConfig(grid, tol=1e-12, max_picard_iters=200)
        x1 = picard_solve(problem, bm, cfg).path.values[-1]
        errors[2**k] = float(x1 - math.e)
    vals = list(errors.values())
    rates = [vals[i] / vals[i + 1] for i in range(len(vals) - 1)]
    ok = abs(vals[-1]) <= 1e-2 and all(1.8 <= r <= 2.2 for r in rates)
    metrics = {"errors": {str(k): v for k, v in errors.items()}, "halving_ratios": rates}
    return CriterionResult(7, "ODE degeneration and first-order rate", ok, metrics, 5.0)


def criterion_8(seed: int) -> CriterionResult:
    # rounding slack for the pair whose discrete residual is zero up to round-off
    slack = 1e-15
    pairs = {
        "f=t,g=1-t,alpha=0.5": (lambda t: t, lambda t: 1.0 - t, 0.5),
        "f=cos(3t),g=exp(t),alpha=0.5": (lambda t: np.cos(3.0 * t), np.exp, 0.5),
    }
    metrics = {}
    ok = True
    for name, (f, g, alpha) in pairs.items():
        res = []
        for k in range(8, 13):
            grid = Grid(2**k)
            res.append(duality_residual(GridFunction.from_callable(grid, f),
                                        GridFunction.from_callable(grid, g), alpha))
        mono = all(res[i + 1] <= res[i] + slack for i in range(len(res) - 1))
        metrics[name] = {"residuals": res, "monotone": mono}
        ok = ok and mono and res[-1] <= 1e-3
    return CriterionResult(8, "fractional duality identity", ok, metrics, 5.0)


def malliavin_case(H: float, kind: str) -> tuple[SdeProblem, Callable[[np.ndarray], np.ndarray]]:
    """Problem and direction density for one cell of the oracle test matrix."""
    b = lambda t, x: np.sin(x) - x  # noqa: E731
    db = lambda t, x: np.cos(x) - 1.0  # noqa: E731
    if kind == "additive":
        sigma = lambda t, x: np.full_like(x, 0.8)  # noqa: E731
        dsigma = lambda t, x: np.zeros_like(x)  # noqa: E731
    elif kind == "multiplicative":
        sigma = lambda t, x: 0.5 / np.sqrt(1.0 + x * x)  # noqa: E731
        dsigma = lambda t, x: -0.5 * x / (1.0 + x * x) ** 1.5  # noqa: E731
    else:
        raise ValueError(f"unknown case {kind!r}")
    problem = SdeProblem(0.5, b, sigma, FbmKernel(H), db_dx=db, dsigma_dx=dsigma)
    return problem, lambda t: 1.0 + np.sin(2.0 * np.pi * t)


def criterion_9(seed: int) -> CriterionResult:
    grid = Grid(2**10)
    bm = sample_brownian(grid, seed)
    cfg = SolverConfig(grid)
    metrics = {}
    ok = True
    for H in (0.5, 0.75):
        for kind in ("additive", "multiplicative"):
            problem, xi = malliavin_case(H, kind)
            rep = consistency_report(problem, bm, Direction.from_callable(grid, xi), cfg, eps=1e-4)
            pair = max(rep["linear_vs_parameter_variation"], rep["linear_vs_fd"],
                       rep["parameter_variation_vs_fd"])
            norms = rep["series_tail_norms"]
            decreasing = all(norms[i + 1] < norms[i] for i in range(3, len(norms) - 1))
            resid_ok = rep["series_residual_norm"] <= rep["series_tail_norm"] + 1e-10
            metrics[f"H={H},{kind}"] = {
                "max_pairwise_rel_sup_error": pair,
                "tail_norms_decreasing_after_3": decreasing,
                "residual_norm": rep["series_residual_norm"],
                "tail_norm": rep["series_tail_norm"],
                "telescoping_error": rep["series_telescoping_error"],
            }
            ok = ok and pair <= 0.01 and decreasing and resid_ok and rep["series_telescoping_error"] <= 1e-10
    return CriterionResult(9, "Malliavin oracle triangle", ok, metrics, 120.0)


CRITERIA: list[Callable[[int], CriterionResult]] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9,
]


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _run_criteria(seed: int, echo: Callable[[str], None] | None) -> list[CriterionResult]:
    results = []
    for fn in CRITERIA:
        t0 = time.perf_counter()
        try:
            res = fn(seed)
        except (ArithmeticError, ValueError) as exc:
            number = int(fn.__name__.rsplit("_", 1)[1])
            res = CriterionResult(number, fn.__name__, False,
                                  {"error": type(exc).__name__, "message": str(exc)}, float("nan"))
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results


def _artifacts(results: list[CriterionResult]) -> dict[str, bytes]:
    files = {"results.json": _json_bytes([r.record() for r in results])}
    for r in results:
        files.update(r.artifacts)
    return files


def _write(files: dict[str, bytes], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (out_dir / name).write_bytes(data)


def run_suite(
    seed: int = 0,
    out_dir: str | Path | None = None,
    *,
    check_reproducibility: bool = True,
    echo: Callable[[str], None] | None = None,
) -> list[CriterionResult]:
    """Run criteria 1-9, then (optionally) criterion 10 by re-running them.

    With ``out_dir`` the artifacts are written there; criterion 10 writes
    its second run to a temporary directory and compares the bytes.
    """
    warmup()
    t_start = time.perf_counter()
    results = _run_criteria(seed, echo)
    files = _artifacts(results)
    if out_dir is not None:
        _write(files, Path(out_dir))
    if check_reproducibility:
        second = _run_criteria(seed, None)
        with tempfile.TemporaryDirectory() as tmp:
            _write(_artifacts(second), Path(tmp))
            again = {p.name: p.read_bytes() for p in Path(tmp).iterdir()}
        mismatched = sorted(n for n in files if _sha256(files[n]) != _sha256(again.get(n, b"")))
        total = time.perf_counter() - t_start
        res = CriterionResult(
            10, "reproducibility and total runtime", not mismatched and total < 600.0,
            {"files_compared": sorted(files), "mismatched": mismatched}, 600.0,
        )
        # for this criterion the time reported is the whole suite, both runs
        res.seconds = total
        results.append(res)
        if echo is not None:
            echo(res.line())
        if out_dir is not None:
            (Path(out_dir) / "reproducibility.json").write_bytes(_json_bytes(res.record()))
    return results
