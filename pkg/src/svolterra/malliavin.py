"""Directional Malliavin derivatives of the discretized Volterra solution.

Three independent routes to ``Y_t = <grad X_t, xi>``:

* :func:`derivative_linear_solve` iterates the linear Volterra equation
  driven by ``int K(t,s) sigma(X_s) xi_s ds``;
* :func:`variation_series` + :func:`parameter_variation` build the resolvent
  kernel ``L = sum_n V_n`` and integrate it against ``sigma(X) xi / g``;
* :func:`cameron_martin_fd` shifts the Brownian path along ``h = int xi``
  and differences the solutions.

Directions are stored as densities ``xi`` (the derivative of the
Cameron-Martin shift ``h``), so pairings are plain L^2 time integrals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DomainError, PicardConvergenceError
from .fraccalc import Grid, GridFunction
from .kernel import FbmKernel, g_weight
from .simulate import BrownianPath
from .solver import SdeProblem, SolverConfig, _kernel_pair, default_r_exponent, picard_solve

__all__ = [
    "Direction",
    "VariationKernel",
    "cameron_martin_fd",
    "consistency_report",
    "derivative_linear_solve",
    "hypothesis_b_weights",
    "initial_variation_kernel",
    "lr_norm",
    "parameter_variation",
    "relative_sup_error",
    "variation_series",
]

DEFAULT_TERMS = 25
DEFAULT_SERIES_TOL = 1e-10
FD_EPS = 1e-4
# Picard tolerance used inside finite differences; tol / eps is the FD noise floor
FD_SOLVER_TOL = 1e-13


@dataclass(frozen=True)
class Direction:
    """Cameron-Martin direction given by its density ``xi = h'``."""

    xi: GridFunction

    @property
    def grid(self) -> Grid:
        return self.xi.grid

    @property
    def h(self) -> GridFunction:
        v = self.xi.values
        cells = v[:-1] * self.grid.dt
        return GridFunction(self.grid, np.concatenate(([0.0], np.cumsum(cells))))

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> Direction:
        return cls(GridFunction.from_callable(grid, fn))


def lr_norm(values: np.ndarray, r: float, cell: float) -> float:
    """Discrete ``L^r`` norm ``(sum |v|^r * cell)^(1/r)``."""
    return float((np.sum(np.abs(values) ** r) * cell) ** (1.0 / r))


def relative_sup_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max |a - b| / max |b|`` (absolute error if ``b`` vanishes)."""
    scale = float(np.max(np.abs(b)))
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    return err / scale if scale > 0 else err


def _coefficients_on_path(problem: SdeProblem, X: GridFunction):
    t = X.grid.nodes[:-1]
    x = X.values[:-1]
    shape = x.shape
    sig = np.broadcast_to(problem.sigma(t, x), shape).astype(float)
    db = np.broadcast_to(problem.db_dx(t, x), shape).astype(float)
    ds = np.broadcast_to(problem.dsigma_dx(t, x), shape).astype(float)
    return sig, db, ds


def _linear_operator(problem: SdeProblem, X: GridFunction, bm: BrownianPath) -> np.ndarray:
    """Matrix ``A[i, k] = W_det[i, k] b'(X_k) + W_sto[i, k] sigma'(X_k) dB_k`` (shape (N+1, N))."""
    w_det, w_sto = _kernel_pair(problem, X.grid)
    _, db, ds = _coefficients_on_path(problem, X)
    return w_det * db[None, :] + w_sto * (ds * bm.increments)[None, :]


def _check_inputs(X: GridFunction, bm: BrownianPath, d: Direction | None = None) -> None:
    if X.grid != bm.grid or (d is not None and d.grid != X.grid):
        raise DomainError("solution, Brownian path and direction must share a grid")


def derivative_linear_solve(
    problem: SdeProblem,
    X: GridFunction,
    bm: BrownianPath,
    d: Direction,
    cfg: SolverConfig,
) -> GridFunction:
    """Solve the linear equation for ``<grad X_t, xi>`` by Picard iteration.

    ``Y(t_i) = sum_j W_det[i,j] sigma(X_j) xi_j
              + sum_j W_det[i,j] b'(X_j) Y_j + sum_j W_sto[i,j] sigma'(X_j) Y_j dB_j``.
    ``sigma`` is expected to be bounded; that is the caller's responsibility.
    """
    _check_inputs(X, bm, d)
    w_det, _ = _kernel_pair(problem, X.grid)
    sig, _, _ = _coefficients_on_path(problem, X)
    source = w_det @ (sig * d.xi.values[:-1])
    A = _linear_operator(problem, X, bm)
    Y = np.zeros_like(source)
    deltas = []
    for _ in range(cfg.max_picard_iters):
        new = source + A @ Y[:-1]
        delta = float(np.max(np.abs(new - Y)))
        Y = new
        deltas.append(delta)
        if delta < cfg.tol:
            return GridFunction(X.grid, Y)
    raise PicardConvergenceError(
        "derivative equation did not converge", deltas, GridFunction(X.grid, Y)
    )


@dataclass(frozen=True, eq=False)
class VariationKernel:
    """Truncated series ``L = V_0 + V_1 + ...`` on the grid, with diagnostics.

    ``L[i, j]`` pairs node ``t_i`` with cell ``j``; ``tail_norm`` is the
    ``L^r`` norm of the last term added.
    """

    grid: Grid
    L: np.ndarray
    terms_used: int
    tail_norm: float
    tail_norms: list[float] = field(default_factory=list)
    psi: list[float] = field(default_factory=list)
    residual_norm: float = float("nan")
    telescoping_error: float = float("nan")

    def to_csv(self, path: str | Path) -> None:
        rows, cols = np.nonzero(self.L)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "value"])
            for r, c in zip(rows.tolist(), cols.tolist()):
                writer.writerow([r, c, repr(float(self.L[r, c]))])


def hypothesis_b_weights(problem: SdeProblem, grid: Grid) -> np.ndarray:
    """``g`` at the left node of every cell; cell 0 uses the clamped node ``dt/2``.

    ``g(s) = s^|H - 1/2|`` for the fBm kernel and ``g = 1`` otherwise.
    """
    s = grid.nodes[:-1].copy()
    s[0] = grid.dt / 2.0
    if isinstance(problem.kernel, FbmKernel):
        return np.asarray(g_weight(problem.kernel.H, s), float)
    return np.ones_like(s)


def initial_variation_kernel(problem: SdeProblem, grid: Grid) -> np.ndarray:
    """``V_0[i, j] = W_det[i, j] * g_j``."""
    w_det, _ = _kernel_pair(problem, grid)
    return w_det * hypothesis_b_weights(problem, grid)[None, :]


def variation_series(
    problem: SdeProblem,
    X: GridFunction,
    bm: BrownianPath,
    v0: np.ndarray,
    n_terms: int = DEFAULT_TERMS,
    *,
    tol: float = DEFAULT_SERIES_TOL,
    r: float | None = None,
) -> VariationKernel:
    """Accumulate ``L = sum_n V_n`` with ``V_{n+1} = A V_n``.

    ``A`` discretizes ``f -> int_s^t K(t,u) (b'(X_u) f(u) du + sigma'(X_u) f(u) dB_u)``.
    The loop stops after ``n_terms`` terms or when a term's ``L^r`` norm
    drops below ``tol``. Five consecutive increases of that norm raise
    :class:`ConvergenceError`.
    """
    _check_inputs(X, bm)
    grid = X.grid
    n = grid.n_steps
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.shape != (n + 1, n):
        raise DomainError(f"v0 must have shape {(n + 1, n)}")
    if not np.all(np.isfinite(v0)) or np.any(np.triu(v0[:n])):
        raise DomainError("v0 must be finite and strictly lower triangular")
    if r is None:
        r = default_r_exponent(problem.kernel)
    cell = grid.dt**2
    A = _linear_operator(problem, X, bm)

    term = v0
    L = v0.copy()
    norms = [lr_norm(term, r, cell)]
    psi = [float(np.sum(np.abs(term) ** r) * cell)]
    increases = 0
    used = 1
    while used < n_terms and norms[-1] >= tol:
        term = A @ term[:-1]
        if not np.any(term):
            # the series terminated exactly
            break
        L += term
        used += 1
        norms.append(lr_norm(term, r, cell))
        psi.append(float(np.sum(np.abs(term) ** r) * cell))
        increases = increases + 1 if norms[-1] > norms[-2] else 0
        if increases >= 5:
            raise ConvergenceError(
                "variation series diverging: tail norm grew five times in a row",
                {"tail_norms": norms},
            )
    # the partial sum solves L - V_0 = A L up to the next term
    next_term = A @ term[:-1]
    residual = L - v0 - A @ L[:-1]
    telescoping = float(np.max(np.abs(residual + next_term)))
    return VariationKernel(
        grid=grid,
        L=L,
        terms_used=used,
        tail_norm=norms[-1],
        tail_norms=norms,
        psi=psi,
        residual_norm=lr_norm(residual, r, cell),
        telescoping_error=telescoping,
    )


def parameter_variation(
    Lk: VariationKernel,
    problem: SdeProblem,
    X: GridFunction,
    d: Direction,
    H: float | None = None,
    *,
    r: float = 2.1,
) -> GridFunction:
    """``Y(t_i) = sum_j L[i, j] sigma(X_j) xi_j / g_j``.

    ``Lk`` must come from ``V_0 = W_det * g`` (see
    :func:`initial_variation_kernel`). ``H`` selects ``g = s^|H - 1/2|``;
    by default it is read off the problem's kernel.
    """
    grid = X.grid
    if Lk.grid != grid or d.grid != grid:
        raise DomainError("variation kernel, solution and direction must share a grid")
    if H is None:
        g = hypothesis_b_weights(problem, grid)
    else:
        s = grid.nodes[:-1].copy()
        s[0] = grid.dt / 2.0
        g = np.asarray(g_weight(H, s), float)
    ratio = d.xi.values[:-1] / g
    norm = lr_norm(ratio, r, grid.dt) if np.all(np.isfinite(ratio)) else np.inf
    if not np.isfinite(norm):
        raise DomainError("direction is not admissible: xi / g has no finite L^r norm")
    sig, _, _ = _coefficients_on_path(problem, X)
    return GridFunction(grid, Lk.L @ (sig * ratio))


def cameron_martin_fd(
    problem: SdeProblem,
    bm: BrownianPath,
    d: Direction,
    eps: float = FD_EPS,
    cfg: SolverConfig | None = None,
) -> GridFunction:
    """Central difference of the solution along the shift ``B -> B +- eps h``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if cfg is None:
        cfg = SolverConfig(bm.grid)
    cfg = replace(cfg, tol=min(cfg.tol, FD_SOLVER_TOL), max_picard_iters=max(cfg.max_picard_iters, 100))
    plus = picard_solve(problem, bm.shifted(d.xi.values, eps), cfg).path.values
    minus = picard_solve(problem, bm.shifted(d.xi.values, -eps), cfg).path.values
    return GridFunction(bm.grid, (plus - minus) / (2.0 * eps))


def consistency_report(
    problem: SdeProblem,
    bm: BrownianPath,
    d: Direction,
    cfg: SolverConfig,
    *,
    eps: float = FD_EPS,
    n_terms: int = DEFAULT_TERMS,
) -> dict:
    """Run all three routes on one path and report their pairwise errors."""
    X = picard_solve(problem, bm, cfg).path
    lin = derivative_linear_solve(problem, X, bm, d, cfg)
    v0 = initial_variation_kernel(problem, X.grid)
    r = cfg.r_for(problem.kernel)
    Lk = variation_series(problem, X, bm, v0, n_terms, r=r)
    pv = parameter_variation(Lk, problem, X, d, r=r)
    fd = cameron_martin_fd(problem, bm, d, eps, cfg)
    fd_half = cameron_martin_fd(problem, bm, d, eps / 2.0, cfg)
    return {
        "linear_vs_parameter_variation": relative_sup_error(pv.values, lin.values),
        "linear_vs_fd": relative_sup_error(fd.values, lin.values),
        "parameter_variation_vs_fd": relative_sup_error(fd.values, pv.values),
        "fd_half_eps_vs_linear": relative_sup_error(fd_half.values, lin.values),
        "series_terms": Lk.terms_used,
        "series_tail_norm": Lk.tail_norm,
        "series_tail_norms": Lk.tail_norms,
        "series_psi": Lk.psi,
        "series_residual_norm": Lk.residual_norm,
        "series_telescoping_error": Lk.telescoping_error,
        "paths": {"linear": lin, "parameter_variation": pv, "fd": fd},
    }


def report_json(report: dict, path: str | Path) -> None:
    data = {k: v for k, v in report.items() if k != "paths"}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
