"""Discretized Picard iteration for the stochastic Volterra equation

    X_t = x + int_0^t K(t,s) b(s, X_s) ds + int_0^t K(t,s) sigma(s, X_s) dB_s.

Coefficients are evaluated at left cell endpoints with the previous
iterate, so ``X(t_i)`` only ever sees ``dB_0 .. dB_{i-1}``. Paths are
iterated in batches: column ``k`` of the work array is path ``k`` and a
path stops updating once its own sup-norm delta falls below ``tol``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, PicardConvergenceError
from .fraccalc import Grid, GridFunction
from .kernel import FbmKernel, KernelSpec, build_kernel_matrix
from .simulate import BrownianPath, PathEnsemble, brownian_increments

__all__ = [
    "EnsembleSolution",
    "PicardResult",
    "SdeProblem",
    "SensitivityTable",
    "SolverConfig",
    "default_r_exponent",
    "initial_condition_sensitivity",
    "picard_solve",
    "solve_ensemble",
]

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _zero(t, x):
    return np.zeros(np.broadcast(t, x).shape)


@dataclass(frozen=True)
class SdeProblem:
    """Data of the equation: initial value, coefficients, their x-derivatives, kernel.

    Coefficients take ``(t, x)`` arrays and must broadcast. They are assumed
    Lipschitz in ``x`` with constant ``lipschitz_hint``; nothing checks it.
    """

    x0: float
    b: Coefficient
    sigma: Coefficient
    kernel: KernelSpec
    db_dx: Coefficient = _zero
    dsigma_dx: Coefficient = _zero
    lipschitz_hint: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.x0):
            raise DomainError("x0 must be finite")
        if not self.lipschitz_hint > 0:
            raise DomainError("lipschitz_hint must be positive")

    def with_x0(self, x0: float) -> SdeProblem:
        return SdeProblem(
            x0, self.b, self.sigma, self.kernel, self.db_dx, self.dsigma_dx, self.lipschitz_hint
        )


def default_r_exponent(kernel: KernelSpec) -> float:
    if isinstance(kernel, FbmKernel):
        return max(2.0, 1.0 / kernel.H) + 0.1
    return 2.1


@dataclass(frozen=True)
class SolverConfig:
    grid: Grid
    tol: float = 1e-8
    max_picard_iters: int = 50
    r_exponent: float | None = None

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_picard_iters < 1:
            raise DomainError("max_picard_iters must be >= 1")
        if self.r_exponent is not None and not self.r_exponent > 2:
            raise DomainError("r_exponent must exceed 2")

    def r_for(self, kernel: KernelSpec) -> float:
        return self.r_exponent if self.r_exponent is not None else default_r_exponent(kernel)


@dataclass
class PicardResult:
    path: GridFunction
    iters: int
    final_delta: float
    deltas: list[float] = field(default_factory=list)


def _kernel_pair(problem: SdeProblem, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    w_det = build_kernel_matrix(problem.kernel, grid, "deterministic").weights
    w_sto = build_kernel_matrix(problem.kernel, grid, "stochastic").weights
    return w_det, w_sto


def _picard_batch(
    problem: SdeProblem,
    increments: np.ndarray,
    cfg: SolverConfig,
) -> tuple[np.ndarray, np.ndarray, list[list[float]], np.ndarray]:
    """Iterate all paths of ``increments`` (shape (P, N)).

    Returns paths (P, N+1), iteration counts, per-path delta histories and
    a convergence mask.
    """
    grid = cfg.grid
    w_det, w_sto = _kernel_pair(problem, grid)
    t_left = grid.nodes[:-1]
    n_paths = increments.shape[0]
    X = np.full((n_paths, grid.n_steps + 1), float(problem.x0))
    iters = np.zeros(n_paths, dtype=int)
    deltas: list[list[float]] = [[] for _ in range(n_paths)]
    active = np.arange(n_paths)
    for it in range(1, cfg.max_picard_iters + 1):
        xa = X[active, :-1]
        drift = np.broadcast_to(problem.b(t_left, xa), xa.shape)
        noise = np.broadcast_to(problem.sigma(t_left, xa), xa.shape) * increments[active]
        new = np.empty((active.size, grid.n_steps + 1))
        new[:] = problem.x0
        new += drift @ w_det.T
        new += noise @ w_sto.T
        delta = np.max(np.abs(new - X[active]), axis=1)
        X[active] = new
        iters[active] = it
        for k, d in zip(active.tolist(), delta.tolist()):
            deltas[k].append(d)
        if not np.all(np.isfinite(delta)):
            break
        active = active[delta >= cfg.tol]
        if active.size == 0:
            break
    converged = np.ones(n_paths, dtype=bool)
    converged[active] = False
    return X, iters, deltas, converged


def picard_solve(problem: SdeProblem, bm: BrownianPath, cfg: SolverConfig) -> PicardResult:
    """Solve one path by Picard iteration from ``X^0 = x0``.

    Stops when ``max_i |X^n(t_i) - X^{n-1}(t_i)| < tol``. Raises
    :class:`PicardConvergenceError` (carrying the last iterate) if the cap
    is reached first.
    """
    if bm.grid != cfg.grid:
        raise DomainError("Brownian path and solver grid differ")
    X, iters, deltas, ok = _picard_batch(problem, bm.increments[None, :], cfg)
    result = PicardResult(GridFunction(cfg.grid, X[0]) if np.all(np.isfinite(X[0])) else None,
                          int(iters[0]), deltas[0][-1], deltas[0])
    if not ok[0]:
        raise PicardConvergenceError(
            f"Picard iteration did not reach tol={cfg.tol} in {cfg.max_picard_iters} iterations",
            deltas[0],
            result,
        )
    return result


@dataclass
class EnsembleSolution:
    ensemble: PathEnsemble
    iters: np.ndarray
    final_deltas: np.ndarray
    deltas: list[list[float]]

    def diagnostics(self) -> dict:
        return {
            "seeds": self.ensemble.seeds,
            "iters": self.iters.tolist(),
            "final_deltas": self.final_deltas.tolist(),
            "deltas": self.deltas,
            "iters_max": int(self.iters.max()),
            "iters_mean": float(self.iters.mean()),
        }

    def diagnostics_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics(), sort_keys=True) + "\n", encoding="utf-8")


def solve_ensemble(
    problem: SdeProblem, n_paths: int, base_seed: int, cfg: SolverConfig
) -> EnsembleSolution:
    """Solve ``n_paths`` independent paths with seeds ``base_seed + k``."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    seeds = [base_seed + k for k in range(n_paths)]
    inc = np.stack([brownian_increments(cfg.grid, s) for s in seeds])
    X, iters, deltas, ok = _picard_batch(problem, inc, cfg)
    final = np.array([d[-1] for d in deltas])
    ens = PathEnsemble(cfg.grid, X, seeds, label="picard-solutions")
    sol = EnsembleSolution(ens, iters, final, deltas)
    if not np.all(ok):
        failing = [seeds[k] for k in np.flatnonzero(~ok)]
        raise PicardConvergenceError(
            f"{len(failing)} path(s) did not converge; seeds {failing[:10]}",
            [d[-1] for d in deltas],
            sol,
        )
    return sol


@dataclass
class SensitivityTable:
    x_values: list[float]
    paths: np.ndarray
    distances: np.ndarray


def initial_condition_sensitivity(
    problem: SdeProblem, x_values: Sequence[float], bm: BrownianPath, cfg: SolverConfig
) -> SensitivityTable:
    """Solve from each initial value with one Brownian path; pairwise sup-distances."""
    if len(x_values) < 2:
        raise DomainError("need at least two initial values")
    paths = np.stack([picard_solve(problem.with_x0(x), bm, cfg).path.values for x in x_values])
    dist = np.max(np.abs(paths[:, None, :] - paths[None, :, :]), axis=2)
    return SensitivityTable([float(x) for x in x_values], paths, dist)
