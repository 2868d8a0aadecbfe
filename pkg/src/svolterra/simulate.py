"""Brownian and fractional Brownian paths, stochastic convolutions, ensembles.

Every path owns a generator seeded with its own integer seed; ensembles
use ``base_seed + k`` for path ``k``. Nothing draws from ambient entropy.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConvergenceError, DomainError
from .fraccalc import Grid, GridFunction
from .kernel import FbmKernel, KernelMatrix, build_kernel_matrix, iter_kernel_rows

__all__ = [
    "BrownianPath",
    "DENSE_LIMIT",
    "PathEnsemble",
    "brownian_increments",
    "covariance_matrix_rh",
    "covariance_rh",
    "ensemble_covariance",
    "fbm_cholesky",
    "fbm_cholesky_ensemble",
    "fbm_from_kernel",
    "fbm_kernel_ensemble",
    "pooled_z_scores",
    "sample_brownian",
    "stochastic_convolution",
    "v_h",
]

# grids above this many steps stream kernel rows instead of caching the matrix
DENSE_LIMIT = 4096
CHOLESKY_JITTER = 1e-12


@dataclass(frozen=True, eq=False)
class BrownianPath:
    grid: Grid
    increments: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        inc = np.array(self.increments, dtype=np.float64)
        if inc.shape != (self.grid.n_steps,):
            raise DomainError(f"expected {self.grid.n_steps} increments, got shape {inc.shape}")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def values(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    def as_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def shifted(self, density: np.ndarray, eps: float) -> BrownianPath:
        """Path shifted by ``eps * h`` with ``h' = density`` (left-point rule per cell)."""
        shift = eps * np.asarray(density, float)[:-1] * self.grid.dt
        return BrownianPath(self.grid, self.increments + shift, self.seed)


def brownian_increments(grid: Grid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(grid.n_steps) * math.sqrt(grid.dt)


def sample_brownian(grid: Grid, seed: int) -> BrownianPath:
    """Brownian increments ``N(0, dt)`` from a generator seeded with ``seed``."""
    return BrownianPath(grid, brownian_increments(grid, seed), int(seed))


def _increment_matrix(grid: Grid, seeds: Sequence[int]) -> np.ndarray:
    return np.stack([brownian_increments(grid, s) for s in seeds])


def v_h(H: float) -> float:
    """Variance of the fBm at time 1 under this kernel normalisation."""
    H = float(H)
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {H}")
    if H == 0.5:
        return 1.0
    return math.gamma(2.0 - 2.0 * H) * math.cos(math.pi * H) / (math.pi * H * (1.0 - 2.0 * H))


def covariance_rh(H: float, s, t):
    """fBm covariance ``(V_H / 2)(s^2H + t^2H - |t - s|^2H)``."""
    s_arr, t_arr = np.asarray(s, float), np.asarray(t, float)
    two_h = 2.0 * H
    out = 0.5 * v_h(H) * (s_arr**two_h + t_arr**two_h - np.abs(t_arr - s_arr) ** two_h)
    # exact zero at the origin rather than a rounding residue
    out = np.where((s_arr == 0) | (t_arr == 0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def covariance_matrix_rh(H: float, grid: Grid) -> np.ndarray:
    t = grid.nodes
    return covariance_rh(H, t[:, None], t[None, :])


# -- kernel-based fBm -------------------------------------------------------------


def _kernel_apply(kmat_or_spec, grid: Grid, cell_values: np.ndarray) -> np.ndarray:
    """``cell_values @ W.T`` for a stochastic-mode kernel, streaming large grids."""
    if isinstance(kmat_or_spec, KernelMatrix):
        return kmat_or_spec.apply(cell_values)
    spec = kmat_or_spec
    if grid.n_steps <= DENSE_LIMIT:
        return build_kernel_matrix(spec, grid, "stochastic").apply(cell_values)
    out = np.empty(cell_values.shape[:-1] + (grid.n_steps + 1,))
    for start, rows in iter_kernel_rows(spec, grid, "stochastic"):
        out[..., start : start + rows.shape[0]] = cell_values @ rows.T
    return out


def fbm_from_kernel(H: float, bm: BrownianPath) -> GridFunction:
    """fBm through its Volterra representation: ``W(t_i) = sum_j W[i, j] dB_j``."""
    values = _kernel_apply(FbmKernel(H), bm.grid, bm.increments[None, :])[0]
    return GridFunction(bm.grid, values)


def stochastic_convolution(kmat: KernelMatrix, u: GridFunction, bm: BrownianPath) -> GridFunction:
    """Itô sum ``M(t_i) = sum_{j<i} W[i, j] u(t_j) dB_j`` (left-point integrand)."""
    if kmat.mode != "stochastic":
        raise DomainError("stochastic_convolution needs a stochastic-mode kernel matrix")
    if not (kmat.grid == u.grid == bm.grid):
        raise DomainError("kernel, integrand and Brownian path must share a grid")
    return GridFunction(bm.grid, kmat.apply(u.values[:-1] * bm.increments))


# -- Cholesky oracle ----------------------------------------------------------------


@lru_cache(maxsize=8)
def _cholesky_factor(H: float, grid: Grid) -> tuple[np.ndarray, float]:
    t = grid.nodes[1:]
    cov = covariance_rh(H, t[:, None], t[None, :])
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = CHOLESKY_JITTER * float(np.max(np.diag(cov)))
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(t.size)), jitter
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            "fBm covariance is not positive definite even with jitter",
            {"H": H, "n_steps": grid.n_steps, "jitter": jitter},
        ) from exc


def fbm_cholesky_ensemble(H: float, grid: Grid, seeds: Sequence[int]) -> np.ndarray:
    """Exact-law fBm samples, one row per seed, via the covariance factor."""
    factor, _ = _cholesky_factor(float(H), grid)
    out = np.zeros((len(seeds), grid.n_steps + 1))
    for k, seed in enumerate(seeds):
        z = np.random.default_rng(seed).standard_normal(grid.n_steps)
        out[k, 1:] = factor @ z
    return out


def fbm_cholesky(H: float, grid: Grid, seed: int) -> GridFunction:
    return GridFunction(grid, fbm_cholesky_ensemble(H, grid, [seed])[0])


# -- ensembles ------------------------------------------------------------------------


@dataclass(eq=False)
class PathEnsemble:
    """Paths on a shared grid, one row per path."""

    grid: Grid
    paths: np.ndarray
    seeds: list[int]
    label: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.paths = np.atleast_2d(np.asarray(self.paths, dtype=np.float64))
        if self.paths.shape[1] != self.grid.n_steps + 1:
            raise DomainError("every path must have one value per grid node")
        if self.paths.shape[0] < 1 or self.paths.shape[0] != len(self.seeds):
            raise DomainError("need at least one path and one seed per path")
        self.seeds = [int(s) for s in self.seeds]

    def __len__(self) -> int:
        return self.paths.shape[0]

    def path(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.paths[k])

    def to_csv(self, path: str | Path) -> None:
        """Nodes as rows, paths as columns, time first."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"path_{s}" for s in self.seeds])
            for i, t in enumerate(self.grid.nodes):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.paths[:, i]])

    def to_json(self, path: str | Path, **extra: Any) -> None:
        meta = {
            "label": self.label,
            "n_paths": len(self),
            "n_steps": self.grid.n_steps,
            "horizon": self.grid.horizon,
            "seeds": self.seeds,
            **self.metadata,
            **extra,
        }
        Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def fbm_kernel_ensemble(H: float, grid: Grid, n_paths: int, base_seed: int = 0) -> PathEnsemble:
    """Kernel-simulated fBm paths with seeds ``base_seed + k``."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    seeds = [base_seed + k for k in range(n_paths)]
    inc = _increment_matrix(grid, seeds)
    paths = _kernel_apply(FbmKernel(H), grid, inc)
    return PathEnsemble(grid, paths, seeds, label=f"fbm-kernel H={H}", metadata={"H": H})


def ensemble_covariance(ens: PathEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample covariance at all node pairs and its standard errors.

    The standard error of entry ``(i, k)`` is the standard deviation of the
    centred products divided by ``sqrt(n)``.
    """
    n = len(ens)
    if n < 2:
        raise DomainError("ensemble_covariance needs at least two paths")
    x = ens.paths - ens.paths.mean(axis=0)
    cov = x.T @ x / (n - 1)
    second = (x**2).T @ (x**2) / n
    mean_prod = x.T @ x / n
    var_prod = np.maximum(second - mean_prod**2, 0.0) * n / (n - 1)
    return cov, np.sqrt(var_prod / n)


def pooled_z_scores(a: np.ndarray, se_a: np.ndarray, b: np.ndarray, se_b: np.ndarray) -> np.ndarray:
    """``|a - b| / sqrt(se_a^2 + se_b^2)``, with 0/0 read as 0."""
    pooled = np.sqrt(se_a**2 + se_b**2)
    diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(pooled > 0, diff / np.where(pooled > 0, pooled, 1.0), np.where(diff > 0, np.inf, 0.0))
    return z
