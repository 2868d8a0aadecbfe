"""Gamma, Pochhammer and the Gauss hypergeometric function on the real line.

The hypergeometric evaluator only covers real ``z < 1``, which is all the
fBm kernel needs (its argument ``1 - t/s`` is never positive). Evaluation
strategy:

* ``0 <= z <= 0.5``: the defining power series.
* ``0.5 < z < 1``: the ``z -> 1 - z`` connection formula when ``c - a - b``
  is not an integer, otherwise the power series up to the term cap.
* ``z < 0``: the Pfaff transformation maps the argument into ``[0, 1)``.

The numerical core is compiled with numba so that the kernel module can
evaluate it for every cell of a large grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConvergenceError, DomainError

__all__ = [
    "HypergeometricParams",
    "MAX_TERMS",
    "gamma_fn",
    "hyp2f1",
    "hyp2f1_series",
    "pochhammer",
]

MAX_TERMS = 10_000
REL_STOP = 1e-16
# |c - a - b - round(c - a - b)| below this counts as integer: the connection
# formula loses precision there and is not used.
_INTEGER_GAP = 1e-5
_EQUAL_TOL = 1e-13

# plan layout (float64 vector); see _make_plan
_P_A, _P_B, _P_C = 0, 1, 2
_P_KIND = 3
_P_D1, _P_OK1, _P_A1, _P_B1 = 4, 5, 6, 7
_P_B2, _P_D2, _P_OK2, _P_A2, _P_B2C = 8, 9, 10, 11, 12
_PLAN_LEN = 13

_KIND_GENERAL = 0.0
_KIND_POLY = 1.0
_KIND_A_EQ_C = 2.0
_KIND_B_EQ_C = 3.0


def gamma_fn(x: float) -> float:
    """Gamma function for real ``x`` away from the poles."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise DomainError(f"gamma_fn has a pole at x={x}")
    return math.gamma(x)


def pochhammer(a: float, k: int) -> float:
    """Rising factorial ``a (a+1) ... (a+k-1)``, with ``(a)_0 = 1``.

    Computed as a running product so that ``(0)_k`` and friends are exactly
    zero instead of a ratio of huge gammas.
    """
    if int(k) != k or k < 0:
        raise DomainError(f"pochhammer needs an integer k >= 0, got {k!r}")
    out = 1.0
    for i in range(int(k)):
        out *= a + i
    return out


@numba.njit(cache=True)
def _is_nonpos_int(x):
    return x <= 0.0 and x == math.floor(x)


@numba.njit(cache=True)
def _rgamma(x):
    if _is_nonpos_int(x):
        return 0.0
    return 1.0 / math.gamma(x)


@numba.njit(cache=True)
def _series(a, b, c, z, max_terms):
    """Partial sums of the power series; returns (value, terms, converged)."""
    total = 1.0
    term = 1.0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        if term == 0.0 or abs(term) <= REL_STOP * abs(total):
            return total, k + 1, True
    return total, max_terms, False


@numba.njit(cache=True)
def _small_arg(a, b, c, x, max_terms):
    """F(a, b; c; x) for 0 <= x <= 0.5 with the cheap closed forms first."""
    if x == 0.0:
        return 1.0, True
    if abs(a - c) <= _EQUAL_TOL * max(1.0, abs(c)):
        return (1.0 - x) ** (-b), True
    if abs(b - c) <= _EQUAL_TOL * max(1.0, abs(c)):
        return (1.0 - x) ** (-a), True
    val, _, ok = _series(a, b, c, x, max_terms)
    return val, ok


@numba.njit(cache=True)
def _connection_coeffs(a, b, c):
    d = c - a - b
    if abs(d - round(d)) <= _INTEGER_GAP:
        return d, 0.0, 0.0, 0.0
    gc = math.gamma(c)
    coef1 = gc * math.gamma(d) * _rgamma(c - a) * _rgamma(c - b)
    coef2 = gc * math.gamma(-d) * _rgamma(a) * _rgamma(b)
    return d, 1.0, coef1, coef2


@numba.njit(cache=True)
def _make_plan(a, b, c):
    plan = np.zeros(_PLAN_LEN)
    plan[_P_A] = a
    plan[_P_B] = b
    plan[_P_C] = c
    if _is_nonpos_int(a) or _is_nonpos_int(b):
        plan[_P_KIND] = _KIND_POLY
    elif abs(a - c) <= _EQUAL_TOL * max(1.0, abs(c)):
        plan[_P_KIND] = _KIND_A_EQ_C
    elif abs(b - c) <= _EQUAL_TOL * max(1.0, abs(c)):
        plan[_P_KIND] = _KIND_B_EQ_C
    else:
        plan[_P_KIND] = _KIND_GENERAL
    d, ok, c1, c2 = _connection_coeffs(a, b, c)
    plan[_P_D1] = d
    plan[_P_OK1] = ok
    plan[_P_A1] = c1
    plan[_P_B1] = c2
    # Pfaff-transformed triple (a, c - b, c)
    b2 = c - b
    d2, ok2, c12, c22 = _connection_coeffs(a, b2, c)
    plan[_P_B2] = b2
    plan[_P_D2] = d2
    plan[_P_OK2] = ok2
    plan[_P_A2] = c12
    plan[_P_B2C] = c22
    return plan


@numba.njit(cache=True)
def _unit_interval(a, b, c, w, d, conn_ok, coef1, coef2, max_terms):
    """F(a, b; c; w) for 0 <= w < 1."""
    if w <= 0.5:
        return _small_arg(a, b, c, w, max_terms)
    if conn_ok > 0.0:
        u = 1.0 - w
        f1, ok1 = _small_arg(a, b, 1.0 - d, u, max_terms)
        val = coef1 * f1
        if coef2 != 0.0:
            f2, ok2 = _small_arg(c - a, c - b, 1.0 + d, u, max_terms)
            val += coef2 * u**d * f2
            ok1 = ok1 and ok2
        return val, ok1
    val, _, ok = _series(a, b, c, w, max_terms)
    return val, ok


@numba.njit(cache=True)
def _eval_plan(plan, z, max_terms):
    """Evaluate a prepared hypergeometric plan at ``z < 1``.

    Returns ``nan`` when the term cap is reached.
    """
    a = plan[_P_A]
    b = plan[_P_B]
    c = plan[_P_C]
    kind = plan[_P_KIND]
    if z == 0.0:
        return 1.0
    if kind == _KIND_POLY:
        val, _, ok = _series(a, b, c, z, max_terms)
        return val if ok else np.nan
    if kind == _KIND_A_EQ_C:
        return (1.0 - z) ** (-b)
    if kind == _KIND_B_EQ_C:
        return (1.0 - z) ** (-a)
    if z > 0.0:
        val, ok = _unit_interval(
            a, b, c, z, plan[_P_D1], plan[_P_OK1], plan[_P_A1], plan[_P_B1], max_terms
        )
        return val if ok else np.nan
    # Pfaff: F(a, b; c; z) = (1 - z)^(-a) F(a, c - b; c; z / (z - 1))
    w = z / (z - 1.0)
    val, ok = _unit_interval(
        a,
        plan[_P_B2],
        c,
        w,
        plan[_P_D2],
        plan[_P_OK2],
        plan[_P_A2],
        plan[_P_B2C],
        max_terms,
    )
    if not ok:
        return np.nan
    return (1.0 - z) ** (-a) * val


@numba.njit(cache=True)
def _eval_plan_array(plan, zs, max_terms, out):
    failures = 0
    for k in range(zs.size):
        v = _eval_plan(plan, zs[k], max_terms)
        out[k] = v
        if np.isnan(v):
            failures += 1
    return failures


@numba.njit(cache=True)
def _series_array(a, b, c, zs, max_terms, out):
    failures = 0
    for k in range(zs.size):
        v, _, ok = _series(a, b, c, zs[k], max_terms)
        out[k] = v if ok else np.nan
        if not ok:
            failures += 1
    return failures


def _check_params(a: float, b: float, c: float) -> None:
    for name, v in (("alpha", a), ("beta", b), ("gamma", c)):
        if not math.isfinite(v):
            raise DomainError(f"hyp2f1 parameter {name} must be finite, got {v}")
    if c <= 0 and c == math.floor(c):
        raise DomainError(f"hyp2f1 undefined for gamma={c} (non-positive integer)")


def _as_z(z) -> tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=np.float64)
    return arr, arr.ndim == 0


def hyp2f1(alpha: float, beta: float, gamma: float, z, *, max_terms: int = MAX_TERMS):
    """Gauss hypergeometric function ``2F1(alpha, beta; gamma; z)`` for real z < 1.

    ``z`` may be a scalar or an array; the result has the same shape.
    Raises :class:`ConvergenceError` if the series needs more than
    ``max_terms`` terms anywhere.
    """
    a, b, c = float(alpha), float(beta), float(gamma)
    _check_params(a, b, c)
    zarr, scalar = _as_z(z)
    if np.any(~np.isfinite(zarr)) or np.any(zarr >= 1.0):
        raise DomainError("hyp2f1 supports finite real z < 1 only")
    plan = _make_plan(a, b, c)
    flat = np.ascontiguousarray(zarr.reshape(-1))
    out = np.empty_like(flat)
    failures = _eval_plan_array(plan, flat, int(max_terms), out)
    if failures:
        bad = flat[np.isnan(out)]
        raise ConvergenceError(
            f"hyp2f1({a}, {b}, {c}, z) did not converge within {max_terms} terms "
            f"at {failures} point(s)",
            {"alpha": a, "beta": b, "gamma": c, "z": bad[:10].tolist(), "max_terms": max_terms},
        )
    out = out.reshape(zarr.shape)
    return float(out) if scalar else out


def hyp2f1_series(alpha: float, beta: float, gamma: float, z, *, max_terms: int = MAX_TERMS):
    """The bare power series, no transformations; needs ``|z| < 1``."""
    a, b, c = float(alpha), float(beta), float(gamma)
    _check_params(a, b, c)
    zarr, scalar = _as_z(z)
    if np.any(np.abs(zarr) >= 1.0):
        raise DomainError("the direct series needs |z| < 1")
    flat = np.ascontiguousarray(zarr.reshape(-1))
    out = np.empty_like(flat)
    if _series_array(a, b, c, flat, int(max_terms), out):
        raise ConvergenceError(
            "direct hypergeometric series hit the term cap",
            {"alpha": a, "beta": b, "gamma": c, "max_terms": max_terms},
        )
    out = out.reshape(zarr.shape)
    return float(out) if scalar else out


@dataclass(frozen=True)
class HypergeometricParams:
    alpha: float
    beta: float
    gamma: float
    z: float

    def __post_init__(self) -> None:
        _check_params(self.alpha, self.beta, self.gamma)
        if not self.z < 1.0:
            raise DomainError(f"z must be < 1, got {self.z}")

    def evaluate(self) -> float:
        return hyp2f1(self.alpha, self.beta, self.gamma, self.z)
