"""Closed-form Schwarzschild interior in double null coordinates.

The interior is parametrised by ``c = (v + u)/4M - 1`` through
``ln y - y = c`` with ``y = 1 - r/2M``; ``c -> -inf`` is the horizon and
``c -> -1`` the singularity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .core import CellState, DomainError


@dataclass(frozen=True)
class SchwarzschildPoint:
    rS: float
    omega2S: float
    durS: float
    dvrS: float


def tortoise(rS, M):
    """r* = r + 2M ln((2M - r)/2M) on 0 < r < 2M."""
    r = np.asarray(rS, dtype=float)
    if np.any(r <= 0) or np.any(r >= 2 * M):
        raise DomainError("rS must lie in (0, 2M)")
    out = r + 2.0 * M * np.log1p(-r / (2.0 * M))
    return float(out) if out.ndim == 0 else out


@njit
def _log_y(c):
    # Solve t - exp(t) = c for t = ln(1 - r/2M) < 0, c < -1.
    # Newton from the horizon-branch guess t = c, safeguarded by the bracket [c, 0].
    lo, hi = c, 0.0
    if c < -3.0:
        t = c - math.exp(c)
    else:
        # near the singularity 1 - r/2M ~ 1 and r ~ sqrt(-4M^2 (c + 1))
        t = -math.sqrt(max(-2.0 * (c + 1.0), 0.0))
        if t <= lo or t >= hi:
            t = 0.5 * (lo + hi)
    for _ in range(200):
        h = t - math.exp(t) - c
        if h > 0.0:
            hi = t
        else:
            lo = t
        dh = -math.expm1(t)
        step_ok = False
        if dh > 0.0:
            tn = t - h / dh
            if lo < tn < hi:
                step_ok = True
        if not step_ok:
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-16 * max(1.0, abs(t)):
            return tn
        t = tn
    return t


@njit
def rs_from_c(c, M):
    """Schwarzschild radius for c = (v+u)/4M - 1 (scalar, kernel-callable)."""
    t = _log_y(c)
    return -2.0 * M * math.expm1(t)


def _check_c(c):
    if np.any(np.asarray(c) >= -1.0):
        raise DomainError("need v + u < 0 (interior)")


def solve_rS(u, v, M) -> SchwarzschildPoint:
    """Invert the tortoise relation (v + u)/2 = r*(r_S) for the interior radius."""
    c = (v + u) / (4.0 * M) - 1.0
    _check_c(c)
    r = rs_from_c(c, M)
    o2 = 2.0 * M / r - 1.0
    return SchwarzschildPoint(r, o2, -0.5 * o2, -0.5 * o2)


def rS_of_Uv(U, v, M):
    """Vectorised r_S at regular coordinates (U, v); U = 0 gives the horizon 2M."""
    U = np.asarray(U, dtype=float)
    v = np.asarray(v, dtype=float)
    U, v = np.broadcast_arrays(U, v)
    out = np.empty(U.shape)
    flat_U, flat_v, flat_o = U.ravel(), v.ravel(), out.reshape(-1)
    for i in range(flat_U.size):
        if flat_U[i] == 0.0:
            flat_o[i] = 2.0 * M
            continue
        if flat_U[i] < 0:
            raise DomainError("U must be nonnegative")
        c = flat_v[i] / (4.0 * M) + math.log(flat_U[i] / (4.0 * M)) - 1.0
        _check_c(c)
        flat_o[i] = rs_from_c(c, M)
    return float(out) if out.ndim == 0 else out


def schwarzschild_kretschmann(rS, M):
    """48 M^2 / r^6."""
    r = np.asarray(rS, dtype=float)
    if np.any(r <= 0):
        raise DomainError("rS must be positive")
    out = 48.0 * M**2 / r**6
    return float(out) if out.ndim == 0 else out


def omega2hat_S(r, v, M):
    """Regular-gauge lapse (2M/r) e^{-r/2M} e^{v/4M}."""
    return 2.0 * M / r * np.exp(-r / (2.0 * M) + v / (4.0 * M))


def schwarzschild_state(U: float, v: float, M: float) -> CellState:
    """Exact interior state in the (U, v) gauge, with all first derivatives."""
    r = rS_of_Uv(U, v, M)
    o2 = omega2hat_S(r, v, M)
    dUr = -0.5 * o2
    dvr = -0.5 * o2 * U / (4.0 * M)
    dsdr = -1.0 / r - 1.0 / (2.0 * M)
    return CellState(U, v, r * r, math.log(o2), 0.0,
                     2 * r * dUr, dsdr * dUr, 0.0,
                     2 * r * dvr, dsdr * dvr + 1.0 / (4.0 * M), 0.0, M=M)


def schwarzschild_array(U: float, v, M: float) -> np.ndarray:
    """Packed kernel states along a column of fixed U (shape (n, 9))."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.array([schwarzschild_state(U, vv, M).as_array() for vv in v])
