"""Characteristic data on the event horizon (U = 0) and the ingoing slice (v = v0)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .core import DataError, DomainError, ModelParams
from .schwarzschild import rS_of_Uv


class AnchorError(DataError):
    """The asymptotic conditions at v -> infinity cannot be realised at the given v_max."""


def gauge_on_H0(v, params: ModelParams):
    """Omega_hat^2(0, v) = exp(-1 + v/4M)."""
    if np.any(np.asarray(v) < params.v0):
        raise DomainError("v must be >= v0")
    out = np.exp(-1.0 + np.asarray(v, dtype=float) / (4.0 * params.M))
    return float(out) if out.ndim == 0 else out


def gauge_on_Hbar0(U, r_at, params: ModelParams):
    """Omega_hat^2(U, v0) = (2M/r_S) exp(-r_S/2M) exp(v0/4M), with r_S = r_S(U, v0)."""
    r = np.asarray(r_at, dtype=float)
    if np.any(r <= 0):
        raise DomainError("r_at must be positive")
    M = params.M
    out = 2.0 * M / r * np.exp(-r / (2.0 * M) + params.v0 / (4.0 * M))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- profiles

@dataclass
class HorizonProfile:
    """Outgoing-derivative data r d_v phi along U = 0, plus the fields it determines.

    ``source(v)`` returns r d_v phi. After :func:`integrate_horizon_constraint`
    the sampled arrays are filled on ``v``.
    """

    kind: str
    source: Callable[[np.ndarray], np.ndarray]
    tail_exponent: float = 2.0
    tail_amplitude: float = 0.0
    v: Optional[np.ndarray] = None
    rdvphi: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    deficit: Optional[np.ndarray] = None
    dvr: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    r2Yphi: Optional[np.ndarray] = None
    dUr: Optional[np.ndarray] = None
    dUsigma: Optional[np.ndarray] = None
    anchor_residual: float = float("nan")

    def tail(self, v):
        return self.tail_amplitude * np.asarray(v, dtype=float) ** (-self.tail_exponent)


def power_law_profile(params: ModelParams, two_term: bool = False) -> HorizonProfile:
    """r d_v phi = D1 (v/M)^-q, or D2 (v/M)^-p + D1 (v/M)^-q when ``two_term``."""
    M, p, q, D1, D2 = params.M, params.p, params.q, params.D1, params.D2
    if two_term:
        def src(v):
            x = np.asarray(v, dtype=float) / M
            return D2 * x**(-p) + D1 * x**(-q)
        # leading tail is the slower p-term
        return HorizonProfile("power_law", src, p, D2 * M**p)

    def src(v):
        return D1 * (np.asarray(v, dtype=float) / M) ** (-q)
    return HorizonProfile("power_law", src, q, D1 * M**q)


def load_profile_table(path) -> HorizonProfile:
    """Read a two-column (v, r d_v phi) text table; '#' starts a comment."""
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise DataError("profile table must have exactly two columns")
    v, s = data[:, 0], data[:, 1]
    return table_profile(v, s)


def table_profile(v, s) -> HorizonProfile:
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    if v.size < 4 or np.any(np.diff(v) <= 0):
        raise DataError("profile v samples must be strictly increasing (>= 4 samples)")
    if np.any(s <= 0):
        raise DataError("r d_v phi must be positive along the horizon (sign changes unsupported)")
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(np.log(v), np.log(s))
    tail_n = max(4, v.size // 10)
    slope, icpt = np.polyfit(np.log(v[-tail_n:]), np.log(s[-tail_n:]), 1)
    vmax_tab = v[-1]

    def src(x):
        x = np.asarray(x, dtype=float)
        out = np.exp(spline(np.log(np.clip(x, v[0], vmax_tab))))
        far = x > vmax_tab
        if np.any(far):
            out = np.where(far, np.exp(icpt) * x ** slope, out)
        return out
    return HorizonProfile("custom_table", src, -slope, math.exp(icpt))


def check_horizon_corridor(profile: HorizonProfile, params: ModelParams, v) -> bool:
    """True if D1 (v/M)^-q <= r d_v phi <= D2 (v/M)^-p on the samples (with rounding slack)."""
    x = np.asarray(v, dtype=float) / params.M
    s = profile.source(v)
    lo = params.D1 * x ** (-params.q)
    hi = params.D2 * x ** (-params.p)
    return bool(np.all(s >= lo * (1 - 1e-12)) and np.all(s <= hi * (1 + 1e-12)))


@dataclass
class IngoingProfile:
    """rY phi along v = v0 and the corner datum d_U r(0, v0).

    ``dUr0 = None`` selects the Schwarzschild value -Omega_hat^2(0, v0)/2.
    """

    rYphi: Callable[[np.ndarray], np.ndarray]
    dUr0: Optional[float] = None

    @classmethod
    def constant(cls, value: float, dUr0: Optional[float] = None) -> "IngoingProfile":
        return cls(lambda U: np.full(np.shape(U), float(value)), dUr0)


def default_ingoing(params: ModelParams) -> IngoingProfile:
    return IngoingProfile.constant(0.5 * params.D3)


def schwarzschild_dUr0(params: ModelParams) -> float:
    return -0.5 * math.exp(-1.0 + params.v0 / (4.0 * params.M))


# ---------------------------------------------------------------- horizon

def _tail_anchor(profile: HorizonProfile, params: ModelParams, v_max: float):
    """(r, d_v r, phi) at v_max from the limits r -> 2M, phi -> 0, e^{-v/4M} d_v r -> 0."""
    M = params.M
    s = lambda v: float(profile.source(v))
    # d_v r(v) = int_v^inf e^{-(v'-v)/4M} s(v')^2 / r dv' with r ~ 2M in the tail
    dvr, _ = integrate.quad(lambda x: math.exp(-x / (4 * M)) * s(v_max + x) ** 2 / (2 * M),
                            0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    # 2M - r(v_max) = int_{v_max}^inf d_v r = 2 int s^2 (1 - e^{-(v'-v_max)/4M})
    deficit, _ = integrate.quad(lambda x: 2.0 * s(v_max + x) ** 2 * -math.expm1(-x / (4 * M)),
                                0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    phi_tail, _ = integrate.quad(lambda x: s(v_max + x) / (2 * M), 0.0, np.inf,
                                 epsabs=0.0, epsrel=1e-12, limit=200)
    r = 2 * M - deficit
    # neglected relative correction from r != 2M inside the tail integrals
    residual = deficit / (2 * M)
    return r, dvr, -phi_tail, residual


def _horizon_rhs(v, y, src, M):
    # y = (2M - r, d_v r, phi); the deficit avoids cancellation against 2M
    d, dvr, _ = y
    r = 2 * M - d
    s = src(v)
    return np.array([-dvr, dvr / (4 * M) - s * s / r, s / r])


def _rk4(f, y0, ts):
    """Classical RK4 along the mesh ``ts`` (may be decreasing)."""
    out = np.empty((len(ts), len(y0)))
    y = np.array(y0, dtype=float)
    out[0] = y
    for i in range(len(ts) - 1):
        t, h = ts[i], ts[i + 1] - ts[i]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return out


def _refine(nodes, substeps):
    nodes = np.asarray(nodes, dtype=float)
    if substeps == 1:
        return nodes
    t = np.linspace(0.0, 1.0, substeps + 1)[:-1]
    fine = (nodes[:-1, None] + np.diff(nodes)[:, None] * t[None, :]).ravel()
    return np.append(fine, nodes[-1])


def integrate_horizon_constraint(profile: HorizonProfile, params: ModelParams, v_nodes,
                                 substeps: int = 4, anchor_tol: float = 1e-6,
                                 dUr0: Optional[float] = None,
                                 rYphi0: float = 0.0) -> HorizonProfile:
    """Solve the horizon constraints on ``v_nodes`` (ascending, starting at v0).

    r and d_v r come from the Raychaudhuri v-equation integrated backwards from
    the anchor at v_max = v_nodes[-1]; r d_U r from the wave equation for r;
    r^2 Y phi and d_U sigma forwards from the corner.
    """
    M = params.M
    v_nodes = np.asarray(v_nodes, dtype=float)
    if abs(v_nodes[0] - params.v0) > 1e-12 * max(1.0, params.v0):
        raise DataError("v_nodes must start at v0")
    if v_nodes[-1] / (4 * M) > 700.0:
        # the regular gauge carries e^{v/4M}, which leaves double range here
        raise DataError("v_max / 4M must not exceed 700")
    src = profile.source
    if np.any(src(v_nodes) < 0):
        raise DataError("r d_v phi must be nonnegative along the horizon")
    v_max = v_nodes[-1]
    r_a, dvr_a, phi_a, residual = _tail_anchor(profile, params, v_max)
    if residual > anchor_tol:
        raise AnchorError(f"anchor residual {residual:.3e} exceeds {anchor_tol:.1e}; increase v_max")

    fine = _refine(v_nodes, substeps)
    back = _rk4(lambda v, y: _horizon_rhs(v, y, src, M), [2 * M - r_a, dvr_a, phi_a],
                fine[::-1])[::-1]
    d_f, dvr_f, phi_f = back.T
    r_f = 2 * M - d_f
    if np.any(r_f <= 0):
        raise DataError("negative radius along the horizon")

    if dUr0 is None:
        dUr0 = schwarzschild_dUr0(params)
    om0 = math.exp(-1.0 + params.v0 / (4 * M))
    rdUr0 = r_f[0] * dUr0

    def rdUr(v):
        return rdUr0 - M * (np.exp(-1.0 + v / (4 * M)) - om0)

    # Hermite interpolant of (r, d_v r) for the forward pass
    d2r = dvr_f / (4 * M) - src(fine) ** 2 / r_f
    from scipy.interpolate import CubicHermiteSpline
    r_of = CubicHermiteSpline(fine, r_f, dvr_f)
    dvr_of = CubicHermiteSpline(fine, dvr_f, d2r)

    def fwd(v, y):
        Z, b = y
        r = float(r_of(v))
        dvr = float(dvr_of(v))
        s = float(src(v))
        om = math.exp(-1.0 + v / (4 * M))
        dUr = rdUr(v) / r
        w = r * r
        a, e = 2 * r * dUr, 2 * r * dvr
        c = -dUr * Z / w
        g = s / r
        dZ = (-0.25 / r * om / (-dUr) + 2.0 * dvr / r) * Z + s
        db = -2 * c * g + om / (2 * w) + a * e / (2 * w * w)
        return np.array([dZ, db])

    # d_U sigma at the corner from the ingoing gauge, where r_S(0, v0) = 2M
    b0 = om0 / (2 * M)
    forward = _rk4(fwd, [r_f[0] * rYphi0, b0], fine)

    idx = np.arange(0, len(fine), substeps)
    out = replace(profile)
    out.v = v_nodes.copy()
    out.rdvphi = src(v_nodes)
    out.r = r_f[idx]
    out.deficit = d_f[idx]
    out.dvr = dvr_f[idx]
    out.phi = phi_f[idx]
    out.r2Yphi = forward[idx, 0]
    out.dUsigma = forward[idx, 1]
    out.dUr = rdUr(v_nodes) / out.r
    out.anchor_residual = residual
    return out


def horizon_column(h: HorizonProfile, params: ModelParams) -> np.ndarray:
    """Packed kernel states along U = 0."""
    M = params.M
    r, v = h.r, h.v
    w = r * r
    x = np.empty((len(v), 9))
    x[:, 0] = w
    x[:, 1] = -1.0 + v / (4 * M)
    x[:, 2] = h.phi
    x[:, 3] = 2 * r * h.dUr
    x[:, 4] = h.dUsigma
    x[:, 5] = -h.dUr * h.r2Yphi / w
    x[:, 6] = 2 * r * h.dvr
    x[:, 7] = 1.0 / (4 * M)
    x[:, 8] = h.rdvphi / r
    return x


# ---------------------------------------------------------------- ingoing slice

@dataclass
class NullSlice:
    """Packed states along one null segment (rows ordered by the varying coordinate)."""

    coord: np.ndarray
    x: np.ndarray
    fixed: float
    kind: str = field(default="v")


def build_ingoing_data(profile: IngoingProfile, horizon: HorizonProfile, params: ModelParams,
                       U_nodes, substeps: int = 4) -> NullSlice:
    """Integrate the Raychaudhuri U-equation and the v-derivative transports along v = v0."""
    M, v0 = params.M, params.v0
    U_nodes = np.asarray(U_nodes, dtype=float)
    if U_nodes[0] != 0.0 or np.any(np.diff(U_nodes) <= 0):
        raise DataError("U_nodes must start at 0 and increase")
    dUr0 = schwarzschild_dUr0(params) if profile.dUr0 is None else float(profile.dUr0)
    sample_U = np.linspace(0.0, U_nodes[-1], 257)
    sup = float(np.max(np.abs(profile.rYphi(sample_U))))
    if np.any(profile.rYphi(sample_U) < 0):
        raise DataError("rY phi must be positive on the ingoing slice")
    if sup + abs(dUr0 - schwarzschild_dUr0(params)) > params.D3 * (1 + 1e-12) + 1e-300:
        raise DataError("ingoing data exceeds the D3 bound")

    def gauge(U):
        rS = rS_of_Uv(U, v0, M)
        om = gauge_on_Hbar0(U, rS, params)
        return om, om * (1.0 / rS + 1.0 / (2 * M)) * 0.5

    def rhs(U, y):
        r, rho, phi, e, f, g = y
        if r <= 0:
            raise DataError("r reached zero on the ingoing slice; reduce U0")
        om, b = gauge(U)
        hY = float(profile.rYphi(U))
        w = r * r
        a = 2 * r * rho
        c = -rho * hY / r
        return np.array([
            rho,
            b * rho - rho * rho * hY * hY / r,
            c,
            -0.5 * om,
            -2 * c * g + om / (2 * w) + a * e / (2 * w * w),
            -(a * g + e * c) / (2 * w),
        ])

    r0 = horizon.r[0]
    y0 = [r0, dUr0, horizon.phi[0], 2 * r0 * horizon.dvr[0], 1.0 / (4 * M), horizon.rdvphi[0] / r0]
    fine = _refine(U_nodes, substeps)
    sol = _rk4(rhs, y0, fine)[::substeps]
    r, rho, phi, e, f, g = sol.T
    if np.any(r <= 0) or not np.all(np.isfinite(sol)):
        raise DataError("r reached zero on the ingoing slice; reduce U0")
    om, b = zip(*(gauge(U) for U in U_nodes))
    hY = profile.rYphi(U_nodes)
    x = np.empty((len(U_nodes), 9))
    x[:, 0] = r * r
    x[:, 1] = np.log(np.array(om))
    x[:, 2] = phi
    x[:, 3] = 2 * r * rho
    x[:, 4] = np.array(b)
    x[:, 5] = -rho * hY / r
    x[:, 6] = e
    x[:, 7] = f
    x[:, 8] = g
    # corner: horizon gauge wins; the two gauges agree analytically
    return NullSlice(U_nodes.copy(), x, v0, "v")


def corner_mismatch(ingoing: NullSlice, horizon_x: np.ndarray) -> float:
    """Largest relative difference between the two representations of the corner (0, v0)."""
    a, b = ingoing.x[0], horizon_x[0]
    return float(np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-300)))
