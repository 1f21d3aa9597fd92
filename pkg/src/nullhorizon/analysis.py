"""Rates, constants and inequality audits extracted from evolved sheets.

Near the singularity the deviation of the Kretschmann exponent from 6 is many
orders of magnitude below the pointwise discretization error of K itself, so a
literal log-log fit of K against r only measures noise. The primary estimates
here use identities that hold on solutions instead:

* along an outgoing column, d m / d v = -2 r^2 (d_U r)(d_v phi)^2 / Omega_hat^2
  exactly, so the local mass exponent beta = -d ln m / d ln r needs no
  differencing of m;
* K r^6 = 48 m^2 - 64 m Q + 128 Q^2 with Q = r^3 (d_U phi)(d_v phi) / Omega_hat^2,
  so -d ln K / d ln r = 6 - d ln(K r^6) / d ln r follows from d m and the
  slowly varying product Q / m.

Literal fits are reported next to the on-shell ones.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, stats

from .core import DomainError, ModelParams, u_from_U
from .diagnostics import (hawking_mass_array, kretschmann_array, locate_singularity,
                          null_gradients)
from .evolution import Column, GridSheet

DEFAULT_STATIONS = (40.0, 80.0, 160.0, 320.0)
MIN_SAMPLES = 8


class InsufficientDataError(ValueError):
    """Too few usable samples for a fit."""


@dataclass
class Fit:
    exponent: float
    amplitude: float
    stderr: float
    window: Tuple[float, float]

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "amplitude": self.amplitude,
                "stderr": self.stderr, "window": list(self.window)}


def fit_power_law(x, y, window: Optional[Tuple[float, float]] = None) -> Fit:
    """Least-squares line through (ln x, ln y) restricted to ``window`` in x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    if window is None:
        window = (float(np.min(x)), float(np.max(x))) if x.size else (0.0, 0.0)
    sel = (x >= window[0]) & (x <= window[1])
    xs, ys = x[sel], y[sel]
    if xs.size < MIN_SAMPLES:
        raise InsufficientDataError(f"{xs.size} samples in window, need {MIN_SAMPLES}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise DomainError("power-law fit needs positive x and y")
    lx, ly = np.log(xs), np.log(ys)
    res = stats.linregress(lx, ly)
    return Fit(float(res.slope), float(math.exp(res.intercept)), float(res.stderr),
               (float(window[0]), float(window[1])))


def _line(x, y):
    """Slope, intercept and their standard errors for y = a + b x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    s2 = float(np.sum((y - A @ coef) ** 2)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[1]), float(coef[0]), float(math.sqrt(cov[1, 1])), float(math.sqrt(cov[0, 0]))


# ---------------------------------------------------------------------------
# stations

@dataclass
class Station:
    """A column near the singularity, labelled by the v at which it reaches r = 0."""

    target: float
    index: int
    U: float
    u: float
    v_S: float
    asymptotic: bool


def asymptotic_threshold(sheet: GridSheet) -> Tuple[float, float, float]:
    """(u1, v_{r=0}(u1), |u1| + 2 v_{r=0}(u1)) for the last column u1."""
    sing = locate_singularity(sheet)
    if len(sing) == 0:
        raise InsufficientDataError("no column reaches r_min")
    M = sheet.params.M
    k = int(np.argmax(sing.U))
    u1 = float(u_from_U(sing.U[k], M))
    v1 = float(sing.v[k])
    return u1, v1, abs(u1) + 2 * v1


def select_stations(sheet: GridSheet, v_stations: Sequence[float]) -> List[Station]:
    """Column whose singularity point v_S is closest to each requested station."""
    sing = locate_singularity(sheet)
    if len(sing) == 0:
        raise InsufficientDataError("no column reaches r_min")
    M = sheet.params.M
    _, _, thresh = asymptotic_threshold(sheet)
    index = {c.U: j for j, c in enumerate(sheet.columns)}
    out = []
    for vs in v_stations:
        k = int(np.argmin(np.abs(sing.v - vs)))
        U = float(sing.U[k])
        u = float(u_from_U(U, M))
        out.append(Station(float(vs), index[U], U, u, float(sing.v[k]), abs(u) >= thresh))
    return out


# ---------------------------------------------------------------------------
# local exponents along a column

@dataclass
class LocalExponents:
    r: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    N: np.ndarray
    alpha: np.ndarray
    K: np.ndarray


def local_exponents(col: Column, r_lo: float, r_hi: float) -> LocalExponents:
    """On-shell d ln / d ln r of m, K and r Omega^2 along one column, on r in [r_lo, r_hi]."""
    x = col.x
    r_all = np.sqrt(x[:, 0])
    sel = (r_all >= r_lo) & (r_all <= r_hi) & (x[:, 6] < 0) & (x[:, 3] < 0)
    g = null_gradients(x[sel])
    r, O2, ru, rv, pu, pv, lv = g["r"], g["O2"], g["ru"], g["rv"], g["pu"], g["pv"], g["lv"]
    m = hawking_mass_array(x[sel])
    # d m / d ln r along the column
    m_l = r * (-2 * r * r * ru * pv * pv / O2) / rv
    P = (r * pu / ru) * (r * pv / rv)
    Q = 0.5 * m * P
    P_l = _smooth_slope(P, r)
    Q_l = 0.5 * (m_l * P + m * P_l)
    Kr6 = 48 * m * m - 64 * m * Q + 128 * Q * Q
    N = 6 - ((96 * m - 64 * Q) * m_l + (256 * Q - 64 * m) * Q_l) / Kr6
    beta = -m_l / m
    # ln(r Omega^2) = ln 4 + ln(r r_U) + ln(r r_v) - ln(2m - r); the first log is exact
    D_rv = _smooth_slope(np.log(np.abs(r * rv)), r)
    alpha = D_rv - 2 * m_l / (2 * m - r)
    return LocalExponents(r, m, beta, N, alpha, Kr6 / r ** 6)


def _smooth_slope(f, r):
    """d f / d ln r of the least-squares model f = c0 + c1 ln r + c2 r + c3 r^2.

    Stored derivative fields carry mesh-scale jitter that pointwise differencing
    on the adaptive v mesh amplifies far beyond the signal.
    """
    if len(f) < 3:
        return np.full_like(f, np.nan)
    A = np.vstack([np.ones_like(r), np.log(r), r, r * r]).T
    c, *_ = np.linalg.lstsq(A, f, rcond=None)
    return c[1] + c[2] * r + 2 * c[3] * r * r


def _intercept(r, vals, r_hi):
    """Value at r -> 0 of a line in r fitted to vals; stderr includes window sensitivity."""
    if len(r) < MIN_SAMPLES:
        raise InsufficientDataError(f"{len(r)} radii in window, need {MIN_SAMPLES}")
    _, a, _, sa = _line(r, vals)
    inner = r <= 0.5 * r_hi
    if inner.sum() >= MIN_SAMPLES:
        _, a2, _, _ = _line(r[inner], vals[inner])
        sa = math.hypot(sa, a - a2)
    return a, sa


# ---------------------------------------------------------------------------
# rate profiles

@dataclass
class StationRate:
    v: float
    u: float
    asymptotic: bool
    n_radii: int
    N: float
    N_stderr: float
    beta: float
    beta_stderr: float
    N_literal: Optional[Fit] = None
    beta_literal: Optional[Fit] = None
    notice: str = ""

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("v", "u", "asymptotic", "n_radii", "N", "N_stderr",
                                            "beta", "beta_stderr", "notice")}
        d["N_literal"] = self.N_literal.to_dict() if self.N_literal else None
        d["beta_literal"] = self.beta_literal.to_dict() if self.beta_literal else None
        return d


@dataclass
class RateReport:
    v_stations: List[float] = field(default_factory=list)
    stations: List[StationRate] = field(default_factory=list)
    N_of_v: List[Tuple[float, float]] = field(default_factory=list)
    mass_exponent: List[Tuple[float, float]] = field(default_factory=list)
    omega_exponent: List[dict] = field(default_factory=list)
    f1_samples: List[Tuple[float, float]] = field(default_factory=list)
    f2_samples: List[Tuple[float, float]] = field(default_factory=list)
    fits: Dict[str, Fit] = field(default_factory=dict)
    sigma_fit: Optional[dict] = None
    rho_fit: Optional[dict] = None
    derived_constants: dict = field(default_factory=dict)
    notices: List[str] = field(default_factory=list)


def _window(sheet: GridSheet, r_fit_max: Optional[float]) -> Tuple[float, float]:
    P = sheet.params
    return P.r_min, (P.r0 / 4 if r_fit_max is None else r_fit_max)


def station_rates(sheet: GridSheet, v_stations: Sequence[float],
                  r_fit_max: Optional[float] = None) -> List[StationRate]:
    """Kretschmann and mass exponents at each station, on-shell and literal."""
    lo, hi = _window(sheet, r_fit_max)
    out = []
    for st in select_stations(sheet, sorted(v_stations)):
        col = sheet.columns[st.index]
        L = local_exponents(col, lo, hi)
        if len(L.r) < MIN_SAMPLES:
            out.append(StationRate(st.v_S, st.u, st.asymptotic, len(L.r), math.nan, math.nan,
                                   math.nan, math.nan, notice="skipped: fewer than 8 radii"))
            continue
        N, sN = _intercept(L.r, L.N, hi)
        b, sb = _intercept(L.r, L.beta, hi)
        rate = StationRate(st.v_S, st.u, st.asymptotic, len(L.r), N, sN, b, sb)
        fK = fit_power_law(L.r, L.K)
        rate.N_literal = Fit(-fK.exponent, fK.amplitude, fK.stderr, fK.window)
        if np.all(L.m > 0):
            fm = fit_power_law(L.r, L.m)
            rate.beta_literal = Fit(-fm.exponent, fm.amplitude, fm.stderr, fm.window)
        else:
            rate.notice = "nonpositive mass in window"
        if not st.asymptotic:
            rate.notice = (rate.notice + "; " if rate.notice else "") + "outside |u| >= |u1| + 2 v_{r=0}(u1)"
        out.append(rate)
    return out


def _through_origin(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = float(np.dot(x, y) / np.dot(x, x))
    dof = max(len(x) - 1, 1)
    s2 = float(np.sum((y - k * x) ** 2)) / dof
    return k, math.sqrt(s2 / float(np.dot(x, x)))


def _slope_fit(x, y, sy=None) -> Fit:
    """Log-log slope over a handful of stations (no minimum sample count)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, icpt, s_slope, _ = _line(lx, ly) if len(lx) > 2 else (
        float((ly[-1] - ly[0]) / (lx[-1] - lx[0])), float(ly[0]), math.nan, math.nan)
    if sy is not None and len(lx) > 1:
        # propagate per-station errors through the slope formula
        w = (lx - lx.mean()) / np.sum((lx - lx.mean()) ** 2)
        s_prop = float(np.sqrt(np.sum((w * np.asarray(sy) / np.asarray(y)) ** 2)))
        s_slope = math.hypot(s_slope if math.isfinite(s_slope) else 0.0, s_prop)
    return Fit(slope, float(math.exp(icpt)), s_slope, (float(min(x)), float(max(x))))


def kretschmann_exponent_profile(sheet: GridSheet, v_stations: Sequence[float] = DEFAULT_STATIONS,
                                 r_fit_max: Optional[float] = None,
                                 rates: Optional[List[StationRate]] = None) -> RateReport:
    """N(v) = -d ln K / d ln r at r -> 0 per station, and its decay in v."""
    P = sheet.params
    rates = station_rates(sheet, v_stations, r_fit_max) if rates is None else rates
    rep = RateReport(v_stations=[s.v for s in rates], stations=rates)
    ok = [s for s in rates if math.isfinite(s.N)]
    rep.N_of_v = [(s.N, s.N_stderr) for s in rates]
    rep.notices = [f"v={s.v:.4g}: {s.notice}" for s in rates if s.notice]
    if len(ok) >= 2:
        v = np.array([s.v for s in ok]) / P.M
        y = np.array([s.N - 6 for s in ok])
        if np.all(y > 0):
            rep.fits["N_minus_6_vs_v"] = _slope_fit(v, y, [s.N_stderr for s in ok])
        k, sk = _through_origin(v ** (-2 * P.p), y)
        rep.sigma_fit = {"value": k, "stderr": sk, "regressor": "(v/M)^(-2p)"}
        k, sk = _through_origin(v ** (-2 * P.q), y)
        rep.rho_fit = {"value": k, "stderr": sk, "regressor": "(v/M)^(-2q)",
                       "per_D1_squared": k / P.D1 ** 2 if P.D1 > 0 else None}
    return rep


def mass_inflation_profile(sheet: GridSheet, v_stations: Sequence[float] = DEFAULT_STATIONS,
                           r_fit_max: Optional[float] = None,
                           rates: Optional[List[StationRate]] = None) -> RateReport:
    """beta(v) in m ~ A r^(-beta) per station, with the 2 beta = N - 6 cross-check."""
    P = sheet.params
    rates = station_rates(sheet, v_stations, r_fit_max) if rates is None else rates
    rep = RateReport(v_stations=[s.v for s in rates], stations=rates)
    rep.mass_exponent = [(s.beta, s.beta_stderr) for s in rates]
    ok = [s for s in rates if math.isfinite(s.beta)]
    if len(ok) >= 2 and all(s.beta > 0 for s in ok):
        v = np.array([s.v for s in ok]) / P.M
        rep.fits["beta_vs_v"] = _slope_fit(v, [s.beta for s in ok], [s.beta_stderr for s in ok])
    return rep


def consistency_2beta(rate: StationRate) -> Tuple[float, float]:
    """(|2 beta - (N - 6)|, combined stderr) at one station."""
    d = abs(2 * rate.beta - (rate.N - 6))
    return d, math.hypot(2 * rate.beta_stderr, rate.N_stderr)


def omega_exponent_profile(sheet: GridSheet, u_stations: Optional[Sequence[float]] = None,
                           r_fit_max: Optional[float] = None) -> List[dict]:
    """alpha(u) in r Omega^2 ~ r^alpha along columns, on-shell and literal.

    ``u_stations`` default to the columns of :data:`DEFAULT_STATIONS`.
    """
    lo, hi = _window(sheet, r_fit_max)
    M = sheet.params.M
    if u_stations is None:
        sts = select_stations(sheet, DEFAULT_STATIONS)
    else:
        sing = locate_singularity(sheet)
        us = u_from_U(sing.U, M)
        sts = []
        for uu in u_stations:
            k = int(np.argmin(np.abs(us - uu)))
            sts.extend(select_stations(sheet, [float(sing.v[k])]))
    out = []
    for st in sorted(sts, key=lambda s: s.u, reverse=True):
        col = sheet.columns[st.index]
        L = local_exponents(col, lo, hi)
        rec = {"u": st.u, "v_S": st.v_S, "n_radii": len(L.r)}
        if len(L.r) < MIN_SAMPLES:
            rec["notice"] = "skipped: fewer than 8 radii"
            out.append(rec)
            continue
        a, sa = _intercept(L.r, L.alpha, hi)
        L2 = local_exponents(col, lo, 0.5 * hi)
        if len(L2.r) >= MIN_SAMPLES:
            sa = math.hypot(sa, a - _intercept(L2.r, L2.alpha, 0.5 * hi)[0])
        x = col.x[(col.x[:, 0] >= lo * lo) & (col.x[:, 0] <= hi * hi)]
        rO2 = np.sqrt(x[:, 0]) * np.exp(x[:, 1]) * st.U / (4 * M)
        lit = fit_power_law(np.sqrt(x[:, 0]), rO2)
        rec.update(alpha=a, alpha_stderr=sa, literal=lit.to_dict(),
                   rOmega2_at_rmin=float(rO2[-1]))
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# limits of r d r at the singularity

@dataclass
class LimitSample:
    u: float
    v_S: float
    X: float
    f1: float
    f2: float
    gamma1: float
    gamma2: float
    flagged: bool


def _limit(r, f, r_lo):
    """a in f = a + b r^gamma on the last decade of r, and on the last half decade."""
    model = lambda rr, a, b, g: a + b * rr ** g
    out = []
    for hi in (10 * r_lo, math.sqrt(10) * r_lo):
        s = r <= hi
        if s.sum() < MIN_SAMPLES:
            out.append((math.nan, math.nan))
            continue
        rr, ff = r[s], f[s]
        try:
            p, _ = optimize.curve_fit(model, rr, ff, p0=[ff[-1], 0.5, 1.0],
                                      bounds=([-np.inf, -np.inf, 0.01], [np.inf, np.inf, 1.0]),
                                      maxfev=20000)
        except (RuntimeError, ValueError):
            out.append((math.nan, math.nan))
            continue
        out.append((float(p[0]), float(p[2])))
    return out


def extract_f1_f2(sheet: GridSheet, stride: int = 1, rel_flag: float = 0.1,
                  abs_floor: float = 0.0) -> List[LimitSample]:
    """f1 = lim (r d_u r + M), f2 = lim (r d_v r + M) as r -> 0 along every column reaching S.

    Each column is labelled by u and by v_S, the v at which it meets the
    singularity; X = |u - u1 - v_{r=0}(u1)|. A sample is flagged when the
    two extrapolation windows disagree by more than ``rel_flag`` relative
    (and more than ``abs_floor`` absolute).
    """
    P = sheet.params
    M = P.M
    sing = locate_singularity(sheet)
    if len(sing) == 0:
        raise InsufficientDataError("no column reaches r_min")
    u1, v1, _ = asymptotic_threshold(sheet)
    index = {c.U: j for j, c in enumerate(sheet.columns)}
    out = []
    for k in range(0, len(sing), stride):
        col = sheet.columns[index[sing.U[k]]]
        x = col.x
        r = np.sqrt(x[:, 0])
        J = col.U / (4 * M)
        f1 = 0.5 * x[:, 3] * J + M
        f2 = 0.5 * x[:, 6] + M
        (a1, g1), (b1, _) = _limit(r, f1, P.r_min)
        (a2, g2), (b2, _) = _limit(r, f2, P.r_min)
        flag = any(not (math.isfinite(a) and math.isfinite(b))
                   or (abs(a - b) > rel_flag * abs(a) and abs(a - b) > abs_floor)
                   for a, b in ((a1, b1), (a2, b2)))
        u = float(u_from_U(col.U, M))
        out.append(LimitSample(u, float(sing.v[k]), abs(u - u1 - v1), a1, a2, g1, g2, flag))
    return out


def f_decay_fits(samples: Sequence[LimitSample], M: float = 1.0) -> Dict[str, Optional[Fit]]:
    """Power-law decay of |f1| against X / M and of |f2| against v_S / M (unflagged samples only)."""
    fits = {}
    good = [s for s in samples if not s.flagged]
    for name, xs, ys in (("f1", [s.X / M for s in good], [abs(s.f1) for s in good]),
                         ("f2", [s.v_S / M for s in good], [abs(s.f2) for s in good])):
        xs, ys = np.asarray(xs), np.asarray(ys)
        ok = (xs > 0) & (ys > 0)
        try:
            f = fit_power_law(xs[ok], ys[ok])
            fits[name] = Fit(-f.exponent, f.amplitude * M, f.stderr, f.window)
        except (InsufficientDataError, DomainError):
            fits[name] = None
    return fits


def apparent_horizon_slope(sheet: GridSheet, v_min: Optional[float] = None) -> Fit:
    """Log-log slope of 2M - r_A(v) against v/M for v >= v_min (default 2 v0)."""
    from .diagnostics import locate_apparent_horizon
    M = sheet.params.M
    ah = locate_apparent_horizon(sheet)
    v_min = 2 * sheet.params.v0 if v_min is None else v_min
    d = 2 * M - ah.r
    sel = (ah.v >= v_min) & (d > 0)
    return fit_power_law(ah.v[sel] / M, d[sel] / M)


# ---------------------------------------------------------------------------
# inequality audits

def derived_constants(params: ModelParams, eps: Optional[float] = None) -> dict:
    """Placeholder values of the amplitudes entering the scalar-field bounds.

    The bootstrap amplitude Delta_1 is an existence device without a value; it
    is replaced by D2, the upper data amplitude. ``eps`` defaults to D1 / 10.
    """
    eps = 0.1 * params.D1 if eps is None else eps
    Dt = 8.0 * params.D2
    Dp = (3.0 - 2.0 * math.sqrt(2.0)) * (params.D1 - eps)
    return {"Delta1": params.D2, "epsilon": eps, "D1_tilde": Dt, "D2_tilde": Dt,
            "D1_prime": Dp, "D2_prime": Dp}


@dataclass
class AuditLine:
    name: str
    region: str
    n_cells: int
    constants: dict
    violation_fraction: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AuditReport:
    v1: float
    lines: List[AuditLine] = field(default_factory=list)

    def line(self, name: str) -> AuditLine:
        for ln in self.lines:
            if ln.name == name:
                return ln
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"v1": self.v1, "lines": [ln.to_dict() for ln in self.lines]}


@dataclass
class CellTable:
    """Every evolved cell off the horizon, flattened, with u-gauge gradients."""

    U: np.ndarray
    u: np.ndarray
    v: np.ndarray
    r: np.ndarray
    m: np.ndarray
    rO2: np.ndarray
    r_ur: np.ndarray
    r_vr: np.ndarray
    r2_uphi: np.ndarray
    r2_vphi: np.ndarray
    rYphi: np.ndarray


def cell_table(sheet: GridSheet, v1: float = -math.inf) -> CellTable:
    M = sheet.params.M
    Us, vs, xs = [], [], []
    for col in sheet.columns[1:]:
        keep = col.v >= v1
        Us.append(np.full(int(keep.sum()), col.U))
        vs.append(col.v[keep])
        xs.append(col.x[keep])
    U = np.concatenate(Us)
    v = np.concatenate(vs)
    x = np.concatenate(xs) if xs else np.empty((0, 9))
    g = null_gradients(x)
    J = U / (4 * M)
    r = g["r"]
    return CellTable(U=U, u=u_from_U(U, M), v=v, r=r, m=hawking_mass_array(x),
                     rO2=r * g["O2"] * J, r_ur=r * g["ru"] * J, r_vr=r * g["rv"],
                     r2_uphi=r * r * g["pu"] * J, r2_vphi=r * r * g["pv"],
                     rYphi=r * g["pu"] / (-g["ru"]))


def _bounded(name, region, q, lo_shape, hi_shape, note=""):
    """Minimal constants c, C with c lo_shape <= q <= C hi_shape; nonpositive q cannot satisfy c > 0."""
    n = len(q)
    if n == 0:
        return AuditLine(name, region, 0, {}, math.nan, "empty region")
    pos = q > 0
    c = float(np.min(q[pos] / lo_shape[pos])) if pos.any() else math.nan
    C = float(np.max(q / hi_shape))
    k = {"c": c, "C": C}
    if lo_shape is hi_shape or np.allclose(lo_shape, hi_shape):
        k["C_over_c"] = C / c if c and math.isfinite(c) else math.inf
    return AuditLine(name, region, n, k, float(np.mean(~pos)), note)


def _exponent_sandwich(name, region, q, r, g, M, sign, note=""):
    """q ~ M (r/M)^(sign kappa g(v)): fit kappa, then the constants c, C at that kappa."""
    n = len(q)
    if n < 2:
        return AuditLine(name, region, n, {}, math.nan, "empty region")
    pos = q > 0
    lr = np.log(r[pos] / M)
    X = sign * g[pos] * lr
    A = np.vstack([np.ones_like(X), X]).T
    coef, *_ = np.linalg.lstsq(A, np.log(q[pos] / M), rcond=None)
    kappa = float(coef[1])
    shape = M * np.exp(X * kappa)
    ratio = q[pos] / shape
    plain = q[pos] / M
    k = {"kappa": kappa, "c": float(ratio.min()), "C": float(ratio.max()),
         "c_at_kappa0": float(plain.min()), "C_at_kappa0": float(plain.max())}
    return AuditLine(name, region, n, k, float(np.mean(~pos)), note)


def audit_estimates(sheet: GridSheet, params: Optional[ModelParams] = None,
                    v1: Optional[float] = None, table: Optional[CellTable] = None) -> AuditReport:
    """Evaluate every line of the approach-to-Schwarzschild bounds on the sheet.

    Lines with explicit shapes report the minimal constants making them hold;
    exponent-type lines report a fitted exponent coefficient and the constants
    at that coefficient. The violation fraction counts cells no positive
    constant can accommodate (wrong sign).
    """
    P = sheet.params if params is None else params
    M, p, q = P.M, P.p, P.q
    v1 = DEFAULT_STATIONS[0] * M if v1 is None else v1
    T = cell_table(sheet, v1) if table is None else table
    rep = AuditReport(v1)
    vv = T.v / M
    near = T.r <= 0.1 * M
    far = ~near
    region = f"U > 0, v >= {v1:g}"

    for name, val in (("r_du_r", T.r_ur), ("r_dv_r", T.r_vr)):
        excess = np.maximum(np.abs(val + M) - M * (T.r / M) ** 0.01, 0.0)
        C = float(np.max(excess / (M * vv ** (-p)))) if len(val) else math.nan
        frac_rest = float(np.mean(excess > 0)) if len(val) else math.nan
        rep.lines.append(AuditLine(name, region, len(val), {"C": C}, 0.0,
                                   f"cells needing the (v/M)^-p term: {frac_rest:.3g}"))

    rep.lines.append(_exponent_sandwich("rOmega2_upper", region + ", r <= M/10", T.rO2[near],
                                        T.r[near], vv[near] ** (-2 * q), M, 1.0,
                                        "kappa estimates rho D1^2"))
    rep.lines.append(_exponent_sandwich("rOmega2_lower", region + ", r <= M/10", T.rO2[near],
                                        T.r[near], vv[near] ** (-2 * p), M, 1.0,
                                        "kappa estimates sigma"))
    rep.lines.append(_exponent_sandwich("m_lower", region, T.m, T.r, vv ** (-2 * q), M, -1.0,
                                        "kappa estimates rho D1^2"))
    rep.lines.append(_exponent_sandwich("m_upper", region, T.m, T.r, vv ** (-2 * p), M, -1.0,
                                        "kappa estimates sigma"))

    D1 = P.D1 if P.D1 > 0 else 1.0
    rep.lines.append(_bounded("r2_dvphi", region, T.r2_vphi, D1 * M * vv ** (-q), M * vv ** (-p),
                              "c estimates rho, C estimates sigma"))
    rep.lines.append(_bounded("r2_duphi", region + ", r <= M/10", T.r2_uphi[near],
                              D1 * M * vv[near] ** (-q), M * vv[near] ** (-p),
                              "c estimates rho, C estimates sigma"))
    rep.lines.append(_bounded("rYphi", region + ", r > M/10", T.rYphi[far], D1 * vv[far] ** (-q),
                              vv[far] ** (-p), "c estimates rho, C estimates sigma"))

    # weighted sandwiches (r^2 d phi (v/M)^q between two constants)
    rep.lines.append(_bounded("r2_dvphi_weighted", region, T.r2_vphi * vv ** q,
                              np.ones_like(vv), np.ones_like(vv)))
    rep.lines.append(_bounded("r2_duphi_weighted", region + ", r <= M/10",
                              T.r2_uphi[near] * vv[near] ** q, np.ones(near.sum()),
                              np.ones(near.sum())))

    rep.lines.extend(audit_phi_decay(sheet, P, T))
    return rep


def audit_phi_decay(sheet: GridSheet, params: ModelParams, table: CellTable) -> List[AuditLine]:
    """r^2 |d phi| against D~ M (X/M)^-p above and D' M (X/M)^-q below, X = |u - u1 - v_{r=0}(u1)|.

    Restricted to |u| >= |u1| + 2 v_{r=0}(u1) and r <= r0; the reported constants are the
    prefactors by which the placeholder amplitudes must be multiplied.
    """
    M, p, q = params.M, params.p, params.q
    u1, v1, thresh = asymptotic_threshold(sheet)
    dc = derived_constants(params)
    T = table
    sel = (np.abs(T.u) >= thresh) & (T.r <= params.r0)
    X = np.abs(T.u[sel] - u1 - v1) / M
    region = f"|u| >= {thresh:.4g}, r <= r0"
    out = []
    for name, val in (("prop_phi_dv", T.r2_vphi[sel]), ("prop_phi_du", T.r2_uphi[sel])):
        if not len(val):
            out.append(AuditLine(name, region, 0, {}, math.nan, "empty region"))
            continue
        up = dc["D1_tilde"] * M * X ** (-p) if dc["D1_tilde"] > 0 else M * X ** (-p)
        lo = dc["D1_prime"] * M * X ** (-q) if dc["D1_prime"] > 0 else M * X ** (-q)
        pos = val > 0
        k = {"upper_prefactor": float(np.max(np.abs(val) / up)),
             "lower_prefactor": float(np.min(val[pos] / lo[pos])) if pos.any() else math.nan}
        out.append(AuditLine(name, region, len(val), k, float(np.mean(~pos))))
    return out


# ---------------------------------------------------------------------------
# oracles for the analytic lemmas

@dataclass
class HorizonOracleCheck:
    max_rel_dvr: float
    max_rel_deficit: float
    max_rel_dUr: float
    sandwich: dict


def horizon_oracle_check(params: ModelParams, v_nodes, substeps: int = 4,
                         profile=None, dUr0: Optional[float] = None) -> HorizonOracleCheck:
    """Compare the horizon integrator with an adaptive DOP853 solve at 4x finer output.

    The oracle integrates the deficit 2M - r directly, so its relative
    accuracy does not suffer from cancellation against 2M. Also returns the
    constants of the data sandwich: d_v r and 2M - r against D^2 (v/M)^-2p,
    D^2 (v/M)^-2q power laws, and |d_U r / Omega_hat^2 + 1/2|.
    """
    from .initial_data import (_tail_anchor, integrate_horizon_constraint, power_law_profile,
                               schwarzschild_dUr0)
    M = params.M
    v_nodes = np.asarray(v_nodes, dtype=float)
    profile = power_law_profile(params) if profile is None else profile
    h = integrate_horizon_constraint(profile, params, v_nodes, substeps=substeps, dUr0=dUr0)
    src = profile.source
    r_a, dvr_a, _, _ = _tail_anchor(profile, params, v_nodes[-1])

    def rhs(v, y):
        d, dvr = y
        s = float(src(v))
        return [-dvr, dvr / (4 * M) - s * s / (2 * M - d)]

    hmax = float(np.min(np.diff(v_nodes))) / (4 * substeps)
    sol = integrate.solve_ivp(rhs, (v_nodes[-1], v_nodes[0]), [2 * M - r_a, dvr_a],
                              method="DOP853", t_eval=v_nodes[::-1], rtol=1e-13, atol=1e-300,
                              max_step=hmax * 16)
    d_o, dvr_o = sol.y[0][::-1], sol.y[1][::-1]
    d_n = h.deficit
    rel = lambda a, b: float(np.max(np.abs(a - b) / np.abs(b)))
    om = np.exp(-1.0 + v_nodes / (4 * M))
    shift = 0.0 if dUr0 is None else dUr0 - schwarzschild_dUr0(params)

    # r d_U r = r0 dUr0 - M (om - om0), rearranged so the deviation from -1/2 is explicit
    def dev(d):
        r = 2 * M - d
        c0 = 0.5 * om[0] * d[0] + (2 * M - d[0]) * shift
        return (c0 - 0.5 * d * om) / (r * om)
    dev_o, dev_n = dev(d_o), dev(d_n)
    x = v_nodes / M
    D1 = params.D1 if params.D1 > 0 else 1.0
    D2 = params.D2 if params.D2 > 0 else 1.0
    sandwich = {
        "dvr_lower_c": float(np.min(h.dvr / (D1 ** 2 * x ** (-2 * params.q)))),
        "dvr_upper_C": float(np.max(h.dvr / (D2 ** 2 * x ** (-2 * params.p)))),
        "deficit_lower_c": float(np.min(d_n / (M * D1 ** 2 * x ** (-2 * params.q + 1)))),
        "deficit_upper_C": float(np.max(d_n / (M * D2 ** 2 * x ** (-2 * params.p + 1)))),
        "dUr_dev_max": float(np.max(np.abs(dev_n))),
    }
    scale = np.maximum(np.abs(dev_o), 1e-300)
    return HorizonOracleCheck(rel(h.dvr, dvr_o), rel(d_n, d_o),
                              float(np.max(np.abs(dev_n - dev_o) / scale)), sandwich)


def expint_forward(alpha: float, p: float, a: float, f: Optional[Callable] = None,
                   B: float = 1.0) -> Tuple[float, float]:
    """(integral, bound) for int_a^inf e^{-alpha x} f(x) dx <= alpha^-1 B e^{-alpha a} a^-p.

    ``f`` defaults to B x^-p. The integral is computed with the factor
    e^{-alpha a} scaled out.
    """
    f = (lambda x: B * x ** (-p)) if f is None else f
    val, _ = integrate.quad(lambda y: math.exp(-alpha * y) * f(a + y), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return val, B * a ** (-p) / alpha


def expint_reverse_constant(alpha: float, p: float, a: float, b: float) -> float:
    """A constant C with int_a^b e^{alpha x} x^-p dx <= C alpha^-1 e^{alpha b} b^-p.

    Integration by parts gives I <= alpha^-1 e^{alpha b} b^-p + (p / alpha x*) I
    on [x*, b] for any x* >= a; below x* = max(a, 2p/alpha) the integrand is
    bounded by e^{alpha x*} x^-p directly.
    """
    if alpha * a > p:
        return 1.0 / (1.0 - p / (alpha * a))
    xs = 2.0 * p / alpha

    def power_int(lo, hi):
        return math.log(hi / lo) if abs(p - 1.0) < 1e-14 else (hi ** (1 - p) - lo ** (1 - p)) / (1 - p)

    if xs >= b:
        return alpha * power_int(a, b) * b ** p
    head = math.exp(alpha * (xs - b)) * power_int(a, xs) * alpha * b ** p
    return 2.0 + head


def expint_reverse(alpha: float, p: float, a: float, b: float, f: Optional[Callable] = None,
                   B: float = 1.0) -> Tuple[float, float]:
    """(integral, bound) for int_a^b e^{alpha x} f(x) dx with the constant above.

    Both sides carry the common factor e^{alpha b}, which is scaled out.
    """
    f = (lambda x: B * x ** (-p)) if f is None else f
    val, _ = integrate.quad(lambda y: math.exp(-alpha * y) * f(b - y), 0.0, b - a,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return val, expint_reverse_constant(alpha, p, a, b) * B * b ** (-p) / alpha


def expint_reverse_stated_constant(alpha: float, p: float, b: float) -> float:
    """The constant 1 + p / (alpha b) suggested by bounding x^{-p-1} by its value at b.

    This is not a valid bound when x^{-p-1} is largest at the lower limit;
    it is exposed so callers can compare.
    """
    return 1.0 + p / (alpha * b)


@dataclass
class GronwallCheck:
    hypothesis_holds: bool
    conclusion_holds: bool
    min_margin: float


def verify_reverse_gronwall(t, psi, beta, A: float, rtol: float = 1e-10) -> GronwallCheck:
    """Check psi >= A + int beta psi on the samples, then psi >= A exp(int beta).

    Integrals are cumulative trapezoid sums on ``t``; ``rtol`` absorbs their
    rounding. ``min_margin`` is min (psi / (A exp(int beta)) - 1).
    """
    t = np.asarray(t, dtype=float)
    psi = np.asarray(psi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(psi <= 0) or np.any(beta < 0) or A <= 0:
        raise DomainError("reverse Gronwall needs positive psi, nonnegative beta and A > 0")
    I_bpsi = integrate.cumulative_trapezoid(beta * psi, t, initial=0.0)
    I_b = integrate.cumulative_trapezoid(beta, t, initial=0.0)
    hyp = bool(np.all(psi >= (A + I_bpsi) * (1 - rtol)))
    lower = A * np.exp(I_b)
    margin = psi / lower - 1.0
    return GronwallCheck(hyp, bool(np.all(margin >= -rtol)), float(margin.min()))


# ---------------------------------------------------------------------------
# full report

def rate_report(sheet: GridSheet, v_stations: Sequence[float] = DEFAULT_STATIONS,
                r_fit_max: Optional[float] = None, f_stride: int = 1) -> RateReport:
    """Every rate of this module on one sheet."""
    P = sheet.params
    rates = station_rates(sheet, v_stations, r_fit_max)
    rep = kretschmann_exponent_profile(sheet, v_stations, r_fit_max, rates=rates)
    mass = mass_inflation_profile(sheet, v_stations, r_fit_max, rates=rates)
    rep.mass_exponent = mass.mass_exponent
    rep.fits.update(mass.fits)
    st = select_stations(sheet, sorted(v_stations))
    rep.omega_exponent = omega_exponent_profile(sheet, [s.u for s in st], r_fit_max)
    lim = extract_f1_f2(sheet, stride=f_stride)
    rep.f1_samples = [(s.u, s.f1) for s in lim]
    rep.f2_samples = [(s.v_S, s.f2) for s in lim]
    for k, f in f_decay_fits(lim, P.M).items():
        if f is not None:
            rep.fits[k + "_decay"] = f
    n_flag = sum(s.flagged for s in lim)
    if n_flag:
        rep.notices.append(f"{n_flag} of {len(lim)} f1/f2 samples flagged by the window test")
    rep.derived_constants = derived_constants(P)
    return rep


def _clean(obj):
    """JSON-safe copy: numpy scalars to float, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_document(sheet: GridSheet, rates: Optional[RateReport] = None,
                    audit: Optional[AuditReport] = None) -> dict:
    """Single JSON-ready document with keys params, stations, fits, audits."""
    doc = {"params": sheet.params.to_dict(), "stations": [], "fits": {}, "audits": {}}
    if rates is not None:
        doc["stations"] = [s.to_dict() for s in rates.stations]
        doc["fits"] = {k: f.to_dict() for k, f in rates.fits.items()}
        doc["fits"]["sigma_fit"] = rates.sigma_fit
        doc["fits"]["rho_fit"] = rates.rho_fit
        doc["omega_exponent"] = rates.omega_exponent
        doc["f1_samples"] = rates.f1_samples
        doc["f2_samples"] = rates.f2_samples
        doc["derived_constants"] = rates.derived_constants
        doc["notices"] = rates.notices
    if audit is not None:
        doc["audits"] = audit.to_dict()
    return _clean(doc)


def write_report(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
