"""Derived quantities on evolved data: mass, curvature, constraint residuals, curves.

Functions named ``*_array`` act on packed states of shape (n, 9) in the layout
of :mod:`nullhorizon.kernels`; the scalar versions take a :class:`CellState`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .core import CellState, DomainError, u_from_U
from .evolution import GridSheet


# ---------------------------------------------------------------------------
# pointwise scalars

def _split(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(x[:, 0] <= 0):
        raise DomainError("w must be positive")
    return x


def null_gradients(x):
    """r, Omega^2, and first derivatives of r, ln Omega^2, phi in the stored null gauge."""
    x = _split(x)
    w = x[:, 0]
    r = np.sqrt(w)
    return dict(r=r, O2=np.exp(x[:, 1]), ru=x[:, 3] / (2 * r), rv=x[:, 6] / (2 * r),
                lu=x[:, 4], lv=x[:, 7], pu=x[:, 5], pv=x[:, 8])


def to_u_gauge(x, U, M):
    """Re-express gradients in the (u, v) gauge, where Omega^2 = Omega_hat^2 U / 4M."""
    g = null_gradients(x)
    U = np.broadcast_to(np.asarray(U, dtype=float), g["r"].shape)
    if np.any(U <= 0):
        raise DomainError("the u gauge is singular on the horizon U = 0")
    J = U / (4 * M)
    return dict(r=g["r"], O2=g["O2"] * J, ru=g["ru"] * J, rv=g["rv"], lu=g["lu"] * J + 1.0 / (4 * M),
                lv=g["lv"], pu=g["pu"] * J, pv=g["pv"])


def mass_from_gradients(r, O2, ru, rv, **_):
    return 0.5 * r * (1.0 + 4.0 * ru * rv / O2)


def kretschmann_from_gradients(r, O2, ru, rv, lu, lv, pu, pv):
    """Kretschmann scalar from first-order data in any double-null gauge.

    Evaluates the expanded sum in r, Omega and their second derivatives, with
    every second derivative replaced by its field-equation value.
    """
    Luv = -2 * pu * pv + 0.5 * O2 / r ** 2 + 2 * ru * rv / r ** 2
    ruv = (-0.25 * O2 - ru * rv) / r
    ruu = ru * lu - r * pu ** 2
    rvv = rv * lv - r * pv ** 2
    O = np.sqrt(O2)
    lOu, lOv = 0.5 * lu, 0.5 * lv
    Ouv = O * (lOu * lOv + 0.5 * Luv)
    O4 = O2 * O2
    r2, r4 = r ** 2, r ** 4
    return ((4 / (r2 * O4)) * (16 * ruv ** 2 + 16 * ruu * rvv)
            + (4 / (r2 * O4)) * (-32 * ruu * rv * lOv - 32 * rvv * ru * lOu)
            + (4 / (r4 * O4)) * (16 * rv ** 2 * ru ** 2 + 64 * rv * r2 * ru * lOu * lOv)
            + 32 / (r4 * O2) * rv * ru
            + (4 / (O4 * O4)) * (16 * Ouv ** 2 * O2 - 32 * Ouv * O * O2 * lOv * lOu)
            + 64 / O4 * lOv ** 2 * lOu ** 2 + 4 / r4)


def kretschmann_covariant_from_gradients(r, O2, ru, rv, lu, lv, pu, pv):
    """Independent form: K = 16 O^-4 (d_u d_v ln O^2)^2 + 64 O^-4 (phi_u phi_v)^2 + 32 m^2 / r^6."""
    Luv = -2 * pu * pv + 0.5 * O2 / r ** 2 + 2 * ru * rv / r ** 2
    m = mass_from_gradients(r, O2, ru, rv)
    return 16 / O2 ** 2 * Luv ** 2 + 64 / O2 ** 2 * (pu * pv) ** 2 + 32 * m ** 2 / r ** 6


def hawking_mass_array(x):
    return mass_from_gradients(**null_gradients(x))


def kretschmann_array(x):
    return kretschmann_from_gradients(**null_gradients(x))


def kretschmann_covariant_array(x):
    return kretschmann_covariant_from_gradients(**null_gradients(x))


def hawking_mass(state: CellState) -> float:
    """m = (r/2)(1 + 4 Omega_hat^-2 d_U r d_v r)."""
    if state.w <= 0:
        raise DomainError("w must be positive")
    return float(hawking_mass_array(state.as_array())[0])


def kretschmann(state: CellState) -> float:
    if state.w <= 0:
        raise DomainError("w must be positive")
    return float(kretschmann_array(state.as_array())[0])


def y_derivative(state: CellState) -> float:
    """Y phi = d_U phi / (-d_U r); the gauge factor cancels."""
    if state.w <= 0:
        raise DomainError("w must be positive")
    if not state.dU_r < 0:
        raise DomainError("Y is defined only where d_U r < 0")
    return state.dU_phi / (-state.dU_r)


def y_derivative_array(x):
    g = null_gradients(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(g["ru"] < 0, g["pu"] / -g["ru"], np.nan)


# ---------------------------------------------------------------------------
# constraint residuals

def _normalized_defect(d2r, ds, dr, r, dphi):
    # d(Omega^-2 d r) + r Omega^-2 (d phi)^2 = 0, multiplied through by Omega^2
    a, b, c = d2r, ds * dr, r * dphi ** 2
    scale = np.abs(a) + np.abs(b) + c
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, (a - b + c) / scale, 0.0)


def residual_v(v, x):
    """Normalized Raychaudhuri defect along one column (d_v r differenced in v)."""
    g = null_gradients(x)
    if len(v) < 3:
        return np.full(len(v), np.nan)
    d2r = np.gradient(g["rv"], v, edge_order=2)
    return _normalized_defect(d2r, g["lv"], g["rv"], g["r"], g["pv"])


def _column_at(col, v):
    # linear interpolation of a column's r, d_U r at v (nan outside its range)
    r = np.sqrt(col.x[:, 0])
    dUr = col.x[:, 3] / (2 * r)
    out = np.full((2, len(v)), np.nan)
    ok = (v >= col.v[0]) & (v <= col.v[-1])
    out[0, ok] = np.interp(v[ok], col.v, r)
    out[1, ok] = np.interp(v[ok], col.v, dUr)
    return out


def residual_u(sheet: GridSheet, j: int):
    """Normalized U-Raychaudhuri defect on column j, differencing d_U r across columns."""
    cols = sheet.columns
    col = cols[j]
    n = len(col.v)
    if len(cols) < 3:
        return np.full(n, np.nan)
    # three-point stencil, one-sided at the ends of the sheet
    if j == 0:
        idx = (0, 1, 2)
    elif j == len(cols) - 1:
        idx = (j - 2, j - 1, j)
    else:
        idx = (j - 1, j, j + 1)
    Us = np.array([cols[i].U for i in idx])
    vals = np.array([_column_at(cols[i], col.v)[1] if i != j else col.x[:, 3] / (2 * np.sqrt(col.x[:, 0]))
                     for i in idx])
    # derivative at U_j of the interpolating quadratic (Lagrange form)
    h = Us - col.U
    d = np.zeros(n)
    for i in range(3):
        k1, k2 = [k for k in range(3) if k != i]
        d = d + vals[i] * (-(h[k1] + h[k2])) / ((h[i] - h[k1]) * (h[i] - h[k2]))
    g = null_gradients(col.x)
    return _normalized_defect(d, g["lu"], g["ru"], g["r"], g["pu"])


def renormalized_identity_residual(v, x):
    """Defect of d_U d_v ln(r Omega_hat^2) = Omega_hat^2 / 4r^2 - 2 d_U phi d_v phi along a column."""
    x = _split(x)
    w = x[:, 0]
    dU_ln = x[:, 4] + x[:, 3] / (2 * w)
    lhs = np.gradient(dU_ln, v, edge_order=2)
    rhs = np.exp(x[:, 1]) / (4 * w) - 2 * x[:, 5] * x[:, 8]
    scale = np.abs(lhs) + np.abs(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, (lhs - rhs) / scale, 0.0)


@dataclass
class ResidualSummary:
    max_res_u: float
    max_res_v: float
    l2_res: float
    order_estimate: Optional[float] = None


def residual_summary(sheet: GridSheet, r_cut: float = 0.0) -> ResidualSummary:
    """Sup and RMS norms of both residuals over cells with r >= r_cut."""
    mu, mv, acc, n = 0.0, 0.0, 0.0, 0
    for j, col in enumerate(sheet.columns):
        r = np.sqrt(col.x[:, 0])
        sel = r >= r_cut
        rv = residual_v(col.v, col.x)[sel]
        ru = residual_u(sheet, j)[sel]
        rv, ru = rv[np.isfinite(rv)], ru[np.isfinite(ru)]
        if rv.size:
            mv = max(mv, float(np.max(np.abs(rv))))
        if ru.size:
            mu = max(mu, float(np.max(np.abs(ru))))
        acc += float(np.sum(rv ** 2) + np.sum(ru ** 2))
        n += rv.size + ru.size
    return ResidualSummary(mu, mv, math.sqrt(acc / n) if n else float("nan"))


def vacuum_errors(sheet: GridSheet, r_cut: float) -> Tuple[float, float]:
    """(max |m - M| / M, max |K r^6 / 48 M^2 - 1|) over cells with r >= r_cut."""
    M = sheet.params.M
    em, eK = 0.0, 0.0
    for col in sheet.columns:
        sel = col.x[:, 0] >= r_cut * r_cut
        if not sel.any():
            continue
        x = col.x[sel]
        r = np.sqrt(x[:, 0])
        em = max(em, float(np.max(np.abs(hawking_mass_array(x) - M))) / M)
        eK = max(eK, float(np.max(np.abs(kretschmann_array(x) * r ** 6 / (48 * M * M) - 1))))
    return em, eK


def mass_inequality_margin(sheet: GridSheet) -> Tuple[float, int]:
    """(min K r^6 / 32 m^2 over cells with m > 0, number of such cells)."""
    lo, n = math.inf, 0
    for col in sheet.columns:
        x = col.x
        m = hawking_mass_array(x)
        pos = m > 0
        if not pos.any():
            continue
        r = np.sqrt(x[pos, 0])
        ratio = kretschmann_array(x[pos]) * r ** 6 / (32 * m[pos] ** 2)
        lo = min(lo, float(np.min(ratio)))
        n += int(pos.sum())
    return lo, n


@dataclass
class MonotonicityCheck:
    min_increment: float
    n_below: int
    n_cells: int


def trapped_mass_monotonicity(sheet: GridSheet, tol: float = 1e-8) -> MonotonicityCheck:
    """Increments of m between adjacent columns on each base-v row, inside the trapped region.

    A cell pair counts as trapped when d_v r < 0 at both ends (d_U r < 0 holds everywhere).
    """
    X = _rows(sheet)
    ok = np.isfinite(X[:, :, 0])
    m = np.full(X.shape[:2], np.nan)
    m[ok] = hawking_mass_array(X[ok])
    e = X[:, :, 6]
    dm = np.diff(m, axis=0)
    trapped = (e[:-1] < 0) & (e[1:] < 0) & np.isfinite(dm)
    vals = dm[trapped]
    M = sheet.params.M
    if vals.size == 0:
        return MonotonicityCheck(math.nan, 0, 0)
    return MonotonicityCheck(float(vals.min()), int(np.sum(vals < -tol * M)), int(vals.size))


# ---------------------------------------------------------------------------
# curves

@dataclass
class CurveSample:
    kind: str
    U: np.ndarray
    v: np.ndarray
    r: np.ndarray
    level: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def u(self) -> np.ndarray:
        out = np.full(len(self.U), -np.inf)
        pos = self.U > 0
        out[pos] = u_from_U(self.U[pos], self.extra.get("M", 1.0))
        return out

    def __len__(self) -> int:
        return len(self.U)


def _rows(sheet: GridSheet):
    # (value arrays per base-v row) indexed [column, row]; nan where a column has ended
    nj, nv = len(sheet.columns), len(sheet.v_base)
    X = np.full((nj, nv, 9), np.nan)
    for j, col in enumerate(sheet.columns):
        idx = sheet.row_index(j)
        ok = idx >= 0
        X[j, ok] = col.x[idx[ok]]
    return X


def locate_apparent_horizon(sheet: GridSheet) -> CurveSample:
    """Outermost zero of d_v r in U on every base-v row.

    The root is found on the cubic Hermite interpolant of d_v r between
    adjacent columns, using d_U d_v r from the field equations as slopes.
    """
    X = _rows(sheet)
    U = sheet.U_nodes
    out_U, out_v, out_r = [], [], []
    for i, v in enumerate(sheet.v_base):
        x = X[:, i]
        ok = np.isfinite(x[:, 0])
        if ok.sum() < 2:
            continue
        dvr = x[:, 6] / (2 * np.sqrt(np.abs(x[:, 0])))
        for j in range(len(U) - 1):
            if not (ok[j] and ok[j + 1]):
                break
            if dvr[j] > 0 >= dvr[j + 1]:
                Ua, ra = _ah_root(U[j], U[j + 1], x[j], x[j + 1])
                out_U.append(Ua)
                out_v.append(v)
                out_r.append(ra)
                break
    return CurveSample("apparent_horizon", np.array(out_U), np.array(out_v), np.array(out_r),
                       extra={"M": sheet.params.M})


def _ah_root(U0, U1, x0, x1):
    def parts(x):
        w = x[0]
        r = math.sqrt(w)
        dUr = x[3] / (2 * r)
        dvr = x[6] / (2 * r)
        d2w = -0.5 * math.exp(x[1])
        # d_U d_v r = (d_U d_v w - 2 d_U r d_v r) / 2r
        dUdvr = (d2w - 2 * dUr * dvr) / (2 * r)
        return r, dUr, dvr, dUdvr

    r0, a0, f0, g0 = parts(x0)
    r1, a1, f1, g1 = parts(x1)
    h = U1 - U0

    def herm(t, y0, d0, y1, d1):
        return ((2 * t ** 3 - 3 * t ** 2 + 1) * y0 + (t ** 3 - 2 * t ** 2 + t) * h * d0
                + (-2 * t ** 3 + 3 * t ** 2) * y1 + (t ** 3 - t ** 2) * h * d1)

    fn = lambda t: herm(t, f0, g0, f1, g1)
    if fn(0.0) == 0.0:
        t = 0.0
    else:
        try:
            t = brentq(fn, 0.0, 1.0, xtol=1e-15)
        except ValueError:
            t = f0 / (f0 - f1)
    return U0 + t * h, herm(t, r0, a0, r1, a1)


def locate_singularity(sheet: GridSheet) -> CurveSample:
    """v where each column would reach r = 0, from w(v) ~ w_stop + d_v w (v - v_stop)."""
    Us, vs, span = [], [], []
    for col in sheet.columns:
        if col.stop_reason != "reached_rmin" or len(col.v) < 2:
            continue
        w, e = col.x[-1, 0], col.x[-1, 6]
        if not e < 0:
            continue
        dv = -w / e
        Us.append(col.U)
        vs.append(col.v[-1] + dv)
        span.append(dv)
    return CurveSample("singularity", np.array(Us), np.array(vs), np.zeros(len(Us)),
                       level=0.0, extra={"M": sheet.params.M, "span": np.array(span)})


def locate_r_level(sheet: GridSheet, level: float) -> CurveSample:
    """First v on every column where r falls to ``level`` (linear in w between nodes)."""
    Us, vs = [], []
    w0 = level * level
    for col in sheet.columns:
        w = col.x[:, 0]
        below = np.nonzero(w <= w0)[0]
        if below.size == 0 or below[0] == 0:
            continue
        i = below[0]
        t = (w[i - 1] - w0) / (w[i - 1] - w[i])
        Us.append(col.U)
        vs.append(col.v[i - 1] + t * (col.v[i] - col.v[i - 1]))
    return CurveSample("r_level", np.array(Us), np.array(vs), np.full(len(Us), level), level=level,
                       extra={"M": sheet.params.M})


def write_curves_csv(curves: List[CurveSample], path) -> None:
    """CSV with columns kind, u, U, v, level."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kind", "u", "U", "v", "level"])
        for c in curves:
            for uu, UU, vv in zip(c.u, c.U, c.v):
                wr.writerow([c.kind, f"{uu:.17g}", f"{UU:.17g}", f"{vv:.17g}", f"{c.level:.17g}"])
