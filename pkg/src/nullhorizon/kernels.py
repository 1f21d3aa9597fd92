"""Hot loops of the characteristic scheme.

A node state is a length-9 float array::

    0 w      1 sigma   2 phi       (w = r^2, sigma = ln Omega_hat^2)
    3 dU_w   4 dU_sigma 5 dU_phi
    6 dv_w   7 dv_sigma 8 dv_phi

All functions are numba-compiled unless ``NULLHORIZON_DISABLE_JIT`` is set.
"""
import math

import numpy as np

from ._accel import njit

NF = 9
IW, IS, IP, IA, IB, IC, IE, IF, IG = range(9)

# march() status codes
PREV_END = 0
REACHED_RMIN = 1
STEP_UNDERFLOW = 2
REFINE_U = 3
NEED_SPACE = 4
BAD_STATE = 5


@njit
def cross_rhs(x):
    """Mixed derivatives d_U d_v of (w, sigma, phi) from first-order data."""
    w = x[0]
    a, c = x[3], x[5]
    e, g = x[6], x[8]
    om = math.exp(x[1])
    d2w = -0.5 * om
    d2s = -2.0 * c * g + om / (2.0 * w) + a * e / (2.0 * w * w)
    d2p = -(a * g + e * c) / (2.0 * w)
    return d2w, d2s, d2p


@njit
def _finite(x):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    return True


# The scheme works internally with s~ = sigma + ln(w)/2 = ln(r Omega_hat^2) in
# slot 1, and its derivatives b~ = b + a/2w, f~ = f + e/2w in slots 4 and 7.
# The 1/w^2 term of the sigma source cancels in this variable, which keeps the
# truncation error bounded as r -> 0.

@njit
def to_renorm(x, y):
    w = x[0]
    for i in range(NF):
        y[i] = x[i]
    y[1] = x[1] + 0.5 * math.log(w)
    y[4] = x[4] + x[3] / (2.0 * w)
    y[7] = x[7] + x[6] / (2.0 * w)


@njit
def from_renorm(y, x):
    w = y[0]
    for i in range(NF):
        x[i] = y[i]
    x[1] = y[1] - 0.5 * math.log(w)
    x[4] = y[4] - y[3] / (2.0 * w)
    x[7] = y[7] - y[6] / (2.0 * w)


@njit
def renorm_rhs(y):
    """Mixed derivatives d_U d_v of (w, s~, phi) in renormalized variables."""
    w = y[0]
    a, c = y[3], y[5]
    e, g = y[6], y[8]
    om = math.exp(y[1]) / math.sqrt(w)
    d2w = -0.5 * om
    d2s = -2.0 * c * g + om / (4.0 * w)
    d2p = -(a * g + e * c) / (2.0 * w)
    return d2w, d2s, d2p


@njit
def _diamond_r(sw, se, nw, dU, dv, ne, tol, maxit):
    # diamond update with every corner in renormalized variables
    for i in range(NF):
        ne[i] = nw[i] + se[i] - sw[i]
    fnw0, fnw1, fnw2 = renorm_rhs(nw)
    fse0, fse1, fse2 = renorm_rhs(se)
    cen = np.empty(NF)
    new = np.empty(NF)
    dUdv = dU * dv
    for it in range(maxit):
        if ne[0] <= 0.0:
            return -1
        for i in range(NF):
            cen[i] = 0.25 * (sw[i] + se[i] + nw[i] + ne[i])
        if cen[0] <= 0.0:
            return -1
        fc0, fc1, fc2 = renorm_rhs(cen)
        fn0, fn1, fn2 = renorm_rhs(ne)
        new[0] = nw[0] + se[0] - sw[0] + fc0 * dUdv
        new[1] = nw[1] + se[1] - sw[1] + fc1 * dUdv
        new[2] = nw[2] + se[2] - sw[2] + fc2 * dUdv
        new[3] = nw[3] + 0.5 * dv * (fnw0 + fn0)
        new[4] = nw[4] + 0.5 * dv * (fnw1 + fn1)
        new[5] = nw[5] + 0.5 * dv * (fnw2 + fn2)
        new[6] = se[6] + 0.5 * dU * (fse0 + fn0)
        new[7] = se[7] + 0.5 * dU * (fse1 + fn1)
        new[8] = se[8] + 0.5 * dU * (fse2 + fn2)
        err = 0.0
        for i in range(NF):
            d = abs(new[i] - ne[i]) / (abs(new[i]) + abs(ne[i]) + 1e-300)
            if d > err:
                err = d
            ne[i] = new[i]
        if not _finite(ne):
            return -1
        if err <= tol:
            return it + 1
    return -1


@njit
def diamond(sw, se, nw, dU, dv, ne, tol, maxit):
    """Fill ``ne`` from the other three corners of a null rectangle.

    Values use X_NE = X_NW + X_SE - X_SW + F(center) dU dv with the center
    state taken as the corner average. U-derivatives are carried up the new
    column (trapezoid in v), v-derivatives across the strip (trapezoid in U).
    Returns the iteration count, or -1 if the fixed point did not converge or
    left the domain w > 0.
    """
    if dv == 0.0:
        for i in range(NF):
            ne[i] = nw[i]
        return 0
    ysw = np.empty(NF)
    yse = np.empty(NF)
    ynw = np.empty(NF)
    yne = np.empty(NF)
    to_renorm(sw, ysw)
    to_renorm(se, yse)
    to_renorm(nw, ynw)
    it = _diamond_r(ysw, yse, ynw, dU, dv, yne, tol, maxit)
    if it < 0:
        for i in range(NF):
            ne[i] = yne[i]
        return -1
    from_renorm(yne, ne)
    return it


@njit
def _h3(y0, d0, y1, d1, h, t):
    # cubic Hermite value and derivative on [0, h] at fraction t
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    val = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    g00 = 6 * t2 - 6 * t
    g10 = 3 * t2 - 4 * t + 1
    g01 = -6 * t2 + 6 * t
    g11 = 3 * t2 - 2 * t
    der = (g00 * y0 + g01 * y1) / h + g10 * d0 + g11 * d1
    return val, der


@njit
def _interp(x0, x1, h, t, out, along):
    # along = 0: states on one column (step in v); along = 1: at equal v (step in U)
    if t == 0.0:
        out[:] = x0
        return
    if t == 1.0:
        out[:] = x1
        return
    y0 = np.empty(NF)
    y1 = np.empty(NF)
    yo = np.empty(NF)
    to_renorm(x0, y0)
    to_renorm(x1, y1)
    f00, f01, f02 = renorm_rhs(y0)
    f10, f11, f12 = renorm_rhs(y1)
    # offsets: derivative along the step, and the transverse derivative
    d = 6 if along == 0 else 3
    o = 3 if along == 0 else 6
    for k in range(3):
        yo[k], yo[d + k] = _h3(y0[k], y0[d + k], y1[k], y1[d + k], h, t)
    yo[o], _ = _h3(y0[o], f00, y1[o], f10, h, t)
    yo[o + 1], _ = _h3(y0[o + 1], f01, y1[o + 1], f11, h, t)
    yo[o + 2], _ = _h3(y0[o + 2], f02, y1[o + 2], f12, h, t)
    # Raychaudhuri: d^2 w along the step = (dw) (ds~) - 2 w (dphi)^2
    dd0 = y0[d] * y0[d + 1] - 2 * y0[0] * y0[d + 2] * y0[d + 2]
    dd1 = y1[d] * y1[d + 1] - 2 * y1[0] * y1[d + 2] * y1[d + 2]
    yo[d], _ = _h3(y0[d], dd0, y1[d], dd1, h, t)
    from_renorm(yo, out)


@njit
def interp_v(x0, x1, h, t, out):
    """Hermite interpolation between two states on one column (separation h in v)."""
    _interp(x0, x1, h, t, out, 0)


@njit
def interp_U(x0, x1, h, t, out):
    """Hermite interpolation between two states at equal v (separation h in U)."""
    _interp(x0, x1, h, t, out, 1)


@njit
def march(prev_v, prev_x, k0, n_prev, dU, out_v, out_x, count,
          w_stop, max_dw, eta, max_ds, dv_min, eta_U, max_ds_U, w_floor_U,
          tol, maxit, h_init, w_cut):
    """Advance a new column alongside ``prev`` starting from prev node ``k0``.

    ``out_x[count-1]`` must hold the new column's state at ``prev_v[k0]``.
    Steps in v are chosen adaptively inside each interval of ``prev``.
    Columns used only as scaffolding stop at the first prev node with
    w < ``w_cut`` (pass 0 to disable).
    Returns (status, k, count, h_last).
    """
    sw = np.empty(NF)
    se = np.empty(NF)
    ne = np.empty(NF)
    k = k0
    h = h_init
    cap = out_x.shape[0]
    while k < n_prev - 1:
        nw = out_x[count - 1]
        if nw[0] < w_cut:
            return REACHED_RMIN, k, count, h
        # U-resolution check at interval start, where SW is a genuine prev node
        if eta_U > 0.0 and nw[0] >= w_floor_U:
            sw0 = prev_x[k]
            if abs(sw0[0] - nw[0]) > eta_U * nw[0] or abs(sw0[1] - nw[1]) > max_ds_U \
                    or abs(sw0[2] - nw[2]) > max_ds_U:
                return REFINE_U, k, count, h
        if count + 2 >= cap:
            return NEED_SPACE, k, count, h
        c_start = count
        va = prev_v[k]
        H = prev_v[k + 1] - va
        pos = 0.0
        if h > H or h <= 0.0:
            h = H
        while pos < H:
            if count + 2 >= cap:
                # resume is only supported from interval boundaries; back up
                return NEED_SPACE, k, c_start, h
            step = min(h, H - pos)
            last = False
            if H - (pos + step) < 1e-9 * H:
                step = H - pos
                last = True
            t0 = pos / H
            t1 = 1.0 if last else (pos + step) / H
            interp_v(prev_x[k], prev_x[k + 1], H, t0, sw)
            interp_v(prev_x[k], prev_x[k + 1], H, t1, se)
            nw = out_x[count - 1]
            it = diamond(sw, se, nw, dU, step, ne, tol, maxit)
            ok = it >= 0 and ne[0] > 0.0
            ratio = 0.0
            if ok:
                dw = abs(ne[0] - nw[0])
                wm = min(ne[0], nw[0])
                ratio = max(dw / max_dw, dw / (eta * wm),
                            abs(ne[1] - nw[1]) / max_ds, abs(ne[2] - nw[2]) / max_ds)
                ok = ratio <= 1.0
            if not ok:
                h = 0.5 * step
                if h < dv_min:
                    return STEP_UNDERFLOW, k, count, h
                continue
            if ne[0] < w_stop:
                return REACHED_RMIN, k, count, h
            out_x[count, :] = ne
            out_v[count] = va + pos + step
            count += 1
            pos += step
            if last:
                pos = H
                out_v[count - 1] = prev_v[k + 1]
            if ratio < 0.3:
                h = 2.0 * step
            else:
                h = step
        k += 1
    return PREV_END, k, count, h


@njit
def advance_strip(prev_v, prev_x, dU, bottom, depth, max_depth, base_dv,
                  w_stop, max_dw, eta, max_ds, dv_min, eta_U, max_ds_U, w_floor_U,
                  tol, maxit, w_cut):
    """Build the column at U_prev + dU from the column ``prev``.

    Strips that fail the U-resolution test are halved recursively. The
    intermediate column of a split only serves as ``prev`` for the right half,
    so it is cut off once w is below half of |d_U w| dU/2 (or below
    w_floor_U / 4); if the right half then runs out of ``prev``, the rest of
    this column is marched on the unsplit strip. Returns (v, x, status, n_sub).
    """
    n = prev_v.shape[0]
    cap = 2 * n + 64
    out_v = np.empty(cap)
    out_x = np.empty((cap, NF))
    out_v[0] = prev_v[0]
    out_x[0, :] = bottom
    count = 1
    k = 0
    h = base_dv
    eU = eta_U if depth < max_depth else 0.0
    n_sub = 0
    while True:
        status, k, count, h = march(prev_v, prev_x, k, n, dU, out_v, out_x, count,
                                    w_stop, max_dw, eta, max_ds, dv_min,
                                    eU, max_ds_U, w_floor_U, tol, maxit, h, w_cut)
        if status == NEED_SPACE:
            cap *= 2
            nv = np.empty(cap)
            nx = np.empty((cap, NF))
            nv[:count] = out_v[:count]
            nx[:count, :] = out_x[:count, :]
            out_v = nv
            out_x = nx
            continue
        if status != REFINE_U:
            return out_v[:count].copy(), out_x[:count, :].copy(), status, n_sub
        mid_bottom = np.empty(NF)
        interp_U(prev_x[k], out_x[count - 1], dU, 0.5, mid_bottom)
        # the mid column feeds only the right half, where it has w >= |d_U w| dU/2
        cut = max(w_cut, 0.25 * w_floor_U, 0.5 * abs(out_x[count - 1, 3]) * 0.5 * dU)
        mv, mx, _, s1 = advance_strip(prev_v[k:], prev_x[k:], 0.5 * dU, mid_bottom,
                                      depth + 1, max_depth, base_dv, w_stop, max_dw, eta,
                                      max_ds, dv_min, eta_U, max_ds_U, w_floor_U, tol, maxit,
                                      cut)
        rv, rx, st, s2 = advance_strip(mv, mx, 0.5 * dU, out_x[count - 1].copy(),
                                       depth + 1, max_depth, base_dv, w_stop, max_dw, eta,
                                       max_ds, dv_min, eta_U, max_ds_U, w_floor_U, tol, maxit,
                                       w_cut)
        n_sub += s1 + s2 + 1
        m = rv.shape[0]
        need = count + m - 1 + 2 * (n - k) + 64
        if need > cap:
            cap = need
            nv = np.empty(cap)
            nx = np.empty((cap, NF))
            nv[:count] = out_v[:count]
            nx[:count, :] = out_x[:count, :]
            out_v = nv
            out_x = nx
        out_v[count:count + m - 1] = rv[1:]
        out_x[count:count + m - 1, :] = rx[1:, :]
        count += m - 1
        v_end = out_v[count - 1]
        if st != PREV_END or v_end >= prev_v[n - 1]:
            return out_v[:count].copy(), out_x[:count, :].copy(), st, n_sub
        # the scaffolding column ran out: carry on with the unsplit strip
        k2 = np.searchsorted(prev_v, v_end)
        if k2 >= n or prev_v[k2] != v_end:
            return out_v[:count].copy(), out_x[:count, :].copy(), REACHED_RMIN, n_sub
        k = k2
        eU = 0.0
