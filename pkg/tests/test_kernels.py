import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from nullhorizon import kernels as K
from nullhorizon.schwarzschild import schwarzschild_array


def _corners(U, v, dU, dv, M=1.0):
    sw, nw = schwarzschild_array(U, [v, v + dv], M)
    se, ne = schwarzschild_array(U + dU, [v, v + dv], M)
    return sw, se, nw, ne


def test_renorm_round_trip():
    x = schwarzschild_array(1e-3, [12.0], 1.0)[0]
    y, back = np.empty(9), np.empty(9)
    K.to_renorm(x, y)
    K.from_renorm(y, back)
    np.testing.assert_allclose(back, x, rtol=1e-14)


def test_cross_rhs_on_schwarzschild():
    # d_U d_v w = -Omega_hat^2 / 2 exactly; sigma source matches its closed form
    U, v, h = 2e-3, 12.0, 1e-5
    x = schwarzschild_array(U, [v], 1.0)[0]
    d2w, d2s, d2p = K.cross_rhs(x)
    assert d2w == pytest.approx(-0.5 * math.exp(x[1]), rel=1e-15)
    assert d2p == 0.0
    fd = (schwarzschild_array(U + h, [v], 1.0)[0][7] - schwarzschild_array(U - h, [v], 1.0)[0][7]) / (2 * h)
    assert d2s == pytest.approx(fd, rel=1e-6)


def test_diamond_third_order_local_error():
    U, v = 1e-3, 12.0
    errs = []
    for h in (0.2, 0.1, 0.05):
        sw, se, nw, exact = _corners(U, v, h * 1e-3, h)
        ne = np.empty(9)
        assert K.diamond(sw, se, nw, h * 1e-3, h, ne, 1e-14, 20) > 0
        errs.append(abs(ne[0] - exact[0]) / exact[0])
    order = math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])
    assert min(order) > 2.7
    assert errs[-1] < 1e-9


def test_diamond_zero_step_and_failure():
    sw, se, nw, _ = _corners(1e-3, 12.0, 1e-4, 0.1)
    ne = np.empty(9)
    assert K.diamond(sw, se, nw, 1e-4, 0.0, ne, 1e-14, 20) == 0
    np.testing.assert_array_equal(ne, nw)
    # a cell with dU dv far beyond w / Omega_hat^2 would push w negative
    assert K.diamond(sw, se, nw, 1.0, 10.0, ne, 1e-14, 20) == -1


CHILD = r"""
import json, math
import numpy as np
from nullhorizon import _accel
from nullhorizon.core import ModelParams
from nullhorizon.evolution import evolve, StepControls
P = ModelParams(D1=0.05, D2=0.05, D3=0.05, v0=10, U0=1e-3, r_min=0.1, r0=0.4)
S = evolve(P, StepControls(nU=6, U_spacing="uniform", base_dv=0.5, v_max=14.0))
x = np.concatenate([c.x for c in S.columns])
print(json.dumps({"jit": _accel.HAVE_NUMBA, "x": x.ravel().tolist()}))
"""


def _child(disable):
    env = dict(os.environ)
    env.pop("NULLHORIZON_DISABLE_JIT", None)
    if disable:
        env["NULLHORIZON_DISABLE_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", CHILD], env=env, capture_output=True,
                         text=True, check=True, timeout=600)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_jit_and_fallback_agree():
    fast, slow = _child(False), _child(True)
    assert slow["jit"] is False
    a, b = np.array(fast["x"]), np.array(slow["x"])
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)
