import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullhorizon.core import DomainError
from nullhorizon.diagnostics import hawking_mass, kretschmann
from nullhorizon.schwarzschild import (rS_of_Uv, schwarzschild_kretschmann,
                                       schwarzschild_state, solve_rS, tortoise)


def test_tortoise_examples():
    assert tortoise(1e-12, 1.0) == pytest.approx(0.0, abs=1e-11)
    oracle = float(1 - 4 * mpmath.log(2) / 2)
    assert tortoise(1.0, 1.0) == pytest.approx(oracle, rel=1e-14)
    near = tortoise(np.array([2 - 1e-3, 2 - 1e-6, 2 - 1e-12]), 1.0)
    assert np.all(np.diff(near) < 0) and near[-1] < -50


@pytest.mark.parametrize("r", [0.0, 2.0, -1.0, 3.0])
def test_tortoise_domain(r):
    with pytest.raises(DomainError):
        tortoise(r, 1.0)


def test_tortoise_against_mpmath():
    mpmath.mp.dps = 40
    for r in np.linspace(0.01, 1.99, 23):
        want = mpmath.mpf(r) + 2 * mpmath.log((2 - mpmath.mpf(r)) / 2)
        assert tortoise(r, 1.0) == pytest.approx(float(want), rel=1e-14, abs=1e-15)


def test_solve_rS_examples():
    pt = solve_rS(2 * (1 - 2 * math.log(2)), 0.0, 1.0)
    assert pt.rS == pytest.approx(1.0, rel=1e-13)
    assert pt.omega2S == pytest.approx(1.0, rel=1e-12)
    assert pt.durS == pt.dvrS == -0.5 * pt.omega2S
    assert solve_rS(-1e-10, 0.0, 1.0).rS < 1e-4
    assert solve_rS(-400.0, 0.0, 1.0).rS == pytest.approx(2.0, abs=1e-30)
    with pytest.raises(DomainError):
        solve_rS(0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        solve_rS(1.0, 2.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(r=st.floats(1e-6, 2 - 1e-9), M=st.floats(0.5, 3.0))
def test_solve_rS_inverts_tortoise(r, M):
    rr = r * M
    s = 2 * tortoise(rr, M)
    pt = solve_rS(s, 0.0, M)
    assert abs(tortoise(pt.rS, M) - s / 2) <= 1e-13 * M * max(1.0, abs(s))


def test_kretschmann_examples():
    assert schwarzschild_kretschmann(2.0, 1.0) == 0.75
    assert schwarzschild_kretschmann(1.0, 1.0) == 48.0
    for r, M in [(0.3, 1.0), (1.7, 2.5), (5e-3, 0.1)]:
        assert schwarzschild_kretschmann(r, M) * r**6 / M**2 == pytest.approx(48.0, rel=1e-14)
    with pytest.raises(DomainError):
        schwarzschild_kretschmann(0.0, 1.0)


def test_regular_gauge_relation():
    # (r/2M) Omega_S^2 = e^{-r/2M} e^{(v - |u|)/4M}
    for u, v in [(-20.0, 5.0), (-3.0, 1.0), (-50.0, 49.5)]:
        pt = solve_rS(u, v, 1.0)
        assert pt.rS / 2 * pt.omega2S == pytest.approx(
            math.exp(-pt.rS / 2) * math.exp((v - abs(u)) / 4), rel=1e-12)


@pytest.mark.parametrize("M", [1.0, 2.0])
def test_state_mass_and_kretschmann(M):
    for U, v in [(1e-3, 10 * M), (0.05 * M, 15 * M), (M, 2 * M)]:
        s = schwarzschild_state(U, v, M)
        assert hawking_mass(s) == pytest.approx(M, rel=1e-12)
        assert kretschmann(s) == pytest.approx(48 * M**2 / s.r**6, rel=1e-10)


def test_raychaudhuri_fd():
    # d_u(r d_v r) + Omega_S^2 / 4 = 0 in the (u, v) gauge
    v, h = 6.0, 2e-3

    def rdvr(uu):
        pt = solve_rS(uu, v, 1.0)
        return pt.rS * pt.dvrS

    for u in (-30.0, -10.0, -6.5):
        d = (8 * (rdvr(u + h) - rdvr(u - h)) - (rdvr(u + 2 * h) - rdvr(u - 2 * h))) / (12 * h)
        assert abs(d + solve_rS(u, v, 1.0).omega2S / 4) < 1e-10


def test_rS_of_Uv_horizon_and_vectorised():
    assert rS_of_Uv(0.0, 10.0, 1.0) == 2.0
    U = np.array([1e-4, 1e-3, 1e-2])
    got = rS_of_Uv(U, 10.0, 1.0)
    u = 4 * np.log(U / 4)
    np.testing.assert_allclose(got, [solve_rS(x, 10.0, 1.0).rS for x in u], rtol=1e-13)
    assert np.all(np.diff(got) < 0)
