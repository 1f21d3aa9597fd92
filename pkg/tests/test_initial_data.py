import math

import numpy as np
import pytest

from nullhorizon.analysis import horizon_oracle_check
from nullhorizon.core import DataError, DomainError, ModelParams
from nullhorizon.initial_data import (AnchorError, IngoingProfile, build_ingoing_data,
                                      check_horizon_corridor, corner_mismatch, gauge_on_H0,
                                      gauge_on_Hbar0, horizon_column,
                                      integrate_horizon_constraint, load_profile_table,
                                      power_law_profile, schwarzschild_dUr0, table_profile)
from nullhorizon.schwarzschild import rS_of_Uv, schwarzschild_array

P = ModelParams(D1=0.05, D2=0.05, D3=0.05, v0=10.0, U0=1e-3)
VACUUM = ModelParams(D1=0.0, D2=0.0, D3=0.0, v0=10.0, U0=1e-3)
V_NODES = np.linspace(10.0, 400.0, 3901)


@pytest.fixture(scope="module")
def horizon():
    return integrate_horizon_constraint(power_law_profile(P), P, V_NODES)


def test_gauge_on_H0():
    p0 = ModelParams(v0=0.0)
    assert gauge_on_H0(4.0, p0) == 1.0
    assert gauge_on_H0(0.0, p0) == pytest.approx(math.exp(-1))
    assert gauge_on_H0(8.0, p0) == pytest.approx(2.718281828459045, rel=1e-15)
    with pytest.raises(DomainError):
        gauge_on_H0(5.0, P)


def test_gauge_on_Hbar0():
    assert gauge_on_Hbar0(0.0, 2.0, ModelParams(v0=4.0)) == pytest.approx(1.0, rel=1e-15)
    assert gauge_on_Hbar0(0.0, 1.0, ModelParams(v0=0.0)) == pytest.approx(2 * math.exp(-0.5))
    r_at = rS_of_Uv(0.0, P.v0, P.M)
    assert gauge_on_Hbar0(0.0, r_at, P) == pytest.approx(gauge_on_H0(P.v0, P), rel=1e-15)
    with pytest.raises(DomainError):
        gauge_on_Hbar0(0.0, 0.0, P)


def test_vacuum_horizon():
    h = integrate_horizon_constraint(power_law_profile(VACUUM), VACUUM, V_NODES, rYphi0=0.01)
    assert np.all(h.r == 2.0) and np.all(h.dvr == 0.0)
    decay = h.r2Yphi * np.exp(V_NODES / 4)
    np.testing.assert_allclose(decay, decay[0], rtol=1e-8)
    assert h.r2Yphi[0] == pytest.approx(0.02)


def test_horizon_matches_oracle():
    chk = horizon_oracle_check(P, V_NODES)
    assert chk.max_rel_dvr <= 1e-6
    assert chk.max_rel_deficit <= 1e-6
    assert chk.max_rel_dUr <= 1e-6


def test_horizon_invariants(horizon):
    h = horizon
    assert np.all(h.r <= 2 * P.M) and np.all(np.diff(h.r) > 0)
    assert np.all(h.dvr > 0)
    assert check_horizon_corridor(power_law_profile(P), P, V_NODES)


def test_dvr_sandwich(horizon):
    x = V_NODES / P.M
    ratio = horizon.dvr / (P.D1**2 * x ** (-2 * P.q))
    band = ratio[(V_NODES >= 2 * P.v0) & (V_NODES <= V_NODES[-1] / 2)]
    assert 0.5 < band.min() and band.max() < 4.0
    dratio = horizon.deficit / (P.M * P.D1**2 * x ** (-2 * P.q + 1))
    assert 0.1 < dratio.min() and dratio.max() < 2.0


def test_Yphi_lower_bound(horizon):
    # r^2 Y phi approaches 4M D1 (v/M)^-q from above
    x = V_NODES / P.M
    ratio = horizon.r2Yphi / (4 * P.M * P.D1 * x ** (-P.q))
    v1 = V_NODES[np.argmax(ratio >= 0.9)]
    assert v1 < 100
    assert np.all(ratio[V_NODES >= v1] >= 0.9)


def test_anchor_residual_error():
    with pytest.raises(AnchorError):
        integrate_horizon_constraint(power_law_profile(P), P, np.linspace(10, 10.5, 6),
                                     anchor_tol=1e-8)


def test_horizon_input_errors():
    with pytest.raises(DataError):
        integrate_horizon_constraint(power_law_profile(P), P, np.linspace(11, 20, 10))
    with pytest.raises(DataError):
        integrate_horizon_constraint(power_law_profile(P), P, np.linspace(10, 3000, 10))


def test_vacuum_slice_is_schwarzschild():
    h = integrate_horizon_constraint(power_law_profile(VACUUM), VACUUM, V_NODES[:50])
    U = np.linspace(0.0, VACUUM.U0, 65)
    sl = build_ingoing_data(IngoingProfile.constant(0.0), h, VACUUM, U)
    exact = np.array([schwarzschild_array(u, VACUUM.v0, 1.0)[0] for u in U])
    np.testing.assert_allclose(sl.x[:, 0], exact[:, 0], rtol=1e-12)
    np.testing.assert_allclose(sl.x[:, 3], exact[:, 3], rtol=1e-9)
    np.testing.assert_allclose(sl.x[:, 6], exact[:, 6], rtol=1e-9, atol=1e-15)
    assert np.all(sl.x[:, 2] == 0.0)
    assert corner_mismatch(sl, horizon_column(h, VACUUM)) < 1e-12


def test_ingoing_constant_profile():
    p = ModelParams(D1=0.01, D2=0.01, D3=0.02, v0=10.0, U0=1e-3)
    h = integrate_horizon_constraint(power_law_profile(p), p, V_NODES[:200])
    U = np.linspace(0.0, p.U0, 129)
    sl = build_ingoing_data(IngoingProfile.constant(0.01), h, p, U)
    assert np.all(np.diff(sl.x[:, 0]) < 0)
    assert sl.x[0, 3] / (2 * math.sqrt(sl.x[0, 0])) == schwarzschild_dUr0(p)
    assert np.all(np.diff(sl.x[:, 2]) > 0)


def test_ingoing_errors(horizon):
    U = np.linspace(0.0, P.U0, 9)
    with pytest.raises(DataError):
        build_ingoing_data(IngoingProfile.constant(0.06), horizon, P, U)
    with pytest.raises(DataError):
        build_ingoing_data(IngoingProfile.constant(-0.01), horizon, P, U)
    with pytest.raises(DataError):
        build_ingoing_data(IngoingProfile.constant(0.01), horizon, P, U[1:])
    with pytest.raises(DataError):
        build_ingoing_data(IngoingProfile.constant(0.01), horizon, P, np.linspace(0, 10.0, 9))


def test_table_profile(tmp_path):
    v = np.geomspace(10, 500, 40)
    path = tmp_path / "tail.txt"
    np.savetxt(path, np.c_[v, 0.05 * v ** -2.0], header="v r*dv_phi")
    prof = load_profile_table(path)
    assert prof.tail_exponent == pytest.approx(2.0, rel=1e-9)
    np.testing.assert_allclose(prof.source(np.array([33.0, 1000.0])),
                               0.05 * np.array([33.0, 1000.0]) ** -2.0, rtol=1e-6)
    with pytest.raises(DataError):
        table_profile(v, np.sin(v))
    with pytest.raises(DataError):
        table_profile(v[::-1], 0.05 * v ** -2.0)
