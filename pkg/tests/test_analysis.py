import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullhorizon.analysis import (DomainError, InsufficientDataError, consistency_2beta,
                                  derived_constants, expint_forward, expint_reverse,
                                  expint_reverse_stated_constant, extract_f1_f2, fit_power_law,
                                  omega_exponent_profile, report_document, select_stations,
                                  station_rates, verify_reverse_gronwall)
from nullhorizon.core import ModelParams
from nullhorizon.evolution import StepControls, evolve

CONTROLS = StepControls(nU=96, u_first=-80, base_dv=0.1, v_max=60)


def _params(D):
    return ModelParams(D1=D, D2=D, D3=D, v0=10, U0=4 * math.exp(-3), r_min=1e-3, r0=0.4)


@pytest.fixture(scope="module")
def vacuum_sheet():
    return evolve(_params(0.0), CONTROLS)


@pytest.fixture(scope="module")
def matter_sheet():
    return evolve(_params(0.05), CONTROLS)


# ---------------------------------------------------------------- fitting

def test_fit_exact_power_law():
    x = np.geomspace(1e-3, 1e-1, 40)
    f = fit_power_law(x, x ** -6.5)
    assert f.exponent == pytest.approx(-6.5, abs=1e-10)
    assert f.stderr < 1e-10


def test_fit_kretschmann_amplitude():
    x = np.geomspace(0.01, 1.0, 30)
    f = fit_power_law(x, 48 / x ** 6)
    assert f.exponent == pytest.approx(-6.0, abs=1e-10)
    assert f.amplitude == pytest.approx(48.0, rel=1e-9)


def test_fit_log_periodic_perturbation():
    x = np.geomspace(1e-4, 1.0, 200)
    f = fit_power_law(x, x ** -6.0 * (1 + 0.01 * np.sin(np.log(x))))
    assert abs(f.exponent + 6.0) < 0.01


@settings(max_examples=100, deadline=None)
@given(k=st.floats(-8.0, 8.0), A=st.floats(1e-3, 1e3))
def test_fit_recovers_synthetic_exponent(k, A):
    x = np.geomspace(0.5, 50.0, 16)
    f = fit_power_law(x, A * x ** k)
    assert f.exponent == pytest.approx(k, abs=1e-10)


def test_fit_window_and_errors():
    x = np.geomspace(1e-3, 1.0, 30)
    y = np.where(x < 0.1, x ** -2.0, x ** -3.0)
    f = fit_power_law(x, y, window=(1e-3, 0.09))
    assert f.exponent == pytest.approx(-2.0, abs=1e-10)
    with pytest.raises(InsufficientDataError):
        fit_power_law(x[:7], y[:7])
    with pytest.raises(InsufficientDataError):
        fit_power_law(x, y, window=(0.5, 0.6))
    with pytest.raises(DomainError):
        fit_power_law(x, -y)


# ---------------------------------------------------------------- profiles

def test_vacuum_exponents(vacuum_sheet):
    for rate in station_rates(vacuum_sheet, [20, 30, 40]):
        assert rate.N == pytest.approx(6.0, abs=0.02)
        assert rate.N_literal.exponent == pytest.approx(6.0, abs=0.02)
        assert rate.beta == pytest.approx(0.0, abs=1e-12)
        assert rate.beta_literal.exponent == pytest.approx(0.0, abs=1e-4)
        assert rate.beta_literal.amplitude == pytest.approx(1.0, rel=2e-3)


def test_vacuum_omega_limit(vacuum_sheet):
    for rec in omega_exponent_profile(vacuum_sheet, [-40.0, -60.0], r_fit_max=0.1):
        assert rec["rOmega2_at_rmin"] == pytest.approx(2.0, abs=5e-3)
        assert abs(rec["alpha"]) < 1e-3


def test_vacuum_f_limits(vacuum_sheet):
    # zero in the continuum; what remains is the discretisation offset of m at this resolution
    for s in extract_f1_f2(vacuum_sheet, stride=16):
        assert abs(s.f1) < 2e-3 and abs(s.f2) < 2e-3


def test_matter_exponents(matter_sheet):
    rates = station_rates(matter_sheet, [20, 30, 40])
    N6 = [r.N - 6 for r in rates]
    assert all(d > 0 for d in N6)
    assert N6[0] > N6[1] > N6[2]
    assert all(r.beta > 0 for r in rates)
    for r in rates:
        diff, err = consistency_2beta(r)
        assert diff <= 3 * err


def test_station_order_invariance(matter_sheet):
    a = station_rates(matter_sheet, [20, 40, 30])
    b = station_rates(matter_sheet, [40, 30, 20])
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    sa = select_stations(matter_sheet, [20, 40])
    sb = select_stations(matter_sheet, [40, 20])
    assert sa == sb[::-1]


def test_report_document_is_json_clean(matter_sheet):
    import json
    doc = report_document(matter_sheet)
    text = json.dumps(doc, allow_nan=False)
    assert "stations" in doc and "fits" in doc and "audits" in doc
    assert json.loads(text)["params"]["D1"] == 0.05


# ---------------------------------------------------------------- oracles

GRID = list(itertools.product([0.05, 0.25, 1.0, 4.0], [0.5, 1.0, 2.0, 3.5], [0.5, 2.0, 10.0]))


@pytest.mark.parametrize("alpha,p,a", GRID)
def test_expint_forward_bound(alpha, p, a):
    val, bound = expint_forward(alpha, p, a)
    assert val <= bound * (1 + 1e-12)


@pytest.mark.parametrize("alpha,p,a", GRID)
def test_expint_reverse_bound(alpha, p, a):
    for b in (a + 1.0, 4 * a, 100.0 + a):
        val, bound = expint_reverse(alpha, p, a, b)
        assert val <= bound * (1 + 1e-12)


def test_stated_reverse_constant_counterexample():
    # bounding x^{-p-1} by its value at the upper limit is not valid
    alpha, p, a, b = 0.05, 0.5, 0.5, 100.0
    val, _ = expint_reverse(alpha, p, a, b)
    stated = expint_reverse_stated_constant(alpha, p, b) * b ** (-p) / alpha
    assert val > stated


def test_reverse_gronwall_constructed():
    t = np.linspace(0.0, 5.0, 2001)
    beta = 1.0 / (1.0 + t)
    exact = 2.0 * (1.0 + t)
    # equality is the boundary case, so allow for the trapezoid error in int beta
    assert verify_reverse_gronwall(t, exact, beta, 2.0, rtol=1e-5).conclusion_holds
    bigger = verify_reverse_gronwall(t, exact + t ** 2, beta, 2.0)
    assert bigger.hypothesis_holds and bigger.conclusion_holds and bigger.min_margin >= 0
    smaller = verify_reverse_gronwall(t, exact - 0.1 * t, beta, 2.0)
    assert not smaller.hypothesis_holds and not smaller.conclusion_holds
    with pytest.raises(DomainError):
        verify_reverse_gronwall(t, -exact, beta, 2.0)


def test_derived_constants():
    c = derived_constants(ModelParams(D1=0.04, D2=0.05))
    assert c["Delta1"] == 0.05 and c["epsilon"] == pytest.approx(0.004)
    assert c["D1_tilde"] == pytest.approx(0.4)
    assert c["D1_prime"] == pytest.approx((3 - 2 * math.sqrt(2)) * 0.036)
