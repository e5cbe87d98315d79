import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hc_pair, random_hermitian, single_carbon
from spincool.analysis import (
    FitError,
    RelaxivityModel,
    apply_relaxivity,
    cooling_report,
    enhancement_factors,
    fit_relaxivity,
    fit_t1,
    ir_model,
    multiplet,
    ratio_table,
    report_csv,
    report_text,
    spectrum_csv,
    stick_spectrum,
)
from spincool.config import build_spin_system, load_molecule
from spincool.core import SpinState, polarizations, thermal_state, zero_state
from spincool.dynamics import Pulse, apply_pulse
from spincool.sequences import hcc_relay, plan_for, potent, run_program

TAU = np.geomspace(0.5, 250, 17)
T1_TABLE = {
    "glycine": {"C1": 31.6, "C2": 3.75, "H2a": 2.72},
    "glutamate": {"C1": 13.03, "C2": 1.96, "H2": 1.29, "H3a": 1.001, "H4a": 1.281},
    "glutamate_gd": {"C1": 10.2, "C2": 1.84, "H2": 1.10, "H3a": 0.920, "H4a": 1.160},
    "glutamate_gd_310": {"C1": 14.36, "C2": 2.66, "H2": 1.50, "H3a": 1.270, "H4a": 1.606},
}
T1_ERRORS = {"C1": 0.1, "C2": 0.02, "H2": 0.01, "H3a": 0.003, "H4a": 0.001}


def synthetic(t1, tau=TAU, amplitude=1.0, eq=1.0):
    return list(zip(tau, ir_model(tau, t1, amplitude, eq)))


# -- T1 fits ------------------------------------------------------------------------------


def test_noiseless_fit():
    fit = fit_t1(synthetic(31.6))
    assert fit.converged
    assert fit.t1 == pytest.approx(31.6, rel=1e-3)
    assert fit.amplitude == pytest.approx(1.0, abs=1e-8)
    assert fit.residual < 1e-9


def test_noisy_fits_stay_within_three_percent():
    clean = ir_model(TAU, 31.6, 1.0, 1.0)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fit = fit_t1(list(zip(TAU, clean + 0.01 * rng.standard_normal(TAU.size))))
        worst = max(worst, abs(fit.t1 / 31.6 - 1))
    assert worst < 0.03


def test_imperfect_inversion_recovered():
    fit = fit_t1(synthetic(2.0, np.geomspace(0.05, 20, 12), amplitude=0.93, eq=3.977))
    assert (fit.t1, fit.amplitude, fit.equilibrium) == pytest.approx((2.0, 0.93, 3.977), rel=1e-8)


@pytest.mark.parametrize(
    "curve, msg",
    [
        ([(1.0, -1.0), (2.0, 0.0)], "at least 3"),
        ([(1.0, 0.5), (2.0, 0.5), (3.0, 0.5)], "degenerate"),
        ([(1.0, -1.0), (1.0, 0.0), (3.0, 0.5)], "distinct"),
    ],
)
def test_fit_errors(curve, msg):
    with pytest.raises(FitError, match=msg):
        fit_t1(curve)


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(1e-3, 1e3), t1=st.floats(0.5, 40))
def test_fit_is_scale_equivariant(scale, t1):
    curve = synthetic(t1)
    a = fit_t1(curve)
    b = fit_t1([(t, scale * e) for t, e in curve])
    assert b.t1 == pytest.approx(a.t1, rel=1e-6)
    assert b.equilibrium == pytest.approx(scale * a.equilibrium, rel=1e-6)


# -- enhancement and reports ----------------------------------------------------------------


def test_thermal_factors_are_one(glycine):
    np.testing.assert_allclose(enhancement_factors(thermal_state(glycine), glycine), 1.0, atol=1e-9)


def test_inverted_carbon_factor(glycine):
    st = apply_pulse(thermal_state(glycine), glycine, Pulse("C1", 180))
    assert enhancement_factors(st, glycine)[2] == pytest.approx(-1.0, abs=1e-12)


def test_relay_factor_in_measured_bracket(glycine):
    st = run_program(hcc_relay(glycine, plan_for(glycine)), glycine)
    assert 3.0 <= enhancement_factors(st, glycine)[2] <= 3.977


def test_report_contents(glycine):
    st = run_program(hcc_relay(glycine, plan_for(glycine)), glycine)
    report = cooling_report(st, glycine, metadata={"sample": "G"})
    assert report.factor("C1") == pytest.approx(enhancement_factors(st, glycine)[2])
    assert report.spin_temperatures[2] == pytest.approx(297.0 / report.factor("C1"))
    rows = report_csv(report).splitlines()
    assert rows[0] == "spin,factor,temperature_K"
    assert rows[3].startswith("C1,")
    text = report_text(report)
    assert "bypassed_shannon = " in text
    assert "meta.sample = G" in text


def test_equilibrium_report(glycine):
    report = cooling_report(thermal_state(glycine), glycine)
    np.testing.assert_allclose(report.factors, 1.0, atol=1e-9)
    assert report.entropy_change == 0.0
    assert not report.bypassed_shannon


def test_negative_factor_has_infinite_temperature(glycine):
    st = apply_pulse(thermal_state(glycine), glycine, Pulse("C1", 180))
    assert math.isinf(cooling_report(st, glycine).spin_temperatures[2])


# -- relaxivity ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def gd_model():
    e, em = load_molecule("glutamate"), load_molecule("glutamate_gd")
    base = {s.label: s.t1 for s in e.spins}
    return fit_relaxivity(base, {s.label: s.t1 for s in em.spins}, 0.05)


def test_carbonyl_relaxivity(gd_model):
    assert gd_model.r1["C1"] == pytest.approx(0.426, abs=5e-4)
    assert gd_model.t1_at("C1", 0.05) == pytest.approx(10.2, abs=1e-9)


def test_relaxivity_round_trips_table(gd_model, glutamate):
    shifted = apply_relaxivity(glutamate, gd_model, 0.05)
    for label, t1 in T1_TABLE["glutamate_gd"].items():
        assert shifted.t1[shifted.index(label)] == pytest.approx(t1, abs=T1_ERRORS[label])


def test_zero_concentration_is_identity(gd_model, glutamate):
    assert apply_relaxivity(glutamate, gd_model, 0.0) is glutamate


def test_one_millimolar_extrapolation(gd_model, glutamate):
    shifted = apply_relaxivity(glutamate, gd_model, 1.0)
    assert shifted.t1[shifted.index("C1")] == pytest.approx(1 / (1 / 13.03 + 0.4259), rel=1e-3)
    assert shifted.t1[shifted.index("C1")] == pytest.approx(1.99, abs=0.005)
    # T2 follows T1
    np.testing.assert_allclose(shifted.t2 / glutamate.t2, shifted.t1 / glutamate.t1)


@settings(max_examples=30, deadline=None)
@given(c1=st.floats(0, 5), c2=st.floats(0, 5))
def test_relaxivity_is_monotone(gd_model, glutamate, c1, c2):
    lo, hi = sorted((c1, c2))
    if hi - lo < 1e-6:
        return
    a, b = apply_relaxivity(glutamate, gd_model, lo), apply_relaxivity(glutamate, gd_model, hi)
    for label, r in gd_model.r1.items():
        i = glutamate.index(label)
        if r > 0:
            assert b.t1[i] < a.t1[i]


def test_ratios_stay_similar_with_agent(gd_model, glutamate):
    before = ratio_table(glutamate, "H2")[("C1", "H2")]
    after = ratio_table(apply_relaxivity(glutamate, gd_model, 0.05), "H2")[("C1", "H2")]
    assert abs(after / before - 1) < 0.10


def test_relaxivity_validation(glutamate, gd_model):
    with pytest.raises(ValueError):
        RelaxivityModel({"C1": -0.1}, {"C1": 13.0})
    with pytest.raises(ValueError):
        apply_relaxivity(glutamate, gd_model, -1.0)
    with pytest.raises(ValueError):
        fit_relaxivity({"C1": 13.0}, {"C1": 10.0}, 0.0)


# -- ratio tables --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "molecule, reset, expected",
    [
        ("glycine", "H2a", {"C1": (11.6, 0.3), "C2": (1.38, 0.03)}),
        ("glutamate", "H2", {"C1": (10.1, 0.2), "C2": (1.52, 0.04)}),
        ("glutamate_gd", "H2", {"C1": (9.3, 0.2), "C2": (1.67, 0.03)}),
        ("glutamate_gd_310", "H2", {"C1": (9.6, 0.1), "C2": (1.77, 0.04)}),
    ],
)
def test_ratio_tables(molecule, reset, expected):
    table = ratio_table(build_spin_system(load_molecule(molecule)), reset)
    assert len(table) == 2
    for label, (value, err) in expected.items():
        assert table[(label, reset)] == pytest.approx(value, abs=err)


def test_single_spin_ratio_table_is_empty():
    assert len(ratio_table(single_carbon(), "C")) == 0


# -- stick spectra ---------------------------------------------------------------------------


def test_thermal_doublet(hc):
    lines = stick_spectrum(thermal_state(hc), hc, "C13")
    assert [f for f, _ in lines] == pytest.approx([-70.0, 70.0])
    assert [a for _, a in lines] == pytest.approx([0.5, 0.5], abs=1e-12)


def test_shifted_doublet_and_decoupling():
    s = hc_pair(shifts=(0.0, 250.0))
    assert [f for f, _ in stick_spectrum(thermal_state(s), s, "C13")] == pytest.approx([180.0, 320.0])
    ((f, a),) = stick_spectrum(thermal_state(s), s, "C13", decouple="H1")
    assert (f, a) == pytest.approx((250.0, 1.0))


def test_proton_spectrum_of_thermal_pair(hc):
    lines = stick_spectrum(thermal_state(hc), hc, "H1")
    assert sum(a for _, a in lines) == pytest.approx(3.977)


def test_zero_state_has_no_lines(hc):
    assert stick_spectrum(zero_state(2), hc, "C13") == []


def test_transverse_state_has_no_absorptive_lines(hc):
    st = apply_pulse(thermal_state(hc), hc, Pulse("C", 90, 90))
    assert multiplet(st, hc, "C") == []


def test_unknown_species_rejected(hc):
    with pytest.raises(ValueError):
        stick_spectrum(thermal_state(hc), hc, "N15")


@pytest.mark.parametrize("molecule", ["glutamate", "glutamate_gd_310"])
def test_potent_plus_gives_uniform_lines(molecule):
    s = build_spin_system(load_molecule(molecule))
    plan = plan_for(s)
    plain = run_program(potent(s, plan, 3.0, 0.5), s)
    plus = run_program(potent(s, plan, 3.0, 0.5, plus_variant=True), s)
    a_plain = np.array([a for _, a in multiplet(plain, s, "C2")])
    a_plus = np.array([a for _, a in multiplet(plus, s, "C2")])
    assert len(a_plain) == len(a_plus) == 4
    assert a_plain.max() / a_plain.min() > 1.05
    assert a_plus.max() / a_plus.min() < 1.001


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_multiplet_integral_equals_polarization(seed):
    s = build_spin_system(load_molecule("glycine"))
    rho = SpinState(random_hermitian(np.random.default_rng(seed), 16))
    eps = polarizations(rho)
    for i, label in enumerate(s.labels):
        assert sum(a for _, a in multiplet(rho, s, label, tol=0.0)) == pytest.approx(eps[i], abs=1e-9)


def test_spectrum_csv_format(hc):
    text = spectrum_csv(stick_spectrum(thermal_state(hc), hc, "C13"))
    header, *rows = text.splitlines()
    assert header == "frequency_Hz,amplitude"
    values = [float(x) for r in rows for x in r.split(",")]
    assert values == pytest.approx([-70.0, 0.5, 70.0, 0.5])


def test_heteronuclear_only_ratio_table(glycine):
    table = ratio_table(glycine, "H2a")
    assert ("H2b", "H2a") not in table.entries
