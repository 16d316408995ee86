"""Pulse-protocol orchestration: plans, heating correction, gains, vacuum extraction."""
import math
import warnings

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from optoqubit.gaussdyn import analytic_lossless
from optoqubit.params import ConfigError
from optoqubit.protocol import (CalibrationError, CalibrationWarning, CoolingWarning, ExperimentPlan,
                                GainCalibration, OverCorrectionWarning, Preparation, calibrate_gains,
                                calibrate_heating, detector_comparison, effective_linewidth,
                                extract_vacuum, fit_through_origin, heating_correction, load_plan,
                                load_run, plan_to_doc, prepare_mechanics, run_interaction_sweep, run_shot)

TWO_PI = 2 * math.pi

PLAN_DOC = {
    "interaction": {"pump": "blue", "g/2pi": "198 kHz", "n_p": 3.8e5, "theta": "1pi",
                    "sigma": "200 ns", "delay": "100 ns", "cutoff": 3},
    "preparation": {"cool_n_p": 5e5, "alpha_sq": 4.0},
    "readout": {"contrast": 0.51, "noise": 0.01, "tau": {"start": "0 ns", "stop": "200 ns", "num": 51}},
    "sweep": {"theta": ["0.5pi", "1pi"], "alpha_sq": {"start": 0, "stop": 25, "num": 6}},
    "seed": 4,
}


def test_plan_parsing():
    plan, run = load_plan(PLAN_DOC)
    assert plan.interaction == "squeezer"
    assert plan.g == pytest.approx(TWO_PI * 198e3)
    assert plan.theta == pytest.approx(math.pi)
    assert plan.theta_grid == pytest.approx((math.pi / 2, math.pi))
    assert plan.alpha_sq_grid == pytest.approx((0, 5, 10, 15, 20, 25))
    assert plan.preparation.alpha_sq == 4.0
    assert len(plan.readout.tau) == 51
    assert run == {"seed": 4}


def test_plan_from_file_resolves_device_path(tmp_path):
    doc = dict(PLAN_DOC, device="dev.yaml")
    (tmp_path / "plan.yaml").write_text(yaml.safe_dump(doc))
    _, run = load_plan(tmp_path / "plan.yaml")
    assert run["device"] == tmp_path / "dev.yaml"


@pytest.mark.parametrize("patch,key", [
    ({"interaction": {"pump": "green"}}, "interaction.pump"),
    ({"interaction": {"theta": "lots"}}, "interaction.theta"),
    ({"sweep": {"alpha_sq": {"start": 0, "stop": 1}}}, "sweep.alpha_sq.num"),
    ({"interaction": {"g/2pi": "-5 kHz"}}, "interaction"),
])
def test_plan_errors_name_the_key(patch, key):
    with pytest.raises(ConfigError) as err:
        load_plan(patch)
    assert err.value.key == key


def test_plan_digest_is_stable():
    a, _ = load_plan(PLAN_DOC)
    b, _ = load_plan(PLAN_DOC)
    assert a.digest() == b.digest()
    assert a.digest() != a.other_side().digest()
    assert plan_to_doc(a)["interaction"] == "squeezer"


def test_interaction_time():
    plan = ExperimentPlan(g=TWO_PI * 198e3)
    assert plan.interaction_time() == pytest.approx(math.pi / (2 * TWO_PI * 198e3))


def test_precooling_reaches_a_quarter_quantum(params, baths):
    prep = prepare_mechanics(ExperimentPlan(), params, baths)
    assert prep.cooled_below_one
    assert prep.state.n_m == pytest.approx(0.25, abs=0.02)
    assert prep.state.n_c == 0.0


def test_displacement_preparation_hits_target(params, baths):
    prep = prepare_mechanics(ExperimentPlan(), params, baths, alpha_sq=9.0)
    assert abs(prep.state.alpha_m) ** 2 == pytest.approx(9.0, rel=1e-10)


def test_weak_precooling_warns(params, baths):
    plan = ExperimentPlan(preparation=Preparation(cool_n_p=10.0))
    with pytest.warns(CoolingWarning):
        prep = prepare_mechanics(plan, params, baths)
    assert not prep.cooled_below_one


def test_heating_correction_formula():
    out = heating_correction(1.0, 0.3, 2.0, 0.5)
    assert out == pytest.approx(1.0 - 0.3 * (1 - math.exp(-1.0)))


def test_heating_correction_clips_with_warning():
    with pytest.warns(OverCorrectionWarning):
        assert heating_correction(0.01, 1.0, 1e6, 1e-3) == 0.0
    with pytest.raises(ValueError):
        heating_correction(1.0, 0.1, 1.0, -1.0)


@settings(max_examples=40)
@given(st.floats(0, 10), st.floats(0, 1), st.floats(0, 1), st.floats(1e3, 1e7), st.floats(0, 1e-5))
def test_heating_correction_is_monotone_in_bath(n, a, b, k, t):
    lo, hi = sorted((a, b))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverCorrectionWarning)
        assert heating_correction(n, hi, k, t) <= heating_correction(n, lo, k, t)


def test_effective_linewidth(params):
    red = ExperimentPlan(interaction="beam_splitter")
    kappa = float(params.kappa_at(red.n_p))
    assert effective_linewidth(red, params) == pytest.approx(kappa / 2)
    assert effective_linewidth(red.other_side(), params) == pytest.approx(kappa)


def test_apparent_heating_is_a_fraction_of_the_bath(params, baths):
    plan = ExperimentPlan()
    n_int = calibrate_heating(plan, params, baths)
    assert 0 < n_int < float(baths.n_int_at(plan.n_p))


def test_fit_through_origin_exact():
    slope, se, r2 = fit_through_origin([1, 2, 3], [2, 4, 6])
    assert slope == pytest.approx(2) and se == pytest.approx(0, abs=1e-12) and r2 == pytest.approx(1)
    with pytest.raises(CalibrationError):
        fit_through_origin([0, 0], [1, 2])


@pytest.mark.parametrize("grid", [(), (0.0, 0.0)])
def test_degenerate_calibration_is_rejected(params, baths, grid):
    with pytest.raises(CalibrationError):
        calibrate_gains(ExperimentPlan(), params, baths, alpha_sq_grid=grid)


def test_lossless_gains_and_bounds():
    g = GainCalibration.lossless(math.pi)
    assert g.G_minus == pytest.approx(1.0) and g.G_plus == pytest.approx(math.sinh(math.pi / 2) ** 2)
    with pytest.warns(CalibrationWarning):
        GainCalibration(1.5, 1.0, math.pi, (0, 1))
    with pytest.raises(CalibrationError):
        GainCalibration(0.0, 1.0, math.pi, (0, 1))


def test_lossy_gains_are_below_lossless(params, baths):
    gains = calibrate_gains(ExperimentPlan(), params, baths, alpha_sq_grid=(5.0, 15.0))
    assert 0 < gains.G_minus < 1
    assert 0 < gains.G_plus < math.sinh(math.pi / 2) ** 2
    assert gains.r2_minus > 0.999 and gains.r2_plus > 0.999


def test_lossless_sweep_matches_closed_form(params, baths):
    plan = ExperimentPlan(theta_grid=tuple(np.linspace(0, 2 * math.pi, 5)), preparation=Preparation(alpha_sq=4.0))
    sweep = run_interaction_sweep(plan, params, baths, mode="lossless")
    n_m = prepare_mechanics(plan, params, baths, 0.0).state.n_m
    for th, n_c in zip(sweep.theta, sweep.n_c):
        assert n_c == pytest.approx(analytic_lossless(th, "beam_splitter", 0.0, n_m, 0, 2.0).n_c)
    assert set(sweep.columns()) >= {"theta", "n_c", "occupancy_c"}


def test_sweep_needs_theta_grid(params, baths):
    with pytest.raises(ValueError):
        run_interaction_sweep(ExperimentPlan(), params, baths)


def test_lossless_extraction_gives_exactly_one(params, baths):
    plan = ExperimentPlan(alpha_sq_grid=(0.0, 10.0, 25.0))
    ex = extract_vacuum(plan, GainCalibration.lossless(plan.theta), params, baths, mode="lossless")
    np.testing.assert_allclose(ex.difference, 1.0, atol=1e-12)
    np.testing.assert_allclose(ex.referred_minus, ex.n_m_initial + np.array(plan.alpha_sq_grid), rtol=1e-12)


def test_extraction_ignores_plan_side(params, baths):
    plan = ExperimentPlan(alpha_sq_grid=(4.0,))
    gains = GainCalibration.lossless(plan.theta)
    a = extract_vacuum(plan, gains, params, baths, mode="lossless")
    b = extract_vacuum(plan.other_side(), gains, params, baths, mode="lossless")
    np.testing.assert_array_equal(a.difference, b.difference)


def test_faithful_readout_tracks_fast_mode(params, baths):
    plan = ExperimentPlan(interaction="squeezer")
    fast = run_shot(plan, params, baths, alpha_sq=0.0)
    faithful = run_shot(plan, params, baths, alpha_sq=0.0, mode="faithful", n_int_apparent=0.0)
    assert faithful.n_c + faithful.alpha_c_sq == pytest.approx(fast.n_c + fast.alpha_c_sq, abs=0.3)


def test_run_shot_rejects_unknown_mode(params, baths):
    with pytest.raises(ValueError):
        run_shot(ExperimentPlan(), params, baths, mode="exact")


@settings(max_examples=50)
@given(st.floats(0.1, 2 * math.pi - 0.1), st.floats(0, 5), st.floats(0, 2), st.floats(0, 2))
def test_detector_asymmetries(theta, n_b, dc, dm):
    a = detector_comparison(theta, n_b=n_b, delta_c=dc, delta_m=dm)
    assert a.number == pytest.approx(dm, abs=1e-9 * (1 + n_b))
    assert a.linear == pytest.approx(dc, abs=1e-9 * (1 + n_b))


def test_detector_comparison_matches_gaussian_closed_form():
    # with physical commutators the number-detector asymmetry is the lossless +1
    th, n_b = math.pi, 0.25
    plus = analytic_lossless(th, "squeezer", 0.0, n_b).occupancy_c / math.sinh(th / 2) ** 2
    minus = analytic_lossless(th, "beam_splitter", 0.0, n_b).occupancy_c / math.sin(th / 2) ** 2
    assert detector_comparison(th, n_b).number == pytest.approx(plus - minus)


def test_detector_comparison_needs_nonzero_theta():
    with pytest.raises(ValueError):
        detector_comparison(0.0)


def test_load_run_defaults_to_shipped_device(tmp_path, params):
    (tmp_path / "plan.yaml").write_text(yaml.safe_dump(PLAN_DOC))
    plan, p, b, run = load_run(tmp_path / "plan.yaml")
    assert p == params and run["seed"] == 4
