"""Reflection model, its Jacobian, spectrum I/O and the joint fit."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import hbar

from optoqubit.lm import FitError
from optoqubit.specfit import (ReflectionModel, Spectrum, enhanced_coupling, fit_reflection,
                               initial_guess, normal_mode_splitting, pump_photon_number,
                               read_spectrum, reflection, reflection_jacobian, reflection_minima,
                               write_spectrum)

TWO_PI = 2 * math.pi


@pytest.fixture
def model():
    return ReflectionModel(TWO_PI * 10.188e9, TWO_PI * 15.9e6, TWO_PI * 152e3, TWO_PI * 11e3,
                           TWO_PI * 150, g=TWO_PI * 120e3)


def detunings(span=1.5e6, n=2001):
    return TWO_PI * np.linspace(-span, span, n)


def test_bare_cavity_is_a_lorentzian(model):
    m = model.replace(g=0.0)
    d = detunings()
    expected = 1 - 2 * m.kappa_ext / (m.kappa + 2j * d)
    np.testing.assert_allclose(reflection(m.omega_c + d, m), expected, rtol=0, atol=1e-11)
    assert reflection(m.omega_c, m) == pytest.approx((m.kappa_int - m.kappa_ext) / m.kappa)


@pytest.mark.parametrize("Omega_m,tol", [(TWO_PI * 15.9e6, 0.02), (TWO_PI * 159e6, 0.002)])
def test_resolved_sideband_limit(model, Omega_m, tol):
    # with Omega_m >> kappa the red-pump response reduces to the transparency form
    m = model.replace(Omega_m=Omega_m, g=TWO_PI * 242e3)
    d = detunings()
    rwa = 1 - m.kappa_ext / (m.kappa / 2 + 1j * d + m.g**2 / (m.Gamma_m / 2 + 1j * d))
    assert np.max(np.abs(reflection(m.omega_c + d, m) - rwa)) < tol


def test_fano_rotates_background(model):
    m = model.replace(g=0.0, alpha_fano=0.3)
    far = reflection(m.omega_c + TWO_PI * 1e9, m)
    assert far == pytest.approx(1 / (1 + 0.3j), abs=1e-3)


@pytest.mark.parametrize("omega_p_shift", [0.0, TWO_PI * 2e5])
def test_jacobian_matches_finite_differences(model, omega_p_shift):
    m = model.replace(alpha_fano=0.05)
    w = m.omega_c + detunings(n=301)
    wp = m.red_pump() + omega_p_shift
    J = reflection_jacobian(w, m, wp)
    for k, name in enumerate(ReflectionModel.PARAMETERS):
        x = getattr(m, name)
        # frequencies only matter on the scale of the linewidths
        h = 1e-5 * (m.kappa if name in ("omega_c", "Omega_m") else max(abs(x), 1e-3))
        fd = (reflection(w, m.replace(**{name: x + h}), wp) - reflection(w, m.replace(**{name: x - h}), wp)) / (2 * h)
        scale = np.max(np.abs(fd)) + 1e-30
        assert np.max(np.abs(J[:, k] - fd)) / scale < 1e-5, name


def test_normal_mode_splitting_equals_twice_g(model):
    m = model.replace(g=TWO_PI * 242e3)
    assert normal_mode_splitting(m) == pytest.approx(2 * m.g, rel=0.05)


def test_weak_coupling_has_single_minimum(model):
    m = model.replace(g=TWO_PI * 1e3)
    assert reflection_minima(m).size >= 1


def test_pump_photon_number_closed_form(model):
    P = 1e-9
    wp = model.red_pump()
    expected = 4 * P * model.kappa_ext / (hbar * wp * (model.kappa**2 + 4 * model.Omega_m**2))
    assert pump_photon_number(P, wp, model) == pytest.approx(expected)
    with pytest.raises(ValueError):
        pump_photon_number(-1.0, wp, model)


def test_enhanced_coupling():
    assert enhanced_coupling(TWO_PI * 300, 3.8e5) == pytest.approx(TWO_PI * 300 * math.sqrt(3.8e5))


def test_model_validation(model):
    with pytest.raises(ValueError):
        model.replace(kappa_ext=0.0)
    with pytest.raises(ValueError):
        model.replace(g=-1.0)


def test_from_device(params):
    m = ReflectionModel.from_params(params, n_p=3.8e5)
    assert m.g == pytest.approx(params.g0 * math.sqrt(3.8e5))
    assert m.kappa == pytest.approx(params.kappa)


def spectra_for(model, shifts=(-1e5, 0.0, 1e5), kind="complex", noise=0.0, rng=None):
    freq = model.omega_c + detunings()
    return [Spectrum.synthetic(model, freq, model.red_pump() + TWO_PI * s, kind, noise, rng) for s in shifts]


def test_fit_recovers_truth_from_complex_data(model):
    start = model.replace(omega_c=model.omega_c + 0.1 * model.kappa, kappa_int=1.2 * model.kappa_int,
                          kappa_ext=0.8 * model.kappa_ext, Gamma_m=1.3 * model.Gamma_m, g=0.8 * model.g)
    fit = fit_reflection(spectra_for(model), start)
    assert fit.converged
    for name in fit.names:
        assert getattr(fit.model, name) == pytest.approx(getattr(model, name), rel=1e-9)


def test_fit_in_db_space(model):
    start = model.replace(kappa_int=1.1 * model.kappa_int, g=0.9 * model.g)
    fit = fit_reflection(spectra_for(model, kind="db"), start, free=("kappa_int", "kappa_ext", "g", "Gamma_m"))
    assert fit.model.kappa == pytest.approx(model.kappa, rel=1e-8)
    assert fit.model.g == pytest.approx(model.g, rel=1e-8)


def test_noisy_fit_uncertainties_are_calibrated(model):
    rng = np.random.default_rng(8)
    pulls = []
    for _ in range(20):
        data = spectra_for(model, noise=2e-3, rng=rng)
        fit = fit_reflection(data, model)
        pulls.append((fit.model.g - model.g) / fit.stderr["g"])
    pulls = np.array(pulls)
    assert abs(pulls.mean()) < 1.0
    assert 0.5 < pulls.std() < 1.6


@settings(max_examples=8, deadline=None)
@given(st.floats(60e3, 300e3), st.floats(5e3, 80e3), st.floats(60e3, 300e3), st.floats(80, 400))
def test_round_trip_property(k_int, k_ext, g, gamma):
    truth = ReflectionModel(TWO_PI * 8e9, TWO_PI * 12e6, TWO_PI * k_int, TWO_PI * k_ext, TWO_PI * gamma,
                            g=TWO_PI * g)
    start = truth.replace(kappa_int=1.05 * truth.kappa_int, g=0.95 * truth.g, Gamma_m=1.1 * truth.Gamma_m)
    fit = fit_reflection(spectra_for(truth), start)
    assert fit.model.kappa == pytest.approx(truth.kappa, rel=1e-3)
    assert fit.model.g == pytest.approx(truth.g, rel=1e-3)
    assert fit.model.Gamma_m == pytest.approx(truth.Gamma_m, rel=1e-3)


def test_fit_failure_raises(model):
    start = model.replace(g=0.5 * model.g)
    with pytest.raises(FitError):
        fit_reflection(spectra_for(model), start, max_iter=1)
    res = fit_reflection(spectra_for(model), start, max_iter=1, raise_on_failure=False)
    assert not res.converged


def test_unknown_parameter_rejected(model):
    with pytest.raises(KeyError):
        fit_reflection(spectra_for(model), model, free=("nope",))


def test_complex_loss_needs_phase(model):
    with pytest.raises(ValueError):
        fit_reflection(spectra_for(model, kind="db"), model, loss="complex")


def test_initial_guess_is_close(model):
    s = spectra_for(model.replace(g=0.0), shifts=(0.0,))[0]
    guess = initial_guess(s, model.Omega_m, model.Gamma_m, eta=model.eta)
    assert guess.omega_c == pytest.approx(model.omega_c, abs=model.kappa * 0.01)
    assert guess.kappa == pytest.approx(model.kappa, rel=0.1)


@pytest.mark.parametrize("kind", ["complex", "db"])
def test_spectrum_file_round_trip(tmp_path, model, kind):
    s = spectra_for(model, shifts=(0.0,), kind=kind)[0]
    s.P_in, s.n_p = 1e-9, 3.8e5
    write_spectrum(tmp_path / "s.txt", s)
    back = read_spectrum(tmp_path / "s.txt")
    assert back.kind == kind
    np.testing.assert_allclose(back.freq, s.freq, rtol=1e-15)
    np.testing.assert_allclose(back.value, s.value, rtol=1e-15)
    assert back.omega_p == pytest.approx(s.omega_p, rel=1e-15)
    assert back.n_p == 3.8e5 and back.P_in == 1e-9


def test_spectrum_file_needs_pump_frequency(tmp_path):
    (tmp_path / "s.txt").write_text("1,0.5\n2,0.4\n")
    with pytest.raises(ValueError):
        read_spectrum(tmp_path / "s.txt")


def test_report_document(model):
    fit = fit_reflection(spectra_for(model), model)
    doc = fit.to_doc()
    assert doc["g/2pi"]["value"] == pytest.approx(120e3, rel=1e-9)
    assert doc["g/2pi"]["free"] and not doc["Omega_m/2pi"]["free"]
    assert "stderr" in doc["kappa_int/2pi"]
