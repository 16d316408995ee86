"""Photon-number distributions, the Rabi forward model and distribution inference."""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from optoqubit.jcsim import RabiTrace, ReadoutModel, vacuum_rabi_trace
from optoqubit.tomo import (BasisTraces, FlatLikelihoodWarning, OccupancyWarning, PhotonDistribution,
                            TailBoundError, compare_families, default_control, displaced_thermal_pn,
                            infer_distribution, materialize_pn, poisson_pn, rabi_forward, thermal_pn)

TWO_PI = 2 * math.pi
TAU = np.linspace(0, 200e-9, 101)
READOUT = ReadoutModel(contrast=0.51)


def displaced_thermal_oracle(n_bar, alpha, dim=200):
    """Populations of D(alpha) rho_thermal D(alpha)^dag by dense matrix exponentials."""
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    D = expm(alpha * a.T - np.conj(alpha) * a)
    rho = np.diag(thermal_pn(n_bar, dim - 1))
    return np.diag(D @ rho @ D.conj().T).real


@pytest.mark.parametrize("n_bar,alpha", [(0.5, 2.0), (0.02, 0.3 + 0.4j), (2.0, 3.0), (0.0, 1.5)])
def test_displaced_thermal_against_displacement_operator(n_bar, alpha):
    ours = displaced_thermal_pn(n_bar, abs(alpha) ** 2, 40)
    ref = displaced_thermal_oracle(n_bar, alpha)[:41]
    np.testing.assert_allclose(ours, ref, atol=1e-8)


def test_limits_reduce_to_textbook_laws():
    n = np.arange(31)
    np.testing.assert_allclose(poisson_pn(3.0, 30), poisson.pmf(n, 3.0), rtol=1e-12)
    np.testing.assert_allclose(thermal_pn(0.7, 30), 0.7**n / 1.7 ** (n + 1), rtol=1e-12)
    np.testing.assert_allclose(displaced_thermal_pn(0.0, 3.0, 30), poisson_pn(3.0, 30))
    np.testing.assert_allclose(displaced_thermal_pn(0.7, 0.0, 30), thermal_pn(0.7, 30))


@settings(max_examples=40)
@given(st.floats(0, 5), st.floats(0, 10))
def test_distribution_mean_and_normalization(n_bar, alpha_sq):
    dist = PhotonDistribution.displaced_thermal(n_bar, alpha_sq)
    n_max = dist.recommended_n_max()
    p = dist.populations(n_max)
    assert np.all(p >= 0)
    assert 1 - p.sum() <= 1e-6
    assert p @ np.arange(n_max + 1) == pytest.approx(n_bar + alpha_sq, abs=1e-4 * (1 + n_bar + alpha_sq))


def test_truncation_guard():
    with pytest.raises(TailBoundError):
        materialize_pn(PhotonDistribution.thermal(2.0), 5)
    with pytest.raises(TailBoundError):
        materialize_pn(PhotonDistribution.from_populations([0.5, 0.0, 0.0, 0.5]), 2)


def test_distribution_validation():
    with pytest.raises(ValueError):
        PhotonDistribution("squeezed")
    with pytest.raises(ValueError):
        PhotonDistribution.thermal(-0.1)
    assert PhotonDistribution.fock(3).mean == 3.0


def test_forward_model_matches_direct_simulation(params):
    dist = PhotonDistribution.displaced_thermal(0.3, 0.5)
    fwd = rabi_forward(dist, params, TAU, readout=READOUT, n_max=15)
    direct = vacuum_rabi_trace(dist.populations(15), default_control(), params, TAU, qubit="g",
                               readout=READOUT, n_max=15, check_convergence=False)
    np.testing.assert_allclose(fwd.p_e, direct.p_e, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 1))
def test_forward_model_is_linear_in_populations(w):
    from optoqubit.params import default_device

    params = default_device()[0]
    basis = BasisTraces(params, TAU, 10)
    p1 = thermal_pn(0.3, 10)
    p2 = poisson_pn(1.0, 10)
    mix = basis.ideal() .T @ (w * p1 + (1 - w) * p2)
    np.testing.assert_allclose(mix, w * (p1 @ basis.ideal()) + (1 - w) * (p2 @ basis.ideal()), atol=1e-14)


def test_vacuum_gives_no_excitation(params):
    fwd = rabi_forward(PhotonDistribution.vacuum(), params, TAU, readout=READOUT)
    np.testing.assert_allclose(fwd.p_e_ideal, 0.0, atol=1e-15)


def test_large_occupancy_warns(params):
    with pytest.warns(OccupancyWarning):
        rabi_forward(PhotonDistribution.thermal(11.0), params, TAU[:5])


def noisy_trace(basis, dist, noise, rng):
    clean = basis.predict(dist.populations(basis.n_max))
    return RabiTrace(basis.tau, clean + noise * rng.standard_normal(clean.size), basis.readout, sigma=noise)


@pytest.fixture(scope="module")
def basis20(params):
    return BasisTraces(params, TAU, 20, readout=READOUT)


@pytest.mark.parametrize("family,kwargs", [("thermal", {"n_bar": 0.8}), ("coherent", {"alpha_sq": 1.5})])
def test_inference_recovers_noiseless_truth(params, basis20, family, kwargs):
    dist = PhotonDistribution(family, **kwargs)
    trace = RabiTrace(TAU, basis20.predict(dist.populations(20)), READOUT, sigma=0.01)
    res = infer_distribution(trace, family, params, basis=basis20)
    assert res.converged
    for k, v in kwargs.items():
        assert res.estimates[k] == pytest.approx(v, rel=1e-6)


def test_displaced_thermal_inference_with_noise(params, basis20):
    rng = np.random.default_rng(3)
    dist = PhotonDistribution.displaced_thermal(0.4, 1.2)
    res = infer_distribution(noisy_trace(basis20, dist, 0.01, rng), "displaced_thermal", params, basis=basis20)
    assert res.total_occupancy == pytest.approx(1.6, abs=5 * res.total_stderr)
    assert res.total_stderr < 0.1


def test_flux_offset_fit(params):
    ro = ReadoutModel(contrast=0.51)
    basis = BasisTraces(params, TAU, 10, readout=ro)
    dist = PhotonDistribution.coherent(1.0)
    offset = TWO_PI * 2e6
    trace = RabiTrace(TAU, basis.predict(dist.populations(10), offset), ro, sigma=0.01)
    res = infer_distribution(trace, "coherent", params, basis=basis, fit_mask=("alpha_sq", "flux_offset"),
                             initial={"alpha_sq": 0.8, "flux_offset": TWO_PI * 1e6})
    assert res.estimates["flux_offset"] == pytest.approx(offset, rel=1e-4)
    assert res.estimates["alpha_sq"] == pytest.approx(1.0, rel=1e-4)


def test_low_occupancy_flags_flat_likelihood(params):
    basis = BasisTraces(params, TAU, 8, readout=READOUT)
    trace = RabiTrace(TAU, basis.predict(thermal_pn(0.02, 8)), READOUT, sigma=0.01)
    with pytest.warns(FlatLikelihoodWarning):
        res = infer_distribution(trace, "coherent", params, basis=basis)
    assert res.flat_likelihood
    assert res.total_occupancy == pytest.approx(0.02, rel=0.1)


def test_family_discrimination_at_high_occupancy(params):
    basis = BasisTraces(params, TAU, 50, readout=READOUT)
    for truth, name in ((PhotonDistribution.thermal(2.5), "thermal"), (PhotonDistribution.coherent(2.5), "coherent")):
        trace = RabiTrace(TAU, basis.predict(truth.populations(50)), READOUT, sigma=0.01)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cmp = compare_families(trace, params, basis=basis)
        assert cmp.distinguishable and cmp.preferred == name


def test_basis_must_match_tau(params, basis20):
    trace = RabiTrace(TAU[:10], np.zeros(10), READOUT)
    with pytest.raises(ValueError):
        infer_distribution(trace, "thermal", params, basis=basis20)


def test_invalid_fit_mask(params, basis20):
    trace = RabiTrace(TAU, np.zeros(TAU.size), READOUT)
    with pytest.raises(ValueError):
        infer_distribution(trace, "thermal", params, basis=basis20, fit_mask=("alpha_sq",))


def test_report_document(params, basis20):
    trace = RabiTrace(TAU, basis20.predict(thermal_pn(0.5, 20)), READOUT, sigma=0.01)
    doc = infer_distribution(trace, "thermal", params, basis=basis20).to_doc()
    assert doc["family"] == "thermal" and "n_bar" in doc["stderr"]
