"""Parameter registry: unit parsing, validation, pump-power models, round trips."""
import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import hbar, k as k_B

from optoqubit.params import (BathSpec, ConfigError, DeviceParams, PowerLaw, SaturatingPowerLaw,
                              Tabulated, canonical_config_path, device_params_to_doc,
                              dump_device_params, load_device_params, parse_rate, parse_time,
                              thermal_occupancy)

TWO_PI = 2 * math.pi


def minimal_doc(**overrides):
    device = {
        "omega_c/2pi": "10 GHz", "Omega_m/2pi": "15 MHz", "J/2pi": "12 MHz", "g0/2pi": "300 Hz",
        "kappa_int/2pi": "150 kHz", "kappa_ext/2pi": "10 kHz", "Gamma_m/2pi": "150 Hz",
        "T1_qubit": "170 ns", "T1_cavity": "130 ns", "Tphi_qubit": "45 ns", "temperature": "25 mK",
    }
    device.update(overrides)
    return {"device": device}


def test_device_table_values(params):
    assert params.omega_c == pytest.approx(TWO_PI * 10.188e9)
    assert params.Omega_m == pytest.approx(TWO_PI * 15.9e6)
    assert params.J == pytest.approx(TWO_PI * 12.5e6)
    assert params.g0 == pytest.approx(TWO_PI * 300)
    assert params.kappa == pytest.approx(TWO_PI * 163e3)
    assert params.T1_qubit == pytest.approx(170e-9)
    assert params.Tphi_qubit == pytest.approx(45e-9)
    assert params.temperature == pytest.approx(25e-3)


def test_heating_model_anchors(params, baths):
    # strong-pump loss matches the quoted internal loss; zero-pump loss matches 1/T1_cavity
    assert params.kappa_int_at(3.8e5) == pytest.approx(TWO_PI * 152e3, rel=2e-3)
    assert params.kappa_at(0.0) == pytest.approx(1 / 130e-9, rel=2e-3)
    assert baths.n_int_at(3.8e5) == pytest.approx(0.2)
    assert baths.n_int_at(0.0) == 0.0


def test_mechanical_occupancy_from_temperature(params):
    assert 31 < params.n_mech_eq < 33


@pytest.mark.parametrize("raw,expected", [
    ("1 MHz", TWO_PI * 1e6), ("2.5 kHz", TWO_PI * 2.5e3), ({"value": 3, "unit": "GHz"}, TWO_PI * 3e9),
])
def test_parse_rate_over_two_pi(raw, expected):
    assert parse_rate("x/2pi", raw) == pytest.approx(expected)


def test_parse_rate_angular():
    assert parse_rate("x", "5 rad/s") == 5.0


@pytest.mark.parametrize("raw", [5.0, "5", "5 parsecs", "abc MHz"])
def test_parse_rate_rejects(raw):
    with pytest.raises(ConfigError):
        parse_rate("x/2pi", raw)


def test_parse_time_units():
    assert parse_time("t", "45 ns") == pytest.approx(45e-9)
    assert parse_time("t", "2 us") == pytest.approx(2e-6)


def test_missing_field_names_the_key():
    doc = minimal_doc()
    del doc["device"]["J/2pi"]
    with pytest.raises(ConfigError) as err:
        load_device_params(doc)
    assert err.value.key == "device.J"


@pytest.mark.parametrize("key,value", [("kappa_ext/2pi", "-1 kHz"), ("T1_qubit", "0 ns")])
def test_non_positive_values_rejected(key, value):
    with pytest.raises(ConfigError):
        load_device_params(minimal_doc(**{key: value}))


def test_inconsistent_cavity_pull_rejected():
    doc = minimal_doc(x_zpf="3.18 fm", **{"G_cavity_pull/2pi": "95 MHz/nm"})
    with pytest.raises(ConfigError) as err:
        load_device_params(doc)
    assert err.value.key == "g0"


def test_consistent_cavity_pull_accepted():
    g0 = 95e6 / 1e-9 * 3.18e-15
    doc = minimal_doc(x_zpf="3.18 fm", **{"G_cavity_pull/2pi": "95 MHz/nm", "g0/2pi": f"{g0!r} Hz"})
    p, _ = load_device_params(doc)
    assert p.G_cavity_pull * p.x_zpf == pytest.approx(p.g0)


def test_canonical_file_round_trips_bit_exactly(tmp_path, params, baths):
    path = tmp_path / "device.yaml"
    dump_device_params(params, path, baths)
    p2, b2 = load_device_params(path)
    assert p2 == params
    assert b2.n_mech_eq == baths.n_mech_eq
    n = np.geomspace(1, 1e7, 9)
    np.testing.assert_array_equal(p2.kappa_int_at(n), params.kappa_int_at(n))
    np.testing.assert_array_equal(b2.n_int_at(n), baths.n_int_at(n))


def test_canonical_path_is_shipped():
    doc = yaml.safe_load(canonical_config_path().read_text())
    assert "device" in doc and "heating" in doc


def test_doc_is_plain_yaml(params, baths):
    text = yaml.safe_dump(device_params_to_doc(params, baths))
    assert load_device_params(yaml.safe_load(text))[0] == params


def test_thermal_occupancy_against_closed_form():
    w, T = TWO_PI * 15.9e6, 25e-3
    assert thermal_occupancy(w, T) == pytest.approx(1 / math.expm1(hbar * w / (k_B * T)), rel=1e-14)


def test_thermal_occupancy_zero_temperature():
    assert thermal_occupancy(TWO_PI * 1e6, 0.0) == 0.0


def test_thermal_occupancy_rejects_bad_input():
    with pytest.raises(ValueError):
        thermal_occupancy(-1.0, 1.0)
    with pytest.raises(ValueError):
        thermal_occupancy(1.0, -1.0)


@given(st.floats(1e5, 1e11), st.floats(1e-4, 10), st.floats(1.01, 3))
def test_thermal_occupancy_monotone(w, T, factor):
    w *= TWO_PI
    n = thermal_occupancy(w, T)
    assert thermal_occupancy(w, T * factor) >= n
    assert thermal_occupancy(w * factor, T) <= n
    if n > 1e-300:
        assert thermal_occupancy(w * factor, T) < n


@given(st.floats(1e5, 1e9), st.floats(1e-3, 1))
def test_thermal_occupancy_high_temperature_limit(w, T):
    # n + 1/2 approaches kT / hbar w from above
    n = thermal_occupancy(w, T)
    x = k_B * T / (hbar * w)
    assert n + 0.5 >= x * (1 - 1e-12)


@settings(max_examples=50)
@given(st.floats(0, 1e8), st.floats(0, 1e8))
def test_saturating_loss_decreases_with_pump(a, b):
    m = SaturatingPowerLaw(floor=1.0, amplitude=5.0, saturation=1.0, exponent=-0.5)
    lo, hi = sorted((a, b))
    assert m(hi) <= m(lo)


@settings(max_examples=50)
@given(st.floats(0, 1e8), st.floats(0, 1e8))
def test_heating_occupancy_increases_with_pump(a, b):
    m = PowerLaw(amplitude=0.2, exponent=0.5, reference=3.8e5)
    lo, hi = sorted((a, b))
    assert m(hi) >= m(lo) >= 0


def test_tabulated_model_interpolates_and_clamps():
    t = Tabulated((0.0, 1e3, 1e6), (1.0, 2.0, 3.0))
    assert t(1e3) == pytest.approx(2.0)
    assert t(1e9) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        Tabulated((1.0, 0.0), (1.0, 2.0))


def test_table_model_from_config():
    doc = minimal_doc()
    doc["heating"] = {"kappa_int/2pi": {"model": "table", "n_p": [0, 1e6], "values": ["200 kHz", "150 kHz"]}}
    p, _ = load_device_params(doc)
    assert p.kappa_int_at(0) == pytest.approx(TWO_PI * 200e3)
    assert p.kappa_int_at(1e6) == pytest.approx(TWO_PI * 150e3)


def test_bath_spec_validation():
    with pytest.raises(ConfigError):
        BathSpec(-1.0)
    assert BathSpec(1.0, 0.3).n_int_at(5.0) == pytest.approx(0.3)


def test_replace_keeps_validation(params):
    with pytest.raises(ConfigError):
        params.replace(J=0.0)
    assert isinstance(params.replace(J=1.0), DeviceParams)
