"""Device parameter registry, unit handling and bath occupancies.

Every frequency and rate is stored internally in angular units (rad/s).
Configuration documents use ordinary frequencies with a ``/2pi`` key suffix,
e.g. ``omega_c/2pi: 10.188 GHz``; keys without the suffix must carry an
angular unit (``rad/s``) or a unit of time, temperature or length.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml
from scipy.constants import hbar, k as k_B

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Raised for an invalid configuration document.

    ``key`` holds the dotted path of the offending entry.
    """

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


_FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
_ANGULAR_UNITS = {"rad/s": 1.0}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12}
_TEMP_UNITS = {"K": 1.0, "mK": 1e-3}
_LENGTH_UNITS = {"m": 1.0, "nm": 1e-9, "pm": 1e-12, "fm": 1e-15}
_PULL_UNITS = {"Hz/m": 1.0, "MHz/nm": 1e6 / 1e-9, "kHz/fm": 1e3 / 1e-15}
_NUM_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(\S*)\s*$")


def _parse_quantity(key: str, raw: Any, units: Mapping[str, float]) -> float:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raise ConfigError(key, f"missing unit (expected one of {sorted(units)})")
    if isinstance(raw, Mapping):
        value, unit = raw.get("value"), raw.get("unit")
    else:
        m = _NUM_RE.match(str(raw))
        if m is None:
            raise ConfigError(key, f"cannot parse quantity {raw!r}")
        value, unit = m.group(1), m.group(2)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse number in {raw!r}") from None
    if unit not in units:
        raise ConfigError(key, f"unrecognized unit {unit!r} (expected one of {sorted(units)})")
    return value * units[unit]


def parse_rate(key: str, raw: Any) -> float:
    """Parse a frequency/rate entry to rad/s, honouring the ``/2pi`` suffix."""
    if key.endswith("/2pi"):
        return TWO_PI * _parse_quantity(key, raw, _FREQ_UNITS)
    return _parse_quantity(key, raw, _ANGULAR_UNITS)


def parse_time(key: str, raw: Any) -> float:
    return _parse_quantity(key, raw, _TIME_UNITS)


def thermal_occupancy(frequency, temperature):
    """Bose-Einstein occupancy of a mode at angular ``frequency`` (rad/s).

    Exactly zero at ``temperature == 0``. Works elementwise on arrays.
    """
    frequency = np.asarray(frequency, dtype=float)
    temperature = np.asarray(temperature, dtype=float)
    if np.any(frequency <= 0):
        raise ValueError("frequency must be positive")
    if np.any(temperature < 0):
        raise ValueError("temperature must be non-negative")
    with np.errstate(divide="ignore", over="ignore"):
        x = hbar * frequency / (k_B * temperature)
        n = 1.0 / np.expm1(x)
    n = np.where(temperature == 0, 0.0, n)
    return float(n) if n.ndim == 0 else n


# -- pump-power dependent quantities ---------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, n_p):
        return np.zeros_like(np.asarray(n_p, dtype=float)) + self.value

    def to_doc(self) -> dict:
        return {"model": "constant", "value": self.value}


@dataclass(frozen=True)
class PowerLaw:
    """``floor + amplitude * (n_p / reference) ** exponent``."""

    amplitude: float
    exponent: float
    reference: float = 1.0
    floor: float = 0.0

    def __call__(self, n_p):
        n_p = np.maximum(np.asarray(n_p, dtype=float), 0.0)
        return self.floor + self.amplitude * (n_p / self.reference) ** self.exponent

    def to_doc(self) -> dict:
        return {"model": "power_law", "amplitude": self.amplitude, "exponent": self.exponent,
                "reference": self.reference, "floor": self.floor}


@dataclass(frozen=True)
class SaturatingPowerLaw:
    """``floor + amplitude * (1 + n_p / saturation) ** exponent``.

    The usual two-level-system form for power-dependent internal loss
    (``exponent`` around -1/2); finite at zero pump power.
    """

    floor: float
    amplitude: float
    saturation: float
    exponent: float = -0.5

    def __call__(self, n_p):
        n_p = np.maximum(np.asarray(n_p, dtype=float), 0.0)
        return self.floor + self.amplitude * (1.0 + n_p / self.saturation) ** self.exponent

    def to_doc(self) -> dict:
        return {"model": "saturating_power_law", "floor": self.floor, "amplitude": self.amplitude,
                "saturation": self.saturation, "exponent": self.exponent}


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear interpolation in ``log(1 + n_p)``, clamped at the ends."""

    n_p: tuple
    values: tuple

    def __post_init__(self):
        if len(self.n_p) != len(self.values) or len(self.n_p) < 2:
            raise ValueError("table needs at least two matching (n_p, value) pairs")
        if np.any(np.diff(self.n_p) <= 0):
            raise ValueError("table n_p must be strictly increasing")

    def __call__(self, n_p):
        x = np.log1p(np.maximum(np.asarray(n_p, dtype=float), 0.0))
        return np.interp(x, np.log1p(self.n_p), self.values)

    def to_doc(self) -> dict:
        return {"model": "table", "n_p": list(self.n_p), "values": list(self.values)}


PumpDependence = Callable[[Any], Any]

_MODEL_FIELDS = {
    "constant": (Constant, ("value",)),
    "power_law": (PowerLaw, ("amplitude", "exponent", "reference", "floor")),
    "saturating_power_law": (SaturatingPowerLaw, ("floor", "amplitude", "saturation", "exponent")),
}


def _parse_model(key: str, raw: Any, scale: float = 1.0):
    """Build a pump-dependence model. ``scale`` multiplies value-like fields."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return Constant(float(raw) * scale)
    if not isinstance(raw, Mapping) or "model" not in raw:
        raise ConfigError(key, "expected a number or a mapping with a 'model' entry")
    kind = raw["model"]
    if kind == "table":
        try:
            n_p = tuple(float(v) for v in raw["n_p"])
            values = tuple(float(v) * scale for v in raw["values"])
            return Tabulated(n_p, values)
        except KeyError as err:
            raise ConfigError(f"{key}.{err.args[0]}", "missing field") from None
        except ValueError as err:
            raise ConfigError(key, str(err)) from None
    if kind not in _MODEL_FIELDS:
        raise ConfigError(f"{key}.model", f"unknown model {kind!r}")
    cls, names = _MODEL_FIELDS[kind]
    kwargs = {}
    for name in names:
        if name not in raw:
            continue
        value = float(raw[name])
        if name in ("value", "amplitude", "floor"):
            value *= scale
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(key, f"incomplete model: {err}") from None


# -- registry ---------------------------------------------------------------


@dataclass(frozen=True)
class DeviceParams:
    """Device parameters, all rates and frequencies in rad/s.

    ``kappa_int_model`` optionally gives the internal cavity loss as a
    function of intra-cavity pump photon number; ``kappa_int`` is the value
    quoted for the strongly pumped cavity and is used when no model is set.
    """

    omega_c: float
    Omega_m: float
    J: float
    g0: float
    kappa_int: float
    kappa_ext: float
    Gamma_m: float
    T1_qubit: float
    T1_cavity: float
    Tphi_qubit: float
    temperature: float
    alpha_fano: float = 0.0
    x_zpf: float | None = None
    G_cavity_pull: float | None = None
    kappa_int_model: Any = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("omega_c", "Omega_m", "J", "g0", "kappa_int", "kappa_ext", "Gamma_m",
                     "T1_qubit", "T1_cavity", "Tphi_qubit"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be strictly positive, got {value!r}")
        if self.temperature < 0:
            raise ConfigError("temperature", "must be non-negative")
        if self.x_zpf is not None and self.x_zpf <= 0:
            raise ConfigError("x_zpf", "must be strictly positive")
        if self.G_cavity_pull is not None and self.G_cavity_pull <= 0:
            raise ConfigError("G_cavity_pull", "must be strictly positive")
        if self.x_zpf is not None and self.G_cavity_pull is not None:
            expected = self.G_cavity_pull * self.x_zpf
            if abs(expected - self.g0) > 1e-9 * abs(self.g0):
                raise ConfigError(
                    "g0", f"inconsistent with G_cavity_pull * x_zpf = {expected!r} rad/s")

    @property
    def kappa(self) -> float:
        return self.kappa_int + self.kappa_ext

    @property
    def eta(self) -> float:
        return self.kappa_ext / self.kappa

    def kappa_int_at(self, n_p):
        """Internal loss at pump photon number ``n_p``."""
        if self.kappa_int_model is None:
            return np.zeros_like(np.asarray(n_p, dtype=float)) + self.kappa_int
        return self.kappa_int_model(n_p)

    def kappa_at(self, n_p):
        return self.kappa_int_at(n_p) + self.kappa_ext

    @property
    def n_mech_eq(self) -> float:
        return thermal_occupancy(self.Omega_m, self.temperature)

    def replace(self, **changes) -> "DeviceParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class BathSpec:
    """Bath occupancies seen by the linearized modes.

    ``n_int_eq`` may be a number or a pump-power dependence (callable of
    ``n_p``); use :meth:`n_int_at` to evaluate it.
    """

    n_mech_eq: float
    n_int_eq: Any = 0.0
    n_ext_eq: float = 0.0

    def __post_init__(self):
        if self.n_mech_eq < 0 or self.n_ext_eq < 0:
            raise ConfigError("baths", "occupancies must be non-negative")
        if not callable(self.n_int_eq) and self.n_int_eq < 0:
            raise ConfigError("baths.n_int_eq", "occupancy must be non-negative")

    def n_int_at(self, n_p):
        if callable(self.n_int_eq):
            return self.n_int_eq(n_p)
        return np.zeros_like(np.asarray(n_p, dtype=float)) + self.n_int_eq

    @classmethod
    def from_params(cls, params: DeviceParams, n_int_eq: Any = 0.0, n_ext_eq: float = 0.0):
        return cls(n_mech_eq=params.n_mech_eq, n_int_eq=n_int_eq, n_ext_eq=n_ext_eq)


_RATE_KEYS = ("omega_c", "Omega_m", "J", "g0", "kappa_int", "kappa_ext", "Gamma_m")
_TIME_KEYS = ("T1_qubit", "T1_cavity", "Tphi_qubit")
_REQUIRED = _RATE_KEYS + _TIME_KEYS + ("temperature",)


def _lookup(section: Mapping, name: str, path: str):
    """Find ``name`` or ``name/2pi`` in ``section``; return (full key, raw)."""
    for key in (name, f"{name}/2pi"):
        if key in section:
            return key, section[key]
    return None, None


def load_device_params(config: Mapping | str | Path) -> tuple[DeviceParams, BathSpec]:
    """Validate a configuration document and build the device registry.

    ``config`` is a mapping (already parsed) or a path to a YAML file. The
    parameters live under a ``device`` section (or at top level); an
    optional ``heating`` section holds pump-power dependent quantities and an
    optional ``baths`` section overrides bath occupancies.
    """
    if isinstance(config, (str, Path)):
        with open(config) as fh:
            config = yaml.safe_load(fh)
    if not isinstance(config, Mapping):
        raise ConfigError("<root>", "configuration must be a mapping")
    device = config.get("device", config)
    prefix = "device." if "device" in config else ""
    values: dict[str, Any] = {}
    for name in _REQUIRED:
        key, raw = _lookup(device, name, prefix)
        if key is None:
            raise ConfigError(f"{prefix}{name}", "missing required field")
        path = prefix + key
        if name in _RATE_KEYS:
            values[name] = parse_rate(path, raw)
        elif name in _TIME_KEYS:
            values[name] = parse_time(path, raw)
        else:
            values[name] = _parse_quantity(path, raw, _TEMP_UNITS)
    if "alpha_fano" in device:
        values["alpha_fano"] = float(device["alpha_fano"])
    if "x_zpf" in device:
        values["x_zpf"] = _parse_quantity(prefix + "x_zpf", device["x_zpf"], _LENGTH_UNITS)
    key, raw = _lookup(device, "G_cavity_pull", prefix)
    if key is not None:
        scale = TWO_PI if key.endswith("/2pi") else 1.0
        units = _PULL_UNITS if key.endswith("/2pi") else {"rad/s/m": 1.0}
        values["G_cavity_pull"] = scale * _parse_quantity(prefix + key, raw, units)

    heating = config.get("heating", {}) or {}
    key, raw = _lookup(heating, "kappa_int", "heating.")
    if key is not None:
        scale = TWO_PI if key.endswith("/2pi") else 1.0
        values["kappa_int_model"] = _parse_model(
            "heating." + key, _rate_model_doc(raw, angular=scale == 1.0), scale)
    params = DeviceParams(**values)

    n_int = heating.get("n_int_eq", 0.0)
    n_int_model = _parse_model("heating.n_int_eq", n_int)
    if isinstance(n_int_model, Constant):
        n_int_model = n_int_model.value
    baths_doc = config.get("baths", {}) or {}
    baths = BathSpec(
        n_mech_eq=float(baths_doc.get("n_mech_eq", params.n_mech_eq)),
        n_int_eq=n_int_model,
        n_ext_eq=float(baths_doc.get("n_ext_eq", 0.0)),
    )
    return params, baths


def _rate_model_doc(raw: Any, angular: bool) -> Any:
    """Strip unit strings ('140 kHz') from a rate model, leaving plain numbers."""
    units = _ANGULAR_UNITS if angular else _FREQ_UNITS
    if not isinstance(raw, Mapping):
        return _strip_unit("heating.kappa_int", raw, units)
    out = dict(raw)
    for name in ("value", "amplitude", "floor"):
        if name in out:
            out[name] = _strip_unit(f"heating.kappa_int.{name}", out[name], units)
    if "values" in out:
        out["values"] = [_strip_unit("heating.kappa_int.values", v, units) for v in out["values"]]
    return out


def _strip_unit(key: str, raw: Any, units: Mapping[str, float]) -> float:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    return _parse_quantity(key, raw, units)


def device_params_to_doc(params: DeviceParams, baths: BathSpec | None = None) -> dict:
    """Serialize to a configuration document that reloads bit-exactly.

    Values are written in SI/angular units with ``repr`` precision.
    """
    device: dict[str, Any] = {}
    for f in fields(params):
        value = getattr(params, f.name)
        if value is None or f.name == "kappa_int_model":
            continue
        if f.name in _RATE_KEYS:
            device[f.name] = f"{value!r} rad/s"
        elif f.name in _TIME_KEYS:
            device[f.name] = f"{value!r} s"
        elif f.name == "temperature":
            device[f.name] = f"{value!r} K"
        elif f.name == "x_zpf":
            device[f.name] = f"{value!r} m"
        elif f.name == "G_cavity_pull":
            device[f.name] = f"{value!r} rad/s/m"
        else:
            device[f.name] = value
    doc: dict[str, Any] = {"device": device}
    heating: dict[str, Any] = {}
    if params.kappa_int_model is not None:
        heating["kappa_int"] = params.kappa_int_model.to_doc()
    if baths is not None:
        if callable(baths.n_int_eq):
            heating["n_int_eq"] = baths.n_int_eq.to_doc()
        else:
            heating["n_int_eq"] = baths.n_int_eq
        doc["baths"] = {"n_mech_eq": baths.n_mech_eq, "n_ext_eq": baths.n_ext_eq}
    if heating:
        doc["heating"] = heating
    return doc


def dump_device_params(params: DeviceParams, path: str | Path, baths: BathSpec | None = None):
    with open(path, "w") as fh:
        yaml.safe_dump(device_params_to_doc(params, baths), fh, sort_keys=False)


def canonical_config_path() -> Path:
    """Path of the shipped configuration reproducing the device table."""
    return Path(__file__).with_name("data") / "device.yaml"


def default_device() -> tuple[DeviceParams, BathSpec]:
    """Parameters and baths of the bundled device configuration."""
    return load_device_params(canonical_config_path())
