"""Cavity reflection with optomechanical dressing, and spectrum fitting.

All frequencies are angular (rad/s). The pump sits at ``omega_p``; for the
red sideband ``omega_p = omega_c - Omega_m``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace as dc_replace
from pathlib import Path

import numpy as np
from scipy.constants import hbar

from .tables import atomic_write_text
from .lm import FitError, LMResult, levenberg_marquardt
from .params import DeviceParams

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ReflectionModel:
    """Parameters entering the reflection coefficient (rad/s)."""

    omega_c: float
    Omega_m: float
    kappa_int: float
    kappa_ext: float
    Gamma_m: float
    g: float = 0.0
    alpha_fano: float = 0.0

    PARAMETERS = ("omega_c", "Omega_m", "kappa_int", "kappa_ext", "Gamma_m", "g", "alpha_fano")

    def __post_init__(self):
        for name in ("omega_c", "Omega_m", "kappa_int", "kappa_ext", "Gamma_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.g < 0:
            raise ValueError("g must be non-negative")

    @classmethod
    def from_params(cls, params: DeviceParams, g: float = 0.0, n_p: float | None = None):
        """Model from device parameters; ``n_p`` sets ``g = g0 sqrt(n_p)``."""
        if n_p is not None:
            g = enhanced_coupling(params.g0, n_p)
        return cls(params.omega_c, params.Omega_m, params.kappa_int, params.kappa_ext,
                   params.Gamma_m, g, params.alpha_fano)

    @property
    def kappa(self) -> float:
        return self.kappa_int + self.kappa_ext

    @property
    def eta(self) -> float:
        return self.kappa_ext / self.kappa

    def red_pump(self) -> float:
        return self.omega_c - self.Omega_m

    def blue_pump(self) -> float:
        return self.omega_c + self.Omega_m

    def replace(self, **changes) -> "ReflectionModel":
        return dc_replace(self, **changes)

    def vector(self, names) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)


def _pieces(omega, m: ReflectionModel, omega_p: float):
    w = np.asarray(omega, dtype=float)
    A = m.kappa + 2j * (w - 2 * omega_p + m.omega_c)
    v = w - omega_p
    B = m.Omega_m ** 2 - v ** 2 + 1j * v * m.Gamma_m
    chi = 4 * m.g ** 2 * m.Omega_m / (A * B)
    den = m.kappa + 2j * (w - m.omega_c) + 4 * chi * (omega_p - m.omega_c)
    return A, B, v, chi, den


def reflection(omega, model: ReflectionModel, omega_p: float | None = None):
    """Complex reflection coefficient R(omega).

    ``R = 1/(1 + i a) - 2 k_e (1 - i chi) / (k + 2i(w - w_c) + 4 chi (w_p - w_c))``
    with the mechanical susceptibility
    ``chi = 4 g^2 W_m / ((k + 2i(w - 2w_p + w_c)) (W_m^2 - (w - w_p)^2 + i (w - w_p) G_m))``.
    ``omega_p`` defaults to the red sideband.
    """
    if omega_p is None:
        omega_p = model.red_pump()
    _, _, _, chi, den = _pieces(omega, model, omega_p)
    return 1.0 / (1.0 + 1j * model.alpha_fano) - 2 * model.kappa_ext * (1 - 1j * chi) / den


def reflection_jacobian(omega, model: ReflectionModel, omega_p: float | None = None,
                        names=ReflectionModel.PARAMETERS) -> np.ndarray:
    """Analytic dR/dp, shape (len(omega), len(names)), complex."""
    if omega_p is None:
        omega_p = model.red_pump()
    m = model
    A, B, v, chi, den = _pieces(omega, m, omega_p)
    dwp = omega_p - m.omega_c
    ke = m.kappa_ext
    num = 1 - 1j * chi

    def via(dchi, dden_direct):
        dden = dden_direct + 4 * dwp * dchi
        return -2 * ke * (-1j * dchi / den - num * dden / den ** 2)

    zero = np.zeros_like(chi)
    dchi_dk = -chi / A
    cols = {}
    for name in names:
        if name == "omega_c":
            dchi = -chi / A * 2j
            col = via(dchi, -2j - 4 * chi + zero)
        elif name == "Omega_m":
            dchi = chi / m.Omega_m - chi / B * 2 * m.Omega_m
            col = via(dchi, zero)
        elif name == "kappa_int":
            col = via(dchi_dk, 1.0 + zero)
        elif name == "kappa_ext":
            col = via(dchi_dk, 1.0 + zero) - 2 * num / den
        elif name == "Gamma_m":
            col = via(-chi / B * 1j * v, zero)
        elif name == "g":
            dchi = 8 * m.g * m.Omega_m / (A * B)
            col = via(dchi, zero)
        elif name == "alpha_fano":
            col = -1j / (1 + 1j * m.alpha_fano) ** 2 + zero
        else:
            raise KeyError(name)
        cols[name] = col
    return np.stack([cols[n] for n in names], axis=-1)


def pump_photon_number(P_in, omega_p: float, model) -> np.ndarray:
    """Intracavity pump photons ``4 P k_e / (hbar w_p (k^2 + 4 (w_p - w_c)^2))``.

    ``model`` is a :class:`ReflectionModel` or :class:`DeviceParams`.
    """
    P = np.asarray(P_in, dtype=float)
    if np.any(P < 0):
        raise ValueError("pump power must be non-negative")
    d = omega_p - model.omega_c
    return 4 * P * model.kappa_ext / (hbar * omega_p * (model.kappa ** 2 + 4 * d ** 2))


def enhanced_coupling(g0: float, n_p):
    """Pump-enhanced coupling ``g0 sqrt(n_p)``."""
    n_p = np.asarray(n_p, dtype=float)
    if np.any(n_p < 0):
        raise ValueError("n_p must be non-negative")
    out = g0 * np.sqrt(n_p)
    return float(out) if out.ndim == 0 else out


# -- spectra -----------------------------------------------------------------


@dataclass
class Spectrum:
    """Measured reflection versus angular frequency.

    ``value`` is complex R for ``kind='complex'`` and power in dB for
    ``kind='db'``. ``weights`` multiply residuals (1/sigma).
    """

    freq: np.ndarray
    value: np.ndarray
    omega_p: float
    kind: str = "complex"
    weights: np.ndarray | None = None
    n_p: float | None = None
    P_in: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=float)
        self.value = np.asarray(self.value, dtype=complex if self.kind == "complex" else float)
        if self.kind not in ("complex", "db"):
            raise ValueError("kind must be 'complex' or 'db'")
        if self.freq.shape != self.value.shape:
            raise ValueError("freq and value lengths differ")
        if np.any(np.diff(self.freq) <= 0):
            raise ValueError("freq must be strictly increasing")
        if self.weights is not None:
            self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), self.freq.shape).copy()

    @classmethod
    def synthetic(cls, model: ReflectionModel, freq, omega_p: float | None = None,
                  kind: str = "complex", noise: float = 0.0, rng=None) -> "Spectrum":
        omega_p = model.red_pump() if omega_p is None else omega_p
        R = reflection(freq, model, omega_p)
        if kind == "db":
            value = 10 * np.log10(np.abs(R) ** 2)
            if noise:
                value = value + noise * rng.standard_normal(value.shape)
        else:
            value = R
            if noise:
                value = value + noise * (rng.standard_normal(R.shape) + 1j * rng.standard_normal(R.shape))
        return cls(np.asarray(freq, dtype=float), value, omega_p, kind)

    def power_db(self) -> np.ndarray:
        if self.kind == "db":
            return self.value
        return 10 * np.log10(np.abs(self.value) ** 2)


def read_spectrum(path) -> Spectrum:
    """Read a columnar spectrum file.

    Columns: frequency in Hz then either ``re im`` or ``power_db``. Header
    comments ``# key: value`` carry ``pump_frequency_hz`` (required) and
    optionally ``pump_power_w`` and ``n_p``.
    """
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if ":" in s:
                k, v = s[1:].split(":", 1)
                header[k.strip()] = v.strip()
            continue
        rows.append([float(x) for x in s.replace(",", " ").split()])
    data = np.asarray(rows, dtype=float)
    if "pump_frequency_hz" not in header:
        raise ValueError(f"{path}: header lacks pump_frequency_hz")
    omega_p = TWO_PI * float(header["pump_frequency_hz"])
    freq = TWO_PI * data[:, 0]
    if data.shape[1] == 3:
        value, kind = data[:, 1] + 1j * data[:, 2], "complex"
    elif data.shape[1] == 2:
        value, kind = data[:, 1], "db"
    else:
        raise ValueError(f"{path}: expected 2 or 3 columns, got {data.shape[1]}")
    P_in = float(header["pump_power_w"]) if "pump_power_w" in header else None
    n_p = float(header["n_p"]) if "n_p" in header else None
    return Spectrum(freq, value, omega_p, kind, None, n_p, P_in, header)


def write_spectrum(path, spectrum: Spectrum):
    lines = [f"# pump_frequency_hz: {float(spectrum.omega_p / TWO_PI)!r}"]
    if spectrum.P_in is not None:
        lines.append(f"# pump_power_w: {float(spectrum.P_in)!r}")
    if spectrum.n_p is not None:
        lines.append(f"# n_p: {float(spectrum.n_p)!r}")
    f_hz = spectrum.freq / TWO_PI
    if spectrum.kind == "complex":
        lines.append("# columns: freq_hz, re, im")
        lines += [f"{float(f)!r},{float(v.real)!r},{float(v.imag)!r}" for f, v in zip(f_hz, spectrum.value)]
    else:
        lines.append("# columns: freq_hz, power_db")
        lines += [f"{float(f)!r},{float(v)!r}" for f, v in zip(f_hz, spectrum.value)]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- fitting -----------------------------------------------------------------


def initial_guess(spectrum: Spectrum, Omega_m: float, Gamma_m: float, eta: float = 0.1) -> ReflectionModel:
    """Rough starting point from a power spectrum.

    omega_c comes from the deepest point of |R|, kappa from the width at the
    mean of the minimum and the off-resonant level. ``g`` starts at zero.
    """
    p = 10 ** (spectrum.power_db() / 10)
    i0 = int(np.argmin(p))
    level = 0.5 * (p[i0] + np.median(p))
    below = np.flatnonzero(p <= level)
    width = spectrum.freq[below[-1]] - spectrum.freq[below[0]] if below.size > 1 else np.ptp(spectrum.freq) / 10
    kappa = max(width, 1e-6 * spectrum.freq[i0])
    return ReflectionModel(spectrum.freq[i0], Omega_m, (1 - eta) * kappa, eta * kappa, Gamma_m, 0.0)


@dataclass
class FitResult:
    """Fitted model with linearized covariance over the free parameters."""

    model: ReflectionModel
    names: tuple
    cov: np.ndarray
    residual_norm: float
    lm: LMResult

    @property
    def stderr(self) -> dict:
        s = np.sqrt(np.clip(np.diag(self.cov), 0, None))
        return dict(zip(self.names, s))

    @property
    def converged(self) -> bool:
        return self.lm.converged

    def to_doc(self) -> dict:
        """Report keyed like the device configuration, in Hz with uncertainties."""
        err = self.stderr
        doc = {}
        for f in fields(ReflectionModel):
            name = f.name
            value = getattr(self.model, name)
            if name == "alpha_fano":
                entry = {"value": float(value)}
                if name in err:
                    entry["stderr"] = float(err[name])
            else:
                entry = {"value": float(value / TWO_PI), "unit": "Hz"}
                if name in err:
                    entry["stderr"] = float(err[name] / TWO_PI)
                name = f"{name}/2pi"
            entry["free"] = f.name in self.names
            doc[name] = entry
        doc["residual_norm"] = self.residual_norm
        doc["converged"] = bool(self.lm.converged)
        doc["iterations"] = int(self.lm.n_iter)
        return doc


_DEFAULT_FREE = ("omega_c", "kappa_int", "kappa_ext", "Gamma_m", "g")


def _scales(m: ReflectionModel, names) -> np.ndarray:
    out = []
    for n in names:
        if n in ("omega_c", "Omega_m"):
            out.append(m.kappa)  # absolute offsets resolved on the linewidth scale
        elif n == "alpha_fano":
            out.append(1.0)
        else:
            out.append(max(abs(getattr(m, n)), 1e-3 * m.kappa if n == "g" else 1e-300))
    return np.array(out)


def fit_reflection(spectra, initial: ReflectionModel, free=_DEFAULT_FREE, loss: str | None = None,
                   max_iter: int = 200, raise_on_failure: bool = True) -> FitResult:
    """Joint least-squares fit of one or more spectra sharing one model.

    Parameters
    ----------
    spectra : Spectrum or sequence of Spectrum
        Each spectrum brings its own pump frequency.
    initial : ReflectionModel
        Starting point; frozen parameters keep these values.
    free : sequence of str
        Names from ``ReflectionModel.PARAMETERS`` to fit.
    loss : {'complex', 'db'}, optional
        Residual space. Defaults to 'complex' when every spectrum has phase.

    Raises
    ------
    FitError
        No convergence within ``max_iter`` (unless ``raise_on_failure`` is False).
    """
    if isinstance(spectra, Spectrum):
        spectra = [spectra]
    names = tuple(free)
    for n in names:
        if n not in ReflectionModel.PARAMETERS:
            raise KeyError(f"unknown parameter {n!r}")
    if loss is None:
        loss = "complex" if all(s.kind == "complex" for s in spectra) else "db"
    if loss == "complex" and any(s.kind != "complex" for s in spectra):
        raise ValueError("complex loss needs complex spectra")
    n_points = sum(s.freq.size * (2 if loss == "complex" else 1) for s in spectra)
    if n_points < len(names):
        raise ValueError("fewer data points than free parameters")

    x0 = initial.vector(names)
    scale = _scales(initial, names)
    lower = np.array([0.0 if n in ("g",) else (-np.inf if n == "alpha_fano" else 1e-12) for n in names])
    lower = np.where(np.isfinite(lower), (lower - x0) / scale, -np.inf)

    def model_at(u):
        return initial.replace(**dict(zip(names, x0 + scale * u)))

    def residuals(u):
        m = model_at(u)
        out = []
        for s in spectra:
            R = reflection(s.freq, m, s.omega_p)
            w = 1.0 if s.weights is None else s.weights
            if loss == "complex":
                d = (R - s.value) * w
                out += [d.real, d.imag]
            else:
                out.append((10 * np.log10(np.abs(R) ** 2) - s.power_db()) * w)
        return np.concatenate(out)

    def jac(u):
        m = model_at(u)
        out = []
        for s in spectra:
            dR = reflection_jacobian(s.freq, m, s.omega_p, names) * scale
            w = 1.0 if s.weights is None else np.asarray(s.weights)[:, None]
            if loss == "complex":
                out += [dR.real * w, dR.imag * w]
            else:
                R = reflection(s.freq, m, s.omega_p)[:, None]
                out.append(20 / np.log(10) * (np.conj(R) * dR).real / np.abs(R) ** 2 * w)
        return np.vstack(out)

    with warnings.catch_warnings():
        warnings.simplefilter("default")
        res = levenberg_marquardt(residuals, np.zeros(len(names)), jac, lower=lower, max_iter=max_iter)
    if not res.converged and raise_on_failure:
        raise FitError(f"reflection fit did not converge after {res.n_iter} iterations", res)
    cov = res.cov * np.outer(scale, scale)
    return FitResult(model_at(res.x), names, cov, res.residual_norm, res)


def reflection_minima(model: ReflectionModel, omega_p: float | None = None, span: float | None = None,
                      n: int = 20001) -> np.ndarray:
    """Frequencies of the local minima of |R| near the cavity resonance."""
    omega_p = model.red_pump() if omega_p is None else omega_p
    span = span or 6 * (model.kappa + 2 * model.g)
    w = model.omega_c + np.linspace(-span / 2, span / 2, n)
    r = np.abs(reflection(w, model, omega_p))
    idx = np.flatnonzero((r[1:-1] < r[:-2]) & (r[1:-1] < r[2:])) + 1
    out = []
    for i in idx:
        # parabolic refinement on the sampled minimum
        y0, y1, y2 = r[i - 1], r[i], r[i + 1]
        h = w[1] - w[0]
        denom = y0 - 2 * y1 + y2
        out.append(w[i] + (0.5 * h * (y0 - y2) / denom if denom else 0.0))
    return np.array(out)


def normal_mode_splitting(model: ReflectionModel, omega_p: float | None = None) -> float:
    """Separation of the two deepest |R| minima (rad/s)."""
    mins = reflection_minima(model, omega_p)
    if mins.size < 2:
        return 0.0
    depth = np.abs(reflection(mins, model, omega_p if omega_p is not None else model.red_pump()))
    two = np.sort(mins[np.argsort(depth)[:2]])
    return float(two[1] - two[0])
