"""End-to-end pulsed optomechanics experiments.

Sequence per shot: sideband pre-cooling (with an optional displacement
drive on the mechanics), one beam-splitter or squeezer pulse, a hand-over
delay, then cavity readout. Readout is either exact (``mode='fast'``, the
Gaussian moments) or emulated through qubit tomography
(``mode='faithful'``). ``mode='lossless'`` uses the closed-form solutions.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .gaussdyn import (GaussianState, Interaction, PumpSchedule, analytic_lossless,
                       propagate_moments, steady_state)
from .jcsim import RabiTrace, ReadoutModel
from .params import BathSpec, ConfigError, DeviceParams, load_device_params
from .tomo import BasisTraces, PhotonDistribution, infer_distribution

TWO_PI = 2.0 * math.pi
MODES = ("fast", "faithful", "lossless")


class CalibrationError(ValueError):
    """Gain calibration is impossible with the supplied sweep."""


class CalibrationWarning(UserWarning):
    pass


class OverCorrectionWarning(UserWarning):
    pass


class CoolingWarning(UserWarning):
    pass


# -- plan ----------------------------------------------------------------------


@dataclass(frozen=True)
class Preparation:
    """Pre-cooling and displacement of the mechanics.

    ``cool_n_p`` pump photons at the red sideband (coupling ``g0 sqrt(n_p)``)
    set the cooled occupancy; ``alpha_sq`` is the target coherent part,
    produced by a classical force on the mechanics.
    """

    cool_n_p: float = 5e5
    cool_duration: float = 20e-6
    alpha_sq: float = 0.0


@dataclass(frozen=True)
class Readout:
    """Tomographic readout emulation used in faithful mode."""

    tau: tuple = tuple(np.linspace(0.0, 200e-9, 101))
    contrast: float = 0.51
    offset: float = 0.0
    noise: float = 0.01
    family: str = "displaced_thermal"

    def model(self) -> ReadoutModel:
        return ReadoutModel(self.contrast, self.offset)


@dataclass(frozen=True)
class ExperimentPlan:
    """One pump, a coupling, and the sweep axes.

    ``interaction`` selects the pump (red: beam splitter, blue: squeezer).
    ``g`` is the peak coupling (rad/s) and ``n_p`` the pump photons during
    the pulse, which set the pump-dependent cavity loss and heating.
    """

    interaction: Interaction = "beam_splitter"
    g: float = TWO_PI * 198e3
    n_p: float = 3.8e5
    theta: float = math.pi
    theta_grid: tuple = ()
    alpha_sq_grid: tuple = ()
    preparation: Preparation = field(default_factory=Preparation)
    readout: Readout = field(default_factory=Readout)
    sigma: float = 200e-9
    delay: float = 100e-9
    cutoff: float = 3.0
    heating_calibration_time: float = 10e-6

    def __post_init__(self):
        if self.interaction not in ("beam_splitter", "squeezer"):
            raise ValueError("interaction must be 'beam_splitter' or 'squeezer'")
        if self.theta < 0 or any(t < 0 for t in self.theta_grid):
            raise ValueError("theta must be non-negative")
        if self.g <= 0:
            raise ValueError("g must be positive")
        object.__setattr__(self, "theta_grid", tuple(float(t) for t in self.theta_grid))
        object.__setattr__(self, "alpha_sq_grid", tuple(float(a) for a in self.alpha_sq_grid))

    @property
    def pump_detuning_sign(self) -> int:
        """-1 for the red sideband, +1 for the blue one."""
        return -1 if self.interaction == "beam_splitter" else 1

    def replace(self, **changes) -> "ExperimentPlan":
        return dc_replace(self, **changes)

    def other_side(self) -> "ExperimentPlan":
        return self.replace(interaction="squeezer" if self.interaction == "beam_splitter" else "beam_splitter")

    def schedule(self, theta: float | None = None) -> PumpSchedule:
        th = self.theta if theta is None else theta
        return PumpSchedule.single(th, self.g, self.interaction, self.sigma, self.n_p, self.delay, self.cutoff)

    def interaction_time(self, theta: float | None = None) -> float:
        """Effective interaction time ``theta / (2 g)``."""
        return (self.theta if theta is None else theta) / (2 * self.g)

    def digest(self) -> str:
        doc = json.dumps(plan_to_doc(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


_KINDS = {"red": "beam_splitter", "beam_splitter": "beam_splitter",
          "blue": "squeezer", "squeezer": "squeezer"}


def _number(key, raw) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"not a number: {raw!r}") from None


def _grid(key, raw, conv=_number):
    """A list of values or a ``{start, stop, num}`` linear grid."""
    if raw is None:
        return ()
    if isinstance(raw, dict):
        try:
            return tuple(np.linspace(conv(f"{key}.start", raw["start"]), conv(f"{key}.stop", raw["stop"]),
                                     int(raw["num"])))
        except KeyError as exc:
            raise ConfigError(f"{key}.{exc.args[0]}", "missing grid field") from None
    return tuple(conv(key, x) for x in raw)


def _theta(key, raw) -> float:
    if isinstance(raw, str):
        s = raw.replace(" ", "")
        if s.endswith("pi"):
            head = s[:-2].rstrip("*")
            return (float(head) if head else 1.0) * math.pi
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot read theta from {raw!r}") from None


def load_plan(source) -> tuple[ExperimentPlan, dict]:
    """Read a plan document (mapping or YAML path).

    Returns the plan plus the remaining run settings (``device`` config
    path resolved relative to the plan file, ``seed``, ``mode``, ``outputs``).
    """
    base = None
    if isinstance(source, (str, Path)):
        base = Path(source).parent
        try:
            doc = yaml.safe_load(Path(source).read_text())
        except OSError as exc:
            raise ConfigError("plan", str(exc)) from None
    else:
        doc = dict(source)
    if not isinstance(doc, dict):
        raise ConfigError("plan", "plan document must be a mapping")
    inter = doc.get("interaction", {}) or {}
    prep = doc.get("preparation", {}) or {}
    ro = doc.get("readout", {}) or {}
    sweep = doc.get("sweep", {}) or {}
    pump = inter.get("pump", "red")
    if pump not in _KINDS:
        raise ConfigError("interaction.pump", f"unknown pump {pump!r} (red or blue)")
    kw = {"interaction": _KINDS[pump]}
    if "g/2pi" in inter:
        from .params import parse_rate
        kw["g"] = parse_rate("interaction.g/2pi", inter["g/2pi"])
    if "n_p" in inter:
        kw["n_p"] = float(inter["n_p"])
    if "theta" in inter:
        kw["theta"] = _theta("interaction.theta", inter["theta"])
    for key in ("sigma", "delay"):
        if key in inter:
            from .params import parse_time
            kw[key] = parse_time(f"interaction.{key}", inter[key])
    if "cutoff" in inter:
        kw["cutoff"] = float(inter["cutoff"])
    kw["theta_grid"] = _grid("sweep.theta", sweep.get("theta"), _theta)
    kw["alpha_sq_grid"] = _grid("sweep.alpha_sq", sweep.get("alpha_sq"))
    p_kw = {}
    if "cool_n_p" in prep:
        p_kw["cool_n_p"] = float(prep["cool_n_p"])
    if "alpha_sq" in prep:
        p_kw["alpha_sq"] = float(prep["alpha_sq"])
    if "cool_duration" in prep:
        from .params import parse_time
        p_kw["cool_duration"] = parse_time("preparation.cool_duration", prep["cool_duration"])
    kw["preparation"] = Preparation(**p_kw)
    r_kw = {k: float(ro[k]) for k in ("contrast", "offset", "noise") if k in ro}
    if "family" in ro:
        r_kw["family"] = str(ro["family"])
    if "tau" in ro:
        from .params import parse_time
        t = ro["tau"]
        r_kw["tau"] = tuple(np.linspace(parse_time("readout.tau.start", t["start"]),
                                        parse_time("readout.tau.stop", t["stop"]), int(t["num"])))
    kw["readout"] = Readout(**r_kw)
    try:
        plan = ExperimentPlan(**kw)
    except ValueError as exc:
        raise ConfigError("interaction", str(exc)) from None
    run = {k: doc[k] for k in ("seed", "mode", "outputs") if k in doc}
    if "device" in doc:
        dev = Path(doc["device"])
        run["device"] = dev if dev.is_absolute() or base is None else base / dev
    return plan, run


def plan_to_doc(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["readout"]["tau"] = [float(x) for x in d["readout"]["tau"]]
    return d


# -- preparation --------------------------------------------------------------


@dataclass
class PreparedState:
    state: GaussianState
    drive: complex
    cooled_below_one: bool


def prepare_mechanics(plan: ExperimentPlan, params: DeviceParams, baths: BathSpec,
                      alpha_sq: float | None = None) -> PreparedState:
    """Mechanical state after pre-cooling and displacement.

    The stationary state of the moment equations under the cooling pump
    gives ``n_m^i``; a constant force on ``<b>`` is scaled to reach the
    requested ``|alpha_m^i|^2``. The cavity is then taken to start in vacuum
    (it relaxes within a few 1/kappa after the pump is switched off).
    """
    prep = plan.preparation
    target = prep.alpha_sq if alpha_sq is None else alpha_sq
    if target < 0:
        raise ValueError("alpha_sq must be non-negative")
    n_p = prep.cool_n_p
    g = params.g0 * math.sqrt(n_p)
    ss = steady_state(g, 0.0, baths, params, n_p=n_p)
    drive = 0.0
    alpha = 0.0
    if target > 0:
        unit = steady_state(g, 0.0, baths, params, n_p=n_p, drive=1.0).alpha_m
        drive = math.sqrt(target) / abs(unit)
        alpha = unit * drive
    n_m = ss.n_m
    ok = n_m < 1.0
    if not ok:
        warnings.warn(f"cooling reaches only n_m = {n_m:.3g}", CoolingWarning, stacklevel=2)
    return PreparedState(GaussianState.from_thermal(0.0, n_m, 0.0, alpha), drive, ok)


# -- single shot ---------------------------------------------------------------


def heating_correction(n_c_total, n_int_eq, kappa_opt: float, t: float):
    """Cavity occupancy due to the interaction alone.

    ``n_c - n_int_eq (1 - exp(-kappa_opt t))``. Negative results are clipped
    to zero with an :class:`OverCorrectionWarning`.
    """
    if t < 0 or kappa_opt < 0:
        raise ValueError("t and kappa_opt must be non-negative")
    out = np.asarray(n_c_total, dtype=float) - np.asarray(n_int_eq, dtype=float) * (-math.expm1(-kappa_opt * t))
    if np.any(out < 0):
        warnings.warn("heating correction exceeds the measured occupancy; clipped at 0",
                      OverCorrectionWarning, stacklevel=2)
        out = np.clip(out, 0.0, None)
    return float(out) if out.ndim == 0 else out


def effective_linewidth(plan: ExperimentPlan, params: DeviceParams) -> float:
    """kappa/2 under the red pump, kappa under the blue pump."""
    kappa = float(params.kappa_at(plan.n_p))
    return kappa / 2 if plan.interaction == "beam_splitter" else kappa


def calibrate_heating(plan: ExperimentPlan, params: DeviceParams, baths: BathSpec) -> float:
    """Apparent cavity bath occupancy at the plan's pump power.

    Emulates the calibration measurement: a long red-sideband pulse
    (``plan.heating_calibration_time``) on pre-cooled mechanics, followed by
    the hand-over delay; the cavity occupancy left over is taken as the
    equilibrium heating level.
    """
    base = plan.replace(interaction="beam_splitter")
    theta = 2 * plan.g * plan.heating_calibration_time
    state = prepare_mechanics(base.replace(preparation=dc_replace(plan.preparation, alpha_sq=0.0)),
                              params, baths).state
    final = propagate_moments(state, base.schedule(theta), baths, params, check=False).final
    return float(final.n_c)


@dataclass
class ShotResult:
    """Cavity readout after one interaction pulse."""

    theta: float
    alpha_m_sq_initial: float
    n_m_initial: float
    final: GaussianState | None
    n_c: float
    alpha_c_sq: float
    n_c_corrected: float

    @property
    def occupancy(self) -> float:
        """Heating-corrected <a^dag a>."""
        return self.n_c_corrected + self.alpha_c_sq


class _Reader:
    """Faithful readout: qubit trace emulation plus distribution inference."""

    def __init__(self, plan: ExperimentPlan, params: DeviceParams, rng: np.random.Generator):
        self.plan, self.params, self.rng = plan, params, rng
        self.readout = plan.readout.model()
        self._bases: dict = {}

    def basis(self, n_max: int) -> BasisTraces:
        for k in sorted(self._bases):
            if k >= n_max:
                return self._bases[k]
        b = BasisTraces(self.params, self.plan.readout.tau, n_max, None, self.readout)
        self._bases[n_max] = b
        return b

    def __call__(self, n_c: float, alpha_c_sq: float) -> tuple[float, float]:
        truth = PhotonDistribution.displaced_thermal(max(n_c, 0.0), max(alpha_c_sq, 0.0))
        n_max = max(truth.recommended_n_max(), 15)
        basis = self.basis(n_max)
        clean = basis.predict(truth.populations(basis.n_max))
        noise = self.plan.readout.noise
        data = clean + noise * self.rng.standard_normal(clean.shape)
        trace = RabiTrace(basis.tau, data, self.readout, sigma=noise if noise > 0 else None)
        family = self.plan.readout.family
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = infer_distribution(trace, family, self.params, basis=basis,
                                     initial={"n_bar": max(n_c, 1e-3), "alpha_sq": max(alpha_c_sq, 0.0)}
                                     if family == "displaced_thermal" else None,
                                     raise_on_failure=False)
        return res.estimates.get("n_bar", 0.0), res.estimates.get("alpha_sq", 0.0)


def run_shot(plan: ExperimentPlan, params: DeviceParams, baths: BathSpec, theta: float | None = None,
             alpha_sq: float | None = None, mode: str = "fast", n_int_apparent: float | None = None,
             reader: _Reader | None = None, prepared: PreparedState | None = None) -> ShotResult:
    """Prepare, pulse, read out and heating-correct one configuration."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    theta = plan.theta if theta is None else theta
    if mode == "lossless":
        a2 = plan.preparation.alpha_sq if alpha_sq is None else alpha_sq
        n_m = _lossless_n_m(plan, params, baths)
        r = analytic_lossless(theta, plan.interaction, 0.0, n_m, 0.0, math.sqrt(a2))
        return ShotResult(theta, a2, n_m, None, r.n_c, abs(r.alpha_c) ** 2, r.n_c)
    prepared = prepared or prepare_mechanics(plan, params, baths, alpha_sq)
    s0 = prepared.state
    final = propagate_moments(s0, plan.schedule(theta), baths, params).final
    n_c, a_c = final.n_c, abs(final.alpha_c) ** 2
    if mode == "faithful":
        if reader is None:
            reader = _Reader(plan, params, np.random.default_rng(0))
        n_c, a_c = reader(n_c, a_c)
    if n_int_apparent is None:
        n_int_apparent = calibrate_heating(plan, params, baths)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverCorrectionWarning)
        corrected = heating_correction(n_c, n_int_apparent, effective_linewidth(plan, params),
                                       plan.interaction_time(theta))
    return ShotResult(theta, abs(s0.alpha_m) ** 2, s0.n_m, final, n_c, a_c, corrected)


def _lossless_n_m(plan, params, baths) -> float:
    return prepare_mechanics(plan, params, baths, 0.0).state.n_m


# -- sweeps --------------------------------------------------------------------


@dataclass
class InteractionSweep:
    """Cavity and mechanics moments versus theta."""

    interaction: str
    theta: np.ndarray
    n_c: np.ndarray
    alpha_c_sq: np.ndarray
    n_m: np.ndarray
    alpha_m_sq: np.ndarray
    occupancy_measured: np.ndarray | None = None

    def columns(self) -> dict:
        cols = {"theta": self.theta, "n_c": self.n_c, "alpha_c_sq": self.alpha_c_sq,
                "occupancy_c": self.n_c + self.alpha_c_sq, "n_m": self.n_m, "alpha_m_sq": self.alpha_m_sq}
        if self.occupancy_measured is not None:
            cols["occupancy_c_measured"] = self.occupancy_measured
        return cols


def run_interaction_sweep(plan: ExperimentPlan, params: DeviceParams, baths: BathSpec,
                          mode: str = "fast", seed: int = 0) -> InteractionSweep:
    """Final moments for every theta of ``plan.theta_grid``.

    ``mode='faithful'`` adds the occupancy recovered through emulated qubit
    tomography (with per-point noise drawn from ``seed``).
    """
    if not plan.theta_grid:
        raise ValueError("plan has no theta grid")
    thetas = np.asarray(plan.theta_grid)
    rows = []
    if mode == "lossless":
        n_m = _lossless_n_m(plan, params, baths)
        a = math.sqrt(plan.preparation.alpha_sq)
        for th in thetas:
            r = analytic_lossless(th, plan.interaction, 0.0, n_m, 0.0, a)
            rows.append((r.n_c, abs(r.alpha_c) ** 2, r.n_m, abs(r.alpha_m) ** 2))
        arr = np.array(rows)
        return InteractionSweep(plan.interaction, thetas, *arr.T)
    prepared = prepare_mechanics(plan, params, baths)
    measured = []
    reader = _Reader(plan, params, np.random.default_rng(np.random.SeedSequence(seed))) if mode == "faithful" else None
    for th in thetas:
        fin = propagate_moments(prepared.state, plan.schedule(th), baths, params).final
        rows.append((fin.n_c, abs(fin.alpha_c) ** 2, fin.n_m, abs(fin.alpha_m) ** 2))
        if reader is not None:
            n, a = reader(fin.n_c, abs(fin.alpha_c) ** 2)
            measured.append(n + a)
    arr = np.array(rows)
    return InteractionSweep(plan.interaction, thetas, *arr.T,
                            occupancy_measured=np.array(measured) if reader is not None else None)


# -- gains ---------------------------------------------------------------------


@dataclass(frozen=True)
class GainCalibration:
    """Displacement gains of both pumps at a fixed theta."""

    G_minus: float
    G_plus: float
    theta: float
    alpha_sq_range: tuple
    r2_minus: float = 1.0
    r2_plus: float = 1.0
    stderr_minus: float = 0.0
    stderr_plus: float = 0.0

    def __post_init__(self):
        if not (self.G_minus > 0 and self.G_plus > 0):
            raise CalibrationError("gains must be positive")
        h = self.theta / 2
        if self.G_minus > math.sin(h) ** 2 + 3 * self.stderr_minus + 1e-9:
            warnings.warn("G- exceeds the lossless bound sin^2(theta/2)", CalibrationWarning, stacklevel=2)
        if self.G_plus > math.sinh(h) ** 2 + 3 * self.stderr_plus + 1e-9:
            warnings.warn("G+ exceeds the lossless bound sinh^2(theta/2)", CalibrationWarning, stacklevel=2)

    @classmethod
    def lossless(cls, theta: float = math.pi) -> "GainCalibration":
        return cls(math.sin(theta / 2) ** 2, math.sinh(theta / 2) ** 2, theta, (0.0, 0.0))

    def scaled(self, factor: float) -> "GainCalibration":
        return dc_replace(self, G_minus=self.G_minus * factor, G_plus=self.G_plus * factor)


def fit_through_origin(x, y) -> tuple[float, float, float]:
    """Slope of ``y = G x``, its standard error, and R^2."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    sxx = float(x @ x)
    if sxx == 0:
        raise CalibrationError("degenerate calibration: all displacements are zero")
    slope = float(x @ y) / sxx
    res = y - slope * x
    ss_res = float(res @ res)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    dof = max(x.size - 1, 1)
    se = math.sqrt(ss_res / dof / sxx)
    return slope, se, r2


def calibrate_gains(plan: ExperimentPlan, params: DeviceParams, baths: BathSpec,
                    alpha_sq_grid: Sequence[float] | None = None, mode: str = "fast",
                    seed: int = 0, min_r2: float = 0.99) -> GainCalibration:
    """G+- from a displacement sweep at ``plan.theta``.

    Each gain is the slope of the final cavity ``|alpha_c|^2`` against
    ``|alpha_m^i|^2`` (least squares through the origin). Only magnitudes
    enter, so the drive phase is irrelevant. R^2 below ``min_r2`` triggers a
    :class:`CalibrationWarning`.
    """
    grid = np.asarray(alpha_sq_grid if alpha_sq_grid is not None else plan.alpha_sq_grid, dtype=float)
    if grid.size == 0 or np.all(grid == 0):
        raise CalibrationError("degenerate calibration: the sweep has no non-zero displacement")
    if mode == "lossless":
        return GainCalibration.lossless(plan.theta)
    out = {}
    for side in ("beam_splitter", "squeezer"):
        p = plan.replace(interaction=side)
        reader = _Reader(p, params, np.random.default_rng(np.random.SeedSequence([seed, len(side)]))) \
            if mode == "faithful" else None
        x, y = [], []
        for a2 in grid:
            prep = prepare_mechanics(p, params, baths, a2)
            fin = propagate_moments(prep.state, p.schedule(), baths, params).final
            ac = abs(fin.alpha_c) ** 2
            if reader is not None:
                ac = reader(fin.n_c, ac)[1]
            x.append(abs(prep.state.alpha_m) ** 2)
            y.append(ac)
        out[side] = fit_through_origin(x, y)
    (gm, sm, rm), (gp, sp, rp) = out["beam_splitter"], out["squeezer"]
    for name, r2 in (("G-", rm), ("G+", rp)):
        if r2 < min_r2:
            warnings.warn(f"{name} calibration poorly linear (R^2 = {r2:.4f})", CalibrationWarning, stacklevel=2)
    return GainCalibration(gm, gp, plan.theta, (float(grid.min()), float(grid.max())), rm, rp, sm, sp)


# -- vacuum extraction ------------------------------------------------------------


@dataclass
class VacuumExtraction:
    """Occupancies referred back to the mechanical input."""

    alpha_sq: np.ndarray
    occupancy_minus: np.ndarray
    occupancy_plus: np.ndarray
    gains: GainCalibration
    n_int_apparent: float = 0.0
    n_m_initial: float = 0.0

    @property
    def referred_minus(self) -> np.ndarray:
        """<a^dag a>_- / G-, an estimate of <b^dag b>_i."""
        return self.occupancy_minus / self.gains.G_minus

    @property
    def referred_plus(self) -> np.ndarray:
        """<a^dag a>_+ / G+, an estimate of <b^dag b>_i + 1."""
        return self.occupancy_plus / self.gains.G_plus

    @property
    def difference(self) -> np.ndarray:
        return self.referred_plus - self.referred_minus

    def columns(self) -> dict:
        return {"alpha_m_sq": self.alpha_sq, "occupancy_minus": self.occupancy_minus,
                "occupancy_plus": self.occupancy_plus, "referred_minus": self.referred_minus,
                "referred_plus": self.referred_plus, "difference": self.difference}


def extract_vacuum(plan: ExperimentPlan, gains: GainCalibration, params: DeviceParams, baths: BathSpec,
                   mode: str = "fast", seed: int = 0, alpha_sq_grid=None) -> VacuumExtraction:
    """Run both pumps over the displacement sweep and refer occupancies back.

    The plan's own ``interaction`` is ignored: both sides are run with the
    same coupling, pump power and pulse shape. The cavity occupancies are
    heating corrected with the apparent bath level from
    :func:`calibrate_heating`.
    """
    grid = np.asarray(alpha_sq_grid if alpha_sq_grid is not None else plan.alpha_sq_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("plan has no displacement sweep")
    occ = {}
    n_int = 0.0
    n_m0 = _lossless_n_m(plan, params, baths)
    if mode != "lossless":
        n_int = calibrate_heating(plan, params, baths)
    for side in ("beam_splitter", "squeezer"):
        p = plan.replace(interaction=side)
        reader = _Reader(p, params, np.random.default_rng(np.random.SeedSequence([seed, len(side), 7]))) \
            if mode == "faithful" else None
        vals = []
        for a2 in grid:
            if mode == "lossless":
                r = analytic_lossless(p.theta, side, 0.0, n_m0, 0.0, math.sqrt(a2))
                vals.append(r.occupancy_c)
                continue
            shot = run_shot(p, params, baths, alpha_sq=a2, mode=mode, n_int_apparent=n_int, reader=reader)
            vals.append(shot.occupancy)
        occ[side] = np.array(vals)
    return VacuumExtraction(grid, occ["beam_splitter"], occ["squeezer"], gains, n_int, n_m0)


# -- detector comparison ------------------------------------------------------------


@dataclass(frozen=True)
class DetectorAsymmetry:
    number: float
    linear: float


def detector_comparison(theta: float, n_b: float = 0.0, delta_c: float = 1.0, delta_m: float = 1.0,
                        n_a: float = 0.0) -> DetectorAsymmetry:
    """Asymmetry ``<a^dag a>_+/sinh^2 - <a^dag a>_-/sin^2`` seen by two detectors.

    The commutators ``[a, a^dag] = delta_c`` and ``[b, b^dag] = delta_m`` are
    kept symbolic. A number detector reads the normally ordered occupancy
    directly, so only ``delta_m`` survives. A linear detector reads the
    symmetrized ``<a^dag a + a a^dag>`` and subtracts ``delta_c``, which
    leaves ``delta_c`` whatever the mechanics does. ``n_a``, ``n_b`` are the
    initial occupancies (the asymmetry identities assume ``n_a = 0``).
    """
    h = theta / 2
    s2, c2 = math.sin(h) ** 2, math.cos(h) ** 2
    sh2, ch2 = math.sinh(h) ** 2, math.cosh(h) ** 2
    if s2 == 0 or sh2 == 0:
        raise ValueError("theta must be non-zero")
    num_minus = n_a * c2 + n_b * s2
    num_plus = n_a * ch2 + (n_b + delta_m) * sh2
    sym_a, sym_b = 2 * n_a + delta_c, 2 * n_b + delta_m
    lin_minus = (sym_a * c2 + sym_b * s2 - delta_c) / 2
    lin_plus = (sym_a * ch2 + sym_b * sh2 - delta_c) / 2
    return DetectorAsymmetry(num_plus / sh2 - num_minus / s2, lin_plus / sh2 - lin_minus / s2)


def load_run(plan_path) -> tuple[ExperimentPlan, DeviceParams, BathSpec, dict]:
    """Plan, device parameters and run settings from a plan file."""
    plan, run = load_plan(plan_path)
    if "device" in run:
        params, baths = load_device_params(run["device"])
    else:
        from .params import default_device
        params, baths = default_device()
    return plan, params, baths, run
