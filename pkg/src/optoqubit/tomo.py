"""Photon-number distributions, predicted qubit Rabi traces, and inversion.

A qubit prepared in |g> and brought into resonance with the cavity absorbs
photons at the rates 2J sqrt(n); the resulting P_e(tau) is linear in the
number populations p_n. The forward model therefore precomputes one trace per
Fock state and mixes them with p_n.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .jcsim import QubitControl, RabiTrace, ReadoutModel, block_evolve, default_step
from .lm import FitError, levenberg_marquardt
from .params import DeviceParams

TWO_PI = 2.0 * math.pi
TAIL_TOL = 1e-6
MAX_SUPPORTED_OCCUPANCY = 10.0
DISTINGUISHABILITY_FLOOR = 0.1


class TailBoundError(ValueError):
    """Truncated populations miss more than the allowed probability mass."""


class FlatLikelihoodWarning(UserWarning):
    """Thermal and coherent families cannot be told apart at this occupancy."""


class OccupancyWarning(UserWarning):
    """Occupancy beyond the range where the two-level qubit model holds."""


def default_control() -> QubitControl:
    """Qubit parked 800 MHz away, tuned in with a 4 ns linear ramp."""
    return QubitControl.tune_in(TWO_PI * 800e6, 4e-9)


# -- distributions -------------------------------------------------------------


def thermal_pn(n_bar: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if n_bar == 0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(n_bar) - (n + 1) * math.log1p(n_bar))


def poisson_pn(alpha_sq: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if alpha_sq == 0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(alpha_sq) - alpha_sq - gammaln(n + 1))


def displaced_thermal_pn(n_bar: float, alpha_sq: float, n_max: int) -> np.ndarray:
    """Populations of a displaced thermal state.

    Uses the positive-term expansion

        p_n = exp(-x) sum_k C(n,k) nb^(n-k) / (1+nb)^(n-k+1) y^k / k!

    with ``x = |a|^2/(1+nb)``, ``y = |a|^2/(1+nb)^2``, evaluated in log space.
    It reduces to the geometric law at ``|a|^2 = 0`` and to Poisson at
    ``nb = 0``.
    """
    if n_bar < 0 or alpha_sq < 0:
        raise ValueError("occupancies must be non-negative")
    if alpha_sq == 0:
        return thermal_pn(n_bar, n_max)
    if n_bar == 0:
        return poisson_pn(alpha_sq, n_max)
    x = alpha_sq / (1 + n_bar)
    log_y = math.log(alpha_sq) - 2 * math.log1p(n_bar)
    ln_nb, ln_1p = math.log(n_bar), math.log1p(n_bar)
    out = np.empty(n_max + 1)
    for n in range(n_max + 1):
        k = np.arange(n + 1)
        terms = (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
                 + (n - k) * ln_nb - (n - k + 1) * ln_1p + k * log_y - gammaln(k + 1))
        out[n] = logsumexp(terms) - x
    return np.exp(out)


@dataclass(frozen=True)
class PhotonDistribution:
    """Cavity photon-number distribution.

    ``family`` is one of 'thermal', 'coherent', 'displaced_thermal' or
    'explicit'. Parametric families materialize populations lazily for any
    truncation.
    """

    family: str
    n_bar: float = 0.0
    alpha_sq: float = 0.0
    explicit: tuple | None = None

    FAMILIES = ("thermal", "coherent", "displaced_thermal", "explicit")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.n_bar < 0 or self.alpha_sq < 0:
            raise ValueError("occupancies must be non-negative")
        if self.family == "explicit":
            p = np.asarray(self.explicit, dtype=float)
            if p.ndim != 1 or np.any(p < 0):
                raise ValueError("explicit populations must be a non-negative vector")

    @classmethod
    def thermal(cls, n_bar: float) -> "PhotonDistribution":
        return cls("thermal", n_bar=n_bar)

    @classmethod
    def coherent(cls, alpha_sq: float) -> "PhotonDistribution":
        return cls("coherent", alpha_sq=alpha_sq)

    @classmethod
    def displaced_thermal(cls, n_bar: float, alpha_sq: float) -> "PhotonDistribution":
        return cls("displaced_thermal", n_bar=n_bar, alpha_sq=alpha_sq)

    @classmethod
    def from_populations(cls, p) -> "PhotonDistribution":
        return cls("explicit", explicit=tuple(float(x) for x in p))

    @classmethod
    def fock(cls, n: int) -> "PhotonDistribution":
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls.from_populations(p)

    @classmethod
    def vacuum(cls) -> "PhotonDistribution":
        return cls.thermal(0.0)

    @property
    def mean(self) -> float:
        """Total occupancy <a^dag a>."""
        if self.family == "explicit":
            p = np.asarray(self.explicit)
            return float(np.arange(p.size) @ p)
        return self.n_bar + self.alpha_sq

    def recommended_n_max(self, tail_tol: float = TAIL_TOL) -> int:
        """Truncation holding all but ``tail_tol`` of the probability.

        Starts from ``<n> + 6 sqrt(<n>) + 10`` (the Poisson-tail rule) and
        grows it until the materialized tail passes.
        """
        if self.family == "explicit":
            return max(len(self.explicit) - 1, 1)
        m = self.mean
        n = math.ceil(m + 6 * math.sqrt(m) + 10)
        while 1.0 - materialize_pn(self, n, tail_tol=1.0).sum() > tail_tol:
            n = math.ceil(n * 1.2)
        return n

    def populations(self, n_max: int, tail_tol: float = TAIL_TOL) -> np.ndarray:
        return materialize_pn(self, n_max, tail_tol)


def materialize_pn(dist: PhotonDistribution, n_max: int, tail_tol: float = TAIL_TOL) -> np.ndarray:
    """Populations p_0..p_n_max.

    Raises
    ------
    TailBoundError
        If the truncation drops more than ``tail_tol`` of probability.
    """
    if dist.family == "thermal":
        p = thermal_pn(dist.n_bar, n_max)
    elif dist.family == "coherent":
        p = poisson_pn(dist.alpha_sq, n_max)
    elif dist.family == "displaced_thermal":
        p = displaced_thermal_pn(dist.n_bar, dist.alpha_sq, n_max)
    else:
        e = np.asarray(dist.explicit, dtype=float)
        p = np.zeros(n_max + 1)
        m = min(e.size, n_max + 1)
        p[:m] = e[:m]
        if e[m:].sum() > tail_tol:
            raise TailBoundError(f"explicit populations extend beyond n_max={n_max}")
        return p
    missing = 1.0 - p.sum()
    if missing > tail_tol:
        raise TailBoundError(f"truncation at n_max={n_max} loses {missing:.2e}; increase n_max")
    return p


# -- forward model ----------------------------------------------------------------


class BasisTraces:
    """Excited-state traces for each Fock input, qubit prepared per ``readout``.

    ``traces[n, i]`` is the ideal P_e at ``tau[i]`` for cavity Fock state n.
    Instances are cached per detuning offset so flux-offset fits only pay for
    offsets they actually visit.
    """

    def __init__(self, params: DeviceParams, tau, n_max: int, control: QubitControl | None = None,
                 readout: ReadoutModel | None = None, qubit: str = "g", dt: float | None = None):
        self.params = params
        self.tau = np.asarray(tau, dtype=float)
        self.n_max = n_max
        self.control = control or default_control()
        self.readout = readout or ReadoutModel()
        self.qubit = qubit
        self.dt = dt
        self._cache: dict = {}

    def ideal(self, offset: float = 0.0) -> np.ndarray:
        key = float(offset)
        if key not in self._cache:
            ctrl = self.control.with_offset(offset)
            t_eval = self.tau + ctrl.interaction_start
            p_exc = self.readout.prepared_excited(self.qubit)
            self._cache[key], _ = block_evolve(np.eye(self.n_max + 1), self.params, ctrl, t_eval,
                                               self.n_max, p_exc, self.dt)
            if len(self._cache) > 64:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def predict(self, p: np.ndarray, offset: float = 0.0) -> np.ndarray:
        """Reported trace for populations ``p``."""
        ideal = np.clip(p @ self.ideal(offset), 0.0, 1.0)
        return self.readout.apply(ideal, offset)


def rabi_forward(distribution: PhotonDistribution, params: DeviceParams, tau_grid,
                 control: QubitControl | None = None, readout: ReadoutModel | None = None,
                 n_max: int | None = None, qubit: str = "g", flux_offset: float = 0.0) -> RabiTrace:
    """Predicted qubit trace after interacting with ``distribution``.

    The cavity starts in the number-diagonal mixture of p_n (number
    coherences do not change P_e), the qubit in |g> unless ``qubit='e'``.
    """
    readout = readout or ReadoutModel()
    n_max = n_max or _checked_n_max(distribution)
    basis = BasisTraces(params, tau_grid, n_max, control, readout, qubit)
    ideal = np.clip(distribution.populations(n_max) @ basis.ideal(flux_offset), 0.0, 1.0)
    return RabiTrace(basis.tau, readout.apply(ideal, flux_offset), readout, None, ideal,
                     protocol="detector" if qubit == "g" else "single_photon",
                     meta={"n_max": n_max, "family": distribution.family})


def _checked_n_max(dist: PhotonDistribution) -> int:
    if dist.mean > MAX_SUPPORTED_OCCUPANCY:
        warnings.warn(f"<a^dag a> = {dist.mean:.3g} exceeds {MAX_SUPPORTED_OCCUPANCY:g}; "
                      "a two-level qubit model is not accurate there", OccupancyWarning, stacklevel=3)
    return dist.recommended_n_max()


# -- inference -----------------------------------------------------------------

_FAMILY_PARAMS = {
    "thermal": ("n_bar",),
    "coherent": ("alpha_sq",),
    "displaced_thermal": ("n_bar", "alpha_sq"),
}


@dataclass
class InferenceResult:
    """Fitted distribution parameters with linearized covariance."""

    family: str
    estimates: dict
    names: tuple
    cov: np.ndarray
    residual_norm: float
    chi2: float
    n_max: int
    converged: bool
    flat_likelihood: bool = False
    notes: list = field(default_factory=list)

    @property
    def stderr(self) -> dict:
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.cov), 0, None))))

    @property
    def total_occupancy(self) -> float:
        return self.estimates.get("n_bar", 0.0) + self.estimates.get("alpha_sq", 0.0)

    @property
    def total_stderr(self) -> float:
        idx = [i for i, n in enumerate(self.names) if n in ("n_bar", "alpha_sq")]
        v = np.zeros(len(self.names))
        v[idx] = 1.0
        return float(np.sqrt(max(v @ self.cov @ v, 0.0)))

    def distribution(self) -> PhotonDistribution:
        return PhotonDistribution(self.family, self.estimates.get("n_bar", 0.0),
                                  self.estimates.get("alpha_sq", 0.0))

    def to_doc(self) -> dict:
        return {
            "family": self.family,
            "estimates": {k: float(v) for k, v in self.estimates.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "covariance": self.cov.tolist(),
            "residual_norm": self.residual_norm,
            "chi2": self.chi2,
            "n_max": self.n_max,
            "converged": self.converged,
            "flat_likelihood": self.flat_likelihood,
            "notes": list(self.notes),
        }


def _make_dist(family: str, vals: dict) -> PhotonDistribution:
    return PhotonDistribution(family, max(vals.get("n_bar", 0.0), 0.0), max(vals.get("alpha_sq", 0.0), 0.0))


def infer_distribution(trace: RabiTrace, family: str, params: DeviceParams,
                       control: QubitControl | None = None, fit_mask=None, initial: dict | None = None,
                       n_max: int | None = None, basis: BasisTraces | None = None,
                       max_iter: int = 100, raise_on_failure: bool = True) -> InferenceResult:
    """Fit a distribution family (and optionally a flux offset) to a trace.

    Parameters
    ----------
    trace : RabiTrace
        Reported qubit populations; ``trace.readout`` is taken as known.
        ``trace.sigma`` gives Gaussian per-point uncertainties; without it
        the covariance is scaled by the residual variance.
    family : {'thermal', 'coherent', 'displaced_thermal'}
    fit_mask : sequence of str, optional
        Subset of the family parameters plus ``'flux_offset'`` (rad/s).
    initial : dict, optional
        Starting values; total occupancy defaults to a coarse grid search.
    basis : BasisTraces, optional
        Precomputed Fock traces on ``trace.tau``; reused across many fits.
    """
    if family not in _FAMILY_PARAMS:
        raise ValueError(f"cannot infer family {family!r}")
    names = tuple(fit_mask) if fit_mask is not None else _FAMILY_PARAMS[family]
    allowed = set(_FAMILY_PARAMS[family]) | {"flux_offset"}
    if not set(names) <= allowed:
        raise ValueError(f"fit_mask {names} not valid for {family}")
    if basis is None:
        n_max = n_max or 15
        basis = BasisTraces(params, trace.tau, n_max, control, trace.readout)
    n_max = basis.n_max
    if not np.array_equal(basis.tau, trace.tau):
        raise ValueError("basis traces were computed on a different tau grid")
    w = 1.0 / trace.sigma if trace.sigma is not None else np.ones_like(trace.p_e)
    init = dict(initial or {})
    if not any(k in init for k in ("n_bar", "alpha_sq")):
        init.update(_grid_start(trace, family, basis, w))
    init.setdefault("flux_offset", 0.0)
    fixed = {k: init.get(k, 0.0) for k in ("n_bar", "alpha_sq", "flux_offset")}
    scale = np.array([TWO_PI * 1e6 if n == "flux_offset" else 1.0 for n in names])
    x0 = np.array([fixed[n] for n in names]) / scale
    lower = np.array([-np.inf if n == "flux_offset" else 0.0 for n in names])

    def values(u):
        v = dict(fixed)
        v.update(zip(names, u * scale))
        return v

    def residuals(u):
        v = values(u)
        try:
            p = materialize_pn(_make_dist(family, v), n_max, tail_tol=1e-3)
        except TailBoundError:
            # outside the truncation: make the optimizer reject this trial point
            return np.full(trace.p_e.shape, 1e3) * w
        return (basis.predict(p, v["flux_offset"]) - trace.p_e) * w

    res = levenberg_marquardt(residuals, x0, lower=lower, max_iter=max_iter,
                              scale_covariance=trace.sigma is None)
    if not res.converged and raise_on_failure:
        raise FitError(f"distribution fit did not converge after {res.n_iter} iterations", res)
    est = {n: float(v) for n, v in values(res.x).items() if n in names or n in _FAMILY_PARAMS[family]}
    cov = res.cov * np.outer(scale, scale)
    out = InferenceResult(family, est, names, cov, res.residual_norm, float(res.residual @ res.residual),
                          n_max, res.converged)
    total = out.total_occupancy
    if family in ("thermal", "coherent") and total < DISTINGUISHABILITY_FLOOR:
        out.flat_likelihood = True
        out.notes.append("thermal and coherent shapes indistinguishable; report total occupancy only")
        warnings.warn(f"<a^dag a> = {total:.3g} < {DISTINGUISHABILITY_FLOOR}: thermal and coherent "
                      "families are indistinguishable, only the total occupancy is meaningful",
                      FlatLikelihoodWarning, stacklevel=2)
    if total > MAX_SUPPORTED_OCCUPANCY:
        out.notes.append("occupancy beyond the two-level model range")
        warnings.warn(f"<a^dag a> = {total:.3g} exceeds {MAX_SUPPORTED_OCCUPANCY:g}",
                      OccupancyWarning, stacklevel=2)
    return out


def _grid_start(trace: RabiTrace, family: str, basis: BasisTraces, w) -> dict:
    best, best_cost = None, np.inf
    for total in np.concatenate([[0.0], np.geomspace(1e-3, basis.n_max / 3, 30)]):
        if family == "displaced_thermal":
            cands = [{"n_bar": f * total, "alpha_sq": (1 - f) * total} for f in (0.1, 0.5, 0.9)]
        else:
            cands = [{_FAMILY_PARAMS[family][0]: total}]
        for c in cands:
            try:
                p = materialize_pn(_make_dist(family, c), basis.n_max, tail_tol=1e-3)
            except ValueError:
                continue
            r = (basis.predict(p) - trace.p_e) * w
            cost = float(r @ r)
            if cost < best_cost:
                best, best_cost = c, cost
    return best or {}


@dataclass
class FamilyComparison:
    """Thermal vs coherent fits of the same trace."""

    thermal: InferenceResult
    coherent: InferenceResult
    delta_chi2: float
    distinguishable: bool
    preferred: str | None
    reason: str


def compare_families(trace: RabiTrace, params: DeviceParams, basis: BasisTraces | None = None,
                     threshold: float = 9.0, **kwargs) -> FamilyComparison:
    """Fit both families and decide whether the data tell them apart.

    Discrimination is declared impossible below a total occupancy of 0.1,
    whatever the fit statistics say. Above it, the family with the smaller
    chi^2 wins when the difference exceeds ``threshold``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLikelihoodWarning)
        th = infer_distribution(trace, "thermal", params, basis=basis, **kwargs)
        co = infer_distribution(trace, "coherent", params, basis=basis, **kwargs)
    d = co.chi2 - th.chi2
    total = 0.5 * (th.total_occupancy + co.total_occupancy)
    if total < DISTINGUISHABILITY_FLOOR:
        return FamilyComparison(th, co, d, False, None,
                                f"total occupancy {total:.3g} below {DISTINGUISHABILITY_FLOOR}")
    if abs(d) < threshold:
        return FamilyComparison(th, co, d, False, None, f"|delta chi2| = {abs(d):.3g} < {threshold}")
    return FamilyComparison(th, co, d, True, "thermal" if d > 0 else "coherent", "chi2 difference")
