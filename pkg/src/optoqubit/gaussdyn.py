"""Linearized cavity-mechanics dynamics for Gaussian states.

Both modes are described in the frame rotating at (omega_c, Omega_m), so
only the pump envelopes ``g_minus(t)`` (red sideband, beam splitter) and
``g_plus(t)`` (blue sideband, two-mode squeezer) appear. The operator
vector is ordered ``(a, b, a^dag, b^dag)``.

Three routes are provided and cross-checked by the tests:

* :func:`propagate_moments` integrates first moments and the
  symmetric-ordered covariance (deterministic; the main engine);
* :func:`monte_carlo_propagate` samples classical Wigner trajectories
  with half-quantum vacuum noise;
* :func:`analytic_lossless` evaluates the closed-form lossless solutions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import erf

from .params import BathSpec, DeviceParams

Interaction = Literal["beam_splitter", "squeezer"]
_HALF = 0.5


class InvariantBreach(RuntimeError):
    """A physicality invariant was violated (usually a too-coarse step)."""


class MonteCarloMismatch(RuntimeError):
    """Monte Carlo estimate disagrees with moment propagation."""


# -- state ------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianState:
    """Two-mode Gaussian state.

    ``mean`` holds ``(<a>, <b>)``. ``cov`` is the 4x4 symmetric-ordered
    covariance of the fluctuations, ``cov[i, j] = <{dv_i, dv_j^dag}>/2`` over
    ``v = (a, b, a^dag, b^dag)``; normally ordered moments are derived from it.
    """

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_thermal(cls, n_c: float = 0.0, n_m: float = 0.0,
                     alpha_c: complex = 0.0, alpha_m: complex = 0.0) -> "GaussianState":
        """Uncorrelated displaced thermal states of cavity and mechanics."""
        cov = np.diag([n_c + _HALF, n_m + _HALF, n_c + _HALF, n_m + _HALF]).astype(complex)
        return cls(np.array([alpha_c, alpha_m], dtype=complex), cov)

    @classmethod
    def vacuum(cls) -> "GaussianState":
        return cls.from_thermal()

    # normally ordered, centred moments
    @property
    def n_c(self) -> float:
        return float(self.cov[2, 2].real - _HALF)

    @property
    def n_m(self) -> float:
        return float(self.cov[3, 3].real - _HALF)

    @property
    def alpha_c(self) -> complex:
        return complex(self.mean[0])

    @property
    def alpha_m(self) -> complex:
        return complex(self.mean[1])

    @property
    def occupancy_c(self) -> float:
        """Total cavity occupancy ``<a^dag a> = n_c + |alpha_c|^2``."""
        return self.n_c + abs(self.alpha_c) ** 2

    @property
    def occupancy_m(self) -> float:
        return self.n_m + abs(self.alpha_m) ** 2

    @property
    def ab(self) -> complex:
        """Full moment ``<a b>``."""
        return complex(self.cov[0, 3] + self.mean[0] * self.mean[1])

    @property
    def adag_b(self) -> complex:
        """Full moment ``<a^dag b>``."""
        return complex(self.cov[1, 0] + np.conj(self.mean[0]) * self.mean[1])

    @property
    def nmoments(self) -> dict:
        """Normally ordered second moments (full, not centred)."""
        return {
            "adag_a": self.occupancy_c,
            "bdag_b": self.occupancy_m,
            "ab": self.ab,
            "adag_b": self.adag_b,
        }

    def summary(self) -> dict:
        """The reported quantities: thermal parts, displacements, correlation."""
        return {
            "n_c": self.n_c,
            "n_m": self.n_m,
            "alpha_c_sq": abs(self.alpha_c) ** 2,
            "alpha_m_sq": abs(self.alpha_m) ** 2,
            "re_ab": self.ab.real,
            "im_ab": self.ab.imag,
        }

    def physicality_violation(self) -> float:
        """Largest violation of the Gaussian physicality bounds (<= 0 if fine)."""
        n_c, n_m = self.n_c, self.n_m
        c_ab = abs(self.cov[0, 3]) ** 2
        return max(-n_c, -n_m, c_ab - (n_c + 1.0) * (n_m + 1.0))

    def check(self, tol: float = 1e-9):
        v = self.physicality_violation()
        if v > tol:
            raise InvariantBreach(f"Gaussian state unphysical (violation {v:.3g})")


# -- pump schedule --------------------------------------------------------


@dataclass(frozen=True)
class PumpPulse:
    """Flat-top pump envelope with truncated Gaussian rise and fall.

    The envelope rises over ``cutoff * sigma``, stays at ``g_peak`` for
    ``flat`` seconds and falls symmetrically. ``n_p_peak`` is the intra-cavity
    pump photon number at the peak; it scales as the square of the envelope.
    """

    kind: Interaction
    g_peak: float
    flat: float
    sigma: float = 0.0
    start: float = 0.0
    n_p_peak: float = 0.0
    cutoff: float = 3.0

    def __post_init__(self):
        if self.kind not in ("beam_splitter", "squeezer"):
            raise ValueError(f"unknown interaction {self.kind!r}")
        if self.g_peak < 0 or self.flat < 0 or self.sigma < 0 or self.n_p_peak < 0:
            raise ValueError("pulse parameters must be non-negative")

    @property
    def edge(self) -> float:
        return self.cutoff * self.sigma

    @property
    def end(self) -> float:
        return self.start + 2 * self.edge + self.flat

    @property
    def breakpoints(self) -> tuple:
        s = self.start
        return (s, s + self.edge, s + self.edge + self.flat, self.end)

    def envelope(self, t):
        """Unit-peak envelope shape at times ``t``."""
        t = np.asarray(t, dtype=float)
        t_on = self.start + self.edge
        t_off = t_on + self.flat
        out = np.where((t >= t_on) & (t <= t_off), 1.0, 0.0)
        if self.sigma > 0:
            rise = (t >= self.start) & (t < t_on)
            fall = (t > t_off) & (t <= self.end)
            out = np.where(rise, np.exp(-0.5 * ((t - t_on) / self.sigma) ** 2), out)
            out = np.where(fall, np.exp(-0.5 * ((t - t_off) / self.sigma) ** 2), out)
        return out

    def g(self, t):
        return self.g_peak * self.envelope(t)

    def n_p(self, t):
        return self.n_p_peak * self.envelope(t) ** 2

    @property
    def area(self) -> float:
        """Closed-form integral of the unit envelope (seconds)."""
        edges = self.sigma * math.sqrt(2 * math.pi) * erf(self.cutoff / math.sqrt(2))
        return self.flat + edges

    @property
    def theta(self) -> float:
        return 2.0 * self.g_peak * self.area

    def theta_until(self, t):
        """Accumulated interaction phase up to time ``t`` (closed form)."""
        t = np.asarray(t, dtype=float)
        s = self.sigma
        t_on = self.start + self.edge
        t_off = t_on + self.flat
        if s > 0:
            c = s * math.sqrt(math.pi / 2)
            e_c = erf(self.cutoff / math.sqrt(2))
            rise = c * (e_c - erf((t_on - np.clip(t, self.start, t_on)) / (s * math.sqrt(2))))
            fall = c * erf((np.clip(t, t_off, self.end) - t_off) / (s * math.sqrt(2)))
        else:
            rise = fall = 0.0
        flat = np.clip(t, t_on, t_off) - t_on
        return 2.0 * self.g_peak * (rise + flat + fall)


def pulse_for_theta(theta: float, g: float, kind: Interaction, sigma: float = 200e-9,
                    n_p: float = 0.0, start: float = 0.0, cutoff: float = 3.0) -> PumpPulse:
    """Pulse reaching interaction phase ``theta`` at peak coupling ``g``.

    The flat part is shortened to account for the Gaussian edges. When even a
    zero-length flat top overshoots ``theta``, the edge-only pulse is kept and
    its amplitude lowered (``n_p`` is scaled accordingly).
    """
    if theta < 0:
        raise ValueError("theta must be non-negative")
    if g <= 0:
        raise ValueError("coupling must be positive")
    edge_area = sigma * math.sqrt(2 * math.pi) * erf(cutoff / math.sqrt(2)) if sigma > 0 else 0.0
    flat = theta / (2 * g) - edge_area
    if flat >= 0:
        return PumpPulse(kind, g, flat, sigma, start, n_p, cutoff)
    scale = theta / (2 * g * edge_area)
    return PumpPulse(kind, g * scale, 0.0, sigma, start, n_p * scale**2, cutoff)


@dataclass(frozen=True)
class PumpSchedule:
    """A set of pump pulses followed by a hand-over delay before readout."""

    pulses: tuple = ()
    delay: float = 0.0
    t_start: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if self.delay < 0:
            raise ValueError("delay must be non-negative")

    @classmethod
    def single(cls, theta: float, g: float, kind: Interaction, sigma: float = 200e-9,
               n_p: float = 0.0, delay: float = 100e-9, cutoff: float = 3.0) -> "PumpSchedule":
        return cls((pulse_for_theta(theta, g, kind, sigma, n_p, 0.0, cutoff),), delay)

    @classmethod
    def idle(cls, duration: float) -> "PumpSchedule":
        return cls((), duration)

    @property
    def t_end(self) -> float:
        last = max((p.end for p in self.pulses), default=self.t_start)
        return last + self.delay

    @property
    def breakpoints(self) -> list:
        pts = {self.t_start, self.t_end}
        for p in self.pulses:
            pts.update(b for b in p.breakpoints if self.t_start <= b <= self.t_end)
        return sorted(pts)

    def g_minus(self, t):
        return sum((p.g(t) for p in self.pulses if p.kind == "beam_splitter"),
                   np.zeros_like(np.asarray(t, dtype=float)))

    def g_plus(self, t):
        return sum((p.g(t) for p in self.pulses if p.kind == "squeezer"),
                   np.zeros_like(np.asarray(t, dtype=float)))

    def n_p(self, t):
        """Total intra-cavity pump photon number."""
        return sum((p.n_p(t) for p in self.pulses), np.zeros_like(np.asarray(t, dtype=float)))

    @property
    def g_max(self) -> float:
        return max((p.g_peak for p in self.pulses), default=0.0)

    def theta_until(self, t):
        return sum((p.theta_until(t) for p in self.pulses),
                   np.zeros_like(np.asarray(t, dtype=float)))


def interaction_phase(schedule: PumpSchedule) -> float:
    """Accumulated phase ``theta = integral of 2 g(t) dt`` of a single-pump schedule."""
    kinds = {p.kind for p in schedule.pulses if p.g_peak > 0 and p.area > 0}
    if len(kinds) > 1:
        raise ValueError("scalar theta is undefined with both pumps active")
    return float(sum(p.theta for p in schedule.pulses))


# -- dynamics ---------------------------------------------------------------


def drift_matrix(g_minus: float, g_plus: float, kappa: float, Gamma_m: float) -> np.ndarray:
    """Drift matrix of the linearized equations over ``(a, b, a^dag, b^dag)``."""
    if min(g_minus, g_plus, kappa, Gamma_m) < 0:
        raise ValueError("rates must be non-negative")
    gm, gp = 1j * g_minus, 1j * g_plus
    k, G = -kappa / 2, -Gamma_m / 2
    return np.array([
        [k, gm, 0, gp],
        [gm, G, gp, 0],
        [0, -gp, k, -gm],
        [-gp, 0, -gm, G],
    ], dtype=complex)


def diffusion_matrix(params: DeviceParams, baths: BathSpec, n_p: float = 0.0) -> np.ndarray:
    """Symmetric-ordered noise input ``D`` with ``dC/dt = M C + C M^dag + D``."""
    k_int = float(params.kappa_int_at(n_p))
    n_int = float(baths.n_int_at(n_p))
    d_a = params.kappa_ext * (baths.n_ext_eq + _HALF) + k_int * (n_int + _HALF)
    d_b = params.Gamma_m * (baths.n_mech_eq + _HALF)
    return np.diag([d_a, d_b, d_a, d_b]).astype(complex)


@dataclass
class Trajectory:
    """Time series produced by :func:`propagate_moments`."""

    t: np.ndarray
    theta: np.ndarray
    mean: np.ndarray  # (T, 2)
    cov: np.ndarray  # (T, 4, 4)

    def state(self, i: int = -1) -> GaussianState:
        return GaussianState(self.mean[i].copy(), self.cov[i].copy())

    @property
    def final(self) -> GaussianState:
        return self.state(-1)

    @property
    def n_c(self):
        return self.cov[:, 2, 2].real - _HALF

    @property
    def n_m(self):
        return self.cov[:, 3, 3].real - _HALF

    @property
    def alpha_c_sq(self):
        return np.abs(self.mean[:, 0]) ** 2

    @property
    def alpha_m_sq(self):
        return np.abs(self.mean[:, 1]) ** 2

    @property
    def ab(self):
        return self.cov[:, 0, 3] + self.mean[:, 0] * self.mean[:, 1]

    def columns(self) -> dict:
        """Columnar export: t, theta, n_c, n_m, |alpha_c|^2, |alpha_m|^2, Re/Im <ab>."""
        ab = self.ab
        return {
            "t_s": self.t,
            "theta": self.theta,
            "n_c": self.n_c,
            "n_m": self.n_m,
            "alpha_c_sq": self.alpha_c_sq,
            "alpha_m_sq": self.alpha_m_sq,
            "re_ab": ab.real,
            "im_ab": ab.imag,
        }


class _Generator:
    """Time-dependent drift, diffusion and drive of a schedule."""

    def __init__(self, schedule: PumpSchedule, baths: BathSpec, params: DeviceParams,
                 drive: complex = 0.0):
        self.schedule, self.baths, self.params = schedule, baths, params
        self.drive = np.array([0.0, drive, 0.0, np.conj(drive)], dtype=complex)

    def __call__(self, t: float):
        s = self.schedule
        n_p = float(s.n_p(t))
        kappa = float(self.params.kappa_at(n_p))
        M = drift_matrix(float(s.g_minus(t)), float(s.g_plus(t)), kappa, self.params.Gamma_m)
        return M, diffusion_matrix(self.params, self.baths, n_p)

    def max_rate(self) -> float:
        s = self.schedule
        ts = np.linspace(s.t_start, s.t_end, 257)
        kappa = float(np.max(self.params.kappa_at(s.n_p(ts))))
        return max(s.g_max, kappa, self.params.Gamma_m)


def _time_grid(schedule: PumpSchedule, dt: float) -> np.ndarray:
    pts = schedule.breakpoints
    grid = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        grid.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(grid)


def default_step(schedule: PumpSchedule, params: DeviceParams) -> float:
    """Step size resolving the fastest rate of the schedule two hundredfold."""
    rate = _Generator(schedule, BathSpec(0.0), params).max_rate()
    return 1.0 / (200.0 * rate)


def propagate_moments(state: GaussianState, schedule: PumpSchedule, baths: BathSpec,
                      params: DeviceParams, dt: float | None = None, drive: complex = 0.0,
                      check: bool = True) -> Trajectory:
    """Integrate first moments and covariance through ``schedule`` (RK4).

    ``drive`` is a constant classical force on the mechanical amplitude
    (``d<b>/dt += drive``). The step must satisfy
    ``dt <= 1 / (20 max(g_peak, kappa))``; the grid is aligned with every
    pulse breakpoint.
    """
    gen = _Generator(schedule, baths, params, drive)
    rate = gen.max_rate()
    if dt is None:
        dt = 1.0 / (200.0 * rate)
    elif dt > 1.0 / (20.0 * rate):
        raise ValueError(f"dt={dt:.3g} s too coarse; need <= {1 / (20 * rate):.3g} s")
    ts = _time_grid(schedule, dt)
    m = np.concatenate([state.mean, np.conj(state.mean)])
    C = np.array(state.cov, dtype=complex)
    means = np.empty((len(ts), 2), dtype=complex)
    covs = np.empty((len(ts), 4, 4), dtype=complex)
    means[0], covs[0] = m[:2], C
    F = gen.drive

    def f(M, D, m, C):
        return M @ m + F, M @ C + C @ M.conj().T + D

    # envelopes jump at truncated pulse edges: sample one-sided limits there
    jumps = set(schedule.breakpoints)
    M1, D1 = None, None
    for i in range(1, len(ts)):
        t0, t1 = ts[i - 1], ts[i]
        h = t1 - t0
        M0, D0 = gen(np.nextafter(t0, t1)) if M1 is None or t0 in jumps else (M1, D1)
        Mm, Dm = gen(t0 + h / 2)
        M1, D1 = gen(np.nextafter(t1, t0))
        k1m, k1C = f(M0, D0, m, C)
        k2m, k2C = f(Mm, Dm, m + h / 2 * k1m, C + h / 2 * k1C)
        k3m, k3C = f(Mm, Dm, m + h / 2 * k2m, C + h / 2 * k2C)
        k4m, k4C = f(M1, D1, m + h * k3m, C + h * k3C)
        m = m + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        C = C + h / 6 * (k1C + 2 * k2C + 2 * k3C + k4C)
        C = 0.5 * (C + C.conj().T)
        means[i], covs[i] = m[:2], C
        if check:
            GaussianState(m[:2], C).check()
    theta = schedule.theta_until(ts)
    return Trajectory(ts, theta, means, covs)


def steady_state(g_minus: float, g_plus: float, baths: BathSpec, params: DeviceParams,
                 n_p: float = 0.0, drive: complex = 0.0) -> GaussianState:
    """Stationary state of the moment equations under constant pumps."""
    from scipy.linalg import solve_continuous_lyapunov

    M = drift_matrix(g_minus, g_plus, float(params.kappa_at(n_p)), params.Gamma_m)
    if np.max(np.linalg.eigvals(M).real) >= 0:
        raise InvariantBreach("no stationary state: dynamics are unstable")
    D = diffusion_matrix(params, baths, n_p)
    C = solve_continuous_lyapunov(M, -D)
    F = np.array([0.0, drive, 0.0, np.conj(drive)], dtype=complex)
    m = -np.linalg.solve(M, F)
    return GaussianState(m[:2], 0.5 * (C + C.conj().T))


# -- lossless closed form ---------------------------------------------------


@dataclass(frozen=True)
class LosslessResult:
    n_c: float
    n_m: float
    alpha_c: complex
    alpha_m: complex

    @property
    def occupancy_c(self) -> float:
        return self.n_c + abs(self.alpha_c) ** 2

    @property
    def occupancy_m(self) -> float:
        return self.n_m + abs(self.alpha_m) ** 2


def analytic_lossless(theta: float, interaction: Interaction, n_c: float = 0.0, n_m: float = 0.0,
                      alpha_c: complex = 0.0, alpha_m: complex = 0.0) -> LosslessResult:
    """Closed-form lossless evolution of uncorrelated displaced thermal inputs.

    Phases follow :func:`drift_matrix`: the beam splitter maps
    ``a -> a cos(theta/2) + i b sin(theta/2)`` and the squeezer
    ``a -> a cosh(theta/2) + i b^dag sinh(theta/2)``.
    """
    h = theta / 2
    if interaction == "beam_splitter":
        c, s = math.cos(h), math.sin(h)
        return LosslessResult(
            n_c=n_c * c**2 + n_m * s**2,
            n_m=n_m * c**2 + n_c * s**2,
            alpha_c=alpha_c * c + 1j * alpha_m * s,
            alpha_m=alpha_m * c + 1j * alpha_c * s,
        )
    if interaction == "squeezer":
        c, s = math.cosh(h), math.sinh(h)
        return LosslessResult(
            n_c=n_c * c**2 + (n_m + 1) * s**2,
            n_m=n_m * c**2 + (n_c + 1) * s**2,
            alpha_c=alpha_c * c + 1j * np.conj(alpha_m) * s,
            alpha_m=alpha_m * c + 1j * np.conj(alpha_c) * s,
        )
    raise ValueError(f"unknown interaction {interaction!r}")


# -- Monte Carlo -------------------------------------------------------------


_MC_KEYS = ("n_c", "n_m", "alpha_c_sq", "alpha_m_sq", "re_ab", "im_ab", "occupancy_c", "occupancy_m")


@dataclass
class MonteCarloEstimate:
    """Sample estimates of the reported moments with standard errors."""

    estimates: dict
    stderr: dict
    n_samples: int
    seed: int
    samples: np.ndarray = field(repr=False)  # final (N, 2) complex amplitudes

    def zscores(self, state: GaussianState) -> dict:
        ref = dict(state.summary(), occupancy_c=state.occupancy_c, occupancy_m=state.occupancy_m)
        out = {}
        for k in _MC_KEYS:
            err = self.stderr[k]
            diff = self.estimates[k] - ref[k]
            out[k] = 0.0 if err == 0 and abs(diff) < 1e-12 else diff / err if err > 0 else np.inf
        return out


def _real_sampling_matrix(cov: np.ndarray) -> np.ndarray:
    """Square root of the covariance of (Re a, Re b, Im a, Im b)."""
    P = cov[:2, :2]  # <dz_i dz_j^*>
    Q = cov[:2, 2:]  # <dz_i dz_j>
    xx = 0.5 * (P + Q).real
    yy = 0.5 * (P - Q).real
    xy = 0.5 * (Q.imag - P.imag)
    R = np.block([[xx, xy], [xy.T, yy]])
    w, V = np.linalg.eigh(0.5 * (R + R.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _mc_tables(gen: _Generator, ts: np.ndarray, offset: float):
    """Drift at both ends of every step and noise variances at midpoints.

    Drift is sampled just inside each step so that jumps at pulse
    breakpoints are attributed to the correct side.
    """
    jumps = set(gen.schedule.breakpoints)
    M_end = np.array([gen(np.nextafter(b, a))[0] for a, b in zip(ts[:-1], ts[1:])])
    M_start = np.array([gen(np.nextafter(a, b))[0] if i == 0 or a in jumps else M_end[i - 1]
                        for i, (a, b) in enumerate(zip(ts[:-1], ts[1:]))])
    mids = 0.5 * (ts[:-1] + ts[1:])
    var = []
    for t in mids:
        _, D = gen(t)
        v = np.array([D[0, 0].real, D[1, 1].real])
        if offset == 0.0:
            v = v - _HALF * np.array([float(gen.params.kappa_at(float(gen.schedule.n_p(t)))),
                                      gen.params.Gamma_m])
        var.append(np.clip(v, 0.0, None))
    return M_start, M_end, np.array(var)


def _mc_chunk(state: GaussianState, tables, ts: np.ndarray, n: int, F: np.ndarray,
              rng: np.random.Generator, offset: float) -> np.ndarray:
    cov = np.array(state.cov, dtype=complex)
    if offset == 0.0:
        cov = cov - _HALF * np.eye(4)
    S = _real_sampling_matrix(cov)
    x = rng.standard_normal((n, 4)) @ S.T
    z = state.mean[None, :] + x[:, :2] + 1j * x[:, 2:]
    F = F[:2]
    M_start, M_end, var = tables
    # (a, b) rows of M acting on (a, b) and on (a*, b*)
    A0, B0 = np.transpose(M_start[:, :2, :2], (0, 2, 1)), np.transpose(M_start[:, :2, 2:], (0, 2, 1))
    A1, B1 = np.transpose(M_end[:, :2, :2], (0, 2, 1)), np.transpose(M_end[:, :2, 2:], (0, 2, 1))
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        dW = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) * np.sqrt(var[i] * h / 2)
        f0 = z @ A0[i] + np.conj(z) @ B0[i] + F
        pred = z + h * f0 + dW
        f1 = pred @ A1[i] + np.conj(pred) @ B1[i] + F
        z = z + h / 2 * (f0 + f1) + dW
    return z


def monte_carlo_propagate(state: GaussianState, schedule: PumpSchedule, baths: BathSpec,
                          params: DeviceParams, n_samples: int = 10_000, seed: int | None = None,
                          dt: float | None = None, drive: complex = 0.0, n_chunks: int = 8,
                          vacuum_noise: bool = True, check: bool = False) -> MonteCarloEstimate:
    """Wigner-sampled trajectories through ``schedule``.

    Initial amplitudes are drawn from the symmetric-ordered Gaussian (vacuum
    contributes 1/2 per mode) and each step adds bath noise of variance
    ``(n_eq + 1/2) * rate * dt``. Normally ordered moments are recovered by
    subtracting 1/2. Samples are generated in ``n_chunks`` independent
    streams spawned from ``seed`` and concatenated in chunk order, so the
    result does not depend on how the chunks are scheduled.

    ``vacuum_noise=False`` drops all half-quantum terms (classical noise).
    With ``check=True`` the estimate is compared with
    :func:`propagate_moments` and :class:`MonteCarloMismatch` is raised on
    any deviation beyond five standard errors.
    """
    if seed is None:
        raise ValueError("a seed is required for reproducible Monte Carlo runs")
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    gen = _Generator(schedule, baths, params, drive)
    if dt is None:
        # Heun's weak error at this step is ~(dt * rate)^2, far below sampling error
        dt = 1.0 / (50.0 * gen.max_rate())
    ts = _time_grid(schedule, dt)
    offset = _HALF if vacuum_noise else 0.0
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [n_samples // n_chunks + (i < n_samples % n_chunks) for i in range(n_chunks)]
    tables = _mc_tables(gen, ts, offset)
    parts = [_mc_chunk(state, tables, ts, n, gen.drive, np.random.default_rng(child), offset)
             for child, n in zip(children, sizes) if n > 0]
    z = np.concatenate(parts)
    est, err = _mc_statistics(z, offset)
    result = MonteCarloEstimate(est, err, n_samples, seed, z)
    if check:
        ref = propagate_moments(state, schedule, baths, params, drive=drive).final
        zs = result.zscores(ref)
        bad = {k: v for k, v in zs.items() if abs(v) > 5}
        if bad:
            raise MonteCarloMismatch(f"moments beyond 5 standard errors: {bad}")
    return result


def _mc_statistics(z: np.ndarray, offset: float):
    N = len(z)
    a, b = z[:, 0], z[:, 1]
    est, err = {}, {}

    def put(key, value, influence):
        est[key] = float(value)
        err[key] = float(np.std(influence, ddof=1) / math.sqrt(N))

    for key, x in (("c", a), ("m", b)):
        mu = x.mean()
        sq = np.abs(x) ** 2
        put(f"occupancy_{key}", sq.mean() - offset, sq)
        put(f"alpha_{key}_sq", abs(mu) ** 2, 2 * (np.conj(mu) * x).real)
        put(f"n_{key}", sq.mean() - abs(mu) ** 2 - offset, sq - 2 * (np.conj(mu) * x).real)
    ab = a * b
    put("re_ab", ab.mean().real, ab.real)
    put("im_ab", ab.mean().imag, ab.imag)
    return est, err
