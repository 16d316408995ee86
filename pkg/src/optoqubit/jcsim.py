"""Qubit-cavity master-equation simulator in a truncated Fock space.

Frame: everything rotates at the cavity frequency, so the cavity energy term
drops out and the Hamiltonian (in units of hbar, rad/s) reads

    H(t) = Delta_qb(t)/2 sigma_z + J (a sigma_+ + a^dag sigma_-)

with collapse operators sqrt(1/T1) sigma_-, sqrt(1/T1_cav) a and
sqrt(2/Tphi) sigma_z, used exactly as written (the sigma_z form damps the
qubit coherence at 4/Tphi).

Basis ordering is qubit (g=0, e=1) outer, Fock inner: index = q*(n_max+1) + n.

Two integrators share the same fixed-step RK4 grid:

* the dense engine propagates arbitrary density matrices;
* the excitation-block engine handles number-diagonal initial states. The
  Hamiltonian and the three collapse operators keep such states block
  diagonal in the excitation number, so each block is a 2x2 matrix over
  {|g,N>, |e,N-1>}. This is what photon-number tomography needs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import DeviceParams


class TruncationWarning(UserWarning):
    """Population reached the top Fock level of the truncated space."""


class ConvergenceWarning(UserWarning):
    """Step-halving check disagreed beyond tolerance."""


class StepSizeError(ValueError):
    pass


# -- controls ---------------------------------------------------------------


@dataclass(frozen=True)
class QubitControl:
    """Piecewise-linear qubit-cavity detuning Delta_qb(t) in rad/s.

    ``knots`` are (time, detuning) pairs, interpolated linearly and held
    constant outside. ``drift_rate`` (rad/s per s) adds a linear drift after
    ``interaction_start``; ``offset`` shifts the detuning during the
    interaction (flux offset).
    """

    knots: tuple = ((0.0, 0.0),)
    interaction_start: float = 0.0
    drift_rate: float = 0.0
    offset: float = 0.0

    @classmethod
    def resonant(cls) -> "QubitControl":
        return cls()

    @classmethod
    def constant(cls, detuning: float) -> "QubitControl":
        return cls(((0.0, detuning),))

    @classmethod
    def tune_in(cls, off_detuning: float, ramp_time: float = 4e-9,
                drift_rate: float = 0.0) -> "QubitControl":
        """Start at ``off_detuning`` and ramp linearly into resonance."""
        if ramp_time <= 0:
            return cls(((0.0, 0.0),), 0.0, drift_rate)
        return cls(((0.0, off_detuning), (ramp_time, 0.0)), ramp_time, drift_rate)

    @property
    def ramp_time(self) -> float:
        return self.interaction_start

    def with_offset(self, offset: float) -> "QubitControl":
        return QubitControl(self.knots, self.interaction_start, self.drift_rate, offset)

    def detuning(self, t):
        t = np.asarray(t, dtype=float)
        kt = [k[0] for k in self.knots]
        kv = [k[1] for k in self.knots]
        d = np.interp(t, kt, kv)
        after = t >= self.interaction_start
        d = d + self.drift_rate * np.clip(t - self.interaction_start, 0.0, None)
        return d + np.where(after, self.offset, 0.0)

    def breakpoints(self) -> list:
        return sorted({k[0] for k in self.knots} | {self.interaction_start})

    def max_abs(self, t_final: float) -> float:
        ts = np.array(self.breakpoints() + [0.0, t_final])
        ts = ts[(ts >= 0) & (ts <= t_final)]
        return float(np.max(np.abs(self.detuning(ts))))


# -- generator ----------------------------------------------------------------


@dataclass(frozen=True)
class JCGenerator:
    """Hamiltonian pieces and collapse operators on the truncated space."""

    n_max: int
    H_coupling: np.ndarray
    sigma_z: np.ndarray
    collapse: tuple
    detuning: float = 0.0

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    def hamiltonian(self, detuning: float | None = None) -> np.ndarray:
        d = self.detuning if detuning is None else detuning
        return 0.5 * d * self.sigma_z + self.H_coupling


def operators(n_max: int):
    """(a, sigma_minus, sigma_z) on the qubit (x) cavity space."""
    nc = n_max + 1
    a_c = np.diag(np.sqrt(np.arange(1, nc)), 1)
    eye_q, eye_c = np.eye(2), np.eye(nc)
    sm_q = np.array([[0.0, 1.0], [0.0, 0.0]])  # |g><e|
    sz_q = np.diag([-1.0, 1.0])
    return np.kron(eye_q, a_c), np.kron(sm_q, eye_c), np.kron(sz_q, eye_c)


def build_jc_generator(params: DeviceParams, detuning: float = 0.0, n_max: int = 15) -> JCGenerator:
    """Hamiltonian (rad/s) and collapse operators for the qubit-cavity system."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    a, sm, sz = operators(n_max)
    sp = sm.T
    H_c = params.J * (a @ sp + a.T @ sm)
    collapse = (
        math.sqrt(1.0 / params.T1_qubit) * sm,
        math.sqrt(1.0 / params.T1_cavity) * a,
        math.sqrt(2.0 / params.Tphi_qubit) * sz,
    )
    return JCGenerator(n_max, H_c.astype(complex), sz.astype(complex),
                       tuple(c.astype(complex) for c in collapse), detuning)


# -- states -----------------------------------------------------------------


@dataclass
class QubitCavityState:
    """Density matrix over {g, e} (x) {0..n_max}."""

    rho: np.ndarray
    n_max: int

    @classmethod
    def product(cls, cavity, n_max: int, p_excited: float = 0.0) -> "QubitCavityState":
        """Qubit mixture ``p_e |e><e| + (1-p_e) |g><g|`` times a cavity state.

        ``cavity`` is a vector of populations or a cavity density matrix.
        """
        cav = np.asarray(cavity, dtype=complex)
        nc = n_max + 1
        if cav.ndim == 1:
            p = np.zeros(nc, dtype=complex)
            m = min(nc, len(cav))
            p[:m] = cav[:m]
            cav = np.diag(p)
        elif cav.shape != (nc, nc):
            raise ValueError("cavity density matrix has the wrong size")
        qubit = np.diag([1.0 - p_excited, p_excited])
        return cls(np.kron(qubit, cav), n_max)

    @classmethod
    def fock(cls, n: int, qubit: str = "g", n_max: int = 15) -> "QubitCavityState":
        p = np.zeros(n_max + 1)
        p[n] = 1.0
        return cls.product(p, n_max, 1.0 if qubit == "e" else 0.0)

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    def p_excited(self) -> float:
        nc = self.n_max + 1
        return float(np.trace(self.rho[nc:, nc:]).real)

    def cavity_populations(self) -> np.ndarray:
        nc = self.n_max + 1
        return (np.diag(self.rho[:nc, :nc]) + np.diag(self.rho[nc:, nc:])).real

    def top_population(self) -> float:
        return float(self.cavity_populations()[-1])

    def validate(self, trace_tol: float = 1e-9, herm_tol: float = 1e-12, pos_tol: float = 1e-9):
        r = self.rho
        if abs(np.trace(r).real - 1.0) > trace_tol:
            raise ValueError(f"trace {np.trace(r).real!r} != 1")
        if np.max(np.abs(r - r.conj().T)) > herm_tol:
            raise ValueError("density matrix not Hermitian")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.conj().T))) < -pos_tol:
            raise ValueError("density matrix not positive")


@dataclass(frozen=True)
class ReadoutModel:
    """Linear readout map ``reported = contrast * P_e + offset``.

    ``prep_efficiency`` is the probability that an intended |e> preparation
    succeeds; it acts on the initial state, never on the readout.
    ``contrast_slope`` rescales the contrast with a detuning offset
    (``contrast * (1 + slope * offset)``).
    """

    contrast: float = 1.0
    offset: float = 0.0
    prep_efficiency: float = 1.0
    contrast_slope: float = 0.0

    def apply(self, p_e, detuning_offset: float = 0.0):
        c = self.contrast * (1.0 + self.contrast_slope * detuning_offset)
        return c * np.asarray(p_e) + self.offset

    def prepared_excited(self, qubit: str) -> float:
        return self.prep_efficiency if qubit == "e" else 0.0


def measure_qubit_population(state: QubitCavityState, readout: ReadoutModel | None = None):
    """Ideal excited-state population and its reported value."""
    p = min(max(state.p_excited(), 0.0), 1.0)
    reported = float(readout.apply(p)) if readout is not None else p
    return p, reported


# -- integration -------------------------------------------------------------


def _grid(points, dt_of_interval) -> np.ndarray:
    pts = sorted(set(float(p) for p in points))
    grid = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / dt_of_interval(a, b) - 1e-9))
        grid.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(grid)


def default_step(params: DeviceParams, control: QubitControl, n_max: int, t_final: float) -> float:
    """Step resolving the fastest Rabi frequency of the truncation 20-fold.

    Large detunings (the parked qubit) are resolved by local refinement of
    the grid, so they do not shrink the step everywhere.
    """
    rate = max(params.J * math.sqrt(n_max + 1), 4.0 / params.Tphi_qubit)
    return 1.0 / (20.0 * rate)


def _integration_grid(control: QubitControl, params: DeviceParams, dt: float, t_eval) -> np.ndarray:
    t_eval = np.asarray(t_eval, dtype=float)
    t_final = float(t_eval[-1])
    points = [0.0, *t_eval, *[b for b in control.breakpoints() if 0 <= b <= t_final]]

    def local(a, b):
        d = float(np.max(np.abs(control.detuning(np.array([a, b])))))
        return min(dt, 1.0 / (20.0 * d)) if d > 0 else dt

    return _grid(points, local)


def _check_step(dt: float, params: DeviceParams, control: QubitControl, t_final: float):
    # detuning is handled by local refinement in _integration_grid
    limit = 1.0 / (20.0 * params.J)
    if dt > limit:
        raise StepSizeError(f"dt={dt:.3g} s too coarse; need <= {limit:.3g} s")


def _rk4(rhs, y, grid, control, out_times, record):
    """Generic fixed-step RK4 recording ``record(y)`` at ``out_times``."""
    out_idx = {float(t): i for i, t in enumerate(out_times)}
    results = [None] * len(out_times)
    t0 = grid[0]
    if t0 in out_idx:
        results[out_idx[t0]] = record(y)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        h = t1 - t0
        # the flux offset switches on at a breakpoint: take the left limit at t1
        d0, dm, d1 = control.detuning(np.array([t0, t0 + h / 2, np.nextafter(t1, t0)]))
        k1 = rhs(y, d0)
        k2 = rhs(y + h / 2 * k1, dm)
        k3 = rhs(y + h / 2 * k2, dm)
        k4 = rhs(y + h * k3, d1)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if float(t1) in out_idx:
            results[out_idx[float(t1)]] = record(y)
    return results


@dataclass
class LindbladResult:
    """Evolution output of :func:`evolve_lindblad`."""

    times: np.ndarray
    states: list
    leakage: float
    leakage_flag: bool
    convergence_error: float | None = None
    trace_drift: float = 0.0

    @property
    def p_excited(self) -> np.ndarray:
        return np.array([s.p_excited() for s in self.states])


def _dense_rhs(gen: JCGenerator):
    Hc, Sz = gen.H_coupling, gen.sigma_z
    damp = sum(c.conj().T @ c for c in gen.collapse)
    cs = gen.collapse

    def rhs(rho, detuning):
        Heff = Hc + (0.5 * detuning) * Sz - 0.5j * damp
        out = -1j * (Heff @ rho - rho @ Heff.conj().T)
        for c in cs:
            out = out + c @ rho @ c.conj().T
        return out

    return rhs


def evolve_lindblad(state: QubitCavityState, control: QubitControl, params: DeviceParams,
                    dt: float | None = None, t_final: float | None = None, t_eval=None,
                    leakage_threshold: float = 1e-6, check_convergence: bool = True,
                    convergence_tol: float = 1e-6) -> LindbladResult:
    """Integrate the master equation with fixed-step RK4.

    States are returned at ``t_eval`` (default: ``t_final`` only). With
    ``check_convergence`` the run is repeated at half the step and the
    largest deviation of the returned states is reported; above
    ``convergence_tol`` a :class:`ConvergenceWarning` is emitted.
    """
    if t_eval is None:
        if t_final is None:
            raise ValueError("give t_final or t_eval")
        t_eval = np.array([t_final])
    t_eval = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) <= 0) or t_eval[0] < 0:
        raise ValueError("t_eval must be non-negative and strictly increasing")
    t_final = float(t_eval[-1])
    if dt is None:
        dt = default_step(params, control, state.n_max, t_final)
    _check_step(dt, params, control, t_final)
    gen = build_jc_generator(params, 0.0, state.n_max)
    rhs = _dense_rhs(gen)
    rho0 = np.array(state.rho, dtype=complex)

    def run(step):
        grid = _integration_grid(control, params, step, t_eval)
        return _rk4(rhs, rho0, grid, control, t_eval, lambda r: 0.5 * (r + r.conj().T))

    rhos = run(dt)
    err = None
    if check_convergence:
        fine = run(dt / 2)
        err = max(float(np.max(np.abs(a - b))) for a, b in zip(rhos, fine))
        if err > convergence_tol:
            warnings.warn(f"step-halving deviation {err:.2e} exceeds {convergence_tol:.0e}",
                          ConvergenceWarning, stacklevel=2)
    states = [QubitCavityState(r, state.n_max) for r in rhos]
    drift = max(abs(np.trace(r).real - np.trace(rho0).real) for r in rhos)
    span = max(t_final, 1e-300)
    if drift > 1e-8 * max(1.0, span / 1e-6):
        raise StepSizeError(f"trace drift {drift:.2e}: step size too coarse")
    leakage = max(s.top_population() for s in states)
    flag = leakage > leakage_threshold
    if flag:
        warnings.warn(f"population {leakage:.2e} in |n_max={state.n_max}>; increase n_max",
                      TruncationWarning, stacklevel=2)
    return LindbladResult(t_eval, states, leakage, flag, err, drift)


# -- excitation-block engine -------------------------------------------------


class _BlockModel:
    """Number-diagonal dynamics: p_g[N], p_e[N], c[N] per excitation sector N."""

    def __init__(self, params: DeviceParams, n_max: int):
        S = n_max + 2
        N = np.arange(S, dtype=float)
        self.S, self.n_max = S, n_max
        valid = (N >= 1) & (N <= n_max)
        self.cpl = np.where(valid, params.J * np.sqrt(N), 0.0)
        gc, gq = 1.0 / params.T1_cavity, 1.0 / params.T1_qubit
        gphi = 2.0 / params.Tphi_qubit
        self.g_loss = gc * N
        self.e_loss = gc * np.clip(N - 1, 0, None) + gq
        self.c_loss = gc * np.clip(2 * N - 1, 0, None) / 2 + gq / 2 + 2 * gphi
        self.g_gain = gc * (N + 1)  # from pg[N+1]
        self.e_gain = gc * N  # from pe[N+1]
        self.c_gain = gc * np.sqrt(N * (N + 1))  # from c[N+1]
        self.q_gain = gq  # pe[N+1] -> pg[N]
        self.mask_g = (N <= n_max).astype(float)
        self.mask_e = (N >= 1).astype(float)
        self.mask_c = valid.astype(float)

    @staticmethod
    def _up(x):
        out = np.zeros_like(x)
        out[..., :-1] = x[..., 1:]
        return out

    def rhs(self, y, detuning):
        pg, pe, c = y[0], y[1], y[2]
        im_c = c.imag
        up_pe = self._up(pe)
        dpg = -2 * self.cpl * im_c - self.g_loss * pg + self.g_gain * self._up(pg) + self.q_gain * up_pe
        dpe = 2 * self.cpl * im_c - self.e_loss * pe + self.e_gain * up_pe
        dc = ((1j * detuning - self.c_loss) * c - 1j * self.cpl * (pe - pg)
              + self.c_gain * self._up(c))
        return np.stack([dpg * self.mask_g, dpe * self.mask_e, dc * self.mask_c])

    def initial(self, populations: np.ndarray, p_excited: float) -> np.ndarray:
        """Initial blocks for qubit mixture times number-diagonal cavity states.

        ``populations`` has shape (B, n_max+1); the result (3, B, S).
        """
        pops = np.atleast_2d(np.asarray(populations, dtype=float))
        B = pops.shape[0]
        y = np.zeros((3, B, self.S), dtype=complex)
        m = min(pops.shape[1], self.n_max + 1)
        y[0, :, :m] = (1.0 - p_excited) * pops[:, :m]
        y[1, :, 1:m + 1] = p_excited * pops[:, :m]
        return y


def block_evolve(populations, params: DeviceParams, control: QubitControl, t_eval,
                 n_max: int, p_excited: float = 0.0, dt: float | None = None):
    """Excited-state population traces for number-diagonal initial states.

    ``populations`` is (n_max+1,) or (B, n_max+1). Returns
    ``(p_e, top)`` with ``p_e`` of shape (B, len(t_eval)) and ``top`` the
    largest population seen in the highest Fock level.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if dt is None:
        dt = default_step(params, control, n_max, float(t_eval[-1]))
    _check_step(dt, params, control, float(t_eval[-1]))
    model = _BlockModel(params, n_max)
    y0 = model.initial(populations, p_excited)
    grid = _integration_grid(control, params, dt, t_eval)
    nm = n_max

    def record(y):
        return y[1].real.sum(axis=-1), y[0, :, nm].real + y[1, :, nm + 1].real

    rows = _rk4(model.rhs, y0, grid, control, t_eval, record)
    p_e = np.stack([r[0] for r in rows], axis=-1)
    top = float(max(np.max(r[1]) for r in rows))
    return p_e, top


@dataclass
class RabiTrace:
    """Qubit excited-state population versus interaction time.

    ``p_e`` holds reported (readout-transformed) values; ``p_e_ideal`` the
    underlying populations when known.
    """

    tau: np.ndarray
    p_e: np.ndarray
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    sigma: np.ndarray | None = None
    p_e_ideal: np.ndarray | None = None
    protocol: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.p_e = np.asarray(self.p_e, dtype=float)
        if self.tau.shape != self.p_e.shape:
            raise ValueError("tau and p_e lengths differ")
        if np.any(np.diff(self.tau) <= 0):
            raise ValueError("tau must be strictly increasing")
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.tau.shape).copy()

    def columns(self) -> dict:
        cols = {"tau_ns": self.tau * 1e9}
        if self.p_e_ideal is not None:
            cols["p_e_ideal"] = self.p_e_ideal
        cols["p_e_reported"] = self.p_e
        return cols


def _populations(distribution, n_max: int) -> np.ndarray:
    if hasattr(distribution, "populations"):
        return np.asarray(distribution.populations(n_max), dtype=float)
    p = np.zeros(n_max + 1)
    d = np.asarray(distribution, dtype=float)
    m = min(len(d), n_max + 1)
    p[:m] = d[:m]
    return p


def vacuum_rabi_trace(distribution, control: QubitControl, params: DeviceParams, tau_grid,
                      qubit: str = "e", readout: ReadoutModel | None = None, n_max: int = 15,
                      dt: float | None = None, leakage_threshold: float = 1e-6,
                      check_convergence: bool = True, convergence_tol: float = 1e-6) -> RabiTrace:
    """Qubit population after resonant interaction with a cavity state.

    ``distribution`` gives the cavity photon-number populations (an array
    or an object with ``populations(n_max)``); number coherences do not
    affect the trace. ``qubit`` is the intended preparation, ``'e'`` for the
    single-photon protocol and ``'g'`` for the detector protocol. The
    interaction time ``tau`` is counted from ``control.interaction_start``.
    """
    readout = readout or ReadoutModel()
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(tau < 0) or np.any(np.diff(tau) <= 0):
        raise ValueError("tau_grid must be non-negative and strictly increasing")
    p = _populations(distribution, n_max)
    p_exc = readout.prepared_excited(qubit)
    t_eval = tau + control.interaction_start
    p_e, top = block_evolve(p, params, control, t_eval, n_max, p_exc, dt)
    p_e = p_e[0]
    err = None
    if check_convergence:
        step = dt or default_step(params, control, n_max, float(t_eval[-1]))
        fine, _ = block_evolve(p, params, control, t_eval, n_max, p_exc, step / 2)
        err = float(np.max(np.abs(fine[0] - p_e)))
        if err > convergence_tol:
            warnings.warn(f"step-halving deviation {err:.2e} exceeds {convergence_tol:.0e}",
                          ConvergenceWarning, stacklevel=2)
    if top > leakage_threshold:
        warnings.warn(f"population {top:.2e} in |n_max={n_max}>; increase n_max",
                      TruncationWarning, stacklevel=2)
    p_e = np.clip(p_e, 0.0, 1.0)
    meta = {"n_max": n_max, "qubit": qubit, "leakage": top, "convergence_error": err}
    return RabiTrace(tau, readout.apply(p_e, control.offset), readout, None, p_e,
                     protocol="single_photon" if qubit == "e" else "detector", meta=meta)


def jc_block_frequencies(params: DeviceParams, n_max: int = 5, detuning: float = 0.0) -> np.ndarray:
    """Oscillation frequency (rad/s) of each block (|e,n>, |g,n+1>), n = 0..n_max.

    Obtained by diagonalizing the 2x2 Hamiltonian block of each excitation
    manifold of the full truncated Hamiltonian.
    """
    gen = build_jc_generator(params, detuning, n_max + 1)
    H = gen.hamiltonian().real
    nc = n_max + 2
    freqs = []
    for n in range(n_max + 1):
        idx = [nc + n, n + 1]  # |e,n>, |g,n+1>
        w = np.linalg.eigvalsh(H[np.ix_(idx, idx)])
        freqs.append(w[1] - w[0])
    return np.array(freqs)
