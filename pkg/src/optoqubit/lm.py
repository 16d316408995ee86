"""Damped least squares (Levenberg-Marquardt with Marquardt scaling).

Minimizes ``0.5 * ||r(x)||^2``. Every accepted step lowers the cost, and the
cost history of accepted iterates is returned so callers can check it.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class FitError(RuntimeError):
    """The optimizer did not converge; ``result`` holds the last iterate."""

    def __init__(self, message: str, result: "LMResult"):
        super().__init__(message)
        self.result = result


class RankDeficientWarning(UserWarning):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cov: np.ndarray
    residual: np.ndarray
    jac: np.ndarray
    converged: bool
    message: str
    n_iter: int
    n_fev: int
    history: list = field(default_factory=list)
    rank: int = 0
    degenerate: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        return 0.5 * float(self.residual @ self.residual)

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def finite_difference_jacobian(fun, x, r0=None, step=None):
    """Forward differences with relative steps."""
    x = np.asarray(x, dtype=float)
    r0 = fun(x) if r0 is None else r0
    h = step if step is not None else np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(x))
    h = np.broadcast_to(h, x.shape)
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xp[j] += h[j]
        J[:, j] = (fun(xp) - r0) / h[j]
    return J


def covariance_from_jacobian(J: np.ndarray, residual: np.ndarray, scale_by_residual: bool = True,
                             rcond: float = 1e-10):
    """Linearized covariance ``s^2 (J^T J)^+`` plus rank and null directions."""
    m, n = J.shape
    _, s, vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.full((n, n), np.inf), 0, [np.eye(n)[i] for i in range(n)]
    keep = s > rcond * s[0]
    rank = int(keep.sum())
    inv = (vt[keep].T / s[keep] ** 2) @ vt[keep]
    degenerate = [vt[i] for i in np.flatnonzero(~keep)]
    if scale_by_residual:
        dof = max(m - rank, 1)
        inv = inv * float(residual @ residual) / dof
    return inv, rank, degenerate


def levenberg_marquardt(fun: Callable, x0, jac: Callable | None = None, *,
                        lower=None, upper=None, max_iter: int = 200,
                        xtol: float = 1e-10, ftol: float = 1e-12, gtol: float = 0.0,
                        lam0: float = 1e-3, scale_covariance: bool = True) -> LMResult:
    """Minimize ``0.5 ||fun(x)||^2``.

    Parameters
    ----------
    fun : callable
        Residual vector ``r(x)``.
    jac : callable, optional
        Jacobian ``dr/dx``; forward differences when omitted.
    lower, upper : array_like, optional
        Box bounds; trial points are projected onto the box.
    xtol, ftol : float
        Stop when ``||dx|| <= xtol (||x|| + xtol)`` or when the relative cost
        decrease of an accepted step is at most ``ftol``.

    Returns
    -------
    LMResult
        ``converged`` is False when ``max_iter`` was exhausted.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lo, hi)
    n_fev = 0

    def res(z):
        nonlocal n_fev
        n_fev += 1
        return np.asarray(fun(z), dtype=float)

    def jacobian(z, r):
        nonlocal n_fev
        if jac is not None:
            return np.asarray(jac(z), dtype=float)
        n_fev += n
        return finite_difference_jacobian(fun, z, r)

    r = res(x)
    cost = 0.5 * float(r @ r)
    history = [cost]
    J = jacobian(x, r)
    dscale = np.maximum(np.linalg.norm(J, axis=0), 1e-300)
    lam = lam0
    converged, message = False, "maximum iterations reached"
    it = 0
    while it < max_iter:
        it += 1
        if cost == 0.0:
            converged, message = True, "zero residual"
            break
        g = J.T @ r
        if gtol > 0 and np.max(np.abs(g / dscale)) <= gtol * max(np.sqrt(2 * cost), 1e-300):
            converged, message = True, "gradient below tolerance"
            break
        dscale = np.maximum(dscale, np.linalg.norm(J, axis=0))
        # variables pinned at a bound with the gradient pushing outward stay fixed
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not free.any():
            converged, message = True, "all parameters at active bounds"
            break
        accepted = False
        while lam < 1e20:
            Jf = J[:, free]
            A = np.vstack([Jf, np.sqrt(lam) * np.diag(dscale[free])])
            b = np.concatenate([-r, np.zeros(Jf.shape[1])])
            dx = np.zeros(n)
            dx[free] = np.linalg.lstsq(A, b, rcond=None)[0]
            x_new = np.clip(x + dx, lo, hi)
            dx = x_new - x
            r_new = res(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            if np.linalg.norm(dx) <= xtol * (np.linalg.norm(x) + xtol):
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further decrease possible at working precision"
            break
        rel_drop = (cost - cost_new) / cost
        step = np.linalg.norm(dx)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        J = jacobian(x, r)
        if step <= xtol * (np.linalg.norm(x) + xtol):
            converged, message = True, "relative step below xtol"
            break
        if rel_drop <= ftol:
            converged, message = True, "relative cost change below ftol"
            break
    cov, rank, degenerate = covariance_from_jacobian(J, r, scale_covariance)
    result = LMResult(x, cov, r, J, converged, message, it, n_fev, history, rank, degenerate)
    if rank < n:
        warnings.warn(f"Jacobian rank {rank} < {n}; degenerate directions: "
                      + "; ".join(np.array2string(v, precision=3) for v in degenerate),
                      RankDeficientWarning, stacklevel=2)
    return result
