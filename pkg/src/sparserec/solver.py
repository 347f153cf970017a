"""Iterated soft thresholding for the l1-penalized Tikhonov functional.

Minimizes ``T_alpha(u) = 1/2 ||K u - g||^2 + alpha ||u||_1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .operators import DenseOperator, SparseSignal, SupportSet, spectral_norm

__all__ = [
    "SolverOptions",
    "SolveResult",
    "soft_threshold",
    "objective",
    "optimality_residual",
    "ista_solve",
    "support_of",
    "power_iteration_norm",
]

log = logging.getLogger(__name__)

STALL_ITERS = 100


@dataclass(frozen=True)
class SolverOptions:
    """ISTA settings.

    ``step=None`` selects ``0.99 / sigma_max(K)^2`` with sigma_max estimated
    by power iteration.
    """

    max_iters: int = 200_000
    step: float | None = None
    fixed_point_tol: float = 1e-10
    objective_tol: float = 1e-300
    track_objective: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.fixed_point_tol <= 0 or self.objective_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


@dataclass(eq=False)
class SolveResult:
    minimizer: SparseSignal
    iterations: int
    objective: float
    optimality_residual: float
    converged: bool
    step: float
    objective_trace: list[float] = field(default_factory=list)

    def support(self) -> SupportSet:
        return self.minimizer.support()


def soft_threshold(v, t: float) -> np.ndarray:
    """Componentwise ``sign(v) * max(|v| - t, 0)``; exact zeros where ``|v| <= t``."""
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {t}")
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    # drop signed zeros so supports compare cleanly
    out[out == 0] = 0.0
    return out


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, SparseSignal) else np.asarray(u, dtype=float)


def _check_dims(K: DenseOperator, g, u=None):
    if np.shape(g) != (K.rows,):
        raise ValueError(f"data has shape {np.shape(g)}, expected ({K.rows},)")
    if u is not None and np.shape(u) != (K.cols,):
        raise ValueError(f"coefficients have shape {np.shape(u)}, expected ({K.cols},)")


def objective(K: DenseOperator, g_eps, alpha: float, u) -> float:
    u = _values(u)
    g_eps = np.asarray(g_eps, dtype=float)
    _check_dims(K, g_eps, u)
    r = K.matvec(u) - g_eps
    return float(0.5 * (r @ r) + alpha * np.sum(np.abs(u)))


def optimality_residual(K: DenseOperator, g_eps, alpha: float, u) -> float:
    """Distance of ``-K*(Ku - g)`` from ``alpha * Sign(u)`` in the sup norm.

    Zero exactly at minimizers of ``T_alpha``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = _values(u)
    g_eps = np.asarray(g_eps, dtype=float)
    _check_dims(K, g_eps, u)
    c = K.rmatvec(g_eps - K.matvec(u))
    return _sign_residual(c, u, alpha)


def _sign_residual(c: np.ndarray, u: np.ndarray, alpha: float) -> float:
    on = u != 0
    res_on = np.abs(c[on] - alpha * np.sign(u[on]))
    res_off = np.maximum(np.abs(c[~on]) - alpha, 0.0)
    return float(max(res_on.max(initial=0.0), res_off.max(initial=0.0)))


def power_iteration_norm(K: DenseOperator, iters: int = 30) -> float:
    """Estimate ``||K||_2`` with a fixed-seed power iteration on ``K^T K``."""
    x = np.random.default_rng(0).standard_normal(K.cols)
    x /= np.linalg.norm(x)
    A = K.entries
    if K.rows > K.cols:
        G = A.T @ A
        apply = G.__matmul__
    else:
        def apply(v):
            return A.T @ (A @ v)
    lam = 0.0
    for _ in range(iters):
        y = apply(x)
        lam = np.linalg.norm(y)
        if lam == 0:
            return 0.0
        x = y / lam
    return float(np.sqrt(lam))


def ista_solve(K: DenseOperator, g_eps, alpha: float, opts: SolverOptions | None = None) -> SolveResult:
    """Run ``u <- S_{tau alpha}(u + tau K*(g - K u))`` from ``u = 0``.

    Stops when ``||u_{k+1} - u_k||_inf <= min(1, tau) * tol`` and the
    set-valued sign residual of the iterate is at most ``tol``, or when the
    relative objective decrease stays below ``objective_tol`` for
    ``STALL_ITERS`` consecutive steps. Hitting ``max_iters``
    returns ``converged=False`` rather than raising.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    opts = opts or SolverOptions()
    g = np.asarray(g_eps, dtype=float)
    _check_dims(K, g)

    knorm = spectral_norm(K)
    if opts.step is None:
        est = power_iteration_norm(K)
        tau = 0.99 / est**2 if est > 0 else 1.0
    else:
        tau = opts.step
    if knorm > 0 and not tau < 2.0 / knorm**2:
        raise ValueError(f"step {tau:.4g} violates 0 < step < 2/||K||^2 = {2 / knorm**2:.4g}")

    # tall operators iterate on the Gram matrix; same iterates, cheaper steps
    A = K.entries
    use_gram = K.rows > K.cols
    if use_gram:
        G = A.T @ A
        b = A.T @ g
        # the constant 1/2 ||g||^2 is left out of the tracked fit so that
        # stagnation is judged without its cancellation error
        shift = 0.5 * float(g @ g)

        def grad_and_obj(u):
            Gu = G @ u
            return b - Gu, 0.5 * (u @ Gu) - b @ u
    else:
        shift = 0.0

        def grad_and_obj(u):
            r = g - A @ u
            return A.T @ r, 0.5 * (r @ r)

    u = np.zeros(K.cols)
    c, fit = grad_and_obj(u)
    T = fit
    trace = [T + shift] if opts.track_objective else []
    it = stalled = 0
    for it in range(1, opts.max_iters + 1):
        u_new = soft_threshold(u + tau * c, tau * alpha)
        dist = np.max(np.abs(u_new - u), initial=0.0)
        u = u_new
        c, fit = grad_and_obj(u)
        T_new = fit + alpha * np.sum(np.abs(u))
        if opts.track_objective:
            trace.append(T_new + shift)
        if dist <= min(1.0, tau) * opts.fixed_point_tol:
            if _sign_residual(c, u, alpha) <= opts.fixed_point_tol:
                break
        # objective stuck at rounding level for many consecutive steps
        stalled = stalled + 1 if T - T_new <= opts.objective_tol * max(1.0, abs(T)) else 0
        if stalled >= STALL_ITERS:
            log.debug("objective stagnated at iteration %d", it)
            break
        T = T_new

    res = optimality_residual(K, g, alpha, u)
    converged = res <= opts.fixed_point_tol
    if not converged:
        log.warning("ISTA stopped after %d iterations, residual %.3e", it, res)
    return SolveResult(
        minimizer=SparseSignal(u),
        iterations=it,
        objective=objective(K, g, alpha, u),
        optimality_residual=res,
        converged=converged,
        step=tau,
        objective_trace=trace,
    )


def support_of(u) -> SupportSet:
    """Indices of exactly non-zero entries."""
    return SupportSet(tuple(np.flatnonzero(_values(u) != 0).tolist()))
