"""Source conditions, the null space property, and how they relate to the ERC.

For small instances the chain

    ERC and K P_I injective  =>  uniform strict source condition  =>  NSP

is checked exactly: the source condition by constructing the minimum-norm
witness for every sign pattern on ``I``, the NSP by linear programming over
the kernel of ``K``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from .certify import _jsonable, erc_value
from .operators import DenseOperator, FBIError, SupportSet, restrict, smallest_restricted_singular_value

__all__ = [
    "SourceWitness",
    "NSPResult",
    "ChainViolation",
    "CapExceeded",
    "construct_source_witness",
    "theta_of",
    "sc_l1_error_bound",
    "nsp_check",
    "uniform_strict_sc",
    "implication_suite",
    "random_kernel_ratio",
    "RELATIONS_SCHEMA",
]

RELATIONS_SCHEMA = "relations.v1"
# strict inequalities below are decided with this much slack: FP cannot
# separate a ratio of exactly 1 from 1 - ulp
STRICT_TOL = 1e-9
THETA_CUTOFF = 1e-12
MAX_SUPPORT = 8
MAX_KERNEL_DIM = 12


class ChainViolation(AssertionError):
    """ERC => uniform strict SC => NSP failed on an instance (a bug, not maths)."""


class CapExceeded(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SourceWitness:
    w: np.ndarray
    xi: np.ndarray
    theta: float
    w_norm: float
    strict_margin: float


@dataclass(frozen=True, eq=False)
class NSPResult:
    holds: bool
    worst_ratio: float
    witness: np.ndarray | None
    kernel_dim: int


def _support(I) -> SupportSet:
    return I if isinstance(I, SupportSet) else SupportSet.of(I)


def theta_of(xi) -> float:
    """Largest ``|xi_k|`` strictly below one (0 if there is none)."""
    a = np.abs(np.asarray(xi, dtype=float))
    below = a[a < 1.0 - THETA_CUTOFF]
    return float(below.max(initial=0.0))


def construct_source_witness(K: DenseOperator, I, sign_pattern) -> SourceWitness:
    """Minimum-norm ``w`` with ``P_I K* w = sign_pattern``.

    ``strict_margin = 1 - ||P_{I^c} K* w||_inf``; positive means the strict
    source condition holds for this sign pattern.
    """
    I = _support(I)
    s = np.asarray(sign_pattern, dtype=float)
    if s.shape != (len(I),):
        raise ValueError(f"sign pattern must have length {len(I)}")
    K_I = restrict(K, I).entries
    Q, R = linalg.qr(K_I, mode="economic")
    sv = linalg.svdvals(K_I)
    if K_I.shape[1] > K_I.shape[0] or sv[-1] < 1e-10 * sv[0]:
        raise FBIError(0.0 if K_I.shape[1] > K_I.shape[0] else sv[-1], sv[0])
    # K_I^T w = s with w in range(K_I): w = Q R^{-T} s
    w = Q @ linalg.solve_triangular(R, s, trans="T")
    xi = K.rmatvec(w)
    Ic = I.complement(K.cols).array()
    off = float(np.max(np.abs(xi[Ic]), initial=0.0))
    return SourceWitness(w=w, xi=xi, theta=theta_of(xi), w_norm=float(np.linalg.norm(w)),
                         strict_margin=1.0 - off)


def sc_l1_error_bound(K_norm: float, theta: float, c: float, w_norm: float, alpha: float, epsilon: float) -> float:
    """l1 error bound under a source condition with constants ``theta``, ``c``, ``||w||``."""
    if not theta < 1:
        raise ValueError("theta must be < 1")
    if c <= 0:
        raise ValueError("c must be positive")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lead = (K_norm + 1.0) / (1.0 - theta)
    return lead * epsilon**2 / alpha + (1.0 / c + w_norm * lead) * (alpha + epsilon)


def _sign_patterns(n: int):
    # s and -s give the same witness margins up to sign, but patterns are cheap
    return itertools.product((1.0, -1.0), repeat=n)


def uniform_strict_sc(K: DenseOperator, I) -> tuple[bool, float, np.ndarray]:
    """Sweep all ``2^|I|`` sign patterns; return (holds, min margin, worst pattern)."""
    I = _support(I)
    if len(I) > MAX_SUPPORT:
        raise CapExceeded(f"|I| = {len(I)} exceeds the sign-pattern cap {MAX_SUPPORT}")
    worst, worst_s = np.inf, None
    for s in _sign_patterns(len(I)):
        m = construct_source_witness(K, I, s).strict_margin
        if m < worst:
            worst, worst_s = m, np.array(s)
    return bool(worst > STRICT_TOL), float(worst), worst_s


def _ratio(u, I_idx, Ic_idx) -> float:
    num = np.sum(np.abs(u[I_idx]))
    den = np.sum(np.abs(u[Ic_idx]))
    if den == 0:
        return np.inf if num > 0 else 0.0
    return float(num / den)


def nsp_check(K: DenseOperator, I, max_kernel_dim: int = MAX_KERNEL_DIM) -> NSPResult:
    """Decide ``||P_I u||_1 < ||P_{I^c} u||_1`` for every non-zero ``u`` in ker K.

    With an orthonormal kernel basis ``Z`` the worst ratio is
    ``max ||P_I Z y||_1`` subject to ``||P_{I^c} Z y||_1 <= 1``. For a fixed
    sign pattern ``s`` on ``I`` the objective ``s^T P_I Z y`` is linear and
    the constraint becomes linear after splitting ``P_{I^c} Z y = p - q``
    with ``p, q >= 0``; the maximum over patterns is the exact worst ratio.
    Each LP optimum is re-evaluated on its kernel vector so the reported
    ratio is attained.
    """
    I = _support(I).validate(K.cols)
    if len(I) > MAX_SUPPORT:
        raise CapExceeded(f"|I| = {len(I)} exceeds the sign-pattern cap {MAX_SUPPORT}")
    Z = linalg.null_space(K.entries)
    d = Z.shape[1]
    if d > max_kernel_dim:
        raise CapExceeded(f"kernel dimension {d} exceeds the cap {max_kernel_dim}")
    if d == 0 or len(I) == 0:
        return NSPResult(True, 0.0, None, d)
    I_idx = I.array()
    Ic_idx = I.complement(K.cols).array()
    ZI, ZIc = Z[I_idx], Z[Ic_idx]

    # a kernel vector vanishing off I makes the ratio infinite
    inner = linalg.null_space(ZIc) if len(Ic_idx) else np.eye(d)
    if inner.shape[1] > 0:
        u = Z @ inner[:, 0]
        return NSPResult(False, np.inf, u / np.max(np.abs(u)), d)

    m = len(Ic_idx)
    A_eq = np.hstack([ZIc, -np.eye(m), np.eye(m)])
    b_eq = np.zeros(m)
    A_ub = np.concatenate([np.zeros(d), np.ones(2 * m)])[None, :]
    b_ub = np.ones(1)
    bounds = [(None, None)] * d + [(0, None)] * (2 * m)
    best, best_u = -np.inf, None
    # patterns s and -s give the same optimum (y -> -y); fix the first sign
    for tail in itertools.product((1.0, -1.0), repeat=len(I_idx) - 1):
        s = np.array((1.0,) + tail)
        c = np.concatenate([-(s @ ZI), np.zeros(2 * m)])
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"NSP linear program failed: {res.message}")
        u = Z @ res.x[:d]
        ratio = max(_ratio(u, I_idx, Ic_idx), -res.fun)
        if ratio > best:
            best, best_u = ratio, u
    holds = best < 1.0 - STRICT_TOL
    return NSPResult(bool(holds), float(best), None if holds else best_u, d)


def random_kernel_ratio(K: DenseOperator, I, samples: int, rng) -> float:
    """Largest ratio over random kernel directions (refutation-only oracle)."""
    I = _support(I)
    Z = linalg.null_space(K.entries)
    if Z.shape[1] == 0:
        return 0.0
    Y = rng.standard_normal((Z.shape[1], samples))
    U = Z @ Y
    num = np.abs(U[I.array()]).sum(axis=0)
    den = np.abs(U[I.complement(K.cols).array()]).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    return float(r.max())


def implication_suite(K: DenseOperator, I, max_kernel_dim: int = MAX_KERNEL_DIM) -> dict:
    """Evaluate ERC, uniform strict SC and NSP on one instance.

    Raises :class:`ChainViolation` if an implication of the chain fails.
    """
    I = _support(I).validate(K.cols)
    sigma = smallest_restricted_singular_value(K, I)
    try:
        erc = erc_value(K, I)
        injective = True
    except FBIError:
        erc, injective = np.inf, False
    erc_holds = bool(erc < 1.0 - STRICT_TOL)

    if injective:
        us_holds, us_margin, us_pattern = uniform_strict_sc(K, I)
    else:
        us_holds, us_margin, us_pattern = False, -np.inf, None
    nsp = nsp_check(K, I, max_kernel_dim=max_kernel_dim)

    violations = []
    if erc_holds and injective and not us_holds:
        violations.append("ERC and injective but uniform strict SC fails")
    if us_holds and not nsp.holds:
        violations.append("uniform strict SC holds but NSP fails")
    report = {
        "schema": RELATIONS_SCHEMA,
        "support": list(I.indices),
        "shape": list(K.shape),
        "sigma_min_restricted": sigma,
        "injective": injective,
        "erc": {"value": erc, "holds": erc_holds},
        "uniform_strict_sc": {
            "holds": us_holds,
            "min_margin": us_margin,
            "worst_pattern": None if us_pattern is None else us_pattern.tolist(),
        },
        "nsp": {
            "holds": nsp.holds,
            "worst_ratio": nsp.worst_ratio,
            "kernel_dim": nsp.kernel_dim,
            "witness": None if nsp.witness is None else nsp.witness.tolist(),
        },
        "chain_violations": violations,
    }
    if violations:
        raise ChainViolation("; ".join(violations))
    return _jsonable(report)
