"""Exact recovery conditions and parameter-choice intervals.

Given an operator ``K``, a sparse ground truth ``u`` with support ``I`` and
information about the noise ``eta``, this module evaluates

* the ERC ``sup_{i not in I} ||(K P_I)^+ K e_i||_1 < 1`` and its noisy
  strengthening (eps-ERC) together with the admissible ``alpha`` interval,
* the correlation-based (Neumann) variant built from ``COR_I`` and
  ``COR_{I^c}``,
* the coherence-based condition ``(2N - 1) mu < 1 - 2 r``,
* the interval computed from the realized data projection, and
* the l-infinity error bound for minimizers inside the interval.

All strict inequalities are evaluated on doubles with zero slack; the
certificate stores the margins so boundary cases can be audited.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .operators import (
    DenseOperator,
    SparseSignal,
    SupportSet,
    l1l1_norm,
    pinv_apply,
    restrict,
    restricted_gram_inverse,
    spectral_norm,
)

__all__ = [
    "NoiseInfo",
    "Certificate",
    "AlphaPolicy",
    "erc_value",
    "alpha_lower_erc",
    "alpha_upper",
    "linf_error_bound",
    "l1_error_bound",
    "eps_erc_holds",
    "cor_sums",
    "neumann_eps_erc_holds",
    "neumann_alpha_interval",
    "coherence",
    "fuchs_holds",
    "tropp_bounds",
    "tropp_interval",
    "choose_alpha",
    "build_certificate",
    "CERTIFICATE_SCHEMA",
]

CERTIFICATE_SCHEMA = "certificate.v1"
UNIT_NORM_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class NoiseInfo:
    """What is known about ``eta = g_eps - K u``.

    ``beta`` is the noise-atom correlation ``max_i |<eta, K e_i>|``; when the
    realization is unknown it falls back to ``epsilon * ||K||``.
    """

    eta: np.ndarray | None
    epsilon: float
    beta: float
    beta_source: str = "realized"

    @classmethod
    def from_eta(cls, K: DenseOperator, eta) -> "NoiseInfo":
        eta = np.asarray(eta, dtype=float).copy()
        eta.setflags(write=False)
        beta = float(np.max(np.abs(K.rmatvec(eta)), initial=0.0))
        return cls(eta=eta, epsilon=float(np.linalg.norm(eta)), beta=beta, beta_source="realized")

    @classmethod
    def from_epsilon(cls, K: DenseOperator, epsilon: float) -> "NoiseInfo":
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        return cls(eta=None, epsilon=float(epsilon), beta=float(epsilon) * spectral_norm(K),
                   beta_source="epsilon_norm_bound")

    @classmethod
    def noiseless(cls, K: DenseOperator) -> "NoiseInfo":
        return cls.from_eta(K, np.zeros(K.rows))


class AlphaPolicy(str, Enum):
    LOWER_MARGIN = "lower_margin"
    GEOMETRIC_MEAN = "geometric_mean"


Interval = tuple[float, float]


@dataclass
class Certificate:
    """Every recovery quantity for one instance ``(K, u, eta)``."""

    support: list[int]
    erc_value: float
    erc_holds: bool
    gram_inv_norm: float
    cor_in: float
    cor_out: float
    min_col_norm_sq: float
    max_col_norm_sq: float
    coherence: float
    beta: float
    beta_source: str
    beta_norm_bound: float
    epsilon: float
    r_ratio: float
    u_min: float
    eps_erc_holds: bool
    neumann_applicable: bool
    neumann_eps_erc_holds: bool
    fuchs_holds: bool
    alpha_interval: Interval | None
    neumann_alpha_interval: Interval | None
    tropp_interval: Interval | None
    chosen_alpha: float | None
    alpha_policy: str
    linf_bound: float | None = None
    margins: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("alpha_interval", "neumann_alpha_interval", "tropp_interval"):
            if d[key] is not None:
                d[key] = [float(x) for x in d[key]]
        return {"schema": CERTIFICATE_SCHEMA, **_jsonable(d)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _support(I) -> SupportSet:
    return I if isinstance(I, SupportSet) else SupportSet.of(I)


def erc_value(K: DenseOperator, I) -> float:
    """``max_{i not in I} ||(K P_I)^+ K e_i||_1`` (0 when I covers every atom)."""
    I = _support(I)
    Ic = I.complement(K.cols)
    K_I = restrict(K, I)
    if len(Ic) == 0:
        pinv_apply(K_I, np.zeros(K.rows))  # still enforce injectivity
        return 0.0
    coef = pinv_apply(K_I, K.entries[:, Ic.array()])
    return float(np.max(np.sum(np.abs(coef), axis=0)))


def alpha_lower_erc(erc: float, beta: float) -> float:
    """Lower end of the admissible interval: ``(1 + erc)/(1 - erc) * beta``."""
    if not erc < 1:
        raise ValueError(f"ERC value {erc} >= 1: no lower bound exists")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return (1.0 + erc) / (1.0 - erc) * beta


def alpha_upper(u_min: float, gram_inv_norm: float, beta: float) -> float:
    if gram_inv_norm <= 0:
        raise ValueError("gram_inv_norm must be positive")
    return u_min / gram_inv_norm - beta


def linf_error_bound(alpha: float, beta: float, gram_inv_norm: float) -> float:
    """Bound on ``||u - u_alpha||_inf`` valid once ``alpha`` exceeds the lower rule."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return (alpha + beta) * gram_inv_norm


def l1_error_bound(alpha: float, beta: float, gram_inv_norm: float, support_size: int) -> float:
    return linf_error_bound(alpha, beta, gram_inv_norm) * support_size


def eps_erc_holds(erc: float, r_ratio: float, gram_inv_norm: float) -> bool:
    return bool(erc < 1.0 - 2.0 * r_ratio * gram_inv_norm)


def cor_sums(K: DenseOperator, I) -> tuple[float, float]:
    """``(COR_I, COR_{I^c})``: largest summed correlation with the support atoms.

    ``COR_I`` excludes the diagonal; empty sums are 0.
    """
    I = _support(I).validate(K.cols)
    if len(I) == 0:
        return 0.0, 0.0
    C = np.abs(K.entries.T @ K.entries[:, I.array()])  # cols x |I|
    inside = C[I.array()]
    np.fill_diagonal(inside, 0.0)
    cor_in = float(np.max(inside.sum(axis=1)))
    Ic = I.complement(K.cols)
    cor_out = float(np.max(C[Ic.array()].sum(axis=1))) if len(Ic) else 0.0
    return cor_in, cor_out


def neumann_eps_erc_holds(cor_in: float, cor_out: float, min_col_norm_sq: float, r_ratio: float) -> bool:
    """``COR_I + COR_{I^c} < min_i ||K e_i||^2 - 2 r``.

    Atoms must have norm at most one; a larger ``min_col_norm_sq`` is
    rejected.
    """
    if min_col_norm_sq > 1.0 + UNIT_NORM_SLACK:
        raise ValueError(f"atoms must have norm <= 1, got min squared norm {min_col_norm_sq}")
    return bool(cor_in + cor_out < min_col_norm_sq - 2.0 * r_ratio)


def neumann_alpha_interval(cor_in, cor_out, min_col_norm_sq, beta, u_min) -> Interval | None:
    denom = min_col_norm_sq - cor_in - cor_out
    if denom <= 0:
        return None
    lo = (min_col_norm_sq - cor_in + cor_out) / denom * beta
    hi = (min_col_norm_sq - cor_in) * u_min - beta
    return (lo, hi) if lo < hi else None


def coherence(K: DenseOperator) -> float:
    """``max_{i != j} |<K e_i, K e_j>|``."""
    if K.cols < 2:
        raise ValueError("coherence needs at least two atoms")
    G = np.abs(K.entries.T @ K.entries)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def fuchs_holds(mu: float, sparsity_N: int, r_ratio: float) -> bool:
    """``(2N - 1) mu < 1 - 2 r`` for unit-norm atoms."""
    return bool((2 * sparsity_N - 1) * mu < 1.0 - 2.0 * r_ratio)


def tropp_bounds(K: DenseOperator, I, g_eps) -> tuple[float, float]:
    """Both ends of :func:`tropp_interval`, returned even when ``lo >= hi``."""
    I = _support(I)
    erc = erc_value(K, I)
    if not erc < 1:
        raise ValueError(f"ERC value {erc} >= 1: interval undefined")
    K_I = restrict(K, I)
    g = np.asarray(g_eps, dtype=float)
    u_I = pinv_apply(K_I, g)
    resid = g - K_I.matvec(u_I)
    Ic = I.complement(K.cols)
    corr = np.abs(K.entries[:, Ic.array()].T @ resid) if len(Ic) else np.zeros(0)
    lo = float(corr.max(initial=0.0)) / (1.0 - erc)
    hi = float(np.min(np.abs(u_I))) / l1l1_norm(restricted_gram_inverse(K, I))
    return lo, hi


def tropp_interval(K: DenseOperator, I, g_eps) -> Interval | None:
    """Interval built from the projection of the realized data onto ``range(K P_I)``.

    ``lo = max_{i not in I} |<g - g_I, K e_i>| / (1 - erc)`` and
    ``hi = min_{i in I} |u_I(i)| / ||(P_I K* K P_I)^{-1}||``, where
    ``u_I = (K P_I)^+ g`` and ``g_I = K P_I u_I``.
    """
    lo, hi = tropp_bounds(K, I, g_eps)
    return (lo, hi) if lo < hi else None


def choose_alpha(interval: Interval | None, policy: AlphaPolicy | str = AlphaPolicy.LOWER_MARGIN) -> float:
    """Pick a parameter strictly inside ``(lo, hi)``.

    ``lower_margin`` takes ``lo + 0.05 (hi - lo)``, staying close to the small
    end where the error bound is tightest. ``geometric_mean`` needs ``lo > 0``
    and otherwise falls back to ``lower_margin``.
    """
    if interval is None or not interval[0] < interval[1]:
        raise ValueError(f"empty alpha interval {interval}")
    lo, hi = interval
    policy = AlphaPolicy(policy)
    if policy is AlphaPolicy.GEOMETRIC_MEAN and lo > 0:
        a = math.sqrt(lo * hi)
        if lo < a < hi:
            return a
        return min(max(a, math.nextafter(lo, hi)), math.nextafter(hi, lo))
    return lo + 0.05 * (hi - lo)


def build_certificate(
    K: DenseOperator,
    u_true: SparseSignal,
    noise: NoiseInfo,
    policy: AlphaPolicy | str = AlphaPolicy.LOWER_MARGIN,
) -> Certificate:
    """Evaluate every condition and interval for the instance ``(K, u, noise)``.

    The Neumann quantities need atoms of norm at most one; for other operators
    they are reported as not applicable (``neumann_applicable=False``).
    """
    u = u_true.values
    if u.size != K.cols:
        raise ValueError(f"signal length {u.size} does not match {K.cols} atoms")
    I = u_true.support()
    if len(I) == 0:
        raise ValueError("ground truth must be non-zero")
    policy = AlphaPolicy(policy)

    erc = erc_value(K, I)
    ginv = l1l1_norm(restricted_gram_inverse(K, I))
    cor_in, cor_out = cor_sums(K, I)
    norms_sq = K.column_norms**2
    min_sq = float(norms_sq[I.array()].min())
    max_sq = float(norms_sq.max())
    mu = coherence(K) if K.cols >= 2 else 0.0
    u_min = float(np.min(np.abs(u[I.array()])))
    beta = noise.beta
    r = beta / u_min
    knorm = spectral_norm(K)

    erc_ok = erc < 1.0
    eps_ok = eps_erc_holds(erc, r, ginv)
    interval = None
    if erc_ok:
        lo, hi = alpha_lower_erc(erc, beta), alpha_upper(u_min, ginv, beta)
        interval = (lo, hi) if lo < hi else None

    applicable = max_sq <= 1.0 + UNIT_NORM_SLACK
    neu_ok = applicable and neumann_eps_erc_holds(cor_in, cor_out, min_sq, r)
    neu_interval = neumann_alpha_interval(cor_in, cor_out, min_sq, beta, u_min) if applicable else None
    unit = bool(np.allclose(norms_sq, 1.0, rtol=0, atol=1e-9))
    fuchs_ok = unit and K.cols >= 2 and fuchs_holds(mu, len(I), r)

    tropp = None
    if erc_ok and noise.eta is not None:
        tropp = tropp_interval(K, I, K.matvec(u) + noise.eta)

    chosen = choose_alpha(interval, policy) if interval is not None else None
    margins = {
        "erc": 1.0 - erc,
        "eps_erc": (1.0 - 2.0 * r * ginv) - erc,
        "neumann_eps_erc": (min_sq - 2.0 * r) - (cor_in + cor_out),
        "fuchs": (1.0 - 2.0 * r) - (2 * len(I) - 1) * mu,
    }
    return Certificate(
        support=list(I.indices),
        erc_value=erc,
        erc_holds=erc_ok,
        gram_inv_norm=ginv,
        cor_in=cor_in,
        cor_out=cor_out,
        min_col_norm_sq=min_sq,
        max_col_norm_sq=max_sq,
        coherence=mu,
        beta=beta,
        beta_source=noise.beta_source,
        beta_norm_bound=noise.epsilon * knorm,
        epsilon=noise.epsilon,
        r_ratio=r,
        u_min=u_min,
        eps_erc_holds=eps_ok,
        neumann_applicable=applicable,
        neumann_eps_erc_holds=bool(neu_ok),
        fuchs_holds=bool(fuchs_ok),
        alpha_interval=interval,
        neumann_alpha_interval=neu_interval,
        tropp_interval=tropp,
        chosen_alpha=chosen,
        alpha_policy=policy.value,
        linf_bound=linf_error_bound(chosen, beta, ginv) if chosen is not None else None,
        margins=margins,
    )
