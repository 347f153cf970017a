"""Fresnel-convolved disk dictionary for in-line holograms of droplet jets.

A spherical particle of radius ``r`` at lateral position ``x_j`` in the plane
at distance ``z`` from the detector produces the hologram

    (K e_j)(x) = c * (chi_{B_r} * Re h_z)(x - x_j),
    Re h_z(x, y) = sin(pi (x^2 + y^2) / (lambda z)) / (lambda z),

with ``c = sqrt(2 / (pi r^2))`` making the continuum atom unit-normed. The
dictionary samples these atoms on a square detector and renormalizes each
column to exact unit norm. The closed-form majorant of atom correlations
then turns the correlation-based recovery condition into a check that only
needs the minimal particle distance of the jet.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import j0

from .certify import AlphaPolicy, NoiseInfo, build_certificate, choose_alpha, _jsonable
from .operators import DenseOperator, SparseSignal
from .solver import SolverOptions, ista_solve

__all__ = [
    "B_L",
    "C_L",
    "HoloConfig",
    "JetSpec",
    "HoloDictionary",
    "HoloInstance",
    "HoloGeometryError",
    "fresnel_real_kernel",
    "radial_profile",
    "particle_response",
    "encircled_energy",
    "build_dictionary",
    "circle_intersection_area",
    "majorant",
    "jet_condition_lhs",
    "jet_indices",
    "simulate_hologram",
    "jet_experiment",
    "load_config",
]

log = logging.getLogger(__name__)

B_L = 0.6748
C_L = 0.7857

RENORM_WINDOW = (0.95, 1.05)
MAX_TRUNCATED_ENERGY = 0.005
NODES_PER_OVERSAMPLE = 16
HOLO_SCHEMA = "holo.v1"


class HoloGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HoloConfig:
    """Optical setup and detector sampling; all lengths in micrometres.

    The detector is square with ``round(detector_extent / pitch)`` samples per
    side at spacing ``pitch``. Candidate particle positions lie on the
    detector's horizontal centre line, ``n_positions`` of them at spacing
    ``pitch`` centred on the detector. ``oversample`` scales the number of
    quadrature nodes used for the disk integral.
    """

    wavelength: float = 0.6328
    z: float = 200_000.0
    radius: float = 50.0
    pitch: float = 25.0
    n_positions: int = 81
    detector_extent: float = 6400.0
    oversample: int = 4

    def __post_init__(self):
        for name in ("wavelength", "z", "radius", "pitch", "detector_extent"):
            if not getattr(self, name) > 0:
                raise HoloGeometryError(f"{name} must be positive")
        if self.pitch > 2 * self.radius:
            raise HoloGeometryError("pitch must not exceed the particle diameter")
        if self.n_positions < 1 or self.oversample < 1:
            raise HoloGeometryError("n_positions and oversample must be positive")
        if self.n_side < 2:
            raise HoloGeometryError("detector needs at least 2 samples per side")
        half_span = (self.n_positions - 1) / 2 * self.pitch
        if half_span >= self.n_side * self.pitch / 2:
            raise HoloGeometryError("candidate positions extend beyond the detector")

    @property
    def lz(self) -> float:
        return self.wavelength * self.z

    @property
    def n_side(self) -> int:
        return int(round(self.detector_extent / self.pitch))

    @property
    def amplitude_scale(self) -> float:
        return math.sqrt(2.0 / (math.pi * self.radius**2))

    def detector_axis(self) -> np.ndarray:
        n = self.n_side
        return (np.arange(n) - (n - 1) / 2) * self.pitch

    def positions(self) -> np.ndarray:
        m = self.n_positions
        return (np.arange(m) - (m - 1) / 2) * self.pitch


@dataclass(frozen=True)
class JetSpec:
    """Monodisperse jet: ``n_particles`` droplets spaced ``rho`` apart."""

    rho: float
    n_particles: int = 3
    amplitudes: tuple[float, ...] = (10.0,)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.n_particles < 1:
            raise HoloGeometryError("need at least one particle")
        if self.noise_sigma < 0:
            raise HoloGeometryError("noise_sigma must be non-negative")
        amps = tuple(float(a) for a in self.amplitudes)
        if len(amps) == 1:
            amps = amps * self.n_particles
        if len(amps) != self.n_particles or any(a == 0 for a in amps):
            raise HoloGeometryError("need one non-zero amplitude per particle")
        object.__setattr__(self, "amplitudes", amps)

    def spacing_steps(self, pitch: float) -> int:
        k = self.rho / pitch
        if abs(k - round(k)) > 1e-9 or round(k) < 2:
            raise HoloGeometryError(f"rho/pitch = {k:g} must be an integer >= 2")
        return int(round(k))


def fresnel_real_kernel(cfg: HoloConfig, x, y):
    """Real part of the Fresnel function, ``sin(pi |R|^2 / (lambda z)) / (lambda z)``."""
    rr = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
    return np.sin(np.pi * rr / cfg.lz) / cfg.lz


@functools.lru_cache(maxsize=8)
def _nodes(cfg: HoloConfig):
    x, w = np.polynomial.legendre.leggauss(NODES_PER_OVERSAMPLE * cfg.oversample)
    r = cfg.radius
    return (x + 1) * r / 2, w * r / 2


def radial_profile(cfg: HoloConfig, R) -> np.ndarray:
    """Continuum atom ``c * (chi_{B_r} * Re h_z)`` at distance ``R`` from its centre.

    The angular part of the disk integral is done analytically,

        a(R) = 2 pi c / (lambda z) * int_0^r sin(pi (R^2 + s^2)/(lambda z))
                                      J0(2 pi R s / (lambda z)) s ds,

    and the radial part by Gauss-Legendre quadrature.
    """
    s, w = _nodes(cfg)
    R = np.asarray(R, dtype=float)
    flat = R.ravel()
    out = np.empty(flat.shape)
    pre = 2 * np.pi * cfg.amplitude_scale / cfg.lz
    chunk = 16384
    for i in range(0, flat.size, chunk):
        Rc = flat[i : i + chunk, None]
        integrand = np.sin(np.pi * (Rc**2 + s**2) / cfg.lz) * j0(2 * np.pi * Rc * s / cfg.lz) * s
        out[i : i + chunk] = pre * (integrand @ w)
    return out.reshape(R.shape)


def particle_response(cfg: HoloConfig, center, with_factor: bool = False):
    """Unit-norm detector samples of the hologram of one particle.

    Samples are scaled by the pixel pitch so the discrete l2 norm
    approximates the continuum L2 norm; the remaining deviation is removed
    by renormalization, whose factor must stay in ``[0.95, 1.05]``.

    Returns the flattened ``n_side * n_side`` vector, and the factor when
    ``with_factor`` is set.
    """
    cx, cy = (float(c) for c in center)
    ax = cfg.detector_axis()
    half = cfg.n_side * cfg.pitch / 2
    if not (abs(cx) < half and abs(cy) < half):
        raise HoloGeometryError(f"centre {center} lies outside the detector")
    R = np.hypot(ax[:, None] - cx, ax[None, :] - cy)
    raw = radial_profile(cfg, R).ravel() * cfg.pitch
    factor = _renorm_factor(raw)
    vec = raw * factor
    return (vec, factor) if with_factor else vec


def _renorm_factor(raw: np.ndarray) -> float:
    nrm = float(np.linalg.norm(raw))
    if nrm == 0:
        raise HoloGeometryError("atom vanishes on the detector")
    factor = 1.0 / nrm
    lo, hi = RENORM_WINDOW
    if not lo <= factor <= hi:
        raise HoloGeometryError(
            f"renormalization factor {factor:.4f} outside [{lo}, {hi}]: detector too small or too coarse"
        )
    return factor


def encircled_energy(cfg: HoloConfig, R: float, step: float = 0.5) -> float:
    """Continuum atom energy inside the disk of radius ``R`` about its centre."""
    rho = np.arange(0.0, R + step, step)
    rho[-1] = R
    a = radial_profile(cfg, rho)
    return float(np.trapezoid(a**2 * 2 * np.pi * rho, rho))


@dataclass(frozen=True, eq=False)
class HoloDictionary:
    K: DenseOperator
    positions: np.ndarray
    factors: np.ndarray
    truncated_energy_bound: float
    cfg: HoloConfig = field(repr=False)


@functools.lru_cache(maxsize=4)
def build_dictionary(cfg: HoloConfig) -> HoloDictionary:
    """Assemble the dictionary for every candidate position.

    Candidates sit on the detector lattice, so all atoms are windows of one
    oversized canvas centred on a single particle (exact translation
    stationarity). Column ``k`` equals ``particle_response(cfg, (x_k, 0))``.
    """
    n, m, p = cfg.n_side, cfg.n_positions, cfg.pitch
    w = n + m - 1
    # relative x offsets between pixels and candidates, all multiples of p
    xrel = (np.arange(w) - (w - 1) / 2) * p
    canvas = radial_profile(cfg, np.hypot(xrel[:, None], cfg.detector_axis()[None, :])) * p
    entries = np.empty((n * n, m), order="F")
    factors = np.empty(m)
    for k in range(m):
        # pixel i, candidate k  ->  canvas row i - k + (m - 1)
        raw = canvas[m - 1 - k : m - 1 - k + n].ravel()
        factors[k] = _renorm_factor(raw)
        entries[:, k] = raw * factors[k]

    pos = cfg.positions()
    half = n * p / 2
    r_in = float(np.min(half - np.abs(pos)))
    trunc = 1.0 - encircled_energy(cfg, r_in)
    if trunc > MAX_TRUNCATED_ENERGY:
        log.warning(
            "continuum energy outside the detector may reach %.2f%% (> %.2f%%); "
            "correlations carry the corresponding discretization error",
            100 * trunc, 100 * MAX_TRUNCATED_ENERGY,
        )
    return HoloDictionary(K=DenseOperator(entries, normalized=True), positions=pos,
                          factors=factors, truncated_energy_bound=trunc, cfg=cfg)


def circle_intersection_area(d, r: float):
    """Area of the lens formed by two radius-``r`` disks whose centres are ``d`` apart."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or r < 0:
        raise ValueError("distance and radius must be non-negative")
    dc = np.minimum(d, 2 * r)
    area = 2 * r**2 * np.arccos(dc / (2 * r)) - dc / 2 * np.sqrt(4 * r**2 - dc**2)
    area = np.where(d >= 2 * r, 0.0, area)
    return float(area) if area.ndim == 0 else area


def majorant(d, cfg: HoloConfig):
    """Upper bound on ``|<K e_i, K e_j>|`` for atoms whose centres are ``d`` apart.

    Overlap of the two disks plus a chirp cross-term that decays like
    ``d^(-8/3)`` in the far field.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("majorant is defined for positive distances only")
    r = cfg.radius
    overlap = circle_intersection_area(d, r) / (np.pi * r**2)
    near = np.minimum(B_L**2, C_L**2 * (cfg.lz / (2 * np.pi * r)) ** (2 / 3) * d ** (-2 / 3))
    far = np.minimum(1.0, 2 * cfg.lz / np.pi * d ** (-2.0))
    out = overlap + 0.25 * near * far
    return float(out) if out.ndim == 0 else out


def jet_condition_lhs(rho: float, pitch: float, N: int, cfg: HoloConfig) -> float:
    """Majorant bound on ``COR_I + COR_{I^c}`` for a jet with spacing ``rho``.

    ``2 sum_{j=1}^{N//2} M(j rho) + max_{1 <= i < rho/pitch} sum_{|j| <= N//2} M(|j rho - i pitch|)``
    """
    k = rho / pitch
    if not rho > pitch or abs(k - round(k)) > 1e-9:
        raise HoloGeometryError(f"need rho > pitch with rho/pitch integral, got {rho}/{pitch}")
    if N < 1:
        raise HoloGeometryError("N must be positive")
    h = N // 2
    inside = 2 * float(np.sum(majorant(np.arange(1, h + 1) * rho, cfg))) if h else 0.0
    js = np.arange(-h, h + 1)[None, :] * rho
    offs = np.arange(1, int(round(k)))[:, None] * pitch
    outside = float(np.max(np.sum(majorant(np.abs(js - offs), cfg), axis=1)))
    return inside + outside


def jet_indices(cfg: HoloConfig, jet: JetSpec) -> np.ndarray:
    k = jet.spacing_steps(cfg.pitch)
    centre = (cfg.n_positions - 1) // 2
    start = centre - ((jet.n_particles - 1) * k) // 2
    idx = start + k * np.arange(jet.n_particles)
    if idx[0] < 0 or idx[-1] >= cfg.n_positions:
        raise HoloGeometryError(
            f"jet of {jet.n_particles} particles at rho={jet.rho} does not fit {cfg.n_positions} candidates"
        )
    return idx


@dataclass(frozen=True, eq=False)
class HoloInstance:
    K: DenseOperator
    u_true: SparseSignal
    g_eps: np.ndarray
    noise: NoiseInfo
    dictionary: HoloDictionary
    jet_indices: np.ndarray


def simulate_hologram(cfg: HoloConfig, jet: JetSpec, seed: int = 0) -> HoloInstance:
    """Noisy hologram ``g = K u + eta`` of a jet, ``eta`` i.i.d. N(0, sigma^2)."""
    dic = build_dictionary(cfg)
    K = dic.K
    idx = jet_indices(cfg, jet)
    u = SparseSignal.from_support(K.cols, idx, jet.amplitudes)
    if jet.noise_sigma > 0:
        eta = jet.noise_sigma * np.random.default_rng(seed).standard_normal(K.rows)
    else:
        eta = np.zeros(K.rows)
    noise = NoiseInfo.from_eta(K, eta)
    g = K.matvec(u.values) + noise.eta
    g.setflags(write=False)
    return HoloInstance(K=K, u_true=u, g_eps=g, noise=noise, dictionary=dic, jet_indices=idx)


def _manual_alpha_search(K, g, support, lo, hi, opts, n=24):
    """Scan a log grid of parameters for one that recovers ``support`` exactly."""
    for alpha in np.geomspace(lo, hi, n):
        res = ista_solve(K, g, float(alpha), opts)
        if res.support().indices == support:
            return float(alpha), res
    return None, None


def jet_experiment(
    cfg: HoloConfig,
    jet: JetSpec,
    alpha_policy: AlphaPolicy | str = AlphaPolicy.LOWER_MARGIN,
    seed: int = 0,
    opts: SolverOptions | None = None,
    search_fallback: bool = True,
) -> dict:
    """Simulate one jet hologram, certify it, reconstruct it, and report.

    The a-priori check compares the majorant sum against ``1 - 2 r`` with the
    realized noise-to-signal ratio ``r``. If the realized instance has no
    certified parameter, a log-grid search stands in for manual tuning.
    """
    inst = simulate_hologram(cfg, jet, seed)
    K, u = inst.K, inst.u_true
    cert = build_certificate(K, u, inst.noise, alpha_policy)
    lhs = jet_condition_lhs(jet.rho, cfg.pitch, jet.n_particles, cfg)
    threshold = 1.0 - 2.0 * cert.r_ratio
    true_support = tuple(int(i) for i in inst.jet_indices)

    alpha_source = "certificate"
    alpha = cert.chosen_alpha
    result = None
    if alpha is None and cert.neumann_alpha_interval is not None:
        alpha, alpha_source = choose_alpha(cert.neumann_alpha_interval, alpha_policy), "neumann"
    if alpha is not None:
        result = ista_solve(K, inst.g_eps, alpha, opts)
    elif search_fallback:
        lo = max(cert.beta, 1e-3 * cert.u_min)
        alpha, result = _manual_alpha_search(K, inst.g_eps, true_support, lo, cert.u_min, opts)
        alpha_source = "search"
    recovered = None if result is None else result.support().indices

    x_det = cfg.detector_axis()
    n = cfg.n_side
    row = n // 2
    clean = K.matvec(u.values).reshape(n, n)
    noisy = np.asarray(inst.g_eps).reshape(n, n)
    # detector index is (x, y); the trace runs along x through the jet line
    trace = np.column_stack([x_det, noisy[:, row], clean[:, row]])
    spikes = np.column_stack([
        inst.dictionary.positions,
        u.values,
        np.zeros(K.cols) if result is None else result.minimizer.values,
    ])
    report = {
        "schema": HOLO_SCHEMA,
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
        "jet": {"rho_um": jet.rho, "n_particles": jet.n_particles,
                "amplitudes": list(jet.amplitudes), "noise_sigma": jet.noise_sigma},
        "seed": seed,
        "detector": {"n_side": n, "rows": K.rows, "atoms": K.cols,
                     "renorm_factor_range": [float(inst.dictionary.factors.min()),
                                             float(inst.dictionary.factors.max())],
                     "truncated_energy_bound": inst.dictionary.truncated_energy_bound},
        "jet_condition": {"lhs": lhs, "threshold": threshold, "holds": bool(lhs < threshold),
                          "r_ratio": cert.r_ratio},
        "certificate": cert.to_dict(),
        "alpha": alpha,
        "alpha_source": alpha_source if alpha is not None else None,
        "solve": None if result is None else {
            "iterations": result.iterations,
            "objective": result.objective,
            "optimality_residual": result.optimality_residual,
            "converged": result.converged,
            "linf_error": float(np.max(np.abs(result.minimizer.values - u.values))),
        },
        "true_support": list(true_support),
        "recovered_support": None if recovered is None else list(recovered),
        "exact_recovery": recovered == true_support,
    }
    report = _jsonable(report)
    report["plot_data"] = {"hologram_trace": trace, "spikes": spikes}
    return report


CONFIG_KEYS = {
    "lambda_um": "wavelength",
    "z_um": "z",
    "radius_um": "radius",
    "pitch_um": "pitch",
    "n_positions": "n_positions",
    "detector_extent_um": "detector_extent",
    "oversample": "oversample",
}
JET_KEYS = {"rho_um", "n_particles", "amplitude", "noise_sigma", "seed"}


def load_config(data: dict) -> tuple[HoloConfig, JetSpec, int]:
    """Parse the flat key/value config used by the CLI."""
    unknown = set(data) - set(CONFIG_KEYS) - JET_KEYS - {"name", "description"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {CONFIG_KEYS[k]: v for k, v in data.items() if k in CONFIG_KEYS}
    for key in ("n_positions", "oversample"):
        if key in kw:
            kw[key] = int(kw[key])
    cfg = HoloConfig(**kw)
    amp = data.get("amplitude", 10.0)
    amps = tuple(amp) if isinstance(amp, (list, tuple)) else (float(amp),)
    jet = JetSpec(rho=float(data["rho_um"]), n_particles=int(data.get("n_particles", 3)),
                  amplitudes=amps, noise_sigma=float(data.get("noise_sigma", 0.0)))
    return cfg, jet, int(data.get("seed", 0))
