"""Finite-dimensional operator model and restricted-operator machinery.

The operator ``K`` is stored as a dense matrix whose column ``j`` is the
dictionary atom ``K e_j``. Everything the recovery conditions need is built
from restrictions ``K P_I`` of this matrix to a support set ``I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

__all__ = [
    "FBIError",
    "DenseOperator",
    "SupportSet",
    "SparseSignal",
    "column",
    "gram_entry",
    "gram",
    "restrict",
    "pinv_apply",
    "restricted_gram_inverse",
    "l1l1_norm",
    "smallest_restricted_singular_value",
    "normalize_columns",
    "spectral_norm",
    "load_matrix",
    "save_matrix",
    "load_vector",
    "save_vector",
]

# sigma_min < FBI_RTOL * sigma_max counts as rank deficient
FBI_RTOL = 1e-10
NORMALIZED_ATOL = 1e-10


class FBIError(ValueError):
    """A restricted operator ``K P_I`` is not injective (numerically).

    Attributes
    ----------
    smallest : float
        Smallest singular value of the offending restriction.
    largest : float
        Largest singular value of the offending restriction.
    """

    def __init__(self, smallest: float, largest: float, msg: str | None = None):
        self.smallest = float(smallest)
        self.largest = float(largest)
        if msg is None:
            msg = (
                "restricted operator is not injective: "
                f"sigma_min={self.smallest:.3e}, sigma_max={self.largest:.3e}"
            )
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense real matrix whose columns are the atoms ``K e_j``.

    Entries are kept in column-major (Fortran) order and made read-only, so
    :func:`column` returns a contiguous view and operators can be shared
    between threads.

    Parameters
    ----------
    entries : array_like, shape (rows, cols)
        Matrix entries.
    normalized : bool
        Assert that every column has unit l2 norm (checked to 1e-10).
    """

    entries: np.ndarray
    normalized: bool = False
    column_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, order="F", copy=True)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"operator must be a non-empty 2-D matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("operator entries must be finite")
        a.setflags(write=False)
        norms = np.linalg.norm(a, axis=0)
        norms.setflags(write=False)
        if self.normalized and not np.allclose(norms, 1.0, rtol=0, atol=NORMALIZED_ATOL):
            raise ValueError("operator flagged normalized but column norms differ from 1")
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "column_norms", norms)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def matvec(self, u) -> np.ndarray:
        return self.entries @ np.asarray(u, dtype=float)

    def rmatvec(self, v) -> np.ndarray:
        return self.entries.T @ np.asarray(v, dtype=float)

    @cached_property
    def spectral_norm(self) -> float:
        """Largest singular value, from the smaller of the two Gram matrices."""
        a = self.entries
        small = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
        return float(np.sqrt(max(linalg.eigvalsh(small, check_finite=False)[-1], 0.0)))

    def __repr__(self):
        flag = ", normalized" if self.normalized else ""
        return f"DenseOperator({self.rows}x{self.cols}{flag})"


@dataclass(frozen=True)
class SupportSet:
    """Strictly increasing tuple of atom indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"support indices must be strictly increasing: {idx}")
        if idx and idx[0] < 0:
            raise ValueError(f"support indices must be non-negative: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "SupportSet":
        """Build from any iterable, sorting it; duplicates are an error."""
        idx = sorted(int(i) for i in indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in support: {idx}")
        return cls(tuple(idx))

    def validate(self, cols: int) -> "SupportSet":
        if self.indices and self.indices[-1] >= cols:
            raise IndexError(f"support index {self.indices[-1]} out of range for {cols} atoms")
        return self

    def complement(self, cols: int) -> "SupportSet":
        self.validate(cols)
        mask = np.ones(cols, dtype=bool)
        mask[list(self.indices)] = False
        return SupportSet(tuple(np.flatnonzero(mask).tolist()))

    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices


@dataclass(frozen=True, eq=False)
class SparseSignal:
    """Coefficient vector with exact (unthresholded) support bookkeeping."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_support(cls, length: int, support: Sequence[int], amplitudes) -> "SparseSignal":
        v = np.zeros(length)
        v[list(support)] = amplitudes
        return cls(v)

    @property
    def length(self) -> int:
        return self.values.size

    def support(self) -> SupportSet:
        return SupportSet(tuple(np.flatnonzero(self.values != 0).tolist()))


def _as_support(I) -> SupportSet:
    return I if isinstance(I, SupportSet) else SupportSet.of(I)


def column(K: DenseOperator, i: int) -> np.ndarray:
    """Return atom ``K e_i`` (a read-only contiguous view)."""
    if not 0 <= i < K.cols:
        raise IndexError(f"column index {i} out of range for {K.cols} atoms")
    return K.entries[:, i]


def gram_entry(K: DenseOperator, i: int, j: int) -> float:
    return float(column(K, i) @ column(K, j))


def gram(K: DenseOperator, I=None) -> np.ndarray:
    """Gram matrix ``[<K e_i, K e_j>]`` over ``I`` (all atoms if None)."""
    a = K.entries if I is None else restrict(K, I).entries
    return a.T @ a


def restrict(K: DenseOperator, I) -> DenseOperator:
    """Operator ``K P_I`` as a rows x |I| matrix, column order preserved."""
    I = _as_support(I).validate(K.cols)
    if len(I) == 0:
        raise ValueError("cannot restrict to an empty support")
    return DenseOperator(K.entries[:, I.array()])


def _svals(a: np.ndarray) -> np.ndarray:
    return linalg.svdvals(a, check_finite=False)


def _check_fbi(a: np.ndarray) -> np.ndarray:
    s = _svals(a)
    if a.shape[1] > a.shape[0] or s[-1] < FBI_RTOL * s[0] or s[0] == 0.0:
        smin = 0.0 if a.shape[1] > a.shape[0] else s[-1]
        raise FBIError(smin, s[0])
    return s


def _qr(a: np.ndarray):
    _check_fbi(a)
    return linalg.qr(a, mode="economic", check_finite=False)


def pinv_apply(K_I: DenseOperator, v) -> np.ndarray:
    """Apply ``(K P_I)^dagger`` to ``v`` (or to each column of a 2-D ``v``).

    Uses a thin QR factorization of the restricted operator. Raises
    :class:`FBIError` when the restriction is numerically rank deficient.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != K_I.rows:
        raise ValueError(f"vector length {v.shape[0]} does not match {K_I.rows} rows")
    Q, R = _qr(K_I.entries)
    return linalg.solve_triangular(R, Q.T @ v, check_finite=False)


def restricted_gram_inverse(K: DenseOperator, I) -> np.ndarray:
    """Inverse of ``P_I K* K P_I`` as an |I| x |I| matrix.

    Computed as ``R^{-1} R^{-T}`` from the QR factor of ``K P_I``, which
    avoids squaring the condition number.
    """
    _, R = _qr(restrict(K, I).entries)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]), check_finite=False)
    return Rinv @ Rinv.T


def l1l1_norm(M) -> float:
    """Operator norm l1 -> l1: the largest absolute column sum."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(M), axis=0)))


def smallest_restricted_singular_value(K: DenseOperator, I) -> float:
    a = restrict(K, I).entries
    if a.shape[1] > a.shape[0]:
        return 0.0
    return float(_svals(a)[-1])


def spectral_norm(K: DenseOperator) -> float:
    return K.spectral_norm


def normalize_columns(K: DenseOperator) -> tuple[DenseOperator, np.ndarray]:
    """Scale columns to unit norm.

    Returns
    -------
    Kn : DenseOperator
        Operator flagged ``normalized``.
    scaling : ndarray
        Original column norms, so that ``K = Kn @ diag(scaling)``.
    """
    scaling = K.column_norms.copy()
    if np.any(scaling == 0):
        raise ValueError(f"zero column(s) at {np.flatnonzero(scaling == 0).tolist()}")
    return DenseOperator(K.entries / scaling, normalized=True), scaling


# -- delimited-text matrix format: header "rows cols", then row-major rows --


def save_matrix(path, M) -> None:
    M = np.atleast_2d(np.asarray(M.entries if isinstance(M, DenseOperator) else M, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_matrix(path) -> np.ndarray:
    text = Path(path).read_text().split("\n", 1)
    header = text[0].split()
    if len(header) != 2:
        raise ValueError(f"{path}: expected header 'rows cols', got {text[0]!r}")
    rows, cols = (int(h) for h in header)
    body = np.array((text[1] if len(text) > 1 else "").split(), dtype=float)
    if body.size != rows * cols:
        raise ValueError(f"{path}: header promises {rows}x{cols} entries, found {body.size}")
    return body.reshape(rows, cols)


def save_vector(path, v) -> None:
    save_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def load_vector(path) -> np.ndarray:
    M = load_matrix(path)
    if min(M.shape) != 1:
        raise ValueError(f"{path}: expected a vector, got shape {M.shape}")
    return M.ravel()
