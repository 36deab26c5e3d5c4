"""Binary factor model: latent matrices, data generation and error metrics.

The model is X = Z A + E with Z an n x K binary factor matrix, the loadings
A integrated out so that columns of X are i.i.d. N(0, sigma_a^2 Z Z' +
sigma_x^2 I). Only the feature similarity matrix Z Z' is identifiable, so
all metrics act on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """Raised for malformed inputs (shape mismatches, bad values)."""


@dataclass(frozen=True)
class NoiseParams:
    """Loading and noise variances of the collapsed Gaussian model."""

    sigma_a_sq: float
    sigma_x_sq: float

    def __post_init__(self):
        for name in ("sigma_a_sq", "sigma_x_sq"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DataError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint index sets covering 0..n-1."""

    s1: frozenset
    s2: frozenset

    @classmethod
    def from_iterables(cls, s1, s2):
        return cls(frozenset(int(i) for i in s1), frozenset(int(i) for i in s2))

    @classmethod
    def halves(cls, n):
        return cls.from_iterables(range(n // 2), range(n // 2, n))

    def check(self, n):
        if self.s1 & self.s2:
            raise DataError("partition sets overlap")
        if self.s1 | self.s2 != set(range(n)):
            raise DataError(f"partition must cover 0..{n - 1}")


@dataclass(frozen=True)
class FactorDecomposition:
    """Counts of group-1-unique, group-2-unique and shared factors."""

    k01: int
    k02: int
    k0_star: int

    @property
    def k0(self):
        return self.k01 + self.k02 + self.k0_star


class BinaryFactorMatrix:
    """Binary factor matrix with all-zero columns dropped.

    Stores an ``n x K`` uint8 array. Column order carries no meaning: all
    consumers act on the equivalence class under column permutation. ``K``
    counts the retained (nonzero) columns.
    """

    def __init__(self, matrix, n=None):
        matrix = np.asarray(matrix)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        if matrix.size == 0:
            if n is None:
                n = matrix.shape[0]
            matrix = np.zeros((n, 0), dtype=np.uint8)
        if matrix.ndim != 2:
            raise DataError("factor matrix must be 2-dimensional")
        vals = np.unique(matrix)
        if not np.isin(vals, (0, 1)).all():
            raise DataError("factor matrix entries must be 0 or 1")
        matrix = matrix.astype(np.uint8)
        keep = matrix.sum(axis=0) > 0
        self.matrix = np.ascontiguousarray(matrix[:, keep])
        self.n = self.matrix.shape[0]
        self.k = self.matrix.shape[1]

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0), dtype=np.uint8))

    @classmethod
    def from_columns(cls, n, columns):
        if not columns:
            return cls.empty(n)
        return cls(np.column_stack(columns))

    def column(self, k):
        return self.matrix[:, k]

    def __eq__(self, other):
        if not isinstance(other, BinaryFactorMatrix):
            return NotImplemented
        if self.n != other.n or self.k != other.k:
            return False
        mine = sorted(map(tuple, self.matrix.T))
        theirs = sorted(map(tuple, other.matrix.T))
        return mine == theirs

    def __repr__(self):
        return f"BinaryFactorMatrix(n={self.n}, k={self.k})"


def _as_matrix(z):
    return z.matrix if isinstance(z, BinaryFactorMatrix) else np.asarray(z, dtype=np.uint8)


def feature_similarity(z):
    """Feature similarity matrix Z Z' (diagonal = per-sample feature counts)."""
    m = _as_matrix(z).astype(np.int64)
    return m @ m.T


def degree(z, i):
    """Sum of shared-feature counts between sample ``i`` and all others."""
    m = _as_matrix(z)
    n = m.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"sample index {i} out of range for n={n}")
    xi = feature_similarity(m)
    return int(xi[i].sum() - xi[i, i])


def generate_data(z0, params, p, seed):
    """Draw X = Z0 A + E with A ~ N(0, sigma_a^2), E ~ N(0, sigma_x^2)."""
    if p < 1:
        raise DataError("p must be >= 1")
    m = _as_matrix(z0).astype(np.float64)
    n, k = m.shape
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, np.sqrt(params.sigma_a_sq), size=(k, p))
    e = rng.normal(0.0, np.sqrt(params.sigma_x_sq), size=(n, p))
    return m @ a + e


def factor_decomposition(z0, partition):
    """Classify columns as unique to S1, unique to S2 or shared."""
    m = _as_matrix(z0)
    partition.check(m.shape[0])
    s1 = np.fromiter(sorted(partition.s1), dtype=np.int64)
    s2 = np.fromiter(sorted(partition.s2), dtype=np.int64)
    in1 = m[s1].sum(axis=0) > 0 if s1.size else np.zeros(m.shape[1], bool)
    in2 = m[s2].sum(axis=0) > 0 if s2.size else np.zeros(m.shape[1], bool)
    k0_star = int(np.sum(in1 & in2))
    k01 = int(np.sum(in1 & ~in2))
    k02 = int(np.sum(~in1 & in2))
    return FactorDecomposition(k01=k01, k02=k02, k0_star=k0_star)


def similarity_error(z, z0):
    """Normalized Frobenius error n^{-1/2} ||Z Z' - Z0 Z0'||_F."""
    a, b = _as_matrix(z), _as_matrix(z0)
    if a.shape[0] != b.shape[0]:
        raise DataError("sample counts differ")
    diff = feature_similarity(a) - feature_similarity(b)
    return float(np.linalg.norm(diff.astype(np.float64)) / np.sqrt(a.shape[0]))


def approximation_error(z0, z_star):
    """Unnormalized Frobenius distance between the two similarity matrices."""
    a, b = _as_matrix(z0), _as_matrix(z_star)
    if a.shape[0] != b.shape[0]:
        raise DataError("sample counts differ")
    diff = feature_similarity(a) - feature_similarity(b)
    return float(np.linalg.norm(diff.astype(np.float64)))


def truncated_feature_count(z, min_share=5):
    """Number of factors possessed by at least ``min_share`` samples."""
    if min_share < 1:
        raise DataError("min_share must be >= 1")
    m = _as_matrix(z)
    return int(np.sum(m.sum(axis=0) >= min_share))


def write_binary_csv(z, path):
    np.savetxt(path, _as_matrix(z), fmt="%d", delimiter=",")


def read_binary_csv(path):
    arr = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    return BinaryFactorMatrix(arr)


def write_data_csv(x, path):
    np.savetxt(path, np.asarray(x, dtype=np.float64), fmt="%.17g", delimiter=",")


def read_data_csv(path):
    x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if not np.isfinite(x).all():
        raise DataError(f"non-finite entries in {path}")
    return x
