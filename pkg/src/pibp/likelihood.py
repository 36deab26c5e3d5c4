"""Collapsed Gaussian likelihood for the binary factor model.

With the loadings integrated out, columns of X are i.i.d.
N(0, sigma_a^2 Z Z' + sigma_x^2 I). Everything is evaluated through the
K x K Gram form

    log det(Sigma) = (n-K) log sigma_x^2 + K log sigma_a^2 + log det M,
    tr(Sigma^{-1} X X') = (tr XX' - tr(M^{-1} Z'XX'Z)) / sigma_x^2,

with M = Z'Z + (sigma_x^2/sigma_a^2) I, which costs O(nK^2 + K^3) instead
of O(n^3). :class:`LikelihoodCache` keeps M's Cholesky factor plus the
sufficient statistics needed for O(K^2) single-entry flip deltas inside the
Gibbs scan.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import DataError, _as_matrix

LOG_2PI = float(np.log(2.0 * np.pi))


class NumericalError(ArithmeticError):
    """Non-finite result where the model guarantees a finite one."""


class CacheError(RuntimeError):
    """Cached sufficient statistics disagree with a fresh recomputation."""


def collapsed_log_likelihood(X, z, params):
    """Marginal log-likelihood of X given the binary factor matrix.

    Always evaluated in the K x K form; the dense n x n evaluation lives
    only in the test oracles.
    """
    zm = _as_matrix(z).astype(np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if zm.shape[0] != n:
        raise DataError(f"X has {n} rows but Z has {zm.shape[0]}")
    k = zm.shape[1]
    sa2, sx2 = params.sigma_a_sq, params.sigma_x_sq
    c = sx2 / sa2
    trxx = float(np.sum(X * X))
    if k == 0:
        logdet = 0.0
        tr_solve = 0.0
    else:
        m = zm.T @ zm + c * np.eye(k)
        cho = cho_factor(m, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        b = zm.T @ X
        tr_solve = float(np.sum(b * cho_solve(cho, b)))
    out = (
        -0.5 * n * p * LOG_2PI
        - 0.5 * p * ((n - k) * np.log(sx2) + k * np.log(sa2) + logdet)
        - (trxx - tr_solve) / (2.0 * sx2)
    )
    if not np.isfinite(out):
        raise NumericalError("collapsed log-likelihood is not finite")
    return float(out)


class LikelihoodCache:
    """Mutable likelihood state for one chain.

    Owns the factor matrix ``Z`` (int8, C order) together with
    ``G = Z'Z``, ``H = Z'XX'``, ``S = Z'XX'Z``, the Cholesky factor of
    ``M = G + cI`` and the scalar state vector shared with the kernels.
    Confined to a single chain; the observed data may be shared read-only.
    """

    def __init__(self, X, z_init, sigma_a_sq, sigma_x_sq):
        self.X = np.asarray(X, dtype=np.float64)
        self.n, self.p = self.X.shape
        self.XXT = np.ascontiguousarray(self.X @ self.X.T)
        self.trXX = float(np.trace(self.XXT))
        self.sigma_a_sq = float(sigma_a_sq)
        self.sigma_x_sq = float(sigma_x_sq)
        z = _as_matrix(z_init) if z_init is not None else np.zeros((self.n, 0), np.uint8)
        if z.shape[0] != self.n:
            raise DataError("Z row count does not match X")
        self.Z = np.ascontiguousarray(z.astype(np.int8))
        self.colsum = self.Z.sum(axis=0, dtype=np.int64)
        self.scal = np.zeros(8, dtype=np.float64)
        self.rebuild()

    # -- scalar accessors -------------------------------------------------
    @property
    def k(self):
        return self.Z.shape[1]

    @property
    def c(self):
        return self.sigma_x_sq / self.sigma_a_sq

    @property
    def loglik(self):
        return float(self.scal[2])

    @property
    def accepted_since_rebuild(self):
        return int(self.scal[6])

    def _formula(self, k, logdet, trace, sa2, sx2):
        out = (
            -0.5 * self.n * self.p * LOG_2PI
            - 0.5 * self.p * ((self.n - k) * np.log(sx2) + k * np.log(sa2) + logdet)
            - (self.trXX - trace) / (2.0 * sx2)
        )
        if not np.isfinite(out):
            raise NumericalError("collapsed log-likelihood is not finite")
        return float(out)

    def _factor(self, g, c):
        k = g.shape[0]
        if k == 0:
            return np.zeros((0, 0)), 0.0
        chol = np.linalg.cholesky(g + c * np.eye(k))
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return chol, logdet

    def rebuild(self):
        """Recompute every cached quantity from (X, Z, params).

        Writes in place when shapes allow: the Gibbs kernel holds views of
        these arrays for a whole sweep, so mid-sweep rebuilds must not
        reallocate.
        """
        zf = self.Z.astype(np.float64)
        g = zf.T @ zf
        h = zf.T @ self.XXT
        s = h @ zf
        chol, logdet = self._factor(g, self.c)
        if getattr(self, "G", None) is not None and self.G.shape == g.shape:
            self.G[...] = g
            self.H[...] = h
            self.S[...] = s
            self.cholL[...] = chol
        else:
            self.G = np.ascontiguousarray(g)
            self.H = np.ascontiguousarray(h)
            self.S = np.ascontiguousarray(s)
            self.cholL = np.ascontiguousarray(chol)
        trace = self._trace_for(self.cholL, self.S)
        self.scal[0] = logdet
        self.scal[1] = trace
        self.scal[2] = self._formula(self.k, logdet, trace, self.sigma_a_sq, self.sigma_x_sq)
        self.scal[3] = self.c
        self.scal[4] = float(self.p)
        self.scal[5] = self.sigma_x_sq
        self.scal[6] = 0.0

    @staticmethod
    def _trace_for(chol, s):
        if s.shape[0] == 0:
            return 0.0
        return float(np.trace(cho_solve((chol, True), s)))

    def verify(self, rel_tol=1e-6):
        """Raise :class:`CacheError` if caches drifted from a fresh recompute."""
        zf = self.Z.astype(np.float64)
        g = zf.T @ zf
        h = zf.T @ self.XXT
        s = h @ zf
        ll = self._formula(
            self.k, self._factor(g, self.c)[1], self._trace_for(*self._factor_pair(g, s)),
            self.sigma_a_sq, self.sigma_x_sq,
        )
        for name, a, b in (("G", self.G, g), ("H", self.H, h), ("S", self.S, s)):
            if not np.allclose(a, b, rtol=rel_tol, atol=rel_tol):
                raise CacheError(f"{name} cache inconsistent")
        if not np.isclose(self.scal[2], ll, rtol=rel_tol, atol=rel_tol):
            raise CacheError(
                f"cached log-likelihood {self.scal[2]:.9g} != recomputed {ll:.9g}"
            )
        if not np.array_equal(self.colsum, self.Z.sum(axis=0, dtype=np.int64)):
            raise CacheError("column-sum cache inconsistent")

    def _factor_pair(self, g, s):
        chol, _ = self._factor(g, self.c)
        return chol, s

    # -- single-entry flips ------------------------------------------------
    def delta_flip(self, i, k):
        """Log-likelihood change from flipping Z[i, k]; no state change."""
        if not (0 <= i < self.n and 0 <= k < self.k):
            raise IndexError("entry out of range")
        from ._kernels import pure as _pure

        dll, _, _, _ = _pure._flip_candidate(
            i, k, self.Z, self.XXT, self.G, self.H, self.S, self.cholL,
            self.c, float(self.p), self.sigma_x_sq, self.scal[1],
        )
        return float(dll)

    # -- trans-dimensional edits -------------------------------------------
    def singleton_birth_delta(self, i):
        """Delta and pending state for appending a column active only at i."""
        k = self.k
        w = self.Z[i].astype(np.float64)
        m_new = np.empty((k + 1, k + 1))
        m_new[:k, :k] = self.G + self.c * np.eye(k)
        m_new[:k, k] = w
        m_new[k, :k] = w
        m_new[k, k] = 1.0 + self.c
        s_new = np.empty((k + 1, k + 1))
        s_new[:k, :k] = self.S
        s_new[:k, k] = self.H[:, i]
        s_new[k, :k] = self.H[:, i]
        s_new[k, k] = self.XXT[i, i]
        chol = np.linalg.cholesky(m_new)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        trace = self._trace_for(chol, s_new)
        ll = self._formula(k + 1, logdet, trace, self.sigma_a_sq, self.sigma_x_sq)
        pending = (i, chol, logdet, trace, ll, s_new)
        return ll - self.loglik, pending

    def commit_birth(self, pending):
        i, chol, logdet, trace, ll, s_new = pending
        k = self.k
        col = np.zeros((self.n, 1), dtype=np.int8)
        col[i, 0] = 1
        self.Z = np.ascontiguousarray(np.hstack([self.Z, col]))
        self.colsum = np.append(self.colsum, 1)
        g_new = np.empty((k + 1, k + 1))
        g_new[:k, :k] = self.G
        g_new[:k, k] = self.Z[i, :k].astype(np.float64)
        g_new[k, :k] = g_new[:k, k]
        g_new[k, k] = 1.0
        self.G = np.ascontiguousarray(g_new)
        self.H = np.ascontiguousarray(np.vstack([self.H, self.XXT[i][None, :]]))
        self.S = np.ascontiguousarray(s_new)
        self.cholL = np.ascontiguousarray(chol)
        self.scal[0] = logdet
        self.scal[1] = trace
        self.scal[2] = ll

    def drop_column_delta(self, j):
        """Delta and pending state for deleting column j."""
        keep = np.arange(self.k) != j
        g = self.G[np.ix_(keep, keep)]
        s = self.S[np.ix_(keep, keep)]
        chol, logdet = self._factor(g, self.c)
        trace = self._trace_for(chol, s)
        ll = self._formula(self.k - 1, logdet, trace, self.sigma_a_sq, self.sigma_x_sq)
        pending = (j, keep, g, s, chol, logdet, trace, ll)
        return ll - self.loglik, pending

    def commit_drop(self, pending):
        j, keep, g, s, chol, logdet, trace, ll = pending
        self.Z = np.ascontiguousarray(self.Z[:, keep])
        self.colsum = self.colsum[keep]
        self.G = np.ascontiguousarray(g)
        self.S = np.ascontiguousarray(s)
        self.H = np.ascontiguousarray(self.H[keep, :])
        self.cholL = np.ascontiguousarray(chol)
        self.scal[0] = logdet
        self.scal[1] = trace
        self.scal[2] = ll

    # -- variance moves ------------------------------------------------------
    def loglik_for_params(self, sigma_a_sq, sigma_x_sq):
        """Log-likelihood under candidate variances; Z-side caches unchanged."""
        c = sigma_x_sq / sigma_a_sq
        chol, logdet = self._factor(self.G, c)
        trace = self._trace_for(chol, self.S)
        ll = self._formula(self.k, logdet, trace, sigma_a_sq, sigma_x_sq)
        return ll, (sigma_a_sq, sigma_x_sq, c, chol, logdet, trace, ll)

    def commit_params(self, pending):
        sa2, sx2, c, chol, logdet, trace, ll = pending
        self.sigma_a_sq = sa2
        self.sigma_x_sq = sx2
        self.cholL = np.ascontiguousarray(chol) if chol.size else np.zeros((0, 0))
        self.scal[0] = logdet
        self.scal[1] = trace
        self.scal[2] = ll
        self.scal[3] = c
        self.scal[5] = sx2
