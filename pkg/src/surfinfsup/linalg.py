"""Sparse-plus-low-rank symmetric matrices and related helpers."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu


class LowRankUpdated:
    """Symmetric matrix ``base + U D U^T`` with sparse ``base`` and small ``k``."""

    def __init__(self, base, U=None, D=None):
        self.base = sp.csr_matrix(base)
        n = self.base.shape[0]
        self.U = np.zeros((n, 0)) if U is None else np.asarray(U, dtype=float).reshape(n, -1)
        k = self.U.shape[1]
        D = np.zeros((0, 0)) if D is None else np.asarray(D, dtype=float).reshape(k, k)
        if k:
            # diagonalise D and drop null directions so D stays invertible
            lam, Q = la.eigh(0.5 * (D + D.T))
            keep = np.abs(lam) > 1e-14 * max(1.0, np.abs(lam).max())
            self.U = self.U @ Q[:, keep]
            D = np.diag(lam[keep])
        self.D = D
        self._lu = None

    @property
    def shape(self):
        return self.base.shape

    def dot(self, x):
        x = np.asarray(x, dtype=float)
        return self.base @ x + self.U @ (self.D @ (self.U.T @ x))

    __matmul__ = dot

    def toarray(self) -> np.ndarray:
        return self.base.toarray() + self.U @ self.D @ self.U.T

    def quad(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.dot(x))

    def congruence(self, T) -> "LowRankUpdated":
        """``T^T A T`` for sparse ``T``."""
        T = sp.csr_matrix(T)
        return LowRankUpdated(T.T @ self.base @ T, T.T @ self.U, self.D)

    def scaled(self, s: float) -> "LowRankUpdated":
        return LowRankUpdated(s * self.base, self.U, s * self.D)

    def solve(self, b):
        """Woodbury solve; requires ``base`` and the capacitance matrix nonsingular."""
        if self._lu is None:
            lu = splu(sp.csc_matrix(self.base))
            k = self.U.shape[1]
            if k:
                BU = lu.solve(self.U)
                cap = np.diag(1.0 / np.diag(self.D)) + self.U.T @ BU
                self._lu = (lu, BU, la.lu_factor(cap))
            else:
                self._lu = (lu, None, None)
        lu, BU, cap = self._lu
        y = lu.solve(np.asarray(b, dtype=float))
        if BU is None:
            return y
        return y - BU @ la.lu_solve(cap, self.U.T @ y)

    def as_operator(self) -> LinearOperator:
        n = self.shape[0]
        return LinearOperator((n, n), matvec=self.dot, dtype=float)


def orthonormal_complement(m: np.ndarray) -> np.ndarray:
    """Columns spanning ``{x : m . x = 0}``, orthonormal in the Euclidean sense."""
    m = np.asarray(m, dtype=float)
    Q, _ = la.qr(m.reshape(-1, 1), mode="full")
    return Q[:, 1:]


def m_angle(x, y, N) -> float:
    """Angle in degrees between span{x} and span{y} in the inner product of N."""
    nx = np.sqrt(max(float(x @ (N @ x)), 0.0))
    ny = np.sqrt(max(float(y @ (N @ y)), 0.0))
    if nx == 0 or ny == 0:
        return 90.0
    c = abs(float(x @ (N @ y))) / (nx * ny)
    return float(np.degrees(np.arccos(min(c, 1.0))))
