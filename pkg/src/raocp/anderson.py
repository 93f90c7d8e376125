"""Anderson-accelerated quasi-Newton directions from rolling buffers.

Keeps up to m-1 iterate differences and residual differences, maintains a
QR factorization of the residual-difference matrix incrementally (append a
column per push, Givens-downdate when the oldest drops out), and solves the
small least-squares problem for the mixing weights on demand.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ValidationError

_RANK_TOL = 1e-12
_ORTH_TOL = 1e-8


class AaBuffers:
    """Rolling difference buffers with an incrementally maintained QR."""

    def __init__(self, memory: int):
        if memory < 1:
            raise ValidationError("memory must be >= 1")
        if memory > 20:
            warnings.warn("Anderson memory beyond 20 rarely helps",
                          stacklevel=2)
        self.memory = int(memory)
        self._p_cols = []    # iterate differences, oldest first
        self._r_cols = []    # residual differences, oldest first
        self._px_cols = []   # optional shadow columns carried along (e.g.
        self._rx_cols = []   # operator images of the differences)
        self._Q = None       # (dim, k) with orthonormal columns
        self._R = None       # (k, k) upper triangular

    def __len__(self):
        return len(self._r_cols)

    def clear(self):
        self._p_cols.clear()
        self._r_cols.clear()
        self._px_cols.clear()
        self._rx_cols.clear()
        self._Q = None
        self._R = None

    # -- QR maintenance ------------------------------------------------------

    def _refactor(self):
        M = np.stack(self._r_cols, axis=1)
        self._Q, self._R = np.linalg.qr(M, mode="reduced")

    def _append_qr(self, col):
        if self._Q is None:
            nrm = np.linalg.norm(col)
            if nrm == 0.0:
                self._Q = np.zeros((col.size, 1))
                self._R = np.zeros((1, 1))
            else:
                self._Q = (col / nrm)[:, None]
                self._R = np.array([[nrm]])
            return
        Q, R = self._Q, self._R
        r1 = Q.T @ col
        w = col - Q @ r1
        # one re-orthogonalization pass keeps Q usable for many pushes
        r2 = Q.T @ w
        w -= Q @ r2
        r1 += r2
        rho = np.linalg.norm(w)
        if rho <= _RANK_TOL * max(1.0, np.linalg.norm(col)):
            # dependent column: re-factorize to keep shapes consistent
            self._refactor()
            return
        k = R.shape[0]
        Rn = np.zeros((k + 1, k + 1))
        Rn[:k, :k] = R
        Rn[:k, k] = r1
        Rn[k, k] = rho
        self._Q = np.column_stack([Q, w / rho])
        self._R = Rn

    def _drop_oldest_qr(self):
        Q, R = self._Q, self._R
        k = R.shape[0]
        if k == 1:
            self._Q, self._R = None, None
            return
        H = R[:, 1:].copy()     # upper Hessenberg after removing column 0
        Q = Q.copy()
        for j in range(H.shape[1]):
            a, b = H[j, j], H[j + 1, j]
            r = np.hypot(a, b)
            if r == 0.0:
                continue
            c, s = a / r, b / r
            G = np.array([[c, s], [-s, c]])
            H[j:j + 2, j:] = G @ H[j:j + 2, j:]
            Q[:, j:j + 2] = Q[:, j:j + 2] @ G.T
        self._Q = Q[:, :k - 1]
        self._R = H[:k - 1, :]
        gram = self._Q.T @ self._Q
        if np.abs(gram - np.eye(k - 1)).max() > _ORTH_TOL:
            self._refactor()

    # -- public operations -----------------------------------------------------

    def push(self, v_diff, c_diff, v_extra=None, c_extra=None):
        """Record one iterate difference and its residual difference.

        ``v_extra``/``c_extra`` are arbitrary vectors that transform linearly
        with the columns (operator images of the differences); ``direction``
        combines them with the same weights so callers get the image of d
        without extra operator calls.
        """
        v_diff = np.asarray(v_diff, dtype=np.float64)
        c_diff = np.asarray(c_diff, dtype=np.float64)
        if v_diff.shape != c_diff.shape:
            raise ValidationError("difference vectors must share a shape")
        if self.memory == 1:
            return
        self._p_cols.append(v_diff.copy())
        self._r_cols.append(c_diff.copy())
        self._px_cols.append(None if v_extra is None else np.array(v_extra))
        self._rx_cols.append(None if c_extra is None else np.array(c_extra))
        self._append_qr(c_diff)
        if len(self._r_cols) > self.memory - 1:
            self._p_cols.pop(0)
            self._r_cols.pop(0)
            self._px_cols.pop(0)
            self._rx_cols.pop(0)
            self._drop_oldest_qr()

    def gamma(self, c):
        """Least-squares weights for min || M_R gamma - c || (minimum norm)."""
        qc = self._Q.T @ c
        R = self._R
        diag = np.abs(np.diag(R))
        if diag.size and diag.min() > _RANK_TOL * max(1.0, diag.max()):
            from scipy.linalg import solve_triangular

            return solve_triangular(R, qc, lower=False, check_finite=False)
        g, *_ = np.linalg.lstsq(R, qc, rcond=_RANK_TOL)
        return g

    def debug_check(self):
        """Relative factorization error ||QR - M_R|| / ||M_R||."""
        if not self._r_cols:
            return 0.0
        M = np.stack(self._r_cols, axis=1)
        scale = max(1.0, np.abs(M).max())
        return float(np.abs(self._Q @ self._R - M).max() / scale)


def push(buffers: AaBuffers, v_diff, c_diff) -> AaBuffers:
    buffers.push(v_diff, c_diff)
    return buffers


def direction(buffers: AaBuffers, c) -> np.ndarray:
    """Update direction d = -c - (M_P - M_R) gamma; -c with empty buffers."""
    c = np.asarray(c, dtype=np.float64)
    if len(buffers) == 0:
        return -c
    g = buffers.gamma(c)
    MP = np.stack(buffers._p_cols, axis=1)
    MR = np.stack(buffers._r_cols, axis=1)
    return -c - (MP - MR) @ g


def direction_with_extra(buffers: AaBuffers, c, c_extra):
    """Direction plus the same linear combination of the shadow columns."""
    c = np.asarray(c, dtype=np.float64)
    c_extra = np.asarray(c_extra, dtype=np.float64)
    if len(buffers) == 0:
        return -c, -c_extra
    g = buffers.gamma(c)
    MP = np.stack(buffers._p_cols, axis=1)
    MR = np.stack(buffers._r_cols, axis=1)
    MPx = np.stack(buffers._px_cols, axis=1)
    MRx = np.stack(buffers._rx_cols, axis=1)
    return -c - (MP - MR) @ g, -c_extra - (MPx - MRx) @ g
