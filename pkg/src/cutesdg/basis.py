"""Polynomial bases: Legendre products, orthonormalized modal bases, nodal bases."""

from __future__ import annotations

import numpy as np


def dim_total(N: int) -> int:
    """Dimension of total-degree ``P^N`` in 2D."""
    return (N + 1) * (N + 2) // 2


def total_degree_exponents(N: int) -> np.ndarray:
    return np.array([(i - j, j) for i in range(N + 1) for j in range(i + 1)], dtype=int)


def _legendre_table(x, n):
    """Values and derivatives of ``P_0..P_n`` at ``x``: arrays ``(len(x), n + 1)``."""
    x = np.asarray(x, dtype=float)
    P = np.zeros((len(x), n + 1))
    dP = np.zeros((len(x), n + 1))
    P[:, 0] = 1.0
    if n >= 1:
        P[:, 1] = x
        dP[:, 1] = 1.0
    for k in range(1, n):
        P[:, k + 1] = ((2 * k + 1) * x * P[:, k] - k * P[:, k - 1]) / (k + 1)
        dP[:, k + 1] = dP[:, k - 1] + (2 * k + 1) * P[:, k]
    return P, dP


class LegendreBasis:
    """Total-degree products ``P_a(X) P_b(Y)`` in box coordinates.

    ``X, Y`` map the box ``[lo, hi]`` onto ``[-1, 1]^2``.
    """

    def __init__(self, N, lo, hi):
        self.N = int(N)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        half = 0.5 * (self.hi - self.lo)
        half[half <= 0] = 1.0
        self.half = half
        self.center = 0.5 * (self.hi + self.lo)
        self.exps = total_degree_exponents(self.N)

    @property
    def dim(self):
        return len(self.exps)

    def _local(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.center) / self.half

    def __call__(self, pts):
        xy = self._local(pts)
        Px, _ = _legendre_table(xy[:, 0], self.N)
        Py, _ = _legendre_table(xy[:, 1], self.N)
        return Px[:, self.exps[:, 0]] * Py[:, self.exps[:, 1]]

    def grad(self, pts):
        xy = self._local(pts)
        Px, dPx = _legendre_table(xy[:, 0], self.N)
        Py, dPy = _legendre_table(xy[:, 1], self.N)
        gx = dPx[:, self.exps[:, 0]] * Py[:, self.exps[:, 1]] / self.half[0]
        gy = Px[:, self.exps[:, 0]] * dPy[:, self.exps[:, 1]] / self.half[1]
        return np.stack([gx, gy], axis=-1)

    def orthonormalized(self, points, weights):
        return ModalBasis(self, points, weights)


class ModalBasis:
    """Legendre products orthonormalized against a positive-weight rule."""

    def __init__(self, raw: LegendreBasis, points, weights):
        self.raw = raw
        A = np.sqrt(weights)[:, None] * raw(points)
        _, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.min() <= 1e-13 * d.max():
            raise np.linalg.LinAlgError("rule cannot orthonormalize the basis (rank deficient)")
        self.Rinv = np.linalg.solve(R, np.eye(R.shape[0]))

    @property
    def N(self):
        return self.raw.N

    @property
    def dim(self):
        return self.raw.dim

    def __call__(self, pts):
        return self.raw(pts) @ self.Rinv

    def grad(self, pts):
        g = self.raw.grad(pts)
        return np.einsum("nkd,kj->njd", g, self.Rinv)


class NodalBasis:
    """Lagrange basis on ``nodes`` built on a modal backbone."""

    def __init__(self, modal, nodes):
        self.modal = modal
        self.nodes = np.asarray(nodes, dtype=float)
        V = modal(self.nodes)
        self.cond = float(np.linalg.cond(V))
        self.T = np.linalg.solve(V, np.eye(V.shape[0]))

    @property
    def dim(self):
        return self.T.shape[0]

    @property
    def N(self):
        return self.modal.N

    def __call__(self, pts):
        return self.modal(pts) @ self.T

    def grad(self, pts):
        return np.einsum("nkd,kj->njd", self.modal.grad(pts), self.T)

    def coefficients(self, fn):
        """Nodal coefficients (values at the nodes) of ``fn``."""
        return np.asarray(fn(self.nodes))


def lagrange_1d(nodes, x):
    """Values and derivatives of the 1D Lagrange polynomials on ``nodes`` at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    val = np.ones((len(x), n))
    der = np.zeros((len(x), n))
    for i in range(n):
        for m in range(n):
            if m == i:
                continue
            den = nodes[i] - nodes[m]
            term = (x - nodes[m]) / den
            # derivative of the running product
            der[:, i] = der[:, i] * term + val[:, i] / den
            val[:, i] = val[:, i] * term
    return val, der


class TensorLagrangeBasis:
    """``Q^N`` Lagrange basis at tensor Gauss-Legendre nodes on a cell.

    Node ``(a, b)`` has flat index ``a * (N + 1) + b`` with ``a`` along x.
    """

    def __init__(self, N, x0, x1, y0, y1):
        self.N = int(N)
        self.box = (float(x0), float(x1), float(y0), float(y1))
        self.r1d, _ = np.polynomial.legendre.leggauss(self.N + 1)
        X, Y = np.meshgrid(self._to_x(self.r1d), self._to_y(self.r1d), indexing="ij")
        self.nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    def _to_x(self, r):
        x0, x1 = self.box[:2]
        return x0 + 0.5 * (x1 - x0) * (r + 1.0)

    def _to_y(self, r):
        y0, y1 = self.box[2:]
        return y0 + 0.5 * (y1 - y0) * (r + 1.0)

    @property
    def dim(self):
        return (self.N + 1) ** 2

    def _ref(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, x1, y0, y1 = self.box
        return (2.0 * (pts[:, 0] - x0) / (x1 - x0) - 1.0,
                2.0 * (pts[:, 1] - y0) / (y1 - y0) - 1.0)

    def __call__(self, pts):
        r, s = self._ref(pts)
        lx, _ = lagrange_1d(self.r1d, r)
        ly, _ = lagrange_1d(self.r1d, s)
        return (lx[:, :, None] * ly[:, None, :]).reshape(len(r), -1)

    def grad(self, pts):
        r, s = self._ref(pts)
        lx, dlx = lagrange_1d(self.r1d, r)
        ly, dly = lagrange_1d(self.r1d, s)
        x0, x1, y0, y1 = self.box
        gx = (dlx[:, :, None] * ly[:, None, :]).reshape(len(r), -1) * 2.0 / (x1 - x0)
        gy = (lx[:, :, None] * dly[:, None, :]).reshape(len(r), -1) * 2.0 / (y1 - y0)
        return np.stack([gx, gy], axis=-1)

    def coefficients(self, fn):
        return np.asarray(fn(self.nodes))
