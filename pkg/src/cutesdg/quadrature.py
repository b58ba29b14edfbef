"""Quadrature: reference rules, composite cut-element rules, Caratheodory pruning."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import roots_jacobi

from .basis import LegendreBasis, dim_total

log = logging.getLogger(__name__)


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise QuadratureError("quadrature weights must be non-negative")

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class FaceRule:
    params: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray


MAX_TRIANGLE_DEGREE = 120


@lru_cache(maxsize=None)
def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _triangle_rule(degree):
    n = max(1, (degree + 2) // 2)
    xi, wxi = _gauss01(n)
    # Gauss-Jacobi for the collapsed direction, weight (1 - eta)
    a, wa = roots_jacobi(n, 1.0, 0.0)
    eta = 0.5 * (a + 1.0)
    weta = 0.25 * wa
    X, E = np.meshgrid(xi, eta, indexing="ij")
    WX, WE = np.meshgrid(wxi, weta, indexing="ij")
    pts = np.stack([(X * (1.0 - E)).ravel(), E.ravel()], axis=1)
    return pts, (WX * WE).ravel()


def reference_rule(region: str, degree: int) -> QuadratureRule:
    """Positive-weight rule exact to ``degree``.

    Regions: ``"interval"`` is ``[-1, 1]``, ``"square"`` is ``[-1, 1]^2``
    (tensor Gauss, per-axis degree), ``"triangle"`` is the unit right
    triangle with vertices ``(0, 0), (1, 0), (0, 1)`` (collapsed Gauss-Jacobi,
    total degree).
    """
    if degree < 0:
        raise QuadratureError("degree must be >= 0")
    n = degree // 2 + 1
    if region == "interval":
        x, w = np.polynomial.legendre.leggauss(n)
        return QuadratureRule(x[:, None], w, 2 * n - 1)
    if region == "square":
        x, w = np.polynomial.legendre.leggauss(n)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return QuadratureRule(np.stack([X.ravel(), Y.ravel()], axis=1),
                              np.outer(w, w).ravel(), 2 * n - 1)
    if region == "triangle":
        if degree > MAX_TRIANGLE_DEGREE:
            raise QuadratureError(f"triangle rules supported up to degree {MAX_TRIANGLE_DEGREE}")
        pts, w = _triangle_rule(degree)
        return QuadratureRule(pts.copy(), w.copy(), 2 * n - 1)
    raise QuadratureError(f"unknown region {region!r}")


def composite_degree(M: int, map_degree: int) -> int:
    """Reference-triangle degree needed to integrate ``P^M`` through a degree-``map_degree`` map."""
    return M * map_degree + 2 * (map_degree - 1)


def composite_volume_rule(element, M: int) -> QuadratureRule:
    """Union of mapped reference triangle rules over the element's subtriangles."""
    pts, wts = [], []
    for tri in element.triangles:
        ref = reference_rule("triangle", composite_degree(M, tri.degree))
        det = tri.det(ref.points)
        if np.any(det <= 0):
            raise QuadratureError(f"negative Jacobian at a quadrature point of element {element.id}")
        pts.append(tri(ref.points))
        wts.append(ref.weights * det)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), M)


def face_rule(face, n_pts: int, triangle=None, side=None) -> FaceRule:
    """Gauss rule on a face in its left element's orientation.

    Straight faces are parameterized linearly between their endpoints. Curved
    faces use side ``side`` of ``triangle`` (the subtriangle owning the face)
    when given, otherwise the exact curve segment.
    """
    t, gw = _gauss01(n_pts)
    if triangle is not None:
        pts = triangle.edge(side, t)
        tan = triangle.edge_tangent(side, t)
    elif getattr(face, "segment", None) is not None and face.kind == "cut-curved":
        seg = face.segment
        pts = seg.points(1.0 - t)
        tan = -seg.tangents(1.0 - t)
    else:
        a, b = np.asarray(face.start, float), np.asarray(face.end, float)
        pts = np.outer(1.0 - t, a) + np.outer(t, b)
        tan = np.broadcast_to(b - a, pts.shape).copy()
    speed = np.linalg.norm(tan, axis=1)
    if np.any(speed <= 1e-14 * max(speed.max(), 1e-300)):
        raise QuadratureError("zero tangent (cusp) at a face quadrature point")
    normals = np.stack([tan[:, 1], -tan[:, 0]], axis=1) / speed[:, None]
    return FaceRule(t, pts, gw * speed, normals)


# --- moments and pruning -----------------------------------------------------

@dataclass
class MomentSystem:
    """``Phi w = b`` for an orthonormalized ``P^M`` basis on the rule's points."""

    phi: np.ndarray
    b: np.ndarray
    basis: object

    @classmethod
    def from_rule(cls, rule: QuadratureRule, M: int, lo=None, hi=None):
        lo = rule.points.min(axis=0) if lo is None else lo
        hi = rule.points.max(axis=0) if hi is None else hi
        leg = LegendreBasis(M, lo, hi)
        basis = leg.orthonormalized(rule.points, rule.weights)
        phi = basis(rule.points).T
        return cls(phi, phi @ rule.weights, basis)

    def residual(self, weights, points=None):
        phi = self.phi if points is None else self.basis(points).T
        return phi @ weights - self.b


def exactness_error(rule: QuadratureRule, M: int, exact_moments=None, basis=None) -> float:
    """``max_i |Phi_i w - b_i| / (1 + |b_i|)`` over the basis of ``P^M``.

    ``exact_moments`` is either a reference :class:`QuadratureRule` (moments
    taken from it, with the basis orthonormalized on it) or a pair
    ``(basis, b)``.
    """
    if isinstance(exact_moments, QuadratureRule):
        ms = MomentSystem.from_rule(exact_moments, M)
        basis, b = ms.basis, ms.b
    elif exact_moments is not None:
        basis, b = exact_moments
    else:
        raise QuadratureError("exact moments required")
    phi = basis(rule.points).T
    return float(np.max(np.abs(phi @ rule.weights - b) / (1.0 + np.abs(b))))


def _null_vector(A):
    """Null vector of a wide matrix via full QR of its transpose."""
    q, r = np.linalg.qr(A.T, mode="complete")
    return q[:, -1]


def prune_step(w, dw, floor):
    """One Caratheodory update ``w - alpha dw`` at an extreme feasible ``alpha``.

    Returns ``(alpha, new weights)``; zeroed entries are set to exactly 0.
    """
    pos, neg = dw > 0, dw < 0
    # the negative step is listed first so it wins ties
    cands = []
    if np.any(neg):
        cands.append(np.max(w[neg] / dw[neg]))
    if np.any(pos):
        cands.append(np.min(w[pos] / dw[pos]))
    if not cands:
        raise QuadratureError("zero null vector")
    best = None
    for a in cands:
        nw = w - a * dw
        nw[nw <= floor] = 0.0
        nz = int(np.sum(nw == 0.0))
        key = (-nz, abs(a))
        if best is None or key < best[0]:
            best = (key, a, nw)
    return best[1], best[2]


def caratheodory_prune(rule: QuadratureRule, M: int, element=None, N: Optional[int] = None,
                       tol: float = 1e-12, moments: Optional[MomentSystem] = None) -> QuadratureRule:
    """Prune ``rule`` to at most ``dim(P^M) + 1`` points exact for ``P^M``.

    Each iteration takes a null vector of the moment matrix restricted to
    ``dim(P^M) + 1`` active points, steps the weights to an extreme
    non-negative point along it, and drops zeroed points. When ``N`` is given
    the points with positive weight must remain unisolvent for ``P^N``; if
    not, pruning is redone keeping one more point.
    """
    mstar = dim_total(M)
    if len(rule) <= mstar + 1:
        return rule
    ms = moments or MomentSystem.from_rule(rule, M)
    bnorm = np.max(np.abs(ms.b))
    extra = 0
    while True:
        keep = _prune(ms, rule.weights, mstar + 1 + extra, tol * bnorm)
        pts, wts = rule.points[keep[0]], keep[1]
        if N is None or _unisolvent(pts, N):
            break
        extra += 1
        log.info("pruned points not unisolvent for P^%d, keeping %d extra", N, extra)
        if mstar + 1 + extra >= len(rule):
            pts, wts = rule.points, rule.weights
            break
    res = np.max(np.abs(ms.basis(pts).T @ wts - ms.b))
    if res > tol * max(bnorm, 1.0):
        raise QuadratureError(f"pruned rule lost exactness (residual {res:.3e})"
                              + (f" on element {element.id}" if element is not None else ""))
    return QuadratureRule(pts, wts, M)


def _prune(ms, w0, target, tol):
    phi = ms.phi
    w = w0.astype(float).copy()
    active = np.flatnonzero(w > 0)
    floor = 1e-14 * w.sum()
    mstar = phi.shape[0]
    while len(active) > target:
        sub = active[: mstar + 1]
        dw = _null_vector(phi[:, sub])
        if not np.all(np.isfinite(dw)) or np.max(np.abs(dw)) == 0:
            raise QuadratureError("empty null space while pruning")
        _, nw = prune_step(w[sub], dw, floor)
        w[sub] = nw
        before = len(active)
        active = active[w[active] > 0]
        if len(active) >= before:
            raise QuadratureError("pruning made no progress")
    # remove drift on the surviving support
    A = phi[:, active]
    corr = np.linalg.lstsq(A, ms.b - A @ w[active], rcond=None)[0]
    if np.all(w[active] + corr >= 0):
        w[active] = w[active] + corr
    return active, w[active]


def _unisolvent(points, N):
    lo, hi = points.min(axis=0), points.max(axis=0)
    V = LegendreBasis(N, lo, hi)(points)
    if V.shape[0] < V.shape[1]:
        return False
    s = np.linalg.svd(V, compute_uv=False)
    return s[-1] > 1e-10 * s[0]


def cut_element_rule(element, N: int, return_composite=False):
    """Pruned degree ``2N - 1`` rule for a cut element."""
    M = 2 * N - 1
    comp = composite_volume_rule(element, M)
    pruned = caratheodory_prune(comp, M, element, N=N)
    if return_composite:
        return pruned, comp
    return pruned


def cartesian_rule(x0, x1, y0, y1, N: int) -> QuadratureRule:
    """``(N + 1)^2`` tensor Gauss rule on a cell, exact to degree ``2N + 1`` per axis."""
    ref = reference_rule("square", 2 * N + 1)
    hx, hy = x1 - x0, y1 - y0
    pts = np.stack([x0 + 0.5 * hx * (ref.points[:, 0] + 1.0),
                    y0 + 0.5 * hy * (ref.points[:, 1] + 1.0)], axis=1)
    return QuadratureRule(pts, ref.weights * 0.25 * hx * hy, 2 * N + 1)
