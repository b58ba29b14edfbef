"""Cartesian cut meshes.

A uniform background grid is cut by the embedded curves. Cells untouched by
any curve are Cartesian elements (or are removed when they lie inside an
embedded region). Each connected fluid piece of a cell crossed by a curve
becomes a cut element whose boundary is a closed loop of straight grid-edge
pieces and curved pieces between stop points. Cut elements are split into
curved triangles with total degree ``N`` maps from the reference triangle
``{(r, s): r, s >= 0, r + s <= 1}``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from . import geometry as geo
from .geometry import GeometryError

log = logging.getLogger(__name__)


class MeshError(GeometryError):
    """Mesh construction failure."""


CARTESIAN, CUT = "cartesian", "cut"
FACE_CARTESIAN, FACE_STRAIGHT, FACE_CURVED = "cartesian", "cut-straight", "cut-curved"
SIDES = ("bottom", "right", "top", "left")


@dataclass(frozen=True)
class BackgroundGrid:
    domain: tuple[float, float, float, float]
    nx: int
    ny: int

    def __post_init__(self):
        x0, x1, y0, y1 = self.domain
        if self.nx < 1 or self.ny < 1:
            raise MeshError("n_x and n_y must be >= 1")
        if not (x1 > x0 and y1 > y0):
            raise MeshError("domain must satisfy x1 > x0 and y1 > y0")

    @property
    def hx(self):
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def hy(self):
        return (self.domain[3] - self.domain[2]) / self.ny

    @property
    def xlines(self):
        return np.linspace(self.domain[0], self.domain[1], self.nx + 1)

    @property
    def ylines(self):
        return np.linspace(self.domain[2], self.domain[3], self.ny + 1)

    @property
    def scale(self):
        x0, x1, y0, y1 = self.domain
        return max(x1 - x0, y1 - y0)

    @property
    def cell_area(self):
        return self.hx * self.hy

    def node(self, i, j):
        return np.array([self.xlines[i], self.ylines[j]])

    def cell_of(self, p):
        i = int(np.clip(np.floor((p[0] - self.domain[0]) / self.hx), 0, self.nx - 1))
        j = int(np.clip(np.floor((p[1] - self.domain[2]) / self.hy), 0, self.ny - 1))
        return i, j


# --- curved triangle maps ----------------------------------------------------

def lobatto_points01(n):
    """``n`` Gauss-Lobatto points on ``[0, 1]`` (``n >= 2``)."""
    if n == 2:
        return np.array([0.0, 1.0])
    from numpy.polynomial import legendre as L
    c = np.zeros(n)
    c[-1] = 1.0
    inner = np.sort(L.legroots(L.legder(c)))
    return 0.5 * (np.concatenate([[-1.0], inner, [1.0]]) + 1.0)


_EDGE_VERTS = ((1, 2), (2, 0), (0, 1))
_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d lambda_k / d(r, s)


class TriangleMap:
    """Degree-``N`` map from the reference triangle with optional curved sides.

    ``g = affine + sum_k lam_a lam_b q_k((1 + lam_b - lam_a) / 2)`` where edge
    ``k`` (opposite vertex ``k``) runs from vertex ``a`` to vertex ``b`` and
    ``q_k`` has degree ``N - 2``; the correction vanishes on the other sides,
    so straight sides stay affine.
    """

    def __init__(self, vertices, N, corrections=None):
        self.vertices = np.asarray(vertices, dtype=float).reshape(3, 2)
        self.N = int(N)
        self.corrections = dict(corrections or {})

    @property
    def curved_edges(self):
        return tuple(sorted(self.corrections))

    @property
    def is_affine(self):
        return not self.corrections

    @property
    def degree(self):
        return self.N if self.corrections else 1

    @staticmethod
    def _lam(rs):
        rs = np.atleast_2d(rs)
        return np.stack([1.0 - rs[:, 0] - rs[:, 1], rs[:, 0], rs[:, 1]], axis=1)

    def __call__(self, rs):
        lam = self._lam(rs)
        x = lam @ self.vertices
        for k, (qx, qy) in self.corrections.items():
            a, b = _EDGE_VERTS[k]
            sig = 0.5 * (1.0 + lam[:, b] - lam[:, a])
            f = lam[:, a] * lam[:, b]
            x = x + np.stack([f * qx(sig), f * qy(sig)], axis=1)
        return x

    def jacobian(self, rs):
        """Array ``(n, 2, 2)`` with ``J[:, i, j] = d x_i / d rs_j``."""
        lam = self._lam(rs)
        J = np.broadcast_to((_DLAM.T @ self.vertices).T, (lam.shape[0], 2, 2)).copy()
        for k, (qx, qy) in self.corrections.items():
            a, b = _EDGE_VERTS[k]
            sig = 0.5 * (1.0 + lam[:, b] - lam[:, a])
            f = lam[:, a] * lam[:, b]
            dqx, dqy = qx.deriv(), qy.deriv()
            for j in range(2):
                df = _DLAM[a, j] * lam[:, b] + lam[:, a] * _DLAM[b, j]
                dsig = 0.5 * (_DLAM[b, j] - _DLAM[a, j])
                J[:, 0, j] += df * qx(sig) + f * dqx(sig) * dsig
                J[:, 1, j] += df * qy(sig) + f * dqy(sig) * dsig
        return J

    def det(self, rs):
        J = self.jacobian(rs)
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    def edge(self, k, t):
        """Points of side ``k`` at local coordinate ``t`` (from vertex a to b)."""
        a, b = _EDGE_VERTS[k]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.outer(1.0 - t, self.vertices[a]) + np.outer(t, self.vertices[b])
        if k in self.corrections:
            qx, qy = self.corrections[k]
            f = t * (1.0 - t)
            x = x + np.stack([f * qx(t), f * qy(t)], axis=1)
        return x

    def edge_tangent(self, k, t):
        a, b = _EDGE_VERTS[k]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d = np.broadcast_to(self.vertices[b] - self.vertices[a], (len(t), 2)).copy()
        if k in self.corrections:
            qx, qy = self.corrections[k]
            f, df = t * (1.0 - t), 1.0 - 2.0 * t
            d[:, 0] += df * qx(t) + f * qx.deriv()(t)
            d[:, 1] += df * qy(t) + f * qy.deriv()(t)
        return d

    def area(self):
        from .quadrature import reference_rule
        rule = reference_rule("triangle", max(2 * (self.degree - 1), 0))
        return float(rule.weights @ self.det(rule.points))

    def check(self, element_id=None, degree=None):
        """Raise when ``det(dg/dx)`` is not positive on a dense reference sample."""
        from .quadrature import reference_rule
        deg = degree if degree is not None else max(2 * self.N, 4)
        pts = [reference_rule("triangle", deg).points]
        t = lobatto_points01(max(self.N + 2, 3))
        for k in range(3):
            a, b = _EDGE_VERTS[k]
            ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            pts.append(np.outer(1 - t, ref[a]) + np.outer(t, ref[b]))
        dets = self.det(np.vstack(pts))
        if not np.all(dets > 0):
            raise MeshError("negative Jacobian in subtriangle map"
                            + (f" of element {element_id}" if element_id is not None else "")
                            + f" (min det {dets.min():.3e})")
        return dets.min()


def build_triangle_map(vertices, N, curved_sides=None, element_id=None, check=True):
    """Build a :class:`TriangleMap`.

    ``curved_sides`` maps a side index ``k`` to a callable ``t -> points``
    giving the true boundary along that side, oriented from vertex ``a`` to
    vertex ``b`` of the side. It is sampled at ``N + 1`` Gauss-Lobatto
    parameters; the resulting map interpolates it there.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(3, 2)
    e1, e2 = vertices[1] - vertices[0], vertices[2] - vertices[0]
    area2 = e1[0] * e2[1] - e1[1] * e2[0]
    scale = max(np.ptp(vertices[:, 0]), np.ptp(vertices[:, 1]), 1e-300)
    if abs(area2) <= 1e-14 * scale ** 2:
        raise MeshError("degenerate (collinear) triangle vertices"
                        + (f" in element {element_id}" if element_id is not None else ""))
    corrections = {}
    if curved_sides and N >= 2:
        t = lobatto_points01(N + 1)
        ti = t[1:-1]
        for k, fn in curved_sides.items():
            a, b = _EDGE_VERTS[k]
            samples = np.asarray(fn(t), dtype=float).reshape(-1, 2)
            chord = np.outer(1 - t, vertices[a]) + np.outer(t, vertices[b])
            delta = (samples - chord)[1:-1] / (ti * (1 - ti))[:, None]
            if N == 2:
                qx = Polynomial([delta[0, 0]])
                qy = Polynomial([delta[0, 1]])
            else:
                qx = Polynomial.fit(ti, delta[:, 0], N - 2, domain=[0, 1], window=[0, 1])
                qy = Polynomial.fit(ti, delta[:, 1], N - 2, domain=[0, 1], window=[0, 1])
                qx = Polynomial(qx.coef)
                qy = Polynomial(qy.coef)
            # straight sides given as curves give round-off corrections only
            if np.max(np.abs(samples - chord)) > 1e-13 * scale:
                corrections[k] = (qx, qy)
    tri = TriangleMap(vertices, N, corrections)
    if area2 < 0 and not corrections:
        raise MeshError("inverted triangle" + (f" in element {element_id}" if element_id is not None else ""))
    if check:
        tri.check(element_id)
    return tri


# --- mesh data ---------------------------------------------------------------

@dataclass
class Face:
    """A face with its geometry in the orientation of its left element."""

    id: int
    kind: str
    start: np.ndarray
    end: np.ndarray
    left: int
    right: Optional[int] = None
    tag: Optional[str] = None
    key: object = None
    segment: Optional[geo.CurveSegment] = None
    # (triangle index in left element, side) for each sub-arc of a curved face, in order
    owner_triangle: Optional[list] = None
    # quadrature, oriented with the left element
    points: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    @property
    def is_boundary(self):
        return self.right is None

    @property
    def n_points(self):
        return 0 if self.points is None else len(self.points)


@dataclass
class Element:
    id: int
    kind: str
    cell: tuple[int, int]
    faces: list[int]
    flipped: list[bool]
    vertices: np.ndarray
    triangles: list[TriangleMap] = field(default_factory=list)
    volume: float = 0.0

    @property
    def is_cut(self):
        return self.kind == CUT

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class CutMesh:
    grid: BackgroundGrid
    curves: list[geo.ParametricCurve]
    N: int
    elements: list[Element]
    faces: list[Face]
    cell_kind: np.ndarray  # (nx, ny) of "cartesian" / "cut" / "removed"
    intersections: list[list[geo.IntersectionRecord]]

    @property
    def cartesian_elements(self):
        return [e for e in self.elements if e.kind == CARTESIAN]

    @property
    def cut_elements(self):
        return [e for e in self.elements if e.kind == CUT]

    def total_volume(self):
        return float(sum(e.volume for e in self.elements))

    def element_face_points(self, k):
        """Face quadrature of element ``k`` in its loop order: points, weights, normals."""
        pts, wts, nrm = [], [], []
        el = self.elements[k]
        for fid, flip in zip(el.faces, el.flipped):
            f = self.faces[fid]
            if flip:
                pts.append(f.points[::-1])
                wts.append(f.weights[::-1])
                nrm.append(-f.normals[::-1])
            else:
                pts.append(f.points)
                wts.append(f.weights)
                nrm.append(f.normals)
        return np.vstack(pts), np.concatenate(wts), np.vstack(nrm)

    def boundary_tags(self):
        return sorted({f.tag for f in self.faces if f.is_boundary})


# --- construction ------------------------------------------------------------

def _perimeter_coord(grid, cell, p, where):
    """CCW perimeter coordinate of boundary point ``p`` of ``cell``."""
    i, j = cell
    hx, hy = grid.hx, grid.hy
    xa, ya = grid.xlines[i], grid.ylines[j]
    xb, yb = grid.xlines[i + 1], grid.ylines[j + 1]
    if where == "bottom":
        return p[0] - xa
    if where == "right":
        return hx + (p[1] - ya)
    if where == "top":
        return hx + hy + (xb - p[0])
    return 2 * hx + hy + (yb - p[1])


def _record_side(rec, cell):
    i, j = cell
    if rec.axis == "x":
        if rec.index == i:
            return "left"
        if rec.index == i + 1:
            return "right"
    else:
        if rec.index == j:
            return "bottom"
        if rec.index == j + 1:
            return "top"
    raise MeshError(f"intersection {rec} does not lie on cell {cell}")


def _corner_keys(cell):
    i, j = cell
    # perimeter order: bottom-left, bottom-right, top-right, top-left
    return [("n", i, j), ("n", i + 1, j), ("n", i + 1, j + 1), ("n", i, j + 1)]


@dataclass
class _Piece:
    kind: str  # "line" or "curve"
    a_key: object
    b_key: object
    a: np.ndarray
    b: np.ndarray
    segment: Optional[geo.CurveSegment] = None
    # sub-range of a curve piece in element orientation, and the loop index it came from
    t0: float = 0.0
    t1: float = 1.0
    parent: int = -1


def _cell_loops(grid, cell, paths):
    """Trace the closed fluid loops of a cut cell.

    ``paths`` are curve pieces through the cell in increasing ``s``; each is a
    list of segments entering and leaving the cell at grid intersections.
    """
    perim = 2 * (grid.hx + grid.hy)
    corner_tau = [0.0, grid.hx, grid.hx + grid.hy, 2 * grid.hx + grid.hy]
    ckeys = _corner_keys(cell)
    corner_pts = [grid.node(*k[1:]) for k in ckeys]
    rev = []
    for path in paths:
        first, last = path[0], path[-1]
        r_in, r_out = first.start_ref, last.end_ref
        # reversed traversal keeps the fluid on the left
        start = dict(rec=r_out, key=("i", r_out.curve_index, r_out.s), pt=np.array(r_out.point),
                     tau=_perimeter_coord(grid, cell, r_out.point, _record_side(r_out, cell)))
        end = dict(rec=r_in, key=("i", r_in.curve_index, r_in.s), pt=np.array(r_in.point),
                   tau=_perimeter_coord(grid, cell, r_in.point, _record_side(r_in, cell)))
        rev.append((start, end, path))
    unused = set(range(len(rev)))
    loops = []
    while unused:
        first = min(unused)
        cur = first
        pieces = []
        guard = 0
        while True:
            guard += 1
            if guard > 4 * len(rev) + 8:
                raise MeshError(f"could not close fluid loop in cell {cell}")
            unused.discard(cur)
            start, end, path = rev[cur]
            for seg in reversed(path):
                a = seg.points(1.0)[0]
                b = seg.points(0.0)[0]
                a_key = ("i", seg.end_ref.curve_index, seg.end_ref.s) if seg.end_ref is not None \
                    else ("c", id(seg.curve), round(seg.s1 % 1.0, 13))
                b_key = ("i", seg.start_ref.curve_index, seg.start_ref.s) if seg.start_ref is not None \
                    else ("c", id(seg.curve), round(seg.s0 % 1.0, 13))
                if seg.end_ref is not None:
                    a = np.array(seg.end_ref.point)
                if seg.start_ref is not None:
                    b = np.array(seg.start_ref.point)
                pieces.append(_Piece("curve", a_key, b_key, a, b, seg))
            # walk CCW along the cell boundary to the next path start
            tau0 = end["tau"]
            best, best_d = None, None
            for idx, (st, _, _) in enumerate(rev):
                d = (st["tau"] - tau0) % perim
                if d <= 0:
                    d += perim
                if best_d is None or d < best_d:
                    best, best_d = idx, d
            nxt_start = rev[best][0]
            p_key, p_pt = end["key"], end["pt"]
            for ct in sorted(range(4), key=lambda c: (corner_tau[c] - tau0) % perim):
                dc = (corner_tau[ct] - tau0) % perim
                if 0 < dc < best_d:
                    pieces.append(_Piece("line", p_key, ckeys[ct], p_pt, corner_pts[ct]))
                    p_key, p_pt = ckeys[ct], corner_pts[ct]
            pieces.append(_Piece("line", p_key, nxt_start["key"], p_pt, nxt_start["pt"]))
            if best == first:
                break
            if best not in unused:
                raise MeshError(f"inconsistent fluid loop in cell {cell}")
            cur = best
        loops.append(pieces)
    return loops


def _straight_side(grid, a, b):
    """Name of the domain side containing segment ``a-b``, or None."""
    x0, x1, y0, y1 = grid.domain
    tol = 1e-12 * grid.scale
    if abs(a[0] - x0) <= tol and abs(b[0] - x0) <= tol:
        return "left"
    if abs(a[0] - x1) <= tol and abs(b[0] - x1) <= tol:
        return "right"
    if abs(a[1] - y0) <= tol and abs(b[1] - y0) <= tol:
        return "bottom"
    if abs(a[1] - y1) <= tol and abs(b[1] - y1) <= tol:
        return "top"
    return None


def _region_centroid(pieces, nsamp=24):
    pts = []
    for pc in pieces:
        if pc.kind == "line":
            pts.append(pc.a[None, :])
        else:
            t = np.linspace(1.0, 0.0, nsamp, endpoint=False)
            pts.append(pc.segment.points(t))
    xy = np.vstack(pts)
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = 0.5 * cr.sum()
    if abs(area) < 1e-300:
        return xy.mean(axis=0), 0.0
    cx = ((x + xn) * cr).sum() / (6 * area)
    cy = ((y + yn) * cr).sum() / (6 * area)
    return np.array([cx, cy]), area


def build_cut_mesh(grid: BackgroundGrid, curves: Sequence[geo.ParametricCurve], N: int,
                   curved_face_points: Optional[int] = None) -> CutMesh:
    """Cut ``grid`` by ``curves`` and build elements, faces and subtriangle maps."""
    if N < 1:
        raise MeshError("polynomial degree N must be >= 1")
    curves = [c.oriented() for c in curves]
    if len(curves) > 1:
        geo.check_disjoint(curves, min(grid.hx, grid.hy) / 10.0)
    nx, ny = grid.nx, grid.ny
    cell_paths: dict[tuple[int, int], list] = {}
    all_records = []
    for ci, curve in enumerate(curves):
        recs = geo.find_grid_intersections(curve, grid, curve_index=ci)
        all_records.append(recs)
        if not recs:
            raise MeshError(f"curve {curve.name!r} lies inside a single background cell; "
                            "cells with holes are not supported")
        params = list(curve.junctions) + list(curve.stops) + [r.s for r in recs]
        tags = ([geo.JUNCTION] * len(curve.junctions) + [geo.USER] * len(curve.stops)
                + [geo.INTERSECTION] * len(recs))
        refs = [None] * (len(curve.junctions) + len(curve.stops)) + recs
        stops = geo.StopPointSet.build(params, tags, refs)
        segs = geo.split_curve_at_stops(curve, stops)
        # rotate so the list starts right after an intersection
        k0 = next(i for i, s in enumerate(segs) if s.start_tag == geo.INTERSECTION)
        segs = segs[k0:] + segs[:k0]
        path = []
        for seg in segs:
            path.append(seg)
            if seg.end_tag == geo.INTERSECTION:
                mid = seg.points(0.5)[0]
                cell = grid.cell_of(mid)
                for s_ in path:
                    if grid.cell_of(s_.points(0.5)[0]) != cell:
                        raise MeshError("curve path spans several cells; grid intersections missed")
                cell_paths.setdefault(cell, []).append(path)
                path = []
    cell_kind = np.empty((nx, ny), dtype=object)
    curves_list = list(curves)
    elements: list[Element] = []
    faces: list[Face] = []
    face_by_key: dict = {}
    scale = grid.scale

    def add_face(key, kind, a, b, elem_id, local, tag=None, segment=None):
        if key in face_by_key:
            f = faces[face_by_key[key]]
            if f.right is not None:
                raise MeshError(f"face {key} shared by more than two elements")
            if (np.linalg.norm(f.start - b) > 1e-12 * scale
                    or np.linalg.norm(f.end - a) > 1e-12 * scale):
                raise MeshError(f"face {key} endpoints do not match across elements")
            f.right = elem_id
            return f.id, True
        fid = len(faces)
        faces.append(Face(fid, kind, np.asarray(a, float), np.asarray(b, float), elem_id,
                          key=key, segment=segment, tag=tag))
        face_by_key[key] = fid
        return fid, False

    for j in range(ny):
        for i in range(nx):
            cell = (i, j)
            if cell in cell_paths:
                cell_kind[i, j] = CUT
                loops = _cell_loops(grid, cell, cell_paths[cell])
                for pieces in loops:
                    eid = len(elements)
                    fids, flips, verts = [], [], []
                    for local, pc in enumerate(pieces):
                        verts.append(pc.a)
                        if pc.kind == "line":
                            key = ("s", frozenset([pc.a_key, pc.b_key]))
                            full = pc.a_key[0] == "n" and pc.b_key[0] == "n"
                            fid, flip = add_face(key, FACE_CARTESIAN if full else FACE_STRAIGHT,
                                                 pc.a, pc.b, eid, local)
                        else:
                            key = ("c", id(pc.segment.curve), pc.segment.s0, pc.segment.s1)
                            fid, flip = add_face(key, FACE_CURVED, pc.a, pc.b, eid, local,
                                                 tag=pc.segment.curve.tag, segment=pc.segment)
                        fids.append(fid)
                        flips.append(flip)
                    elements.append(Element(eid, CUT, cell, fids, flips, np.array(verts)))
                    elements[-1]._pieces = pieces  # used by subtriangulation
            else:
                center = 0.5 * (grid.node(i, j) + grid.node(i + 1, j + 1))
                cls = geo.classify_point(curves_list, center, scale) if curves_list else geo.FLUID
                if cls == geo.BOUNDARY:
                    raise MeshError(f"cell {cell} center lies on an embedded boundary")
                if cls == geo.EMBEDDED:
                    cell_kind[i, j] = "removed"
                    continue
                cell_kind[i, j] = CARTESIAN
                eid = len(elements)
                ck = _corner_keys(cell)
                pts = [grid.node(*k[1:]) for k in ck]
                fids, flips = [], []
                for s in range(4):
                    a, b = pts[s], pts[(s + 1) % 4]
                    key = ("s", frozenset([ck[s], ck[(s + 1) % 4]]))
                    fid, flip = add_face(key, FACE_CARTESIAN, a, b, eid, s)
                    fids.append(fid)
                    flips.append(flip)
                elements.append(Element(eid, CARTESIAN, cell, fids, flips, np.array(pts),
                                        volume=grid.cell_area))
    for f in faces:
        if f.right is None and f.kind != FACE_CURVED:
            side = _straight_side(grid, f.start, f.end)
            if side is None:
                raise MeshError(f"unmatched interior face {f.id} between {f.start} and {f.end}")
            f.tag = side
    mesh = CutMesh(grid, curves_list, N, elements, faces, cell_kind, all_records)
    for el in elements:
        if el.kind == CUT:
            el.triangles = subtriangulate(el, N, mesh)
            el.volume = float(sum(t.area() for t in el.triangles))
            if not el.volume > 0:
                raise MeshError(f"cut element {el.id} has zero area")
        else:
            el.triangles = [TriangleMap(el.vertices[[0, 1, 2]], N),
                            TriangleMap(el.vertices[[0, 2, 3]], N)]
    _build_face_quadrature(mesh, curved_face_points)
    return mesh


def _piece_curve_fn(pc):
    seg, t0, t1 = pc.segment, pc.t0, pc.t1

    def fn(t):
        # element orientation runs from s1 to s0
        return seg.points(1.0 - (t0 + (t1 - t0) * np.asarray(t)))

    return fn


# curved pieces turning through more than this are split before mapping, which
# keeps the geometric error of the degree-N maps small on coarse grids
MAX_ARC_TURN = np.pi / 4


def _arc_turn(pc, n=17):
    """Total turning of the tangent along a curve piece (radians)."""
    seg = pc.segment
    s = 1.0 - (pc.t0 + (pc.t1 - pc.t0) * np.linspace(0.0, 1.0, n))
    tan = seg.tangents(s)
    ang = np.unwrap(np.arctan2(tan[:, 1], tan[:, 0]))
    return float(np.sum(np.abs(np.diff(ang))))


def _split_pieces(pieces, parts):
    """Split every curve piece into ``parts`` equal sub-arcs (more if it turns sharply)."""
    out = []
    for idx, pc in enumerate(pieces):
        if pc.kind != "curve":
            out.append(_Piece(pc.kind, pc.a_key, pc.b_key, pc.a, pc.b, pc.segment, parent=idx))
            continue
        fn = _piece_curve_fn(pc)
        k = parts * max(1, int(np.ceil(_arc_turn(pc) / MAX_ARC_TURN - 1e-9)))
        ts = np.linspace(0.0, 1.0, k + 1)
        for q in range(k):
            a = pc.a if q == 0 else fn(ts[q:q + 1])[0]
            b = pc.b if q == k - 1 else fn(ts[q + 1:q + 2])[0]
            out.append(_Piece("curve", None, None, a, b, pc.segment,
                              pc.t0 + (pc.t1 - pc.t0) * ts[q], pc.t0 + (pc.t1 - pc.t0) * ts[q + 1], idx))
    return out


def _fan(element, pieces, N):
    c, _ = _region_centroid(pieces)
    tris = []
    for pc in pieces:
        curved = {0: _piece_curve_fn(pc)} if pc.kind == "curve" else None
        tris.append(build_triangle_map([c, pc.a, pc.b], N, curved, element.id))
    return tris


def subtriangulate(element: Element, N: int, mesh: Optional[CutMesh] = None) -> list[TriangleMap]:
    """Fan from the element centroid, with ear clipping as fallback.

    If neither works (thin slivers whose boundary arc bulges past a chord),
    curved pieces are split into 2, 4, ... sub-arcs and both are retried.
    The pieces actually used are kept on ``element._tri_pieces``.
    """
    base = element._pieces
    for parts in (1, 2, 4, 8, 16, 32):
        pieces = _split_pieces(base, parts)
        for method in (_fan, _ear_clip):
            try:
                tris = method(element, pieces, N)
            except MeshError:
                continue
            if parts > 1:
                log.debug("element %d triangulated after splitting arcs into %d", element.id, parts)
            element._tri_pieces = pieces
            return tris
        if not any(pc.kind == "curve" for pc in base):
            break
    raise MeshError(f"could not subtriangulate element {element.id} with positive Jacobians")


def _ear_clip(element, pieces, N):
    m = len(pieces)
    if m < 3:
        raise MeshError(f"cannot triangulate element {element.id} with {m} stop points")
    verts = [pc.a for pc in pieces]
    # polygon edges i -> i+1 carry the pieces; diagonals are straight
    idx = list(range(m))
    edge_piece = {(i, (i + 1) % m): pieces[i] for i in range(m)}
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * m:
            raise MeshError(f"ear clipping failed for element {element.id}")
        found = False
        for pos in range(len(idx)):
            i0, i1, i2 = idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]
            tri = _try_tri(verts, edge_piece, i0, i1, i2, N, element.id)
            if tri is None:
                continue
            # reject ears containing other vertices
            a, b, cc = verts[i0], verts[i1], verts[i2]
            if any(_in_tri(verts[k], a, b, cc) for k in idx if k not in (i0, i1, i2)):
                continue
            tris.append(tri)
            idx.pop(pos)
            found = True
            break
        if not found:
            raise MeshError(f"non-star-shaped element {element.id} could not be triangulated")
    tri = _try_tri(verts, edge_piece, idx[0], idx[1], idx[2], N, element.id)
    if tri is None:
        raise MeshError(f"negative Jacobian in element {element.id}")
    tris.append(tri)
    return tris


def _try_tri(verts, edge_piece, i0, i1, i2, N, eid):
    # reference vertex 0 = i0, 1 = i1, 2 = i2; side k is opposite vertex k
    curved = {}
    for k, (a, b) in ((2, (i0, i1)), (0, (i1, i2)), (1, (i2, i0))):
        pc = edge_piece.get((a, b))
        if pc is not None and pc.kind == "curve":
            # side k runs along _EDGE_VERTS[k], which matches the polygon direction
            curved[k] = _piece_curve_fn(pc)
    try:
        return build_triangle_map([verts[i0], verts[i1], verts[i2]], N, curved or None, eid)
    except MeshError:
        return None


def _in_tri(p, a, b, c):
    def cr(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
    d1, d2, d3 = cr(a, b, p), cr(b, c, p), cr(c, a, p)
    return d1 > 0 and d2 > 0 and d3 > 0


def _build_face_quadrature(mesh, curved_points=None):
    from .quadrature import face_rule
    N = mesh.N
    n_straight = N + 1
    n_curved = curved_points if curved_points is not None else 2 * N + 2
    for el in mesh.elements:
        if el.kind != CUT:
            continue
        for local, (fid, flip) in enumerate(zip(el.faces, el.flipped)):
            f = mesh.faces[fid]
            if f.kind == FACE_CURVED and not flip:
                subs = [pc for pc in el._tri_pieces if pc.parent == local]
                f.owner_triangle = [_owning_triangle(el, pc) for pc in subs]
    for f in mesh.faces:
        if f.kind == FACE_CURVED:
            el = mesh.elements[f.left]
            rules = [face_rule(f, n_curved, triangle=el.triangles[ti], side=side)
                     for ti, side in f.owner_triangle]
            f.points = np.vstack([r.points for r in rules])
            f.weights = np.concatenate([r.weights for r in rules])
            f.normals = np.vstack([r.normals for r in rules])
        else:
            fr = face_rule(f, n_straight)
            f.points, f.weights, f.normals = fr.points, fr.weights, fr.normals


def _owning_triangle(el, piece):
    a, b = piece.a, piece.b
    for ti, tri in enumerate(el.triangles):
        for k, (va, vb) in enumerate(_EDGE_VERTS):
            if (np.allclose(tri.vertices[va], a, atol=1e-14, rtol=0)
                    and np.allclose(tri.vertices[vb], b, atol=1e-14, rtol=0)):
                return ti, k
    raise MeshError(f"curved face of element {el.id} not owned by any subtriangle")


# --- connectivity and dumps --------------------------------------------------

@dataclass
class Connectivity:
    """Matched face points.

    ``offsets[k]`` is the start of element ``k``'s face points in the global
    face-point numbering; ``neighbor[p]`` is the global index of the
    coincident point on the other side or ``-1`` on the boundary, where
    ``tag[p]`` names the boundary.
    """

    offsets: np.ndarray
    neighbor: np.ndarray
    tag: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray


def face_connectivity(mesh: CutMesh, tol: float = 1e-12) -> Connectivity:
    """Pair every interior face quadrature point with its twin on the neighbor."""
    offsets = [0]
    loc: dict[tuple[int, int], int] = {}
    pts, nrm, wts, tags = [], [], [], []
    for el in mesh.elements:
        base = offsets[-1]
        n = 0
        for fid, flip in zip(el.faces, el.flipped):
            f = mesh.faces[fid]
            loc[(el.id, fid)] = base + n
            n += f.n_points
        p, w, nr = mesh.element_face_points(el.id)
        pts.append(p)
        wts.append(w)
        nrm.append(nr)
        for fid in el.faces:
            f = mesh.faces[fid]
            tags.extend([f.tag if f.is_boundary else ""] * f.n_points)
        offsets.append(base + n)
    points = np.vstack(pts)
    normals = np.vstack(nrm)
    weights = np.concatenate(wts)
    neighbor = -np.ones(len(points), dtype=int)
    for f in mesh.faces:
        if f.is_boundary:
            continue
        a = loc[(f.left, f.id)]
        b = loc[(f.right, f.id)]
        n = f.n_points
        ia = np.arange(a, a + n)
        ib = np.arange(b + n - 1, b - 1, -1)
        if np.max(np.abs(points[ia] - points[ib])) > tol * mesh.grid.scale:
            raise MeshError(f"face {f.id}: unmatched interior face points")
        if np.max(np.abs(normals[ia] + normals[ib])) > 1e-12:
            raise MeshError(f"face {f.id}: normals are not opposite")
        neighbor[ia] = ib
        neighbor[ib] = ia
    return Connectivity(np.array(offsets), neighbor, np.array(tags, dtype=object),
                        points, normals, weights)


def dump_mesh(mesh: CutMesh, element_path, face_path):
    """Write the element and face listings as CSV."""
    with open(element_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "type", "cell_i", "cell_j", "volume", "faces"])
        for el in mesh.elements:
            w.writerow([el.id, el.kind, el.cell[0], el.cell[1], repr(el.volume), len(el.faces)])
    with open(face_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face", "kind", "x0", "y0", "x1", "y1", "left", "right", "tag"])
        for f in mesh.faces:
            w.writerow([f.id, f.kind, repr(f.start[0]), repr(f.start[1]), repr(f.end[0]),
                        repr(f.end[1]), f.left, "" if f.right is None else f.right, f.tag or ""])
