"""Explicit parametric embedded boundaries.

Closed curves are parameterized on ``[0, 1]`` and, after normalization, run
counterclockwise around the embedded (removed) region, so the fluid lies on
the right of the direction of travel. Every curve carries its own piece
junctions and optional user stop points; grid intersections are added by
:func:`find_grid_intersections` when the cut mesh is built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar


class GeometryError(ValueError):
    """Invalid or degenerate embedded-boundary geometry."""


class DegenerateCutError(GeometryError):
    """Raised for grid-line tangencies and cuts through grid nodes."""


@dataclass(frozen=True, eq=False)
class ParametricCurve:
    """A closed, piecewise smooth curve ``s -> (x, y)`` on ``[0, 1]``.

    ``point`` and ``tangent`` must accept arrays of parameters and return
    arrays of shape ``(len(s), 2)``. ``ccw`` states whether increasing ``s``
    circles the embedded region counterclockwise. ``junctions`` holds the
    parameters where smooth pieces meet; ``stops`` holds user subinterval
    markers. ``tag`` names the boundary condition applied on the curve.
    """

    point: Callable[[np.ndarray], np.ndarray]
    tangent: Callable[[np.ndarray], np.ndarray]
    ccw: bool = True
    junctions: tuple[float, ...] = (0.0,)
    stops: tuple[float, ...] = ()
    tag: str = "wall"
    name: str = "curve"

    def __call__(self, s):
        return eval_curve(self, s)

    def reversed(self) -> "ParametricCurve":
        """Same point set traversed backwards, with the orientation flag flipped."""
        point, tangent = self.point, self.tangent

        def rpoint(s):
            return point(_wrap(1.0 - np.asarray(s, dtype=float)))

        def rtangent(s):
            return -tangent(_wrap(1.0 - np.asarray(s, dtype=float)))

        return ParametricCurve(
            point=rpoint, tangent=rtangent, ccw=not self.ccw,
            junctions=tuple(sorted({_wrap(1.0 - j) for j in self.junctions})),
            stops=tuple(sorted({_wrap(1.0 - j) for j in self.stops})),
            tag=self.tag, name=self.name)

    def oriented(self) -> "ParametricCurve":
        """Return a counterclockwise-oriented version of this curve."""
        return self if self.ccw else self.reversed()


def _wrap(s):
    s = np.mod(s, 1.0)
    if np.ndim(s) == 0:
        return float(s)
    return s


def eval_curve(curve: ParametricCurve, s) -> np.ndarray:
    """Evaluate ``curve`` at parameter(s) ``s`` in ``[0, 1]``."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0) or not np.all(np.isfinite(s_arr)):
        raise GeometryError(f"curve parameter outside [0, 1]: {s}")
    pts = np.asarray(curve.point(s_arr), dtype=float).reshape(-1, 2)
    if np.ndim(s) == 0:
        return pts[0]
    return pts


def _eval_wrapped(curve, s):
    return np.asarray(curve.point(np.mod(np.atleast_1d(s), 1.0)), dtype=float).reshape(-1, 2)


# --- built-in shapes -------------------------------------------------------

def circle(center=(0.0, 0.0), radius=1.0, tag="wall", name="circle",
           stops=()) -> ParametricCurve:
    """Circle starting at angle 0, counterclockwise."""
    cx, cy = map(float, center)
    r = float(radius)
    if r <= 0:
        raise GeometryError("circle radius must be positive")
    two_pi = 2.0 * np.pi

    def point(s):
        th = two_pi * np.asarray(s, dtype=float)
        return np.stack([cx + r * np.cos(th), cy + r * np.sin(th)], axis=-1)

    def tangent(s):
        th = two_pi * np.asarray(s, dtype=float)
        return two_pi * r * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    return ParametricCurve(point, tangent, True, (0.0,), tuple(stops), tag, name)


def _arc_pieces(pieces):
    """Chain callables defined on [0, 1] into one curve with equal parameter shares."""
    n = len(pieces)

    def split(s):
        s = np.asarray(s, dtype=float)
        k = np.minimum((s * n).astype(int), n - 1)
        return k, s * n - k

    def point(s):
        k, t = split(s)
        out = np.empty(k.shape + (2,))
        for i, (p, _) in enumerate(pieces):
            m = k == i
            if np.any(m):
                out[m] = p(t[m])
        return out

    def tangent(s):
        k, t = split(s)
        out = np.empty(k.shape + (2,))
        for i, (_, dp) in enumerate(pieces):
            m = k == i
            if np.any(m):
                out[m] = n * dp(t[m])
        return out

    return point, tangent, tuple(i / n for i in range(n))


def _line_piece(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def p(t):
        return a + np.asarray(t)[..., None] * (b - a)

    def dp(t):
        return np.broadcast_to(b - a, np.shape(t) + (2,)).copy()

    return p, dp


def _arc_piece(center, radius, a0, a1):
    c = np.asarray(center, dtype=float)
    da = a1 - a0

    def p(t):
        th = a0 + da * np.asarray(t)
        return c + radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def dp(t):
        th = a0 + da * np.asarray(t)
        return radius * da * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    return p, dp


def biconvex(chord=1.0, thickness=0.1, center=(0.0, 0.0), angle=0.0,
             tag="wall", name="airfoil", stops=()) -> ParametricCurve:
    """Symmetric biconvex (two circular arc) airfoil.

    ``s = 0`` is the leading edge; ``[0, 0.5]`` is the lower surface and
    ``[0.5, 1]`` the upper surface. ``angle`` is the angle of attack in
    radians (nose up positive).
    """
    if chord <= 0 or not 0 < thickness < 1:
        raise GeometryError("biconvex needs chord > 0 and 0 < thickness < 1")
    a = 0.5 * chord
    k = 0.5 * thickness * chord
    rho = (a * a + k * k) / (2.0 * k)
    beta = np.arcsin(a / rho)
    lower = _arc_piece((0.0, rho - k), rho, 1.5 * np.pi - beta, 1.5 * np.pi + beta)
    upper = _arc_piece((0.0, k - rho), rho, 0.5 * np.pi - beta, 0.5 * np.pi + beta)
    base_point, base_tangent, junctions = _arc_pieces([lower, upper])
    ca, sa = np.cos(-angle), np.sin(-angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    c = np.asarray(center, dtype=float)

    def point(s):
        return base_point(s) @ rot.T + c

    def tangent(s):
        return base_tangent(s) @ rot.T

    return ParametricCurve(point, tangent, True, junctions, tuple(stops), tag, name)


def piecewise(segments: Sequence[dict], tag="wall", name="piecewise",
              stops=()) -> ParametricCurve:
    """Closed curve from an ordered list of line and arc records.

    Records are ``{"kind": "line", "start": [x, y], "end": [x, y]}`` or
    ``{"kind": "arc", "center": [x, y], "radius": r, "start_angle": a0,
    "end_angle": a1}`` (angles in radians). Each record gets an equal share of
    the parameter interval and consecutive records must join up.
    """
    pieces = []
    ends = []
    for rec in segments:
        kind = rec.get("kind")
        if kind == "line":
            pieces.append(_line_piece(rec["start"], rec["end"]))
        elif kind == "arc":
            pieces.append(_arc_piece(rec["center"], float(rec["radius"]),
                                     float(rec["start_angle"]), float(rec["end_angle"])))
        else:
            raise GeometryError(f"unknown segment kind {kind!r}")
        p = pieces[-1][0]
        ends.append((p(np.array([0.0]))[0], p(np.array([1.0]))[0]))
    if not pieces:
        raise GeometryError("piecewise curve needs at least one segment")
    scale = max(1.0, max(np.abs(np.concatenate(ends)).max(), 0.0))
    for i in range(len(ends)):
        nxt = ends[(i + 1) % len(ends)][0]
        if np.linalg.norm(ends[i][1] - nxt) > 1e-12 * scale:
            raise GeometryError(f"segment {i} does not join segment {(i + 1) % len(ends)}")
    point, tangent, junctions = _arc_pieces(pieces)
    # orientation from the shoelace formula on a fine sample
    s = np.linspace(0.0, 1.0, 2001)[:-1]
    xy = point(s)
    area = 0.5 * np.sum(xy[:, 0] * np.roll(xy[:, 1], -1) - np.roll(xy[:, 0], -1) * xy[:, 1])
    return ParametricCurve(point, tangent, bool(area > 0), junctions, tuple(stops), tag, name)


# --- stop points -------------------------------------------------------------

USER, JUNCTION, INTERSECTION = "user", "junction", "intersection"
_TAG_RANK = {USER: 0, JUNCTION: 1, INTERSECTION: 2}


@dataclass(frozen=True)
class StopPointSet:
    """Sorted, deduplicated curve parameters with a label per parameter."""

    params: tuple[float, ...]
    tags: tuple[str, ...]
    refs: tuple = ()

    @classmethod
    def build(cls, params, tags, refs=None, tol=1e-12) -> "StopPointSet":
        """Sort and merge parameters closer than ``tol``.

        When two entries merge, the grid-intersection entry wins so that its
        record (``refs``) survives.
        """
        refs = list(refs) if refs is not None else [None] * len(params)
        order = sorted(range(len(params)), key=lambda i: params[i])
        out_p, out_t, out_r = [], [], []
        for i in order:
            p = float(params[i])
            if p < -tol or p > 1 + tol:
                raise GeometryError(f"stop parameter {p} outside [0, 1]")
            p = min(max(p, 0.0), 1.0)
            if p >= 1.0 - tol:
                # closed curves: s = 1 is s = 0
                p = 0.0
                if out_p and out_p[0] <= tol:
                    if _TAG_RANK[tags[i]] > _TAG_RANK[out_t[0]]:
                        out_t[0], out_r[0] = tags[i], refs[i]
                    continue
                out_p.insert(0, p)
                out_t.insert(0, tags[i])
                out_r.insert(0, refs[i])
                continue
            if out_p and abs(p - out_p[-1]) <= tol:
                if _TAG_RANK[tags[i]] > _TAG_RANK[out_t[-1]]:
                    out_t[-1], out_r[-1] = tags[i], refs[i]
                continue
            out_p.append(p)
            out_t.append(tags[i])
            out_r.append(refs[i])
        return cls(tuple(out_p), tuple(out_t), tuple(out_r))

    def __len__(self):
        return len(self.params)


@dataclass(frozen=True)
class CurveSegment:
    """Portion of a curve between two stop points.

    ``s1`` may exceed 1 for the segment that wraps through ``s = 0``.
    """

    curve: ParametricCurve
    s0: float
    s1: float
    start_tag: str
    end_tag: str
    start_ref: object = None
    end_ref: object = None

    @property
    def length(self):
        return self.s1 - self.s0

    def points(self, t):
        """Points at local coordinate ``t`` in ``[0, 1]``."""
        return _eval_wrapped(self.curve, self.s0 + (self.s1 - self.s0) * np.asarray(t))

    def tangents(self, t):
        s = np.mod(self.s0 + (self.s1 - self.s0) * np.atleast_1d(t), 1.0)
        return (self.s1 - self.s0) * np.asarray(self.curve.tangent(s)).reshape(-1, 2)


def split_curve_at_stops(curve: ParametricCurve, stops: StopPointSet) -> list[CurveSegment]:
    """Cut a closed curve into consecutive segments between stop points."""
    p = list(stops.params)
    if any(b <= a for a, b in zip(p, p[1:])):
        raise GeometryError("stop points must be sorted and distinct")
    if not p:
        return [CurveSegment(curve, 0.0, 1.0, JUNCTION, JUNCTION)]
    segs = []
    n = len(p)
    for i in range(n):
        j = (i + 1) % n
        s1 = p[j] if j > i else p[j] + 1.0
        segs.append(CurveSegment(curve, p[i], s1, stops.tags[i], stops.tags[j],
                                 stops.refs[i] if stops.refs else None,
                                 stops.refs[j] if stops.refs else None))
    return segs


# --- grid intersections ------------------------------------------------------

@dataclass(frozen=True)
class IntersectionRecord:
    """A crossing of ``curve_index`` with grid line ``axis = index``.

    ``axis`` is ``"x"`` for vertical lines ``x = const`` and ``"y"`` for
    horizontal lines.
    """

    s: float
    point: tuple[float, float]
    axis: str
    index: int
    curve_index: int = 0


def _bisect(f, a, b, fa, iters=200):
    """Vectorized bisection of sign changes of ``f`` on ``[a, b]``."""
    a = a.copy()
    b = b.copy()
    fa = fa.copy()
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
        if np.all(b - a <= 4e-16 * np.maximum(1.0, np.abs(a))):
            break
    fm_a = np.abs(fa)
    fb = np.abs(f(b))
    return np.where(fm_a <= fb, a, b)


def find_grid_intersections(curve: ParametricCurve, grid, curve_index: int = 0,
                            node_tol: float = 1e-10) -> list[IntersectionRecord]:
    """All crossings of ``curve`` with the interior lines of ``grid``, sorted by ``s``."""
    x0, x1, y0, y1 = grid.domain
    scale = grid.scale
    nsamp = max(64, 8 * (grid.nx + grid.ny))
    s = np.unique(np.concatenate([np.linspace(0.0, 1.0, nsamp + 1), curve.junctions,
                                  [j + 0.5 / nsamp for j in curve.junctions if j + 0.5 / nsamp < 1]]))
    s = s[s < 1.0]
    pts = _eval_wrapped(curve, s)
    if (pts[:, 0].min() <= x0 or pts[:, 0].max() >= x1
            or pts[:, 1].min() <= y0 or pts[:, 1].max() >= y1):
        raise GeometryError(f"curve {curve.name!r} is not strictly inside the domain")
    s_ext = np.append(s, 1.0)
    records = []
    lines = {"x": grid.xlines[1:-1], "y": grid.ylines[1:-1]}
    for axis, comp in (("x", 0), ("y", 1)):
        vals = lines[axis]
        if len(vals) == 0:
            continue
        g = pts[:, comp][:, None] - vals[None, :]
        g = np.vstack([g, g[:1]])
        zero = np.abs(g) <= 1e-14 * scale
        # roots sitting exactly on a sample
        for k, li in zip(*np.nonzero(zero[:-1])):
            before = g[k - 1, li] if k > 0 else g[-2, li]
            after = g[k + 1, li]
            if np.sign(before) * np.sign(after) >= 0:
                raise DegenerateCutError(
                    f"degenerate tangency of curve {curve.name!r} with grid line "
                    f"{axis}={vals[li]:.6g}; perturb n_x/n_y or the geometry")
            records.append((s_ext[k], axis, li))
        change = (np.sign(g[:-1]) * np.sign(g[1:]) < 0) & ~zero[:-1] & ~zero[1:]
        ks, lis = np.nonzero(change)
        if len(ks):
            line_vals = vals[lis]

            def f(sv, lv=line_vals, c=comp):
                return _eval_wrapped(curve, sv)[:, c] - lv

            roots = _bisect(f, s_ext[ks], s_ext[ks + 1], g[ks, lis])
            for r, li in zip(roots, lis):
                records.append((float(r), axis, li))
    out = []
    for sv, axis, li in records:
        sv = float(np.mod(sv, 1.0))
        p = _eval_wrapped(curve, sv)[0]
        if axis == "x":
            p[0] = grid.xlines[li + 1]
        else:
            p[1] = grid.ylines[li + 1]
        rec = IntersectionRecord(sv, (float(p[0]), float(p[1])), axis, int(li + 1), curve_index)
        out.append(rec)
    _check_nodes(out, grid, node_tol, curve)
    _check_tangency(out, curve, scale)
    out.sort(key=lambda r: r.s)
    return out


def _check_nodes(records, grid, tol, curve):
    scale = grid.scale
    for r in records:
        x, y = r.point
        dx = np.min(np.abs(grid.xlines - x))
        dy = np.min(np.abs(grid.ylines - y))
        if dx <= tol * scale and dy <= tol * scale:
            raise DegenerateCutError(
                f"curve {curve.name!r} passes within {tol:g} of grid node ({x:.6g}, {y:.6g}); "
                "perturb n_x/n_y or the geometry")


def _check_tangency(records, curve, scale):
    if not records:
        return
    s = np.array([r.s for r in records])
    t = np.asarray(curve.tangent(s)).reshape(-1, 2)
    tn = np.linalg.norm(t, axis=1)
    for r, tv, nrm in zip(records, t, tn):
        comp = tv[0] if r.axis == "x" else tv[1]
        if nrm == 0 or abs(comp) <= 1e-10 * nrm:
            raise DegenerateCutError(
                f"degenerate tangency of curve {curve.name!r} with grid line "
                f"{r.axis}={r.point[0] if r.axis == 'x' else r.point[1]:.6g}; "
                "perturb n_x/n_y or the geometry")


# --- point classification -----------------------------------------------------

FLUID, EMBEDDED, BOUNDARY = "fluid", "embedded", "boundary"


@dataclass
class _Sampled:
    s: np.ndarray
    xy: np.ndarray


_SAMPLE_CACHE: dict = {}


def _samples(curve, n=4096):
    key = id(curve)
    hit = _SAMPLE_CACHE.get(key)
    if hit is not None and hit[0] is curve:
        return hit[1]
    s = np.unique(np.concatenate([np.linspace(0.0, 1.0, n, endpoint=False), curve.junctions]))
    smp = _Sampled(s, _eval_wrapped(curve, s))
    _SAMPLE_CACHE[key] = (curve, smp)
    return smp


def closest_point(curve: ParametricCurve, p) -> tuple[float, float]:
    """Return ``(s, distance)`` of the point on ``curve`` nearest to ``p``."""
    p = np.asarray(p, dtype=float)
    smp = _samples(curve)
    d2 = np.sum((smp.xy - p) ** 2, axis=1)
    k = int(np.argmin(d2))
    n = len(smp.s)
    lo = smp.s[k - 1] if k > 0 else smp.s[-1] - 1.0
    hi = smp.s[k + 1] if k + 1 < n else 1.0 + smp.s[0]

    def dist(sv):
        q = _eval_wrapped(curve, sv)[0]
        return float(np.hypot(q[0] - p[0], q[1] - p[1]))

    res = minimize_scalar(dist, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-15})
    best_s, best_d = float(np.mod(res.x, 1.0)), float(res.fun)
    if d2[k] ** 0.5 < best_d:
        best_s, best_d = float(smp.s[k]), float(d2[k] ** 0.5)
    return best_s, best_d


def _winding(xy, p):
    d = xy - p
    ang = np.arctan2(d[:, 1], d[:, 0])
    dang = np.diff(np.append(ang, ang[0]))
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    return dang.sum() / (2 * np.pi)


def classify_point(curves: Sequence[ParametricCurve], p, scale: float = 1.0,
                   boundary_tol: float = 1e-10) -> str:
    """Classify ``p`` as fluid, embedded, or boundary (within ``boundary_tol * scale``)."""
    p = np.asarray(p, dtype=float)
    inside = False
    for curve in curves:
        c = curve.oriented()
        s, dist = closest_point(c, p)
        if dist < boundary_tol * scale:
            return BOUNDARY
        smp = _samples(c)
        sag = np.max(np.linalg.norm(np.diff(smp.xy, axis=0), axis=1)) ** 2
        if dist < 10.0 * sag + 1e-3 * scale:
            # near the curve: side test against the exact tangent
            q = _eval_wrapped(c, s)[0]
            t = np.asarray(c.tangent(np.array([s]))).reshape(2)
            cross = t[0] * (p[1] - q[1]) - t[1] * (p[0] - q[0])
            if cross > 0:
                inside = True
        elif abs(_winding(smp.xy, p)) > 0.5:
            inside = True
    return EMBEDDED if inside else FLUID


def check_disjoint(curves: Sequence[ParametricCurve], min_sep: float):
    """Raise when two curves come closer than ``min_sep`` (sampled)."""
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            a = _samples(curves[i]).xy
            b = _samples(curves[j]).xy
            d = np.sqrt(((a[:, None, :] - b[None, ::4, :]) ** 2).sum(-1)).min()
            if d <= min_sep:
                raise GeometryError(
                    f"curves {curves[i].name!r} and {curves[j].name!r} are not disjoint "
                    f"(sampled distance {d:.3g})")


def check_injective(curve: ParametricCurve, n: int = 1000, scale: float = 1.0) -> float:
    """Smallest separation between non-adjacent samples; raises on self-intersection."""
    s = np.linspace(0.0, 1.0, n, endpoint=False)
    xy = _eval_wrapped(curve, s)
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :])
    gap = np.minimum(gap, n - gap)
    d[gap < 5] = np.inf
    dmin = float(d.min())
    step = float(np.max(np.linalg.norm(np.diff(xy, axis=0), axis=1)))
    if dmin < 0.5 * step:
        raise GeometryError(f"curve {curve.name!r} appears to self-intersect")
    return dmin
