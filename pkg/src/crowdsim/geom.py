"""2D geometry primitives and the low-dimensional velocity-program solver.

Everything here works in plain floats; positions are meters and, in
velocity space, m/s.  The solver finds the feasible velocity closest to a
preferred velocity inside the intersection of a convex polygon and a set
of half-planes, which is the single optimization every behavior model in
this package reduces to.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np


class Vec2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float):
        return Vec2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self):
        return Vec2(-self.x, -self.y)

    def dot(self, other) -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other) -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def norm_sq(self) -> float:
        return self.x * self.x + self.y * self.y

    def normalized(self) -> "Vec2":
        n = math.hypot(self.x, self.y)
        if n < 1e-12:
            return Vec2(0.0, 0.0)
        return Vec2(self.x / n, self.y / n)

    def perp(self) -> "Vec2":
        # left-hand perpendicular
        return Vec2(-self.y, self.x)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)


class HalfPlane(NamedTuple):
    """Feasible set {v : dot(normal, v) >= offset}; normal is unit length."""

    normal: Vec2
    offset: float

    def satisfied_by(self, v: Vec2, slack: float = 0.0) -> bool:
        return self.normal.x * v.x + self.normal.y * v.y >= self.offset - slack

    def violation(self, v: Vec2) -> float:
        return self.offset - (self.normal.x * v.x + self.normal.y * v.y)


# Tolerances shared across the package: feasibility slack and equality.
FEAS_TOL = 1e-7
EQ_TOL = 1e-9


class GeomError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex polygon given by its vertices."""

    vertices: tuple

    def __init__(self, vertices: Sequence[Vec2]):
        verts = tuple(Vec2(float(p[0]), float(p[1])) for p in vertices)
        if len(verts) < 3:
            raise GeomError("polygon needs at least 3 vertices")
        area2 = 0.0
        n = len(verts)
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            area2 += a.cross(b)
        if area2 < 0:
            verts = verts[::-1]
        # reject reflex corners (tolerate collinear ones)
        for i in range(n):
            a, b, c = verts[i - 1], verts[i], verts[(i + 1) % n]
            if (b - a).cross(c - b) < -1e-9:
                raise GeomError("polygon is not convex")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "_edges", None)

    @property
    def edge_planes(self) -> list:
        """Inward half-planes of the edges; intersection equals the polygon."""
        edges = object.__getattribute__(self, "_edges")
        if edges is None:
            edges = []
            verts = self.vertices
            n = len(verts)
            for i in range(n):
                a, b = verts[i], verts[(i + 1) % n]
                d = b - a
                ln = d.norm()
                if ln < 1e-12:
                    continue
                normal = Vec2(-d.y / ln, d.x / ln)  # inward for CCW order
                edges.append(HalfPlane(normal, normal.dot(a)))
            object.__setattr__(self, "_edges", edges)
        return edges

    def contains(self, v: Vec2, slack: float = FEAS_TOL) -> bool:
        return all(p.satisfied_by(v, slack) for p in self.edge_planes)

    def bounds(self):
        xs = [p.x for p in self.vertices]
        ys = [p.y for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


class Polyline:
    """Ordered point chain with cached cumulative arc-lengths."""

    __slots__ = ("points", "cum_arcs", "length", "_arrays")

    def __init__(self, points: Sequence):
        pts = [Vec2(float(p[0]), float(p[1])) for p in points]
        if len(pts) < 2:
            raise GeomError("polyline needs at least 2 points")
        arcs = [0.0]
        for a, b in zip(pts, pts[1:]):
            d = (b - a).norm()
            if d < 1e-9:
                raise GeomError("consecutive polyline points must be distinct")
            arcs.append(arcs[-1] + d)
        self.points = pts
        self.cum_arcs = arcs
        self.length = arcs[-1]
        self._arrays = None

    def arrays(self):
        """(points Nx2, cum_arcs N) as numpy arrays, built once."""
        if self._arrays is None:
            pts = np.array([(p.x, p.y) for p in self.points])
            self._arrays = (pts, np.asarray(self.cum_arcs))
        return self._arrays

    def __len__(self):
        return len(self.points)

    def point_at(self, arc: float) -> Vec2:
        """Point at the given arc-length, clamped to the polyline ends."""
        if arc <= 0.0:
            return self.points[0]
        if arc >= self.length:
            return self.points[-1]
        i = bisect_right(self.cum_arcs, arc) - 1
        a, b = self.points[i], self.points[i + 1]
        seg = self.cum_arcs[i + 1] - self.cum_arcs[i]
        t = (arc - self.cum_arcs[i]) / seg
        return Vec2(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)

    def tangent_at(self, arc: float) -> Vec2:
        """Unit tangent of the segment containing the arc-length."""
        if arc >= self.length:
            i = len(self.points) - 2
        else:
            i = max(0, bisect_right(self.cum_arcs, max(arc, 0.0)) - 1)
        i = min(i, len(self.points) - 2)
        return (self.points[i + 1] - self.points[i]).normalized()

    def project(self, q: Vec2):
        """Closest point to q, as (arc_length, point); ties keep the
        smaller arc-length."""
        return self._project_range(q, 0, len(self.points) - 1)

    def project_window(self, q: Vec2, lo_arc: float, hi_arc: float):
        """Projection restricted to segments overlapping [lo_arc, hi_arc].

        Cheap localized variant for callers that track their progress along
        the line; falls back to the segment range containing the window.
        """
        lo_i = max(0, bisect_right(self.cum_arcs, lo_arc) - 1)
        hi_i = min(len(self.points) - 1, bisect_right(self.cum_arcs, hi_arc))
        if lo_i >= hi_i:
            lo_i = max(0, hi_i - 1)
        return self._project_range(q, lo_i, hi_i)

    def _project_range(self, q: Vec2, i0: int, i1: int):
        qx, qy = q.x, q.y
        pts = self.points
        arcs = self.cum_arcs
        best_d2 = math.inf
        best_arc = 0.0
        best_pt = pts[i0]
        for i in range(i0, i1):
            ax, ay = pts[i].x, pts[i].y
            bx, by = pts[i + 1].x, pts[i + 1].y
            dx, dy = bx - ax, by - ay
            seg2 = dx * dx + dy * dy
            t = ((qx - ax) * dx + (qy - ay) * dy) / seg2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            px, py = ax + dx * t, ay + dy * t
            ex, ey = qx - px, qy - py
            d2 = ex * ex + ey * ey
            if d2 < best_d2 - 1e-15:
                best_d2 = d2
                best_arc = arcs[i] + math.sqrt(seg2) * t
                best_pt = Vec2(px, py)
        return best_arc, best_pt

    def distance_to(self, q: Vec2) -> float:
        _, p = self.project(q)
        return (q - p).norm()


# insertion orders for the fixed-seed shuffle, memoized per constraint count
_fixed_orders = {}


def _ordered_planes(planes, rng):
    """Insertion order for the incremental solve, as (nx, ny, off) triples.

    The order is drawn from the caller's rng, or from a memoized fixed-seed
    shuffle when rng is None, so identical inputs always replay identically.
    """
    extra = list(planes)
    if len(extra) > 1:
        if rng is not None:
            rng.shuffle(extra)
        else:
            order = _fixed_orders.get(len(extra))
            if order is None:
                order = list(range(len(extra)))
                random.Random(0x5EED).shuffle(order)
                _fixed_orders[len(extra)] = order
            extra = [extra[i] for i in order]
    return [(p.normal.x, p.normal.y, p.offset) for p in extra]


def _seidel(con, vx, vy, n_shift, shift):
    """Incremental LP core over (nx, ny, off) triples.

    Constraints at index >= n_shift have their offset reduced by shift,
    which lets the fallback re-run the same constraint list at many
    relaxation levels without rebuilding it.  Returns (x, y) or None.
    """
    px, py = vx, vy
    for i in range(len(con)):
        nx, ny, off = con[i]
        if i >= n_shift:
            off -= shift
        if nx * px + ny * py >= off - 1e-12:
            continue
        # optimum moves onto this constraint's boundary line
        bx, by = nx * off, ny * off      # point on the line
        dx, dy = -ny, nx                 # line direction
        t_lo, t_hi = -math.inf, math.inf
        feasible = True
        for j in range(i):
            mx, my, mo = con[j]
            if j >= n_shift:
                mo -= shift
            md = mx * dx + my * dy
            rhs = mo - (mx * bx + my * by)
            if md > 1e-12:
                t = rhs / md
                if t > t_lo:
                    t_lo = t
            elif md < -1e-12:
                t = rhs / md
                if t < t_hi:
                    t_hi = t
            elif rhs > 1e-9:
                feasible = False
                break
            if t_lo > t_hi + 1e-12:
                feasible = False
                break
        if not feasible:
            return None
        t = (vx - bx) * dx + (vy - by) * dy
        if t < t_lo:
            t = t_lo
        elif t > t_hi:
            t = t_hi
        if not math.isfinite(t):
            return None
        px, py = bx + dx * t, by + dy * t
    return px, py


def solve_velocity_program(
    kin: ConvexPolygon,
    planes: Sequence[HalfPlane],
    v_pref: Vec2,
    rng: Optional[random.Random] = None,
) -> Optional[Vec2]:
    """argmin ||v - v_pref|| over kin intersected with all half-planes.

    Randomized incremental solve: constraints are folded in one at a time
    and the optimum is re-anchored on each newly violated boundary, which
    runs in expected linear time in the constraint count.  Returns None
    when the feasible set is empty (caller applies a fallback).  Output is
    deterministic for identical inputs: the insertion order is drawn from
    the caller's rng, or from a fixed-seed shuffle when rng is None.
    """
    con = [(p.normal.x, p.normal.y, p.offset) for p in kin.edge_planes]
    if planes:
        con.extend(_ordered_planes(planes, rng))
    out = _seidel(con, v_pref.x, v_pref.y, len(con), 0.0)
    if out is None:
        return None
    return Vec2(out[0], out[1])


def least_violation_fallback(
    kin: ConvexPolygon, planes: Sequence[HalfPlane], tol: float = 1e-7
) -> Vec2:
    """Point of kin minimizing the worst constraint violation.

    Violation of plane i at v is offset_i - dot(normal_i, v).  The min-max
    level is found by bisection on the relaxation amount, to within tol
    relative accuracy; within the optimal level set, the smallest-norm
    point wins the tie.  Deterministic.
    """
    origin = Vec2(0.0, 0.0)
    if not planes:
        v = solve_velocity_program(kin, [], origin)
        assert v is not None
        return v

    fixed = [(p.normal.x, p.normal.y, p.offset) for p in kin.edge_planes]
    n_fixed = len(fixed)
    con = fixed + _ordered_planes(planes, None)

    def attempt(t: float):
        return _seidel(con, 0.0, 0.0, n_fixed, t)

    v0 = _seidel(fixed, 0.0, 0.0, n_fixed, 0.0)
    t_hi = max(p.offset - (p.normal.x * v0[0] + p.normal.y * v0[1]) for p in planes)
    if t_hi <= 0.0:
        # no violation anywhere needed; plain feasible min-norm solve
        v = attempt(0.0)
        if v is not None:
            return Vec2(v[0], v[1])
        t_hi = 1e-6
    t_lo = 0.0
    v_hi = attempt(t_hi)
    while v_hi is None:  # numerical guard; t_hi is achievable by construction
        t_hi = t_hi * 2.0 + 1e-9
        v_hi = attempt(t_hi)
    for _ in range(64):
        mid = 0.5 * (t_lo + t_hi)
        if t_hi - t_lo <= tol * max(1.0, t_hi):
            break
        v = attempt(mid)
        if v is None:
            t_lo = mid
        else:
            t_hi, v_hi = mid, v
    return Vec2(v_hi[0], v_hi[1])


def project_to_polyline(p: Polyline, q: Vec2):
    """Closest point on p to q as (arc_length, point); ties take the
    smaller arc-length."""
    return p.project(q)
