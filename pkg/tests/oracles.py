"""Independent brute-force oracles shared by the unit and acceptance tests.

These deliberately avoid the library's solver internals: the grid argmin
enumerates candidate points outward from the preferred velocity and keeps
the exact grid optimum, and the separating-axis test below re-derives
rectangle overlap from scratch.
"""

import math

import numpy as np

from crowdsim.geom import Vec2

GRID_H = 0.01


def grid_argmin(kin, planes, v_pref, h=GRID_H):
    """Exact argmin of ||v - v_pref|| over a h-spaced grid on kin's bbox.

    Equivalent to scanning the full grid, done one column at a time: along a
    fixed x every half-plane bounds y linearly, so the feasible grid points
    of a column form an index interval and the column's best candidate is
    v_pref.y clamped into it.  Returns None when no grid point is feasible.
    """
    xmin, ymin, xmax, ymax = kin.bounds()
    nx = int(math.floor((xmax - xmin) / h)) + 1
    ny = int(math.floor((ymax - ymin) / h)) + 1
    xs = xmin + np.arange(nx) * h

    jlo = np.zeros(nx)
    jhi = np.full(nx, float(ny - 1))
    ok = np.ones(nx, dtype=bool)
    for p in list(kin.edge_planes) + list(planes):
        rest = p.offset - 1e-9 - p.normal.x * xs
        if abs(p.normal.y) < 1e-15:
            ok &= rest <= 0.0
            continue
        t = (rest - p.normal.y * ymin) / (p.normal.y * h)
        if p.normal.y > 0:
            jlo = np.maximum(jlo, np.ceil(t))
        else:
            jhi = np.minimum(jhi, np.floor(t))
    ok &= jlo <= jhi
    if not ok.any():
        return None

    jp = round((v_pref.y - ymin) / h)
    jbest = np.clip(jp, jlo, jhi)
    dy = ymin + jbest * h - v_pref.y
    dx = xs - v_pref.x
    d2 = np.where(ok, dx * dx + dy * dy, math.inf)
    k = int(d2.argmin())
    return Vec2(float(xs[k]), float(ymin + jbest[k] * h))


def exact_argmin(kin, planes, v_pref):
    """Exact nearest feasible point to v_pref, or None.

    Independent route to the same optimum: a Chebyshev-center LP locates an
    interior point, qhull intersects the half-planes into a polygon, and the
    answer is the nearest point on that polygon (or v_pref itself when it is
    feasible).  Returns None when the region is empty or thinner than qhull
    can resolve, so callers should skip rather than fail in that case.
    """
    from scipy.optimize import linprog
    from scipy.spatial import HalfspaceIntersection, QhullError

    all_planes = list(kin.edge_planes) + list(planes)
    if all(p.satisfied_by(v_pref, slack=1e-12) for p in all_planes):
        return v_pref

    # n.v >= off  becomes  -n.v <= -off
    A = np.array([(-p.normal.x, -p.normal.y) for p in all_planes])
    b = np.array([-p.offset for p in all_planes])
    norms = np.linalg.norm(A, axis=1)
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=np.column_stack([A, norms]),
        b_ub=b,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if not res.success or res.x[2] < 1e-7:
        return None
    try:
        hs = HalfspaceIntersection(np.column_stack([A, -b]), res.x[:2])
    except QhullError:
        return None
    verts = [Vec2(float(vx), float(vy)) for vx, vy in hs.intersections]
    centroid = Vec2(
        sum(v.x for v in verts) / len(verts),
        sum(v.y for v in verts) / len(verts),
    )
    verts.sort(key=lambda v: math.atan2(v.y - centroid.y, v.x - centroid.x))

    best = None
    best_d2 = math.inf
    for i in range(len(verts)):
        a, c = verts[i], verts[(i + 1) % len(verts)]
        d = c - a
        L2 = d.norm_sq()
        t = 0.0 if L2 == 0.0 else max(0.0, min(1.0, (v_pref - a).dot(d) / L2))
        q = a + d * t
        d2 = (q - v_pref).norm_sq()
        if d2 < best_d2:
            best_d2 = d2
            best = q
    return best


def grid_minmax_violation(kin, planes, h=0.002):
    """Grid search for the min-max-violation point used by the fallback."""
    xmin, ymin, xmax, ymax = kin.bounds()
    xs = np.arange(xmin, xmax + h / 2, h)
    ys = np.arange(ymin, ymax + h / 2, h)
    PX, PY = np.meshgrid(xs, ys)
    px, py = PX.ravel(), PY.ravel()
    inside = np.ones(px.shape, dtype=bool)
    for p in kin.edge_planes:
        inside &= px * p.normal.x + py * p.normal.y >= p.offset - 1e-9
    worst = np.zeros(px.shape)
    for p in planes:
        worst = np.maximum(worst, p.offset - (px * p.normal.x + py * p.normal.y))
    worst = np.where(inside, worst, math.inf)
    k = worst.argmin()
    # among near-optimal cells prefer the smallest norm, mirroring the tie rule
    near = worst <= worst[k] + 1e-9
    norms = np.where(near, px * px + py * py, math.inf)
    k = norms.argmin()
    return Vec2(float(px[k]), float(py[k])), float(worst[k])


def rect_corners(cx, cy, heading, half_len, half_wid):
    c, s = math.cos(heading), math.sin(heading)
    out = []
    for dx, dy in ((half_len, half_wid), (-half_len, half_wid),
                   (-half_len, -half_wid), (half_len, -half_wid)):
        out.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return out


def sat_rect_overlap(ca, cb):
    """Separating-axis overlap test for two convex corner lists."""
    for poly in (ca, cb):
        n = len(poly)
        for i in range(n):
            ax, ay = poly[i]
            bx, by = poly[(i + 1) % n]
            nx, ny = -(by - ay), bx - ax
            proj_a = [nx * px + ny * py for px, py in ca]
            proj_b = [nx * px + ny * py for px, py in cb]
            if max(proj_a) < min(proj_b) or max(proj_b) < min(proj_a):
                return False
    return True
