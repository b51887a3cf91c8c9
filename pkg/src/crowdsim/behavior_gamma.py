"""Context-aware crowd behavior: velocity selection over K ∩ G ∩ C.

Each agent picks the feasible velocity closest to its preferred one.
Feasibility is the intersection of a kinematic velocity polygon, one
reciprocal collision-avoidance half-plane per nearby agent, and contextual
half-planes that cap lateral speed toward road boundaries.  All functions
read a frozen previous-frame world and write nothing, so a frame's agents
may be evaluated in any order or in parallel.
"""

import math
from dataclasses import dataclass

from .geom import (
    ConvexPolygon,
    HalfPlane,
    Vec2,
    least_violation_fallback,
    solve_velocity_program,
)
from .roadnet import OffNetwork, locate, nearest_segment

PED_FAN = 16
# preferred speed tapers linearly to zero inside this distance to route end
ARRIVE_RADIUS = 1.0
# the pedestrian velocity polygon depends only on max speed, so share it
_PED_POLYGONS = {}


@dataclass(frozen=True)
class GammaParams:
    tau: float = 4.0
    tau_opp: float = 2.0
    tau_side: float = 2.0
    neighbor_radius: float = 15.0
    max_neighbors: int = 10
    lookahead_dist: float = 6.0
    dt: float = 0.05

    def __post_init__(self):
        for name in (
            "tau",
            "tau_opp",
            "tau_side",
            "neighbor_radius",
            "max_neighbors",
            "lookahead_dist",
            "dt",
        ):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)


@dataclass(frozen=True)
class ContextConstraints:
    """Boundary-derived planes plus where each came from.

    provenance entries are "opp_lane", "road_edge", or "custom"; each
    plane's offset is -(distance to that boundary)/tau for its horizon.
    """

    planes: tuple = ()
    provenance: tuple = ()


def _route_line(route):
    return route.polyline if hasattr(route, "polyline") else route


def preferred_velocity(agent, params) -> Vec2:
    """Velocity pointing at the waypoint lookahead_dist ahead of the
    agent's projection onto its route, tapering near the route end."""
    line = _route_line(agent.state.route)
    pos = agent.state.position
    arc = getattr(agent, "route_arc", None)
    if arc is None:
        arc, _ = line.project(pos)
    target_arc = arc + params.lookahead_dist
    target = line.point_at(target_arc)
    offset = target - pos
    dist = offset.norm()
    if dist < 1e-9:
        return Vec2(0.0, 0.0)
    speed = agent.pref_speed
    if target_arc >= line.length:
        speed *= min(1.0, dist / ARRIVE_RADIUS)
    return offset * (speed / dist)


def _unit(angle):
    return Vec2(math.cos(angle), math.sin(angle))


def kinematic_set(agent, dt=0.05) -> ConvexPolygon:
    """Velocities reachable within one control interval.

    Pedestrians are holonomic: a regular 16-gon inscribed in the max-speed
    disc.  Car-likes get an annular sector around the current heading
    (speed window from acceleration limits, heading window from the
    steering rate at the current speed), convexified to 7 vertices.
    """
    prof = agent.profile
    if prof.is_pedestrian:
        poly = _PED_POLYGONS.get(prof.max_speed)
        if poly is None:
            r = prof.max_speed
            step = 2.0 * math.pi / PED_FAN
            poly = ConvexPolygon([_unit(k * step) * r for k in range(PED_FAN)])
            _PED_POLYGONS[prof.max_speed] = poly
        return poly
    state = agent.state
    s = state.velocity.norm()
    lo = max(0.0, s - prof.max_accel * dt)
    hi = min(prof.max_speed, s + prof.max_accel * dt)
    # at rest the steerable arc would collapse; rate it at the speed one
    # step of full acceleration can reach so the set keeps an interior
    s_eff = max(s, prof.max_accel * dt)
    beta = (s_eff / prof.wheelbase) * math.tan(prof.max_steer) * dt
    phi = state.heading
    outer = [_unit(phi + beta * f) * hi for f in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    if lo > 1e-9:
        verts = [_unit(phi - beta) * lo] + outer + [_unit(phi + beta) * lo]
    else:
        verts = [Vec2(0.0, 0.0)] + outer
    return ConvexPolygon(verts)


def _orca_plane(pos_a, vel_a, rad_a, resp_a, neighbor, params):
    # scalar throughout; this runs once per agent pair per frame
    nb_state = neighbor.state
    pos_b = nb_state.position
    vel_b = nb_state.velocity
    rpx = pos_b.x - pos_a.x
    rpy = pos_b.y - pos_a.y
    rvx = vel_a.x - vel_b.x
    rvy = vel_a.y - vel_b.y
    dist_sq = rpx * rpx + rpy * rpy
    r = rad_a + neighbor.profile.circumradius
    r_sq = r * r
    if dist_sq > r_sq:
        inv_tau = 1.0 / params.tau
        wx = rvx - rpx * inv_tau
        wy = rvy - rpy * inv_tau
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rpx + wy * rpy
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # nearest escape crosses the cone's truncation arc
            w_len = math.sqrt(w_len_sq)
            inv = 1.0 / w_len
            nx, ny = wx * inv, wy * inv
            scale = r * inv_tau - w_len
            ux, uy = nx * scale, ny * scale
        else:
            # nearest escape crosses one of the cone legs
            leg = math.sqrt(max(dist_sq - r_sq, 0.0))
            if rpx * wy - rpy * wx > 0.0:
                inv = 1.0 / dist_sq
                dx = (rpx * leg - rpy * r) * inv
                dy = (rpx * r + rpy * leg) * inv
            else:
                inv = -1.0 / dist_sq
                dx = (rpx * leg + rpy * r) * inv
                dy = (-rpx * r + rpy * leg) * inv
            dot2 = rvx * dx + rvy * dy
            ux, uy = dx * dot2 - rvx, dy * dot2 - rvy
            nx, ny = -dy, dx
    else:
        # footprints already overlap: resolve the penetration within one
        # control step instead of the reciprocal horizon
        inv_dt = 1.0 / params.dt
        wx = rvx - rpx * inv_dt
        wy = rvy - rpy * inv_dt
        w_len = math.hypot(wx, wy)
        if w_len < 1e-12:
            if dist_sq > 1e-18:
                d = math.hypot(rpx, rpy)
                nx, ny = -rpx / d, -rpy / d
            else:
                nx, ny = 1.0, 0.0
            scale = r * inv_dt
            ux, uy = nx * scale, ny * scale
        else:
            inv = 1.0 / w_len
            nx, ny = wx * inv, wy * inv
            scale = r * inv_dt - w_len
            ux, uy = nx * scale, ny * scale
    resp_b = neighbor.profile.responsibility
    total = resp_a + resp_b
    share = resp_a / total if total > 0.0 else 0.5
    px = vel_a.x + ux * share
    py = vel_a.y + uy * share
    return HalfPlane(Vec2(nx, ny), nx * px + ny * py)


def geometric_halfplanes(agent, neighbors, params, rng=None):
    """One reciprocal half-plane per attended neighbor.

    Callers supply neighbors nearest-first within neighbor_radius and at
    most max_neighbors.  With an rng, each neighbor is attended with
    probability agent.profile.attention and skipped otherwise.
    """
    pos = agent.state.position
    vel = agent.state.velocity
    rad = agent.profile.circumradius
    resp = agent.profile.responsibility
    attention = agent.profile.attention
    planes = []
    for nb in neighbors:
        if nb.id == agent.id:
            continue
        if rng is not None and attention < 1.0 and rng.random() >= attention:
            continue
        planes.append(_orca_plane(pos, vel, rad, resp, nb, params))
    return planes


def _boundary_plane(boundary, pos, tau, kind, planes, provenance):
    _, q = boundary.project(pos)
    n = pos - q
    d = n.norm()
    if d < 1e-9:
        return
    n = n * (1.0 / d)
    planes.append(HalfPlane(n, -d / tau))
    provenance.append(kind)


def _current_segment(agent, network):
    ref = getattr(agent, "lane_ref", None)
    if ref is not None and ref.segment_id in network.segments:
        return network.segments[ref.segment_id]
    try:
        ref = locate(network, agent.state.position, agent.state.heading)
    except OffNetwork:
        return None
    return network.segments[ref.segment_id]


def contextual_halfplanes(agent, network, params) -> ContextConstraints:
    """Road-context planes: speed toward a boundary at distance d is capped
    at d/tau, so crossing it takes at least tau seconds."""
    planes = []
    provenance = []
    pos = agent.state.position
    if agent.profile.is_pedestrian:
        if getattr(agent, "crossing", False):
            return ContextConstraints((), ())
        seg = nearest_segment(network, pos, 3.0 * network.max_width)
        if seg is not None and seg.right_road_edge is not None:
            _boundary_plane(
                seg.right_road_edge, pos, params.tau_side, "road_edge",
                planes, provenance,
            )
        return ContextConstraints(tuple(planes), tuple(provenance))
    seg = _current_segment(agent, network)
    if seg is not None:
        if seg.left_opposite_boundary is not None:
            _boundary_plane(
                seg.left_opposite_boundary, pos, params.tau_opp, "opp_lane",
                planes, provenance,
            )
        if seg.right_road_edge is not None:
            _boundary_plane(
                seg.right_road_edge, pos, params.tau_side, "road_edge",
                planes, provenance,
            )
    return ContextConstraints(tuple(planes), tuple(provenance))


def gamma_step(world, agent, params, rng=None) -> Vec2:
    """One velocity decision for one agent against a frozen world.

    world must offer `network` (the lane network) and
    `neighbors_of(agent, radius, limit)` returning other agents
    nearest-first.  Returns the new velocity; the caller integrates.
    """
    if agent.state.route is not None:
        v_pref = preferred_velocity(agent, params)
    else:
        v_pref = Vec2(0.0, 0.0)
    kin = kinematic_set(agent, params.dt)
    neighbors = world.neighbors_of(
        agent, params.neighbor_radius, params.max_neighbors
    )
    planes = geometric_halfplanes(agent, neighbors, params, rng)
    context = contextual_halfplanes(agent, world.network, params)
    planes.extend(context.planes)
    v = solve_velocity_program(kin, planes, v_pref)
    if v is None:
        # jammed scene; mm/s accuracy on the relaxation level is plenty
        v = least_violation_fallback(kin, planes, tol=1e-3)
    return v
