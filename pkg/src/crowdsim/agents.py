"""Agent profiles, kinematic integration, footprints, and steering."""

import math
from dataclasses import dataclass, replace

from .geom import ConvexPolygon, Vec2

# below this speed an agent counts as standing still (jam detection)
STATIONARY_SPEED = 0.2
# heading is frozen below this speed to avoid jitter at rest
HEADING_SPEED = 0.05


@dataclass(frozen=True)
class AgentProfile:
    kind: str
    half_length: float
    half_width: float
    max_speed: float
    max_accel: float
    max_steer: float
    wheelbase: float
    responsibility: float = 0.5
    attention: float = 1.0

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("%s: dimensions must be positive" % self.kind)
        if self.max_speed <= 0 or self.max_accel <= 0:
            raise ValueError("%s: speed limits must be positive" % self.kind)
        if self.kind == "pedestrian":
            if self.wheelbase != 0.0:
                raise ValueError("pedestrian wheelbase must be 0")
        elif self.wheelbase <= 0:
            raise ValueError("%s: wheelbase must be positive" % self.kind)
        if not 0.0 <= self.responsibility <= 1.0:
            raise ValueError("responsibility outside [0, 1]")
        if not 0.0 <= self.attention <= 1.0:
            raise ValueError("attention outside [0, 1]")

    @property
    def is_pedestrian(self) -> bool:
        return self.kind == "pedestrian"

    @property
    def circumradius(self) -> float:
        if self.is_pedestrian:
            return self.half_width
        return math.hypot(self.half_length, self.half_width)


DEFAULT_PROFILES = {
    "car": AgentProfile("car", 2.3, 0.95, 6.0, 3.0, 0.6, 2.7),
    "bus": AgentProfile("bus", 5.5, 1.25, 5.0, 2.0, 0.5, 6.0),
    "bicycle": AgentProfile("bicycle", 0.9, 0.3, 3.0, 1.5, 0.7, 1.2),
    "motorcycle": AgentProfile("motorcycle", 1.1, 0.4, 6.0, 3.0, 0.7, 1.5),
    "pedestrian": AgentProfile(
        "pedestrian", 0.3, 0.3, 1.5, 1.5, 0.0, 0.0, responsibility=0.4
    ),
}


@dataclass
class AgentState:
    position: Vec2
    heading: float
    velocity: Vec2
    route: object = None
    stationary_time: float = 0.0


@dataclass
class Agent:
    """One live traffic participant: shared profile plus mutable state.

    lane_ref caches the vehicle's current lane (refreshed by the sim);
    crossing marks a pedestrian mid road-crossing, which suspends its
    road-edge constraint.
    """

    id: int
    profile: AgentProfile
    state: AgentState
    pref_speed: float
    behavior: str = "gamma"
    lane_ref: object = None
    crossing: bool = False
    # (lo, hi) arc interval of the route that runs over a road crossing
    cross_window: object = None
    # tracked arc position along the route; estimated per frame between
    # exact re-projections
    route_arc: object = None


def _tick_stationary(prev: float, speed: float, dt: float) -> float:
    return prev + dt if speed < STATIONARY_SPEED else 0.0


def integrate_bicycle(state, profile, speed, steer, dt) -> AgentState:
    """One kinematic bicycle step; the heading rate is speed/wheelbase * tan(steer)
    and the position advances along the midpoint heading."""
    rate = speed / profile.wheelbase * math.tan(steer)
    mid = state.heading + 0.5 * rate * dt
    new_heading = state.heading + rate * dt
    pos = Vec2(
        state.position.x + speed * dt * math.cos(mid),
        state.position.y + speed * dt * math.sin(mid),
    )
    vel = Vec2(speed * math.cos(new_heading), speed * math.sin(new_heading))
    return AgentState(
        position=pos,
        heading=new_heading,
        velocity=vel,
        route=state.route,
        stationary_time=_tick_stationary(state.stationary_time, abs(speed), dt),
    )


def integrate_holonomic(state, v: Vec2, dt) -> AgentState:
    speed = v.norm()
    heading = v.angle() if speed > HEADING_SPEED else state.heading
    return AgentState(
        position=state.position + v * dt,
        heading=heading,
        velocity=v,
        route=state.route,
        stationary_time=_tick_stationary(state.stationary_time, speed, dt),
    )


def pure_pursuit(state, profile, path, lookahead=None) -> float:
    """Steering angle that tracks the lookahead point on the path.

    The default lookahead grows with speed so the arc stays smooth; past the
    path end the final point remains the target.
    """
    if lookahead is None:
        lookahead = max(3.0, state.velocity.norm())
    arc, _ = path.project(state.position)
    target = path.point_at(arc + lookahead)
    alpha = (target - state.position).angle() - state.heading
    steer = math.atan(2.0 * profile.wheelbase * math.sin(alpha) / lookahead)
    return max(-profile.max_steer, min(profile.max_steer, steer))


def footprint(state, profile) -> ConvexPolygon:
    """Oriented rectangle for vehicles; pedestrians get a small octagon
    inscribed in their disc (collision tests use the exact disc instead)."""
    px, py = state.position
    if profile.is_pedestrian:
        r = profile.half_width
        pts = []
        for k in range(8):
            a = state.heading + k * math.pi / 4.0
            pts.append(Vec2(px + r * math.cos(a), py + r * math.sin(a)))
        return ConvexPolygon(pts)
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = profile.half_length, profile.half_width
    return ConvexPolygon(
        [
            Vec2(px + c * hl - s * hw, py + s * hl + c * hw),
            Vec2(px - c * hl - s * hw, py - s * hl + c * hw),
            Vec2(px - c * hl + s * hw, py - s * hl - c * hw),
            Vec2(px + c * hl + s * hw, py + s * hl - c * hw),
        ]
    )


def collides(a_state, a_prof, b_state, b_prof) -> bool:
    if a_prof.is_pedestrian and b_prof.is_pedestrian:
        rr = a_prof.half_width + b_prof.half_width
        return (a_state.position - b_state.position).norm_sq() <= rr * rr
    if a_prof.is_pedestrian:
        return _disc_hits_rect(a_state.position, a_prof.half_width, b_state, b_prof)
    if b_prof.is_pedestrian:
        return _disc_hits_rect(b_state.position, b_prof.half_width, a_state, a_prof)
    return _rects_overlap(a_state, a_prof, b_state, b_prof)


def _disc_hits_rect(center, radius, state, profile):
    # into the rectangle's body frame, then clamp to find the closest point
    d = center - state.position
    c, s = math.cos(state.heading), math.sin(state.heading)
    lx = c * d.x + s * d.y
    ly = -s * d.x + c * d.y
    qx = max(-profile.half_length, min(profile.half_length, lx))
    qy = max(-profile.half_width, min(profile.half_width, ly))
    dx, dy = lx - qx, ly - qy
    return dx * dx + dy * dy <= radius * radius


def _rects_overlap(a_state, a_prof, b_state, b_prof):
    # separating axes are the four rectangle edge normals
    ca, sa = math.cos(a_state.heading), math.sin(a_state.heading)
    cb, sb = math.cos(b_state.heading), math.sin(b_state.heading)
    axes = ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb))
    dx = b_state.position.x - a_state.position.x
    dy = b_state.position.y - a_state.position.y
    for ax, ay in axes:
        ea = a_prof.half_length * abs(ax * ca + ay * sa) + a_prof.half_width * abs(
            -ax * sa + ay * ca
        )
        eb = b_prof.half_length * abs(ax * cb + ay * sb) + b_prof.half_width * abs(
            -ax * sb + ay * cb
        )
        if abs(ax * dx + ay * dy) > ea + eb:
            return False
    return True
