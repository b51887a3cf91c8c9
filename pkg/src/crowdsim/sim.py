"""World loop: frozen per-frame snapshots, spawning, despawning, metrics.

Each frame every agent's behavior model is evaluated against the committed
previous snapshot, so evaluation order cannot matter and frames are
reproducible from (seed, config) alone.  Agents that leave the region of
interest, finish their route, or stand still past the jam threshold are
removed and replaced to hold the population at a target count.
"""

import json
import math
import os
import random
import time as _time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import behavior_gamma as _bg
from . import behavior_ttc as _bt
from .agents import (
    DEFAULT_PROFILES,
    Agent,
    AgentState,
    _tick_stationary,
    collides,
    integrate_holonomic,
)
from .behavior_gamma import GammaParams
from .behavior_ttc import TtcParams
from .geom import Polyline, Vec2
from .roadnet import LaneRef, OffNetwork, locate, route_candidates

DT = 0.05
T_JAM = 30.0
# spawn order also fixes how ties are broken, so keep it explicit
CLASS_ORDER = ("car", "bus", "bicycle", "motorcycle", "pedestrian")
DEFAULT_CLASS_MIX = {
    "car": 0.50,
    "bus": 0.10,
    "bicycle": 0.15,
    "motorcycle": 0.15,
    "pedestrian": 0.10,
}
METRICS_FIELDS = ("time", "class", "avg_speed", "congestion_factor", "frame_ms")


class SpawnStarved(Warning):
    """All placement attempts for one spawn slot collided; count undershoots."""


def _default_mix():
    return dict(DEFAULT_CLASS_MIX)


def _default_profiles():
    return dict(DEFAULT_PROFILES)


@dataclass(frozen=True)
class SimConfig:
    dt: float = DT
    t_jam: float = T_JAM
    behavior: str = "gamma"
    class_mix: dict = field(default_factory=_default_mix)
    profiles: dict = field(default_factory=_default_profiles)
    gamma: GammaParams = field(default_factory=GammaParams)
    ttc: TtcParams = field(default_factory=TtcParams)
    route_horizon: float = 120.0
    max_routes: int = 8
    # redraw the route once less than this much of it remains
    reroute_below: float = 30.0
    spawn_attempts: int = 20
    ped_cross_prob: float = 0.3
    speed_jitter: tuple = (0.7, 1.0)


@dataclass(frozen=True)
class SimMetrics:
    avg_speed: dict
    congestion_factor: float
    frame_ms: float


class SimLog:
    """Append-only run history shared by every snapshot of one lineage.

    frames: (time, frame_ms, {class: (speed_sum, samples)}) per committed frame.
    removals: (time, agent_id, reason) with reason in {roi, end, jam, cull}.
    """

    __slots__ = ("frames", "removals")

    def __init__(self):
        self.frames = []
        self.removals = []


@dataclass(frozen=True)
class WorldSnapshot:
    frame: int
    time: float
    agents: dict
    network: object
    sidewalks: object = None
    occupancy: object = None
    seed: int = 0
    next_id: int = 0
    config: SimConfig = field(default_factory=SimConfig)
    log: SimLog = field(default_factory=SimLog)
    _index: object = field(default=None, repr=False, compare=False)
    _arrays: object = field(default=None, repr=False, compare=False)
    _scratch: object = field(default=None, repr=False, compare=False)

    def scratch(self) -> dict:
        """Memo space for tables derived from this snapshot; dropped on commit."""
        if self._scratch is None:
            object.__setattr__(self, "_scratch", {})
        return self._scratch

    def neighbors_of(self, agent, radius, limit):
        """Agents within radius of agent, nearest first; ties by id."""
        index = self._spatial_index()
        if index is None:
            return []
        tree, ids, rows, balls = index
        p = agent.state.position
        row = rows.get(agent.id)
        if row is None:
            hits = tree.query_ball_point((p.x, p.y), radius)
        else:
            table = balls.get(radius)
            if table is None:
                # one vectorized query covers every agent at this radius
                table = tree.query_ball_point(self.agent_arrays()[1], radius)
                balls[radius] = table
            hits = table[row]
        px, py = p.x, p.y
        found = []
        for i in hits:
            aid = ids[i]
            if aid == agent.id:
                continue
            other = self.agents[aid]
            q = other.state.position
            found.append((math.hypot(q.x - px, q.y - py), aid, other))
        found.sort(key=lambda t: t[:2])
        return [other for _, _, other in found[:limit]]

    def agent_arrays(self):
        """(sorted ids, positions Nx2, velocities Nx2) built once per snapshot."""
        if self._arrays is None:
            ids = sorted(self.agents)
            pos = np.empty((len(ids), 2))
            vel = np.empty((len(ids), 2))
            for row, aid in enumerate(ids):
                st = self.agents[aid].state
                pos[row, 0] = st.position.x
                pos[row, 1] = st.position.y
                vel[row, 0] = st.velocity.x
                vel[row, 1] = st.velocity.y
            object.__setattr__(self, "_arrays", (ids, pos, vel))
        return self._arrays

    def _spatial_index(self):
        if self._index is None:
            if not self.agents:
                return None
            ids, pos, _vel = self.agent_arrays()
            rows = {aid: row for row, aid in enumerate(ids)}
            object.__setattr__(self, "_index", (cKDTree(pos), ids, rows, {}))
        return self._index


def make_world(network, sidewalks=None, occupancy=None, seed=0, config=None):
    return WorldSnapshot(
        frame=0,
        time=0.0,
        agents={},
        network=network,
        sidewalks=sidewalks,
        occupancy=occupancy,
        seed=seed,
        config=config if config is not None else SimConfig(),
    )


def add_agent(world, profile, state, pref_speed, behavior="gamma"):
    """Insert one agent; returns (world, agent_id)."""
    aid = world.next_id
    agents = dict(world.agents)
    agents[aid] = Agent(
        id=aid, profile=profile, state=state, pref_speed=pref_speed, behavior=behavior
    )
    return replace(world, agents=agents, next_id=aid + 1, _index=None, _arrays=None, _scratch=None), aid


def _line(route):
    return route.polyline if hasattr(route, "polyline") else route


def _substream(seed, agent_id, frame, salt=0):
    # stable per-(agent, frame) stream so threading cannot change outcomes
    mix = (seed * 1000003 + agent_id) * 1000003 + frame
    return random.Random(mix * 4 + salt)


def _worker_count():
    raw = os.environ.get("CROWDSIM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _propose(world, agent, dt):
    """Next state for one agent, reading only the frozen snapshot."""
    cfg = world.config
    if agent.behavior == "gamma":
        sub = None
        if agent.profile.attention < 1.0:
            sub = _substream(world.seed, agent.id, world.frame)
        v = _bg.gamma_step(world, agent, cfg.gamma, rng=sub)
        return integrate_holonomic(agent.state, v, dt)
    if agent.behavior == "ttc":
        speed = _bt.ttc_step(world, agent, cfg.ttc)
        pos, heading, vel = _bt.follow_route(agent, speed, dt)
        return AgentState(
            position=pos,
            heading=heading,
            velocity=vel,
            route=agent.state.route,
            stationary_time=_tick_stationary(agent.state.stationary_time, speed, dt),
        )
    # externally driven (planner ego): held unless the caller supplies motion
    return replace(agent.state)


def _track_route(world, agent, dt):
    """Per-frame route bookkeeping on the fresh post-integration copy.

    The arc position is advanced by the distance moved and re-projected
    exactly only on this agent's stagger frames, keeping the per-frame cost
    flat; the full lane lookup and route extension run on the same cadence.
    """
    st = agent.state
    if st.route is None:
        if not agent.profile.is_pedestrian:
            _refresh_context(world, agent)
        return
    if agent.route_arc is not None:
        agent.route_arc += st.velocity.norm() * dt
    stagger = (world.frame + agent.id) % 5 == 0
    if agent.profile.is_pedestrian:
        if agent.cross_window is not None:
            arc, _ = _line(st.route).project(st.position)
            agent.route_arc = arc
            lo, hi = agent.cross_window
            agent.crossing = lo <= arc < hi
        elif stagger or agent.route_arc is None:
            arc, _ = _line(st.route).project(st.position)
            agent.route_arc = arc
        return
    near_end = (
        agent.route_arc is not None
        and _line(st.route).length - agent.route_arc
        < world.config.reroute_below + 2.0
    )
    if stagger or near_end or agent.lane_ref is None or agent.route_arc is None:
        _refresh_context(world, agent)


def _refresh_context(world, agent):
    """Exact lane lookup and route extension for one vehicle."""
    cfg = world.config
    st = agent.state
    try:
        agent.lane_ref = locate(world.network, st.position, st.heading)
    except OffNetwork:
        agent.lane_ref = None
        return
    if st.route is None:
        return
    line = _line(st.route)
    arc, _ = line.project(st.position)
    agent.route_arc = arc
    remaining = line.length - arc
    if remaining >= cfg.reroute_below:
        return
    rng = _substream(world.seed, agent.id, world.frame, salt=1)
    cands = route_candidates(
        world.network, agent.lane_ref, cfg.route_horizon, cfg.max_routes, rng
    )
    if not cands:
        return
    pick = cands[rng.randrange(len(cands))]
    # a redraw that cannot see farther than the current route is a dead end
    if pick.polyline.length > remaining + 1.0:
        st.route = pick
        arc, _ = pick.polyline.project(st.position)
        agent.route_arc = arc


def step(world, dt=DT, target_count=None, rng=None, ego_motions=None):
    """Advance one frame; with target_count also despawn/spawn afterwards."""
    if target_count is not None and rng is None:
        raise ValueError("target_count requires rng")
    t0 = _time.perf_counter()
    cfg = world.config
    aids = sorted(world.agents)
    workers = _worker_count()
    if workers > 1 and len(aids) >= 32:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            states = list(
                pool.map(lambda aid: _propose(world, world.agents[aid], dt), aids)
            )
    else:
        states = [_propose(world, world.agents[aid], dt) for aid in aids]

    agents = {}
    for aid, st in zip(aids, states):
        if ego_motions is not None and aid in ego_motions:
            st = ego_motions[aid]
        fresh = replace(world.agents[aid], state=st)
        if _managed(fresh):
            _track_route(world, fresh, dt)
        agents[aid] = fresh

    frame = world.frame + 1
    now = frame * dt
    sums = {}
    for a in agents.values():
        tot, n = sums.get(a.profile.kind, (0.0, 0))
        sums[a.profile.kind] = (tot + a.state.velocity.norm(), n + 1)

    next_id = world.next_id
    if target_count is not None:
        next_id = _despawn_spawn(world, agents, target_count, rng, now)

    world.log.frames.append((now, (_time.perf_counter() - t0) * 1000.0, sums))
    return replace(
        world, frame=frame, time=now, agents=agents, next_id=next_id, _index=None, _arrays=None, _scratch=None
    )


def spawn_despawn(world, target_count, rng):
    """Removal and top-up pass alone, leaving frame and clock untouched."""
    agents = dict(world.agents)
    next_id = _despawn_spawn(world, agents, target_count, rng, world.time)
    return replace(world, agents=agents, next_id=next_id, _index=None, _arrays=None, _scratch=None)


def _managed(agent):
    """Externally driven agents are exempt from despawning and counting."""
    return agent.behavior in ("gamma", "ttc")


def _despawn_spawn(world, agents, target_count, rng, now):
    cfg = world.config
    log = world.log
    for aid in sorted(agents):
        agent = agents[aid]
        if not _managed(agent):
            continue
        st = agent.state
        reason = None
        if not world.network.roi_contains(st.position):
            reason = "roi"
        elif st.stationary_time > cfg.t_jam:
            reason = "jam"
        elif st.route is not None:
            line = _line(st.route)
            arc = agent.route_arc
            if arc is None:
                arc, _ = line.project(st.position)
            if line.length - arc < 0.5:
                reason = "end"
        if reason is not None:
            del agents[aid]
            log.removals.append((now, aid, reason))

    managed = sorted(aid for aid, a in agents.items() if _managed(a))
    while len(managed) > target_count:
        aid = managed.pop()
        del agents[aid]
        log.removals.append((now, aid, "cull"))

    next_id = world.next_id
    while len(managed) < target_count:
        agent = _spawn_one(world, agents, rng, next_id)
        if agent is None:
            warnings.warn(
                "no collision-free spawn after %d attempts" % cfg.spawn_attempts,
                SpawnStarved,
            )
            break
        agents[next_id] = agent
        managed.append(next_id)
        next_id += 1
    return next_id


def _draw_class(rng, cfg, have_walks):
    weights = [
        (kind, cfg.class_mix.get(kind, 0.0))
        for kind in CLASS_ORDER
        if cfg.class_mix.get(kind, 0.0) > 0.0
    ]
    if not have_walks:
        weights = [(k, w) for k, w in weights if k != "pedestrian"]
    total = sum(w for _, w in weights)
    if total <= 0:
        raise ValueError("class mix is empty")
    r = rng.random() * total
    acc = 0.0
    for kind, w in weights:
        acc += w
        if r < acc:
            return kind
    return weights[-1][0]


def _overlaps(state, profile, agents):
    for other in agents.values():
        rsum = profile.circumradius + other.profile.circumradius
        d = state.position - other.state.position
        if d.norm_sq() <= rsum * rsum and collides(
            state, profile, other.state, other.profile
        ):
            return True
    return False


def _spawn_one(world, agents, rng, next_id):
    cfg = world.config
    walks = world.sidewalks
    have_walks = walks is not None and len(walks.sidewalks) > 0
    for _ in range(cfg.spawn_attempts):
        kind = _draw_class(rng, cfg, have_walks)
        profile = cfg.profiles[kind]
        if kind == "pedestrian":
            built = _ped_site(world, rng)
        else:
            built = _vehicle_site(world, rng)
        if built is None:
            continue
        state, cross_window = built
        if _overlaps(state, profile, agents):
            continue
        pref = profile.max_speed * rng.uniform(*cfg.speed_jitter)
        agent = Agent(
            id=next_id,
            profile=profile,
            state=state,
            pref_speed=pref,
            behavior=cfg.behavior,
            cross_window=cross_window,
            route_arc=0.0,
        )
        if not profile.is_pedestrian:
            _refresh_context(world, agent)
        return agent
    return None


def _vehicle_site(world, rng):
    cfg = world.config
    network = world.network
    spawn_ids = sorted(network.spawn_segment_ids)
    if not spawn_ids:
        raise ValueError("network has no spawn segments")
    sid = spawn_ids[rng.randrange(len(spawn_ids))]
    line = network.segments[sid].centerline
    arc = rng.uniform(0.0, line.length)
    cands = route_candidates(
        network, LaneRef(sid, arc), cfg.route_horizon, cfg.max_routes, rng
    )
    route = cands[rng.randrange(len(cands))]
    if route.polyline.length < 2.0:
        return None
    tang = line.tangent_at(arc)
    state = AgentState(
        position=line.point_at(arc),
        heading=tang.angle(),
        velocity=Vec2(0.0, 0.0),
        route=route,
    )
    return state, None


def _sub_points(line, a0, a1):
    """Vertices of line between arcs a0 < a1, endpoints interpolated."""
    pts = [line.point_at(a0)]
    for p, c in zip(line.points, line.cum_arcs):
        if a0 + 1e-9 < c < a1 - 1e-9:
            pts.append(p)
    pts.append(line.point_at(a1))
    return pts


def _walk_leg(line, arc, direction):
    if direction > 0:
        return _sub_points(line, arc, line.length)
    return list(reversed(_sub_points(line, 0.0, arc)))


def _dedupe(pts):
    out = [pts[0]]
    for p in pts[1:]:
        if (p - out[-1]).norm() >= 1e-9:
            out.append(p)
    return out


def _ped_site(world, rng):
    walks = world.sidewalks
    wi = rng.randrange(len(walks.sidewalks))
    line = walks.sidewalks[wi]
    arc = rng.uniform(0.0, line.length)
    direction = 1 if rng.random() < 0.5 else -1
    cross = None
    if rng.random() < world.config.ped_cross_prob:
        cross = _crossing_ahead(walks, wi, arc, direction)

    if cross is None:
        pts = _dedupe(_walk_leg(line, arc, direction))
        window = None
    else:
        cross_arc, other, other_arc = cross
        if direction > 0:
            leg1 = _sub_points(line, arc, cross_arc)
        else:
            leg1 = list(reversed(_sub_points(line, cross_arc, arc)))
        other_line = walks.sidewalks[other]
        landing = other_line.point_at(other_arc)
        leg3 = _walk_leg(other_line, other_arc, 1 if rng.random() < 0.5 else -1)
        pts = _dedupe(leg1 + [landing] + leg3[1:])
        lo = sum((b - a).norm() for a, b in zip(leg1, leg1[1:]))
        window = (lo, lo + (landing - leg1[-1]).norm())

    if len(pts) < 2:
        return None
    route = Polyline(pts)
    if route.length < 2.0:
        return None
    tang = route.tangent_at(0.0)
    state = AgentState(
        position=pts[0], heading=tang.angle(), velocity=Vec2(0.0, 0.0), route=route
    )
    return state, window


def _crossing_ahead(walks, wi, arc, direction):
    """Nearest crossing reachable walking from arc in direction, or None."""
    best = None
    for a, arc_a, b, arc_b in walks.crossings:
        for side, sarc, other, oarc in ((a, arc_a, b, arc_b), (b, arc_b, a, arc_a)):
            if side != wi:
                continue
            gap = (sarc - arc) * direction
            if gap < 0.5:
                continue
            if best is None or gap < best[0]:
                best = (gap, sarc, other, oarc)
    if best is None:
        return None
    return best[1], best[2], best[3]


def metrics(world, window):
    """Per-class mean speed, jam fraction, and frame wall time over window."""
    if window > world.time + 1e-9:
        raise ValueError("window exceeds elapsed time")
    t0 = world.time - window
    speed_sums = {}
    wall = []
    for t, ms, sums in world.log.frames:
        if t0 < t <= world.time:
            wall.append(ms)
            for kind, (tot, n) in sums.items():
                acc_tot, acc_n = speed_sums.get(kind, (0.0, 0))
                speed_sums[kind] = (acc_tot + tot, acc_n + n)
    avg = {k: tot / n for k, (tot, n) in speed_sums.items() if n > 0}

    present = set(world.agents)
    jams = 0
    for t, aid, reason in world.log.removals:
        if t0 < t <= world.time:
            present.add(aid)
            if reason == "jam":
                jams += 1
    congestion = jams / len(present) if present else 0.0
    frame_ms = sum(wall) / len(wall) if wall else 0.0
    return SimMetrics(avg_speed=avg, congestion_factor=congestion, frame_ms=frame_ms)


def metrics_rows(world, m):
    """CSV rows (one per class) matching METRICS_FIELDS."""
    return [
        (world.time, kind, m.avg_speed[kind], m.congestion_factor, m.frame_ms)
        for kind in sorted(m.avg_speed)
    ]


def trace_record(world):
    return {
        "frame": world.frame,
        "time": world.time,
        "agents": [
            {
                "id": a.id,
                "class": a.profile.kind,
                "x": a.state.position.x,
                "y": a.state.position.y,
                "heading": a.state.heading,
                "vx": a.state.velocity.x,
                "vy": a.state.velocity.y,
                "behavior": a.behavior,
            }
            for _, a in sorted(world.agents.items())
        ],
    }


def write_trace(fh, world):
    fh.write(json.dumps(trace_record(world), separators=(",", ":")))
    fh.write("\n")
