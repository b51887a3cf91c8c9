"""Reactive lane-following baseline with time-to-collision speed control.

Agents stay glued to their route centerline and only modulate speed: the
command is the preferred speed scaled down linearly as the predicted time
to the nearest conflict drops below a threshold.  Like the context-aware
model, everything here reads a frozen previous-frame world.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geom import Vec2

HORIZON = 10.0
SAMPLE_DT = 0.1
# generous bound on how fast any neighbor can close in; only sizes the query radius
_MAX_CLOSING = 10.0
_TS = np.arange(0.0, HORIZON + SAMPLE_DT / 2, SAMPLE_DT)
_TS.setflags(write=False)


@dataclass(frozen=True)
class TtcParams:
    ttc_threshold: float = 4.0
    min_gap: float = 1.0

    def __post_init__(self):
        for name in ("ttc_threshold", "min_gap"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)


def _route_line(route):
    return route.polyline if hasattr(route, "polyline") else route


def _sample_route(line, arc0: float, speed: float, ts):
    """Positions along the centerline at arcs arc0 + speed*ts, clamped to the end.

    Vectorized equivalent of line.point_at over many arcs.
    """
    pts, cum = line.arrays()
    arcs = np.clip(arc0 + speed * ts, 0.0, line.length)
    idx = np.clip(np.searchsorted(cum, arcs, side="right") - 1, 0, len(pts) - 2)
    seg = cum[idx + 1] - cum[idx]
    frac = ((arcs - cum[idx]) / seg)[:, None]
    return pts[idx] + frac * (pts[idx + 1] - pts[idx])


def _own_track(agent, speed, ts):
    state = agent.state
    if state.route is not None:
        line = _route_line(state.route)
        arc0 = getattr(agent, "route_arc", None)
        if arc0 is None:
            arc0, _ = line.project(state.position)
        return _sample_route(line, arc0, speed, ts)
    fwd = Vec2(math.cos(state.heading), math.sin(state.heading))
    return np.array((state.position.x, state.position.y)) + np.outer(
        ts, (fwd.x * speed, fwd.y * speed)
    )


def _ttc_table(world, params, ts):
    """First-contact time over the ts grid for every agent, as {id: seconds}.

    Equivalent to calling ttc once per agent, but the pairwise distance
    work runs as array operations per frame.  Pairs are prefiltered by a
    closing-speed bound: both tracks move at most speed*t from their start,
    so anything farther than min_gap plus the combined travel can never
    touch inside the swept window.  Surviving pairs go through in slabs so
    peak memory stays flat at large populations.
    """
    ids, q, v = world.agent_arrays()
    n = len(ids)
    gap_sq = params.min_gap * params.min_gap
    out = {aid: math.inf for aid in ids}
    if n <= 1:
        return out
    span = float(ts[-1])
    s = np.hypot(v[:, 0], v[:, 1])
    dx = q[:, None, 0] - q[None, :, 0]
    dy = q[:, None, 1] - q[None, :, 1]
    reach = params.min_gap + span * (s[:, None] + s[None, :]) + 1e-6
    cand = dx * dx + dy * dy <= reach * reach
    np.fill_diagonal(cand, False)
    ii, jj = np.nonzero(cand)
    if len(ii) == 0:
        return out
    track = q[:, None, :] + v[:, None, :] * ts[None, :, None]
    mine = np.empty_like(track)
    for row in np.unique(ii):
        ag = world.agents[ids[row]]
        mine[row] = _own_track(ag, ag.state.velocity.norm(), ts)
    anyt = np.zeros((n, len(ts)), dtype=bool)
    for lo in range(0, len(ii), 8192):
        i_sl = ii[lo : lo + 8192]
        j_sl = jj[lo : lo + 8192]
        diff = mine[i_sl] - track[j_sl]
        hits = np.einsum("ptk,ptk->pt", diff, diff) <= gap_sq
        # ii is sorted, so every i-group inside a slab is contiguous
        starts = np.flatnonzero(np.r_[True, i_sl[1:] != i_sl[:-1]])
        seg = np.bitwise_or.reduceat(hits, starts, axis=0)
        anyt[i_sl[starts]] |= seg
    idx = anyt.argmax(axis=1)
    got = anyt[np.arange(n), idx]
    for row, aid in enumerate(ids):
        if got[row]:
            out[aid] = float(ts[idx[row]])
    return out


def ttc(agent, world, params: TtcParams, horizon: float = HORIZON) -> float:
    """Seconds until this agent first comes within min_gap of another agent.

    The agent is advanced along its route at its current speed; every other
    agent extrapolates at constant velocity.  Sampled at 0.1 s resolution
    out to horizon seconds; math.inf when nothing closes within it.
    """
    state = agent.state
    speed = state.velocity.norm()
    ts = _TS[: np.searchsorted(_TS, horizon, side="right")]
    scratch = getattr(world, "scratch", None)
    if scratch is not None and getattr(world, "agent_arrays", None) is not None:
        memo = scratch()
        key = ("ttc_table", params.min_gap, len(ts))
        table = memo.get(key)
        if table is None:
            table = _ttc_table(world, params, ts)
            memo[key] = table
        t = table.get(agent.id)
        if t is not None:
            return t
    radius = horizon * (speed + _MAX_CLOSING) + params.min_gap
    others = world.neighbors_of(agent, radius, None)
    if not others:
        return math.inf
    mine = _own_track(agent, speed, ts)
    q = np.array([(o.state.position.x, o.state.position.y) for o in others])
    v = np.array([(o.state.velocity.x, o.state.velocity.y) for o in others])
    diff = (q[:, None, :] + v[:, None, :] * ts[None, :, None]) - mine[None, :, :]
    dsq = (diff * diff).sum(axis=2)
    cols = (dsq <= params.min_gap * params.min_gap).any(axis=0)
    if not cols.any():
        return math.inf
    return float(ts[int(np.argmax(cols))])


def ttc_step(world, agent, params: TtcParams) -> float:
    """Speed command: preferred speed ramped down linearly below the threshold."""
    # beyond the threshold the ramp saturates, so a shorter sweep suffices
    t = ttc(agent, world, params, horizon=params.ttc_threshold)
    if math.isinf(t):
        return agent.pref_speed
    return agent.pref_speed * max(0.0, min(1.0, t / params.ttc_threshold))


def follow_route(agent, speed: float, dt: float):
    """Advance strictly along the centerline: (position, heading, velocity).

    Heading is the tangent at the new arc, so lateral error never accrues.
    """
    state = agent.state
    if state.route is None:
        return state.position, state.heading, Vec2(0.0, 0.0)
    line = _route_line(state.route)
    arc0 = getattr(agent, "route_arc", None)
    if arc0 is None:
        arc0, _ = line.project(state.position)
    arc = min(arc0 + speed * dt, line.length)
    tang = line.tangent_at(arc)
    return line.point_at(arc), tang.angle(), tang * speed
