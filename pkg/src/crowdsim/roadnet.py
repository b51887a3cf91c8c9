"""Road context: lane network, sidewalks, occupancy region, and file I/O.

The network file format is JSON (see save_network/load_network), version
tag "crowdsim-net/1".  Networks are immutable after construction; every
query here is read-only and safe to call from concurrent readers.
"""

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .geom import Polyline, Vec2

FORMAT_TAG = "crowdsim-net/1"
# spatial index sample spacing along centerlines
_SAMPLE_STEP = 2.0
# heading disagreement worth this many meters of distance when locating
_HEADING_WEIGHT = 2.0
# how far from a sidewalk position a crossing is still usable
_CROSSING_WINDOW = 5.0


class SchemaError(ValueError):
    pass


class ParamError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class OffNetwork(ValueError):
    pass


class LaneRef(NamedTuple):
    segment_id: str
    arc: float


class SidewalkRef(NamedTuple):
    sidewalk: int
    arc: float


@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: Polyline
    width: float
    successor_ids: tuple
    left_opposite_boundary: Optional[Polyline] = None
    right_road_edge: Optional[Polyline] = None


@dataclass(frozen=True)
class RouteCandidate:
    segment_ids: tuple
    polyline: Polyline


class LaneNetwork:
    def __init__(self, segments, region_of_interest=(), spawn_segment_ids=()):
        self.segments = {}
        for seg in segments:
            if seg.id in self.segments:
                raise ValidationError("segment %s: duplicate id" % seg.id)
            if seg.width <= 0:
                raise ValidationError("segment %s: width must be positive" % seg.id)
            if seg.centerline.length <= 0:
                raise ValidationError("segment %s: zero-length centerline" % seg.id)
            self.segments[seg.id] = seg
        for seg in self.segments.values():
            for succ in seg.successor_ids:
                if succ not in self.segments:
                    raise ValidationError("segment %s" % succ)
        for sid in spawn_segment_ids:
            if sid not in self.segments:
                raise ValidationError("segment %s" % sid)
        self.region_of_interest = tuple(region_of_interest)
        self.spawn_segment_ids = tuple(spawn_segment_ids)
        self.max_width = max((s.width for s in self.segments.values()), default=0.0)
        self._build_index()

    def _build_index(self):
        pts = []
        self._sample_refs = []
        for sid in sorted(self.segments):
            line = self.segments[sid].centerline
            n = max(2, int(math.ceil(line.length / _SAMPLE_STEP)) + 1)
            for k in range(n):
                arc = line.length * k / (n - 1)
                p = line.point_at(arc)
                pts.append((p.x, p.y))
                self._sample_refs.append((sid, arc))
        self._kd = cKDTree(np.array(pts)) if pts else None

    def roi_contains(self, point: Vec2) -> bool:
        """Even-odd test against the region-of-interest polygon; an empty
        region means everywhere is of interest."""
        poly = self.region_of_interest
        if not poly:
            return True
        inside = False
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            if (a.y > point.y) != (b.y > point.y):
                t = (point.y - a.y) / (b.y - a.y)
                if point.x < a.x + t * (b.x - a.x):
                    inside = not inside
        return inside


def locate(network: LaneNetwork, position: Vec2, heading: float) -> LaneRef:
    """Map a pose onto the nearest lane, penalizing heading disagreement so a
    point between opposite lanes lands on the one it travels along."""
    if network._kd is None:
        raise OffNetwork("empty network")
    limit = 2.0 * network.max_width
    idx = network._kd.query_ball_point(
        (position.x, position.y), limit + _SAMPLE_STEP
    )
    cand = sorted({network._sample_refs[i][0] for i in idx})
    best = None
    best_score = math.inf
    for sid in cand:
        line = network.segments[sid].centerline
        arc, pt = line.project(position)
        dist = (pt - position).norm()
        if dist > limit:
            continue
        tang = line.tangent_at(arc)
        mis = 0.5 * (1.0 - math.cos(heading - tang.angle()))
        score = dist + _HEADING_WEIGHT * mis
        if score < best_score:
            best_score = score
            best = LaneRef(sid, arc)
    if best is None:
        raise OffNetwork("no lane within %.1f m" % limit)
    return best


def nearest_segment(network: LaneNetwork, position: Vec2, radius):
    """Closest segment by centerline distance within radius, or None.
    Unlike locate this ignores heading and never raises."""
    if network._kd is None:
        return None
    idx = network._kd.query_ball_point(
        (position.x, position.y), radius + _SAMPLE_STEP
    )
    best = None
    best_dist = radius
    for sid in sorted({network._sample_refs[i][0] for i in idx}):
        dist = network.segments[sid].centerline.distance_to(position)
        if dist < best_dist:
            best_dist = dist
            best = network.segments[sid]
    return best


def route_candidates(network, ref: LaneRef, horizon, max_routes, rng):
    """All successor chains from ref out to the horizon arc-length,
    uniformly subsampled when there are more than max_routes."""
    first = network.segments[ref.segment_id]
    chains = []
    # cyclic graphs with a very deep horizon would otherwise enumerate
    # exponentially many chains; beyond the cap the tail is dropped
    cap = 4096

    def walk(seg, chain, remaining):
        if len(chains) >= cap:
            return
        chain = chain + (seg.id,)
        rest = remaining - (
            seg.centerline.length - (ref.arc if len(chain) == 1 else 0.0)
        )
        if rest <= 0 or not seg.successor_ids:
            chains.append(chain)
            return
        for succ in seg.successor_ids:
            walk(network.segments[succ], chain, rest)

    walk(first, (), horizon)
    if len(chains) > max_routes:
        chains = rng.sample(chains, max_routes)
    return [_assemble_route(network, c, ref.arc) for c in chains]


def _assemble_route(network, chain, start_arc):
    pts = []
    for k, sid in enumerate(chain):
        line = network.segments[sid].centerline
        if k == 0:
            arc = min(start_arc, line.length)
            pts.append(line.point_at(arc))
            for i, cum in enumerate(line.cum_arcs):
                if cum > arc + 1e-9:
                    pts.extend(line.points[i:])
                    break
        else:
            start = 1 if pts and (line.points[0] - pts[-1]).norm() < 1e-6 else 0
            pts.extend(line.points[start:])
    dedup = [pts[0]]
    for p in pts[1:]:
        if (p - dedup[-1]).norm() >= 1e-9:
            dedup.append(p)
    if len(dedup) < 2:
        dedup.append(dedup[-1] + Vec2(1e-6, 0.0))
    return RouteCandidate(tuple(chain), Polyline(dedup))


class SidewalkNetwork:
    def __init__(self, sidewalks, crossings=()):
        self.sidewalks = list(sidewalks)
        for k, (a, arc_a, b, arc_b) in enumerate(crossings):
            for side, arc in ((a, arc_a), (b, arc_b)):
                if not 0 <= side < len(self.sidewalks):
                    raise ValidationError("crossing %d: sidewalk %s" % (k, side))
                if not -0.1 <= arc <= self.sidewalks[side].length + 0.1:
                    raise ValidationError(
                        "crossing %d: arc %.2f off sidewalk %d" % (k, arc, side)
                    )
        self.crossings = [tuple(c) for c in crossings]


def opposite_sidewalk(network: SidewalkNetwork, ref: SidewalkRef):
    """The crossing-linked position reachable within the search window, or
    None when no crossing is close enough."""
    best = None
    best_gap = _CROSSING_WINDOW
    for a, arc_a, b, arc_b in network.crossings:
        for (sa, aa, sb, ab) in ((a, arc_a, b, arc_b), (b, arc_b, a, arc_a)):
            if sa != ref.sidewalk:
                continue
            gap = abs(aa - ref.arc)
            if gap <= best_gap:
                best_gap = gap
                best = SidewalkRef(sb, ab)
    return best


class OccupancyRegion:
    """Union of lane corridors (each centerline thickened by width/2)."""

    def __init__(self, corridors, resolution=1.0):
        if resolution <= 0:
            raise ValidationError("resolution must be positive")
        self.corridors = list(corridors)
        self.resolution = resolution
        self.max_halfwidth = max((hw for _, hw in self.corridors), default=0.0)
        pts = []
        self._refs = []
        for k, (line, _) in enumerate(self.corridors):
            n = max(2, int(math.ceil(line.length / _SAMPLE_STEP)) + 1)
            for i in range(n):
                p = line.point_at(line.length * i / (n - 1))
                pts.append((p.x, p.y))
                self._refs.append(k)
        self._kd = cKDTree(np.array(pts)) if pts else None


def occupancy_contains(region: OccupancyRegion, point: Vec2) -> bool:
    if region._kd is None:
        return False
    idx = region._kd.query_ball_point(
        (point.x, point.y), region.max_halfwidth + _SAMPLE_STEP
    )
    for k in sorted({region._refs[i] for i in idx}):
        line, hw = region.corridors[k]
        if line.distance_to(point) <= hw + 1e-9:
            return True
    return False


def crop(region: OccupancyRegion, pose, extent) -> np.ndarray:
    """Boolean occupancy grid centered on the pose; rows extend along the
    pose heading, so row index sweeps laterally across the road."""
    position, heading = pose
    if extent <= 0:
        raise ValidationError("extent must be positive")
    res = region.resolution
    n = max(1, int(round(extent / res)))
    fwd = Vec2(math.cos(heading), math.sin(heading))
    left = fwd.perp()
    out = np.zeros((n, n), dtype=bool)
    half = (n - 1) / 2.0
    for i in range(n):
        lat = (half - i) * res
        base = position + left * lat
        for j in range(n):
            p = base + fwd * ((j - half) * res)
            out[i, j] = occupancy_contains(region, p)
    return out


def occupancy_from_lanes(network: LaneNetwork, resolution=1.0) -> OccupancyRegion:
    corridors = [
        (seg.centerline, seg.width / 2.0)
        for _, seg in sorted(network.segments.items())
    ]
    return OccupancyRegion(corridors, resolution)


def _polyline_from_json(raw, what):
    if not isinstance(raw, list) or len(raw) < 2:
        raise SchemaError("%s: polyline needs at least 2 points" % what)
    pts = []
    for p in raw:
        if not isinstance(p, list) or len(p) != 2:
            raise SchemaError("%s: bad point %r" % (what, p))
        pts.append(Vec2(float(p[0]), float(p[1])))
    return Polyline(pts)


def _polyline_to_json(line):
    return [[p.x, p.y] for p in line.points]


def load_network(path):
    """Read a crowdsim-net/1 file into (lanes, sidewalks, occupancy)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError("not valid JSON: %s" % e) from e
    if not isinstance(raw, dict) or raw.get("format") != FORMAT_TAG:
        raise SchemaError("missing or unknown format tag, expected %r" % FORMAT_TAG)
    if "lane_segments" not in raw:
        raise SchemaError("missing key lane_segments")
    segments = []
    for entry in raw["lane_segments"]:
        if not isinstance(entry, dict) or "id" not in entry:
            raise SchemaError("lane segment without id")
        sid = str(entry["id"])
        for key in ("centerline", "width_m"):
            if key not in entry:
                raise SchemaError("segment %s: missing %s" % (sid, key))
        opt = {}
        for key, attr in (
            ("left_opposite_boundary", "left_opposite_boundary"),
            ("right_road_edge", "right_road_edge"),
        ):
            if entry.get(key) is not None:
                opt[attr] = _polyline_from_json(entry[key], "segment %s" % sid)
        segments.append(
            LaneSegment(
                id=sid,
                centerline=_polyline_from_json(
                    entry["centerline"], "segment %s" % sid
                ),
                width=float(entry["width_m"]),
                successor_ids=tuple(str(s) for s in entry.get("successors", [])),
                **opt,
            )
        )
    roi = [
        Vec2(float(p[0]), float(p[1])) for p in raw.get("region_of_interest", [])
    ]
    lanes = LaneNetwork(
        segments,
        region_of_interest=roi,
        spawn_segment_ids=tuple(str(s) for s in raw.get("spawn_segments", [])),
    )
    sidewalks = [
        _polyline_from_json(s, "sidewalk %d" % k)
        for k, s in enumerate(raw.get("sidewalks", []))
    ]
    crossings = []
    for k, c in enumerate(raw.get("crossings", [])):
        if not isinstance(c, list) or len(c) != 4:
            raise SchemaError("crossing %d: expected [a, arc_a, b, arc_b]" % k)
        crossings.append((int(c[0]), float(c[1]), int(c[2]), float(c[3])))
    walks = SidewalkNetwork(sidewalks, crossings)
    return lanes, walks, occupancy_from_lanes(lanes)


def _int_param(params, key, lo, hi, default=None):
    raw = params.get(key, default)
    if raw is None:
        raise ParamError("missing parameter %s" % key)
    val = int(raw)
    if not lo <= val <= hi:
        raise ParamError("%s=%s out of range [%d, %d]" % (key, raw, lo, hi))
    return val


def _float_param(params, key, lo, hi, default=None):
    raw = params.get(key, default)
    if raw is None:
        raise ParamError("missing parameter %s" % key)
    val = float(raw)
    if not lo <= val <= hi:
        raise ParamError("%s=%s out of range [%g, %g]" % (key, raw, lo, hi))
    return val


def _unit(theta):
    return Vec2(math.cos(theta), math.sin(theta))


def _arc_points(radius, a0, a1, first=None, last=None):
    """Sampled circular arc from a0 to a1 (radians, increasing).  Endpoint
    overrides let adjoining segments share bitwise-identical joint points."""
    n = max(2, int(math.ceil(radius * (a1 - a0) / _SAMPLE_STEP)) + 1)
    pts = []
    for k in range(n):
        th = a0 + (a1 - a0) * k / (n - 1)
        pts.append(Vec2(radius * math.cos(th), radius * math.sin(th)))
    if first is not None:
        pts[0] = first
    if last is not None:
        pts[-1] = last
    return Polyline(pts)


def _bezier_points(p0, p1, p2, p3, samples=12):
    pts = []
    for k in range(samples):
        t = k / (samples - 1)
        s = 1.0 - t
        pts.append(
            p0 * (s * s * s)
            + p1 * (3 * s * s * t)
            + p2 * (3 * s * t * t)
            + p3 * (t * t * t)
        )
    return Polyline(pts)


def _square_roi(half):
    return [
        Vec2(-half, -half),
        Vec2(half, -half),
        Vec2(half, half),
        Vec2(-half, half),
    ]


def _gen_highway(params):
    lanes = _int_param(params, "lanes", 2, 5)
    length = _float_param(params, "length_m", 100.0, 2000.0, default=500.0)
    w = _float_param(params, "lane_width_m", 2.0, 6.0, default=3.5)
    median = Polyline([Vec2(0.0, 0.0), Vec2(length, 0.0)])
    edge_y = -lanes * w
    edge = Polyline([Vec2(0.0, edge_y), Vec2(length, edge_y)])
    segs = []
    for i in range(lanes):
        y = -(i + 0.5) * w
        segs.append(
            LaneSegment(
                id="lane%d" % i,
                centerline=Polyline([Vec2(0.0, y), Vec2(length, y)]),
                width=w,
                successor_ids=(),
                left_opposite_boundary=median,
                right_road_edge=edge,
            )
        )
    roi = [
        Vec2(-5.0, edge_y - 5.0),
        Vec2(length + 5.0, edge_y - 5.0),
        Vec2(length + 5.0, 5.0),
        Vec2(-5.0, 5.0),
    ]
    net = LaneNetwork(segs, roi, tuple(s.id for s in segs))
    walk_y = edge_y - 1.0
    walks = SidewalkNetwork(
        [Polyline([Vec2(0.0, walk_y), Vec2(length, walk_y)])], []
    )
    return net, walks


def _gen_roundabout(params):
    radius = _float_param(params, "radius_m", 20.0, 60.0, default=30.0)
    arms = _int_param(params, "arms", 3, 5)
    w = _float_param(params, "lane_width_m", 2.0, 6.0, default=3.5)
    arm_len = 40.0
    # circulation is counterclockwise; for each arm the exit node sits just
    # before the arm mouth and the entry node just after it
    delta = 0.25 * math.pi / arms
    axis = [2.0 * math.pi * k / arms for k in range(arms)]
    ang_ex = [a - delta for a in axis]
    ang_en = [a + delta for a in axis]
    ex_pt = [_unit(a) * radius for a in ang_ex]
    en_pt = [_unit(a) * radius for a in ang_en]
    segs = []
    for k in range(arms):
        nxt = (k + 1) % arms
        u = _unit(axis[k])
        n = u.perp()
        far = u * (radius + arm_len)
        mouth = _arc_points(
            radius, ang_ex[k], ang_en[k], first=ex_pt[k], last=en_pt[k]
        )
        a_end = ang_ex[nxt] + (2.0 * math.pi if nxt == 0 else 0.0)
        sweep = _arc_points(
            radius, ang_en[k], a_end, first=en_pt[k], last=ex_pt[nxt]
        )
        outer_mouth = _arc_points(radius + w / 2.0, ang_ex[k], ang_en[k])
        outer_sweep = _arc_points(radius + w / 2.0, ang_en[k], a_end)
        arm_axis = Polyline([u * radius, far])
        entry_line = Polyline([far + n * (w / 2.0), en_pt[k]])
        exit_line = Polyline([ex_pt[k], far - n * (w / 2.0)])
        segs.extend(
            [
                LaneSegment(
                    id="mouth%d" % k,
                    centerline=mouth,
                    width=w,
                    successor_ids=("sweep%d" % k,),
                    right_road_edge=outer_mouth,
                ),
                LaneSegment(
                    id="sweep%d" % k,
                    centerline=sweep,
                    width=w,
                    successor_ids=("mouth%d" % nxt, "exit%d" % nxt),
                    right_road_edge=outer_sweep,
                ),
                LaneSegment(
                    id="entry%d" % k,
                    centerline=entry_line,
                    width=w,
                    successor_ids=("sweep%d" % k,),
                    left_opposite_boundary=arm_axis,
                    right_road_edge=Polyline(
                        [p + n * (w / 2.0) for p in entry_line.points]
                    ),
                ),
                LaneSegment(
                    id="exit%d" % k,
                    centerline=exit_line,
                    width=w,
                    successor_ids=(),
                    left_opposite_boundary=arm_axis,
                    right_road_edge=Polyline(
                        [p - n * (w / 2.0) for p in exit_line.points]
                    ),
                ),
            ]
        )
    roi = _square_roi(radius + arm_len + 5.0)
    net = LaneNetwork(segs, roi, tuple("entry%d" % k for k in range(arms)))
    return net, SidewalkNetwork([], [])


def _gen_intersection(params):
    arms = _int_param(params, "arms", 3, 5)
    lanes = _int_param(params, "lanes", 2, 5)
    w = _float_param(params, "lane_width_m", 2.0, 6.0, default=3.5)
    arm_len = _float_param(params, "arm_length_m", 40.0, 2000.0, default=80.0)
    rj = lanes * w + 6.0
    rfar = rj + arm_len
    pull = rj * 0.6
    segs = []
    walks = []
    crossings = []
    in_end = {}
    out_start = {}
    for k in range(arms):
        u = _unit(2.0 * math.pi * k / arms)
        n = u.perp()
        axis_in = Polyline([u * rfar, u * rj])
        axis_out = Polyline([u * rj, u * rfar])
        road_half = lanes * w
        for j in range(lanes):
            off = n * ((j + 0.5) * w)
            in_end[(k, j)] = u * rj + off
            out_start[(k, j)] = u * rj - off
            segs.append(
                LaneSegment(
                    id="in%d_%d" % (k, j),
                    centerline=Polyline([u * rfar + off, in_end[(k, j)]]),
                    width=w,
                    successor_ids=tuple(
                        "c%d_%d_%d" % (k, m, j) for m in range(arms) if m != k
                    ),
                    left_opposite_boundary=axis_in,
                    right_road_edge=Polyline(
                        [u * rfar + n * road_half, u * rj + n * road_half]
                    ),
                )
            )
            segs.append(
                LaneSegment(
                    id="out%d_%d" % (k, j),
                    centerline=Polyline([out_start[(k, j)], u * rfar - off]),
                    width=w,
                    successor_ids=(),
                    left_opposite_boundary=axis_out,
                    right_road_edge=Polyline(
                        [u * rj - n * road_half, u * rfar - n * road_half]
                    ),
                )
            )
        side = n * (road_half + 1.0)
        walks.append(Polyline([u * (rj + 1.0) + side, u * rfar + side]))
        walks.append(Polyline([u * (rj + 1.0) - side, u * rfar - side]))
        crossings.append((len(walks) - 2, 0.0, len(walks) - 1, 0.0))
    for k in range(arms):
        uk = _unit(2.0 * math.pi * k / arms)
        for m in range(arms):
            if m == k:
                continue
            um = _unit(2.0 * math.pi * m / arms)
            for j in range(lanes):
                p0 = in_end[(k, j)]
                p3 = out_start[(m, j)]
                line = _bezier_points(p0, p0 - uk * pull, p3 - um * pull, p3)
                segs.append(
                    LaneSegment(
                        id="c%d_%d_%d" % (k, m, j),
                        centerline=line,
                        width=w,
                        successor_ids=("out%d_%d" % (m, j),),
                    )
                )
    roi = _square_roi(rfar + 10.0)
    spawn = tuple(
        "in%d_%d" % (k, j) for k in range(arms) for j in range(lanes)
    )
    net = LaneNetwork(segs, roi, spawn)
    return net, SidewalkNetwork(walks, crossings)


_GENERATORS = {
    "highway": _gen_highway,
    "roundabout": _gen_roundabout,
    "intersection": _gen_intersection,
}


def generate_scenario(kind, params, seed=0):
    """Procedural benchmark network.  Geometry is fully determined by kind
    and params; the seed is part of the interface so callers can thread one
    identifier through, but current topologies do not draw from it."""
    if kind not in _GENERATORS:
        raise ParamError("unknown scenario kind %r" % kind)
    net, walks = _GENERATORS[kind](dict(params))
    return net, walks, occupancy_from_lanes(net)


def save_network(path, lanes: LaneNetwork, walks: SidewalkNetwork):
    doc = {
        "format": FORMAT_TAG,
        "lane_segments": [
            {
                "id": seg.id,
                "centerline": _polyline_to_json(seg.centerline),
                "width_m": seg.width,
                "successors": list(seg.successor_ids),
                "left_opposite_boundary": (
                    _polyline_to_json(seg.left_opposite_boundary)
                    if seg.left_opposite_boundary
                    else None
                ),
                "right_road_edge": (
                    _polyline_to_json(seg.right_road_edge)
                    if seg.right_road_edge
                    else None
                ),
            }
            for _, seg in sorted(lanes.segments.items())
        ],
        "sidewalks": [_polyline_to_json(s) for s in walks.sidewalks],
        "crossings": [list(c) for c in walks.crossings],
        "region_of_interest": [[p.x, p.y] for p in lanes.region_of_interest],
        "spawn_segments": list(lanes.spawn_segment_ids),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
