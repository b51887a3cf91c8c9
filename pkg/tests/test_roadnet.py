import json
import math
import random

import pytest
from scipy.stats import chisquare

from crowdsim import roadnet as rn
from crowdsim.geom import Polyline, Vec2


def write_net(tmp_path, doc, name="net.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def minimal_doc():
    return {
        "format": "crowdsim-net/1",
        "lane_segments": [
            {
                "id": "a",
                "centerline": [[0, 0], [50, 0]],
                "width_m": 3.5,
                "successors": [],
            }
        ],
        "sidewalks": [],
        "crossings": [],
        "region_of_interest": [],
        "spawn_segments": ["a"],
    }


class TestLoad:
    def test_minimal_file(self, tmp_path):
        lanes, walks, occ = rn.load_network(write_net(tmp_path, minimal_doc()))
        assert set(lanes.segments) == {"a"}
        assert lanes.segments["a"].width == 3.5
        assert walks.sidewalks == []
        assert rn.occupancy_contains(occ, Vec2(25.0, 0.0))
        assert rn.occupancy_contains(occ, Vec2(25.0, 1.74))
        assert not rn.occupancy_contains(occ, Vec2(25.0, 1.8))

    def test_dangling_successor(self, tmp_path):
        doc = minimal_doc()
        doc["lane_segments"][0]["successors"] = ["99"]
        with pytest.raises(rn.ValidationError) as err:
            rn.load_network(write_net(tmp_path, doc))
        assert "segment 99" in str(err.value)

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("not json at all {")
        with pytest.raises(rn.SchemaError):
            rn.load_network(path)

    def test_wrong_format_tag(self, tmp_path):
        doc = minimal_doc()
        doc["format"] = "something-else"
        with pytest.raises(rn.SchemaError):
            rn.load_network(write_net(tmp_path, doc))

    def test_segment_missing_width(self, tmp_path):
        doc = minimal_doc()
        del doc["lane_segments"][0]["width_m"]
        with pytest.raises(rn.SchemaError) as err:
            rn.load_network(write_net(tmp_path, doc))
        assert "segment a" in str(err.value)

    def test_zero_width_rejected(self, tmp_path):
        doc = minimal_doc()
        doc["lane_segments"][0]["width_m"] = 0.0
        with pytest.raises(rn.ValidationError) as err:
            rn.load_network(write_net(tmp_path, doc))
        assert "segment a" in str(err.value)

    def test_crossing_arc_off_sidewalk(self, tmp_path):
        doc = minimal_doc()
        doc["sidewalks"] = [[[0, 5], [50, 5]], [[0, -5], [50, -5]]]
        doc["crossings"] = [[0, 60.0, 1, 10.0]]
        with pytest.raises(rn.ValidationError) as err:
            rn.load_network(write_net(tmp_path, doc))
        assert "crossing 0" in str(err.value)

    def test_crossing_bad_sidewalk_index(self, tmp_path):
        doc = minimal_doc()
        doc["sidewalks"] = [[[0, 5], [50, 5]]]
        doc["crossings"] = [[0, 10.0, 3, 10.0]]
        with pytest.raises(rn.ValidationError):
            rn.load_network(write_net(tmp_path, doc))

    def test_round_trip(self, tmp_path):
        lanes, walks, _ = rn.generate_scenario(
            "intersection", {"arms": 4, "lanes": 2}, seed=7
        )
        p1 = tmp_path / "one.json"
        p2 = tmp_path / "two.json"
        rn.save_network(p1, lanes, walks)
        lanes2, walks2, _ = rn.load_network(p1)
        rn.save_network(p2, lanes2, walks2)
        assert json.loads(p1.read_text()) == json.loads(p2.read_text())


class TestLocate:
    def one_lane(self):
        seg = rn.LaneSegment(
            id="a",
            centerline=Polyline([Vec2(0, 0), Vec2(100, 0)]),
            width=3.5,
            successor_ids=(),
        )
        return rn.LaneNetwork([seg])

    def test_on_centerline_exact_arc(self):
        ref = rn.locate(self.one_lane(), Vec2(20.0, 0.0), 0.0)
        assert ref.segment_id == "a"
        assert abs(ref.arc - 20.0) < 1e-9

    def test_opposite_lane_penalty(self):
        east = rn.LaneSegment(
            id="east",
            centerline=Polyline([Vec2(0, -1.75), Vec2(100, -1.75)]),
            width=3.5,
            successor_ids=(),
        )
        west = rn.LaneSegment(
            id="west",
            centerline=Polyline([Vec2(100, 1.75), Vec2(0, 1.75)]),
            width=3.5,
            successor_ids=(),
        )
        net = rn.LaneNetwork([east, west])
        assert rn.locate(net, Vec2(50.0, 0.0), 0.0).segment_id == "east"
        assert rn.locate(net, Vec2(50.0, 0.0), math.pi).segment_id == "west"

    def test_far_point_raises(self):
        with pytest.raises(rn.OffNetwork):
            rn.locate(self.one_lane(), Vec2(50.0, 100.0), 0.0)

    def test_tie_breaks_to_smaller_id(self):
        line = [Vec2(0, 0), Vec2(100, 0)]
        segs = [
            rn.LaneSegment(id=i, centerline=Polyline(line), width=3.5,
                           successor_ids=())
            for i in ("b", "a")
        ]
        net = rn.LaneNetwork(segs)
        assert rn.locate(net, Vec2(10.0, 0.5), 0.0).segment_id == "a"


def chain_net(*lengths):
    """Straight segments laid end to end along +x, each linked to the next."""
    segs = []
    x = 0.0
    for k, ln in enumerate(lengths):
        succ = ("s%d" % (k + 1),) if k + 1 < len(lengths) else ()
        segs.append(
            rn.LaneSegment(
                id="s%d" % k,
                centerline=Polyline([Vec2(x, 0), Vec2(x + ln, 0)]),
                width=3.5,
                successor_ids=succ,
            )
        )
        x += ln
    return rn.LaneNetwork(segs)


class TestRoutes:
    def test_single_segment(self):
        net = chain_net(100.0)
        routes = rn.route_candidates(
            net, rn.LaneRef("s0", 0.0), 50.0, 10, random.Random(0)
        )
        assert len(routes) == 1
        assert routes[0].segment_ids == ("s0",)

    def test_two_segment_chain(self):
        net = chain_net(50.0, 50.0)
        routes = rn.route_candidates(
            net, rn.LaneRef("s0", 0.0), 80.0, 10, random.Random(0)
        )
        assert len(routes) == 1
        assert routes[0].segment_ids == ("s0", "s1")
        assert abs(routes[0].polyline.length - 100.0) < 1e-9

    def test_starts_at_ref(self):
        net = chain_net(50.0, 50.0)
        routes = rn.route_candidates(
            net, rn.LaneRef("s0", 10.0), 80.0, 10, random.Random(0)
        )
        start = routes[0].polyline.points[0]
        assert (start - Vec2(10.0, 0.0)).norm() < 1e-9
        assert abs(routes[0].polyline.length - 90.0) < 1e-9

    def test_fork_two_candidates(self):
        trunk = rn.LaneSegment(
            id="t",
            centerline=Polyline([Vec2(0, 0), Vec2(30, 0)]),
            width=3.5,
            successor_ids=("l", "r"),
        )
        left = rn.LaneSegment(
            id="l",
            centerline=Polyline([Vec2(30, 0), Vec2(60, 10)]),
            width=3.5,
            successor_ids=(),
        )
        right = rn.LaneSegment(
            id="r",
            centerline=Polyline([Vec2(30, 0), Vec2(60, -10)]),
            width=3.5,
            successor_ids=(),
        )
        net = rn.LaneNetwork([trunk, left, right])
        routes = rn.route_candidates(
            net, rn.LaneRef("t", 0.0), 100.0, 10, random.Random(0)
        )
        assert {r.segment_ids for r in routes} == {("t", "l"), ("t", "r")}

    def binary_tree(self, depth=4, seg_len=10.0):
        segs = []

        def add(bits):
            level = len(bits)
            sid = "n" + bits if bits else "root"
            if level < depth:
                succ = ("n" + bits + "0", "n" + bits + "1")
                add(bits + "0")
                add(bits + "1")
            else:
                succ = ()
            y = (int(bits, 2) if bits else 0) * 2.0
            segs.append(
                rn.LaneSegment(
                    id=sid,
                    centerline=Polyline(
                        [
                            Vec2(seg_len * level, y),
                            Vec2(seg_len * (level + 1), y),
                        ]
                    ),
                    width=3.5,
                    successor_ids=succ,
                )
            )

        add("")
        return rn.LaneNetwork(segs)

    def test_subsample_count_and_distinct(self):
        net = self.binary_tree()
        routes = rn.route_candidates(
            net, rn.LaneRef("root", 0.0), 100.0, 5, random.Random(42)
        )
        assert len(routes) == 5
        assert len({r.segment_ids for r in routes}) == 5

    def test_subsample_uniform_over_leaves(self):
        net = self.binary_tree()
        counts = {format(i, "04b"): 0 for i in range(16)}
        for seed in range(1000):
            routes = rn.route_candidates(
                net, rn.LaneRef("root", 0.0), 100.0, 5, random.Random(seed)
            )
            assert len(routes) == 5
            for r in routes:
                counts[r.segment_ids[-1][1:]] += 1
        stat, p = chisquare(list(counts.values()))
        assert p > 0.01, "leaf counts %r give p=%g" % (counts, p)


class TestSidewalks:
    def crossing_net(self):
        walks = [
            Polyline([Vec2(0, 5), Vec2(50, 5)]),
            Polyline([Vec2(0, -5), Vec2(50, -5)]),
        ]
        return rn.SidewalkNetwork(walks, [(0, 10.0, 1, 10.0)])

    def test_at_crossing_endpoint(self):
        got = rn.opposite_sidewalk(self.crossing_net(), rn.SidewalkRef(0, 10.0))
        assert got == rn.SidewalkRef(1, 10.0)

    def test_within_window(self):
        got = rn.opposite_sidewalk(self.crossing_net(), rn.SidewalkRef(0, 6.0))
        assert got == rn.SidewalkRef(1, 10.0)
        rev = rn.opposite_sidewalk(self.crossing_net(), rn.SidewalkRef(1, 13.0))
        assert rev == rn.SidewalkRef(0, 10.0)

    def test_beyond_window(self):
        assert rn.opposite_sidewalk(
            self.crossing_net(), rn.SidewalkRef(0, 16.0)
        ) is None

    def test_no_crossings(self):
        net = rn.SidewalkNetwork([Polyline([Vec2(0, 5), Vec2(50, 5)])], [])
        assert rn.opposite_sidewalk(net, rn.SidewalkRef(0, 10.0)) is None


class TestOccupancy:
    def road(self, width=7.0):
        seg = rn.LaneSegment(
            id="r",
            centerline=Polyline([Vec2(0, 0), Vec2(100, 0)]),
            width=width,
            successor_ids=(),
        )
        return rn.occupancy_from_lanes(rn.LaneNetwork([seg]))

    def test_point_queries(self):
        occ = self.road()
        assert rn.occupancy_contains(occ, Vec2(50.0, 0.0))
        assert not rn.occupancy_contains(occ, Vec2(1000.0, 0.0))

    def test_crop_central_rows(self):
        occ = self.road(width=7.0)
        grid = rn.crop(occ, (Vec2(50.0, 0.0), 0.0), 20.0)
        assert grid.shape == (20, 20)
        assert grid[6:14].all()
        assert not grid[:6].any()
        assert not grid[14:].any()

    def test_crop_rotated(self):
        # ego heading north on an east-west road: the band moves to columns
        occ = self.road(width=7.0)
        grid = rn.crop(occ, (Vec2(50.0, 0.0), math.pi / 2.0), 20.0)
        assert grid[:, 6:14].all()
        assert not grid[:, :6].any()
        assert not grid[:, 14:].any()

    def test_bad_extent(self):
        with pytest.raises(rn.ValidationError):
            rn.crop(self.road(), (Vec2(0, 0), 0.0), -1.0)


SCENARIOS = [
    ("highway", {"lanes": 3, "length_m": 500.0}),
    ("roundabout", {"radius_m": 30.0, "arms": 4}),
    ("intersection", {"arms": 4, "lanes": 2}),
]


class TestScenarios:
    def test_highway_example(self):
        net, walks, _ = rn.generate_scenario(
            "highway", {"lanes": 3, "length_m": 500.0}, seed=1
        )
        assert len(net.segments) == 3
        for seg in net.segments.values():
            assert seg.left_opposite_boundary is not None
            assert seg.right_road_edge is not None
        assert len(walks.sidewalks) == 1

    def test_determinism(self, tmp_path):
        paths = []
        for k in range(2):
            lanes, walks, _ = rn.generate_scenario(
                "intersection", {"arms": 4, "lanes": 2}, seed=7
            )
            path = tmp_path / ("net%d.json" % k)
            rn.save_network(path, lanes, walks)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_roundabout_entry_joins_ring(self):
        net, _, _ = rn.generate_scenario(
            "roundabout", {"radius_m": 30.0, "arms": 4}, seed=2
        )
        ring = {
            sid for sid in net.segments
            if sid.startswith("mouth") or sid.startswith("sweep")
        }
        for k in range(4):
            succ = net.segments["entry%d" % k].successor_ids
            assert any(s in ring for s in succ)

    @pytest.mark.parametrize("kind,params", SCENARIOS)
    def test_reachable_from_spawn(self, kind, params):
        net, _, _ = rn.generate_scenario(kind, params, seed=3)
        seen = set(net.spawn_segment_ids)
        frontier = list(seen)
        while frontier:
            seg = net.segments[frontier.pop()]
            for succ in seg.successor_ids:
                if succ not in seen:
                    seen.add(succ)
                    frontier.append(succ)
        assert seen == set(net.segments)

    @pytest.mark.parametrize("kind,params", SCENARIOS)
    def test_occupancy_covers_centerlines(self, kind, params):
        net, _, occ = rn.generate_scenario(kind, params, seed=3)
        for seg in net.segments.values():
            line = seg.centerline
            for k in range(9):
                p = line.point_at(line.length * k / 8.0)
                assert rn.occupancy_contains(occ, p)
                assert net.roi_contains(p)

    @pytest.mark.parametrize("kind,params", SCENARIOS)
    def test_successor_joints_continuous(self, kind, params):
        net, _, _ = rn.generate_scenario(kind, params, seed=3)
        for seg in net.segments.values():
            for succ in seg.successor_ids:
                gap = (
                    net.segments[succ].centerline.points[0]
                    - seg.centerline.points[-1]
                ).norm()
                assert gap < 1e-6, "%s -> %s gap %g" % (seg.id, succ, gap)

    @pytest.mark.parametrize("kind,params", SCENARIOS)
    def test_route_polylines_continuous(self, kind, params):
        # a gap at any joint would add spurious arc-length to the route
        net, _, _ = rn.generate_scenario(kind, params, seed=3)
        rng = random.Random(9)
        for sid in net.spawn_segment_ids:
            routes = rn.route_candidates(
                net, rn.LaneRef(sid, 1.0), 150.0, 8, rng
            )
            assert routes
            for route in routes:
                expected = sum(
                    net.segments[s].centerline.length
                    for s in route.segment_ids
                ) - 1.0
                assert abs(route.polyline.length - expected) < 1e-6

    def test_param_errors(self):
        with pytest.raises(rn.ParamError):
            rn.generate_scenario("highway", {"lanes": 7}, 0)
        with pytest.raises(rn.ParamError):
            rn.generate_scenario("roundabout", {"radius_m": 10.0, "arms": 4}, 0)
        with pytest.raises(rn.ParamError):
            rn.generate_scenario("intersection", {"arms": 9, "lanes": 2}, 0)
        with pytest.raises(rn.ParamError):
            rn.generate_scenario("cul_de_sac", {}, 0)

    def test_locate_works_on_generated(self):
        net, _, _ = rn.generate_scenario(
            "intersection", {"arms": 4, "lanes": 2}, seed=3
        )
        seg = net.segments["in0_0"]
        p = seg.centerline.point_at(5.0)
        tang = seg.centerline.tangent_at(5.0)
        ref = rn.locate(net, p, tang.angle())
        assert ref.segment_id == "in0_0"
        assert abs(ref.arc - 5.0) < 1e-6
