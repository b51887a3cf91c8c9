"""Command line front end: scenario runs, benchmark harnesses, reports.

Four subcommands drive the library: `run` executes one configured
simulation and writes a frame trace plus crowd metrics, `bench-scaling`
measures frame time against crowd size, `compare-drivers` races the three
ego drivers on identical crowds, and `gen-scenario` writes a procedural
network to a file.  Reports land next to their delimited output as
rendered figures.  Configuration comes from an optional JSON file with
flag overrides on top; flags win, then the file, then defaults.
"""

import argparse
import csv
import json
import math
import os
import random
import sys
from dataclasses import dataclass, field, replace

from . import belief as bl
from . import planner as pl
from . import sim
from .agents import DEFAULT_PROFILES, collides, integrate_holonomic
from .behavior_gamma import gamma_step
from .planner import Action, SearchConfig
from .roadnet import (
    OffNetwork,
    ParamError,
    SchemaError,
    generate_scenario,
    load_network,
    locate,
    route_candidates,
    save_network,
)

STEP_SECONDS = 1.0 / 3.0
DRIVERS = ("none", "gamma", "rollout", "pomdp")
COMPARED = ("rollout", "gamma", "pomdp")
SCENARIO_KINDS = ("highway", "roundabout", "intersection")
SCENARIO_DEFAULTS = {
    "highway": {"lanes": 4},
    "roundabout": {"arms": 4},
    "intersection": {"arms": 4, "lanes": 2},
}
BENCH_COUNTS = (150, 200, 250, 300, 350, 400)
# drivers race on a vehicle crowd: the belief model covers lane-bound agents
VEHICLE_MIX = {"car": 0.50, "bus": 0.10, "bicycle": 0.15, "motorcycle": 0.15}
# per-tick planner sizing that keeps a planning step near real time
HARNESS_PLANNER = {"num_scenarios": 20, "budget": 1500}
EGO_PROFILE = DEFAULT_PROFILES["car"]
# speed drop within one step that counts as a braking event for ego drivers
# that do not emit explicit actions (half of a full DEC impulse)
DEC_DROP = 0.5
ROUTE_LOW = 25.0
RESPAWN_BELOW = 8.0

CONFIG_KEYS = {
    "scenario",
    "scenario_params",
    "agents",
    "class_mix",
    "behavior",
    "driver",
    "seed",
    "duration",
    "out",
    "planner",
    "counts",
    "seeds",
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    scenario: str = "intersection"
    scenario_params: dict = field(default_factory=dict)
    agents: int = 20
    class_mix: dict = None
    behavior: str = "gamma"
    driver: str = "none"
    seed: int = 0
    duration: float = 10.0
    out: str = "out"
    planner: dict = field(default_factory=dict)

    def validate(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.agents <= 0:
            raise ConfigError("agents must be positive")
        if self.behavior not in ("gamma", "ttc"):
            raise ConfigError("behavior must be gamma or ttc")
        if self.driver not in DRIVERS:
            raise ConfigError("driver must be one of %s" % ", ".join(DRIVERS))
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class EgoStats:
    steps: int = 0
    collision_steps: int = 0
    dec_steps: int = 0
    speed_sum: float = 0.0

    @property
    def collision_per_step(self):
        return self.collision_steps / self.steps if self.steps else 0.0

    @property
    def avg_speed(self):
        return self.speed_sum / self.steps if self.steps else 0.0

    @property
    def dec_per_step(self):
        return self.dec_steps / self.steps if self.steps else 0.0


def build_network(cfg):
    """Lane network, sidewalks, occupancy from a kind name or a file path."""
    name = cfg.scenario
    if name in SCENARIO_KINDS:
        params = dict(SCENARIO_DEFAULTS[name])
        params.update(cfg.scenario_params)
        return generate_scenario(name, params, cfg.seed)
    if os.path.exists(name):
        return load_network(name)
    raise ConfigError(
        "scenario %r is neither a known kind (%s) nor a network file"
        % (name, ", ".join(SCENARIO_KINDS))
    )


def _step_frame_list(duration):
    total = int(round(duration / sim.DT))
    n = max(1, int(round(duration / STEP_SECONDS)))
    frames = []
    for k in range(1, n + 1):
        f = min(total, int(round(k * STEP_SECONDS / sim.DT)))
        if not frames or f > frames[-1]:
            frames.append(f)
    return total, frames


def _swap_agent(world, agent):
    agents = dict(world.agents)
    agents[agent.id] = agent
    return replace(
        world, agents=agents, _index=None, _arrays=None, _scratch=None
    )


def _insert_ego(world, rng):
    for _ in range(50):
        built = sim._vehicle_site(world, rng)
        if built is None:
            continue
        state, _ = built
        if sim._overlaps(state, EGO_PROFILE, world.agents):
            continue
        return sim.add_agent(world, EGO_PROFILE, state, 6.0, behavior="ego")
    raise RuntimeError("could not place the ego vehicle")


def _ego_route_upkeep(world, ego, rng):
    """Extend the ego route ahead of its end; relocate at dead ends."""
    st = ego.state
    line = sim._line(st.route)
    arc, _ = line.project(st.position)
    remaining = line.length - arc
    if remaining > ROUTE_LOW:
        return world
    cands = ()
    try:
        ref = locate(world.network, st.position, st.heading)
        cands = route_candidates(
            world.network, ref, world.config.route_horizon, 4, rng
        )
    except OffNetwork:
        pass
    best = None
    for cand in cands:
        if cand.polyline.length > remaining + 5.0:
            best = cand
            break
    if best is not None:
        return _swap_agent(world, replace(ego, state=replace(st, route=best)))
    if remaining > RESPAWN_BELOW:
        return world
    for _ in range(50):
        built = sim._vehicle_site(world, rng)
        if built is None:
            continue
        state, _ = built
        if sim._overlaps(state, EGO_PROFILE, world.agents):
            continue
        return _swap_agent(world, replace(ego, state=state))
    return world


def _ego_collides_now(world, ego):
    for aid, other in world.agents.items():
        if aid == ego.id:
            continue
        rsum = EGO_PROFILE.circumradius + other.profile.circumradius
        d = other.state.position - ego.state.position
        if d.norm_sq() <= rsum * rsum and collides(
            ego.state, EGO_PROFILE, other.state, other.profile
        ):
            return True
    return False


def _belief_entropy(beliefs):
    if not beliefs:
        return 0.0
    total = 0.0
    for b in beliefs.values():
        total -= sum(p * math.log(p) for p in b.probs if p > 0.0)
    return total / len(beliefs)


def _update_beliefs(world, ego_id, beliefs, prev_states, dt, sigma, tick):
    for aid in list(beliefs):
        if aid not in world.agents:
            del beliefs[aid]
            prev_states.pop(aid, None)
    for aid in sorted(world.agents):
        agent = world.agents[aid]
        if aid == ego_id or agent.behavior not in ("gamma", "ttc"):
            continue
        if agent.profile.is_pedestrian:
            continue
        if aid not in beliefs:
            try:
                beliefs[aid] = bl.init_belief(agent, world.network, 4)
            except OffNetwork:
                continue
        else:
            beliefs[aid] = bl.update(
                beliefs[aid], prev_states[aid], agent.state, dt, sigma
            )
            if tick % 8 == 0:
                beliefs[aid] = bl.refresh(beliefs[aid], agent, 4)
        prev_states[aid] = agent.state


def run_sim(cfg, trace_fh=None, decisions_fh=None):
    """Drive one configured simulation; returns (world, ego stats or None)."""
    network, walks, occupancy = build_network(cfg)
    mix = cfg.class_mix if cfg.class_mix is not None else sim.DEFAULT_CLASS_MIX
    world = sim.make_world(
        network,
        walks,
        occupancy,
        seed=cfg.seed,
        config=sim.SimConfig(behavior=cfg.behavior, class_mix=dict(mix)),
    )
    spawn_rng = random.Random("spawn:%d" % cfg.seed)
    world = sim.spawn_despawn(world, cfg.agents, spawn_rng)

    ego_id = None
    stats = None
    search = None
    ego_rng = plan_rng = None
    beliefs = {}
    prev_states = {}
    current = pending = Action.MAINTAIN
    prev_speed = None
    if cfg.driver != "none":
        ego_rng = random.Random("ego:%d" % cfg.seed)
        plan_rng = random.Random("plan:%d" % cfg.seed)
        world, ego_id = _insert_ego(world, ego_rng)
        stats = EgoStats()
        overrides = dict(HARNESS_PLANNER)
        overrides.update(cfg.planner)
        search = SearchConfig(**overrides)

    total, step_frames = _step_frame_list(cfg.duration)
    boundary = set(step_frames)
    tick = 0
    for frame in range(1, total + 1):
        motions = None
        if ego_id is not None:
            ego = world.agents[ego_id]
            if cfg.driver == "gamma":
                v = gamma_step(world, ego, world.config.gamma)
                motions = {ego_id: integrate_holonomic(ego.state, v, sim.DT)}
            else:
                motions = {
                    ego_id: pl.apply_action(ego.state, current, sim.DT, search)
                }
        world = sim.step(world, sim.DT, cfg.agents, spawn_rng, motions)
        if trace_fh is not None:
            sim.write_trace(trace_fh, world)
        if ego_id is None or frame not in boundary:
            continue

        tick += 1
        ego = world.agents[ego_id]
        speed = ego.state.velocity.norm()
        stats.steps += 1
        stats.speed_sum += speed
        if _ego_collides_now(world, ego):
            stats.collision_steps += 1
        if cfg.driver == "gamma":
            if prev_speed is not None and speed - prev_speed <= -DEC_DROP:
                stats.dec_steps += 1
            prev_speed = speed
        else:
            if current is Action.DEC:
                stats.dec_steps += 1

        world = _ego_route_upkeep(world, world.agents[ego_id], ego_rng)
        ego = world.agents[ego_id]
        if cfg.driver == "rollout":
            current, pending = pending, pl.rollout_plan(world, search, plan_rng)
        elif cfg.driver == "pomdp":
            dt_tick = (
                (step_frames[tick - 1] - (step_frames[tick - 2] if tick > 1 else 0))
                * sim.DT
            )
            _update_beliefs(
                world, ego_id, beliefs, prev_states, dt_tick, search.sigma_noise, tick
            )
            action, info = pl.plan_info(
                beliefs, world, ego.state.route, search, plan_rng
            )
            current, pending = pending, action
            if decisions_fh is not None:
                rec = {
                    "frame": world.frame,
                    "action": action.name,
                    "root_values": info["values"],
                    "belief_entropy": _belief_entropy(beliefs),
                }
                decisions_fh.write(json.dumps(rec, separators=(",", ":")))
                decisions_fh.write("\n")
    return world, stats


def _render_run_figure(world, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {}
    for t, _, sums in world.log.frames:
        for kind, (tot, n) in sums.items():
            if n:
                xs, ys = series.setdefault(kind, ([], []))
                xs.append(t)
                ys.append(tot / n)
    jam_times = sorted(
        t for t, _, reason in world.log.removals if reason == "jam"
    )
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for kind in sorted(series):
        xs, ys = series[kind]
        ax0.plot(xs, ys, label=kind, linewidth=0.9)
    ax0.set_ylabel("mean speed (m/s)")
    ax0.legend(loc="upper right", fontsize=8)
    ax1.step(
        jam_times,
        range(1, len(jam_times) + 1),
        where="post",
        color="tab:red",
    )
    ax1.set_ylabel("jam removals")
    ax1.set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def run(cfg) -> int:
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    trace_path = os.path.join(cfg.out, "trace.jsonl")
    decisions_path = os.path.join(cfg.out, "decisions.jsonl")
    decisions_fh = None
    with open(trace_path, "w") as trace_fh:
        if cfg.driver == "pomdp":
            decisions_fh = open(decisions_path, "w")
        try:
            world, stats = run_sim(cfg, trace_fh, decisions_fh)
        finally:
            if decisions_fh is not None:
                decisions_fh.close()
    m = sim.metrics(world, world.time)
    with open(os.path.join(cfg.out, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(sim.METRICS_FIELDS)
        w.writerows(sim.metrics_rows(world, m))
    _render_run_figure(world, os.path.join(cfg.out, "metrics.png"))
    if stats is not None:
        print(
            "ego: %d steps, avg speed %.2f m/s, %.4f collisions/step, %.3f dec/step"
            % (
                stats.steps,
                stats.avg_speed,
                stats.collision_per_step,
                stats.dec_per_step,
            )
        )
    print("trace: %s" % trace_path)
    return 0


def bench_scaling(counts, duration, seed, scenario="highway", params=None, out="out"):
    """Frame-time scaling rows (count, frame_ms, hz) for gamma crowds."""
    rows = []
    for count in counts:
        cfg = RunConfig(
            scenario=scenario,
            scenario_params=dict(params or {"lanes": 4, "length_m": 2000.0}),
            agents=count,
            behavior="gamma",
            seed=seed,
            duration=duration,
            out=out,
        )
        cfg.validate()
        world, _ = run_sim(cfg)
        m = sim.metrics(world, world.time)
        hz = 1000.0 / m.frame_ms if m.frame_ms > 0 else float("inf")
        rows.append((count, m.frame_ms, hz))
    return rows


def _render_bench_figure(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    counts = [r[0] for r in rows]
    ms = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(counts, ms, marker="o")
    ax.set_xlabel("agents")
    ax.set_ylabel("mean frame time (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def compare_drivers(scenario, seeds, duration, agents=40, params=None, planner=None):
    """Race the ego drivers on identical crowds.

    Returns (summary rows, per-seed rows); summary rows carry the metric
    means in the declared driver order.
    """
    per_seed = []
    for driver in COMPARED:
        for seed in seeds:
            cfg = RunConfig(
                scenario=scenario,
                scenario_params=dict(params or {}),
                agents=agents,
                class_mix=dict(VEHICLE_MIX),
                behavior="gamma",
                driver=driver,
                seed=seed,
                duration=duration,
                planner=dict(planner or {}),
            )
            cfg.validate()
            _, stats = run_sim(cfg)
            per_seed.append(
                (
                    driver,
                    seed,
                    stats.collision_per_step,
                    stats.avg_speed,
                    stats.dec_per_step,
                )
            )
    summary = []
    for driver in COMPARED:
        rows = [r for r in per_seed if r[0] == driver]
        summary.append(
            (
                driver,
                sum(r[2] for r in rows) / len(rows),
                sum(r[3] for r in rows) / len(rows),
                sum(r[4] for r in rows) / len(rows),
            )
        )
    return summary, per_seed


def _render_compare_figure(summary, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    drivers = [r[0] for r in summary]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
    panels = (
        ("avg speed (m/s)", [r[2] for r in summary]),
        ("collisions / step", [r[1] for r in summary]),
        ("DEC / step", [r[3] for r in summary]),
    )
    for ax, (label, vals) in zip(axes, panels):
        ax.bar(drivers, vals, color=("tab:orange", "tab:blue", "tab:green"))
        ax.set_title(label, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def gen_scenario(cfg, out_path) -> int:
    if cfg.scenario not in SCENARIO_KINDS:
        raise ConfigError(
            "gen-scenario needs a kind out of: %s" % ", ".join(SCENARIO_KINDS)
        )
    params = dict(SCENARIO_DEFAULTS[cfg.scenario])
    params.update(cfg.scenario_params)
    lanes, walks, _ = generate_scenario(cfg.scenario, params, cfg.seed)
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_network(out_path, lanes, walks)
    print(out_path)
    return 0


def _load_file_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError("cannot read config file: %s" % e) from e
    except json.JSONDecodeError as e:
        raise ConfigError("config file is not valid JSON: %s" % e) from e
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    return raw


def _merge_config(args):
    raw = _load_file_config(args.config) if args.config else {}
    cfg = RunConfig()
    for key in (
        "scenario",
        "scenario_params",
        "agents",
        "class_mix",
        "behavior",
        "driver",
        "seed",
        "duration",
        "out",
        "planner",
    ):
        if key in raw:
            setattr(cfg, key, raw[key])
    for key in ("scenario", "agents", "driver", "seed", "duration", "out"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    try:
        cfg.agents = int(cfg.agents)
        cfg.seed = int(cfg.seed)
        cfg.duration = float(cfg.duration)
    except (TypeError, ValueError) as e:
        raise ConfigError("bad numeric config value: %s" % e) from e
    return cfg, raw


def _int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="crowdsim",
        description="Headless crowd-driving simulator and planner benchmarks.",
        epilog=(
            "CROWDSIM_THREADS caps simulation worker threads. "
            "Config file keys: scenario, scenario_params, agents, class_mix, "
            "behavior, driver, seed, duration, out, planner, counts, seeds."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--duration", type=float, help="simulated seconds")
        p.add_argument("--agents", type=int, help="crowd size to maintain")
        p.add_argument("--scenario", help="scenario kind or network file")
        p.add_argument("--out", help="output directory (file for gen-scenario)")

    p_run = sub.add_parser(
        "run",
        help="simulate one scenario; writes trace.jsonl, metrics.csv, metrics.png",
        description=(
            "Run one crowd simulation. The speed/congestion profile "
            "experiment is this command at --duration 300 (a scaled-down "
            "stand-in for the 20-minute reference run) once with behavior "
            "gamma and once with ttc in the config file."
        ),
    )
    common(p_run)
    p_run.add_argument("--driver", choices=DRIVERS, help="ego driver")

    p_bench = sub.add_parser(
        "bench-scaling",
        help="frame-time scaling benchmark; writes bench_scaling.{csv,png}",
    )
    common(p_bench)
    p_bench.add_argument(
        "--counts", type=_int_list, help="comma-separated crowd sizes"
    )

    p_cmp = sub.add_parser(
        "compare-drivers",
        help="driver comparison harness; writes compare_drivers.{csv,png}",
    )
    common(p_cmp)
    p_cmp.add_argument(
        "--seeds", type=_int_list, help="comma-separated run seeds"
    )

    p_gen = sub.add_parser(
        "gen-scenario", help="write a procedural network file"
    )
    common(p_gen)
    return parser


def _cmd_run(args):
    cfg, _ = _merge_config(args)
    return run(cfg)


def _cmd_bench(args):
    cfg, raw = _merge_config(args)
    cfg.validate()
    counts = args.counts or raw.get("counts") or list(BENCH_COUNTS)
    if not counts or any(int(c) <= 0 for c in counts):
        raise ConfigError("counts must be positive integers")
    duration = args.duration or raw.get("duration") or 6.0
    scenario = cfg.scenario if args.scenario or "scenario" in raw else "highway"
    params = cfg.scenario_params or None
    rows = bench_scaling(
        [int(c) for c in counts], float(duration), cfg.seed, scenario, params, cfg.out
    )
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "bench_scaling.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("count", "frame_ms", "hz"))
        w.writerows(rows)
    _render_bench_figure(rows, os.path.join(cfg.out, "bench_scaling.png"))
    for count, ms, hz in rows:
        print("%4d agents: %7.2f ms/frame (%.1f Hz)" % (count, ms, hz))
    print(path)
    return 0


def _cmd_compare(args):
    cfg, raw = _merge_config(args)
    cfg.validate()
    seeds = args.seeds if args.seeds is not None else raw.get("seeds")
    if seeds is None:
        seeds = list(range(10))
    if not seeds:
        raise ConfigError("seeds must be a non-empty list")
    duration = args.duration or raw.get("duration") or 120.0
    agents = args.agents or raw.get("agents") or 40
    summary, per_seed = compare_drivers(
        cfg.scenario,
        [int(s) for s in seeds],
        float(duration),
        int(agents),
        cfg.scenario_params or None,
        cfg.planner or None,
    )
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "compare_drivers.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("driver", "collision_per_step", "avg_speed", "dec_per_step"))
        w.writerows(summary)
    seeds_path = os.path.join(cfg.out, "compare_drivers_seeds.csv")
    with open(seeds_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ("driver", "seed", "collision_per_step", "avg_speed", "dec_per_step")
        )
        w.writerows(per_seed)
    _render_compare_figure(summary, os.path.join(cfg.out, "compare_drivers.png"))
    for driver, col, speed, dec in summary:
        print(
            "%8s: %.2f m/s, %.5f collisions/step, %.3f dec/step"
            % (driver, speed, col, dec)
        )
    print(path)
    return 0


def _cmd_gen(args):
    cfg, raw = _merge_config(args)
    out_path = cfg.out if (args.out or "out" in raw) else "network.json"
    return gen_scenario(cfg, out_path)


_COMMANDS = {
    "run": _cmd_run,
    "bench-scaling": _cmd_bench,
    "compare-drivers": _cmd_compare,
    "gen-scenario": _cmd_gen,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ParamError, SchemaError) as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print("runtime error: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
