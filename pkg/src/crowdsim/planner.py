"""Scenario-based online belief-tree planner over longitudinal actions.

The ego vehicle picks one of three accelerations per step while exo agents
evolve under sampled hidden states: a fixed set of root scenarios (hidden
state joint sample plus a private noise stream each) is pushed down an
incrementally built tree whose leaves are bounded below by default-policy
rollouts and above by an unobstructed full-throttle drive.  The search is
anytime under a deterministic work budget and returns the root action with
the best regularized lower bound.  A flat Monte Carlo variant of the same
machinery (rollout_plan) serves as a baseline driver.
"""

import math
import random
from dataclasses import dataclass, replace
from enum import Enum

from .agents import (
    Agent,
    DEFAULT_PROFILES,
    collides,
    integrate_bicycle,
    pure_pursuit,
)
from .behavior_gamma import GammaParams, gamma_step
from .belief import HiddenState, joint_sample
from .geom import Vec2
from .roadnet import LaneNetwork

EGO_PROFILE = DEFAULT_PROFILES["car"]
PLANNING_DT = 1.0 / 3.0
# half-speed band tolerance for the default policy's caution range
HALF_EPS = 0.1
_CONE_COS = math.cos(math.radians(30.0))
_GAP_EPS = 1e-6

_GAMMA_PARAMS = {}
_EMPTY_NET = LaneNetwork([])


class Action(Enum):
    ACC = 3.0
    MAINTAIN = 0.0
    DEC = -3.0

    @property
    def accel(self) -> float:
        return self.value


# fixed order doubles as the tie-break: prefer progress when values match
ACTIONS = (Action.ACC, Action.MAINTAIN, Action.DEC)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the tree search and its reward model.

    budget is a deterministic work allowance counted in transition
    evaluations, sized so a default search lands near the 1/3 s planning
    period; wall-clock cutoffs would make replays diverge.
    """

    num_scenarios: int = 100
    max_depth: int = 9
    discount: float = 0.95
    planning_dt: float = PLANNING_DT
    exploration: float = 0.01
    r_collision: float = -1000.0
    w_speed: float = 1.0
    r_dec: float = -0.1
    sigma_noise: float = 0.1
    max_exo: int = 8
    ego_vmax: float = 6.0
    budget: int = 6000

    def __post_init__(self):
        if self.num_scenarios < 1:
            raise ValueError("num_scenarios must be at least 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.planning_dt <= 0:
            raise ValueError("planning_dt must be positive")


DEFAULT_CONFIG = SearchConfig()


@dataclass(frozen=True)
class PomdpState:
    """One joint configuration inside the search tree.

    ego carries its intended path on state.route; each exo entry pairs the
    agent state (route set to the hypothesis path) with its sampled hidden
    state.  Profiles, preferred speeds, and lane references ride along so
    fixtures can be built without a live world; empty tuples default to
    cars coasting at their current speed with no pinned lane.
    """

    ego: object
    exo: tuple
    time_depth: int = 0
    exo_profiles: tuple = ()
    exo_prefs: tuple = ()
    exo_lane_refs: tuple = ()

    def profile_of(self, i):
        return self.exo_profiles[i] if self.exo_profiles else EGO_PROFILE

    def pref_of(self, i) -> float:
        if self.exo_prefs:
            return self.exo_prefs[i]
        return self.exo[i][0].velocity.norm()

    def lane_ref_of(self, i):
        return self.exo_lane_refs[i] if self.exo_lane_refs else None


def _line(route):
    return route.polyline if hasattr(route, "polyline") else route


def _stream(seed, depth) -> random.Random:
    # one scenario's noise at a given depth is fixed regardless of the
    # action path that reached it
    return random.Random(seed * 131 + depth)


def _gamma(dt) -> GammaParams:
    params = _GAMMA_PARAMS.get(dt)
    if params is None:
        params = GammaParams(dt=dt)
        _GAMMA_PARAMS[dt] = params
    return params


class _ScenarioWorld:
    """Miniature world view over one scenario's agents."""

    __slots__ = ("network", "agents")

    def __init__(self, network, agents):
        self.network = network
        self.agents = agents

    def neighbors_of(self, agent, radius, limit):
        out = []
        pos = agent.state.position
        for other in self.agents:
            if other is agent:
                continue
            d = (other.state.position - pos).norm()
            if d <= radius:
                out.append((d, other.id, other))
        out.sort(key=lambda t: (t[0], t[1]))
        return [t[2] for t in out[:limit]]


def _scenario_agents(state, cfg):
    agents = [
        Agent(
            id=-1,
            profile=EGO_PROFILE,
            state=state.ego,
            pref_speed=cfg.ego_vmax,
            behavior="external",
        )
    ]
    for i, (st, _) in enumerate(state.exo):
        agents.append(
            Agent(
                id=i,
                profile=state.profile_of(i),
                state=st,
                pref_speed=state.pref_of(i),
                lane_ref=state.lane_ref_of(i),
            )
        )
    return agents


def apply_action(state, action, dt, config=None):
    """Integrate the ego one step: longitudinal action plus pure-pursuit
    steering on the intended path."""
    cfg = config if config is not None else DEFAULT_CONFIG
    v0 = state.velocity.norm()
    v1 = min(cfg.ego_vmax, max(0.0, v0 + action.accel * dt))
    if state.route is None:
        steer = 0.0
    else:
        steer = pure_pursuit(state, EGO_PROFILE, _line(state.route))
    return integrate_bicycle(state, EGO_PROFILE, v1, steer, dt)


def ego_collides(state) -> bool:
    ego = state.ego
    for i, (st, _) in enumerate(state.exo):
        prof = state.profile_of(i)
        reach = (
            math.hypot(EGO_PROFILE.half_length, EGO_PROFILE.half_width)
            + math.hypot(prof.half_length, prof.half_width)
        )
        if (st.position - ego.position).norm_sq() > reach * reach:
            continue
        if collides(ego, EGO_PROFILE, st, prof):
            return True
    return False


def reward(state, action, next_state, config=None) -> float:
    cfg = config if config is not None else DEFAULT_CONFIG
    v = next_state.ego.velocity.norm()
    r = cfg.w_speed * (v - cfg.ego_vmax) / cfg.ego_vmax
    if action is Action.DEC:
        r += cfg.r_dec
    if ego_collides(next_state):
        r += cfg.r_collision
    return r


def pomdp_transition(state, action, rng, config=None, network=None):
    """One joint step: returns (next state, reward).

    Distracted exo agents track their route at held speed; attentive ones
    take a crowd-model step against the scenario's other agents, ego
    included.  Every exo position is then perturbed by per-axis Gaussian
    noise drawn from rng.
    """
    return _transition(state, action, rng, config, network, True)


def _transition(state, action, rng, config, network, exact):
    # exact=False steps attentive agents like distracted ones; rollouts use
    # it to keep the bound estimate cheap.  Noise draws stay identical.
    cfg = config if config is not None else DEFAULT_CONFIG
    net = network if network is not None else _EMPTY_NET
    dt = cfg.planning_dt
    ego = apply_action(state.ego, action, dt, cfg)
    world = None
    agents = None
    nxt = []
    for i, (st, hid) in enumerate(state.exo):
        if exact and hid.agent_type == "attentive" and st.route is not None:
            if world is None:
                agents = _scenario_agents(state, cfg)
                world = _ScenarioWorld(net, agents)
            v = gamma_step(world, agents[i + 1], _gamma(dt))
            pos = st.position + v * dt
            heading = v.angle() if v.norm() > 0.05 else st.heading
            vel = v
        elif st.route is not None:
            line = _line(st.route)
            speed = st.velocity.norm()
            arc, _ = line.project(st.position)
            arc = min(arc + speed * dt, line.length)
            pos = line.point_at(arc)
            tang = line.tangent_at(arc)
            heading = tang.angle()
            vel = tang * speed
        else:
            pos = st.position + st.velocity * dt
            heading = st.heading
            vel = st.velocity
        pos = Vec2(
            pos.x + rng.gauss(0.0, cfg.sigma_noise),
            pos.y + rng.gauss(0.0, cfg.sigma_noise),
        )
        nxt.append((replace(st, position=pos, heading=heading, velocity=vel), hid))
    nxt_state = PomdpState(
        ego=ego,
        exo=tuple(nxt),
        time_depth=state.time_depth + 1,
        exo_profiles=state.exo_profiles,
        exo_prefs=state.exo_prefs,
        exo_lane_refs=state.exo_lane_refs,
    )
    return nxt_state, reward(state, action, nxt_state, cfg)


def default_policy(state, config=None) -> Action:
    """Reactive fallback: full speed on a clear front cone, half speed in
    the caution band, brake when close."""
    cfg = config if config is not None else DEFAULT_CONFIG
    ego = state.ego
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    gap = math.inf
    for i, (st, _) in enumerate(state.exo):
        dx = st.position.x - ego.position.x
        dy = st.position.y - ego.position.y
        dist = math.hypot(dx, dy)
        if dist * _CONE_COS > dx * c + dy * s:
            continue
        prof = state.profile_of(i)
        gap = min(
            gap,
            max(0.0, dist - EGO_PROFILE.half_length - prof.half_length),
        )
    if gap > 4.0:
        return Action.ACC
    if gap < 2.0:
        return Action.DEC
    v = ego.velocity.norm()
    half = cfg.ego_vmax / 2.0
    if v < half:
        return Action.ACC
    if v <= half + HALF_EPS:
        return Action.MAINTAIN
    return Action.DEC


def _upper_bound(speed, steps, cfg) -> float:
    # best case: no exo anywhere, accelerate and hold the speed cap
    total, disc, v = 0.0, 1.0, speed
    for _ in range(steps):
        v = min(cfg.ego_vmax, v + Action.ACC.value * cfg.planning_dt)
        total += disc * cfg.w_speed * (v - cfg.ego_vmax) / cfg.ego_vmax
        disc *= cfg.discount
    return total


def _rollout(state, depth, seed, cfg, net) -> float:
    total, disc = 0.0, 1.0
    for d in range(depth, cfg.max_depth):
        a = default_policy(state, cfg)
        state, r = pomdp_transition(state, a, _stream(seed, d), cfg, net)
        total += disc * r
        disc *= cfg.discount
        if r <= cfg.r_collision:
            break
    return total


def _obs_key(prev, nxt, cfg):
    """Discretize exo displacements to the nearest hypothesis mean: held
    speed versus accelerating toward the preferred speed, both along the
    scenario route."""
    dt = cfg.planning_dt
    bits = []
    for i, (st0, _) in enumerate(prev.exo):
        d = nxt.exo[i][0].position - st0.position
        speed = st0.velocity.norm()
        fast = min(prev.pref_of(i), speed + Action.ACC.value * dt)
        if st0.route is None or fast - speed <= 1e-9:
            bits.append(0)
            continue
        line = _line(st0.route)
        arc, _ = line.project(st0.position)
        hold = line.point_at(min(arc + speed * dt, line.length)) - st0.position
        push = line.point_at(min(arc + fast * dt, line.length)) - st0.position
        bits.append(0 if (d - hold).norm_sq() <= (d - push).norm_sq() else 1)
    return tuple(bits)


class _Node:
    __slots__ = ("depth", "scen", "lower", "upper", "lb0", "kids", "size")

    def __init__(self, depth, scen):
        self.depth = depth
        self.scen = scen
        self.lower = 0.0
        self.upper = 0.0
        self.lb0 = 0.0
        self.kids = None
        self.size = 1


def _init_bounds(node, seeds, cfg, net):
    speed = node.scen[0][1].ego.velocity.norm()
    node.upper = _upper_bound(speed, cfg.max_depth - node.depth, cfg)
    total = 0.0
    for sid, st in node.scen:
        total += _rollout(st, node.depth, seeds[sid], cfg, net)
    node.lower = node.lb0 = total / len(node.scen)
    return len(node.scen) * (cfg.max_depth - node.depth)


def _expand(node, seeds, cfg, net):
    units = 0
    n = len(node.scen)
    kids = {}
    for action in ACTIONS:
        r_sum = 0.0
        groups = {}
        for sid, st in node.scen:
            nxt, r = pomdp_transition(
                st, action, _stream(seeds[sid], node.depth), cfg, net
            )
            units += 1
            r_sum += r
            if r <= cfg.r_collision or node.depth + 1 >= cfg.max_depth:
                continue
            key = _obs_key(st, nxt, cfg)
            groups.setdefault(key, []).append((sid, nxt))
        children = {}
        for key in sorted(groups):
            child = _Node(node.depth + 1, groups[key])
            units += _init_bounds(child, seeds, cfg, net)
            children[key] = child
        kids[action] = (r_sum / n, children)
    node.kids = kids
    created = sum(len(ch) for _, ch in kids.values())
    return units, created


def _action_bounds(node, action, cfg):
    r_mean, children = node.kids[action]
    n = len(node.scen)
    lo = up = r_mean
    for key in children:
        child = children[key]
        w = len(child.scen) / n
        lo += cfg.discount * w * child.lower
        up += cfg.discount * w * child.upper
    return lo, up


def _backup(path, cfg):
    for node in reversed(path):
        lo = up = -math.inf
        for action in ACTIONS:
            alo, aup = _action_bounds(node, action, cfg)
            lo = max(lo, alo)
            up = max(up, aup)
        # bounds only tighten; the rollout value stays inside the upper
        # bound because falling back to the default policy is itself an
        # admissible continuation
        node.lower = max(node.lower, lo)
        node.upper = min(node.upper, max(up, node.lb0))


def _descend(root, cfg):
    """Follow optimistic actions to the most uncertain unexpanded node."""
    path = [root]
    node = root
    while node.kids is not None:
        best_a, best_up = None, -math.inf
        for action in ACTIONS:
            _, aup = _action_bounds(node, action, cfg)
            if aup > best_up:
                best_a, best_up = action, aup
        children = node.kids[best_a][1]
        pick, gap = None, 1e-9
        n = len(node.scen)
        for key in sorted(children):
            child = children[key]
            g = (len(child.scen) / n) * (child.upper - child.lower)
            if g > gap:
                pick, gap = child, g
        if pick is None:
            return None, path
        node = pick
        path.append(node)
    return node, path


def _find_ego(world):
    best = None
    for aid in sorted(world.agents):
        agent = world.agents[aid]
        if agent.behavior not in ("gamma", "ttc"):
            best = agent
            break
    if best is None:
        raise ValueError("world has no externally driven agent")
    return best


def _nearest_exo(world, ego, limit, require=None):
    ranked = []
    for aid in sorted(world.agents):
        agent = world.agents[aid]
        if agent.behavior not in ("gamma", "ttc"):
            continue
        if require is not None and aid not in require:
            continue
        d = (agent.state.position - ego.state.position).norm_sq()
        ranked.append((d, aid, agent))
    ranked.sort(key=lambda t: (t[0], t[1]))
    return [t[2] for t in ranked[:limit]]


def plan(beliefs, world, ego_path, config, rng) -> Action:
    return plan_info(beliefs, world, ego_path, config, rng)[0]


def plan_info(beliefs, world, ego_path, config, rng):
    """Run the tree search; returns (action, {values, lower, upper, nodes}).

    K root scenarios are drawn from the beliefs with a private noise seed
    each.  The root is always expanded; further expansions follow the
    optimistic descent until the work budget runs out or the root bounds
    meet.  The returned action maximizes the lower bound regularized by
    subtree size, ties broken toward acceleration.
    """
    cfg = config if config is not None else DEFAULT_CONFIG
    net = world.network
    ego_agent = _find_ego(world)
    exo_agents = _nearest_exo(world, ego_agent, cfg.max_exo, require=beliefs)
    ego_state = replace(ego_agent.state, route=ego_path)
    profiles = tuple(a.profile for a in exo_agents)
    prefs = tuple(a.pref_speed for a in exo_agents)

    scen = []
    seeds = []
    sub = {a.id: beliefs[a.id] for a in exo_agents}
    for k in range(cfg.num_scenarios):
        hidden = joint_sample(sub, rng)
        exo = tuple(
            (
                replace(
                    a.state,
                    route=sub[a.id].routes[hidden[a.id].route_index],
                ),
                hidden[a.id],
            )
            for a in exo_agents
        )
        scen.append((k, PomdpState(ego_state, exo, 0, profiles, prefs)))
        seeds.append(rng.getrandbits(63))

    root = _Node(0, scen)
    spent = _init_bounds(root, seeds, cfg, net)
    units, created = _expand(root, seeds, cfg, net)
    spent += units
    root.size += created
    _backup([root], cfg)
    while spent < cfg.budget and root.upper - root.lower > 1e-6:
        node, path = _descend(root, cfg)
        if node is None:
            break
        units, created = _expand(node, seeds, cfg, net)
        spent += units
        for p in path:
            p.size += created
        _backup(path, cfg)

    floor = cfg.r_collision / (1.0 - cfg.discount)
    assert floor - 1e-6 <= root.lower <= root.upper + 1e-9
    assert root.upper <= 1e-9

    best, best_val, values = None, -math.inf, []
    for action in ACTIONS:
        lo, _ = _action_bounds(root, action, cfg)
        _, children = root.kids[action]
        weight = sum(ch.size for ch in children.values())
        val = lo - cfg.exploration * weight / cfg.num_scenarios
        values.append(val)
        if val > best_val:
            best, best_val = action, val
    info = {
        "values": values,
        "lower": root.lower,
        "upper": root.upper,
        "nodes": root.size,
    }
    return best, info


def rollout_plan(world, config, rng) -> Action:
    """Flat baseline: score each action by noise-seeded rollouts of the
    default policy, treating every exo agent as distracted on its actual
    route."""
    cfg = config if config is not None else DEFAULT_CONFIG
    net = world.network
    ego_agent = _find_ego(world)
    exo_agents = _nearest_exo(world, ego_agent, cfg.max_exo)
    exo = tuple(
        (replace(a.state), HiddenState("distracted", 0)) for a in exo_agents
    )
    root = PomdpState(
        ego=replace(ego_agent.state),
        exo=exo,
        time_depth=0,
        exo_profiles=tuple(a.profile for a in exo_agents),
        exo_prefs=tuple(a.pref_speed for a in exo_agents),
    )
    seeds = [rng.getrandbits(63) for _ in range(cfg.num_scenarios)]
    best, best_val = None, -math.inf
    for action in ACTIONS:
        total = 0.0
        for seed in seeds:
            nxt, r = pomdp_transition(root, action, _stream(seed, 0), cfg, net)
            value = r
            if r > cfg.r_collision and cfg.max_depth > 1:
                value += cfg.discount * _rollout(nxt, 1, seed, cfg, net)
            total += value
        mean = total / cfg.num_scenarios
        if mean > best_val:
            best, best_val = action, mean
    return best
