"""Per-agent histogram filter over hidden driving intent.

Each tracked agent carries a joint hypothesis (behavior type, intended
route): distracted agents hold their current speed along the route,
attentive agents move the way the crowd model would.  Observed frame
displacements are scored against each hypothesis's predicted mean under an
isotropic Gaussian and folded in with Bayes' rule.  Beliefs factor across
agents, so each one updates independently.
"""

import math
import random
from dataclasses import dataclass, replace

from .agents import Agent
from .behavior_gamma import GammaParams, gamma_step
from .roadnet import LaneRef, locate, route_candidates

TYPES = ("distracted", "attentive")
PROB_FLOOR = 1e-4
ROUTE_HORIZON = 120.0
# fixed stream for route subsampling keeps beliefs reproducible run to run
_ROUTE_SEED = 0xBE11EF

_GAMMA_PARAMS = {}


@dataclass(frozen=True)
class HiddenState:
    agent_type: str
    route_index: int

    def __post_init__(self):
        if self.agent_type not in TYPES:
            raise ValueError("unknown agent type %r" % self.agent_type)


@dataclass(frozen=True)
class AgentBelief:
    """Distribution over (type, route) hypotheses for one agent.

    Carries the route candidates U_i plus the profile, preferred speed,
    and network needed to roll a hypothesis forward one step.
    """

    hypotheses: tuple
    probs: tuple
    routes: tuple
    profile: object
    pref_speed: float
    network: object

    def __post_init__(self):
        if len(self.hypotheses) != len(self.probs):
            raise ValueError("probs and hypotheses differ in length")
        if any(p < 0.0 for p in self.probs):
            raise ValueError("negative probability")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("probabilities sum to %r" % sum(self.probs))
        for h in self.hypotheses:
            if h.route_index >= len(self.routes):
                raise ValueError("route_index %d out of range" % h.route_index)


class _LoneWorld:
    """World view with road context but no other agents."""

    __slots__ = ("network",)

    def __init__(self, network):
        self.network = network

    def neighbors_of(self, agent, radius, limit):
        return []


def _enumerate_hypotheses(n_routes):
    return tuple(HiddenState(t, j) for j in range(n_routes) for t in TYPES)


def init_belief(agent, network, max_routes, horizon=ROUTE_HORIZON) -> AgentBelief:
    """Uniform prior over (type, route) for every route reachable from the
    agent's current lane.  Raises OffNetwork when the agent cannot be
    localized."""
    ref = locate(network, agent.state.position, agent.state.heading)
    routes = route_candidates(
        network, ref, horizon, max_routes, random.Random(_ROUTE_SEED)
    )
    hyps = _enumerate_hypotheses(len(routes))
    p = 1.0 / len(hyps)
    return AgentBelief(
        hypotheses=hyps,
        probs=(p,) * len(hyps),
        routes=tuple(routes),
        profile=agent.profile,
        pref_speed=agent.pref_speed,
        network=network,
    )


def _gamma_params(dt):
    params = _GAMMA_PARAMS.get(dt)
    if params is None:
        params = GammaParams(dt=dt)
        _GAMMA_PARAMS[dt] = params
    return params


def _mean_displacement(belief, state, hypothesis, dt):
    """Predicted one-step displacement of state under one hypothesis."""
    route = belief.routes[hypothesis.route_index]
    line = route.polyline
    if hypothesis.agent_type == "distracted":
        # track the intended path at the current speed
        speed = state.velocity.norm()
        arc, _ = line.project(state.position)
        target = line.point_at(min(arc + speed * dt, line.length))
        return target - state.position
    ghost = Agent(
        id=-1,
        profile=belief.profile,
        state=replace(state, route=route),
        pref_speed=belief.pref_speed,
        # the hypothesis fixes the lane, so road context needs no lookup
        lane_ref=LaneRef(route.segment_ids[0], 0.0),
    )
    v = gamma_step(_LoneWorld(belief.network), ghost, _gamma_params(dt))
    return v * dt


def update(belief, prev_state, observed_state, dt, sigma) -> AgentBelief:
    """Bayes update from one observed displacement.

    Likelihood of hypothesis h is exp(-|obs - m_h|^2 / (2 sigma^2)) with
    m_h the hypothesis's predicted displacement.  If every weight
    underflows to zero the prior is kept.  Each posterior entry is floored
    at PROB_FLOOR and renormalized so no hypothesis is locked out forever.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    obs = observed_state.position - prev_state.position
    inv = 1.0 / (2.0 * sigma * sigma)
    weights = []
    for h, prior in zip(belief.hypotheses, belief.probs):
        m = _mean_displacement(belief, prev_state, h, dt)
        weights.append(prior * math.exp(-(obs - m).norm_sq() * inv))
    total = sum(weights)
    if total <= 0.0:
        post = list(belief.probs)
    else:
        post = [w / total for w in weights]
    post = [max(p, PROB_FLOOR) for p in post]
    s = sum(post)
    return replace(belief, probs=tuple(p / s for p in post))


def sample(belief, rng) -> HiddenState:
    """One categorical draw from the belief."""
    r = rng.random()
    acc = 0.0
    for h, p in zip(belief.hypotheses, belief.probs):
        acc += p
        if r < acc:
            return h
    return belief.hypotheses[-1]


def joint_sample(beliefs, rng) -> dict:
    """Independent draw per agent, in id order so replay is deterministic."""
    return {aid: sample(beliefs[aid], rng) for aid in sorted(beliefs)}


def refresh(belief, agent, max_routes, horizon=ROUTE_HORIZON) -> AgentBelief:
    """Re-enumerate route candidates after the agent moved past a fork.

    Old route mass is re-projected onto the new candidates in proportion
    to shared segments; type marginals carry over unchanged.  Routes with
    no overlap anywhere fall back to uniform within their type.
    """
    ref = locate(belief.network, agent.state.position, agent.state.heading)
    routes = tuple(
        route_candidates(
            belief.network, ref, horizon, max_routes, random.Random(_ROUTE_SEED)
        )
    )
    old_sets = [set(r.segment_ids) for r in belief.routes]
    new_sets = [set(r.segment_ids) for r in routes]
    probs = []
    for t in TYPES:
        by_route = {
            h.route_index: p
            for h, p in zip(belief.hypotheses, belief.probs)
            if h.agent_type == t
        }
        mass = sum(by_route.values())
        w = [
            sum(
                p * len(old_sets[i] & new_sets[j])
                for i, p in by_route.items()
            )
            for j in range(len(routes))
        ]
        total = sum(w)
        if total <= 0.0:
            w = [1.0] * len(routes)
            total = float(len(routes))
        probs.append([mass * x / total for x in w])
    hyps = _enumerate_hypotheses(len(routes))
    flat = tuple(probs[k][j] for j in range(len(routes)) for k in range(len(TYPES)))
    return replace(belief, hypotheses=hyps, probs=flat, routes=routes)


def belief_records(beliefs) -> list:
    """Trace-embeddable dump rows: one per (agent, hypothesis)."""
    rows = []
    for aid in sorted(beliefs):
        b = beliefs[aid]
        for h, p in zip(b.hypotheses, b.probs):
            rows.append(
                {
                    "agent_id": aid,
                    "hypothesis": {
                        "type": h.agent_type,
                        "route_index": h.route_index,
                    },
                    "prob": p,
                }
            )
    return rows
