"""Headless crowd-driving simulator: velocity-space crowd behavior on lane
networks, a belief tracker over hidden agent intentions, and an online
belief-tree driving planner, with reproducible benchmark harnesses."""

from .agents import Agent, AgentProfile, AgentState, DEFAULT_PROFILES
from .behavior_gamma import GammaParams, gamma_step
from .behavior_ttc import TtcParams, ttc_step
from .belief import (
    AgentBelief,
    HiddenState,
    belief_records,
    init_belief,
    joint_sample,
    refresh,
    sample,
    update,
)
from .geom import HalfPlane, Polyline, Vec2
from .planner import (
    Action,
    PomdpState,
    SearchConfig,
    default_policy,
    plan,
    plan_info,
    pomdp_transition,
    reward,
    rollout_plan,
)
from .roadnet import (
    LaneNetwork,
    LaneRef,
    LaneSegment,
    OffNetwork,
    RouteCandidate,
    SidewalkNetwork,
    generate_scenario,
    load_network,
    locate,
    route_candidates,
    save_network,
)
from .sim import (
    DEFAULT_CLASS_MIX,
    SimConfig,
    SimMetrics,
    add_agent,
    make_world,
    metrics,
    spawn_despawn,
    step,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentBelief",
    "AgentProfile",
    "AgentState",
    "Action",
    "DEFAULT_CLASS_MIX",
    "DEFAULT_PROFILES",
    "GammaParams",
    "HalfPlane",
    "HiddenState",
    "LaneNetwork",
    "LaneRef",
    "LaneSegment",
    "OffNetwork",
    "Polyline",
    "PomdpState",
    "RouteCandidate",
    "SearchConfig",
    "SidewalkNetwork",
    "SimConfig",
    "SimMetrics",
    "TtcParams",
    "Vec2",
    "add_agent",
    "belief_records",
    "default_policy",
    "generate_scenario",
    "gamma_step",
    "init_belief",
    "joint_sample",
    "load_network",
    "locate",
    "make_world",
    "metrics",
    "plan",
    "plan_info",
    "pomdp_transition",
    "refresh",
    "reward",
    "rollout_plan",
    "route_candidates",
    "sample",
    "save_network",
    "spawn_despawn",
    "step",
    "ttc_step",
    "update",
    "write_trace",
]
