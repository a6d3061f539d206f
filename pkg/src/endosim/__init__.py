"""Temporal reasoning over attribute models.

Attributes take ordered values that drift under declared influences and
jump at scheduled events; scenarios attach observations and queries to a
timeline. The package simulates trajectories, estimates posteriors by
weighted sampling, and on feed-forward models computes them exactly.
"""

from .dsl import parse_model, parse_scenario, serialize_model, serialize_scenario
from .engine import (
    Stream,
    Trial,
    advance_endogenous,
    apply_event,
    recompute_influences,
    run_trial,
)
from .errors import (
    EndosimError,
    EngineInvariantError,
    ModelMismatchError,
    ParseError,
    SessionExhaustedError,
    TimeOrderError,
    UnsupportedModelError,
    ValidationError,
)
from .infer import (
    PosteriorReport,
    QueryResult,
    Session,
    ess,
    extend,
    load_session,
    observation_likelihood,
    run_inference,
    save_session,
    weight_relevant_set,
)
from .influence import (
    Direction,
    InfluenceRule,
    NetInfluence,
    TimeInterval,
    aggregate,
    combine_concordant,
    combine_contrary,
    combine_intervals,
)
from .model import (
    AttributeDef,
    Consequence,
    EventDef,
    ModelDef,
    Query,
    ScenarioDef,
    SystemState,
    Time,
    TimelineEntry,
    Violation,
    apply_change_set,
    eval_condition,
    initial_state,
    validate_model,
    validate_scenario,
)
from .oracle import (
    FeedForwardCheck,
    check_feedforward,
    exact_posterior,
    uniform_sum_crossing,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeDef",
    "Consequence",
    "Direction",
    "EndosimError",
    "EngineInvariantError",
    "EventDef",
    "FeedForwardCheck",
    "InfluenceRule",
    "ModelDef",
    "ModelMismatchError",
    "NetInfluence",
    "ParseError",
    "PosteriorReport",
    "Query",
    "QueryResult",
    "ScenarioDef",
    "Session",
    "SessionExhaustedError",
    "Stream",
    "SystemState",
    "Time",
    "TimeInterval",
    "TimeOrderError",
    "TimelineEntry",
    "Trial",
    "UnsupportedModelError",
    "ValidationError",
    "Violation",
    "advance_endogenous",
    "aggregate",
    "apply_change_set",
    "apply_event",
    "check_feedforward",
    "combine_concordant",
    "combine_contrary",
    "combine_intervals",
    "ess",
    "eval_condition",
    "exact_posterior",
    "extend",
    "initial_state",
    "load_session",
    "observation_likelihood",
    "parse_model",
    "parse_scenario",
    "recompute_influences",
    "run_inference",
    "run_trial",
    "save_session",
    "serialize_model",
    "serialize_scenario",
    "uniform_sum_crossing",
    "validate_model",
    "validate_scenario",
    "weight_relevant_set",
    "__version__",
]
