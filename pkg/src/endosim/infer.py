"""Posterior inference over scenarios by weighted simulation.

Each trial simulates the scenario once; observed labels contribute weight.
With the "likelihood" proposal, consequence choices are unconstrained and
every observed event multiplies the trial's weight by the probability that
the event, given the trial's values at its time, emits the observed label.
The "conditional" proposal restricts the choice at an observed event to
label-compatible consequences (drawn in proportion to their probability)
and applies the same label-probability factor, so no trial is wasted on a
choice the observation already rules out. Weights are accumulated in log
space; dead trials carry -inf.

The posterior for a query is the weight-normalized frequency of the values
trials recorded at the query's time. The effective sample size
(sum w)^2 / sum w^2 summarizes weight concentration; zero-weight trials
count toward n but not toward the ESS.

Reduction is deterministic: trials are summarized in fixed-size chunks in
ascending index order, each chunk rescaled by its own maximum log weight
before the ordered combine, so results are identical for any worker count
and extending a session matches a from-scratch run over the concatenated
timeline bit for bit.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass
from time import perf_counter

from .engine import (
    _run_events,
    _simulate,
    compile_model,
    compile_scenario,
    record_keys,
    state_from_arrays,
)
from .errors import (
    EngineInvariantError,
    ModelMismatchError,
    SessionExhaustedError,
    TimeOrderError,
    ValidationError,
)
from .model import (
    EventDef,
    ModelDef,
    ScenarioDef,
    SystemState,
    Time,
    cond_attrs,
    eval_condition,
    validate_model,
    validate_scenario,
)

__all__ = [
    "PROPOSALS",
    "QueryResult",
    "PosteriorReport",
    "Session",
    "ess",
    "weight_relevant_set",
    "observation_likelihood",
    "run_inference",
    "extend",
    "save_session",
    "load_session",
]

PROPOSALS = ("conditional", "likelihood", "prior")

_CHUNK = 1024
_NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# Reporting types

@dataclass(frozen=True)
class QueryResult:
    """Posterior distribution for one (attribute, time) query."""

    attr: str
    time: Time
    values: tuple[str, ...]
    probs: tuple[float, ...] | None

    def key(self) -> str:
        return f"{self.attr}@{self.time}"


@dataclass(frozen=True)
class PosteriorReport:
    queries: tuple[QueryResult, ...]
    n: int
    ess: float | None
    seed: int | None = None
    policy: str | None = None
    no_compatible: bool = False
    wall_ms: float | None = None
    error_bound: float | None = None


@dataclass
class Session:
    """Everything needed to resume a run: per-trial weights, recorded
    values, and horizon states for the scenario consumed so far."""

    model: ModelDef
    scenario: ScenarioDef
    seed: int
    policy: str
    n: int
    slot_keys: tuple[tuple[str, Time], ...]
    logws: list[float]
    recs: list[list[int]]
    states: list[tuple]

    def horizon_state(self, trial: int) -> SystemState:
        return state_from_arrays(self.model, *self.states[trial])


# ---------------------------------------------------------------------------
# Weight helpers

def ess(weights) -> float:
    """(sum w)^2 / sum w^2 on raw, unnormalized weights; 0 when all zero."""
    s1 = s2 = 0.0
    for w in weights:
        s1 += w
        s2 += w * w
    return (s1 * s1 / s2) if s2 > 0.0 else 0.0


def weight_relevant_set(model: ModelDef, scenario: ScenarioDef) -> set[tuple[str, Time]]:
    """The (attribute, time) pairs whose values decide observation weights:
    for each observed timeline entry, the attributes appearing in the
    condition or changes of any consequence that emits the actual label."""
    out: set[tuple[str, Time]] = set()
    for entry in scenario.timeline:
        if entry.observed is None:
            continue
        ev = model.event(entry.event)
        for c in ev.consequences:
            if c.observation == entry.observed:
                for a in cond_attrs(c.condition):
                    out.add((a, entry.time))
                for a, _v in c.changes:
                    out.add((a, entry.time))
    return out


def observation_likelihood(state: SystemState, event: EventDef, label: str) -> float:
    """Probability that ``event``, occurring now, emits ``label``: the
    summed probability of label-carrying consequences in the one condition
    group the state satisfies."""
    if label not in event.labels():
        raise ModelMismatchError(f"event {event.name} never emits label {label!r}")
    for cond, members in event.groups():
        if eval_condition(cond, state):
            return sum(c.probability for c in members if c.observation == label)
    raise EngineInvariantError(
        f"no condition of event {event.name} covers the current values"
    )


# ---------------------------------------------------------------------------
# Chunked trial running

def _require_valid(model: ModelDef, scenario: ScenarioDef, *, extension: bool = False):
    problems = validate_model(model) + validate_scenario(model, scenario, extension=extension)
    if problems:
        raise ValidationError("; ".join(str(p) for p in problems))


def _chunk_partial(cm, cs, seed, policy, lo, hi, resume):
    """Run trials [lo, hi); returns (m, s1, s2, qsums, logws, recs, states).

    ``resume`` is None for a fresh run, else (start_event, slot_map,
    base_logws, base_recs, base_states). Sums are scaled by exp(-m) where
    m is the chunk's max finite log weight (m is None if none is finite).
    """
    sizes = [len(cm.model.attrs[cm.model.attr_index(q.attr)].values) for q, _ in cs.query_slots]
    out_logws: list[float] = []
    out_recs: list[list[int]] = []
    out_states: list[tuple] = []

    for i in range(lo, hi):
        if resume is None:
            logw, rec, _labels, arrays = _simulate(cm, cs, seed, i, policy)
            arrays = (
                tuple(arrays[0]), tuple(arrays[1]), tuple(arrays[2]),
                tuple(arrays[3]), arrays[4],
            )
        else:
            start, slot_map, base_logws, base_recs, base_states = resume
            logw = base_logws[i]
            rec = [-1] * cs.n_slots
            old = base_recs[i]
            for oslot, nslot in slot_map:
                rec[nslot] = old[oslot]
            if logw == _NEG_INF:
                arrays = base_states[i]  # dead trial: state left at old horizon
            else:
                V, D, P, R, clock = base_states[i]
                V, D, P, R = list(V), list(D), list(P), list(R)
                logw, clock = _run_events(
                    cm, cs, start, 0, V, D, P, R, clock, rec, logw, seed, i, policy
                )
                arrays = (tuple(V), tuple(D), tuple(P), tuple(R), clock)
        out_logws.append(logw)
        out_recs.append(rec)
        out_states.append(arrays)

    m = None
    for lw in out_logws:
        if lw != _NEG_INF and (m is None or lw > m):
            m = lw
    s1 = s2 = 0.0
    qsums = [[0.0] * size for size in sizes]
    if m is not None:
        qslots = [slot for _q, slot in cs.query_slots]
        for lw, rec in zip(out_logws, out_recs):
            if lw == _NEG_INF:
                continue
            w = math.exp(lw - m)
            s1 += w
            s2 += w * w
            for qi, slot in enumerate(qslots):
                qsums[qi][rec[slot]] += w
    return (m, s1, s2, qsums, out_logws, out_recs, out_states)


_JOB = None


def _job_runner(span):
    lo, hi = span
    cm, cs, seed, policy, resume = _JOB
    return _chunk_partial(cm, cs, seed, policy, lo, hi, resume)


def _run_chunks(cm, cs, seed, policy, n, resume, workers: int, chunk_size: int):
    global _JOB
    spans = [(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]
    if workers > 1 and len(spans) > 1:
        _JOB = (cm, cs, seed, policy, resume)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                partials = pool.map(_job_runner, spans, chunksize=1)
        finally:
            _JOB = None
    else:
        partials = [
            _chunk_partial(cm, cs, seed, policy, lo, hi, resume) for lo, hi in spans
        ]
    return partials


def _combine(cm, cs, partials, n, seed, policy, t_start):
    sizes = [len(cm.model.attrs[cm.model.attr_index(q.attr)].values) for q, _ in cs.query_slots]
    M = None
    for m, *_rest in partials:
        if m is not None and (M is None or m > M):
            M = m
    S1 = S2 = 0.0
    Q = [[0.0] * size for size in sizes]
    logws: list[float] = []
    recs: list[list[int]] = []
    states: list[tuple] = []
    for m, s1, s2, qsums, lws, rcs, sts in partials:
        logws.extend(lws)
        recs.extend(rcs)
        states.extend(sts)
        if m is None:
            continue
        f = math.exp(m - M)
        S1 += s1 * f
        S2 += s2 * f * f
        for qi, row in enumerate(qsums):
            target = Q[qi]
            for vi, x in enumerate(row):
                target[vi] += x * f

    no_compatible = M is None or S1 <= 0.0
    results = []
    for qi, (q, _slot) in enumerate(cs.query_slots):
        values = cm.model.attribute(q.attr).values
        probs = None if no_compatible else tuple(x / S1 for x in Q[qi])
        results.append(QueryResult(q.attr, q.time, values, probs))
    report = PosteriorReport(
        queries=tuple(results),
        n=n,
        ess=0.0 if no_compatible else S1 * S1 / S2,
        seed=seed,
        policy=policy,
        no_compatible=no_compatible,
        wall_ms=(perf_counter() - t_start) * 1000.0,
    )
    return report, logws, recs, states


def run_inference(
    model: ModelDef,
    scenario: ScenarioDef,
    n: int,
    seed: int,
    *,
    policy: str = "conditional",
    workers: int = 1,
    chunk_size: int = _CHUNK,
) -> tuple[Session, PosteriorReport]:
    """Estimate the scenario's query posteriors from ``n`` weighted trials.

    Validates both inputs, runs trials (seed, trial-index)-keyed so the
    result is independent of workers, and returns the resumable session
    along with the report. If every trial is incompatible with the
    observations the report's ``no_compatible`` flag is set and
    distributions are None.
    """
    t_start = perf_counter()
    if n < 1:
        raise ValueError("n must be at least 1")
    if policy not in PROPOSALS:
        raise ValueError(f"unknown policy {policy!r}")
    _require_valid(model, scenario)
    cm = compile_model(model)
    cs = compile_scenario(cm, scenario)
    partials = _run_chunks(cm, cs, seed, policy, n, None, workers, chunk_size)
    report, logws, recs, states = _combine(cm, cs, partials, n, seed, policy, t_start)
    session = Session(
        model=model,
        scenario=scenario,
        seed=seed,
        policy=policy,
        n=n,
        slot_keys=cs.slot_keys,
        logws=logws,
        recs=recs,
        states=states,
    )
    return session, report


def extend(
    session: Session,
    fragment: ScenarioDef,
    *,
    workers: int = 1,
    chunk_size: int = _CHUNK,
) -> tuple[Session, PosteriorReport]:
    """Continue a session through an extension fragment.

    The fragment declares no priors; its timeline must start no earlier
    than one delta after the session's last event. Surviving trials resume
    from their stored horizon states and consume exactly the random-stream
    segments a from-scratch run over the concatenated timeline would, so
    the combined report is identical to that run's. Dead trials stay dead
    without being simulated.
    """
    t_start = perf_counter()
    model = session.model
    if not fragment.timeline:
        raise ValidationError("extension fragment has no timeline entries")
    _require_valid(model, fragment, extension=True)
    if all(lw == _NEG_INF for lw in session.logws):
        raise SessionExhaustedError(
            "every trial in the session has zero weight; nothing can be extended"
        )

    old = session.scenario
    if old.timeline:
        gap_floor = old.timeline[-1].time.numeric(model.delta) + model.delta
        t_new = fragment.timeline[0].time.numeric(model.delta)
        if t_new < gap_floor * (1.0 - 1e-12):
            raise TimeOrderError(
                f"fragment starts at {fragment.timeline[0].time}, before the "
                f"session horizon {old.timeline[-1].time}+d"
            )
    combined = ScenarioDef(
        priors=old.priors,
        timeline=old.timeline + fragment.timeline,
        queries=old.queries + fragment.queries,
    )
    _require_valid(model, combined)

    cm = compile_model(model)
    cs = compile_scenario(cm, combined)
    key_index = {k: s for s, k in enumerate(cs.slot_keys)}
    slot_map = tuple(
        (oslot, key_index[key]) for oslot, key in enumerate(session.slot_keys)
    )
    resume = (
        len(old.timeline),
        slot_map,
        session.logws,
        session.recs,
        session.states,
    )
    partials = _run_chunks(
        cm, cs, session.seed, session.policy, session.n, resume, workers, chunk_size
    )
    report, logws, recs, states = _combine(
        cm, cs, partials, session.n, session.seed, session.policy, t_start
    )
    new_session = Session(
        model=model,
        scenario=combined,
        seed=session.seed,
        policy=session.policy,
        n=session.n,
        slot_keys=cs.slot_keys,
        logws=logws,
        recs=recs,
        states=states,
    )
    return new_session, report


# ---------------------------------------------------------------------------
# Session persistence

def save_session(session: Session, path: str) -> None:
    """Write a session as JSON lines: one header object, then one object
    per trial. -inf log weights are stored as null."""
    from .dsl import serialize_model, serialize_scenario

    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": 1,
            "kind": "session",
            "seed": session.seed,
            "policy": session.policy,
            "n": session.n,
            "model": serialize_model(session.model),
            "scenario": serialize_scenario(session.scenario),
            "slots": [f"{attr}@{t}" for attr, t in session.slot_keys],
        }
        fh.write(json.dumps(header) + "\n")
        for lw, rec, state in zip(session.logws, session.recs, session.states):
            V, D, P, R, clock = state
            fh.write(json.dumps({
                "logw": None if lw == _NEG_INF else lw,
                "rec": list(rec),
                "state": {
                    "values": list(V),
                    "dirs": list(D),
                    "pending": list(P),
                    "regime": [None if r is None else [r[0], r[1]] for r in R],
                    "clock": clock,
                },
            }) + "\n")


def load_session(path: str) -> Session:
    from .dsl import parse_model, parse_scenario, parse_time

    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "session" or header.get("format") != 1:
            raise ValidationError(f"{path} is not a format-1 session file")
        model = parse_model(header["model"])
        scenario = parse_scenario(header["scenario"])
        slot_keys = []
        for text in header["slots"]:
            attr, _, t = text.rpartition("@")
            slot_keys.append((attr, parse_time(t)))
        logws: list[float] = []
        recs: list[list[int]] = []
        states: list[tuple] = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            logws.append(_NEG_INF if obj["logw"] is None else float(obj["logw"]))
            recs.append(list(obj["rec"]))
            st = obj["state"]
            states.append((
                tuple(st["values"]),
                tuple(st["dirs"]),
                tuple(None if p is None else float(p) for p in st["pending"]),
                tuple(None if r is None else (float(r[0]), float(r[1])) for r in st["regime"]),
                float(st["clock"]),
            ))
    n = header["n"]
    if len(logws) != n:
        raise ValidationError(f"{path} declares {n} trials but holds {len(logws)}")
    return Session(
        model=model,
        scenario=scenario,
        seed=header["seed"],
        policy=header["policy"],
        n=n,
        slot_keys=tuple(slot_keys),
        logws=logws,
        recs=recs,
        states=states,
    )
