"""Trajectory simulation.

A trial develops one possible world for a scenario: initial values are
drawn from the priors, and for each timeline entry in order the engine
advances endogenous dynamics to the entry's time, records any values the
caller asked for at that time, resolves the event (find the one condition
group the current values satisfy, draw a consequence, apply its changes),
recomputes influences for attributes whose inputs changed, and charges the
event-processing offset delta to the clock. Values recorded one delta
after an entry therefore reflect the event's changes.

Influence regimes: after any value change, each affected target gets the
net influence of its active rules. A STEADY net clears any pending
transition. A moving net whose (direction, interval) equals the target's
current regime leaves the pending transition alone; anything else draws a
fresh transition time uniformly from the interval. Fresh regimes start at
the post-event instant and are not charged the delta; surviving pendings
are. Between events, the smallest pending fires first (ties go to the
earlier-declared attribute), steps its attribute one place along its value
order, and triggers recomputation for the attribute and its dependents.

Randomness contract: trial i of a run with seed s draws only from counter
streams keyed (s, i, segment). Segment 0 covers the initial draws; segment
k >= 1 covers advancing to the k-th timeline entry plus that entry's
processing. Draw order within a segment is fixed: transition resamples in
firing order (affected targets in declaration order), then one uniform for
the consequence choice, then fresh regime samples in declaration order.
Results for a trial are therefore independent of batching, worker count,
and of whether earlier entries were processed in a previous session: a
session extension consumes exactly the segments a from-scratch run over
the concatenated timeline would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    EngineInvariantError,
    ModelMismatchError,
    ValidationError,
)
from .influence import Direction, TimeInterval, combine_concordant, combine_contrary
from .model import (
    Cond,
    CondAnd,
    CondNot,
    CondOr,
    CondTest,
    CondTrue,
    Consequence,
    EventDef,
    ModelDef,
    ScenarioDef,
    SystemState,
    Time,
    eval_condition,
    validate_model,
    validate_scenario,
)

__all__ = [
    "Stream",
    "Trial",
    "run_trial",
    "apply_event",
    "recompute_influences",
    "advance_endogenous",
]

_MASK = (1 << 64) - 1
_GOLD = 0x9E3779B97F4A7C15
_MIN_PENDING = 1e-12


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


class Stream:
    """Counter-based uniform stream keyed by (seed, trial, segment).

    Construction is O(1) and draws cost one 64-bit mix, so millions of
    short-lived per-trial streams are affordable; a general-purpose
    generator object per (trial, segment) would dominate the run time.
    Streams with different keys are statistically independent.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int, trial: int = 0, segment: int = 0):
        s = _mix((seed & _MASK) ^ _GOLD)
        s = _mix((s + ((trial & _MASK) * 0xBF58476D1CE4E5B9 & _MASK)) & _MASK)
        s = _mix((s + ((segment & _MASK) * 0x94D049BB133111EB & _MASK)) & _MASK)
        self._s = s

    def random(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        self._s = s = (self._s + _GOLD) & _MASK
        z = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
        return ((z ^ (z >> 31)) >> 11) * 1.1102230246251565e-16  # 2**-53


# ---------------------------------------------------------------------------
# Model compilation

def _compile_cond(model: ModelDef, expr: Cond):
    """Close ``expr`` over attribute/value indices; returns fn(values)->bool."""
    if isinstance(expr, CondTest):
        ai = model.attr_index(expr.attr)
        vi = model.value_index(expr.attr, expr.value)
        return lambda v, ai=ai, vi=vi: v[ai] == vi
    if isinstance(expr, CondTrue):
        return lambda v: True
    if isinstance(expr, CondNot):
        f = _compile_cond(model, expr.expr)
        return lambda v, f=f: not f(v)
    if isinstance(expr, CondAnd):
        fns = tuple(_compile_cond(model, p) for p in expr.parts)
        if len(fns) == 2:
            f, g = fns
            return lambda v, f=f, g=g: f(v) and g(v)
        return lambda v, fns=fns: all(f(v) for f in fns)
    if isinstance(expr, CondOr):
        fns = tuple(_compile_cond(model, p) for p in expr.parts)
        if len(fns) == 2:
            f, g = fns
            return lambda v, f=f, g=g: f(v) or g(v)
        return lambda v, fns=fns: any(f(v) for f in fns)
    raise TypeError(f"not a condition: {expr!r}")


class _CGroup:
    __slots__ = ("cond", "cum", "members", "obs", "consequences")

    def __init__(self, cond, cum, members, obs, consequences):
        self.cond = cond
        self.cum = cum            # cumulative probabilities, declaration order
        self.members = members    # [(changes as ((ai, vi), ...), label or None)]
        self.obs = obs            # label -> (lik, log lik, ((cum, member_idx), ...))
        self.consequences = consequences  # originals, for the public API


class _CEvent:
    __slots__ = ("name", "groups")

    def __init__(self, name, groups):
        self.name = name
        self.groups = groups


class _CModel:
    __slots__ = (
        "model", "n", "delta", "sizes", "names",
        "events", "rules_by_target", "recompute_on_change",
    )

    def __init__(self, model: ModelDef):
        self.model = model
        self.n = len(model.attrs)
        self.delta = model.delta
        self.sizes = tuple(len(a.values) for a in model.attrs)
        self.names = tuple(a.name for a in model.attrs)

        self.events = {}
        for e in model.events:
            groups = []
            all_labels = e.labels()
            for cond, members in e.groups():
                cum, packed = [], []
                acc = 0.0
                for c in members:
                    acc += c.probability
                    cum.append(acc)
                    packed.append((
                        tuple(
                            (model.attr_index(a), model.value_index(a, v))
                            for a, v in c.changes
                        ),
                        c.observation,
                    ))
                obs = {}
                for label in all_labels:
                    lik = sum(c.probability for c in members if c.observation == label)
                    pairs, acc2 = [], 0.0
                    if lik > 0.0:
                        for mi, c in enumerate(members):
                            if c.observation == label:
                                acc2 += c.probability / lik
                                pairs.append((acc2, mi))
                    obs[label] = (
                        lik,
                        math.log(lik) if lik > 0.0 else float("-inf"),
                        tuple(pairs),
                    )
                groups.append(_CGroup(
                    _compile_cond(model, cond), tuple(cum), packed, obs, tuple(members)
                ))
            self.events[e.name] = _CEvent(e.name, groups)

        # Influence tables with index keys; cells are (dir, lo, hi) or None.
        by_target: list[tuple] = [() for _ in range(self.n)]
        for a in model.attrs:
            compiled = []
            for r in model.effective_rules(a.name):
                src_ais = tuple(model.attr_index(s) for s in r.sources)
                table = {}
                for key, (direction, interval) in r.table.items():
                    ikey = tuple(
                        model.value_index(s, v) for s, v in zip(r.sources, key)
                    ) + (model.value_index(r.target, key[-1]),)
                    if direction is Direction.STEADY:
                        table[ikey] = None
                    else:
                        table[ikey] = (int(direction), interval.lo, interval.hi)
                compiled.append((src_ais, table))
            by_target[model.attr_index(a.name)] = tuple(compiled)
        self.rules_by_target = tuple(by_target)

        dep: list[set[int]] = [set() for _ in range(self.n)]
        for ti in range(self.n):
            if self.rules_by_target[ti]:
                dep[ti].add(ti)  # changing a target re-evaluates its own row
                for src_ais, _ in self.rules_by_target[ti]:
                    for si in src_ais:
                        dep[si].add(ti)
        self.recompute_on_change = tuple(tuple(sorted(s)) for s in dep)


def compile_model(model: ModelDef) -> _CModel:
    cache = model._compiled_cache
    if not cache:
        cache.append(_CModel(model))
    return cache[0]


# ---------------------------------------------------------------------------
# Scenario compilation (record plan)

class _CScenario:
    __slots__ = (
        "events", "slot_keys", "query_slots", "priors_cum", "t0", "n_slots",
    )

    def __init__(self, events, slot_keys, query_slots, priors_cum, t0):
        # events: [(cevent, Time, numeric time, observed, pre, post)] with
        # pre/post as ((attr_idx, slot), ...)
        self.events = events
        self.slot_keys = slot_keys      # slot -> (attr name, Time)
        self.query_slots = query_slots  # [(Query, slot)]
        self.priors_cum = priors_cum    # per attr: (cum tuple, fallback idx)
        self.t0 = t0
        self.n_slots = len(slot_keys)


def record_keys(model: ModelDef, scenario: ScenarioDef) -> list[tuple[str, Time]]:
    """Queries plus weight-relevant observation values: what a trial records."""
    from .infer import weight_relevant_set

    keys = {(q.attr, q.time) for q in scenario.queries}
    keys |= weight_relevant_set(model, scenario)
    return sorted(keys, key=lambda k: (k[1].base, k[1].deltas, k[0]))


def compile_scenario(
    cm: _CModel,
    scenario: ScenarioDef,
    keys: list[tuple[str, Time]] | None = None,
) -> _CScenario:
    model = cm.model
    if keys is None:
        keys = record_keys(model, scenario)

    slot_keys: list[tuple[str, Time]] = []
    pre: list[list[tuple[int, int]]] = [[] for _ in scenario.timeline]
    post: list[list[tuple[int, int]]] = [[] for _ in scenario.timeline]
    for attr, t in keys:
        ai = model.attr_index(attr)
        slot = len(slot_keys)
        for i, entry in enumerate(scenario.timeline):
            if entry.time == t:
                pre[i].append((ai, slot))
                break
        else:
            for i, entry in enumerate(scenario.timeline):
                if entry.time.plus_delta() == t:
                    post[i].append((ai, slot))
                    break
            else:
                raise ValidationError(
                    f"recorded time {t} matches no timeline entry or post-event instant"
                )
        slot_keys.append((attr, t))

    events = []
    for i, entry in enumerate(scenario.timeline):
        cev = cm.events.get(entry.event)
        if cev is None:
            raise ModelMismatchError(f"unknown event {entry.event!r}")
        events.append((
            cev,
            entry.time,
            entry.time.numeric(cm.delta),
            entry.observed,
            tuple(pre[i]),
            tuple(post[i]),
        ))

    priors_cum = None
    if scenario.priors is not None:
        priors_cum = []
        for a in model.attrs:
            dist = scenario.priors.get(a.name)
            if dist is None:
                raise ValidationError(f"no prior for attribute {a.name}")
            acc, cum = 0.0, []
            fallback = 0
            for j, v in enumerate(a.values):
                p = dist.get(v, 0.0)
                acc += p
                cum.append(acc)
                if p > 0.0:
                    fallback = j
            priors_cum.append((tuple(cum), fallback))

    key_index = {k: s for s, k in enumerate(slot_keys)}
    query_slots = [(q, key_index[(q.attr, q.time)]) for q in scenario.queries]
    t0 = events[0][2] if events else 0.0
    return _CScenario(tuple(events), tuple(slot_keys), tuple(query_slots), priors_cum, t0)


# ---------------------------------------------------------------------------
# Core dynamics on plain arrays

def _net(entries):
    """Merge compiled cells ((dir, lo, hi) or None) into (dir, lo, hi) or None.

    Mirrors influence.aggregate: concordant folds in ascending midpoint
    order, the faster side wins, midpoint ties go DOWN.
    """
    ups, downs = [], []
    for cell in entries:
        if cell is not None:
            (ups if cell[0] > 0 else downs).append((cell[1] + cell[2], cell[1], cell[2]))
    if not ups and not downs:
        return None

    def fold(side):
        side.sort()
        _, alo, ahi = side[0]
        for _, blo, bhi in side[1:]:
            p = combine_concordant(alo, blo)
            q = combine_concordant(ahi, bhi)
            if q < p:
                p, q = q, p
            alo, ahi = p, q
        return alo, ahi

    if not downs:
        return (1, *fold(ups))
    if not ups:
        return (-1, *fold(downs))
    ulo, uhi = fold(ups)
    dlo, dhi = fold(downs)
    if ulo + uhi < dlo + dhi:
        p = combine_contrary(ulo, dlo)
        q = combine_contrary(uhi, dhi)
        d = 1
    else:
        p = combine_contrary(dlo, ulo)
        q = combine_contrary(dhi, uhi)
        d = -1
    if q < p:
        p, q = q, p
    return (d, p, q)


def _recompute(cm: _CModel, V, D, P, R, targets, rng) -> list[int]:
    """Refresh regimes for ``targets`` (ascending); returns freshly sampled."""
    fresh = []
    for ti in targets:
        entries = []
        for src_ais, table in cm.rules_by_target[ti]:
            key = tuple(V[s] for s in src_ais) + (V[ti],)
            try:
                entries.append(table[key])
            except KeyError:
                raise ModelMismatchError(
                    f"influence on {cm.names[ti]} has no entry for value combination {key}"
                ) from None
        net = _net(entries)
        if net is None:
            D[ti] = 0
            P[ti] = None
            R[ti] = None
        else:
            d, lo, hi = net
            if D[ti] == d and R[ti] == (lo, hi) and P[ti] is not None:
                continue  # same regime: the pending transition survives
            D[ti] = d
            R[ti] = (lo, hi)
            p = lo + (hi - lo) * rng.random()
            P[ti] = p if p > 0.0 else _MIN_PENDING
            fresh.append(ti)
    return fresh


def _advance(cm: _CModel, V, D, P, R, clock: float, t_end: float, rng) -> float:
    """Run endogenous dynamics until ``t_end``; fires pendings in time order."""
    n = cm.n
    while True:
        best, bt = -1, math.inf
        for i in range(n):
            p = P[i]
            if p is not None and p < bt:
                best, bt = i, p
        left = t_end - clock
        if best < 0 or bt > left:
            if best >= 0 and left > 0.0:
                for i in range(n):
                    if P[i] is not None:
                        P[i] -= left
            return t_end
        clock += bt
        for i in range(n):
            if P[i] is not None:
                P[i] -= bt
        nv = V[best] + D[best]
        if nv < 0 or nv >= cm.sizes[best]:
            raise EngineInvariantError(
                f"{cm.names[best]} pushed past the end of its value order"
            )
        V[best] = nv
        D[best] = 0
        P[best] = None
        R[best] = None
        _recompute(cm, V, D, P, R, cm.recompute_on_change[best], rng)


def _pick(cum, u: float) -> int:
    for i, c in enumerate(cum):
        if u < c:
            return i
    return len(cum) - 1


def _run_events(
    cm: _CModel,
    cs: _CScenario,
    start: int,
    seg_offset: int,
    V, D, P, R,
    clock: float,
    rec,
    logw: float,
    seed: int,
    trial: int,
    policy: str,
    labels_out=None,
):
    """Process timeline entries ``start..`` in place; returns (logw, clock)."""
    delta = cm.delta
    n = cm.n
    for k in range(start, len(cs.events)):
        cev, _t, tnum, observed, pre, post = cs.events[k]
        rng = Stream(seed, trial, seg_offset + k + 1)
        clock = _advance(cm, V, D, P, R, clock, tnum, rng)
        for ai, slot in pre:
            rec[slot] = V[ai]

        group = None
        for g in cev.groups:
            if g.cond(V):
                group = g
                break
        if group is None:
            raise EngineInvariantError(
                f"no condition of event {cev.name} covers the current values"
            )

        u = rng.random()
        if observed is not None and policy == "conditional":
            lik, llik, pairs = group.obs.get(observed, (0.0, float("-inf"), ()))
            if lik == 0.0:
                logw = float("-inf")
                mi = _pick(group.cum, u)
            else:
                logw += llik
                mi = pairs[-1][1]
                for c, j in pairs:
                    if u < c:
                        mi = j
                        break
        elif observed is not None and policy == "likelihood":
            _lik, llik, _pairs = group.obs.get(observed, (0.0, float("-inf"), ()))
            logw += llik
            mi = _pick(group.cum, u)
        else:
            mi = _pick(group.cum, u)

        changes, label = group.members[mi]
        if labels_out is not None:
            labels_out.append(label)
        changed = []
        for ai, vi in changes:
            if V[ai] != vi:
                V[ai] = vi
                changed.append(ai)

        if changed:
            targets: set[int] = set()
            for ai in changed:
                targets.update(cm.recompute_on_change[ai])
            fresh = _recompute(cm, V, D, P, R, sorted(targets), rng)
        else:
            fresh = []

        clock = tnum + delta
        skip = set(fresh)
        for i in range(n):
            p = P[i]
            if p is not None and i not in skip:
                p -= delta
                P[i] = p if p > 0.0 else _MIN_PENDING
        for ai, slot in post:
            rec[slot] = V[ai]
    return logw, clock


def _simulate(
    cm: _CModel,
    cs: _CScenario,
    seed: int,
    trial: int,
    policy: str = "prior",
    want_labels: bool = False,
):
    """One full trial; returns (logw, rec, labels, (V, D, P, R, clock))."""
    rng = Stream(seed, trial, 0)
    V = []
    for cum, fallback in cs.priors_cum:
        u = rng.random()
        chosen = None
        for j, c in enumerate(cum):
            if u < c:
                chosen = j
                break
        V.append(fallback if chosen is None else chosen)
    n = cm.n
    D = [0] * n
    P: list[float | None] = [None] * n
    R: list[tuple | None] = [None] * n
    rec = [-1] * cs.n_slots
    labels = [] if want_labels else None
    logw, clock = _run_events(
        cm, cs, 0, 0, V, D, P, R, cs.t0, rec, 0.0, seed, trial, policy, labels
    )
    return logw, rec, labels, (V, D, P, R, clock)


# ---------------------------------------------------------------------------
# Public operations on SystemState

def _to_arrays(state: SystemState):
    D = [int(d) for d in state.dirs]
    R = [None if r is None else (r.lo, r.hi) for r in state.regime]
    return list(state.values), D, list(state.pending), R


def _write_back(state: SystemState, V, D, P, R, clock: float):
    state.values = V
    state.dirs = [Direction(d) for d in D]
    state.pending = P
    state.regime = [None if r is None else TimeInterval(r[0], r[1]) for r in R]
    state.clock = clock


def state_from_arrays(model: ModelDef, V, D, P, R, clock: float) -> SystemState:
    return SystemState(
        model,
        list(V),
        [Direction(d) for d in D],
        list(P),
        [None if r is None else TimeInterval(r[0], r[1]) for r in R],
        clock,
    )


def apply_event(state: SystemState, event: EventDef, rng) -> Consequence:
    """Resolve one event occurrence in place and return the chosen row.

    Finds the condition group the current values satisfy, draws one
    consequence from it (one uniform, cumulative over declaration order),
    and applies its changes. Influence recomputation is a separate step.
    """
    for cond, members in event.groups():
        if eval_condition(cond, state):
            u = rng.random()
            acc = 0.0
            chosen = members[-1]
            for c in members:
                acc += c.probability
                if u < acc:
                    chosen = c
                    break
            model = state.model
            for attr, value in chosen.changes:
                state.values[model.attr_index(attr)] = model.value_index(attr, value)
            return chosen
    raise EngineInvariantError(
        f"no condition of event {event.name} covers the current values"
    )


def recompute_influences(model: ModelDef, state: SystemState, changed, rng) -> SystemState:
    """Refresh influence regimes after the attributes in ``changed`` took
    new values; mutates and returns ``state``.

    The affected set is the changed attributes themselves plus every rule
    target having one of them as a source. Targets whose net regime is
    unchanged keep their pending transition; the rest are resampled (or
    cleared, when the net is STEADY).
    """
    cm = compile_model(model)
    targets: set[int] = set()
    for name in changed:
        targets.update(cm.recompute_on_change[model.attr_index(name)])
    V, D, P, R = _to_arrays(state)
    _recompute(cm, V, D, P, R, sorted(targets), rng)
    _write_back(state, V, D, P, R, state.clock)
    return state


def advance_endogenous(model: ModelDef, state: SystemState, t_end: float, rng) -> SystemState:
    """Run endogenous dynamics from the state's clock to ``t_end`` in place.

    The smallest pending transition fires first (ties go to the
    earlier-declared attribute), the attribute steps one place in its
    pending direction, and influences are recomputed for it and its
    dependents; remaining pendings shrink by the elapsed time.
    """
    if t_end < state.clock:
        raise ValidationError(f"cannot advance backwards ({state.clock} -> {t_end})")
    cm = compile_model(model)
    V, D, P, R = _to_arrays(state)
    clock = _advance(cm, V, D, P, R, state.clock, t_end, rng)
    _write_back(state, V, D, P, R, clock)
    return state


# ---------------------------------------------------------------------------
# Trials

@dataclass(frozen=True)
class Trial:
    """One simulated world: recorded values, emitted labels, and weight."""

    seed: int
    trial: int
    logw: float
    recorded: dict[tuple[str, Time], str]
    labels: tuple[str | None, ...]
    horizon: SystemState = field(compare=False)


def run_trial(
    model: ModelDef,
    scenario: ScenarioDef,
    seed: int,
    trial: int = 0,
    *,
    policy: str = "prior",
    validate: bool = True,
) -> Trial:
    """Simulate one trial of ``scenario``.

    Records queried values and weight-relevant observation values at their
    times. With policy "prior" observed labels are ignored and logw is 0;
    "likelihood" scores them; "conditional" also restricts consequence
    choices at observed events to label-compatible rows.
    """
    if policy not in ("prior", "conditional", "likelihood"):
        raise ValueError(f"unknown policy {policy!r}")
    if validate:
        problems = validate_model(model) + validate_scenario(model, scenario)
        if problems:
            raise ValidationError("; ".join(str(p) for p in problems))
    cm = compile_model(model)
    cs = compile_scenario(cm, scenario)
    logw, rec, labels, arrays = _simulate(cm, cs, seed, trial, policy, want_labels=True)
    recorded = {
        key: cm.model.attrs[cm.model.attr_index(key[0])].values[rec[slot]]
        for slot, key in enumerate(cs.slot_keys)
    }
    return Trial(
        seed=seed,
        trial=trial,
        logw=logw,
        recorded=recorded,
        labels=tuple(labels),
        horizon=state_from_arrays(cm.model, *arrays),
    )
