"""Model and scenario data types, validation, and basic state operations.

A model declares ordered-value attributes, exogenous event definitions
(consequence lists), and endogenous influence rules. A scenario binds a
model to a concrete episode: initial-value priors, a timeline of event
occurrences (optionally with observed labels), and posterior queries.

Times are kept symbolic as ``base + k*delta`` so that "just after" an
event is representable exactly; ``delta`` is a model parameter.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .errors import ModelMismatchError, ValidationError
from .influence import Direction, InfluenceRule, TimeInterval

__all__ = [
    "Cond",
    "CondTrue",
    "CondTest",
    "CondNot",
    "CondAnd",
    "CondOr",
    "cond_attrs",
    "cond_refs",
    "AttributeDef",
    "Consequence",
    "EventDef",
    "Time",
    "TimelineEntry",
    "Query",
    "ScenarioDef",
    "ModelDef",
    "Violation",
    "validate_model",
    "validate_scenario",
    "SystemState",
    "initial_state",
    "eval_condition",
    "apply_change_set",
]

_PROB_TOL = 1e-9


# ---------------------------------------------------------------------------
# Conditions

class Cond:
    """Base class for condition expressions over attribute values."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class CondTrue(Cond):
    """Always true; the catch-all condition."""


@dataclass(frozen=True, slots=True)
class CondTest(Cond):
    attr: str
    value: str


@dataclass(frozen=True, slots=True)
class CondNot(Cond):
    expr: Cond


@dataclass(frozen=True, slots=True)
class CondAnd(Cond):
    parts: tuple[Cond, ...]


@dataclass(frozen=True, slots=True)
class CondOr(Cond):
    parts: tuple[Cond, ...]


def cond_attrs(expr: Cond) -> frozenset[str]:
    """Attribute names referenced anywhere in ``expr``."""
    return frozenset(a for a, _ in cond_refs(expr))


def cond_refs(expr: Cond) -> frozenset[tuple[str, str]]:
    """All (attribute, value) tests appearing in ``expr``."""
    if isinstance(expr, CondTest):
        return frozenset({(expr.attr, expr.value)})
    if isinstance(expr, CondNot):
        return cond_refs(expr.expr)
    if isinstance(expr, (CondAnd, CondOr)):
        out: frozenset[tuple[str, str]] = frozenset()
        for p in expr.parts:
            out |= cond_refs(p)
        return out
    if isinstance(expr, CondTrue):
        return frozenset()
    raise TypeError(f"not a condition: {expr!r}")


def _eval_assign(expr: Cond, assign: Mapping[str, str]) -> bool:
    """Evaluate against a plain name -> value assignment."""
    if isinstance(expr, CondTest):
        return assign[expr.attr] == expr.value
    if isinstance(expr, CondNot):
        return not _eval_assign(expr.expr, assign)
    if isinstance(expr, CondAnd):
        return all(_eval_assign(p, assign) for p in expr.parts)
    if isinstance(expr, CondOr):
        return any(_eval_assign(p, assign) for p in expr.parts)
    if isinstance(expr, CondTrue):
        return True
    raise TypeError(f"not a condition: {expr!r}")


# ---------------------------------------------------------------------------
# Declarations

@dataclass(frozen=True)
class AttributeDef:
    """An attribute with its ordered value names (low to high)."""

    name: str
    values: tuple[str, ...]
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Consequence:
    """One row of an event definition.

    Rows sharing a condition form a group whose probabilities sum to 1;
    ``changes`` lists (attribute, new value) pairs applied when the row is
    selected, and ``observation`` is the label emitted, if any.
    """

    condition: Cond
    probability: float
    changes: tuple[tuple[str, str], ...]
    observation: str | None = None
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EventDef:
    name: str
    consequences: tuple[Consequence, ...]
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)

    def groups(self) -> list[tuple[Cond, list[Consequence]]]:
        """Consequences grouped by condition, declaration order preserved."""
        out: list[tuple[Cond, list[Consequence]]] = []
        index: dict[Cond, int] = {}
        for c in self.consequences:
            if c.condition in index:
                out[index[c.condition]][1].append(c)
            else:
                index[c.condition] = len(out)
                out.append((c.condition, [c]))
        return out

    def labels(self) -> frozenset[str]:
        return frozenset(
            c.observation for c in self.consequences if c.observation is not None
        )


# ---------------------------------------------------------------------------
# Scenario

def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True, slots=True, order=False)
class Time:
    """A symbolic time ``base + deltas * delta``.

    Equality is structural; use :meth:`numeric` for ordering. Renders as
    ``10``, ``10+d``, ``10+2d``.
    """

    base: float
    deltas: int = 0

    def numeric(self, delta: float) -> float:
        return self.base + self.deltas * delta

    def plus_delta(self, k: int = 1) -> "Time":
        return Time(self.base, self.deltas + k)

    def __str__(self) -> str:
        if self.deltas == 0:
            return _fmt_num(self.base)
        if self.deltas == 1:
            return f"{_fmt_num(self.base)}+d"
        return f"{_fmt_num(self.base)}+{self.deltas}d"


@dataclass(frozen=True)
class TimelineEntry:
    time: Time
    event: str
    observed: str | None = None
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Query:
    attr: str
    time: Time
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)

    def key(self) -> str:
        return f"{self.attr}@{self.time}"


@dataclass(frozen=True)
class ScenarioDef:
    """Priors, timeline, and queries for one episode.

    ``priors`` is None for extension fragments, which inherit the session
    they extend.
    """

    priors: dict[str, dict[str, float]] | None
    timeline: tuple[TimelineEntry, ...]
    queries: tuple[Query, ...]

    def horizon(self) -> Time | None:
        """Just after the last event, or None for an empty timeline."""
        if not self.timeline:
            return None
        return self.timeline[-1].time.plus_delta()


# ---------------------------------------------------------------------------
# Model

@dataclass(frozen=True)
class ModelDef:
    """A complete model declaration. Immutable once constructed; derived
    lookup tables are built eagerly and shared."""

    attrs: tuple[AttributeDef, ...]
    events: tuple[EventDef, ...]
    rules: tuple[InfluenceRule, ...]
    delta: float = 0.001

    # Derived, excluded from equality.
    _attr_idx: dict = field(default_factory=dict, compare=False, repr=False)
    _val_idx: dict = field(default_factory=dict, compare=False, repr=False)
    _events_by_name: dict = field(default_factory=dict, compare=False, repr=False)
    _eff_rules: dict = field(default_factory=dict, compare=False, repr=False)
    _compiled_cache: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        for i, a in enumerate(self.attrs):
            self._attr_idx.setdefault(a.name, i)
            self._val_idx[a.name] = {v: j for j, v in enumerate(a.values)}
        for e in self.events:
            self._events_by_name.setdefault(e.name, e)
        # Aggregated rules suppress individual rules whose sources they cover.
        aggs: dict[str, list[InfluenceRule]] = {}
        for r in self.rules:
            if r.aggregated:
                aggs.setdefault(r.target, []).append(r)
        for r in self.rules:
            if not r.aggregated and any(
                set(r.sources) <= set(a.sources) for a in aggs.get(r.target, [])
            ):
                continue
            self._eff_rules.setdefault(r.target, []).append(r)

    def attr_index(self, name: str) -> int:
        try:
            return self._attr_idx[name]
        except KeyError:
            raise ModelMismatchError(f"unknown attribute {name!r}") from None

    def value_index(self, attr: str, value: str) -> int:
        vi = self._val_idx.get(attr)
        if vi is None:
            raise ModelMismatchError(f"unknown attribute {attr!r}")
        try:
            return vi[value]
        except KeyError:
            raise ModelMismatchError(f"unknown value {value!r} for {attr}") from None

    def attribute(self, name: str) -> AttributeDef:
        return self.attrs[self.attr_index(name)]

    def event(self, name: str) -> EventDef:
        try:
            return self._events_by_name[name]
        except KeyError:
            raise ModelMismatchError(f"unknown event {name!r}") from None

    def effective_rules(self, target: str) -> list[InfluenceRule]:
        """Rules bearing on ``target`` after aggregated-table suppression."""
        return self._eff_rules.get(target, [])

    def influenced_attrs(self) -> list[str]:
        return [a.name for a in self.attrs if self._eff_rules.get(a.name)]


# ---------------------------------------------------------------------------
# Validation

@dataclass(frozen=True, slots=True)
class Violation:
    """One validation finding, with a human coordinate into the input."""

    code: str
    message: str
    where: str
    line: int | None = None
    col: int | None = None

    def __str__(self) -> str:
        pos = f" (line {self.line}, col {self.col})" if self.line is not None else ""
        return f"[{self.code}] {self.where}{pos}: {self.message}"


def _known(model: ModelDef, attr: str, value: str | None = None) -> bool:
    if attr not in model._attr_idx:
        return False
    return value is None or value in model._val_idx[attr]


def _check_refs(model: ModelDef, expr: Cond, where: str, loc, out: list[Violation]):
    for attr, value in sorted(cond_refs(expr)):
        if not _known(model, attr):
            out.append(Violation("unknown-attribute", f"condition tests unknown attribute {attr!r}", where, *(loc or (None, None))))
        elif not _known(model, attr, value):
            out.append(Violation("unknown-value", f"condition tests unknown value {attr} = {value}", where, *(loc or (None, None))))


def validate_model(model: ModelDef) -> list[Violation]:
    """Structural validation; an empty result means the model is usable.

    Checks attribute well-formedness, event group exclusivity and
    exhaustiveness over referenced attributes, per-group probability sums
    (tolerance 1e-9), change-set sanity, influence-table totality over the
    source/target value cross product, boundary directions, and delta.
    """
    out: list[Violation] = []
    if model.delta <= 0.0:
        out.append(Violation("bad-delta", f"delta must be positive, got {model.delta}", "model"))

    seen_attrs: set[str] = set()
    for a in model.attrs:
        where = f"attribute {a.name}"
        loc = a.loc or (None, None)
        if a.name in seen_attrs:
            out.append(Violation("duplicate-attribute", "declared more than once", where, *loc))
        seen_attrs.add(a.name)
        if len(a.values) < 2:
            out.append(Violation("too-few-values", "needs at least two ordered values", where, *loc))
        if len(set(a.values)) != len(a.values):
            out.append(Violation("duplicate-value", "value names must be distinct", where, *loc))

    seen_events: set[str] = set()
    for e in model.events:
        ewhere = f"event {e.name}"
        eloc = e.loc or (None, None)
        if e.name in seen_events:
            out.append(Violation("duplicate-event", "declared more than once", ewhere, *eloc))
        seen_events.add(e.name)
        if not e.consequences:
            out.append(Violation("empty-event", "has no consequences", ewhere, *eloc))
            continue

        refs_ok = True
        for k, c in enumerate(e.consequences, 1):
            cwhere = f"{ewhere}, consequence {k}"
            cloc = c.loc or (None, None)
            before = len(out)
            _check_refs(model, c.condition, cwhere, c.loc, out)
            if len(out) > before:
                refs_ok = False
            if not (0.0 <= c.probability <= 1.0):
                out.append(Violation("bad-probability", f"probability {c.probability} outside [0, 1]", cwhere, *cloc))
            changed: set[str] = set()
            for attr, value in c.changes:
                if attr in changed:
                    out.append(Violation("duplicate-change", f"changes {attr} twice", cwhere, *cloc))
                changed.add(attr)
                if not _known(model, attr):
                    out.append(Violation("unknown-attribute", f"change sets unknown attribute {attr!r}", cwhere, *cloc))
                    refs_ok = False
                elif not _known(model, attr, value):
                    out.append(Violation("unknown-value", f"change sets unknown value {attr} = {value}", cwhere, *cloc))
                    refs_ok = False

        groups = e.groups()
        for cond, members in groups:
            total = sum(c.probability for c in members)
            if abs(total - 1.0) > _PROB_TOL:
                gloc = members[0].loc or (None, None)
                out.append(Violation(
                    "group-sum",
                    f"probabilities for condition group sum to {total!r}, expected 1",
                    f"{ewhere}, group with {len(members)} consequence(s)", *gloc))

        if refs_ok:
            referenced = sorted(set().union(*(cond_attrs(c.condition) for c in e.consequences)))
            domains = [model.attribute(a).values for a in referenced]
            n_combos = 1
            for d in domains:
                n_combos *= len(d)
            if n_combos > 4096:
                out.append(Violation("condition-space", f"{n_combos} value combinations is too many to check", ewhere, *eloc))
            else:
                reported = 0
                for combo in itertools.product(*domains):
                    assign = dict(zip(referenced, combo))
                    hits = [i for i, (cond, _) in enumerate(groups) if _eval_assign(cond, assign)]
                    desc = ", ".join(f"{a}={v}" for a, v in assign.items()) or "(empty)"
                    if len(hits) == 0:
                        out.append(Violation("conditions-gap", f"no condition covers {desc}", ewhere, *eloc))
                        reported += 1
                    elif len(hits) > 1:
                        out.append(Violation("conditions-overlap", f"conditions {hits[0] + 1} and {hits[1] + 1} both cover {desc}", ewhere, *eloc))
                        reported += 1
                    if reported >= 8:
                        out.append(Violation("conditions-more", "further combinations suppressed", ewhere, *eloc))
                        break

    seen_rules: set[tuple] = set()
    for r in model.rules:
        kind = "aggregated influence" if r.aggregated else "influence"
        rwhere = f"{kind} {r.target} by {', '.join(r.sources)}"
        rloc = r.loc or (None, None)
        rkey = (r.target, r.sources, r.aggregated)
        if rkey in seen_rules:
            out.append(Violation("duplicate-rule", "declared more than once", rwhere, *rloc))
        seen_rules.add(rkey)
        names_ok = _known(model, r.target)
        if not names_ok:
            out.append(Violation("unknown-attribute", f"targets unknown attribute {r.target!r}", rwhere, *rloc))
        for s in r.sources:
            if not _known(model, s):
                out.append(Violation("unknown-attribute", f"unknown source attribute {s!r}", rwhere, *rloc))
                names_ok = False
        if r.target in r.sources:
            out.append(Violation("self-influence", "target cannot be one of its own sources", rwhere, *rloc))
            names_ok = False
        if not names_ok:
            continue

        tgt_values = model.attribute(r.target).values
        expected = set(
            itertools.product(*(model.attribute(s).values for s in r.sources), tgt_values)
        )
        present = set(r.table)
        for key in sorted(expected - present):
            out.append(Violation("table-missing", f"no entry for {key}", rwhere, *rloc))
        for key in sorted(present - expected):
            out.append(Violation("table-extra", f"entry {key} matches no value combination", rwhere, *rloc))
        for key in sorted(present & expected):
            direction, interval = r.table[key]
            tgt_val = key[-1]
            if direction is Direction.DOWN and tgt_val == tgt_values[0]:
                out.append(Violation("boundary-down", f"entry {key} moves {r.target} below its lowest value", rwhere, *rloc))
            if direction is Direction.UP and tgt_val == tgt_values[-1]:
                out.append(Violation("boundary-up", f"entry {key} moves {r.target} above its highest value", rwhere, *rloc))
            if (direction is Direction.STEADY) != (interval is None):
                out.append(Violation("bad-entry", f"entry {key} pairs {direction.name} with interval {interval}", rwhere, *rloc))

    return out


def validate_scenario(
    model: ModelDef, scenario: ScenarioDef, *, extension: bool = False
) -> list[Violation]:
    """Validate a scenario against its model.

    Timeline times must be strictly increasing and observed labels must be
    labels the event can emit. Query times must equal a timeline time or
    fall one delta after one (the horizon is the last such point). For
    extension fragments, priors must be absent.
    """
    out: list[Violation] = []

    if extension:
        if scenario.priors is not None:
            out.append(Violation("extension-priors", "extension fragments may not declare priors", "priors"))
    elif scenario.priors is None:
        out.append(Violation("missing-priors", "scenario declares no priors", "priors"))
    else:
        for attr, dist in scenario.priors.items():
            where = f"prior {attr}"
            if not _known(model, attr):
                out.append(Violation("unknown-attribute", f"prior for unknown attribute {attr!r}", where))
                continue
            total = 0.0
            for value, p in dist.items():
                if not _known(model, attr, value):
                    out.append(Violation("unknown-value", f"prior names unknown value {attr} = {value}", where))
                if p < 0.0:
                    out.append(Violation("bad-probability", f"negative probability {p!r} for {value}", where))
                total += p
            if abs(total - 1.0) > _PROB_TOL:
                out.append(Violation("prior-sum", f"probabilities sum to {total!r}, expected 1", where))
        for a in model.attrs:
            if a.name not in scenario.priors:
                out.append(Violation("missing-prior", f"no prior for attribute {a.name}", "priors"))

    last: float | None = None
    times: list[Time] = []
    for i, entry in enumerate(scenario.timeline, 1):
        where = f"timeline entry {i} ({entry.event} at {entry.time})"
        loc = entry.loc or (None, None)
        t = entry.time.numeric(model.delta)
        if entry.time.base < 0.0 or entry.time.deltas < 0:
            out.append(Violation("bad-time", f"time {entry.time} is negative", where, *loc))
        if last is not None and t <= last:
            out.append(Violation("time-order", f"time {entry.time} does not increase", where, *loc))
        elif last is not None and t - last < model.delta * (1.0 - 1e-9):
            out.append(Violation(
                "time-gap",
                f"gap before {entry.time} is smaller than delta ({model.delta})",
                where, *loc))
        last = t
        times.append(entry.time)
        try:
            ev = model.event(entry.event)
        except ModelMismatchError:
            out.append(Violation("unknown-event", f"unknown event {entry.event!r}", where, *loc))
            continue
        if entry.observed is not None and entry.observed not in ev.labels():
            out.append(Violation("unknown-label", f"event {entry.event} never emits label {entry.observed!r}", where, *loc))

    valid_times = set(times) | {t.plus_delta() for t in times}
    for q in scenario.queries:
        where = f"query {q.key()}"
        loc = q.loc or (None, None)
        if not _known(model, q.attr):
            out.append(Violation("unknown-attribute", f"query for unknown attribute {q.attr!r}", where, *loc))
        if q.time not in valid_times:
            out.append(Violation(
                "query-time",
                f"time {q.time} is not a timeline time or one delta after one",
                where, *loc))

    return out


# ---------------------------------------------------------------------------
# State

class SystemState:
    """Mutable per-trial state: one (value, direction, pending, regime)
    record per attribute, plus the clock.

    ``pending`` is the remaining time until the attribute's next one-step
    transition; it is present exactly when ``direction`` is not STEADY.
    ``regime`` is the interval the pending time was sampled from, kept so
    a later recomputation can tell whether the influence regime actually
    changed.
    """

    __slots__ = ("model", "values", "dirs", "pending", "regime", "clock")

    def __init__(
        self,
        model: ModelDef,
        values: list[int],
        dirs: list[Direction] | None = None,
        pending: list[float | None] | None = None,
        regime: list[TimeInterval | None] | None = None,
        clock: float = 0.0,
    ):
        n = len(model.attrs)
        if len(values) != n:
            raise ValidationError(f"state has {len(values)} values for {n} attributes")
        self.model = model
        self.values = values
        self.dirs = dirs if dirs is not None else [Direction.STEADY] * n
        self.pending = pending if pending is not None else [None] * n
        self.regime = regime if regime is not None else [None] * n
        self.clock = clock

    def copy(self) -> "SystemState":
        return SystemState(
            self.model,
            list(self.values),
            list(self.dirs),
            list(self.pending),
            list(self.regime),
            self.clock,
        )

    def value_name(self, attr: str) -> str:
        i = self.model.attr_index(attr)
        return self.model.attrs[i].values[self.values[i]]

    def value_names(self) -> dict[str, str]:
        return {
            a.name: a.values[v] for a, v in zip(self.model.attrs, self.values)
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, SystemState):
            return NotImplemented
        return (
            self.values == other.values
            and self.dirs == other.dirs
            and self.pending == other.pending
            and self.regime == other.regime
            and self.clock == other.clock
            and (self.model is other.model or self.model == other.model)
        )

    def __repr__(self) -> str:
        parts = []
        for a, v, d, p in zip(self.model.attrs, self.values, self.dirs, self.pending):
            tag = "" if d is Direction.STEADY else f" {d.name} in {p:.4g}"
            parts.append(f"{a.name}={a.values[v]}{tag}")
        return f"<state t={self.clock:.6g} {' '.join(parts)}>"


class _Uniform(Protocol):
    def random(self) -> float: ...


def initial_state(
    model: ModelDef,
    priors: Mapping[str, Mapping[str, float]],
    rng: _Uniform,
    start_time: float = 0.0,
) -> SystemState:
    """Draw initial values from per-attribute priors.

    All directions start STEADY with nothing pending; influences first
    arise when an event changes things. One uniform draw is consumed per
    attribute, in declaration order, regardless of degeneracy.
    """
    values: list[int] = []
    for a in model.attrs:
        dist = priors.get(a.name)
        if dist is None:
            raise ValidationError(f"no prior for attribute {a.name}")
        total = sum(dist.values())
        if abs(total - 1.0) > _PROB_TOL or any(p < 0.0 for p in dist.values()):
            raise ValidationError(f"prior for {a.name} is not a distribution")
        u = rng.random()
        acc = 0.0
        chosen = None
        for j, v in enumerate(a.values):
            acc += dist.get(v, 0.0)
            if u < acc:
                chosen = j
                break
        if chosen is None:  # rounding at the top end
            chosen = max(j for j, v in enumerate(a.values) if dist.get(v, 0.0) > 0.0)
        values.append(chosen)
    return SystemState(model, values, clock=start_time)


def eval_condition(expr: Cond, state: SystemState) -> bool:
    """Evaluate a condition against current attribute values only."""
    model = state.model
    if isinstance(expr, CondTest):
        i = model.attr_index(expr.attr)
        return state.values[i] == model.value_index(expr.attr, expr.value)
    if isinstance(expr, CondNot):
        return not eval_condition(expr.expr, state)
    if isinstance(expr, CondAnd):
        return all(eval_condition(p, state) for p in expr.parts)
    if isinstance(expr, CondOr):
        return any(eval_condition(p, state) for p in expr.parts)
    if isinstance(expr, CondTrue):
        return True
    raise TypeError(f"not a condition: {expr!r}")


def apply_change_set(
    state: SystemState,
    changes: Iterable[tuple[str, str]] | Mapping[str, str],
) -> SystemState:
    """Return a copy of ``state`` with the listed attributes set to their
    new values; everything else (directions, pendings, clock) unchanged.

    Applying the same change set twice yields the same state.
    """
    pairs = changes.items() if isinstance(changes, Mapping) else changes
    out = state.copy()
    model = state.model
    for attr, value in pairs:
        out.values[model.attr_index(attr)] = model.value_index(attr, value)
    return out
