"""Exact posterior computation by branch enumeration.

Works on feed-forward models: no influence source may itself be an
influence target, so source values only change through events and every
endogenous episode of a target attribute is, between the events that
touch its inputs, a fixed cascade of one-step transitions with known
uniform durations. The probability of having reached each position by a
given time is then a sum-of-uniforms crossing probability, computed in
closed form.

The enumeration branches over prior support, consequence choices, and,
when an event or query needs a cascading attribute's concrete position,
over that position's distribution. Each branch carries its probability
mass times the likelihood of the observed labels along the way; queries
are answered from the final branch weights.

Scope: a cascade's position may be needed at one time only (conditioning
twice on the same episode would correlate with the in-flight step). A
need whose answer is certain, such as a cascade that has surely finished,
does not count. Outside this scope, and for regime coincidences that
would let a pending transition survive an input change, the oracle raises
UnsupportedModelError rather than approximate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from time import perf_counter

from .engine import _net, compile_model
from .errors import EngineInvariantError, UnsupportedModelError, ValidationError
from .infer import PosteriorReport, QueryResult, _require_valid
from .model import ModelDef, ScenarioDef, cond_attrs

__all__ = [
    "FeedForwardCheck",
    "check_feedforward",
    "uniform_sum_crossing",
    "exact_posterior",
]

_MAX_CONVOLVE = 20
_MAX_BRANCHES = 500_000
_EPS = 1e-15


@dataclass(frozen=True, slots=True)
class FeedForwardCheck:
    """Result of the source/target disjointness check."""

    ok: bool
    offenders: tuple[str, ...]


def check_feedforward(model: ModelDef) -> FeedForwardCheck:
    """Verify that no effective influence source is itself a target."""
    targets = {a.name for a in model.attrs if model.effective_rules(a.name)}
    sources: set[str] = set()
    for a in model.attrs:
        for r in model.effective_rules(a.name):
            sources.update(r.sources)
    offenders = tuple(sorted(sources & targets))
    return FeedForwardCheck(ok=not offenders, offenders=offenders)


def uniform_sum_crossing(intervals, t: float) -> float:
    """P(sum of independent uniform draws from ``intervals`` <= t).

    Closed form: with s = t - sum(lo_i) and widths w_i, the probability is
    the volume of the corner region {x in prod [0, w_i] : sum x <= s}
    divided by prod w_i, and that volume is
    sum over subsets S of (-1)^|S| max(0, s - sum_{i in S} w_i)^k / k!.
    Exact up to float rounding for every k; the subset sum is refused past
    k = 20, where cost and cancellation start to matter. Zero-width
    intervals contribute their constant and drop out. Returns exactly 0
    below sum(lo) and exactly 1 above sum(hi).
    """
    lows, widths = [], []
    for iv in intervals:
        lo = getattr(iv, "lo", None)
        if lo is None:
            lo, hi = iv
        else:
            hi = iv.hi
        lows.append(lo)
        widths.append(hi - lo)
    s = t - sum(lows)
    w = [x for x in widths if x > 0.0]
    if s <= 0.0:
        return 0.0
    if s >= sum(w):
        return 1.0
    k = len(w)
    if k > _MAX_CONVOLVE:
        raise UnsupportedModelError(
            f"sum of {k} uniform intervals exceeds the supported chain length {_MAX_CONVOLVE}"
        )
    total = 0.0
    for mask in range(1 << k):
        x = s
        sign = 1
        m = mask
        i = 0
        while m:
            if m & 1:
                x -= w[i]
                sign = -sign
            m >>= 1
            i += 1
        if x > 0.0:
            total += sign * x**k
    denom = math.factorial(k)
    for x in w:
        denom *= x
    return min(1.0, max(0.0, total / denom))


# ---------------------------------------------------------------------------
# Cascades

class _Chain:
    """One endogenous episode: positions visited and step durations.

    ``used_at`` records the single time the position was conditioned on;
    reuse at that same instant is free, any other time is out of scope.
    """

    __slots__ = ("start", "path", "steps", "used_at")

    def __init__(self, start, path, steps, used_at=None):
        self.start = start
        self.path = path          # positions, path[0] = entry value
        self.steps = steps        # (lo, hi) duration per step
        self.used_at = used_at

    def marked(self, t: float) -> "_Chain":
        return _Chain(self.start, self.path, self.steps, t)

    def dist(self, t: float) -> dict[int, float]:
        """Position distribution at absolute time ``t``."""
        e = t - self.start
        if e <= 0.0:
            return {self.path[0]: 1.0}
        crossed = [1.0]
        for i in range(1, len(self.path)):
            crossed.append(uniform_sum_crossing(self.steps[:i], e))
        out: dict[int, float] = {}
        for i, pos in enumerate(self.path):
            p = crossed[i] - (crossed[i + 1] if i + 1 < len(crossed) else 0.0)
            if p > _EPS:
                out[pos] = p
        return out

    def regime_at(self, pos: int):
        """(dir, lo, hi) of the step out of ``pos``; None at the end."""
        i = self.path.index(pos)
        if i >= len(self.steps):
            return None
        return (self.path[i + 1] - self.path[i], self.steps[i][0], self.steps[i][1])

    def moving_regimes(self) -> set[tuple]:
        return {
            (self.path[i + 1] - self.path[i], self.steps[i][0], self.steps[i][1])
            for i in range(len(self.steps))
        }


def _net_at(cm, vals, ti: int, pos: int):
    entries = []
    for src_ais, table in cm.rules_by_target[ti]:
        key = tuple(vals[s] for s in src_ais) + (pos,)
        entries.append(table[key])
    return _net(entries)


def _build_chain(cm, vals, ti: int, v0: int, start: float) -> _Chain | None:
    """Follow the influence tables from ``v0`` until a steady cell."""
    path, steps = [v0], []
    seen = {v0}
    v = v0
    while True:
        net = _net_at(cm, vals, ti, v)
        if net is None:
            break
        d, lo, hi = net
        nv = v + d
        if nv < 0 or nv >= cm.sizes[ti]:
            raise ValidationError(
                f"influence pushes {cm.names[ti]} past the end of its value order"
            )
        if nv in seen:
            raise UnsupportedModelError(
                f"influences on {cm.names[ti]} oscillate between values"
            )
        steps.append((lo, hi))
        path.append(nv)
        seen.add(nv)
        v = nv
    if not steps:
        return None
    return _Chain(start, path, steps)


class _Branch:
    __slots__ = ("w", "vals", "chains", "checks", "qrec", "qdefer")

    def __init__(self, w, vals, chains, checks, qrec, qdefer):
        self.w = w
        self.vals = vals      # static value per attr (last known, for cascades)
        self.chains = chains  # attr idx -> _Chain
        self.checks = checks  # attr idx -> set of discarded moving regimes
        self.qrec = qrec      # query idx -> ("v", vi) | ("d", {vi: p})
        self.qdefer = qdefer  # attr idx -> [(qi, t)] marginals open to same-instant fixing

    def clone(self) -> "_Branch":
        return _Branch(
            self.w,
            list(self.vals),
            dict(self.chains),
            dict(self.checks),
            dict(self.qrec),
            {k: list(v) for k, v in self.qdefer.items()},
        )


def _fix_position(cm, b: _Branch, ai: int, t: float) -> list[_Branch]:
    """Make ``b.vals[ai]`` hold the attribute's concrete position at ``t``,
    splitting the branch when the position is uncertain."""
    ch = b.chains.get(ai)
    if ch is None:
        return [b]
    dist = ch.dist(t)
    if len(dist) == 1:
        b.vals[ai] = next(iter(dist))
        return [b]
    if ch.used_at is not None:
        if ch.used_at != t:
            raise UnsupportedModelError(
                f"{cm.names[ai]} is needed at two times within one episode"
            )
        pending = [qi for qi, td in b.qdefer.get(ai, ()) if td == t]
        if not pending:
            return [b]  # position already fixed at this instant
        # a marginal was recorded at this same instant; conditioning now
        # sharpens it to a point value per sub-branch
        out = []
        for pos, p in sorted(dist.items()):
            c = b.clone()
            c.w *= p
            c.vals[ai] = pos
            for qi in pending:
                c.qrec[qi] = ("v", pos)
            c.qdefer.pop(ai, None)
            out.append(c)
        return out
    out = []
    for pos, p in sorted(dist.items()):
        c = b.clone()
        c.w *= p
        c.vals[ai] = pos
        c.chains[ai] = ch.marked(t)
        out.append(c)
    return out


def _record_query(cm, b: _Branch, qi: int, ai: int, t: float) -> None:
    ch = b.chains.get(ai)
    if ch is None:
        b.qrec[qi] = ("v", b.vals[ai])
        return
    dist = ch.dist(t)
    if len(dist) == 1:
        pos = next(iter(dist))
        b.vals[ai] = pos
        b.qrec[qi] = ("v", pos)
        return
    if ch.used_at is not None:
        if ch.used_at != t:
            raise UnsupportedModelError(
                f"{cm.names[ai]} is needed at two times within one episode"
            )
        if any(td == t for _, td in b.qdefer.get(ai, ())):
            # joins an open marginal at the same instant
            b.qrec[qi] = ("d", dist)
            b.qdefer[ai].append((qi, t))
            return
        b.qrec[qi] = ("v", b.vals[ai])
        return
    b.chains[ai] = ch.marked(t)
    b.qrec[qi] = ("d", dist)
    b.qdefer.setdefault(ai, []).append((qi, t))


def _apply_changes(cm, b: _Branch, changes, t: float):
    """Apply a consequence's changes; returns [(branch, changed attrs)]."""

    def step(br: _Branch, idx: int, changed: tuple[int, ...]):
        if idx == len(changes):
            return [(br, changed)]
        ai, vi = changes[idx]
        ch = br.chains.get(ai)
        if ch is None:
            if br.vals[ai] != vi:
                br.vals[ai] = vi
                changed = changed + (ai,)
            return step(br, idx + 1, changed)
        if vi in ch.path:
            out = []
            for s in _fix_position(cm, br, ai, t):
                sch = s.chains[ai]
                if s.vals[ai] == vi:
                    # sets the value it already has: no change, episode rolls on
                    out.extend(step(s, idx + 1, changed))
                else:
                    reg = sch.regime_at(s.vals[ai])
                    del s.chains[ai]
                    if reg is not None:
                        s.checks[ai] = {reg}
                    s.vals[ai] = vi
                    out.extend(step(s, idx + 1, changed + (ai,)))
            return out
        # definitely a different value whatever the position
        br.checks[ai] = ch.moving_regimes()
        del br.chains[ai]
        br.vals[ai] = vi
        return step(br, idx + 1, changed + (ai,))

    return step(b, 0, ())


def _recompute_branch(cm, b: _Branch, changed, t: float, delta: float) -> list[_Branch]:
    """Refresh regimes for the attributes affected by ``changed``."""
    targets: set[int] = set()
    for ai in changed:
        targets.update(cm.recompute_on_change[ai])
    stack = [b]
    for ti in sorted(targets):
        nxt: list[_Branch] = []
        for br in stack:
            ch = br.chains.get(ti)
            if ch is None:
                new = _net_at(cm, br.vals, ti, br.vals[ti])
                chk = br.checks.pop(ti, None)
                if new is not None:
                    if chk and new in chk:
                        raise UnsupportedModelError(
                            f"pending transition of {cm.names[ti]} could survive "
                            "an exogenous value change (regime coincidence)"
                        )
                    br.chains[ti] = _build_chain(cm, br.vals, ti, br.vals[ti], t + delta)
                nxt.append(br)
            else:
                # inputs changed while an episode is running: reset needs the position
                for s in _fix_position(cm, br, ti, t):
                    pos = s.vals[ti]
                    old = s.chains[ti].regime_at(pos)
                    new = _net_at(cm, s.vals, ti, pos)
                    if new is None:
                        del s.chains[ti]
                    elif old is not None and new == old:
                        raise UnsupportedModelError(
                            f"pending transition of {cm.names[ti]} could survive "
                            "an input change (regime coincidence)"
                        )
                    else:
                        s.chains[ti] = _build_chain(cm, s.vals, ti, pos, t + delta)
                    nxt.append(s)
        stack = nxt
    return stack


def exact_posterior(model: ModelDef, scenario: ScenarioDef) -> PosteriorReport:
    """Compute the scenario's query posteriors exactly.

    Requires a valid model and scenario, a passing feed-forward check, and
    episode usage within the documented scope. The report's distributions
    are exact up to float rounding (error_bound is a conservative cap);
    ESS does not apply and is None.
    """
    t_start = perf_counter()
    _require_valid(model, scenario)
    ff = check_feedforward(model)
    if not ff.ok:
        raise UnsupportedModelError(
            "influence sources are themselves influenced: " + ", ".join(ff.offenders)
        )
    cm = compile_model(model)
    delta = model.delta

    # Queries attach to an event's instant (pre) or one delta after (post).
    pre_q: list[list[tuple[int, int]]] = [[] for _ in scenario.timeline]
    post_q: list[list[tuple[int, int]]] = [[] for _ in scenario.timeline]
    for qi, q in enumerate(scenario.queries):
        ai = model.attr_index(q.attr)
        for i, entry in enumerate(scenario.timeline):
            if entry.time == q.time:
                pre_q[i].append((qi, ai))
                break
        else:
            for i, entry in enumerate(scenario.timeline):
                if entry.time.plus_delta() == q.time:
                    post_q[i].append((qi, ai))
                    break
            else:
                raise ValidationError(f"query time {q.time} matches no timeline instant")

    events = []
    for entry in scenario.timeline:
        cev = cm.events[entry.event]
        ev = model.event(entry.event)
        groups = []
        for g in cev.groups:
            rows = [
                (g.consequences[i].probability, g.members[i][0], g.members[i][1])
                for i in range(len(g.members))
            ]
            groups.append((g.cond, rows))
        referenced = sorted({
            model.attr_index(a)
            for c in ev.consequences
            for a in cond_attrs(c.condition)
        })
        events.append((entry.time.numeric(delta), entry.observed, groups, referenced))

    supports = []
    for a in model.attrs:
        dist = scenario.priors[a.name]
        supports.append([
            (vi, dist[v]) for vi, v in enumerate(a.values) if dist.get(v, 0.0) > 0.0
        ])
    branches: list[_Branch] = []
    for combo in itertools.product(*supports):
        w = 1.0
        vals = []
        for vi, p in combo:
            w *= p
            vals.append(vi)
        branches.append(_Branch(w, vals, {}, {}, {}, {}))

    for k, (t, observed, groups, referenced) in enumerate(events):
        settled: list[_Branch] = []
        for br in branches:
            stack = [br]
            for ai in referenced:
                nxt: list[_Branch] = []
                for b in stack:
                    nxt.extend(_fix_position(cm, b, ai, t))
                stack = nxt
            settled.extend(stack)

        produced: list[_Branch] = []
        for b in settled:
            for qi, ai in pre_q[k]:
                _record_query(cm, b, qi, ai, t)
            grp = None
            for cond, rows in groups:
                if cond(b.vals):
                    grp = rows
                    break
            if grp is None:
                raise EngineInvariantError(
                    f"no condition of event {scenario.timeline[k].event} covers "
                    "an enumerated value combination"
                )
            for prob, changes, label in grp:
                if observed is not None and label != observed:
                    continue
                if prob <= 0.0:
                    continue
                c = b.clone()
                c.w *= prob
                for c2, changed in _apply_changes(cm, c, changes, t):
                    for c3 in _recompute_branch(cm, c2, changed, t, delta):
                        for qi, ai in post_q[k]:
                            _record_query(cm, c3, qi, ai, t + delta)
                        produced.append(c3)
        branches = produced
        if len(branches) > _MAX_BRANCHES:
            raise UnsupportedModelError(
                f"enumeration exceeded {_MAX_BRANCHES} branches at event {k + 1}"
            )

    total = sum(b.w for b in branches)
    no_compatible = total <= 0.0
    results = []
    for qi, q in enumerate(scenario.queries):
        values = model.attribute(q.attr).values
        if no_compatible:
            results.append(QueryResult(q.attr, q.time, values, None))
            continue
        acc = [0.0] * len(values)
        for b in branches:
            kind, payload = b.qrec[qi]
            if kind == "v":
                acc[payload] += b.w
            else:
                for vi, p in payload.items():
                    acc[vi] += b.w * p
        results.append(QueryResult(q.attr, q.time, values, tuple(x / total for x in acc)))

    return PosteriorReport(
        queries=tuple(results),
        n=len(branches),
        ess=None,
        no_compatible=no_compatible,
        wall_ms=(perf_counter() - t_start) * 1000.0,
        error_bound=1e-9,
    )
