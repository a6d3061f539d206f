"""Combination of endogenous influences.

An influence rule maps (source values, target value) to an effect: either
STEADY or a direction of change paired with a uniform time interval for the
next one-step transition of the target. When several rules bear on the same
target at once, their effects are merged:

* Two concordant effects (same direction) reinforce each other. Their
  interval endpoints combine through ``f`` below, which always yields a
  value no larger than the smaller input: two causes pushing the same way
  act faster than either alone.

* Two contrary effects retard each other. Endpoints combine through ``g``,
  which yields a value between the smaller input and 100x the smaller
  input: opposition slows the faster cause down but never reverses it.

Both operators are symmetric, homogeneous of degree 1 (doubling both inputs
doubles the output), and become insensitive to the slower cause once it is
more than 100x slower; they are continuous at that cutoff.

A model may also declare an *aggregated* rule giving the merged table for a
set of sources directly, overriding formula aggregation for any individual
rule on a subset of those sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Literal

from .errors import ModelMismatchError

if TYPE_CHECKING:
    from .model import ModelDef, SystemState

__all__ = [
    "Direction",
    "TimeInterval",
    "InfluenceRule",
    "NetInfluence",
    "combine_concordant",
    "combine_contrary",
    "combine_intervals",
    "active_influences",
    "aggregate",
]


class Direction(IntEnum):
    """Direction of pending change for an attribute; the integer value is
    the index step applied when the transition fires."""

    DOWN = -1
    STEADY = 0
    UP = 1


@dataclass(frozen=True, slots=True)
class TimeInterval:
    """A uniform transition-time interval [lo, hi], 0 <= lo <= hi."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi):
            raise ValueError(f"invalid time interval [{self.lo}, {self.hi}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


#: One active effect on a target: STEADY carries no interval.
Entry = tuple[Direction, TimeInterval | None]


@dataclass(frozen=True)
class InfluenceRule:
    """A (possibly aggregated) influence table.

    ``table`` is keyed by the tuple of source value names, in ``sources``
    order, with the target value name appended; each cell is an Entry.
    """

    target: str
    sources: tuple[str, ...]
    table: dict[tuple[str, ...], Entry]
    aggregated: bool = False
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class NetInfluence:
    """The merged effect of all active influences on one target."""

    direction: Direction
    interval: TimeInterval | None

    def __post_init__(self):
        steady = self.direction is Direction.STEADY
        if steady != (self.interval is None):
            raise ValueError("interval must be present exactly when moving")


STEADY_NET = NetInfluence(Direction.STEADY, None)

# Beyond this ratio the slower cause no longer matters.
_CUTOFF = 100.0


def combine_concordant(a: float, b: float) -> float:
    """Merge two same-direction transition rates (interval endpoints).

    Symmetric; f(a, a) = a/2; capped at min(a, b) once the other input
    exceeds 100x it; linear in between. Inputs must be positive.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("combine_concordant requires positive inputs")
    if b < a:
        a, b = b, a
    if b > _CUTOFF * a:
        return a
    return a / 2.0 + (b - a) / 198.0


def combine_contrary(a: float, b: float) -> float:
    """Merge two opposite-direction transition rates.

    Symmetric; g(a, a) = 100a; decays linearly to min(a, b) as the inputs
    separate, reaching it at the 100x cutoff. Inputs must be positive.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("combine_contrary requires positive inputs")
    if b < a:
        a, b = b, a
    if b > _CUTOFF * a:
        return a
    return _CUTOFF * a - (b - a)


def combine_intervals(
    kind: Literal["concordant", "contrary"], x: TimeInterval, y: TimeInterval
) -> TimeInterval:
    """Combine two intervals endpoint-wise, normalizing to lo <= hi."""
    fn = combine_concordant if kind == "concordant" else combine_contrary
    p, q = fn(x.lo, y.lo), fn(x.hi, y.hi)
    if q < p:
        p, q = q, p
    return TimeInterval(p, q)


def active_influences(model: "ModelDef", state: "SystemState", target: str) -> list[Entry]:
    """The effect entries currently bearing on ``target``.

    One entry per effective rule on the target (aggregated rules suppress
    the individual rules they cover), looked up at the state's current
    source and target values. STEADY entries are included.
    """
    entries: list[Entry] = []
    names = state.value_names()
    for rule in model.effective_rules(target):
        key = tuple(names[s] for s in rule.sources) + (names[target],)
        try:
            entries.append(rule.table[key])
        except KeyError:
            raise ModelMismatchError(
                f"influence on {target} by {rule.sources} has no entry for {key}"
            ) from None
    return entries


def aggregate(entries: list[Entry]) -> NetInfluence:
    """Merge active effect entries into one net influence.

    STEADY entries are inert. Same-direction intervals are folded with the
    concordant operator in ascending order of interval midpoint. If both
    directions survive, the side whose folded interval has the smaller
    midpoint wins (ties go DOWN) and the two are merged with the contrary
    operator. Permutation invariant by construction.
    """
    ups = sorted(
        (e[1] for e in entries if e[0] is Direction.UP),
        key=lambda i: (i.midpoint, i.lo, i.hi),
    )
    downs = sorted(
        (e[1] for e in entries if e[0] is Direction.DOWN),
        key=lambda i: (i.midpoint, i.lo, i.hi),
    )

    def fold(ivs: list[TimeInterval]) -> TimeInterval | None:
        if not ivs:
            return None
        acc = ivs[0]
        for iv in ivs[1:]:
            acc = combine_intervals("concordant", acc, iv)
        return acc

    up, down = fold(ups), fold(downs)
    if up is None and down is None:
        return STEADY_NET
    if up is None:
        return NetInfluence(Direction.DOWN, down)
    if down is None:
        return NetInfluence(Direction.UP, up)
    if up.midpoint < down.midpoint:
        return NetInfluence(Direction.UP, combine_intervals("contrary", up, down))
    return NetInfluence(Direction.DOWN, combine_intervals("contrary", down, up))
