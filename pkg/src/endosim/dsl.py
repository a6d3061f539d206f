"""Text format for models and scenarios.

Both file kinds start with a ``format 1`` header line. ``#`` starts a
comment running to end of line. Names start with a letter or underscore
and may contain letters, digits, underscores, and hyphens.

Model grammar::

    model       ::= "format" "1" item*
    item        ::= "delta" NUMBER
                  | "attribute" NAME "{" NAME+ "}"
                  | "event" NAME "{" consequence* "}"
                  | "aggregated"? "influence" NAME "by" names "{" entry* "}"
    consequence ::= "when" condition "->" NUMBER ":" "{" changes? "}"
                    ("obs" NAME)?
    changes     ::= NAME "=" NAME ("," NAME "=" NAME)*
    condition   ::= or-expr
    or-expr     ::= and-expr ("or" and-expr)*
    and-expr    ::= not-expr ("and" not-expr)*
    not-expr    ::= "not" not-expr | "(" condition ")" | "true" | NAME "=" NAME
    entry       ::= names NAME ":" effect
    names       ::= NAME | "(" NAME ("," NAME)* ")"
    effect      ::= "steady" | ("up" | "down") "[" NUMBER "," NUMBER "]"

Attribute values are declared lowest to highest. In an influence entry the
source values come first (parenthesized when there are several), then the
target value. An ``aggregated`` influence gives the already-merged table
for its source set and replaces formula aggregation of any individual rule
on a subset of those sources.

Scenario grammar::

    scenario ::= "format" "1" sitem*
    sitem    ::= "prior" NAME "{" NAME ":" NUMBER ("," NAME ":" NUMBER)* "}"
               | "at" time "do" NAME ("observed" NAME)?
               | "query" NAME "at" time
    time     ::= NUMBER ("+" NUMBER? "d")?

Times are symbolic: ``10+2d`` means two delta-steps after 10, where delta
is the model's event-processing offset. Timeline entries must appear in
increasing time order.

``parse_model``/``parse_scenario`` check syntax and local well-formedness
only; run :func:`endosim.model.validate_model` /
:func:`endosim.model.validate_scenario` for semantic validation.
Serialization is canonical: ``parse`` then ``serialize`` reaches a byte
fixpoint after one round trip.
"""

from __future__ import annotations

import itertools

from .errors import ModelMismatchError, ParseError
from .influence import Direction, InfluenceRule, TimeInterval
from .model import (
    AttributeDef,
    Cond,
    CondAnd,
    CondNot,
    CondOr,
    CondTest,
    CondTrue,
    Consequence,
    EventDef,
    ModelDef,
    Query,
    ScenarioDef,
    Time,
    TimelineEntry,
    _fmt_num,
)

__all__ = [
    "parse_model",
    "parse_scenario",
    "parse_time",
    "serialize_model",
    "serialize_scenario",
]


# ---------------------------------------------------------------------------
# Lexer

_PUNCT = {"{", "}", "(", ")", "[", "]", ",", ":", "=", "+"}


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind: str, text: str, line: int, col: int):
        self.kind = kind  # "name" | "number" | "punct" | "eof"
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}({self.text!r})@{self.line}:{self.col}"


def _is_name_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_name_char(c: str) -> bool:
    return c.isalnum() or c in "_-"


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if _is_name_start(c):
            j = i
            while j < n and _is_name_char(text[j]):
                # A hyphen that starts "->" or ends the word is not ours.
                if text[j] == "-" and (j + 1 >= n or text[j + 1] == ">" or not _is_name_char(text[j + 1])):
                    break
                j += 1
            tokens.append(_Token("name", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(_Token("number", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c == "-" and i + 1 < n and text[i + 1] == ">":
            tokens.append(_Token("punct", "->", line, start_col))
            i += 2
            col += 2
            continue
        if c in _PUNCT:
            tokens.append(_Token("punct", c, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, start_col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, text: str):
        self.tokens = _lex(text)
        self.pos = 0

    # -- primitives

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.col)

    def at_word(self, word: str) -> bool:
        t = self.peek()
        return t.kind == "name" and t.text == word

    def at_punct(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "punct" and t.text == text

    def expect_word(self, word: str) -> _Token:
        if not self.at_word(word):
            self.fail(f"expected {word!r}, got {self.peek().text!r}")
        return self.advance()

    def expect_punct(self, text: str) -> _Token:
        if not self.at_punct(text):
            self.fail(f"expected {text!r}, got {self.peek().text!r}")
        return self.advance()

    def name(self, what: str = "name") -> _Token:
        t = self.peek()
        if t.kind != "name":
            self.fail(f"expected {what}, got {t.text!r}")
        return self.advance()

    def number(self, what: str = "number") -> tuple[float, _Token]:
        t = self.peek()
        if t.kind != "number":
            self.fail(f"expected {what}, got {t.text!r}")
        self.advance()
        return float(t.text), t

    def header(self):
        self.expect_word("format")
        value, tok = self.number("format version")
        if value != 1:
            self.fail(f"unsupported format version {tok.text}", tok)

    # -- shared pieces

    def name_group(self, what: str) -> list[_Token]:
        """NAME or (NAME, NAME, ...)."""
        if self.at_punct("("):
            self.advance()
            out = [self.name(what)]
            while self.at_punct(","):
                self.advance()
                out.append(self.name(what))
            self.expect_punct(")")
            return out
        return [self.name(what)]

    def time(self) -> Time:
        base, tok = self.number("time")
        deltas = 0
        if self.at_punct("+"):
            self.advance()
            count = 1.0
            if self.peek().kind == "number":
                count, ctok = self.number()
                if count != int(count) or count < 1:
                    self.fail("delta count must be a positive integer", ctok)
            d = self.name("'d'")
            if d.text != "d":
                self.fail(f"expected 'd' after '+', got {d.text!r}", d)
            deltas = int(count)
        return Time(base, deltas)

    # -- conditions

    def condition(self) -> Cond:
        return self.cond_or()

    def cond_or(self) -> Cond:
        parts = [self.cond_and()]
        while self.at_word("or"):
            self.advance()
            parts.append(self.cond_and())
        if len(parts) == 1:
            return parts[0]
        flat: list[Cond] = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, CondOr) else [p])
        return CondOr(tuple(flat))

    def cond_and(self) -> Cond:
        parts = [self.cond_not()]
        while self.at_word("and"):
            self.advance()
            parts.append(self.cond_not())
        if len(parts) == 1:
            return parts[0]
        flat: list[Cond] = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, CondAnd) else [p])
        return CondAnd(tuple(flat))

    def cond_not(self) -> Cond:
        if self.at_word("not"):
            self.advance()
            return CondNot(self.cond_not())
        return self.cond_atom()

    def cond_atom(self) -> Cond:
        if self.at_punct("("):
            self.advance()
            inner = self.condition()
            self.expect_punct(")")
            return inner
        t = self.name("condition")
        if self.at_punct("="):
            self.advance()
            v = self.name("value")
            return CondTest(t.text, v.text)
        if t.text == "true":
            return CondTrue()
        self.fail(f"expected '= value' after {t.text!r}, or 'true'", t)

    # -- model items

    def model_file(self) -> ModelDef:
        self.header()
        attrs: list[AttributeDef] = []
        events: list[EventDef] = []
        rules: list[InfluenceRule] = []
        delta: float | None = None
        while self.peek().kind != "eof":
            t = self.peek()
            if self.at_word("delta"):
                self.advance()
                value, vtok = self.number("delta value")
                if delta is not None:
                    self.fail("delta declared twice", t)
                if value <= 0:
                    self.fail("delta must be positive", vtok)
                delta = value
            elif self.at_word("attribute"):
                attrs.append(self.attribute_item())
            elif self.at_word("event"):
                events.append(self.event_item())
            elif self.at_word("influence"):
                rules.append(self.influence_item(aggregated=False))
            elif self.at_word("aggregated"):
                self.advance()
                if not self.at_word("influence"):
                    self.fail("expected 'influence' after 'aggregated'")
                rules.append(self.influence_item(aggregated=True, loc=(t.line, t.col)))
            else:
                self.fail(
                    "expected delta, attribute, event, influence, or "
                    f"aggregated influence, got {t.text!r}")
        return ModelDef(
            attrs=tuple(attrs),
            events=tuple(events),
            rules=tuple(rules),
            delta=delta if delta is not None else 0.001,
        )

    def attribute_item(self) -> AttributeDef:
        kw = self.expect_word("attribute")
        name = self.name("attribute name")
        self.expect_punct("{")
        values = []
        while not self.at_punct("}"):
            values.append(self.name("value name").text)
        self.expect_punct("}")
        return AttributeDef(name.text, tuple(values), loc=(kw.line, kw.col))

    def event_item(self) -> EventDef:
        kw = self.expect_word("event")
        name = self.name("event name")
        self.expect_punct("{")
        consequences: list[Consequence] = []
        while self.at_word("when"):
            consequences.append(self.consequence_item())
        self.expect_punct("}")
        return EventDef(name.text, tuple(consequences), loc=(kw.line, kw.col))

    def consequence_item(self) -> Consequence:
        kw = self.expect_word("when")
        cond = self.condition()
        self.expect_punct("->")
        prob, _ = self.number("probability")
        self.expect_punct(":")
        self.expect_punct("{")
        changes: list[tuple[str, str]] = []
        if not self.at_punct("}"):
            while True:
                attr = self.name("attribute name")
                self.expect_punct("=")
                value = self.name("value name")
                changes.append((attr.text, value.text))
                if not self.at_punct(","):
                    break
                self.advance()
        self.expect_punct("}")
        observation = None
        if self.at_word("obs"):
            self.advance()
            observation = self.name("observation label").text
        return Consequence(cond, prob, tuple(changes), observation, loc=(kw.line, kw.col))

    def influence_item(self, aggregated: bool, loc: tuple[int, int] | None = None) -> InfluenceRule:
        kw = self.expect_word("influence")
        target = self.name("target attribute")
        self.expect_word("by")
        sources = self.name_group("source attribute")
        if aggregated and len(sources) < 2:
            self.fail("aggregated influence needs at least two sources", sources[0])
        self.expect_punct("{")
        table: dict[tuple[str, ...], tuple[Direction, TimeInterval | None]] = {}
        n_src = len(sources)
        while not self.at_punct("}"):
            first = self.peek()
            src_vals = self.name_group("source value")
            if len(src_vals) != n_src:
                self.fail(f"expected {n_src} source value(s), got {len(src_vals)}", first)
            tgt_val = self.name("target value")
            self.expect_punct(":")
            key = tuple(t.text for t in src_vals) + (tgt_val.text,)
            if key in table:
                self.fail(f"duplicate entry for {key}", first)
            table[key] = self.effect()
        self.expect_punct("}")
        return InfluenceRule(
            target=target.text,
            sources=tuple(t.text for t in sources),
            table=table,
            aggregated=aggregated,
            loc=loc or (kw.line, kw.col),
        )

    def effect(self) -> tuple[Direction, TimeInterval | None]:
        t = self.name("steady, up, or down")
        if t.text == "steady":
            return (Direction.STEADY, None)
        if t.text not in ("up", "down"):
            self.fail(f"expected steady, up, or down, got {t.text!r}", t)
        direction = Direction.UP if t.text == "up" else Direction.DOWN
        self.expect_punct("[")
        lo, lotok = self.number("interval endpoint")
        self.expect_punct(",")
        hi, _ = self.number("interval endpoint")
        self.expect_punct("]")
        try:
            interval = TimeInterval(lo, hi)
        except ValueError as exc:
            self.fail(str(exc), lotok)
        return (direction, interval)

    # -- scenario items

    def scenario_file(self) -> ScenarioDef:
        self.header()
        priors: dict[str, dict[str, float]] = {}
        timeline: list[TimelineEntry] = []
        queries: list[Query] = []
        prev: tuple | None = None
        while self.peek().kind != "eof":
            t = self.peek()
            if self.at_word("prior"):
                self.advance()
                attr = self.name("attribute name")
                if attr.text in priors:
                    self.fail(f"prior for {attr.text} declared twice", attr)
                self.expect_punct("{")
                dist: dict[str, float] = {}
                while True:
                    v = self.name("value name")
                    self.expect_punct(":")
                    p, _ = self.number("probability")
                    if v.text in dist:
                        self.fail(f"value {v.text} listed twice", v)
                    dist[v.text] = p
                    if not self.at_punct(","):
                        break
                    self.advance()
                self.expect_punct("}")
                priors[attr.text] = dist
            elif self.at_word("at"):
                self.advance()
                when = self.time()
                self.expect_word("do")
                event = self.name("event name")
                observed = None
                if self.at_word("observed"):
                    self.advance()
                    observed = self.name("observation label").text
                key = (when.base, when.deltas)
                if prev is not None and key <= prev:
                    self.fail(f"timeline time {when} does not increase", t)
                prev = key
                timeline.append(TimelineEntry(when, event.text, observed, loc=(t.line, t.col)))
            elif self.at_word("query"):
                self.advance()
                attr = self.name("attribute name")
                self.expect_word("at")
                when = self.time()
                queries.append(Query(attr.text, when, loc=(t.line, t.col)))
            else:
                self.fail(f"expected prior, at, or query, got {t.text!r}")
        return ScenarioDef(
            priors=priors if priors else None,
            timeline=tuple(timeline),
            queries=tuple(queries),
        )


def parse_model(text: str) -> ModelDef:
    """Parse model text. Syntax errors raise :class:`ParseError` with the
    offending line and column; semantic checks are validate_model's job."""
    return _Parser(text).model_file()


def parse_scenario(text: str) -> ScenarioDef:
    """Parse scenario text. Priors, when present, keep declaration order;
    a scenario with no prior block (an extension fragment) has priors None."""
    return _Parser(text).scenario_file()


def parse_time(text: str) -> Time:
    """Parse a standalone time like ``10+2d`` (used in reports/sessions)."""
    p = _Parser(text)
    t = p.time()
    if p.peek().kind != "eof":
        p.fail("trailing input after time")
    return t


# ---------------------------------------------------------------------------
# Serializer

# Precedence levels for minimal parenthesization.
_PREC_OR, _PREC_AND, _PREC_NOT = 1, 2, 3


def _cond_text(expr: Cond, parent: int = 0) -> str:
    if isinstance(expr, CondTrue):
        return "true"
    if isinstance(expr, CondTest):
        return f"{expr.attr} = {expr.value}"
    if isinstance(expr, CondNot):
        body = f"not {_cond_text(expr.expr, _PREC_NOT)}"
        return f"({body})" if parent > _PREC_NOT else body
    if isinstance(expr, CondAnd):
        body = " and ".join(_cond_text(p, _PREC_AND) for p in expr.parts)
        return f"({body})" if parent > _PREC_AND else body
    if isinstance(expr, CondOr):
        body = " or ".join(_cond_text(p, _PREC_OR) for p in expr.parts)
        return f"({body})" if parent > _PREC_OR else body
    raise TypeError(f"not a condition: {expr!r}")


def _names_text(names: tuple[str, ...]) -> str:
    if len(names) == 1:
        return names[0]
    return "(" + ", ".join(names) + ")"


def _effect_text(effect: tuple[Direction, TimeInterval | None]) -> str:
    direction, interval = effect
    if direction is Direction.STEADY:
        return "steady"
    word = "up" if direction is Direction.UP else "down"
    return f"{word} [{_fmt_num(interval.lo)}, {_fmt_num(interval.hi)}]"


def serialize_model(model: ModelDef) -> str:
    """Canonical text for a model.

    Declarations keep their order (attribute value order and consequence
    order are semantic); influence entries are emitted in value-order
    cross-product order when the model declares all named attributes, and
    in table order otherwise.
    """
    blocks: list[str] = ["format 1", f"delta {_fmt_num(model.delta)}"]
    for a in model.attrs:
        blocks.append(f"attribute {a.name} {{ {' '.join(a.values)} }}")
    for e in model.events:
        lines = [f"event {e.name} {{"]
        for c in e.consequences:
            changes = ", ".join(f"{attr} = {value}" for attr, value in c.changes)
            body = f"{{ {changes} }}" if changes else "{}"
            obs = f" obs {c.observation}" if c.observation is not None else ""
            lines.append(f"  when {_cond_text(c.condition)} -> {_fmt_num(c.probability)}: {body}{obs}")
        lines.append("}")
        blocks.append("\n".join(lines))
    for r in model.rules:
        kw = "aggregated influence" if r.aggregated else "influence"
        lines = [f"{kw} {r.target} by {_names_text(r.sources)} {{"]
        try:
            domains = [model.attribute(s).values for s in r.sources]
            domains.append(model.attribute(r.target).values)
            keys = [k for k in itertools.product(*domains) if k in r.table]
            seen = set(keys)
            keys += [k for k in r.table if k not in seen]
        except ModelMismatchError:
            keys = list(r.table)
        for key in keys:
            lines.append(f"  {_names_text(key[:-1])} {key[-1]}: {_effect_text(r.table[key])}")
        lines.append("}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def serialize_scenario(scenario: ScenarioDef) -> str:
    """Canonical text for a scenario; declaration order is preserved."""
    blocks: list[str] = ["format 1"]
    if scenario.priors is not None:
        for attr, dist in scenario.priors.items():
            entries = ", ".join(f"{v}: {_fmt_num(p)}" for v, p in dist.items())
            blocks.append(f"prior {attr} {{ {entries} }}")
    for entry in scenario.timeline:
        obs = f" observed {entry.observed}" if entry.observed is not None else ""
        blocks.append(f"at {entry.time} do {entry.event}{obs}")
    for q in scenario.queries:
        blocks.append(f"query {q.attr} at {q.time}")
    return "\n\n".join(blocks) + "\n"
