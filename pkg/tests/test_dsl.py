"""Parser and canonical serializer."""

import random

import pytest

from endosim import (
    Direction,
    ParseError,
    parse_model,
    parse_scenario,
    serialize_model,
    serialize_scenario,
    validate_model,
)
from endosim.bundled import crash_scenario_text, trauma_model_text
from endosim.dsl import parse_time
from endosim.model import CondAnd, CondNot, CondOr, CondTest, CondTrue, Time

from helpers import random_model


class TestParseModel:
    def test_bundled_counts(self, bench_model):
        assert [a.name for a in bench_model.attrs] == ["CS", "IB", "HI", "PD", "VS"]
        assert [e.name for e in bench_model.events] == [
            "collision", "observe-vs", "observe-pd",
        ]
        assert len(bench_model.event("collision").consequences) == 18
        assert len(bench_model.rules) == 4
        assert bench_model.delta == 0.001

    def test_consequence_details(self, bench_model):
        c = bench_model.event("collision").consequences[0]
        assert c.condition == CondTest("CS", "mild")
        assert c.probability == 0.008
        assert c.changes == (("HI", "true"), ("IB", "none"))
        assert c.observation is None
        obs = bench_model.event("observe-vs").consequences[1]
        assert obs.observation == "UNSTABLE"

    def test_aggregated_rule(self, bench_model):
        agg = next(r for r in bench_model.rules if r.aggregated)
        assert agg.target == "VS"
        assert agg.sources == ("HI", "IB")
        assert len(agg.table) == 18
        d, iv = agg.table[("true", "slight", "unstable")]
        assert d is Direction.DOWN
        assert (iv.lo, iv.hi) == (9.8, 119.75)

    def test_condition_precedence(self):
        m = parse_model("""
            format 1
            attribute a { x y }
            attribute b { p q }
            event e {
              when a = x or a = y and not b = p -> 1: {}
              when not (a = x or a = y and not b = p) -> 1: {}
            }
        """)
        cond = m.events[0].consequences[0].condition
        # "or" binds loosest: a=x or (a=y and (not b=p))
        assert isinstance(cond, CondOr)
        assert cond.parts[0] == CondTest("a", "x")
        assert isinstance(cond.parts[1], CondAnd)
        assert isinstance(cond.parts[1].parts[1], CondNot)

    def test_bare_true_condition(self):
        m = parse_model("""
            format 1
            attribute a { x y }
            event e { when true -> 1: { a = y } }
        """)
        assert m.events[0].consequences[0].condition == CondTrue()

    def test_hyphenated_names(self):
        m = parse_model("""
            format 1
            attribute no-show { a-1 b-2 }
            event check-in { when no-show = a-1 -> 1: {} when no-show = b-2 -> 1: {} }
        """)
        assert m.attrs[0].name == "no-show"
        assert m.attrs[0].values == ("a-1", "b-2")

    def test_number_forms(self):
        m = parse_model("""
            format 1
            delta 1e-3
            attribute a { x y }
            event e { when a = x -> 0.25: {} when a = x -> 7.5e-1: {} when a = y -> 1: {} }
        """)
        assert m.delta == 0.001
        assert m.events[0].consequences[1].probability == 0.75


class TestParseErrors:
    def expect_error(self, text, fragment, line=None):
        with pytest.raises(ParseError) as exc:
            parse_model(text)
        assert fragment in str(exc.value)
        if line is not None:
            assert exc.value.line == line

    def test_missing_header(self):
        self.expect_error("attribute a { x y }", "expected 'format'", line=1)

    def test_wrong_version(self):
        self.expect_error("format 2", "unsupported format version 2")

    def test_unexpected_character(self):
        self.expect_error("format 1\nattribute a { x y } @", "unexpected character")

    def test_duplicate_table_entry(self):
        self.expect_error(
            "format 1\nattribute s { f t }\nattribute x { lo hi }\n"
            "influence x by s { f lo: steady\n f lo: steady }",
            "duplicate entry",
        )

    def test_aggregated_needs_two_sources(self):
        self.expect_error(
            "format 1\nattribute s { f t }\nattribute x { lo hi }\n"
            "aggregated influence x by s { }",
            "at least two sources",
        )

    def test_delta_twice_and_nonpositive(self):
        self.expect_error("format 1\ndelta 0.1\ndelta 0.2", "declared twice")
        self.expect_error("format 1\ndelta 0", "must be positive")

    def test_error_location_points_at_token(self):
        with pytest.raises(ParseError) as exc:
            parse_model("format 1\nattribute a { x y }\nevent e { when a -> 1: {} }")
        assert exc.value.line == 3
        assert str(exc.value).startswith("3:")

    def test_scenario_timeline_must_increase(self):
        with pytest.raises(ParseError) as exc:
            parse_scenario("format 1\nat 5 do e\nat 5 do e")
        assert "does not increase" in str(exc.value)

    def test_scenario_duplicate_prior(self):
        with pytest.raises(ParseError):
            parse_scenario("format 1\nprior a { x: 1 }\nprior a { x: 1 }")

    def test_bad_delta_count(self):
        with pytest.raises(ParseError) as exc:
            parse_scenario("format 1\nat 5+0d do e")
        assert "positive integer" in str(exc.value)


class TestParseScenario:
    def test_bundled(self, crash_scenario):
        assert list(crash_scenario.priors) == ["CS", "IB", "HI", "PD", "VS"]
        assert crash_scenario.priors["CS"] == {"mild": 0.35, "moderate": 0.5, "severe": 0.15}
        assert [e.event for e in crash_scenario.timeline] == [
            "collision", "observe-vs", "observe-pd",
        ]
        assert crash_scenario.timeline[1].observed == "UNSTABLE"
        assert crash_scenario.timeline[2].time == Time(10.0, 1)
        assert [q.key() for q in crash_scenario.queries] == ["CS@0+d", "IB@10+2d"]

    def test_fragment_has_no_priors(self):
        frag = parse_scenario("format 1\nat 12 do observe-pd observed OK")
        assert frag.priors is None

    def test_parse_time(self):
        assert parse_time("10+2d") == Time(10.0, 2)
        assert parse_time("3.5") == Time(3.5)
        with pytest.raises(ParseError):
            parse_time("10+2d extra")


class TestSerialize:
    def test_bundled_fixpoint(self):
        for text, parse, serialize in (
            (trauma_model_text(), parse_model, serialize_model),
            (crash_scenario_text(), parse_scenario, serialize_scenario),
        ):
            once = serialize(parse(text))
            twice = serialize(parse(once))
            assert once == twice

    def test_canonical_text_shape(self, bench_model):
        text = serialize_model(bench_model)
        assert text.startswith("format 1\n\ndelta 0.001\n")
        assert "attribute CS { mild moderate severe }" in text
        assert "\n  when CS = mild -> 0.008: { HI = true, IB = none }\n" in text
        assert "\naggregated influence VS by (HI, IB) {\n" in text
        assert "  (true, slight) unstable: down [9.8, 119.75]\n" in text
        assert text.endswith("}\n")

    def test_minimal_parentheses(self):
        text = """
            format 1
            attribute a { x y }
            attribute b { p q }
            event e {
              when (a = x or b = p) and not (a = y and b = q) -> 1: {}
              when not ((a = x or b = p) and not (a = y and b = q)) -> 1: {}
            }
        """
        m = parse_model(text)
        out = serialize_model(m)
        assert "when (a = x or b = p) and not (a = y and b = q) -> 1: {}" in out
        again = serialize_model(parse_model(out))
        assert out == again

    def test_scenario_round_trip_values(self, crash_scenario):
        text = serialize_scenario(crash_scenario)
        back = parse_scenario(text)
        assert back.priors == crash_scenario.priors
        assert back.timeline == tuple(
            type(e)(e.time, e.event, e.observed) for e in crash_scenario.timeline
        ) or all(
            a.time == b.time and a.event == b.event and a.observed == b.observed
            for a, b in zip(back.timeline, crash_scenario.timeline)
        )
        assert [q.key() for q in back.queries] == [q.key() for q in crash_scenario.queries]

    def test_random_models_fixpoint(self):
        rng = random.Random(2024)
        for _ in range(25):
            model = random_model(rng)
            once = serialize_model(model)
            reparsed = parse_model(once)
            assert validate_model(reparsed) == []
            assert serialize_model(reparsed) == once
