"""Model and scenario semantics: time arithmetic, validation, state."""

import math

import pytest

from endosim import (
    ModelMismatchError,
    Time,
    apply_change_set,
    eval_condition,
    initial_state,
    parse_model,
    parse_scenario,
    validate_model,
    validate_scenario,
)
from endosim.engine import Stream
from endosim.model import Query, ScenarioDef, TimelineEntry

from helpers import ScriptedRng


def codes(violations):
    return [v.code for v in violations]


class TestTime:
    def test_rendering(self):
        assert str(Time(10.0)) == "10"
        assert str(Time(10.0, 1)) == "10+d"
        assert str(Time(10.0, 2)) == "10+2d"
        assert str(Time(0.5, 3)) == "0.5+3d"

    def test_numeric_and_step(self):
        t = Time(10.0, 2)
        assert t.numeric(0.001) == pytest.approx(10.002)
        assert t.plus_delta() == Time(10.0, 3)
        assert t.plus_delta(2) == Time(10.0, 4)

    def test_equality_is_structural(self):
        # 10+d and 10.001 coincide numerically under delta 0.001 but are
        # distinct keys; numeric ordering is what validation checks.
        assert Time(10.0, 1) != Time(10.001, 0)
        assert Time(10.0, 1) == Time(10.0, 1)


class TestModelValidation:
    def test_bundled_model_clean(self, bench_model):
        assert validate_model(bench_model) == []

    def check(self, text):
        return codes(validate_model(parse_model("format 1\n" + text)))

    def test_group_sum(self):
        got = self.check("""
            attribute a { x y }
            event e { when a = x -> 0.4: {}
                      when a = x -> 0.4: {}
                      when a = y -> 1: {} }
        """)
        assert "group-sum" in got

    def test_conditions_overlap_and_gap(self):
        got = self.check("""
            attribute a { x y z }
            event e { when a = x or a = y -> 1: {}
                      when a = y -> 1: {} }
        """)
        assert "conditions-overlap" in got
        assert "conditions-gap" in got  # z is uncovered

    def test_duplicate_attribute_and_value(self):
        got = self.check("attribute a { x y }\nattribute a { p q }")
        assert "duplicate-attribute" in got
        got = self.check("attribute a { x x }")
        assert "duplicate-value" in got

    def test_too_few_values(self):
        assert "too-few-values" in self.check("attribute a { x }")

    def test_event_reference_checks(self):
        got = self.check("""
            attribute a { x y }
            event e { when b = x -> 1: { a = q } }
        """)
        assert "unknown-attribute" in got
        assert "unknown-value" in got

    def test_bad_probability(self):
        got = self.check("""
            attribute a { x y }
            event e { when a = x -> 1.5: {} when a = y -> 1: {} }
        """)
        assert "bad-probability" in got

    def test_duplicate_change(self):
        got = self.check("""
            attribute a { x y }
            event e { when true -> 1: { a = x, a = y } }
        """)
        assert "duplicate-change" in got

    def test_empty_and_duplicate_event(self):
        got = self.check("attribute a { x y }\nevent e {}\nevent e {}")
        assert "empty-event" in got
        assert "duplicate-event" in got

    def test_influence_table_shape(self):
        got = self.check("""
            attribute s { f t }
            attribute x { lo hi }
            influence x by s { f lo: steady f hi: steady t lo: up [1, 2] }
        """)
        assert "table-missing" in got  # (t, hi) absent

    def test_influence_boundaries(self):
        got = self.check("""
            attribute s { f t }
            attribute x { lo hi }
            influence x by s {
              f lo: down [1, 2]
              f hi: up [1, 2]
              t lo: steady
              t hi: steady
            }
        """)
        assert "boundary-down" in got
        assert "boundary-up" in got

    def test_self_influence(self):
        got = self.check("""
            attribute x { lo hi }
            influence x by x { lo lo: steady lo hi: steady hi lo: steady hi hi: steady }
        """)
        assert "self-influence" in got

    def test_duplicate_rule(self):
        block = "influence x by s { f lo: steady f hi: steady t lo: steady t hi: steady }"
        got = self.check(f"attribute s {{ f t }}\nattribute x {{ lo hi }}\n{block}\n{block}")
        assert "duplicate-rule" in got

    def test_violations_carry_location(self):
        vs = validate_model(parse_model(
            "format 1\nattribute a { x y }\n"
            "event e { when a = x -> 0.5: {} when a = y -> 1: {} }"
        ))
        v = next(v for v in vs if v.code == "group-sum")
        assert v.line == 3
        assert "(line 3" in str(v)


class TestScenarioValidation:
    def test_bundled_scenario_clean(self, bench_model, crash_scenario):
        assert validate_scenario(bench_model, crash_scenario) == []

    def check(self, model, text):
        return codes(validate_scenario(model, parse_scenario("format 1\n" + text)))

    @pytest.fixture
    def tiny(self):
        return parse_model("""
            format 1
            delta 0.5
            attribute a { x y }
            event kick { when true -> 1: { a = y } }
        """)

    def test_missing_priors(self, tiny):
        assert "missing-priors" in self.check(tiny, "at 0 do kick")

    def test_missing_one_prior_is_fine_only_when_all_given(self, tiny):
        assert self.check(tiny, "prior a { x: 1 }\nat 0 do kick") == []

    def test_prior_sum_and_values(self, tiny):
        got = self.check(tiny, "prior a { x: 0.4, y: 0.4 }\nat 0 do kick")
        assert "prior-sum" in got
        got = self.check(tiny, "prior a { x: 0.5, q: 0.5 }\nat 0 do kick")
        assert "unknown-value" in got

    def test_unknown_event_and_label(self, tiny):
        got = self.check(tiny, "prior a { x: 1 }\nat 0 do boom")
        assert "unknown-event" in got
        got = self.check(tiny, "prior a { x: 1 }\nat 0 do kick observed NOPE")
        assert "unknown-label" in got

    def test_time_gap_smaller_than_delta(self, tiny):
        got = self.check(tiny, "prior a { x: 1 }\nat 0 do kick\nat 0.2 do kick")
        assert "time-gap" in got

    def test_time_order_numeric_collision(self, tiny):
        # 10+d and 10.5 coincide numerically under delta 0.5: distinct
        # symbolic keys, rejected on numeric order.
        got = self.check(tiny, "prior a { x: 1 }\nat 10 do kick\nat 10+d do kick\nat 10.5 do kick")
        assert "time-order" in got

    def test_time_order_constructed_equal(self, tiny):
        scen = ScenarioDef(
            priors={"a": {"x": 1.0}},
            timeline=(
                TimelineEntry(Time(5.0), "kick", None),
                TimelineEntry(Time(5.0), "kick", None),
            ),
            queries=(),
        )
        assert "time-order" in codes(validate_scenario(tiny, scen))

    def test_negative_time(self, tiny):
        scen = ScenarioDef(
            priors={"a": {"x": 1.0}},
            timeline=(TimelineEntry(Time(-1.0), "kick", None),),
            queries=(),
        )
        assert "bad-time" in codes(validate_scenario(tiny, scen))

    def test_query_times_must_sit_on_timeline(self, tiny):
        got = self.check(tiny, "prior a { x: 1 }\nat 0 do kick\nquery a at 3")
        assert "query-time" in got
        assert self.check(tiny, "prior a { x: 1 }\nat 0 do kick\nquery a at 0+d") == []

    def test_extension_rules(self, tiny):
        frag = parse_scenario("format 1\nat 5 do kick")
        assert validate_scenario(tiny, frag, extension=True) == []
        assert "missing-priors" in codes(validate_scenario(tiny, frag))
        with_priors = parse_scenario("format 1\nprior a { x: 1 }\nat 5 do kick")
        assert "extension-priors" in codes(
            validate_scenario(tiny, with_priors, extension=True)
        )


class TestState:
    def test_initial_state_draws_in_declaration_order(self, bench_model, crash_scenario):
        # One uniform per attribute: CS cum (0.35, 0.85, 1.0), the rest
        # are point priors, so u=0.5 lands on moderate.
        rng = ScriptedRng(0.5, 0.0, 0.0, 0.0, 0.0)
        st = initial_state(bench_model, crash_scenario.priors, rng, start_time=0.0)
        assert st.value_names() == {
            "CS": "moderate", "IB": "none", "HI": "false", "PD": "false", "VS": "normal",
        }
        assert st.pending == [None] * 5
        assert st.clock == 0.0

    def test_initial_state_deterministic(self, bench_model, crash_scenario):
        a = initial_state(bench_model, crash_scenario.priors, Stream(99, 0, 0))
        b = initial_state(bench_model, crash_scenario.priors, Stream(99, 0, 0))
        assert a == b

    def test_initial_state_frequencies(self, bench_model, crash_scenario):
        """CS prior is (0.35, 0.50, 0.15); at n=20000 draws the observed
        frequencies must sit within 3 binomial standard errors."""
        n = 20000
        counts = {"mild": 0, "moderate": 0, "severe": 0}
        for trial in range(n):
            st = initial_state(bench_model, crash_scenario.priors, Stream(4242, trial, 0))
            counts[st.value_name("CS")] += 1
        for name, p in (("mild", 0.35), ("moderate", 0.50), ("severe", 0.15)):
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[name] / n - p) <= 3 * se, (name, counts)

    def test_eval_condition(self, bench_model, crash_scenario):
        st = initial_state(bench_model, crash_scenario.priors, ScriptedRng(0, 0, 0, 0, 0))
        ev = bench_model.event("collision")
        first = ev.consequences[0].condition  # CS = mild
        assert eval_condition(first, st)
        st.values[bench_model.attr_index("CS")] = 1
        assert not eval_condition(first, st)

    def test_apply_change_set_is_pure(self, bench_model, crash_scenario):
        st = initial_state(bench_model, crash_scenario.priors, ScriptedRng(0, 0, 0, 0, 0))
        out = apply_change_set(st, (("HI", "true"), ("IB", "gross")))
        assert out is not st
        assert out.value_name("HI") == "true" and out.value_name("IB") == "gross"
        assert st.value_name("HI") == "false"

    def test_state_copy_and_eq(self, bench_model, crash_scenario):
        st = initial_state(bench_model, crash_scenario.priors, ScriptedRng(0, 0, 0, 0, 0))
        dup = st.copy()
        assert dup == st
        dup.values[0] = 2
        assert dup != st

    def test_unknown_names_raise(self, bench_model):
        with pytest.raises(ModelMismatchError):
            bench_model.attr_index("nope")
        with pytest.raises(ModelMismatchError):
            bench_model.value_index("CS", "nope")
        with pytest.raises(ModelMismatchError):
            bench_model.event("nope")


class TestEffectiveRules:
    def test_aggregated_override_suppresses_subsets(self, bench_model):
        eff = bench_model.effective_rules("VS")
        assert len(eff) == 1 and eff[0].aggregated
        assert [r.sources for r in bench_model.effective_rules("PD")] == [("HI",)]
        assert bench_model.effective_rules("CS") == []

    def test_influenced_attrs(self, bench_model):
        assert set(bench_model.influenced_attrs()) == {"PD", "VS"}
