"""Combination arithmetic for transition-time influences.

Concordant combination f and contrary combination g both order their
arguments (a <= b) and ignore the larger one past the 100x cutoff:

    f(a, b) = a                 if b > 100a
              a/2 + (b-a)/198   otherwise
    g(a, b) = a                 if b > 100a
              100a - (b - a)    otherwise

so f(a, a) = a/2 (two equal pushes halve the transition time), f never
exceeds min(a, b), g(a, a) = 100a (perfectly opposed pushes all but
freeze the target), and g stays within [min, 100*min].
"""

import math
import random

import pytest

from endosim import (
    Direction,
    NetInfluence,
    TimeInterval,
    aggregate,
    combine_concordant,
    combine_contrary,
    combine_intervals,
)

UP, DOWN, STEADY = Direction.UP, Direction.DOWN, Direction.STEADY


class TestConcordant:
    def test_equal_inputs_halve(self):
        assert combine_concordant(4.0, 4.0) == 2.0
        assert combine_concordant(0.5, 0.5) == 0.25

    def test_beyond_cutoff_returns_smaller(self):
        # 300 > 100 * 2, so the slow push is ignored entirely
        assert combine_concordant(2.0, 300.0) == 2.0
        assert combine_concordant(300.0, 2.0) == 2.0

    def test_interpolation_inside_cutoff(self):
        # f(2, 30) = 1 + 28/198
        assert combine_concordant(2.0, 30.0) == pytest.approx(1.0 + 28.0 / 198.0, rel=1e-15)

    def test_symmetric(self):
        rng = random.Random(5)
        for _ in range(200):
            a = rng.uniform(0.1, 50.0)
            b = rng.uniform(0.1, 50.0)
            assert combine_concordant(a, b) == combine_concordant(b, a)

    def test_never_exceeds_min(self):
        rng = random.Random(6)
        for _ in range(500):
            a = rng.uniform(0.1, 100.0)
            b = rng.uniform(0.1, 100.0)
            assert combine_concordant(a, b) <= min(a, b) + 1e-12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            combine_concordant(0.0, 1.0)
        with pytest.raises(ValueError):
            combine_concordant(1.0, -2.0)


class TestContrary:
    def test_equal_inputs_near_freeze(self):
        assert combine_contrary(5.0, 5.0) == 500.0

    def test_beyond_cutoff_returns_smaller(self):
        assert combine_contrary(1.0, 150.0) == 1.0
        assert combine_contrary(150.0, 1.0) == 1.0

    def test_linear_inside_cutoff(self):
        # g(2, 30) = 200 - 28
        assert combine_contrary(2.0, 30.0) == 172.0

    def test_range(self):
        rng = random.Random(7)
        for _ in range(500):
            a = rng.uniform(0.1, 80.0)
            b = rng.uniform(0.1, 80.0)
            out = combine_contrary(a, b)
            m = min(a, b)
            assert m - 1e-12 <= out <= 100.0 * m + 1e-9

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            combine_contrary(1.0, 0.0)


class TestIntervals:
    def test_concordant_endpointwise(self):
        out = combine_intervals("concordant", TimeInterval(2, 5), TimeInterval(2, 5))
        assert (out.lo, out.hi) == (1.0, 2.5)

    def test_contrary_normalizes_endpoints(self):
        # g(1, 50) = 51 at the low ends, g(1.1, 100) = 11.1 at the high
        # ends; the combined endpoints land reversed and are reordered.
        out = combine_intervals("contrary", TimeInterval(1, 1.1), TimeInterval(50, 100))
        assert out.lo == pytest.approx(11.1, rel=1e-12)
        assert out.hi == 51.0

    def test_interval_invariants(self):
        with pytest.raises(ValueError):
            TimeInterval(5, 2)
        with pytest.raises(ValueError):
            TimeInterval(-1, 2)
        iv = TimeInterval(2, 6)
        assert iv.midpoint == 4.0
        assert iv.width == 4.0


class TestAggregate:
    def test_empty_and_steady(self):
        assert aggregate([]) == NetInfluence(STEADY, None)
        assert aggregate([(STEADY, None), (STEADY, None)]) == NetInfluence(STEADY, None)

    def test_single_entry_passthrough(self):
        net = aggregate([(UP, TimeInterval(3, 7)), (STEADY, None)])
        assert net.direction is UP
        assert (net.interval.lo, net.interval.hi) == (3.0, 7.0)

    def test_same_direction_fold(self):
        net = aggregate([(DOWN, TimeInterval(2, 5)), (DOWN, TimeInterval(2, 5))])
        assert net.direction is DOWN
        assert (net.interval.lo, net.interval.hi) == (1.0, 2.5)

    def test_opposed_smaller_midpoint_wins(self):
        # UP [1, 1.1] (midpoint 1.05) beats DOWN [50, 100] (midpoint 75);
        # the losing side still slows the winner via contrary combination.
        net = aggregate([(DOWN, TimeInterval(50, 100)), (UP, TimeInterval(1, 1.1))])
        assert net.direction is UP
        assert net.interval.lo == pytest.approx(11.1, rel=1e-12)
        assert net.interval.hi == 51.0

    def test_exact_midpoint_tie_goes_down(self):
        net = aggregate([(UP, TimeInterval(2, 4)), (DOWN, TimeInterval(1, 5))])
        assert net.direction is DOWN

    def test_permutation_invariant(self):
        entries = [
            (UP, TimeInterval(2, 6)),
            (UP, TimeInterval(1, 7)),  # same midpoint as [2, 6], different ends
            (UP, TimeInterval(3, 3.5)),
            (DOWN, TimeInterval(2.2, 2.9)),
            (DOWN, TimeInterval(8, 9)),
            (STEADY, None),
        ]
        rng = random.Random(11)
        reference = aggregate(entries)
        for _ in range(50):
            shuffled = entries[:]
            rng.shuffle(shuffled)
            out = aggregate(shuffled)
            assert out.direction is reference.direction
            assert out.interval.lo == reference.interval.lo
            assert out.interval.hi == reference.interval.hi

    def test_fold_order_is_ascending_midpoint(self):
        # Folding [1, 3] then [2, 4] then [10, 12]: the two fast pushes
        # combine first (f(1,2)=0.505, f(3,4)=1.505...), then the slow one.
        a, b, c = TimeInterval(1, 3), TimeInterval(2, 4), TimeInterval(10, 12)
        lo1 = combine_concordant(1.0, 2.0)
        hi1 = combine_concordant(3.0, 4.0)
        lo2 = combine_concordant(lo1, 10.0)
        hi2 = combine_concordant(hi1, 12.0)
        net = aggregate([(UP, c), (UP, a), (UP, b)])
        assert net.direction is UP
        assert net.interval.lo == min(lo2, hi2)
        assert net.interval.hi == max(lo2, hi2)

    def test_bench_table_cells(self, bench_model):
        """The bundled model's single-source tables aggregate in isolation:
        one moving entry passes straight through."""
        rule = next(r for r in bench_model.rules if r.target == "PD")
        net = aggregate([rule.table[("true", "false")]])
        assert net.direction is UP
        assert (net.interval.lo, net.interval.hi) == (3.0, 7.0)

    def test_formula_vs_declared_override(self, bench_model):
        """For (HI=true, IB=gross, VS=normal) the two single-source rules
        give DOWN [2,5] and DOWN [2,5]; formula combination folds them to
        DOWN [1, 2.5], which matches the declared aggregated cell."""
        by_ib = next(r for r in bench_model.rules if r.target == "VS" and r.sources == ("IB",))
        by_hi = next(r for r in bench_model.rules if r.target == "VS" and r.sources == ("HI",))
        net = aggregate([by_ib.table[("gross", "normal")], by_hi.table[("true", "normal")]])
        assert net.direction is DOWN
        assert (net.interval.lo, net.interval.hi) == (1.0, 2.5)
        agg = next(r for r in bench_model.rules if r.aggregated)
        d, iv = agg.table[("true", "gross", "normal")]
        assert d is DOWN and (iv.lo, iv.hi) == (1.0, 2.5)

    def test_homogeneity_of_interval_combination(self):
        rng = random.Random(13)
        for _ in range(200):
            a = rng.uniform(0.2, 20.0)
            b = rng.uniform(0.2, 20.0)
            c = rng.uniform(0.1, 10.0)
            assert combine_concordant(c * a, c * b) == pytest.approx(
                c * combine_concordant(a, b), rel=1e-12
            )
            assert combine_contrary(c * a, c * b) == pytest.approx(
                c * combine_contrary(a, b), rel=1e-12
            )

    def test_cutoff_continuity(self):
        for a in (0.3, 1.0, 7.5, 42.0):
            at_cap = combine_concordant(a, 100.0 * a)
            above = combine_concordant(a, 100.0 * a * (1 + 1e-13))
            assert math.isclose(at_cap, above, rel_tol=1e-12)
            g_at = combine_contrary(a, 100.0 * a)
            g_above = combine_contrary(a, 100.0 * a * (1 + 1e-13))
            assert math.isclose(g_at, g_above, rel_tol=1e-12)
