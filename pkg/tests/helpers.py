"""Shared test utilities: a scripted RNG, a random model generator, and a
CLI runner."""

from __future__ import annotations

import itertools
import subprocess
import sys

from endosim import (
    AttributeDef,
    Consequence,
    Direction,
    EventDef,
    InfluenceRule,
    ModelDef,
    TimeInterval,
    validate_model,
)
from endosim.model import CondTest


class ScriptedRng:
    """Feeds a fixed queue of uniforms; any extra draw is a test failure."""

    def __init__(self, *values: float):
        self.values = list(values)

    def random(self) -> float:
        if not self.values:
            raise AssertionError("unexpected random() draw")
        return self.values.pop(0)


def run_cli(*args: str, cwd=None) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "endosim.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def random_model(rng) -> ModelDef:
    """A random valid model: 2-4 attributes, events with exhaustive
    single-attribute condition groups whose probabilities are eighths
    (so group sums are exact), and influence tables that respect the
    value-order boundaries."""
    attrs = []
    for i in range(rng.randint(2, 4)):
        k = rng.randint(2, 4)
        name = f"attr-{i}" if rng.random() < 0.4 else f"a{i}"
        attrs.append(AttributeDef(name, tuple(f"v{j}" for j in range(k))))
    by_name = {a.name: a for a in attrs}

    events = []
    for ei in range(rng.randint(1, 3)):
        cond_attr = rng.choice(attrs)
        consequences = []
        for v in cond_attr.values:
            n_rows = rng.randint(1, 3)
            cuts = sorted(rng.sample(range(1, 8), n_rows - 1))
            parts = [b - a for a, b in zip([0] + cuts, cuts + [8])]
            for p8 in parts:
                changes = []
                if rng.random() < 0.6:
                    ta = rng.choice(attrs)
                    changes.append((ta.name, rng.choice(ta.values)))
                obs = f"L{rng.randint(0, 2)}" if rng.random() < 0.5 else None
                consequences.append(
                    Consequence(CondTest(cond_attr.name, v), p8 / 8.0, tuple(changes), obs)
                )
        events.append(EventDef(f"ev{ei}", tuple(consequences)))

    rules = []
    used = set()
    for _ in range(rng.randint(0, 3)):
        target = rng.choice(attrs)
        others = [a.name for a in attrs if a.name != target.name]
        if not others:
            continue
        n_src = rng.randint(1, min(2, len(others)))
        sources = tuple(sorted(rng.sample(others, n_src)))
        if (target.name, sources) in used:
            continue
        used.add((target.name, sources))
        table = {}
        top = len(target.values) - 1
        for combo in itertools.product(*(by_name[s].values for s in sources)):
            for ti, tv in enumerate(target.values):
                if rng.random() < 0.5:
                    table[combo + (tv,)] = (Direction.STEADY, None)
                    continue
                up = rng.random() < 0.5
                if ti == 0:
                    up = True
                elif ti == top:
                    up = False
                lo = round(rng.uniform(0.5, 10.0), 3)
                hi = round(lo + rng.uniform(0.0, 10.0), 3)
                table[combo + (tv,)] = (
                    Direction.UP if up else Direction.DOWN,
                    TimeInterval(lo, hi),
                )
        rules.append(
            InfluenceRule(
                target.name,
                sources,
                table,
                aggregated=(n_src >= 2 and rng.random() < 0.5),
            )
        )

    model = ModelDef(
        attrs=tuple(attrs),
        events=tuple(events),
        rules=tuple(rules),
        delta=rng.choice([0.001, 0.01, 0.25]),
    )
    problems = validate_model(model)
    assert not problems, f"generator produced an invalid model: {problems[0]}"
    return model
