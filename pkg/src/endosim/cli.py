"""Command line front end.

Subcommands: validate, aggregate, simulate, infer, exact, extend. Output
on stdout is deterministic for a given command line: rows are tab
separated, floats use shortest round-trip repr, and wall time is only
included when explicitly asked for with --timing. Diagnostics go to
stderr. Exit codes: 0 success, 1 parse/validation/runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
from pathlib import Path

from .dsl import parse_model, parse_scenario
from .engine import record_keys, run_trial
from .errors import EndosimError, ParseError
from .infer import extend, load_session, run_inference, save_session
from .influence import Direction, aggregate
from .model import _fmt_num, validate_model, validate_scenario

__all__ = ["main"]


class _CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise _CliError(f"{path}: {e.strerror or e}") from e


def _load_model(path: str):
    try:
        return parse_model(_read(path))
    except ParseError as e:
        raise _CliError(f"{path}:{e}") from e


def _load_scenario(path: str):
    try:
        return parse_scenario(_read(path))
    except ParseError as e:
        raise _CliError(f"{path}:{e}") from e


def _check(model, scenario=None, *, model_path="model", scenario_path="scenario") -> None:
    lines = [f"{model_path}:{v}" for v in validate_model(model)]
    if scenario is not None and not lines:
        lines = [f"{scenario_path}:{v}" for v in validate_scenario(model, scenario)]
    if lines:
        raise _CliError("\n".join(lines))


def _emit(args, lines: list[str], manifest_extra: dict) -> None:
    """Print the assembled output and optionally write the run manifest."""
    out = "\n".join(lines) + "\n"
    if getattr(args, "manifest", None):
        digest = hashlib.sha256(out.encode()).hexdigest()
        manifest = {"format": 1, "command": args.command, "output_sha256": digest}
        manifest.update(manifest_extra)
        Path(args.manifest).write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )
    sys.stdout.write(out)


def _input_entry(path: str) -> dict:
    data = Path(path).read_bytes()
    return {"path": path, "sha256": hashlib.sha256(data).hexdigest()}


def _report_lines(args, report, header: list[tuple[str, object]]) -> list[str]:
    """Render a posterior report as TSV rows or a single JSON object."""
    if args.json:
        obj: dict = {"format": 1, "command": args.command}
        for k, v in header:
            obj[k.replace("-", "_")] = v
        obj["no_compatible"] = report.no_compatible
        obj["queries"] = [
            {
                "attr": q.attr,
                "time": str(q.time),
                "values": list(q.values),
                "probs": list(q.probs) if q.probs is not None else None,
            }
            for q in report.queries
        ]
        if args.timing:
            obj["wall_ms"] = report.wall_ms
        return [json.dumps(obj, sort_keys=True)]
    lines = ["# format 1", f"# command {args.command}"]
    for k, v in header:
        lines.append(f"# {k} {v!r}" if isinstance(v, float) else f"# {k} {v}")
    if report.no_compatible:
        lines.append("# no-compatible")
    if args.timing:
        lines.append(f"# wall-ms {report.wall_ms!r}")
    for q in report.queries:
        vals = ",".join(q.values)
        probs = ",".join(repr(p) for p in q.probs) if q.probs is not None else "-"
        lines.append(f"{q.key()}\t{vals}\t{probs}")
    return lines


def _cmd_validate(args) -> int:
    model = _load_model(args.model)
    scenario = _load_scenario(args.scenario) if args.scenario else None
    _check(model, scenario, model_path=args.model, scenario_path=args.scenario)
    lines = ["# format 1", "# command validate", "ok"]
    _emit(args, lines, {})
    return 0


def _cmd_aggregate(args) -> int:
    model = _load_model(args.model)
    _check(model, model_path=args.model)
    target = args.target
    attr = model.attribute(target)
    if args.from_rules:
        rules = tuple(r for r in model.rules if r.target == target and not r.aggregated)
    else:
        rules = model.effective_rules(target)
    srcs = [
        a.name
        for a in model.attrs
        if any(a.name in r.sources for r in rules)
    ]
    lines = [
        "# format 1",
        "# command aggregate",
        f"# model {args.model}",
        f"# target {target}",
        f"# sources {','.join(srcs) if srcs else '-'}",
    ]
    for combo in itertools.product(*(model.attribute(s).values for s in srcs)):
        by_src = dict(zip(srcs, combo))
        for tv in attr.values:
            entries = [
                r.table[tuple(by_src[s] for s in r.sources) + (tv,)] for r in rules
            ]
            net = aggregate(entries)
            if net.direction is Direction.STEADY:
                cell = "steady\t-\t-"
            else:
                word = "up" if net.direction is Direction.UP else "down"
                cell = f"{word}\t{_fmt_num(net.interval.lo)}\t{_fmt_num(net.interval.hi)}"
            row = list(combo) + [tv, cell]
            lines.append("\t".join(row))
    _emit(args, lines, {"inputs": {"model": _input_entry(args.model)}})
    return 0


def _cmd_simulate(args) -> int:
    model = _load_model(args.model)
    scenario = _load_scenario(args.scenario)
    _check(model, scenario, model_path=args.model, scenario_path=args.scenario)
    keys = record_keys(model, scenario)
    lines = [
        "# format 1",
        "# command simulate",
        f"# model {args.model}",
        f"# scenario {args.scenario}",
        f"# seed {args.seed}",
        f"# trials {args.trials}",
    ]
    for i in range(args.trials):
        trial = run_trial(model, scenario, args.seed, i, validate=False)
        for attr, time in keys:
            lines.append(f"{i}\t{attr}@{time}\t{trial.recorded[(attr, time)]}")
        labels = ",".join(l if l is not None else "-" for l in trial.labels)
        lines.append(f"{i}\tlabels\t{labels or '-'}")
    _emit(
        args,
        lines,
        {
            "inputs": {
                "model": _input_entry(args.model),
                "scenario": _input_entry(args.scenario),
            },
            "seed": args.seed,
            "trials": args.trials,
        },
    )
    return 0


def _cmd_infer(args) -> int:
    model = _load_model(args.model)
    scenario = _load_scenario(args.scenario)
    session, report = run_inference(
        model,
        scenario,
        args.trials,
        args.seed,
        policy=args.proposal,
        workers=args.workers,
    )
    if args.save_session:
        save_session(session, args.save_session)
    header = [
        ("model", args.model),
        ("scenario", args.scenario),
        ("seed", args.seed),
        ("trials", args.trials),
        ("proposal", args.proposal),
        ("ess", report.ess),
    ]
    lines = _report_lines(args, report, header)
    _emit(
        args,
        lines,
        {
            "inputs": {
                "model": _input_entry(args.model),
                "scenario": _input_entry(args.scenario),
            },
            "seed": args.seed,
            "trials": args.trials,
            "proposal": args.proposal,
            "workers": args.workers,
            "ess": report.ess,
            "wall_ms": report.wall_ms,
        },
    )
    return 0


def _cmd_exact(args) -> int:
    from .oracle import exact_posterior

    model = _load_model(args.model)
    scenario = _load_scenario(args.scenario)
    report = exact_posterior(model, scenario)
    header = [
        ("model", args.model),
        ("scenario", args.scenario),
        ("branches", report.n),
        ("error-bound", report.error_bound),
    ]
    lines = _report_lines(args, report, header)
    _emit(
        args,
        lines,
        {
            "inputs": {
                "model": _input_entry(args.model),
                "scenario": _input_entry(args.scenario),
            },
            "branches": report.n,
            "wall_ms": report.wall_ms,
        },
    )
    return 0


def _cmd_extend(args) -> int:
    session = load_session(args.session)
    fragment = _load_scenario(args.fragment)
    session2, report = extend(session, fragment, workers=args.workers)
    if args.save_session:
        save_session(session2, args.save_session)
    header = [
        ("session", args.session),
        ("fragment", args.fragment),
        ("seed", session2.seed),
        ("trials", session2.n),
        ("proposal", session2.policy),
        ("ess", report.ess),
    ]
    lines = _report_lines(args, report, header)
    _emit(
        args,
        lines,
        {
            "inputs": {
                "session": _input_entry(args.session),
                "fragment": _input_entry(args.fragment),
            },
            "seed": session2.seed,
            "trials": session2.n,
            "proposal": session2.policy,
            "workers": args.workers,
            "ess": report.ess,
            "wall_ms": report.wall_ms,
        },
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="endosim",
        description="Temporal reasoning over attribute models: simulate, weigh, and query.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common_output(sp, *, json_rows: bool = True):
        sp.add_argument("--manifest", metavar="PATH", help="write a run manifest JSON here")
        sp.add_argument("--timing", action="store_true", help="include wall time in the output")
        if json_rows:
            sp.add_argument("--json", action="store_true", help="emit one JSON object instead of TSV")

    sp = sub.add_parser("validate", help="parse and validate a model (and optional scenario)")
    sp.add_argument("model")
    sp.add_argument("scenario", nargs="?")
    sp.set_defaults(fn=_cmd_validate)

    sp = sub.add_parser("aggregate", help="print the net influence table for a target attribute")
    sp.add_argument("model")
    sp.add_argument("--target", required=True, help="attribute whose net influence to print")
    sp.add_argument(
        "--from-rules",
        action="store_true",
        help="combine the individual rules even when a declared aggregate exists",
    )
    common_output(sp, json_rows=False)
    sp.set_defaults(fn=_cmd_aggregate)

    sp = sub.add_parser("simulate", help="run independent trials and print recorded values")
    sp.add_argument("model")
    sp.add_argument("scenario")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--trials", type=int, default=1)
    common_output(sp, json_rows=False)
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("infer", help="estimate query posteriors by weighted sampling")
    sp.add_argument("model")
    sp.add_argument("scenario")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--trials", type=int, default=4096)
    sp.add_argument(
        "--proposal",
        choices=("conditional", "likelihood", "prior"),
        default="conditional",
    )
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--save-session", metavar="PATH", help="save the weighted trials here")
    common_output(sp)
    sp.set_defaults(fn=_cmd_infer)

    sp = sub.add_parser("exact", help="compute query posteriors exactly on feed-forward models")
    sp.add_argument("model")
    sp.add_argument("scenario")
    common_output(sp)
    sp.set_defaults(fn=_cmd_exact)

    sp = sub.add_parser("extend", help="continue a saved session with new events and queries")
    sp.add_argument("fragment", help="scenario fragment with the new timeline tail")
    sp.add_argument("--session", required=True, metavar="PATH")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--save-session", metavar="PATH", help="save the extended session here")
    common_output(sp)
    sp.set_defaults(fn=_cmd_extend)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CliError as e:
        print(str(e), file=sys.stderr)
        return e.code
    except EndosimError as e:
        print(str(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
