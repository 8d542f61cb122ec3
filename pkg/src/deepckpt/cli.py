"""``deepckpt`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
scenario or corrupt container.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import aggregate, bench
from .ckpt_engine import Strategy
from .errors import DeepCkptError, Infeasible, NotAContainer, ScenarioError, SpecError
from .recovery import FailureKind

EXIT_OK, EXIT_USAGE, EXIT_BAD = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepckpt", description="Multi-level checkpoint simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write metrics CSV")
    run.add_argument("--scenario", required=True, help=f"named ({', '.join(bench.SCENARIOS)}) or a file")
    run.add_argument("--config", action="append", default=[], help="machine/workload config, repeatable")
    run.add_argument("--strategy", choices=[s.value for s in Strategy])
    run.add_argument("--nodes", type=int)
    run.add_argument("--cp-interval", type=int)
    run.add_argument("--fail-at", type=int)
    run.add_argument("--fail-kind", choices=[k.value for k in FailureKind])
    run.add_argument("--repetitions", type=int)
    run.add_argument("--out", help="metrics CSV path (default: stdout)")
    run.add_argument("--events", help="event log CSV path")

    cal = sub.add_parser("calibrate", help="solve a calibration target")
    cal.add_argument("target", help="e.g. scr-overhead=8%%, nam-xor-saving=[50,65]%%")
    cal.add_argument("--config", action="append", default=[])
    cal.add_argument("--scenario", help="scenario the target applies to")
    cal.add_argument("--out", help="write the solved workload overrides as a config file")

    agg = sub.add_parser("agg", help="aggregated checkpoint containers")
    asub = agg.add_subparsers(dest="agg_cmd", required=True, parser_class=_Parser)
    ap = asub.add_parser("pack", help="pack rank files into a container")
    ap.add_argument("path")
    ap.add_argument("inputs", nargs="+")
    ap.add_argument("--align", type=int, default=aggregate.DEFAULT_ALIGN)
    au = asub.add_parser("unpack", help="extract rank%%05d.bin files")
    au.add_argument("path")
    au.add_argument("outdir")
    ai = asub.add_parser("inspect", help="print the container table")
    ai.add_argument("path")
    av = asub.add_parser("verify", help="check header, table, padding and every chunk crc")
    av.add_argument("path")
    return p


def _cmd_run(args) -> int:
    s, spec = bench.load_scenario(args.scenario, args.config)
    changes = {}
    if args.strategy:
        changes["strategy"] = Strategy.parse(args.strategy)
    if args.nodes is not None:
        changes["nodes"] = args.nodes
    if args.cp_interval is not None:
        changes["cp_interval"] = args.cp_interval
    if args.fail_at is not None:
        changes["fail_at"] = args.fail_at
    if args.fail_kind:
        changes["fail_kind"] = FailureKind.parse(args.fail_kind)
    if args.repetitions is not None:
        changes["repetitions"] = args.repetitions
    s = replace(s, **changes)
    table = bench.run_scenario(s, spec)
    text = table.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.events:
        table.events_csv(args.events)
    if table.infeasible:
        print("recovery infeasible: no usable checkpoint for the failed nodes", file=sys.stderr)
        return EXIT_BAD
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    spec = bench.load_scenario(args.scenario or "xpic-scr", args.config)[1]
    scenario = bench.load_scenario(args.scenario, args.config)[0] if args.scenario else None
    result = bench.calibrate(args.target, spec, scenario)
    print(result.summary())
    if args.out:
        Path(args.out).write_text(result.config_text(), encoding="utf-8")
    return EXIT_BAD if result.in_band is False else EXIT_OK


def _cmd_agg(args) -> int:
    if args.agg_cmd == "pack":
        payloads = [Path(f).read_bytes() for f in args.inputs]
        entries = aggregate.pack(args.path, payloads, args.align)
        print(f"packed {len(entries)} ranks into {args.path}")
        return EXIT_OK
    if args.agg_cmd == "unpack":
        files = aggregate.unpack(args.path, args.outdir)
        print(f"unpacked {len(files)} ranks into {args.outdir}")
        return EXIT_OK
    report = aggregate.inspect(args.path)
    if args.agg_cmd == "inspect":
        print(report.summary())
    else:
        print(f"{args.path}: {report.status}")
        for c in report.chunks:
            if c.reason:
                print(f"  rank {c.rank}: {c.reason}")
    return EXIT_OK if report.valid else EXIT_BAD


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "calibrate":
            return _cmd_calibrate(args)
        return _cmd_agg(args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_BAD
    except NotAContainer as exc:
        print(f"corrupt: {exc}", file=sys.stderr)
        return EXIT_BAD
    except (ScenarioError, SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeepCkptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD


if __name__ == "__main__":
    sys.exit(main())
