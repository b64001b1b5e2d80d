"""Command-line driver.

Subcommands: check (validate + temporal analyses), schedule (slot tables),
compile (full pipeline to Verilog with optional pass dumps), sim (run a
registered testbench at either level), graph (DOT of the temporal rule
graph).  Exit codes: 0 clean or warnings only, 1 design errors, 2 usage or
I/O errors.  Diagnostics go to stderr, data to stdout.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import graph as G
from .delays import DelayModel, DelayModelError, load_delay_config
from .ir import has_errors, validate
from .pipeline import CompileError, compile_design, synthesize_temporal
from .text import ParseError, parse, print_design

DELAY_ENV = "THTC_DELAYS"


def _load_design(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        print(f"error: cannot read '{path}': {e.strerror}", file=sys.stderr)
        raise SystemExit(2)
    try:
        return parse(text, path)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        raise SystemExit(1)


def _model(args) -> DelayModel:
    model = DelayModel()
    cfg = getattr(args, "delays", None) or os.environ.get(DELAY_ENV)
    if cfg:
        try:
            model = load_delay_config(cfg)
        except (OSError, DelayModelError) as e:
            print(f"error: delay config: {e}", file=sys.stderr)
            raise SystemExit(2)
    if getattr(args, "period", None) is not None:
        model = model.with_period(args.period)
    return model


def cmd_check(args) -> int:
    design = _load_design(args.file)
    diags = validate(design)
    for d in diags:
        print(d.render(), file=sys.stderr)
    if has_errors(diags):
        return 1
    try:
        part, _, _, _ = synthesize_temporal(design, _model(args))
        analysis = G.analyze(part)
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for d in analysis.diagnostics:
        print(d.render(), file=sys.stderr)
    if analysis.errors:
        return 1
    regions = len(analysis.timing.regions)
    print(f"ok: {len(design.modules)} modules, {regions} regions, "
          f"{len(analysis.warnings)} warnings")
    return 0


def cmd_schedule(args) -> int:
    design = _load_design(args.file)
    model = _model(args)
    try:
        _, schedules, _, _ = synthesize_temporal(design, model)
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if not schedules:
        print("no multi-cycle rules to schedule")
        return 0
    for (mod, rid), sched in schedules.items():
        print(f"rule {mod}.{rid} (period {model.period} ns):")
        for var, off, idxs in sched.slot_table():
            lab = var if off == 0 else f"{var}+{off}"
            print(f"  {lab:>8}: steps {', '.join(str(i) for i in idxs)}")
    return 0


def cmd_compile(args) -> int:
    design = _load_design(args.file)
    try:
        result = compile_design(design, _model(args))
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for d in result.diagnostics:
        print(d.render(), file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    vpath = os.path.join(args.out, f"{design.top}.v")
    with open(vpath, "w", encoding="utf-8") as f:
        f.write(result.verilog)
    print(f"wrote {vpath}")
    if args.dump_passes:
        for name, d in (("partitioned", result.partitioned),
                        ("lowered", result.lowered)):
            p = os.path.join(args.out, f"{design.top}.{name}.ctir")
            with open(p, "w", encoding="utf-8") as f:
                f.write(print_design(d))
            print(f"wrote {p}")
        p = os.path.join(args.out, f"{design.top}.graph.dot")
        with open(p, "w", encoding="utf-8") as f:
            f.write(G.to_dot(result.analysis.pruned, result.analysis.timing))
        print(f"wrote {p}")
    return 0


def cmd_sim(args) -> int:
    from .sim import NetMachine, TxnSim, run
    from .tbs import TESTBENCHES
    design = _load_design(args.file)
    if args.tb not in TESTBENCHES:
        print(f"error: unknown testbench '{args.tb}' "
              f"(have: {', '.join(sorted(TESTBENCHES))})", file=sys.stderr)
        return 2
    tb = TESTBENCHES[args.tb]()
    if args.cycles is not None:
        tb.max_cycles = args.cycles
    try:
        if args.level == "netlist":
            result = compile_design(design, _model(args))
            machine = NetMachine(result.lowered, result.flat)
        else:
            machine = TxnSim(design)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    vcd_file = None
    if args.vcd:
        from .vcd import VcdWriter
        vcd_file = open(args.vcd, "w", encoding="utf-8")
        machine.vcd = VcdWriter(vcd_file, machine.vcd_signals())
    report = run(tb, machine)
    if vcd_file is not None:
        vcd_file.close()
        print(f"wrote {args.vcd}")
    print(report.render())
    if args.events:
        for e in report.events:
            print(f"  {e[0]:>5} {e[1]:<7} {e[2]} {e[3]}")
    return 0 if report.ok else 1


def cmd_graph(args) -> int:
    design = _load_design(args.file)
    try:
        part, _, _, _ = synthesize_temporal(design, _model(args))
        g = G.build_graph(part)
        timing = G.infer_timing(g)
    except (CompileError, G.GraphError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    dot = G.to_dot(g, timing)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(dot)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(dot)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="thtc",
        description="Temporal hardware transaction compiler and simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("check", help="validate and run the temporal analyses")
    p.add_argument("file")
    p.add_argument("--period", type=float)
    p.add_argument("--delays", help="delay model config file")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("schedule", help="print multi-cycle slot tables")
    p.add_argument("file")
    p.add_argument("--period", type=float)
    p.add_argument("--delays")
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("compile", help="full pipeline to Verilog")
    p.add_argument("file")
    p.add_argument("-o", "--out", default="out")
    p.add_argument("--period", type=float)
    p.add_argument("--delays")
    p.add_argument("--dump-passes", action="store_true")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("sim", help="run a registered testbench")
    p.add_argument("file")
    p.add_argument("--tb", required=True)
    p.add_argument("--cycles", type=int)
    p.add_argument("--vcd")
    p.add_argument("--level", choices=["txn", "netlist"], default="txn")
    p.add_argument("--events", action="store_true")
    p.add_argument("--period", type=float)
    p.add_argument("--delays")
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("graph", help="emit the temporal rule graph as DOT")
    p.add_argument("file")
    p.add_argument("-o", "--out")
    p.add_argument("--period", type=float)
    p.add_argument("--delays")
    p.set_defaults(fn=cmd_graph)

    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
