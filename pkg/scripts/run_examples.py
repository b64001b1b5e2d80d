#!/usr/bin/env python3
"""Compile every shipped design and run its testbench at both levels."""

import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from thtc import designs, pipeline, tbs  # noqa: E402
from thtc.delays import DelayModel  # noqa: E402
from thtc.sim import NetMachine, TxnSim, compare_traces, run  # noqa: E402

RUNS = [
    ("divider_temp", tbs.divider_tb),
    ("divider_nontemp", tbs.divider_tb),
    ("divider_mc_timed", tbs.divider_tb),
    ("divider_mc_untimed", tbs.divider_tb),
    ("prodcons_temp", tbs.prodcons_tb),
    ("two_stage_pipe", tbs.pipe_tb),
    ("matvec", tbs.kernel_tb),
    ("systolic", tbs.systolic_tb),
]


def main() -> int:
    failures = 0
    for name, tbf in RUNS:
        model = DelayModel()
        if name in designs.DESIGN_PERIODS:
            model = model.with_period(designs.DESIGN_PERIODS[name])
        design = designs.DESIGNS[name]()
        t0 = time.time()
        result = pipeline.compile_design(design, model)
        txn = run(tbf(), TxnSim(result.partitioned))
        net = run(tbf(), NetMachine(result.lowered, result.flat))
        div = compare_traces(txn, net)
        ok = txn.ok and net.ok and not div
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name:22s} "
              f"({time.time() - t0:5.2f}s, {result.flat.stats()['nodes']} nodes, "
              f"{len(div)} trace divergences)")
        for n, okc, msg in txn.assertions + net.assertions:
            tag = "ok " if okc else "FAIL"
            print(f"     [{tag}] {n}: {msg}")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
