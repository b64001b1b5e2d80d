#!/usr/bin/env python3
"""Regenerate the shipped .ctir files under designs/ from the builders."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from thtc import designs, text  # noqa: E402

EXPORTS = {
    "divider.ctir": "divider_temp",
    "divider_bug.ctir": "divider_bug",
    "divider_nontemp.ctir": "divider_nontemp",
    "divider_mc_timed.ctir": "divider_mc_timed",
    "divider_mc_untimed.ctir": "divider_mc_untimed",
    "prodcons_nontemp.ctir": "prodcons_nontemp",
    "prodcons_temp.ctir": "prodcons_temp",
    "false_static.ctir": "false_static",
    "false_static_dyn.ctir": "false_static_dyn",
    "two_stage_pipe.ctir": "two_stage_pipe",
    "cpu3.ctir": "micro3",
    "matvec.ctir": "matvec",
    "systolic.ctir": "systolic",
}

DIVIDER_DELAYS = """\
# delay model for the shipped divider: one restoring step per cycle
period 1.15
"""

KERNEL_DELAYS = """\
# delay model for the matrix-vector kernel
period 3.0
"""


def main() -> int:
    out = pathlib.Path(__file__).resolve().parents[1] / "designs"
    out.mkdir(exist_ok=True)
    for fname, key in EXPORTS.items():
        d = designs.DESIGNS[key]()
        (out / fname).write_text(text.print_design(d), encoding="utf-8")
        print(f"wrote designs/{fname}")
    (out / "divider.delays").write_text(DIVIDER_DELAYS, encoding="utf-8")
    (out / "matvec.delays").write_text(KERNEL_DELAYS, encoding="utf-8")
    print("wrote designs/divider.delays designs/matvec.delays")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
