"""Minimal value-change-dump writer.

One VCD timestep pair per clock cycle: values are dumped on the rising
edge (#2t) and the clock falls at #2t+1.
"""

from __future__ import annotations

from typing import Iterable, Optional, TextIO


def _ident(n: int) -> str:
    chars = "".join(chr(c) for c in range(33, 127))
    out = ""
    n += 1
    while n:
        n, r = divmod(n, len(chars))
        out += chars[r]
    return out


class VcdWriter:
    def __init__(self, out: TextIO, signals: Iterable[tuple[str, int]],
                 timescale: str = "1ns"):
        self.out = out
        self.signals = list(signals)
        self.ids = {name: _ident(i) for i, (name, _) in enumerate(self.signals)}
        self.widths = {name: w for name, w in self.signals}
        self.prev: dict[str, Optional[int]] = {name: None for name, _ in self.signals}
        out.write(f"$timescale {timescale} $end\n")
        out.write("$scope module top $end\n")
        out.write("$var wire 1 ! clk $end\n")
        for name, w in self.signals:
            safe = name.replace(".", "_")
            out.write(f"$var wire {w} {self.ids[name]} {safe} $end\n")
        out.write("$upscope $end\n$enddefinitions $end\n")

    def dump(self, cycle: int, values: dict[str, int]) -> None:
        self.out.write(f"#{2 * cycle}\n1!\n")
        for name, w in self.signals:
            v = values.get(name, 0)
            if self.prev[name] == v:
                continue
            self.prev[name] = v
            if w == 1:
                self.out.write(f"{v & 1}{self.ids[name]}\n")
            else:
                self.out.write(f"b{v:b} {self.ids[name]}\n")
        self.out.write(f"#{2 * cycle + 1}\n0!\n")
