"""Propagation-delay model for retiming.

Per-op delay is base + slope * width nanoseconds, where width is the widest
net the op touches.  The default table is configuration, not ground truth;
designs that care ship their own config.

Config file format, one entry per line:

    period 2.0
    op add base 0.3 slope 0.03
    call 0.1

Comments start with '#' or '//'.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


DEFAULT_TABLE: dict[str, tuple[float, float]] = {
    "const": (0.05, 0.0),
    "add": (0.3, 0.03),
    "sub": (0.3, 0.03),
    "mul": (1.0, 0.05),
    "and": (0.2, 0.0),
    "or": (0.2, 0.0),
    "xor": (0.2, 0.0),
    "not": (0.2, 0.0),
    "shl": (0.3, 0.0),
    "shr": (0.3, 0.0),
    "eq": (0.3, 0.03),
    "lt": (0.3, 0.03),
    "mux": (0.25, 0.0),
    "slice": (0.05, 0.0),
    "concat": (0.05, 0.0),
}

DEFAULT_PERIOD = 2.0
DEFAULT_CALL_DELAY = 0.1


class DelayModelError(Exception):
    pass


@dataclass(frozen=True)
class DelayModel:
    period: float = DEFAULT_PERIOD
    table: dict = field(default_factory=lambda: dict(DEFAULT_TABLE))
    call_delay: float = DEFAULT_CALL_DELAY

    def delta(self, op: str, width: int) -> float:
        if op not in self.table:
            raise DelayModelError(f"no delay entry for op '{op}'")
        base, slope = self.table[op]
        d = base + slope * width
        if d <= 0:
            raise DelayModelError(f"op '{op}' has non-positive delay")
        return d

    def with_period(self, period: float) -> "DelayModel":
        return replace(self, period=period)


def parse_delay_config(text: str) -> DelayModel:
    period = DEFAULT_PERIOD
    call = DEFAULT_CALL_DELAY
    table = dict(DEFAULT_TABLE)
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#")[0].split("//")[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "period" and len(parts) == 2:
                period = float(parts[1])
            elif parts[0] == "call" and len(parts) == 2:
                call = float(parts[1])
            elif (parts[0] == "op" and len(parts) == 6
                    and parts[2] == "base" and parts[4] == "slope"):
                table[parts[1]] = (float(parts[3]), float(parts[5]))
            else:
                raise ValueError("bad syntax")
        except ValueError as e:
            raise DelayModelError(f"delay config line {ln}: {raw!r}: {e}")
    if period <= 0:
        raise DelayModelError("period must be positive")
    return DelayModel(period, table, call)


def load_delay_config(path: str) -> DelayModel:
    with open(path, "r", encoding="utf-8") as f:
        return parse_delay_config(f.read())
