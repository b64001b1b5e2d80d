"""Reusable testbenches for the shipped designs.

Each factory returns a Testbench whose stimulus rules drive the design's
top-level methods; the same testbench runs unchanged against the
transactional interpreter and the netlist machine.
"""

from __future__ import annotations

import random

from .sim import Report, Testbench


def divider_tb(pairs=None, cycles: int = 40) -> Testbench:
    """Feed dividend/divisor pairs back to back and collect every cycle."""
    if pairs is None:
        pairs = [(100, 7), (255, 3), (8, 8), (17, 1), (0, 9), (254, 255)]
    state = {"i": 0, "got": []}

    def feeder(ctx):
        if ctx.fired("feed") is not None:
            state["i"] += 1
        if state["i"] < len(pairs):
            a, b = pairs[state["i"]]
            ctx.call("feed", a, b)

    def collector(ctx):
        got = ctx.fired("collect")
        if got is not None:
            state["got"].append(got[1])
        ctx.call("collect")

    def check(report: Report):
        want = [(a // b, a % b) for a, b in pairs]
        got = state["got"]
        assert len(got) == len(pairs), f"collected {len(got)} of {len(pairs)}"
        assert got == want, f"first bad result: {next((g, w) for g, w in zip(got, want) if g != w)}"
        return f"{len(got)} divisions correct"

    return Testbench("divider", [feeder, collector], cycles,
                     [("results", check)])


def prodcons_tb(values=(0x11, 0x22), cycles: int = 8) -> Testbench:
    def put(ctx):
        if ctx.cycle < len(values):
            ctx.call("put", values[ctx.cycle])

    def check(report: Report):
        fires = report.fires("cons")
        assert fires, "consumer never fired"
        return f"consumer fired at cycles {[e[0] for e in fires]}"

    return Testbench("prodcons", [put], cycles, [("consumed", check)])


def pipe_tb(seed: int = 1, n: int = 16, feed_p: float = 0.7,
            drain_p: float = 0.6, cycles: int = 150) -> Testbench:
    """Randomized feed and drain pressure; checks lossless in-order delivery."""
    rng = random.Random(seed)
    payload = [(seed + 13 * i) % 256 for i in range(n)]
    state = {"i": 0, "got": []}

    def feeder(ctx):
        if ctx.fired("feed") is not None:
            state["i"] += 1
        if state["i"] < len(payload) and rng.random() < feed_p:
            ctx.call("feed", payload[state["i"]])

    def drainer(ctx):
        got = ctx.fired("drain")
        if got is not None:
            state["got"].append(got[1][0])
        if rng.random() < drain_p:
            ctx.call("drain")

    def check(report: Report):
        want = [(x + 2) & 0xFF for x in payload]
        assert state["got"] == want[:len(state["got"])], "payload corrupted"
        assert len(state["got"]) == len(payload), \
            f"delivered {len(state['got'])} of {len(payload)}"
        return f"{len(payload)} payloads in order"

    return Testbench("pipe", [feeder, drainer], cycles, [("lossless", check)])


def kernel_tb(a=None, x=None, cycles: int = 48) -> Testbench:
    if a is None:
        a = [[(i * 7 + j * 3 + 1) % 256 for j in range(4)] for i in range(4)]
    if x is None:
        x = [5, 9, 2, 255]
    state = {"y": {}}

    def stim(ctx):
        c = ctx.cycle
        if c < 16:
            ctx.call("load_a", c, a[c // 4][c % 4])
        elif c < 20:
            ctx.call("load_x", c - 16, x[c - 16])
        elif c == 20:
            # entry method is `run` on the source IR, `run_` once compiled
            ctx.call("run")
            ctx.call("run_")
        else:
            ctx.call("finish")
            got = ctx.fired("read_y")
            if got is not None:
                state["y"][got[0][0]] = got[1][0]
            ctx.call("read_y", ctx.cycle % 4)

    def check(report: Report):
        want = {i: sum(a[i][j] * x[j] for j in range(4)) & 0xFFFF
                for i in range(4)}
        assert state["y"] == want, f"got {state['y']}, want {want}"
        return "matvec correct"

    return Testbench("kernel", [stim], cycles, [("matvec", check)])


def systolic_tb(a=None, b=None, cycles: int = 24) -> Testbench:
    """Weight-stationary 2x2 GEMM: load weights, stream two activation waves
    three cycles apart with the canonical skew, read each column result in
    its one-cycle window (base + 3i + j + 4)."""
    if a is None:
        a = [[3, 5], [2, 7]]
    if b is None:
        b = [[1, 4], [6, 2]]
    base = 4
    state = {"c": {}, "pending": []}

    def stim(ctx):
        c = ctx.cycle
        if c < 4:
            k, j = divmod(c, 2)
            ctx.call("load_w", k * 2 + j, b[k][j])
            return
        got = ctx.fired("read_y")
        if got is not None and state["pending"]:
            state["c"][state["pending"].pop(0)] = got[1][0]
        for i in range(2):
            for k in range(2):
                if c == base + 3 * i + k:
                    ctx.call(f"push_a{k}", a[i][k])
            for j in range(2):
                if c == base + 3 * i + j:
                    ctx.call(f"push_p{j}", 0)
                if c == base + 3 * i + j + 4:
                    state["pending"].append((i, j))
                    ctx.call("read_y", j)

    def check(report: Report):
        want = {(i, j): sum(a[i][k] * b[k][j] for k in range(2)) & 0xFFFF
                for i in range(2) for j in range(2)}
        assert state["c"] == want, f"got {state['c']}, want {want}"
        return "2x2 product correct"

    return Testbench("systolic", [stim], cycles, [("gemm", check)])


TESTBENCHES = {
    "divider": divider_tb,
    "prodcons": prodcons_tb,
    "pipe": pipe_tb,
    "kernel": kernel_tb,
    "systolic": systolic_tb,
}
