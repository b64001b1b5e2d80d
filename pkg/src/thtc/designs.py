"""Desk-scale example designs built through the builder API.

The restoring divider comes in four behaviorally equivalent styles wrapped
in one common harness (feed / issue / commit / collect), a producer-consumer
pair demonstrates guard-message atomicity, and the remaining designs
exercise hybrid backpressure, intra-cycle conflict semantics, a nested-loop
kernel, and a weight-stationary systolic array.
"""

from __future__ import annotations

from typing import Optional

from .build import (
    DesignBuilder, ModuleBuilder, RuleCtx, Val, g_const, g_eq, g_port,
    g_read, interface,
)
from .ir import Design

DIV_STYLES = ("nontemp", "temp", "multicycle_timed", "multicycle_untimed")


# ---------------------------------------------------------------------------
# Restoring division pipeline
# ---------------------------------------------------------------------------
#
# One restoring step per stage: shift the working remainder left by the next
# dividend bit, subtract the divisor, keep the difference if it is
# nonnegative and record the quotient bit.  The remainder stays < divisor,
# so state packs into 4 width-sized fields.


def _div_init(rc: RuleCtx, a: Val, b: Val, w: int):
    zero = rc.const(0, w)
    return zero, zero, a, b      # rem, quo, dividend shifter, divisor


def _div_step(rc: RuleCtx, st, w: int):
    rem, quo, dd, dv = st
    top = dd[w - 1 : w - 1]
    r9 = rc.cat(rem, top)
    d9 = rc.zext(dv, w + 1)
    diff = r9 - d9
    ge = ~r9.lt(d9)
    rem2 = rc.mux(ge, diff[w - 1 : 0], r9[w - 1 : 0])
    quo2 = rc.cat(quo[w - 2 : 0], ge)
    dd2 = dd << rc.const(1, 1)
    return rem2, quo2, dd2, dv


def _pack(rc: RuleCtx, st) -> Val:
    rem, quo, dd, dv = st
    return rc.cat(rc.cat(rem, quo), rc.cat(dd, dv))


def _unpack(rc: RuleCtx, v: Val, w: int):
    return (v[4 * w - 1 : 3 * w], v[3 * w - 1 : 2 * w],
            v[2 * w - 1 : w], v[w - 1 : 0])


def _div_interface(w: int):
    return interface("div", methods=[
        ("start", [("a", w), ("b", w)], []),
        ("get", [], [("q", w), ("r", w)]),
    ])


def _build_div_nontemp(db: DesignBuilder, w: int) -> str:
    """Pipeline stages as plain rules coordinating through FIFO instances."""
    mb = db.new_module("div", _div_interface(w))
    stages = w - 2
    fifos = [mb.fifo(f"q{i + 1}", 4 * w, depth=1) for i in range(stages + 1)]

    def start(rc: RuleCtx):
        st = _div_init(rc, rc.arg("a"), rc.arg("b"), w)
        st = _div_step(rc, st, w)
        rc.call(fifos[0], "enq", _pack(rc, st))

    mb.add_method("start", start)

    for i in range(stages):
        def stage(rc: RuleCtx, i=i):
            st = _unpack(rc, rc.call(fifos[i], "deq"), w)
            st = _div_step(rc, st, w)
            rc.call(fifos[i + 1], "enq", _pack(rc, st))
        mb.add_always(f"stage{i + 1}", stage)

    def get(rc: RuleCtx):
        st = _unpack(rc, rc.call(fifos[stages], "deq"), w)
        rem, quo, _, _ = _div_step(rc, st, w)
        rc.ret(quo, rem)

    mb.add_method("get", get)
    mb.finish()
    return "div"


def _build_div_temp(db: DesignBuilder, w: int) -> str:
    """Pipeline stages chained by delay(1) temporal guards and channels."""
    mb = db.new_module("div", _div_interface(w))
    stages = w - 1

    def start(rc: RuleCtx):
        rc.channel("ch", 4 * w)
        st = _div_init(rc, rc.arg("a"), rc.arg("b"), w)
        st = _div_step(rc, st, w)
        rc.send("ch", _pack(rc, st))

    mb.add_method("start", start)

    prev = "start"
    for i in range(stages):
        def stage(rc: RuleCtx, prev=prev):
            rc.pred("p", prev, "delay", 1)
            rc.channel("ch", 4 * w)
            st = _unpack(rc, rc.recv("p", "ch"), w)
            st = _div_step(rc, st, w)
            rc.send("ch", _pack(rc, st))
        prev = mb.add_always(f"stage{i + 1}", stage)

    def get(rc: RuleCtx, prev=prev):
        rc.pred("p", prev, "delay", 0)
        st = rc.recv("p", "ch")
        _, quo, _, _ = _unpack(rc, st, w)
        rem = st[4 * w - 1 : 3 * w]
        rc.ret(quo, rem)

    mb.add_method("get", get)
    mb.finish()
    return "div"


def _build_div_multicycle(db: DesignBuilder, w: int, timed: bool) -> str:
    """The whole division as one multi-cycle method; the compiler splits it."""
    mb = db.new_module("div", interface("div", methods=[
        ("start", [("a", w), ("b", w)], [("q", w), ("r", w)]),
    ]))

    def body(rc: RuleCtx):
        if timed:
            rc.at("T")
        st = _div_init(rc, rc.arg("a"), rc.arg("b"), w)
        st = _div_step(rc, st, w)
        for i in range(1, w):
            if timed:
                rc.at(f"T+{i}")
            st = _div_step(rc, st, w)
        rem, quo, _, _ = st
        rc.ret(quo, rem)

    mb.add_multicycle("start", body, timed=timed, method="start")
    mb.finish()
    return "div"


def _build_div_top(db: DesignBuilder, style: str, w: int,
                   commit_delay: int) -> None:
    """Common harness: feed -> (dyndelay) -> issue -> ... -> commit ->
    (dyndelay) -> collect."""
    mb = db.new_module("top", interface("top", methods=[
        ("feed", [("a", w), ("b", w)], []),
        ("collect", [], [("q", w), ("r", w)]),
    ]))
    d = mb.sub("d", "div")

    def feed(rc: RuleCtx):
        rc.channel("dc", 2 * w)
        rc.send("dc", rc.cat(rc.arg("a"), rc.arg("b")))

    mb.add_method("feed", feed)

    if style in ("multicycle_timed", "multicycle_untimed"):
        def topm(rc: RuleCtx):
            rc.pred("dp", "feed", "dyndelay", 1)
            rc.channel("oc", 2 * w)
            ab = rc.recv("dp", "dc")
            res = rc.call(d, "start", ab[2 * w - 1 : w], ab[w - 1 : 0])
            rc.send("oc", rc.cat(res[0], res[1]))
        mb.add_multicycle("topm", topm)
        commit_rule = "topm"
    else:
        def issue(rc: RuleCtx):
            rc.pred("dp", "feed", "dyndelay", 1)
            ab = rc.recv("dp", "dc")
            rc.call(d, "start", ab[2 * w - 1 : w], ab[w - 1 : 0])
        mb.add_always("issue", issue)

        def commit(rc: RuleCtx):
            if style == "temp":
                rc.pred("ip", "issue", "delay", commit_delay)
            rc.channel("oc", 2 * w)
            q, r = rc.call(d, "get")
            rc.send("oc", rc.cat(q, r))
        mb.add_always("commit", commit)
        commit_rule = "commit"

    def collect(rc: RuleCtx):
        rc.pred("cp", commit_rule, "dyndelay", 0)
        v = rc.recv("cp", "oc")
        rc.ret(v[2 * w - 1 : w], v[w - 1 : 0])

    mb.add_method("collect", collect)
    mb.finish()


def build_divider(style: str = "temp", width: int = 8,
                  commit_delay: Optional[int] = None) -> Design:
    """Restoring division pipeline in one of four equivalent styles.

    `commit_delay` overrides the harness delay guard in the temp style; the
    correct value is width - 1 (the pipeline depth).
    """
    if style not in DIV_STYLES:
        raise ValueError(f"unknown divider style '{style}'")
    if width < 2:
        raise ValueError("divider width must be >= 2")
    db = DesignBuilder("top")
    if style == "nontemp":
        _build_div_nontemp(db, width)
    elif style == "temp":
        _build_div_temp(db, width)
    else:
        _build_div_multicycle(db, width, style == "multicycle_timed")
    delay = commit_delay if commit_delay is not None else width - 1
    _build_div_top(db, style, width, delay)
    return db.finish()


def build_divider_bug(width: int = 8) -> Design:
    """Temp-style divider whose commit guard is miscoordinated (delay 3
    against an inferred pipeline depth of width - 1)."""
    return build_divider("temp", width, commit_delay=3)


# ---------------------------------------------------------------------------
# Producer-consumer mismatch
# ---------------------------------------------------------------------------


def build_prodcons(temporal: bool) -> Design:
    """Producer-consumer pair.

    Non-temporal: the producer parks data in a register and raises a 2-deep
    shift chain; a second put overwrites the register before the consumer
    reads it (data loss).  Temporal: a delay(2) guard with a channel carries
    each datum with its firing token, so the consumer receives what was sent.
    """
    db = DesignBuilder("pc")
    mb = db.new_module("pc", interface("pc", methods=[("put", [("x", 8)], [])]))
    if not temporal:
        r = mb.reg("r", 8)
        sh = mb.shift("sh", 1, depth=2)

        def put(rc: RuleCtx):
            rc.call(r, "write", rc.arg("x"))
            rc.call(sh, "push", rc.const(1, 1))
        mb.add_method("put", put)

        def cons(rc: RuleCtx):
            rc.call(r, "read")
        mb.add_always("cons", cons,
                      guard=g_eq(g_read(sh, "out_valid"), g_const(1, 1)))
    else:
        def put(rc: RuleCtx):
            rc.channel("ch", 8)
            rc.send("ch", rc.arg("x"))
        mb.add_method("put", put)

        def cons(rc: RuleCtx):
            rc.pred("p", "put", "delay", 2)
            rc.recv("p", "ch")
        mb.add_always("cons", cons)
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# False-static pattern
# ---------------------------------------------------------------------------


def build_false_static(dyn: bool = False) -> Design:
    """A delay(2) guard alongside a register-read guard condition: when the
    register is low at expiry the message is silently dropped.  The dyndelay
    variant waits instead."""
    db = DesignBuilder("fs")
    mb = db.new_module("fs", interface("fs", methods=[
        ("arm", [("v", 1)], []),
        ("kick", [("x", 8)], []),
    ]))
    rdy = mb.reg("rdy", 1)
    sink = mb.reg("sink", 8)

    def arm(rc: RuleCtx):
        rc.call(rdy, "write", rc.arg("v"))
    mb.add_method("arm", arm)

    def kick(rc: RuleCtx):
        rc.channel("ch", 8)
        rc.send("ch", rc.arg("x"))
    mb.add_method("kick", kick)

    def act(rc: RuleCtx):
        rc.pred("p", "kick", "dyndelay" if dyn else "delay", 2)
        rc.call(sink, "write", rc.recv("p", "ch"))
    mb.add_always("act", act, guard=g_eq(g_read(rdy, "read"), g_const(1, 1)))
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# Two-region elastic pipeline
# ---------------------------------------------------------------------------


def build_two_stage_pipe() -> Design:
    """Two latency-sensitive regions joined by dyndelay edges; each region
    increments the payload once.  Used for randomized backpressure tests."""
    db = DesignBuilder("pipe")
    mb = db.new_module("pipe", interface("pipe", methods=[
        ("feed", [("x", 8)], []),
        ("drain", [], [("y", 8)]),
    ]))

    def feed(rc: RuleCtx):
        rc.channel("c", 8)
        rc.send("c", rc.arg("x"))
    mb.add_method("feed", feed)

    def a1(rc: RuleCtx):
        rc.pred("f", "feed", "dyndelay", 1)
        rc.channel("ca", 8)
        rc.send("ca", rc.recv("f", "c") + rc.const(1, 8))
    mb.add_always("a1", a1)

    def a2(rc: RuleCtx):
        rc.pred("p", "a1", "delay", 1)
        rc.channel("cb", 8)
        rc.send("cb", rc.recv("p", "ca"))
    mb.add_always("a2", a2)

    def b1(rc: RuleCtx):
        rc.pred("p", "a2", "dyndelay", 1)
        rc.channel("cc", 8)
        rc.send("cc", rc.recv("p", "cb") + rc.const(1, 8))
    mb.add_always("b1", b1)

    def b2(rc: RuleCtx):
        rc.pred("p", "b1", "delay", 1)
        rc.channel("co", 8)
        rc.send("co", rc.recv("p", "cc"))
    mb.add_always("b2", b2)

    def drain(rc: RuleCtx):
        rc.pred("p", "b2", "dyndelay", 1)
        rc.ret(rc.recv("p", "co"))
    mb.add_method("drain", drain)
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# Three-rule FIFO micro-design (flush blocks decode/fetch)
# ---------------------------------------------------------------------------


def build_micro3() -> Design:
    """One FIFO, three always rules.  Explicit precedences put Flush first;
    a firing Flush then blocks both Decode (deq) and Fetch (enq) through
    the deq < enq < flush method precedence chain."""
    db = DesignBuilder("cpu3")
    mb = db.new_module("cpu3", interface("cpu3", ports=[
        ("gf", "in", 1), ("gd", "in", 1), ("ge", "in", 1), ("din", "in", 8),
    ]))
    q = mb.fifo("q", 8, depth=2)

    def flush(rc: RuleCtx):
        rc.call(q, "flush")
    mb.add_always("Flush", flush, guard=g_eq(g_port("gf"), g_const(1, 1)))

    def decode(rc: RuleCtx):
        rc.call(q, "deq")
    mb.add_always("Decode", decode, guard=g_eq(g_port("gd"), g_const(1, 1)))

    def fetch(rc: RuleCtx):
        rc.call(q, "enq", rc.port("din"))
    mb.add_always("Fetch", fetch, guard=g_eq(g_port("ge"), g_const(1, 1)))

    mb.add_prec("Flush", "Decode")
    mb.add_prec("Flush", "Fetch")
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# Nested-loop kernel: 4x4 matrix-vector product
# ---------------------------------------------------------------------------


def build_nested_loop_kernel(n: int = 4) -> Design:
    """Matrix-vector product with the fused loop nest written as a single
    untimed multi-cycle rule; scheduling turns it into a one-hot FSM."""
    db = DesignBuilder("mv")
    mb = db.new_module("mv", interface("mv", methods=[
        ("load_a", [("ai", 4), ("av", 8)], []),
        ("load_x", [("xi", 2), ("xv", 8)], []),
        ("run", [], []),
        ("read_y", [("yi", 2)], [("yv", 16)]),
        ("status", [], [("d", 1)]),
    ]))
    a = [mb.reg(f"a{k}", 8) for k in range(n * n)]
    x = [mb.reg(f"x{j}", 8) for j in range(n)]
    y = [mb.reg(f"y{i}", 16) for i in range(n)]
    done = mb.reg("done", 1)

    def demux_write(rc: RuleCtx, regs, sel: Val, value: Val, idx_width: int):
        for k, reg in enumerate(regs):
            cur = rc.call(reg, "read")
            hit = sel.eq(rc.const(k, idx_width))
            rc.call(reg, "write", rc.mux(hit, value, cur))

    mb.add_method("load_a", lambda rc: demux_write(rc, a, rc.arg("ai"), rc.arg("av"), 4))
    mb.add_method("load_x", lambda rc: demux_write(rc, x, rc.arg("xi"), rc.arg("xv"), 2))

    def run(rc: RuleCtx):
        for i in range(n):
            acc = rc.const(0, 16)
            for j in range(n):
                av = rc.call(a[n * i + j], "read")
                xv = rc.call(x[j], "read")
                acc = acc + (av * xv)
            rc.call(y[i], "write", acc)
        rc.call(done, "write", rc.const(1, 1))
    mb.add_multicycle("run", run, method="run")

    def read_y(rc: RuleCtx):
        out = rc.call(y[0], "read")
        for i in range(1, n):
            hit = rc.arg("yi").eq(rc.const(i, 2))
            out = rc.mux(hit, rc.call(y[i], "read"), out)
        rc.ret(out)
    mb.add_method("read_y", read_y)

    def status(rc: RuleCtx):
        rc.ret(rc.call(done, "read"))
    mb.add_method("status", status)
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# Weight-stationary systolic array
# ---------------------------------------------------------------------------


def build_systolic(n: int = 2, mul_stages: int = 1) -> Design:
    """n x n weight-stationary array.  Each processing element is a timed
    multi-cycle rule: at T it receives an activation from the left and a
    partial sum from above and accumulates; at T+1 it forwards both, which
    is what staggers the wavefront.  Interior elements hang off their
    neighbors with eagerdelay(1) guards anchored at the neighbor's start.
    """
    if mul_stages not in (1, 2):
        raise ValueError("mul_stages must be 1 or 2")
    db = DesignBuilder("sa")
    methods = [("load_w", [("wi", 4), ("wv", 8)], []),
               ("read_y", [("ci", 2)], [("cv", 16)])]
    for k in range(n):
        methods.append((f"push_a{k}", [(f"av{k}", 8)], []))
    for j in range(n):
        methods.append((f"push_p{j}", [(f"pv{j}", 16)], []))
    mb = db.new_module("sa", interface("sa", methods=methods))

    w = [[mb.reg(f"w{k}{j}", 8) for j in range(n)] for k in range(n)]
    y = [mb.reg(f"y{j}", 16) for j in range(n)]

    def load_w(rc: RuleCtx):
        sel, value = rc.arg("wi"), rc.arg("wv")
        for k in range(n):
            for j in range(n):
                cur = rc.call(w[k][j], "read")
                hit = sel.eq(rc.const(k * n + j, 4))
                rc.call(w[k][j], "write", rc.mux(hit, value, cur))
    mb.add_method("load_w", load_w)

    for k in range(n):
        def push_a(rc: RuleCtx, k=k):
            rc.channel("ao", 8)
            rc.send("ao", rc.arg(f"av{k}"))
        mb.add_method(f"push_a{k}", push_a)
    for j in range(n):
        def push_p(rc: RuleCtx, j=j):
            rc.channel("po", 16)
            rc.send("po", rc.arg(f"pv{j}"))
        mb.add_method(f"push_p{j}", push_p)

    for k in range(n):
        for j in range(n):
            def pe(rc: RuleCtx, k=k, j=j):
                if j == 0:
                    rc.pred("l", f"push_a{k}", "delay", 1)
                else:
                    rc.pred("l", f"pe{k}{j - 1}", "eagerdelay", 1)
                if k == 0:
                    rc.pred("u", f"push_p{j}", "delay", 1)
                else:
                    rc.pred("u", f"pe{k - 1}{j}", "eagerdelay", 1)
                rc.channel("ao", 8)
                rc.channel("po", 16)
                rc.at("T")
                av = rc.recv("l", "ao")
                pv = rc.recv("u", "po")
                wv = rc.call(w[k][j], "read")
                if mul_stages == 2:
                    rc.at("T", "T+1")
                prod = av * wv
                rc.at("T+1")
                psum = pv + prod
                rc.send("ao", av)
                rc.send("po", psum)
            mb.add_multicycle(f"pe{k}{j}", pe, timed=True)

    for j in range(n):
        def col(rc: RuleCtx, j=j):
            rc.pred("b", f"pe{n - 1}{j}", "eagerdelay", 1)
            rc.call(y[j], "write", rc.recv("b", "po"))
        mb.add_always(f"col{j}", col)

    def read_y(rc: RuleCtx):
        out = rc.call(y[0], "read")
        for j in range(1, n):
            hit = rc.arg("ci").eq(rc.const(j, 2))
            out = rc.mux(hit, rc.call(y[j], "read"), out)
        rc.ret(out)
    mb.add_method("read_y", read_y)
    mb.finish()
    return db.finish()


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

# periods that give the shipped schedules (the untimed divider needs one
# restoring step per cycle; the kernel packs whole MACs)
DESIGN_PERIODS = {
    "divider_mc_untimed": 1.15,
    "divider_mc_timed": 1.15,
    "matvec": 3.0,
}

DESIGNS = {
    "divider_nontemp": lambda: build_divider("nontemp"),
    "divider_temp": lambda: build_divider("temp"),
    "divider_mc_timed": lambda: build_divider("multicycle_timed"),
    "divider_mc_untimed": lambda: build_divider("multicycle_untimed"),
    "divider_bug": build_divider_bug,
    "prodcons_nontemp": lambda: build_prodcons(False),
    "prodcons_temp": lambda: build_prodcons(True),
    "false_static": lambda: build_false_static(False),
    "false_static_dyn": lambda: build_false_static(True),
    "two_stage_pipe": build_two_stage_pipe,
    "micro3": build_micro3,
    "matvec": build_nested_loop_kernel,
    "systolic": lambda: build_systolic(2),
}
