"""Cycle-accurate executable semantics.

Two machines share one harness: the transactional interpreter executes the
IR directly (including temporal guards, channels, and multi-cycle rules),
and the netlist machine evaluates the synthesized structural form.  Both
produce the same event stream shape, so `compare_traces` is the oracle for
every lowering pass.

Transactional execution per cycle:
  1. stall flags per latency-sensitive region from the committed state,
  2. testbench stimuli queue method calls and port pokes,
  3. rules evaluated in one global order (submodules before parents, each
     module in its scheduler order); each firing attempt executes the whole
     body atomically against a journal and commits only if every call and
     every send can proceed,
  4. end of cycle: delay tokens age and expire (with their messages),
     shift chains advance, buffered register writes land.

Guard-message atomicity is literal here: a message lives inside its guard
token, so an expired token drops its message in the same cycle, and a
dyndelay token keeps it until the guarded rule finally fires.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import graph as G
from . import prims
from .ir import (
    CallStep, Design, ExprStep, FifoPrim, GConst, GOp, GPort, GRead,
    GuardExpr, Module, RecvStep, RegPrim, Rule, SendStep, ShiftPrim,
    Submodule, WirePrim, eval_op, expr_width, has_errors, validate,
)
from .synth import total_order

DEFAULT_CHANNEL_DEPTH = 2

Event = tuple  # (cycle, kind, name, data)


class SimError(Exception):
    pass


class Blocked(Exception):
    """A rule attempt cannot complete this cycle."""

    def __init__(self, reason: str = ""):
        self.reason = reason
        super().__init__(reason)


@dataclass
class Report:
    top: str
    level: str
    cycles: int
    events: list[Event]
    assertions: list[tuple[str, bool, str]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.assertions)

    def fires(self, name: str) -> list[Event]:
        return [e for e in self.events if e[1] == "fire" and e[2] == name]

    def render(self) -> str:
        lines = [f"report top={self.top} level={self.level} cycles={self.cycles}"]
        for name, ok, msg in self.assertions:
            lines.append(f"  {'PASS' if ok else 'FAIL'} {name}: {msg}")
        return "\n".join(lines)

    def summary(self) -> dict:
        return {
            "top": self.top, "level": self.level, "cycles": self.cycles,
            "events": len(self.events),
            "assertions": [[n, ok, m] for n, ok, m in self.assertions],
            "meta": self.meta,
        }


def trace_events(report: Report) -> list[Event]:
    """Events both machines can produce: rule fires and port pokes."""
    return [e for e in report.events if e[1] in ("fire", "poke")]


def compare_traces(a: Report, b: Report, limit: int = 10) -> list[dict]:
    """Cycle-aligned comparison of fire/poke events; empty = equivalent."""
    def by_cycle(r: Report) -> dict[int, list[Event]]:
        out: dict[int, list[Event]] = {}
        for e in trace_events(r):
            out.setdefault(e[0], []).append(e[1:])
        return out

    ca, cb = by_cycle(a), by_cycle(b)
    divergences: list[dict] = []
    for cyc in range(max(a.cycles, b.cycles)):
        ea = sorted(ca.get(cyc, []))
        eb = sorted(cb.get(cyc, []))
        if ea != eb:
            divergences.append({
                "cycle": cyc,
                "only_a": [e for e in ea if e not in eb],
                "only_b": [e for e in eb if e not in ea],
            })
            if len(divergences) >= limit:
                break
    return divergences


# ---------------------------------------------------------------------------
# Testbench
# ---------------------------------------------------------------------------


@dataclass
class Testbench:
    """Stimuli are rules: callables run once per cycle, in order, that peek
    and poke the top module through method calls."""
    name: str
    stimuli: list[Callable[["TbCtx"], None]]
    max_cycles: int
    checks: list[tuple[str, Callable[[Report], Optional[str]]]] = field(
        default_factory=list)


class TbCtx:
    def __init__(self, machine, cycle: int):
        self._m = machine
        self.cycle = cycle

    def call(self, method: str, *args: int) -> None:
        self._m.request_call(method, tuple(args))

    def poke(self, port: str, value: int) -> None:
        self._m.poke(port, value)

    def fired(self, method: str):
        """(args, results) if the method fired last cycle, else None."""
        return self._m.fired_last.get(method)

    def result(self, method: str):
        """Most recent fire results, any cycle."""
        return self._m.last_results.get(method)

    def ready(self, method: str) -> bool:
        return self._m.ready(method)


def run(tb: Testbench, machine) -> Report:
    for cycle in range(tb.max_cycles):
        ctx = TbCtx(machine, cycle)
        for stim in tb.stimuli:
            stim(ctx)
        machine.step()
    report = Report(machine.top_name, machine.level, tb.max_cycles,
                    machine.events)
    for name, check in tb.checks:
        try:
            msg = check(report)
            report.assertions.append((name, True, msg or "ok"))
        except AssertionError as e:
            report.assertions.append((name, False, str(e)))
    return report


# ---------------------------------------------------------------------------
# Transactional machine
# ---------------------------------------------------------------------------


class _Token:
    __slots__ = ("age", "msgs")

    def __init__(self, age: int = 0, msgs: Optional[dict] = None):
        self.age = age
        self.msgs = msgs if msgs is not None else {}


@dataclass
class _EdgeD:
    """One temporal edge, keyed on the successor's predecessor declaration."""
    key: tuple[str, str, str]       # (path, succ rule id, alias)
    kind: Optional[str]             # delay | dyndelay | None (channel only)
    cycles: int
    anchor: str                     # fire | start | finish
    depth: int                      # dyndelay capacity
    region: Optional[int] = None    # region of both endpoints (delay/None)
    src_region: Optional[int] = None


class _Act:
    __slots__ = ("rule_key", "vars", "done", "values", "slip", "out_tokens",
                 "out_msgs", "pending", "caller", "pred_msgs", "started",
                 "complete", "root_var")

    def __init__(self, rule_key, root_var):
        self.rule_key = rule_key
        self.root_var = root_var
        self.vars: dict[str, int] = {}
        self.done: set[int] = set()
        self.values: dict[str, int] = {}
        self.slip = 0
        self.out_tokens: dict[tuple, _Token] = {}
        self.out_msgs: dict[str, int] = {}
        self.pending: dict[int, tuple] = {}
        self.caller = None
        self.pred_msgs: dict[str, dict] = {}
        self.started = -1
        self.complete = False


class _Journal:
    __slots__ = ("fifos", "consumed", "new_tokens", "reg_writes", "shift_push",
                 "wires", "calls", "fired", "events", "acts_new")

    def __init__(self):
        self.fifos: dict = {}
        self.consumed: list = []
        self.new_tokens: list = []
        self.reg_writes: dict = {}
        self.shift_push: dict = {}
        self.wires: dict = {}
        self.calls: dict = {}
        self.fired: set = set()
        self.events: list = []
        self.acts_new: list = []


class TxnSim:
    """Direct interpreter over the (possibly still temporal) IR."""

    level = "transactional"

    def __init__(self, design: Design):
        diags = validate(design)
        if has_errors(diags):
            raise SimError("design does not validate: " +
                           "; ".join(d.render() for d in diags
                                     if d.severity == "error"))
        self.design = design
        self.top_name = design.top
        self.paths = G.instance_paths(design, design.top)
        self.has_multicycle = any(r.is_multicycle for _, m in self.paths
                                  for r in m.rules)
        mod_at = {path: mod for path, mod in self.paths}
        from .synth import global_order
        self.sequence: list[tuple[str, Module, Rule]] = []
        for path, rid in global_order(design):
            mod = mod_at[path]
            self.sequence.append((path, mod, mod.rule(rid)))
        self.rule_at = {}
        for path, mod in self.paths:
            for r in mod.rules:
                self.rule_at[(path, r.id)] = (mod, r)

        self._build_edges()
        self._build_regions()
        self._init_state()

        self.events: list[Event] = []
        self.cycle = 0
        self.fired_last: dict[str, tuple] = {}
        self.last_results: dict[str, tuple] = {}
        self._tb_calls: dict[str, tuple] = {}
        self._fired: set = set()
        self._calls: dict[str, list] = {}
        self._reg_writes: dict = {}
        self._shift_push: dict = {}
        self._stalled: set[int] = set()
        self.vcd = None

    # -- setup ---------------------------------------------------------------

    def _build_edges(self) -> None:
        self.out_edges: dict[tuple[str, str], list[_EdgeD]] = {}
        self.pred_edges: dict[tuple[str, str], list[_EdgeD]] = {}
        self.edges: dict[tuple, _EdgeD] = {}
        self.recv_aliases: dict[tuple[str, str], set[str]] = {}
        all_rules = [(path, mod, r) for path, mod in self.paths
                     for r in mod.rules]
        for path, mod, rule in all_rules:
            aliases = {s.pred for s in rule.steps if isinstance(s, RecvStep)}
            self.recv_aliases[(path, rule.id)] = aliases
            for p in rule.preds:
                pr = mod.rule(p.pred)
                if p.kind == "eagerdelay":
                    kind, anchor = "delay", "start"
                elif p.kind is None:
                    kind, anchor = None, "fire" if not pr.is_multicycle else "finish"
                else:
                    kind = p.kind
                    anchor = "finish" if pr.is_multicycle else "fire"
                depth = DEFAULT_CHANNEL_DEPTH
                depths = [pr.channel(s.channel).depth
                          for s in rule.steps
                          if isinstance(s, RecvStep) and s.pred == p.alias
                          and pr.channel(s.channel) is not None
                          and pr.channel(s.channel).depth is not None]
                if depths:
                    depth = min(depths)
                e = _EdgeD((path, rule.id, p.alias), kind, p.cycles, anchor, depth)
                self.edges[e.key] = e
                self.out_edges.setdefault((path, p.pred), []).append(e)
                self.pred_edges.setdefault((path, rule.id), []).append(e)

    def _build_regions(self) -> None:
        self.region_of: dict[tuple[str, str], int] = {}
        self.plans: list = []
        self.chan_dist: dict[tuple, int] = {}
        if self.has_multicycle:
            for e in self.edges.values():
                if e.kind is None:
                    raise SimError("channel-only predecessors require a fully "
                                   "partitioned design")
            return
        g = G.build_graph(self.design)
        timing = G.infer_timing(g)
        if timing.diagnostics:
            raise SimError("temporal errors: " +
                           "; ".join(d.render() for d in timing.diagnostics))
        self.region_of = dict(timing.region_of)
        self.plans = G.stall_plan(timing, g)
        for c in g.chan_edges:
            d = timing.offset(c.dst) - timing.offset(c.src)
            if d < 0:
                raise SimError(f"channel from {G.vname(c.src)} to "
                               f"{G.vname(c.dst)} goes backward in time")
            path, rid = c.dst
            self.chan_dist[(path, rid, c.alias)] = d
        for key, e in self.edges.items():
            path, rid, alias = key
            dst = (path, rid)
            src = (path, self.rule_at[dst][1].pred_decl(alias).pred)
            e.src_region = self.region_of.get(src)
            if e.kind is None:
                e.cycles = self.chan_dist[key]
            if e.kind in ("delay", None):
                e.region = self.region_of.get(dst)

    def _init_state(self) -> None:
        self.regs: dict[tuple, int] = {}
        self.fifos: dict[tuple, list] = {}
        self.shifts: dict[tuple, list] = {}
        self.wires: dict[tuple, tuple] = {}
        self.tokens: dict[tuple, list] = {k: [] for k in self.edges}
        self.ports: dict[str, int] = {}
        self.acts: dict[tuple, list] = {}
        for path, mod in self.paths:
            for inst in mod.instances:
                key = (path, inst.name)
                k = inst.kind
                if isinstance(k, RegPrim):
                    self.regs[key] = k.init
                elif isinstance(k, FifoPrim):
                    self.fifos[key] = []
                elif isinstance(k, ShiftPrim):
                    self.shifts[key] = [(0, 0)] * k.depth
                elif isinstance(k, WirePrim):
                    self.wires[key] = (0, 0)
            for r in mod.rules:
                if r.is_multicycle:
                    self.acts[(path, r.id)] = []
        top = self.design.module(self.design.top)
        for p in top.interface.ports:
            if p.direction == "in":
                self.ports[p.name] = 0

    # -- testbench interface ---------------------------------------------------

    def request_call(self, method: str, args: tuple) -> None:
        self._tb_calls[method] = args

    def poke(self, port: str, value: int) -> None:
        if self.ports.get(port) != value:
            self.events.append((self.cycle, "poke", port, (value,)))
        self.ports[port] = value

    def ready(self, method: str) -> bool:
        top = self.design.module(self.design.top)
        rule = top.method_rule(method)
        if rule is None:
            return False
        if rule.is_multicycle:
            return True
        region = self.region_of.get(("", rule.id))
        if region in self._stall_now():
            return False
        j = _Journal()
        try:
            toks = self._pred_tokens(j, "", rule)
            sig = top.interface.method(method)
            args = {p: 0 for p in sig.args}
            self._exec_body(j, "", top, rule, args, toks, None)
        except Blocked:
            return False
        return True

    # -- cycle ------------------------------------------------------------------

    def _stall_now(self) -> set[int]:
        stalled: set[int] = set()
        for plan in self.plans:
            for w in plan.watches:
                e = self.edges.get(w.key)
                if e is None:
                    continue
                toks = self.tokens[e.key]
                ready_n = sum(1 for t in toks if t.age >= e.cycles)
                if w.kind == "recv_empty" and ready_n == 0:
                    stalled.add(plan.region.id)
                    break
                if w.kind == "send_full" and ready_n >= e.depth:
                    stalled.add(plan.region.id)
                    break
        return stalled

    def step(self) -> None:
        self._stalled = self._stall_now()
        self._fired = set()
        self._calls = {}
        self._reg_writes = {}
        self._shift_push = {}
        fired_methods: dict[str, tuple] = {}

        for path, mod, rule in self.sequence:
            key = (path, rule.id)
            if self.region_of.get(key) in self._stalled:
                continue
            if rule.is_multicycle:
                for act in list(self.acts[key]):
                    self._advance_act(path, mod, rule, act)
                if rule.method is None:
                    self._try_start_mc(key, mod, rule, (), None)
                elif path == "" and rule.method in self._tb_calls:
                    args = self._tb_calls[rule.method]
                    if self._try_start_mc(key, mod, rule, args, None):
                        fired_methods[rule.method] = (args, ())
                continue
            if rule.method is not None:
                if path == "" and rule.method in self._tb_calls:
                    args = self._tb_calls[rule.method]
                    res = self._try_method(path, mod, rule, args)
                    if res is not None:
                        fired_methods[rule.method] = (args, res)
                continue
            self._try_always(path, mod, rule)

        self._end_cycle(fired_methods)

    def _end_cycle(self, fired_methods: dict) -> None:
        for m, ar in fired_methods.items():
            self.last_results[m] = ar[1]
        self.fired_last = fired_methods
        self._tb_calls = {}

        for key, toks in self.tokens.items():
            e = self.edges[key]
            if e.kind == "dyndelay":
                frozen = e.src_region in self._stalled
                for t in toks:
                    if t.age < e.cycles and frozen:
                        continue
                    t.age += 1
            else:
                if e.region is not None and e.region in self._stalled:
                    continue
                kept = []
                for t in toks:
                    if t.age >= e.cycles:
                        if e.kind == "delay":
                            self.events.append(
                                (self.cycle, "expire",
                                 f"{key[0]}.{key[1]}:{key[2]}" if key[0]
                                 else f"{key[1]}:{key[2]}",
                                 tuple(sorted(t.msgs.items()))))
                    else:
                        t.age += 1
                        kept.append(t)
                self.tokens[key] = kept

        for (path, name), st in self.shifts.items():
            mod = G.module_at(self.design, self.design.top, path)
            inst = mod.instance(name)
            if inst.stall_region is not None and inst.stall_region in self._stalled:
                continue
            push = self._shift_push.get((path, name), (0, 0))
            st.insert(0, push)
            st.pop()

        for key, v in self._reg_writes.items():
            self.regs[key] = v
        for key in self.wires:
            self.wires[key] = (0, 0)

        if self.vcd is not None:
            self._dump_vcd()
        self.cycle += 1

    # -- rule attempts -----------------------------------------------------------

    def _try_always(self, path: str, mod: Module, rule: Rule) -> bool:
        j = _Journal()
        try:
            if self._guard(j, path, mod, rule.guard) != 1:
                return False
            toks = self._pred_tokens(j, path, rule)
            self._exec_body(j, path, mod, rule, {}, toks, None)
        except Blocked:
            return False
        j.fired.add((path, rule.id))
        j.events.append((self.cycle, "fire", _dot(path, rule.id), ()))
        self._commit(j)
        return True

    def _try_method(self, path: str, mod: Module, rule: Rule,
                    args: tuple) -> Optional[tuple]:
        j = _Journal()
        try:
            res = self._call_method(j, path, mod, rule, args, top_level=True)
        except Blocked:
            return None
        self._commit(j)
        return res

    def _call_method(self, j: _Journal, path: str, mod: Module, rule: Rule,
                     args: tuple, top_level: bool = False) -> tuple:
        key = (path, rule.id)
        if key in self._fired or key in j.fired:
            raise Blocked(f"method {rule.id} already fired this cycle")
        if self.region_of.get(key) in self._stalled:
            raise Blocked("region stalled")
        if self._guard(j, path, mod, rule.guard) != 1:
            raise Blocked("guard false")
        toks = self._pred_tokens(j, path, rule)
        sig = mod.interface.method(rule.method)
        argmap = dict(zip(sig.args, args))
        results = self._exec_body(j, path, mod, rule, argmap, toks, None)
        j.fired.add(key)
        data = tuple(args) + tuple(results) if (top_level and path == "") else ()
        j.events.append((self.cycle, "fire", _dot(path, rule.id), data))
        return results

    def _pred_tokens(self, j: _Journal, path: str, rule: Rule) -> dict:
        out: dict[str, _Token] = {}
        consumed = {id(t) for _, t in j.consumed}
        for p in rule.preds:
            key = (path, rule.id, p.alias)
            e = self.edges[key]
            toks = [t for t in j_tokens_view(self, j, key)
                    if id(t) not in consumed]
            if e.kind == "delay":
                tok = next((t for t in toks if t.age == e.cycles), None)
                if tok is None:
                    raise Blocked(f"delay({e.cycles}) guard not ready ({p.alias})")
                j.consumed.append((key, tok))
                out[p.alias] = tok
            elif e.kind == "dyndelay":
                if not toks or toks[0].age < e.cycles:
                    raise Blocked(f"dyndelay({e.cycles}) guard not ready ({p.alias})")
                j.consumed.append((key, toks[0]))
                out[p.alias] = toks[0]
            else:
                # channel-only: required just for the data, at its distance
                if p.alias in self.recv_aliases[(path, rule.id)]:
                    tok = next((t for t in toks if t.age == e.cycles), None)
                    if tok is None:
                        raise Blocked(f"channel data not ready ({p.alias})")
                    j.consumed.append((key, tok))
                    out[p.alias] = tok
        return out

    def _guard(self, j: _Journal, path: str, mod: Module, g: GuardExpr) -> int:
        if isinstance(g, GConst):
            return g.value
        if isinstance(g, GPort):
            return self.ports.get(g.name, 0) if path == "" else 0
        if isinstance(g, GRead):
            return self._pure_read(j, path, mod, g.inst, g.method)
        ws = tuple(self._gwidth(path, mod, a) for a in g.args)
        vs = tuple(self._guard(j, path, mod, a) for a in g.args)
        return eval_op(g.op, vs, ws, g.params)

    def _gwidth(self, path: str, mod: Module, g: GuardExpr) -> int:
        if isinstance(g, GConst):
            return g.width
        if isinstance(g, GPort):
            return mod.interface.port(g.name).width
        if isinstance(g, GRead):
            inst = mod.instance(g.inst)
            from .ir import method_widths
            mw = method_widths(self.design, mod, inst, g.method, prims)
            return mw[1][0]
        ws = tuple(self._gwidth(path, mod, a) for a in g.args)
        return expr_width(g.op, ws, g.params)

    def _pure_read(self, j: _Journal, path: str, mod: Module,
                   inst_name: str, method: str) -> int:
        inst = mod.instance(inst_name)
        key = (path, inst_name)
        k = inst.kind
        if isinstance(k, RegPrim):
            return self.regs[key]
        if isinstance(k, FifoPrim):
            items = j.fifos.get(key, self.fifos[key])
            if method == "can_deq":
                return 1 if items else 0
            if method == "can_enq":
                return 1 if len(items) < k.depth else 0
            if method == "first":
                return items[0] if items else 0
        if isinstance(k, ShiftPrim):
            v, d = self.shifts[key][-1]
            return v if method == "out_valid" else d
        if isinstance(k, WirePrim):
            v, d = j.wires.get(key, self.wires[key])
            return v if method == "read_valid" else d
        if isinstance(k, Submodule):
            sub = self.design.module(k.module)
            rule = sub.method_rule(method)
            spath = _join(path, inst_name)
            widths = self._rule_widths(spath, sub, rule)
            env: dict[str, int] = {}
            for s in rule.steps:
                if isinstance(s, ExprStep):
                    ws = tuple(widths[a] for a in s.args)
                    env[s.out] = eval_op(s.op, tuple(env[a] for a in s.args),
                                         ws, s.params)
                elif isinstance(s, CallStep):
                    env[s.outs[0]] = self._pure_read(j, spath, sub, s.inst, s.method)
            return env[rule.results[0]] if rule.results else 0
        raise SimError(f"cannot read {inst_name}.{method}")

    # -- body execution ------------------------------------------------------------

    def _exec_body(self, j: _Journal, path: str, mod: Module, rule: Rule,
                   argmap: dict, pred_toks: dict, act: Optional[_Act]) -> tuple:
        env: dict[str, int] = dict(argmap)
        if path == "":
            for p in mod.interface.ports:
                if p.direction == "in":
                    env.setdefault(p.name, self.ports.get(p.name, 0))
        else:
            for p in mod.interface.ports:
                if p.direction == "in":
                    env.setdefault(p.name, 0)
        widths = self._rule_widths(path, mod, rule)
        fire_tokens: dict[tuple, _Token] = {}
        if act is None:
            for e in self.out_edges.get((path, rule.id), []):
                if e.anchor == "fire":
                    t = _Token(0)
                    fire_tokens[e.key] = t
                    j.new_tokens.append((e.key, t))
                    if e.kind == "dyndelay" and e.cycles <= 1:
                        live = [x for x in j_tokens_view(self, j, e.key)
                                if x.age >= e.cycles]
                        if len(live) >= e.depth:
                            raise Blocked(f"channel to {e.key[1]} full")

        for idx, s in enumerate(rule.steps):
            if isinstance(s, ExprStep):
                ws = tuple(widths[a] for a in s.args)
                env[s.out] = eval_op(s.op, tuple(env[a] for a in s.args),
                                     ws, s.params)
            elif isinstance(s, CallStep):
                outs = self._do_call(j, path, mod, rule, s,
                                     tuple(env[a] for a in s.args))
                for o, v in zip(s.outs, outs):
                    env[o] = v
            elif isinstance(s, SendStep):
                v = env[s.value]
                if act is not None:
                    act.out_msgs[s.channel] = v
                    for t in act.out_tokens.values():
                        t.msgs[s.channel] = v
                else:
                    for t in fire_tokens.values():
                        t.msgs[s.channel] = v
            elif isinstance(s, RecvStep):
                if act is not None and s.pred in act.pred_msgs:
                    msgs = act.pred_msgs[s.pred]
                else:
                    tok = pred_toks.get(s.pred)
                    if tok is None:
                        raise Blocked(f"no token for recv {s.pred}.{s.channel}")
                    msgs = tok.msgs
                if s.channel not in msgs:
                    raise Blocked(f"message {s.pred}.{s.channel} not present")
                env[s.out] = msgs[s.channel]
                j.events.append((self.cycle, "recv",
                                 f"{_dot(path, rule.id)}<{s.pred}.{s.channel}",
                                 (msgs[s.channel],)))
        if act is not None:
            act.values.update(env)
        return tuple(env[v] for v in rule.results) if rule.results else ()

    def _rule_widths(self, path: str, mod: Module, rule: Rule) -> dict:
        cache = getattr(self, "_wcache", None)
        if cache is None:
            cache = self._wcache = {}
        key = (path, rule.id)
        if key in cache:
            return cache[key]
        from .ir import method_widths, _ambient_values
        env = _ambient_values(mod, rule)
        for s in rule.steps:
            if isinstance(s, ExprStep):
                env[s.out] = expr_width(s.op, tuple(env[a] for a in s.args),
                                        s.params)
            elif isinstance(s, CallStep):
                inst = mod.instance(s.inst)
                mw = method_widths(self.design, mod, inst, s.method, prims)
                for o, w in zip(s.outs, mw[1]):
                    env[o] = w
            elif isinstance(s, RecvStep):
                pd = rule.pred_decl(s.pred)
                ch = mod.rule(pd.pred).channel(s.channel)
                env[s.out] = ch.width
        cache[key] = env
        return env

    def _do_call(self, j: _Journal, path: str, mod: Module, rule: Rule,
                 s: CallStep, args: tuple) -> tuple:
        inst = mod.instance(s.inst)
        gkey = (path, s.inst)
        k = inst.kind
        if isinstance(k, Submodule):
            sub = self.design.module(k.module)
            target = sub.method_rule(s.method)
            spath = _join(path, s.inst)
            if target.is_multicycle:
                raise Blocked("direct multicycle calls handled by activations")
            return self._call_method(j, spath, sub, target, args)
        self._check_conflict(j, gkey, s.method, k)
        self._record_call(j, gkey, s.method)
        res = self._prim_effect(j, gkey, k, s.method, args)
        j.events.append((self.cycle, "call",
                         f"{_dot(*gkey)}.{s.method}", tuple(args) + tuple(res)))
        return res

    def _check_conflict(self, j: _Journal, gkey, method: str, kind) -> None:
        prev = self._calls.get(gkey, []) + j.calls.get(gkey, [])
        for m0 in prev:
            rel = prims.prim_relation(kind, m0, method)
            if rel == prims.CONFLICT:
                raise Blocked(f"{gkey[1]}.{method} conflicts with earlier {m0}")
            if rel == prims.SEQ_AFTER:
                raise Blocked(f"{gkey[1]}.{m0} must follow {method}: "
                              "precedence violation")

    def _record_call(self, j: _Journal, gkey, method: str) -> None:
        j.calls.setdefault(gkey, []).append(method)

    def _prim_effect(self, j: _Journal, gkey, kind, method: str,
                     args: tuple) -> tuple:
        if isinstance(kind, RegPrim):
            if method == "read":
                return (self.regs[gkey],)
            if gkey in self._reg_writes or gkey in j.reg_writes:
                raise Blocked("register written twice")
            j.reg_writes[gkey] = args[0]
            return ()
        if isinstance(kind, FifoPrim):
            items = j.fifos.get(gkey)
            if items is None:
                items = list(self.fifos[gkey])
                j.fifos[gkey] = items
            if method == "enq":
                if len(items) >= kind.depth:
                    raise Blocked("fifo full")
                items.append(args[0])
                return ()
            if method == "deq":
                if not items:
                    raise Blocked("fifo empty")
                return (items.pop(0),)
            if method == "first":
                if not items:
                    raise Blocked("fifo empty")
                return (items[0],)
            if method == "flush":
                items.clear()
                return ()
            if method == "can_enq":
                return (1 if len(items) < kind.depth else 0,)
            if method == "can_deq":
                return (1 if items else 0,)
        if isinstance(kind, ShiftPrim):
            if method == "push":
                j.shift_push[gkey] = (1, args[0])
                return ()
            v, d = self.shifts[gkey][-1]
            return (v,) if method == "out_valid" else (d,)
        if isinstance(kind, WirePrim):
            if method == "drive":
                j.wires[gkey] = (1, args[0])
                return ()
            v, d = j.wires.get(gkey, self.wires[gkey])
            return (v,) if method == "read_valid" else (d,)
        raise SimError(f"bad primitive call {gkey}.{method}")

    def _commit(self, j: _Journal) -> None:
        for key, items in j.fifos.items():
            self.fifos[key] = items
        for key, tok in j.consumed:
            self.tokens[key].remove(tok)
        for key, tok in j.new_tokens:
            self.tokens[key].append(tok)
        self._reg_writes.update(j.reg_writes)
        self._shift_push.update(j.shift_push)
        for key, v in j.wires.items():
            self.wires[key] = v
        for gkey, ms in j.calls.items():
            self._calls.setdefault(gkey, []).extend(ms)
        self._fired.update(j.fired)
        self.events.extend(j.events)
        for key, act in j.acts_new:
            self.acts[key].append(act)

    # -- multicycle ---------------------------------------------------------------

    def _step_multicycle(self, path: str, mod: Module, rule: Rule) -> None:
        key = (path, rule.id)
        for act in list(self.acts[key]):
            self._advance_act(path, mod, rule, act)
            if act.complete:
                self.acts[key].remove(act)
        if rule.method is None:
            self._try_start_mc(key, mod, rule, (), None)

    def _try_start_mc(self, key, mod: Module, rule: Rule, args: tuple,
                      caller) -> bool:
        path = key[0]
        j = _Journal()
        try:
            if self._guard(j, path, mod, rule.guard) != 1:
                return False
            toks = self._pred_tokens(j, path, rule)
        except Blocked:
            return False
        act = _Act(key, self._root_var(rule))
        act.caller = caller
        act.started = self.cycle
        if rule.timed:
            act.vars[act.root_var] = self.cycle
        for alias, tok in toks.items():
            act.pred_msgs[alias] = tok.msgs
        sig = mod.interface.method(rule.method) if rule.method else None
        if sig:
            act.values.update(dict(zip(sig.args, args)))
        for e in self.out_edges.get(key, []):
            if e.anchor == "start":
                t = _Token(0, {})
                act.out_tokens[e.key] = t
                j.new_tokens.append((e.key, t))
        due = self._due_steps(rule, act)
        try:
            self._exec_steps(j, path, mod, rule, act, due)
        except Blocked:
            return False
        act.done.update(due)
        if not act.complete:
            j.acts_new.append((key, act))
        j.fired.add(key)
        data = tuple(args) if (path == "" and rule.method) else ()
        j.events.append((self.cycle, "fire", _dot(path, rule.id), data))
        self._commit(j)
        self._finish_if_done(path, mod, rule, act)
        if not rule.timed and not act.complete:
            # dataflow rules keep executing whatever becomes ready this cycle
            self._advance_act(path, mod, rule, act)
        return True

    def _root_var(self, rule: Rule) -> str:
        for s in rule.steps:
            if s.start is not None:
                return s.start.var
        return "G"

    def _due_steps(self, rule: Rule, act: _Act) -> list[int]:
        out = []
        if rule.timed:
            for i, s in enumerate(rule.steps):
                if i in act.done:
                    continue
                lab = s.start
                if lab.var in act.vars and \
                        act.vars[lab.var] + lab.offset + act.slip == self.cycle:
                    out.append(i)
        else:
            mut_blocked = False
            for i, s in enumerate(rule.steps):
                if i in act.done:
                    continue
                stateful = isinstance(s, (CallStep, SendStep))
                if stateful and mut_blocked:
                    continue
                if not self._deps_ready(rule, act, i):
                    if stateful:
                        mut_blocked = True
                    continue
                out.append(i)
        return out

    def _deps_ready(self, rule: Rule, act: _Act, idx: int) -> bool:
        s = rule.steps[idx]
        if isinstance(s, RecvStep):
            return True
        args = s.args if not isinstance(s, SendStep) else (s.value,)
        for a in args:
            if a not in act.values:
                return False
        if isinstance(s, (CallStep, SendStep)):
            # state-mutating steps keep body order
            for i, st in enumerate(rule.steps[:idx]):
                if i not in act.done and isinstance(st, (CallStep, SendStep)):
                    return False
        return True

    def _advance_act(self, path: str, mod: Module, rule: Rule, act: _Act) -> None:
        while True:
            due = self._due_steps(rule, act)
            if not due:
                break
            j = _Journal()
            try:
                self._exec_steps(j, path, mod, rule, act, due)
            except Blocked:
                if rule.timed:
                    act.slip += 1
                break
            act.done.update(due)
            j.events.append((self.cycle, "step", _dot(path, rule.id),
                             (self.cycle - act.started,)))
            self._commit(j)
            if rule.timed:
                break
        self._finish_if_done(path, mod, rule, act)

    def _exec_steps(self, j: _Journal, path: str, mod: Module, rule: Rule,
                    act: _Act, idxs: list[int]) -> None:
        """Execute one atomic step group; activation state mutates only on
        success (values are staged, token messages land at commit)."""
        widths = self._rule_widths(path, mod, rule)
        env = dict(act.values)
        sends: list[tuple[str, int]] = []
        for i in idxs:
            s = rule.steps[i]
            if isinstance(s, ExprStep):
                ws = tuple(widths[a] for a in s.args)
                env[s.out] = eval_op(s.op, tuple(env[a] for a in s.args),
                                     ws, s.params)
            elif isinstance(s, CallStep):
                inst = mod.instance(s.inst)
                if isinstance(inst.kind, Submodule):
                    sub = self.design.module(inst.kind.module)
                    target = sub.method_rule(s.method)
                    spath = _join(path, s.inst)
                    if target is not None and target.is_multicycle:
                        self._start_sub_mc(j, spath, sub, target, act, s,
                                           tuple(env[a] for a in s.args))
                        continue
                outs = self._do_call(j, path, mod, rule, s,
                                     tuple(env[a] for a in s.args))
                for o, v in zip(s.outs, outs):
                    env[o] = v
            elif isinstance(s, SendStep):
                sends.append((s.channel, env[s.value]))
            elif isinstance(s, RecvStep):
                msgs = act.pred_msgs.get(s.pred)
                if msgs is None or s.channel not in msgs:
                    raise Blocked("message not present")
                env[s.out] = msgs[s.channel]
                j.events.append((self.cycle, "recv",
                                 f"{_dot(path, rule.id)}<{s.pred}.{s.channel}",
                                 (msgs[s.channel],)))
        act.values = env
        for ch, v in sends:
            act.out_msgs[ch] = v
            for t in act.out_tokens.values():
                t.msgs[ch] = v

    def _start_sub_mc(self, j: _Journal, spath: str, sub: Module, target: Rule,
                      caller_act: _Act, s: CallStep, args: tuple) -> None:
        key = (spath, target.id)
        if key in self._fired or key in j.fired:
            raise Blocked("callee multicycle already started this cycle")
        if self._guard(j, spath, sub, target.guard) != 1:
            raise Blocked("callee guard false")
        toks = self._pred_tokens(j, spath, target)
        act = _Act(key, self._root_var(target))
        act.caller = (caller_act, s.outs)
        act.started = self.cycle
        if target.timed:
            act.vars[act.root_var] = self.cycle
        for alias, tok in toks.items():
            act.pred_msgs[alias] = tok.msgs
        sig = sub.interface.method(target.method)
        act.values.update(dict(zip(sig.args, args)))
        for e in self.out_edges.get(key, []):
            if e.anchor == "start":
                t = _Token(0, {})
                act.out_tokens[e.key] = t
                j.new_tokens.append((e.key, t))
        due = self._due_steps(target, act)
        self._exec_steps(j, spath, sub, target, act, due)
        act.done.update(due)
        if not act.complete:
            j.acts_new.append((key, act))
        j.fired.add(key)
        j.events.append((self.cycle, "fire", _dot(spath, target.id), ()))
        self._finish_if_done(spath, sub, target, act)

    def _finish_if_done(self, path: str, mod: Module, rule: Rule,
                        act: _Act) -> None:
        if act.complete or len(act.done) != len(rule.steps):
            return
        act.complete = True
        results = tuple(act.values[v] for v in rule.results) if rule.results else ()
        j = _Journal()
        for e in self.out_edges.get((path, rule.id), []):
            if e.anchor == "finish":
                t = _Token(0, dict(act.out_msgs))
                j.new_tokens.append((e.key, t))
        j.events.append((self.cycle, "done", _dot(path, rule.id), results))
        self._commit(j)
        key = (path, rule.id)
        if act in self.acts.get(key, []):
            self.acts[key].remove(act)
        if act.caller is not None:
            caller_act, outs = act.caller
            for o, v in zip(outs, results):
                caller_act.values[o] = v
        elif path == "" and rule.method is not None:
            self.last_results[rule.method] = results

    # -- vcd ---------------------------------------------------------------------

    def vcd_signals(self) -> list[tuple[str, int]]:
        sigs: list[tuple[str, int]] = []
        for (path, name), _ in sorted(self.regs.items()):
            mod = G.module_at(self.design, self.design.top, path)
            sigs.append((_dot(path, name), mod.instance(name).kind.width))
        for (path, name) in sorted(self.fifos):
            sigs.append((_dot(path, name) + ".count", 8))
        for path, mod, rule in self.sequence:
            sigs.append(("wf." + _dot(path, rule.id), 1))
        return sigs

    def _dump_vcd(self) -> None:
        vals: dict[str, int] = {}
        for (path, name), v in self.regs.items():
            vals[_dot(path, name)] = v
        for (path, name), items in self.fifos.items():
            vals[_dot(path, name) + ".count"] = len(items)
        for path, mod, rule in self.sequence:
            vals["wf." + _dot(path, rule.id)] = 1 if (path, rule.id) in self._fired else 0
        self.vcd.dump(self.cycle, vals)


def j_tokens_view(sim: TxnSim, j: _Journal, key) -> list:
    base = sim.tokens[key]
    extra = [t for k, t in j.new_tokens if k == key]
    return base + extra


def _dot(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _join(path: str, inst: str) -> str:
    return f"{path}.{inst}" if path else inst


# ---------------------------------------------------------------------------
# Netlist machine
# ---------------------------------------------------------------------------


class NetMachine:
    """Adapter giving the flattened-netlist evaluator the same testbench
    surface and event stream as the transactional machine."""

    level = "netlist"

    def __init__(self, design: Design, flat) -> None:
        from .netsim import NetSim
        self.design = design
        self.top_name = design.top
        self.sim = NetSim(flat)
        self.flat = flat
        top = design.module(design.top)
        self.methods = list(top.interface.methods)
        self.events: list[Event] = []
        self.fired_last: dict[str, tuple] = {}
        self.last_results: dict[str, tuple] = {}
        self._pending: dict[str, tuple] = {}
        self.cycle = 0
        self.vcd = None

    def request_call(self, method: str, args: tuple) -> None:
        self._pending[method] = args

    def poke(self, port: str, value: int) -> None:
        if self.sim.inputs.get(port) != value:
            self.events.append((self.cycle, "poke", port, (value,)))
        self.sim.inputs[port] = value

    def ready(self, method: str) -> bool:
        saved = dict(self.sim.inputs)
        for m in self.methods:
            self.sim.inputs[f"{m.name}_en"] = 0
        self.sim.eval_comb()
        rdy = self.sim.out(f"{method}_rdy")
        self.sim.inputs = saved
        return rdy == 1

    def step(self) -> None:
        top = self.design.module(self.design.top)
        for m in self.methods:
            en = 1 if m.name in self._pending else 0
            self.sim.inputs[f"{m.name}_en"] = en
            if en:
                for pname, v in zip(m.args, self._pending[m.name]):
                    self.sim.inputs[pname] = v
        self.sim.eval_comb()
        fired: dict[str, tuple] = {}
        for name, net in self.flat.rule_wf.items():
            if self.sim.values[net] != 1:
                continue
            data = ()
            mrule = next((m for m in self.methods
                          if top.method_rule(m.name) is not None
                          and top.method_rule(m.name).id == name), None)
            if mrule is not None and mrule.name in self._pending:
                args = self._pending[mrule.name]
                res = tuple(self.sim.out(f"{mrule.name}_res_{rp}")
                            for rp in mrule.results)
                data = tuple(args) + res
                fired[mrule.name] = (args, res)
            self.events.append((self.cycle, "fire", name, data))
        if self.vcd is not None:
            self._dump_vcd()
        self.sim.commit()
        for m, ar in fired.items():
            self.last_results[m] = ar[1]
        self.fired_last = fired
        self._pending = {}
        for m in self.methods:
            self.sim.inputs[f"{m.name}_en"] = 0
        self.cycle += 1

    def vcd_signals(self) -> list[tuple[str, int]]:
        sigs = [(r.name, r.width) for r in self.flat.regs]
        sigs += [(f.name + ".count", 8) for f in self.flat.fifos]
        sigs += [("wf." + n, 1) for n in self.flat.rule_wf]
        return sigs

    def _dump_vcd(self) -> None:
        vals = {r.name: self.sim.reg_state[i]
                for i, r in enumerate(self.flat.regs)}
        for i, f in enumerate(self.flat.fifos):
            vals[f.name + ".count"] = len(self.sim.fifo_state[i])
        for n, net in self.flat.rule_wf.items():
            vals["wf." + n] = self.sim.values[net]
        self.vcd.dump(self.cycle, vals)
