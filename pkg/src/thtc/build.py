"""Host-language construction API for transactional designs.

Designs are assembled by constructor functions over plain Python values;
parameterization (widths, depths, array shapes) lives entirely in host code
and elaborates to monomorphic IR.  A ModuleBuilder opens one rule context
at a time; inside it, a RuleCtx hands out width-carrying value handles whose
operators append SSA steps in program order.

    db = DesignBuilder("top")
    mb = db.new_module("counter", interface("counter", methods=[
        ("bump", [("by", 8)], [])]))
    cnt = mb.reg("cnt", 8)
    def bump(rc):
        v = rc.call(cnt, "read") + rc.arg("by")
        rc.call(cnt, "write", v)
    mb.add_method("bump", bump)
    mb.finish()
    design = db.finish()

Any builder program that completes without raising yields a design on which
validate() returns no diagnostics.
"""

from __future__ import annotations

import re
from typing import Callable, Optional, Sequence, Union

from . import prims
from .ir import (
    CallStep, ChannelDecl, Design, ExprStep, FifoPrim, GConst, GOp, GPort,
    GRead, GuardExpr, GUARD_TRUE, Instance, Interface, MethodSig, Module,
    Port, PredDecl, RecvStep, RegPrim, Rule, SendStep, ShiftPrim, Step,
    Submodule, TimingLabel, WirePrim, expr_width, validate,
)


class BuildError(Exception):
    pass


def interface(name: str,
              ports: Sequence[tuple[str, str, int]] = (),
              methods: Sequence[tuple[str, Sequence[tuple[str, int]],
                                      Sequence[tuple[str, int]]]] = ()) -> Interface:
    """Convenience interface constructor.

    `ports` lists raw wires as (name, "in"|"out", width); `methods` lists
    (name, [(arg, width)...], [(result, width)...]) and declares the
    corresponding ports automatically.
    """
    plist: list[Port] = [Port(n, d, w) for n, d, w in ports]
    mlist: list[MethodSig] = []
    for mname, args, results in methods:
        for pn, w in args:
            plist.append(Port(pn, "in", w))
        for pn, w in results:
            plist.append(Port(pn, "out", w))
        mlist.append(MethodSig(mname, tuple(p for p, _ in args),
                               tuple(p for p, _ in results)))
    itf = Interface(name, tuple(plist), tuple(mlist))
    seen: set[str] = set()
    for p in itf.ports:
        if p.width < 1:
            raise BuildError(f"port '{p.name}' width must be >= 1")
        if p.name in seen:
            raise BuildError(f"duplicate port name '{p.name}'")
        seen.add(p.name)
    return itf


# Guard expression helpers (guards are pure trees, separate from SSA bodies).

def g_read(inst: Union[str, "InstHandle"], method: str) -> GRead:
    name = inst.name if isinstance(inst, InstHandle) else inst
    return GRead(name, method)


def g_port(name: str) -> GPort:
    return GPort(name)


def g_const(value: int, width: int) -> GConst:
    return GConst(value, width)


def g_eq(a: GuardExpr, b: GuardExpr) -> GOp:
    return GOp("eq", (a, b))


def g_lt(a: GuardExpr, b: GuardExpr) -> GOp:
    return GOp("lt", (a, b))


def g_and(a: GuardExpr, b: GuardExpr) -> GOp:
    return GOp("and", (a, b))


def g_or(a: GuardExpr, b: GuardExpr) -> GOp:
    return GOp("or", (a, b))


def g_not(a: GuardExpr) -> GOp:
    return GOp("not", (a,))


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)(?:\+(\d+))?$")


def _parse_label(text: str) -> TimingLabel:
    m = _LABEL_RE.match(text)
    if not m:
        raise BuildError(f"bad timing label '{text}' (want VAR or VAR+k)")
    return TimingLabel(m.group(1), int(m.group(2) or 0))


class InstHandle:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"InstHandle({self.name})"


class Val:
    """SSA value handle; operators append steps to the owning rule context."""

    __slots__ = ("ctx", "id", "width")

    def __init__(self, ctx: "RuleCtx", vid: str, width: int):
        self.ctx = ctx
        self.id = vid
        self.width = width

    def _bin(self, op: str, other: "Val") -> "Val":
        return self.ctx.emit(op, (self, other))

    def __add__(self, other: "Val") -> "Val":
        return self._bin("add", other)

    def __sub__(self, other: "Val") -> "Val":
        return self._bin("sub", other)

    def __mul__(self, other: "Val") -> "Val":
        return self._bin("mul", other)

    def __and__(self, other: "Val") -> "Val":
        return self._bin("and", other)

    def __or__(self, other: "Val") -> "Val":
        return self._bin("or", other)

    def __xor__(self, other: "Val") -> "Val":
        return self._bin("xor", other)

    def __lshift__(self, other: "Val") -> "Val":
        return self._bin("shl", other)

    def __rshift__(self, other: "Val") -> "Val":
        return self._bin("shr", other)

    def __invert__(self) -> "Val":
        return self.ctx.emit("not", (self,))

    def eq(self, other: "Val") -> "Val":
        return self._bin("eq", other)

    def lt(self, other: "Val") -> "Val":
        return self._bin("lt", other)

    def __getitem__(self, idx) -> "Val":
        if isinstance(idx, slice):
            hi, lo = idx.start, idx.stop
        else:
            hi = lo = idx
        return self.ctx.emit("slice", (self,), (hi, lo))

    def __repr__(self) -> str:
        return f"%{self.id}:{self.width}"


class RuleCtx:
    """Open rule body; collects SSA steps, preds, and channels in order."""

    def __init__(self, mb: "ModuleBuilder", rule_id: str, flavor: str,
                 method: Optional[str], timed: bool):
        self.mb = mb
        self.rule_id = rule_id
        self.flavor = flavor
        self.method = method
        self.timed = timed
        self.steps: list[Step] = []
        self.preds: list[PredDecl] = []
        self.channels: list[ChannelDecl] = []
        self.results: tuple[str, ...] = ()
        self._env: dict[str, int] = {}
        self._n = 0
        self._start: Optional[TimingLabel] = None
        self._finish: Optional[TimingLabel] = None
        for p in mb._itf.ports:
            if p.direction == "in":
                self._env[p.name] = p.width

    def _fresh(self) -> str:
        self._n += 1
        return f"v{self._n}"

    def _bind(self, vid: str, width: int) -> Val:
        self._env[vid] = width
        return Val(self, vid, width)

    # -- values -------------------------------------------------------------

    def arg(self, port: str) -> Val:
        if self.method is None:
            raise BuildError("arg() outside a method rule")
        sig = self.mb._itf.method(self.method)
        if sig is None or port not in sig.args:
            raise BuildError(f"'{port}' is not an argument of method '{self.method}'")
        return Val(self, port, self.mb._itf.port(port).width)

    def port(self, name: str) -> Val:
        p = self.mb._itf.port(name)
        if p is None or p.direction != "in":
            raise BuildError(f"unknown input port '{name}'")
        return Val(self, name, p.width)

    def const(self, value: int, width: int) -> Val:
        vid = self._fresh()
        self.steps.append(ExprStep(vid, "const", (), (value, width),
                                   self._start, self._finish))
        return self._bind(vid, width)

    def emit(self, op: str, args: tuple[Val, ...], params: tuple[int, ...] = ()) -> Val:
        for a in args:
            if a.ctx is not self:
                raise BuildError(f"value %{a.id} belongs to another rule context")
        width = expr_width(op, tuple(a.width for a in args), params)
        vid = self._fresh()
        self.steps.append(ExprStep(vid, op, tuple(a.id for a in args), params,
                                   self._start, self._finish))
        return self._bind(vid, width)

    def mux(self, sel: Val, a: Val, b: Val) -> Val:
        return self.emit("mux", (sel, a, b))

    def cat(self, hi: Val, lo: Val) -> Val:
        return self.emit("concat", (hi, lo))

    def zext(self, v: Val, width: int) -> Val:
        if width < v.width:
            raise BuildError("zext target narrower than value")
        if width == v.width:
            return v
        return self.cat(self.const(0, width - v.width), v)

    # -- actions -------------------------------------------------------------

    def call(self, inst: Union[str, InstHandle], method: str, *args: Val):
        name = inst.name if isinstance(inst, InstHandle) else inst
        mw = self.mb._method_widths(name, method)
        if mw is None:
            raise BuildError(f"instance '{name}' has no method '{method}'")
        aw, rw = mw
        if len(args) != len(aw):
            raise BuildError(f"call '{name}.{method}' expects {len(aw)} args")
        for a, w in zip(args, aw):
            if a.width != w:
                raise BuildError(f"call '{name}.{method}' arg width {a.width}, expected {w}")
        outs = tuple(self._fresh() for _ in rw)
        self.steps.append(CallStep(outs, name, method, tuple(a.id for a in args),
                                   self._start, self._finish))
        vals = tuple(self._bind(o, w) for o, w in zip(outs, rw))
        if not vals:
            return None
        return vals[0] if len(vals) == 1 else vals

    def channel(self, name: str, width: int, depth: Optional[int] = None) -> str:
        self.channels.append(ChannelDecl(name, width, depth))
        return name

    def pred(self, alias: str, pred_rule: str, kind: Optional[str] = None,
             cycles: int = 0) -> str:
        self.preds.append(PredDecl(alias, pred_rule, kind, cycles))
        return alias

    def send(self, channel: str, value: Val) -> None:
        self.steps.append(SendStep(channel, value.id, self._start, self._finish))

    def recv(self, alias: str, channel: str) -> Val:
        decl = next((p for p in self.preds if p.alias == alias), None)
        if decl is None:
            raise BuildError(f"recv from undeclared predecessor alias '{alias}'")
        width = self.mb._pred_channel_width(decl.pred, channel)
        vid = self._fresh()
        self.steps.append(RecvStep(vid, alias, channel, self._start, self._finish))
        return self._bind(vid, width)

    def at(self, start: str, finish: Optional[str] = None) -> None:
        if self.flavor != "multicycle":
            raise BuildError("at() labels are only allowed in multicycle rules")
        self._start = _parse_label(start)
        fin = _parse_label(finish) if finish is not None else None
        self._finish = None if fin == self._start else fin

    def ret(self, *vals: Val) -> None:
        if self.method is None:
            raise BuildError("ret() outside a method rule")
        self.results = tuple(v.id for v in vals)


class ModuleBuilder:
    def __init__(self, db: "DesignBuilder", name: str, itf: Interface):
        self.db = db
        self.name = name
        self._itf = itf
        self._instances: list[Instance] = []
        self._rules: list[Rule] = []
        self._precs: list[tuple[str, str]] = []
        self._counters: dict[str, int] = {}
        self._open: Optional[str] = None
        self._finished = False

    def fresh(self, base: str) -> str:
        n = self._counters.get(base, 0)
        self._counters[base] = n + 1
        return f"{base}_{n}"

    # -- instances ------------------------------------------------------------

    def add_instance(self, name: str, kind) -> InstHandle:
        if any(i.name == name for i in self._instances):
            raise BuildError(f"duplicate instance name '{name}'")
        self._instances.append(Instance(name, kind))
        return InstHandle(name)

    def reg(self, name: str, width: int, init: int = 0) -> InstHandle:
        if width < 1:
            raise BuildError(f"register '{name}' width must be >= 1")
        return self.add_instance(name, RegPrim(width, init))

    def fifo(self, name: str, width: int, depth: int, bypass: bool = False) -> InstHandle:
        if width < 1 or depth < 1:
            raise BuildError(f"fifo '{name}' needs width >= 1 and depth >= 1")
        return self.add_instance(name, FifoPrim(width, depth, bypass))

    def shift(self, name: str, width: int, depth: int) -> InstHandle:
        return self.add_instance(name, ShiftPrim(width, depth))

    def wire(self, name: str, width: int) -> InstHandle:
        return self.add_instance(name, WirePrim(width))

    def sub(self, name: str, module: str) -> InstHandle:
        if module not in self.db._modules:
            raise BuildError(f"submodule '{module}' not built yet")
        return self.add_instance(name, Submodule(module))

    # -- rules ----------------------------------------------------------------

    def _method_widths(self, inst: str, method: str):
        target = next((i for i in self._instances if i.name == inst), None)
        if target is None:
            raise BuildError(f"unknown instance '{inst}'")
        k = target.kind
        if isinstance(k, Submodule):
            sub = self.db._modules[k.module]
            sig = sub.interface.method(method)
            if sig is None:
                return None
            return (tuple(sub.interface.port(p).width for p in sig.args),
                    tuple(sub.interface.port(p).width for p in sig.results))
        return prims.prim_method_widths(k, method)

    def _pred_channel_width(self, pred_rule: str, channel: str) -> int:
        r = next((r for r in self._rules if r.id == pred_rule), None)
        if r is None:
            raise BuildError(f"predecessor rule '{pred_rule}' not declared yet")
        c = r.channel(channel)
        if c is None:
            raise BuildError(f"rule '{pred_rule}' has no channel '{channel}'")
        return c.width

    def _add_rule(self, rid: str, flavor: str, guard: GuardExpr,
                  body: Callable[[RuleCtx], None], method: Optional[str],
                  timed: bool) -> None:
        if self._open is not None:
            raise BuildError(f"rule context '{self._open}' still open")
        if any(r.id == rid for r in self._rules):
            raise BuildError(f"duplicate rule id '{rid}'")
        self._open = rid
        ctx = RuleCtx(self, rid, flavor, method, timed)
        try:
            body(ctx)
        finally:
            self._open = None
        self._rules.append(Rule(rid, flavor, guard, tuple(ctx.steps),
                                tuple(ctx.preds), tuple(ctx.channels),
                                method, timed, ctx.results))

    def add_always(self, rid: str, body: Callable[[RuleCtx], None],
                   guard: GuardExpr = GUARD_TRUE) -> str:
        self._add_rule(rid, "always", guard, body, None, False)
        return rid

    def add_method(self, name: str, body: Callable[[RuleCtx], None],
                   guard: GuardExpr = GUARD_TRUE) -> str:
        if self._itf.method(name) is None:
            raise BuildError(f"interface has no method '{name}'")
        self._add_rule(name, "method", guard, body, name, False)
        return name

    def add_multicycle(self, rid: str, body: Callable[[RuleCtx], None],
                       guard: GuardExpr = GUARD_TRUE, timed: bool = False,
                       method: Optional[str] = None) -> str:
        if method is not None and self._itf.method(method) is None:
            raise BuildError(f"interface has no method '{method}'")
        self._add_rule(rid, "multicycle", guard, body, method, timed)
        return rid

    def add_prec(self, first: str, then: str) -> None:
        self._precs.append((first, then))

    def finish(self) -> Module:
        if self._finished:
            raise BuildError(f"module '{self.name}' already finished")
        self._finished = True
        mod = Module(self.name, self._itf, tuple(self._instances),
                     tuple(self._rules), tuple(self._precs))
        self.db._add(mod)
        return mod


class DesignBuilder:
    def __init__(self, top: str):
        self.top = top
        self._modules: dict[str, Module] = {}

    def new_module(self, name: str, itf: Interface) -> ModuleBuilder:
        if name in self._modules:
            raise BuildError(f"duplicate module name '{name}'")
        for p in itf.ports:
            if p.width < 1:
                raise BuildError(f"port '{p.name}' width must be >= 1")
        return ModuleBuilder(self, name, itf)

    def _add(self, mod: Module) -> None:
        self._modules[mod.name] = mod

    def finish(self) -> Design:
        d = Design(tuple(self._modules.values()), self.top)
        diags = validate(d)
        errors = [x for x in diags if x.severity == "error"]
        if errors:
            raise BuildError("design does not validate:\n" +
                             "\n".join(x.render() for x in errors))
        return d
