"""Core intermediate representation for temporal hardware transactions.

A Design is an ordered collection of transactional modules.  Each module
holds an interface (ports and method signatures), primitive or submodule
instances, guarded rules, and explicit precedence relations.  Rule bodies
are straight-line SSA action blocks; rules may carry temporal predecessor
declarations (delay / dyndelay / eagerdelay guards), output channels, and,
for multi-cycle rules, timing labels.

Everything here is immutable after construction.  Compiler passes build new
designs instead of mutating shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union


class WidthError(Exception):
    """Raised by expr_width when operand widths are illegal for an op."""


# ---------------------------------------------------------------------------
# Expression operators
# ---------------------------------------------------------------------------

# Fixed operator vocabulary of action bodies and guards.  All arithmetic is
# unsigned with wraparound at the declared width.
OPS = (
    "const", "add", "sub", "mul", "and", "or", "xor", "not",
    "shl", "shr", "eq", "lt", "mux", "slice", "concat",
)

_ARITY = {
    "const": 0, "add": 2, "sub": 2, "mul": 2, "and": 2, "or": 2, "xor": 2,
    "not": 1, "shl": 2, "shr": 2, "eq": 2, "lt": 2, "mux": 3, "slice": 1,
    "concat": 2,
}


def expr_width(op: str, widths: tuple[int, ...], params: tuple[int, ...] = ()) -> int:
    """Result width of `op` applied to operands of the given widths.

    Width algebra:
      add/sub/and/or/xor preserve the (equal) operand width, mul returns the
      sum of operand widths, eq/lt return 1, mux preserves the data width,
      slice returns hi-lo+1, concat returns the sum.  shl/shr keep the width
      of the shifted operand; the amount operand may have any width.
    """
    if op not in OPS:
        raise WidthError(f"unknown op '{op}'")
    n = _ARITY[op]
    if len(widths) != n:
        raise WidthError(f"op '{op}' takes {n} operands, got {len(widths)}")
    if any(w < 1 for w in widths):
        raise WidthError(f"op '{op}' has operand of width < 1")

    if op == "const":
        if len(params) != 2:
            raise WidthError("const needs (value, width) params")
        value, width = params
        if width < 1:
            raise WidthError("const width must be >= 1")
        if not 0 <= value < (1 << width):
            raise WidthError(f"const value {value} does not fit in {width} bits")
        return width
    if op in ("add", "sub", "and", "or", "xor"):
        if widths[0] != widths[1]:
            raise WidthError(f"op '{op}' operand widths differ: {widths[0]} vs {widths[1]}")
        return widths[0]
    if op == "mul":
        return widths[0] + widths[1]
    if op == "not":
        return widths[0]
    if op in ("shl", "shr"):
        return widths[0]
    if op in ("eq", "lt"):
        if widths[0] != widths[1]:
            raise WidthError(f"op '{op}' operand widths differ: {widths[0]} vs {widths[1]}")
        return 1
    if op == "mux":
        if widths[0] != 1:
            raise WidthError("mux selector must have width 1")
        if widths[1] != widths[2]:
            raise WidthError(f"mux arm widths differ: {widths[1]} vs {widths[2]}")
        return widths[1]
    if op == "slice":
        if len(params) != 2:
            raise WidthError("slice needs (hi, lo) params")
        hi, lo = params
        if not 0 <= lo <= hi < widths[0]:
            raise WidthError(f"slice [{hi}:{lo}] out of range for width {widths[0]}")
        return hi - lo + 1
    if op == "concat":
        return widths[0] + widths[1]
    raise WidthError(f"unhandled op '{op}'")


def eval_op(op: str, args: tuple[int, ...], widths: tuple[int, ...],
            params: tuple[int, ...] = ()) -> int:
    """Evaluate `op` over concrete unsigned values.  Wraps at the result width."""
    if op == "const":
        return params[0]
    if op == "add":
        return (args[0] + args[1]) & ((1 << widths[0]) - 1)
    if op == "sub":
        return (args[0] - args[1]) & ((1 << widths[0]) - 1)
    if op == "mul":
        return args[0] * args[1]
    if op == "and":
        return args[0] & args[1]
    if op == "or":
        return args[0] | args[1]
    if op == "xor":
        return args[0] ^ args[1]
    if op == "not":
        return ~args[0] & ((1 << widths[0]) - 1)
    if op == "shl":
        return (args[0] << args[1]) & ((1 << widths[0]) - 1) if args[1] < widths[0] else 0
    if op == "shr":
        return args[0] >> args[1] if args[1] < widths[0] else 0
    if op == "eq":
        return 1 if args[0] == args[1] else 0
    if op == "lt":
        return 1 if args[0] < args[1] else 0
    if op == "mux":
        return args[1] if args[0] else args[2]
    if op == "slice":
        hi, lo = params
        return (args[0] >> lo) & ((1 << (hi - lo + 1)) - 1)
    if op == "concat":
        return (args[0] << widths[1]) | args[1]
    raise WidthError(f"cannot evaluate op '{op}'")


# ---------------------------------------------------------------------------
# Guard expressions
# ---------------------------------------------------------------------------
#
# Rule guards are pure expression trees, separate from the SSA body: they
# are evaluated before a rule fires and must be side-effect-free.  Guards
# may read ports, registers, FIFO occupancy predicates and other pure
# instance methods; they may not call mutating methods.


@dataclass(frozen=True)
class GConst:
    value: int
    width: int


@dataclass(frozen=True)
class GPort:
    name: str


@dataclass(frozen=True)
class GRead:
    """Value-reading method call inside a guard, e.g. a register read."""
    inst: str
    method: str


@dataclass(frozen=True)
class GOp:
    op: str
    args: tuple["GuardExpr", ...]
    params: tuple[int, ...] = ()


GuardExpr = Union[GConst, GPort, GRead, GOp]

GUARD_TRUE = GConst(1, 1)


def guard_reads(expr: GuardExpr) -> list[GRead]:
    """All instance reads appearing in a guard expression."""
    out: list[GRead] = []

    def walk(e: GuardExpr) -> None:
        if isinstance(e, GRead):
            out.append(e)
        elif isinstance(e, GOp):
            for a in e.args:
                walk(a)

    walk(expr)
    return out


def guard_ports(expr: GuardExpr) -> list[str]:
    out: list[str] = []

    def walk(e: GuardExpr) -> None:
        if isinstance(e, GPort):
            out.append(e.name)
        elif isinstance(e, GOp):
            for a in e.args:
                walk(a)

    walk(expr)
    return out


# ---------------------------------------------------------------------------
# Timing labels and action steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingLabel:
    """Symbolic cycle anchor: timing variable plus a constant offset (cycles)."""
    var: str
    offset: int = 0

    def shifted(self, k: int) -> "TimingLabel":
        return TimingLabel(self.var, self.offset + k)


@dataclass(frozen=True)
class ExprStep:
    out: str
    op: str
    args: tuple[str, ...]
    params: tuple[int, ...] = ()
    start: Optional[TimingLabel] = None
    finish: Optional[TimingLabel] = None


@dataclass(frozen=True)
class CallStep:
    outs: tuple[str, ...]
    inst: str
    method: str
    args: tuple[str, ...]
    start: Optional[TimingLabel] = None
    finish: Optional[TimingLabel] = None


@dataclass(frozen=True)
class SendStep:
    channel: str
    value: str
    start: Optional[TimingLabel] = None
    finish: Optional[TimingLabel] = None


@dataclass(frozen=True)
class RecvStep:
    out: str
    pred: str          # predecessor alias
    channel: str
    start: Optional[TimingLabel] = None
    finish: Optional[TimingLabel] = None


Step = Union[ExprStep, CallStep, SendStep, RecvStep]


def step_label(step: Step) -> Optional[TimingLabel]:
    return step.start


# ---------------------------------------------------------------------------
# Temporal declarations
# ---------------------------------------------------------------------------

PRED_KINDS = ("delay", "dyndelay", "eagerdelay")


@dataclass(frozen=True)
class PredDecl:
    """Predecessor declaration: aliases a predecessor rule for temporal
    guarding and channel access.

    kind None means channel access only (no temporal guard); such preds are
    produced by partitioning, where the firing time is already pinned by the
    slot chain and only message timing matters.
    """
    alias: str
    pred: str
    kind: Optional[str] = None   # "delay" | "dyndelay" | "eagerdelay" | None
    cycles: int = 0


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    width: int
    depth: Optional[int] = None  # dyndelay FIFO depth override


# ---------------------------------------------------------------------------
# Interfaces, instances, rules, modules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Port:
    name: str
    direction: str   # "in" | "out"
    width: int


@dataclass(frozen=True)
class MethodSig:
    name: str
    args: tuple[str, ...]      # names of interface in-ports
    results: tuple[str, ...]   # names of interface out-ports


@dataclass(frozen=True)
class Interface:
    name: str
    ports: tuple[Port, ...] = ()
    methods: tuple[MethodSig, ...] = ()

    def port(self, name: str) -> Optional[Port]:
        for p in self.ports:
            if p.name == name:
                return p
        return None

    def method(self, name: str) -> Optional[MethodSig]:
        for m in self.methods:
            if m.name == name:
                return m
        return None


@dataclass(frozen=True)
class RegPrim:
    width: int
    init: int = 0


@dataclass(frozen=True)
class FifoPrim:
    width: int
    depth: int
    bypass: bool = False       # bypass FIFOs sequence enq before deq


@dataclass(frozen=True)
class ShiftPrim:
    """Valid+data shift chain: push inserts at stage 0, the chain advances
    every cycle, out_valid/out_data read the oldest stage."""
    width: int
    depth: int


@dataclass(frozen=True)
class WirePrim:
    """Stateless same-cycle conduit: drive sets (valid, data) for the current
    cycle only; reads must be ordered after the drive."""
    width: int


@dataclass(frozen=True)
class Submodule:
    module: str


InstanceKind = Union[RegPrim, FifoPrim, ShiftPrim, WirePrim, Submodule]


@dataclass(frozen=True)
class Instance:
    name: str
    kind: InstanceKind
    stall_region: Optional[int] = None   # set by stall insertion


@dataclass(frozen=True)
class Rule:
    id: str
    flavor: str                      # "always" | "method" | "multicycle"
    guard: GuardExpr = GUARD_TRUE
    steps: tuple[Step, ...] = ()
    preds: tuple[PredDecl, ...] = ()
    channels: tuple[ChannelDecl, ...] = ()
    method: Optional[str] = None     # bound interface method name
    timed: bool = False              # multicycle only
    results: tuple[str, ...] = ()    # value ids returned, positional per sig
    stall_region: Optional[int] = None

    @property
    def is_method(self) -> bool:
        return self.method is not None

    @property
    def is_multicycle(self) -> bool:
        return self.flavor == "multicycle"

    def channel(self, name: str) -> Optional[ChannelDecl]:
        for c in self.channels:
            if c.name == name:
                return c
        return None

    def pred_decl(self, alias: str) -> Optional[PredDecl]:
        for p in self.preds:
            if p.alias == alias:
                return p
        return None


@dataclass(frozen=True)
class Module:
    name: str
    interface: Interface
    instances: tuple[Instance, ...] = ()
    rules: tuple[Rule, ...] = ()
    precs: tuple[tuple[str, str], ...] = ()

    def rule(self, rid: str) -> Optional[Rule]:
        for r in self.rules:
            if r.id == rid:
                return r
        return None

    def instance(self, name: str) -> Optional[Instance]:
        for i in self.instances:
            if i.name == name:
                return i
        return None

    def method_rule(self, method: str) -> Optional[Rule]:
        for r in self.rules:
            if r.method == method:
                return r
        return None


@dataclass(frozen=True)
class Design:
    modules: tuple[Module, ...]
    top: str

    def module(self, name: str) -> Optional[Module]:
        for m in self.modules:
            if m.name == name:
                return m
        return None

    def replace_module(self, mod: Module) -> "Design":
        mods = tuple(mod if m.name == mod.name else m for m in self.modules)
        return Design(mods, self.top)

    def instantiation_order(self) -> list[str]:
        """Module names leaf-first; raises ValueError on instantiation cycles."""
        deps: dict[str, list[str]] = {}
        for m in self.modules:
            deps[m.name] = [i.kind.module for i in m.instances
                            if isinstance(i.kind, Submodule)]
        out: list[str] = []
        state: dict[str, int] = {}

        def visit(name: str, chain: list[str]) -> None:
            st = state.get(name, 0)
            if st == 1:
                cyc = chain[chain.index(name):] + [name]
                raise ValueError("module instantiation cycle: " + " -> ".join(cyc))
            if st == 2:
                return
            state[name] = 1
            for d in deps.get(name, []):
                if d in deps:
                    visit(d, chain + [name])
            state[name] = 2
            out.append(name)

        for m in self.modules:
            visit(m.name, [])
        return out


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str              # "error" | "warning"
    kind: str                  # e.g. "Validate", "TemporalError", "FalseStatic"
    module: str
    rule: str
    message: str
    fix: Optional[int] = None  # suggested delay value, when applicable

    def render(self) -> str:
        loc = self.module + (f".{self.rule}" if self.rule else "")
        s = f"{self.severity}[{self.kind}] {loc}: {self.message}"
        if self.fix is not None:
            s += f" (suggested delay: {self.fix})"
        return s


def has_errors(diags: Iterable[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diags)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(design: Design) -> list[Diagnostic]:
    """Check every structural invariant of the IR.

    Returns an empty list iff the design is well formed.  Pure: the same
    design always yields the same diagnostics.
    """
    from . import prims  # local import; prims depends on ir types

    diags: list[Diagnostic] = []

    def err(module: str, rule: str, msg: str) -> None:
        diags.append(Diagnostic("error", "Validate", module, rule, msg))

    names = [m.name for m in design.modules]
    if len(set(names)) != len(names):
        err("", "", "duplicate module names")
    if design.module(design.top) is None:
        err(design.top, "", "top module not found")
        return diags

    try:
        design.instantiation_order()
    except ValueError as e:
        err(design.top, "", str(e))
        return diags

    for mod in design.modules:
        _validate_module(design, mod, diags, prims)
    return diags


def _validate_module(design: Design, mod: Module, diags: list[Diagnostic], prims) -> None:
    def err(rule: str, msg: str) -> None:
        diags.append(Diagnostic("error", "Validate", mod.name, rule, msg))

    itf = mod.interface
    port_names = [p.name for p in itf.ports]
    if len(set(port_names)) != len(port_names):
        err("", "interface port names not unique")
    for p in itf.ports:
        if p.width < 1:
            err("", f"port '{p.name}' width must be >= 1")
        if p.direction not in ("in", "out"):
            err("", f"port '{p.name}' has bad direction '{p.direction}'")

    used_ports: set[str] = set()
    for m in itf.methods:
        for pn in m.args:
            q = itf.port(pn)
            if q is None or q.direction != "in":
                err("", f"method '{m.name}' arg port '{pn}' is not an in port")
        for pn in m.results:
            q = itf.port(pn)
            if q is None or q.direction != "out":
                err("", f"method '{m.name}' result port '{pn}' is not an out port")
        for pn in list(m.args) + list(m.results):
            if pn in used_ports:
                err("", f"port '{pn}' bound by more than one method")
            used_ports.add(pn)

    inst_names = [i.name for i in mod.instances]
    if len(set(inst_names)) != len(inst_names):
        err("", "instance names not unique")
    for inst in mod.instances:
        k = inst.kind
        if isinstance(k, RegPrim):
            if k.width < 1:
                err("", f"register '{inst.name}' width must be >= 1")
            elif not 0 <= k.init < (1 << k.width):
                err("", f"register '{inst.name}' init value does not fit width")
        elif isinstance(k, FifoPrim):
            if k.width < 1:
                err("", f"fifo '{inst.name}' width must be >= 1")
            if k.depth < 1:
                err("", f"fifo '{inst.name}' depth must be >= 1")
        elif isinstance(k, ShiftPrim):
            if k.width < 1:
                err("", f"shift '{inst.name}' width must be >= 1")
            if k.depth < 1:
                err("", f"shift '{inst.name}' depth must be >= 1")
        elif isinstance(k, WirePrim):
            if k.width < 1:
                err("", f"wire '{inst.name}' width must be >= 1")
        elif isinstance(k, Submodule):
            if design.module(k.module) is None:
                err("", f"instance '{inst.name}' references unknown module '{k.module}'")

    rule_ids = [r.id for r in mod.rules]
    if len(set(rule_ids)) != len(rule_ids):
        err("", "rule ids not unique")

    impl: dict[str, int] = {}
    for r in mod.rules:
        if r.method is not None:
            impl[r.method] = impl.get(r.method, 0) + 1
            if itf.method(r.method) is None:
                err(r.id, f"implements undeclared method '{r.method}'")
    for m in itf.methods:
        n = impl.get(m.name, 0)
        if n != 1:
            err("", f"method '{m.name}' implemented by {n} rules, expected exactly 1")

    for a, b in mod.precs:
        if mod.rule(a) is None or mod.rule(b) is None:
            err("", f"precedence ({a} < {b}) references unknown rule")
    if not _acyclic_pairs(mod.precs):
        err("", "precedence relation has a cycle")

    for r in mod.rules:
        _validate_rule(design, mod, r, diags, prims)


def _acyclic_pairs(pairs: tuple[tuple[str, str], ...]) -> bool:
    adj: dict[str, list[str]] = {}
    for a, b in pairs:
        adj.setdefault(a, []).append(b)
    state: dict[str, int] = {}

    def dfs(v: str) -> bool:
        state[v] = 1
        for w in adj.get(v, []):
            s = state.get(w, 0)
            if s == 1 or (s == 0 and not dfs(w)):
                return False
        state[v] = 2
        return True

    return all(state.get(v, 0) == 2 or dfs(v) for v in list(adj))


def _ambient_values(mod: Module, rule: Rule) -> dict[str, int]:
    """Value ids available before the first step: module in-ports and, for
    method rules, the method's argument ports."""
    env: dict[str, int] = {}
    for p in mod.interface.ports:
        if p.direction == "in":
            env[p.name] = p.width
    if rule.method is not None:
        sig = mod.interface.method(rule.method)
        if sig is not None:
            for pn in sig.args:
                q = mod.interface.port(pn)
                if q is not None:
                    env[pn] = q.width
    return env


def method_widths(design: Design, mod: Module, inst: Instance, method: str, prims):
    """(arg widths, result widths) of an instance method, or None if unknown."""
    k = inst.kind
    if isinstance(k, Submodule):
        sub = design.module(k.module)
        if sub is None:
            return None
        sig = sub.interface.method(method)
        if sig is None:
            return None
        aw = tuple(sub.interface.port(p).width for p in sig.args)
        rw = tuple(sub.interface.port(p).width for p in sig.results)
        return aw, rw
    return prims.prim_method_widths(k, method)


def _validate_rule(design: Design, mod: Module, rule: Rule,
                   diags: list[Diagnostic], prims) -> None:
    def err(msg: str) -> None:
        diags.append(Diagnostic("error", "Validate", mod.name, rule.id, msg))

    if rule.flavor not in ("always", "method", "multicycle"):
        err(f"unknown flavor '{rule.flavor}'")
        return
    if rule.flavor == "method" and rule.method is None:
        err("method rule missing its interface method binding")
    if rule.flavor == "always" and rule.method is not None:
        err("always rule cannot bind an interface method")
    if rule.timed and not rule.is_multicycle:
        err("only multicycle rules may be timed")

    # Guard purity: only pure value reads allowed.
    for g in guard_reads(rule.guard):
        inst = mod.instance(g.inst)
        if inst is None:
            err(f"guard reads unknown instance '{g.inst}'")
            continue
        if not prims.is_pure_method(design, mod, inst, g.method):
            err(f"guard must be side-effect-free: '{g.inst}.{g.method}' mutates state")
    for pn in guard_ports(rule.guard):
        p = mod.interface.port(pn)
        if p is None or p.direction != "in":
            err(f"guard reads unknown or non-input port '{pn}'")

    # Channels.
    ch_names = [c.name for c in rule.channels]
    if len(set(ch_names)) != len(ch_names):
        err("channel names not unique")
    for c in rule.channels:
        if c.width < 1:
            err(f"channel '{c.name}' width must be >= 1")
        if c.depth is not None and c.depth < 1:
            err(f"channel '{c.name}' depth must be >= 1")

    # Predecessors.
    alias_names = [p.alias for p in rule.preds]
    if len(set(alias_names)) != len(alias_names):
        err("predecessor aliases not unique")
    for p in rule.preds:
        pr = mod.rule(p.pred)
        if pr is None:
            err(f"predecessor '{p.pred}' not found in module")
            continue
        if p.kind is not None and p.kind not in PRED_KINDS:
            err(f"unknown temporal guard kind '{p.kind}'")
        if p.cycles < 0:
            err(f"temporal guard cycles must be >= 0 (pred '{p.alias}')")
        if p.kind == "eagerdelay" and not pr.is_multicycle:
            err(f"eagerdelay requires a multi-cycle predecessor ('{p.pred}' is not)")

    # Timing labels only inside multicycle rules; timed rules fully labeled.
    labeled = [s for s in rule.steps if s.start is not None or s.finish is not None]
    if labeled and not rule.is_multicycle:
        err("timing labels are only allowed in multicycle rules")
    if rule.is_multicycle and rule.timed:
        for i, s in enumerate(rule.steps):
            if s.start is None:
                err(f"timed multicycle rule leaves step {i} unlabeled")
                break
    if rule.is_multicycle and not rule.timed and labeled:
        err("untimed multicycle rule carries timing labels")
    for s in rule.steps:
        for lab in (s.start, s.finish):
            if lab is not None and lab.offset < 0:
                err("timing label offset must be >= 0")

    # SSA body: single definition before use, width-consistent, sends unique.
    env = _ambient_values(mod, rule)
    sent: set[str] = set()
    for i, s in enumerate(rule.steps):
        where = f"step {i}"
        if isinstance(s, ExprStep):
            missing = [a for a in s.args if a not in env]
            if missing:
                err(f"{where}: use of undefined value %{missing[0]}")
                continue
            if s.out in env:
                err(f"{where}: value %{s.out} defined twice")
                continue
            try:
                env[s.out] = expr_width(s.op, tuple(env[a] for a in s.args), s.params)
            except WidthError as e:
                err(f"{where}: {e}")
                env[s.out] = 1
        elif isinstance(s, CallStep):
            inst = mod.instance(s.inst)
            if inst is None:
                err(f"{where}: call to unknown instance '{s.inst}'")
                continue
            mw = method_widths(design, mod, inst, s.method, prims)
            if mw is None:
                err(f"{where}: instance '{s.inst}' has no method '{s.method}'")
                continue
            aw, rw = mw
            if len(s.args) != len(aw):
                err(f"{where}: call '{s.inst}.{s.method}' expects {len(aw)} args, got {len(s.args)}")
                continue
            ok = True
            for a, w in zip(s.args, aw):
                if a not in env:
                    err(f"{where}: use of undefined value %{a}")
                    ok = False
                elif env[a] != w:
                    err(f"{where}: call arg %{a} has width {env[a]}, expected {w}")
                    ok = False
            if not ok:
                continue
            if len(s.outs) not in (0, len(rw)):
                err(f"{where}: call '{s.inst}.{s.method}' returns {len(rw)} values, bound {len(s.outs)}")
                continue
            for o, w in zip(s.outs, rw):
                if o in env:
                    err(f"{where}: value %{o} defined twice")
                else:
                    env[o] = w
            if not rule.is_multicycle and isinstance(inst.kind, Submodule):
                sub = design.module(inst.kind.module)
                mr = sub.method_rule(s.method) if sub else None
                if mr is not None and mr.is_multicycle:
                    err(f"{where}: intra-cycle rule cannot call multi-cycle method "
                        f"'{s.inst}.{s.method}'")
        elif isinstance(s, SendStep):
            c = rule.channel(s.channel)
            if c is None:
                err(f"{where}: send to undeclared channel '{s.channel}'")
                continue
            if s.value not in env:
                err(f"{where}: use of undefined value %{s.value}")
                continue
            if env[s.value] != c.width:
                err(f"{where}: send value width {env[s.value]} != channel width {c.width}")
            if s.channel in sent:
                err(f"{where}: channel '{s.channel}' sent more than once per firing")
            sent.add(s.channel)
        elif isinstance(s, RecvStep):
            pd = rule.pred_decl(s.pred)
            if pd is None:
                err(f"{where}: recv from undeclared predecessor alias '{s.pred}'")
                continue
            pr = mod.rule(pd.pred)
            ch = pr.channel(s.channel) if pr is not None else None
            if ch is None:
                err(f"{where}: predecessor '{pd.pred}' has no channel '{s.channel}'")
                continue
            if s.out in env:
                err(f"{where}: value %{s.out} defined twice")
            else:
                env[s.out] = ch.width

    # Results bind defined values matching the method signature.
    if rule.results and rule.method is None:
        err("return values on a rule that is not a method")
    if rule.method is not None:
        sig = mod.interface.method(rule.method)
        if sig is not None:
            if len(rule.results) != len(sig.results):
                err(f"method returns {len(rule.results)} values, signature has {len(sig.results)}")
            else:
                for v, pn in zip(rule.results, sig.results):
                    if v not in env:
                        err(f"return of undefined value %{v}")
                    else:
                        pw = mod.interface.port(pn).width
                        if env[v] != pw:
                            err(f"return value %{v} width {env[v]} != port '{pn}' width {pw}")

    # Intra-rule conflicts: a straight-line body executes all calls, so two
    # conflicting calls to the same instance can never fire atomically.
    calls: list[tuple[str, str]] = [(s.inst, s.method) for s in rule.steps
                                    if isinstance(s, CallStep)]
    for i in range(len(calls)):
        for j in range(i + 1, len(calls)):
            if calls[i][0] != calls[j][0]:
                continue
            inst = mod.instance(calls[i][0])
            if inst is None:
                continue
            rel = prims.method_relation(design, mod, inst, calls[i][1], calls[j][1])
            if rel == prims.CONFLICT:
                err(f"calls '{calls[i][1]}' and '{calls[j][1]}' on '{calls[i][0]}' "
                    "conflict within one rule body")
            elif rel == prims.SEQ_AFTER:
                err(f"call '{calls[i][1]}' must execute after '{calls[j][1]}' "
                    f"on '{calls[i][0]}' but appears earlier in the body")


def rename_rule(rule: Rule, **kw) -> Rule:
    return replace(rule, **kw)
