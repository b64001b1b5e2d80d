"""Intra-cycle transactional synthesis: scheduler order, will-fire logic,
and lowering to a structural netlist.

The per-module scheduler produces one total order: explicit precedences win,
method-usage ordering (sequenced-before relations on shared instances) fills
in the rest, and declaration order breaks ties.  Will-fire logic follows the
guarded-atomicity contract: a rule fires only when its guard holds, every
called method is ready under the sequential in-cycle view, and no earlier
firing rule conflicts with it.

The netlist is coarse-structural: combinational operator nodes plus
register / FIFO / shift-chain state elements, one per-module netlist with
method sockets, and a flattener that inlines the instance tree for
simulation.  FIFO readiness is folded rule by rule in schedule order, which
reproduces the deq-before-enq sequential semantics in hardware form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import prims
from .ir import (
    CallStep, Design, ExprStep, FifoPrim, GConst, GOp, GPort, GRead,
    GuardExpr, Instance, Module, RecvStep, RegPrim, Rule, SendStep,
    ShiftPrim, Submodule, WirePrim, eval_op, expr_width,
)


class SynthError(Exception):
    pass


# ---------------------------------------------------------------------------
# Total order
# ---------------------------------------------------------------------------


def _order_touches(design: Design, mod: Module, rule: Rule):
    """Instance touches that constrain ordering: body calls plus guard reads."""
    touches = list(prims.rule_touches(design, mod, rule))
    from .ir import guard_reads
    for g in guard_reads(rule.guard):
        inst = mod.instance(g.inst)
        if inst is not None and not isinstance(inst.kind, Submodule):
            touches.append((g.inst, inst.kind, g.method))
    return touches


def order_constraints(design: Design, mod: Module) -> list[tuple[str, str, str]]:
    """(first, then, why) ordering constraints for one module."""
    cons: list[tuple[str, str, str]] = []
    explicit = set()
    for a, b in mod.precs:
        cons.append((a, b, "prec"))
        explicit.add((a, b))
        explicit.add((b, a))

    touches = {r.id: _order_touches(design, mod, r) for r in mod.rules}
    rules = list(mod.rules)
    for i, r1 in enumerate(rules):
        for r2 in rules[i + 1:]:
            if (r1.id, r2.id) in explicit:
                continue
            fwd = back = False
            for p1, k1, m1 in touches[r1.id]:
                for p2, k2, m2 in touches[r2.id]:
                    if p1 != p2 or isinstance(k1, Submodule):
                        continue
                    rel = prims.prim_relation(k1, m1, m2)
                    if rel == prims.SEQ_BEFORE:
                        fwd = True
                    elif rel == prims.SEQ_AFTER:
                        back = True
            if fwd and not back:
                cons.append((r1.id, r2.id, "method-usage"))
            elif back and not fwd:
                cons.append((r2.id, r1.id, "method-usage"))
            # both directions: leave unordered; runtime conflicts arbitrate

    # Same-cycle temporal composition: a 0-cycle guard needs its predecessor
    # decided first.
    for r in mod.rules:
        for p in r.preds:
            if p.kind is not None and p.cycles == 0:
                cons.append((p.pred, r.id, "same-cycle guard"))
    return cons


def total_order(design: Design, mod: Module) -> list[str]:
    """Topological rule order; ties broken by declaration order."""
    cons = order_constraints(design, mod)
    ids = [r.id for r in mod.rules]
    pos = {rid: i for i, rid in enumerate(ids)}
    adj: dict[str, set[str]] = {rid: set() for rid in ids}
    indeg = {rid: 0 for rid in ids}
    for a, b, _ in cons:
        if b not in adj[a]:
            adj[a].add(b)
            indeg[b] += 1
    ready = sorted([r for r in ids if indeg[r] == 0], key=lambda r: pos[r])
    out: list[str] = []
    while ready:
        r = ready.pop(0)
        out.append(r)
        for w in sorted(adj[r], key=lambda x: pos[x]):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort(key=lambda x: pos[x])
    if len(out) != len(ids):
        stuck = [r for r in ids if r not in out]
        raise SynthError(f"module '{mod.name}': cyclic ordering constraints "
                         f"among rules {stuck}")
    return out


# ---------------------------------------------------------------------------
# Global firing order
# ---------------------------------------------------------------------------
#
# The transactional interpreter serializes what hardware does combinationally,
# so it needs one design-wide order.  Firing units are always rules,
# multi-cycle rules, and externally callable top methods; an internal method
# executes inside its caller, so ordering constraints on it lift to the
# calling unit.


def method_callers(design: Design) -> dict[tuple[str, str], tuple[str, str]]:
    """(path, method rule) -> (caller path, caller rule) for internal calls."""
    from .graph import instance_paths
    out: dict[tuple[str, str], tuple[str, str]] = {}
    for path, mod in instance_paths(design, design.top):
        for r in mod.rules:
            for s in r.steps:
                if not isinstance(s, CallStep):
                    continue
                inst = mod.instance(s.inst)
                if inst is None or not isinstance(inst.kind, Submodule):
                    continue
                sub = design.module(inst.kind.module)
                mr = sub.method_rule(s.method)
                if mr is None:
                    continue
                cpath = f"{path}.{s.inst}" if path else s.inst
                out.setdefault((cpath, mr.id), (path, r.id))
    return out


def _interacting(design: Design, mod: Module, r1: Rule, r2: Rule) -> bool:
    t1 = _order_touches(design, mod, r1)
    t2 = _order_touches(design, mod, r2)
    for p1, k1, m1 in t1:
        for p2, k2, m2 in t2:
            if p1 != p2 or isinstance(k1, Submodule):
                continue
            if prims.prim_relation(k1, m1, m2) != prims.CF:
                return True
    return False


def global_order(design: Design) -> list[tuple[str, str]]:
    """Design-wide firing-unit order consistent with every module schedule."""
    from .graph import instance_paths
    callers = method_callers(design)

    def unit_of(path: str, rid: str) -> tuple[str, str]:
        mod_ = _module_at(design, path)
        r = mod_.rule(rid)
        seen = set()
        while (r.method is not None and not r.is_multicycle
               and (path, rid) in callers and (path, rid) not in seen):
            seen.add((path, rid))
            path, rid = callers[(path, rid)]
            r = _module_at(design, path).rule(rid)
        return (path, rid)

    units: list[tuple[str, str]] = []
    decl: dict[tuple[str, str], int] = {}
    for path, mod in instance_paths(design, design.top):
        for r in mod.rules:
            key = (path, r.id)
            decl[key] = len(decl)
            is_unit = (r.is_multicycle or r.method is None
                       or (path == "" and r.method is not None))
            if is_unit:
                units.append(key)
    unit_set = set(units)

    cons: set[tuple[tuple[str, str], tuple[str, str]]] = set()

    def add(a: tuple[str, str], b: tuple[str, str]) -> None:
        if a != b and a in unit_set and b in unit_set:
            cons.add((a, b))

    for path, mod in instance_paths(design, design.top):
        order = total_order(design, mod)
        pos = {rid: i for i, rid in enumerate(order)}
        rules = list(mod.rules)
        for i, r1 in enumerate(rules):
            for r2 in rules[i + 1:]:
                if not _interacting(design, mod, r1, r2):
                    continue
                a, b = ((r1.id, r2.id) if pos[r1.id] < pos[r2.id]
                        else (r2.id, r1.id))
                add(unit_of(path, a), unit_of(path, b))
        for r in mod.rules:
            for p in r.preds:
                pr = mod.rule(p.pred)
                if p.kind is not None and p.cycles == 0:
                    add(unit_of(path, p.pred), unit_of(path, r.id))
                elif (p.kind == "eagerdelay" and pr.timed
                      and _sends_at_offset(pr, p.cycles)):
                    add(unit_of(path, p.pred), unit_of(path, r.id))
        for a, b in mod.precs:
            add(unit_of(path, a), unit_of(path, b))

    adj: dict[tuple, set] = {u: set() for u in units}
    indeg = {u: 0 for u in units}
    for a, b in sorted(cons, key=lambda x: (decl[x[0]], decl[x[1]])):
        if b not in adj[a]:
            adj[a].add(b)
            indeg[b] += 1
    ready = sorted([u for u in units if indeg[u] == 0], key=lambda u: decl[u])
    out: list[tuple[str, str]] = []
    while ready:
        u = ready.pop(0)
        out.append(u)
        changed = False
        for w in adj[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
                changed = True
        if changed:
            ready.sort(key=lambda x: decl[x])
    if len(out) != len(units):
        stuck = [u for u in units if u not in out]
        raise SynthError(f"cyclic cross-module ordering constraints: {stuck}")
    return out


def _sends_at_offset(rule: Rule, k: int) -> bool:
    root = None
    for s in rule.steps:
        if s.start is not None:
            root = s.start.var
            break
    for s in rule.steps:
        if isinstance(s, SendStep) and s.start is not None \
                and s.start.var == root and s.start.offset == k:
            return True
    return False


def _module_at(design: Design, path: str) -> Module:
    mod = design.module(design.top)
    if path:
        for part in path.split("."):
            mod = design.module(mod.instance(part).kind.module)
    return mod


# ---------------------------------------------------------------------------
# Will-fire description
# ---------------------------------------------------------------------------


@dataclass
class WfInfo:
    """Structured will-fire condition of one rule."""
    rule: str
    guard: GuardExpr
    needs_ready: list[tuple[str, str]]          # (instance, method) calls
    blocked_by: list[tuple[str, str]]           # (earlier rule, reason)
    needs_call: bool                            # method rules fire when called

    def describe(self) -> str:
        parts = ["guard"]
        if self.needs_call:
            parts.append("called")
        parts += [f"ready({i}.{m})" for i, m in self.needs_ready]
        parts += [f"!fire({r})" for r, _ in self.blocked_by]
        return " & ".join(parts)


def will_fire(design: Design, mod: Module,
              order: Optional[list[str]] = None) -> dict[str, WfInfo]:
    """Static will-fire structure per rule, following the given total order."""
    if order is None:
        order = total_order(design, mod)
    touches = {r.id: list(prims.rule_touches(design, mod, r)) for r in mod.rules}
    infos: dict[str, WfInfo] = {}
    for idx, rid in enumerate(order):
        rule = mod.rule(rid)
        needs = []
        for s in rule.steps:
            if isinstance(s, CallStep):
                needs.append((s.inst, s.method))
        blocked: list[tuple[str, str]] = []
        for eid in order[:idx]:
            reasons = []
            for p1, k1, m1 in touches[eid]:
                for p2, k2, m2 in touches[rid]:
                    if p1 != p2 or isinstance(k1, Submodule):
                        continue
                    rel = prims.prim_relation(k1, m1, m2)
                    if rel == prims.CONFLICT:
                        reasons.append(f"{p1}.{m1} conflicts with {p1}.{m2}")
                    elif rel == prims.SEQ_AFTER:
                        reasons.append(f"{p1}.{m2} must precede {p1}.{m1}")
            if reasons:
                blocked.append((eid, "; ".join(reasons)))
        infos[rid] = WfInfo(rid, rule.guard, needs, blocked,
                            rule.method is not None)
    return infos


# ---------------------------------------------------------------------------
# Netlist structure
# ---------------------------------------------------------------------------


@dataclass
class RegNode:
    name: str
    width: int
    init: int
    d: int = -1
    en: int = -1
    q: int = -1


@dataclass
class FifoNode:
    name: str
    width: int
    depth: int
    bypass: bool
    enq_en: int = -1
    enq_data: int = -1
    deq_en: int = -1
    flush_en: int = -1
    first: int = -1        # head element at cycle start
    count: int = -1        # occupancy at cycle start


@dataclass
class ShiftNode:
    name: str
    width: int
    depth: int
    in_valid: int = -1
    in_data: int = -1
    en: int = -1           # advance enable (stall gating)
    out_valid: int = -1
    out_data: int = -1


@dataclass
class SubInst:
    name: str
    module: str
    drives: dict[str, int] = field(default_factory=dict)    # child in -> net
    imports: dict[str, int] = field(default_factory=dict)   # child out -> net


@dataclass
class ModuleNetlist:
    module: str
    widths: list[int] = field(default_factory=list)
    names: dict[int, str] = field(default_factory=dict)
    # comb nodes: ("op", op, params, ins, out) | ("portin", name, out)
    nodes: list[tuple] = field(default_factory=list)
    regs: list[RegNode] = field(default_factory=list)
    fifos: list[FifoNode] = field(default_factory=list)
    shifts: list[ShiftNode] = field(default_factory=list)
    subs: list[SubInst] = field(default_factory=list)
    in_ports: dict[str, int] = field(default_factory=dict)
    out_ports: dict[str, int] = field(default_factory=dict)
    rule_wf: dict[str, int] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)
    stall_inputs: dict[int, int] = field(default_factory=dict)   # region -> net
    stall_nets: dict[int, int] = field(default_factory=dict)     # region -> net

    def new_net(self, width: int, name: Optional[str] = None) -> int:
        self.widths.append(width)
        idx = len(self.widths) - 1
        if name:
            self.names[idx] = name
        return idx

    def op(self, op: str, ins: tuple[int, ...], params: tuple[int, ...] = (),
           name: Optional[str] = None) -> int:
        w = expr_width(op, tuple(self.widths[i] for i in ins), params)
        out = self.new_net(w, name)
        self.nodes.append(("op", op, params, ins, out))
        return out

    def const(self, value: int, width: int) -> int:
        out = self.new_net(width)
        self.nodes.append(("op", "const", (value, width), (), out))
        return out

    def portin(self, name: str, width: int) -> int:
        out = self.new_net(width, name)
        self.nodes.append(("portin", name, out))
        self.in_ports[name] = out
        return out

    # small logic helpers -------------------------------------------------

    def and_(self, a: int, b: int) -> int:
        return self.op("and", (a, b))

    def or_(self, a: int, b: int) -> int:
        return self.op("or", (a, b))

    def not_(self, a: int) -> int:
        return self.op("not", (a,))

    def eq_const(self, a: int, v: int) -> int:
        return self.op("eq", (a, self.const(v, self.widths[a])))

    def nonzero(self, a: int) -> int:
        return self.not_(self.eq_const(a, 0))

    def mux(self, sel: int, a: int, b: int) -> int:
        return self.op("mux", (sel, a, b))

    def zext(self, a: int, width: int) -> int:
        if self.widths[a] == width:
            return a
        return self.op("concat", (self.const(0, width - self.widths[a]), a))


@dataclass
class StallControllerInfo:
    region: int
    module_path: str
    watches: list[tuple[str, str]]      # ("recv_empty"|"send_full", fifo inst)


@dataclass
class SynthResult:
    netlists: dict[str, ModuleNetlist]
    top: str

    def top_netlist(self) -> ModuleNetlist:
        return self.netlists[self.top]


def _count_width(depth: int) -> int:
    w = 1
    while (1 << w) <= depth:
        w += 1
    return w


# ---------------------------------------------------------------------------
# Per-module netlist construction
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self, design: Design, mod: Module,
                 controllers: list[StallControllerInfo], path: str):
        self.design = design
        self.mod = mod
        self.nl = ModuleNetlist(mod.name)
        self.controllers = controllers
        self.path = path
        # sequential trackers
        self.fifo_avail: dict[str, int] = {}
        self.fifo_free: dict[str, int] = {}
        self.fifo_first_cur: dict[str, int] = {}
        self.fifo_enq_en: dict[str, int] = {}
        self.fifo_enq_data: dict[str, int] = {}
        self.fifo_deq_en: dict[str, int] = {}
        self.fifo_flush_en: dict[str, int] = {}
        self.fifo_node: dict[str, FifoNode] = {}
        self.shift_node: dict[str, ShiftNode] = {}
        self.shift_in_valid: dict[str, int] = {}
        self.shift_in_data: dict[str, int] = {}
        self.reg_node: dict[str, RegNode] = {}
        self.reg_wen: dict[str, int] = {}
        self.reg_wdata: dict[str, int] = {}
        self.wire_valid: dict[str, int] = {}
        self.wire_data: dict[str, int] = {}
        self.shift_region: dict[str, Optional[int]] = {}

    def build(self) -> ModuleNetlist:
        nl = self.nl
        mod = self.mod
        zero1 = nl.const(0, 1)
        self.zero1 = zero1

        for p in mod.interface.ports:
            if p.direction == "in":
                nl.portin(p.name, p.width)
        for m in mod.interface.methods:
            nl.portin(f"{m.name}_en", 1)

        for inst in mod.instances:
            self._instance(inst)

        self._stall_nets()

        order = total_order(self.design, mod)
        nl.order = order
        touches = {r.id: list(prims.rule_touches(self.design, mod, r))
                   for r in mod.rules}
        wf_so_far: list[tuple[str, int]] = []
        for rid in order:
            rule = mod.rule(rid)
            self._rule(rule, touches, wf_so_far)

        self._finalize_state()
        return nl

    # -- instances ---------------------------------------------------------

    def _instance(self, inst: Instance) -> None:
        nl = self.nl
        k = inst.kind
        if isinstance(k, RegPrim):
            node = RegNode(inst.name, k.width, k.init)
            node.q = nl.new_net(k.width, f"{inst.name}_q")
            nl.regs.append(node)
            self.reg_node[inst.name] = node
        elif isinstance(k, FifoPrim):
            cw = _count_width(k.depth)
            node = FifoNode(inst.name, k.width, k.depth, k.bypass)
            node.first = nl.new_net(k.width, f"{inst.name}_first")
            node.count = nl.new_net(cw, f"{inst.name}_count")
            nl.fifos.append(node)
            self.fifo_node[inst.name] = node
            self.fifo_avail[inst.name] = node.count
            free = nl.op("sub", (nl.const(k.depth, cw), node.count))
            self.fifo_free[inst.name] = free
            self.fifo_first_cur[inst.name] = node.first
            self.fifo_enq_en[inst.name] = self.zero1
            self.fifo_enq_data[inst.name] = nl.const(0, k.width)
            self.fifo_deq_en[inst.name] = self.zero1
            self.fifo_flush_en[inst.name] = self.zero1
        elif isinstance(k, ShiftPrim):
            w = max(k.width, 1)
            node = ShiftNode(inst.name, w, k.depth)
            node.out_valid = nl.new_net(1, f"{inst.name}_ov")
            node.out_data = nl.new_net(w, f"{inst.name}_od")
            nl.shifts.append(node)
            self.shift_node[inst.name] = node
            self.shift_in_valid[inst.name] = self.zero1
            self.shift_in_data[inst.name] = nl.const(0, w)
            node.en = -1  # set in finalize (stall gating)
            self.shift_region[inst.name] = inst.stall_region
        elif isinstance(k, WirePrim):
            self.wire_valid[inst.name] = self.zero1
            self.wire_data[inst.name] = nl.const(0, k.width)
        elif isinstance(k, Submodule):
            sub = SubInst(inst.name, k.module)
            child = self.design.module(k.module)
            for m in child.interface.methods:
                sub.imports[f"{m.name}_rdy"] = nl.new_net(1, f"{inst.name}_{m.name}_rdy")
                for rp in m.results:
                    w = child.interface.port(rp).width
                    sub.imports[f"{m.name}_res_{rp}"] = nl.new_net(
                        w, f"{inst.name}_{m.name}_{rp}")
            nl.subs.append(sub)

    def _stall_nets(self) -> None:
        nl = self.nl
        local = [c for c in self.controllers if c.module_path == self.path]
        for c in local:
            cond = self.zero1
            for kind, fifo in c.watches:
                node = self.fifo_node[fifo]
                if kind == "recv_empty":
                    term = nl.eq_const(node.count, 0)
                else:
                    term = nl.eq_const(node.count, node.depth)
                cond = nl.or_(cond, term)
            nl.stall_nets[c.region] = cond
        # regions gated here or below whose controller lives in an ancestor
        for region in stall_input_regions(self.design, self.mod,
                                          self.controllers, self.path):
            net = nl.portin(f"stall_r{region}", 1)
            nl.stall_inputs[region] = net
            nl.stall_nets[region] = net

    # -- rules ---------------------------------------------------------------

    def _guard_net(self, g: GuardExpr) -> int:
        nl = self.nl
        if isinstance(g, GConst):
            return nl.const(g.value, g.width)
        if isinstance(g, GPort):
            return nl.in_ports[g.name]
        if isinstance(g, GRead):
            return self._read_net(g.inst, g.method)
        assert isinstance(g, GOp)
        ins = tuple(self._guard_net(a) for a in g.args)
        return nl.op(g.op, ins, g.params)

    def _read_net(self, inst_name: str, method: str) -> int:
        nl = self.nl
        inst = self.mod.instance(inst_name)
        k = inst.kind
        if isinstance(k, RegPrim):
            return self.reg_node[inst_name].q
        if isinstance(k, FifoPrim):
            if method == "first":
                return self.fifo_first_cur[inst_name]
            if method == "can_deq":
                return nl.nonzero(self.fifo_avail[inst_name])
            if method == "can_enq":
                return nl.nonzero(self.fifo_free[inst_name])
        if isinstance(k, ShiftPrim):
            node = self.shift_node[inst_name]
            return node.out_valid if method == "out_valid" else node.out_data
        if isinstance(k, WirePrim):
            return (self.wire_valid[inst_name] if method == "read_valid"
                    else self.wire_data[inst_name])
        if isinstance(k, Submodule):
            sub = next(s for s in self.nl.subs if s.name == inst_name)
            child = self.design.module(k.module)
            sig = child.interface.method(method)
            return sub.imports[f"{method}_res_{sig.results[0]}"]
        raise SynthError(f"cannot read '{inst_name}.{method}'")

    def _rule(self, rule: Rule, touches, wf_so_far: list[tuple[str, int]]) -> None:
        nl = self.nl
        ready_terms: list[int] = []
        env: dict[str, int] = {}
        for p in self.mod.interface.ports:
            if p.direction == "in":
                env[p.name] = nl.in_ports[p.name]

        effects: list[tuple] = []    # applied once WF is known
        for s in rule.steps:
            if isinstance(s, ExprStep):
                env[s.out] = nl.op(s.op, tuple(env[a] for a in s.args), s.params)
            elif isinstance(s, CallStep):
                self._call(rule, s, env, ready_terms, effects)
            else:
                raise SynthError(
                    f"rule '{rule.id}' still carries temporal step {s}; "
                    "run the lowering pass before synthesis")

        wf = self._guard_net(rule.guard)
        if rule.method is not None:
            rdy = wf
            for t in ready_terms:
                rdy = nl.and_(rdy, t)
        for t in ready_terms:
            wf = nl.and_(wf, t)
        blocked: list[int] = []
        for eid, ewf in wf_so_far:
            bad = False
            for p1, k1, m1 in touches[eid]:
                for p2, k2, m2 in touches[rule.id]:
                    if p1 != p2 or isinstance(k1, Submodule):
                        continue
                    rel = prims.prim_relation(k1, m1, m2)
                    if rel in (prims.CONFLICT, prims.SEQ_AFTER):
                        bad = True
            if bad:
                blocked.append(ewf)
        for b in blocked:
            wf = nl.and_(wf, nl.not_(b))
        if rule.stall_region is not None and rule.stall_region in nl.stall_nets:
            ns = nl.not_(nl.stall_nets[rule.stall_region])
            wf = nl.and_(wf, ns)
            if rule.method is not None:
                rdy = nl.and_(rdy, ns)
        if rule.method is not None:
            en = nl.in_ports[f"{rule.method}_en"]
            for b in blocked:
                rdy = nl.and_(rdy, nl.not_(b))
            wf = nl.and_(wf, en)
            nl.out_ports[f"{rule.method}_rdy"] = rdy
            sig = self.mod.interface.method(rule.method)
            for rp, vid in zip(sig.results, rule.results):
                nl.out_ports[f"{rule.method}_res_{rp}"] = env[vid]
        wfn = nl.new_net(1, f"wf_{rule.id}")
        nl.nodes.append(("op", "and", (), (wf, nl.const(1, 1)), wfn))
        nl.rule_wf[rule.id] = wfn
        wf_so_far.append((rule.id, wfn))

        for eff in effects:
            self._apply_effect(wfn, eff)

    def _call(self, rule: Rule, s: CallStep, env: dict[str, int],
              ready_terms: list[int], effects: list[tuple]) -> None:
        nl = self.nl
        inst = self.mod.instance(s.inst)
        k = inst.kind
        args = tuple(env[a] for a in s.args)
        if isinstance(k, RegPrim):
            if s.method == "read":
                env[s.outs[0]] = self.reg_node[s.inst].q
            else:
                effects.append(("reg_write", s.inst, args[0]))
        elif isinstance(k, FifoPrim):
            if s.method == "enq":
                ready_terms.append(nl.nonzero(self.fifo_free[s.inst]))
                effects.append(("enq", s.inst, args[0]))
            elif s.method == "deq":
                ready_terms.append(nl.nonzero(self.fifo_avail[s.inst]))
                if s.outs:
                    env[s.outs[0]] = self.fifo_first_cur[s.inst]
                effects.append(("deq", s.inst))
            elif s.method == "first":
                ready_terms.append(nl.nonzero(self.fifo_avail[s.inst]))
                env[s.outs[0]] = self.fifo_first_cur[s.inst]
            elif s.method == "flush":
                effects.append(("flush", s.inst))
            elif s.method in ("can_enq", "can_deq"):
                env[s.outs[0]] = self._read_net(s.inst, s.method)
        elif isinstance(k, ShiftPrim):
            if s.method == "push":
                effects.append(("push", s.inst, args[0]))
            else:
                env[s.outs[0]] = self._read_net(s.inst, s.method)
        elif isinstance(k, WirePrim):
            if s.method == "drive":
                effects.append(("drive", s.inst, args[0]))
            else:
                env[s.outs[0]] = self._read_net(s.inst, s.method)
        elif isinstance(k, Submodule):
            sub = next(x for x in nl.subs if x.name == s.inst)
            child = self.design.module(k.module)
            sig = child.interface.method(s.method)
            ready_terms.append(sub.imports[f"{s.method}_rdy"])
            for rp, out in zip(sig.results, s.outs):
                env[out] = sub.imports[f"{s.method}_res_{rp}"]
            effects.append(("sub_call", s.inst, s.method,
                            tuple(zip(sig.args, args))))

    def _apply_effect(self, wf: int, eff: tuple) -> None:
        nl = self.nl
        kind = eff[0]
        if kind == "reg_write":
            _, name, d = eff
            prev_en = self.reg_wen.get(name, self.zero1)
            prev_d = self.reg_wdata.get(name, nl.const(0, self.reg_node[name].width))
            self.reg_wen[name] = nl.or_(prev_en, wf)
            self.reg_wdata[name] = nl.mux(wf, d, prev_d)
        elif kind == "enq":
            _, name, d = eff
            node = self.fifo_node[name]
            self.fifo_enq_en[name] = nl.or_(self.fifo_enq_en[name], wf)
            self.fifo_enq_data[name] = nl.mux(wf, d, self.fifo_enq_data[name])
            one = nl.const(1, nl.widths[self.fifo_free[name]])
            dec = nl.op("sub", (self.fifo_free[name], one))
            self.fifo_free[name] = nl.mux(wf, dec, self.fifo_free[name])
            if node.bypass:
                inc = nl.op("add", (self.fifo_avail[name],
                                    nl.const(1, nl.widths[self.fifo_avail[name]])))
                self.fifo_avail[name] = nl.mux(wf, inc, self.fifo_avail[name])
                was_empty = nl.eq_const(node.count, 0)
                take = nl.and_(wf, was_empty)
                self.fifo_first_cur[name] = nl.mux(take, d,
                                                   self.fifo_first_cur[name])
        elif kind == "deq":
            _, name = eff
            node = self.fifo_node[name]
            one = nl.const(1, nl.widths[self.fifo_avail[name]])
            dec = nl.op("sub", (self.fifo_avail[name], one))
            self.fifo_avail[name] = nl.mux(wf, dec, self.fifo_avail[name])
            inc = nl.op("add", (self.fifo_free[name],
                                nl.const(1, nl.widths[self.fifo_free[name]])))
            self.fifo_free[name] = nl.mux(wf, inc, self.fifo_free[name])
            self.fifo_deq_en[name] = nl.or_(self.fifo_deq_en[name], wf)
        elif kind == "flush":
            _, name = eff
            node = self.fifo_node[name]
            cw = nl.widths[self.fifo_avail[name]]
            self.fifo_avail[name] = nl.mux(wf, nl.const(0, cw),
                                           self.fifo_avail[name])
            self.fifo_free[name] = nl.mux(wf, nl.const(node.depth, cw),
                                          self.fifo_free[name])
            self.fifo_flush_en[name] = nl.or_(self.fifo_flush_en[name], wf)
        elif kind == "push":
            _, name, d = eff
            self.shift_in_valid[name] = nl.or_(self.shift_in_valid[name], wf)
            self.shift_in_data[name] = nl.mux(wf, d, self.shift_in_data[name])
        elif kind == "drive":
            _, name, d = eff
            self.wire_valid[name] = nl.or_(self.wire_valid[name], wf)
            self.wire_data[name] = nl.mux(wf, d, self.wire_data[name])
        elif kind == "sub_call":
            _, inst, method, argpairs = eff
            sub = next(x for x in nl.subs if x.name == inst)
            key = f"{method}_en"
            prev = sub.drives.get(key, self.zero1)
            sub.drives[key] = nl.or_(prev, wf)
            for pname, net in argpairs:
                if pname in sub.drives:
                    sub.drives[pname] = nl.mux(wf, net, sub.drives[pname])
                else:
                    sub.drives[pname] = net

    def _finalize_state(self) -> None:
        nl = self.nl
        for node in nl.regs:
            node.en = self.reg_wen.get(node.name, self.zero1)
            node.d = self.reg_wdata.get(node.name, node.q)
        for node in nl.fifos:
            node.enq_en = self.fifo_enq_en[node.name]
            node.enq_data = self.fifo_enq_data[node.name]
            node.deq_en = self.fifo_deq_en[node.name]
            node.flush_en = self.fifo_flush_en[node.name]
        for node in nl.shifts:
            node.in_valid = self.shift_in_valid[node.name]
            node.in_data = self.shift_in_data[node.name]
            region = self.shift_region.get(node.name)
            if region is not None and region in nl.stall_nets:
                node.en = nl.not_(nl.stall_nets[region])
            else:
                node.en = nl.const(1, 1)
        # default-drive child sockets that nobody calls; pass stall wires down
        for sub in nl.subs:
            child = self.design.module(sub.module)
            cpath = f"{self.path}.{sub.name}" if self.path else sub.name
            for m in child.interface.methods:
                sub.drives.setdefault(f"{m.name}_en", self.zero1)
                for ap in m.args:
                    w = child.interface.port(ap).width
                    sub.drives.setdefault(ap, nl.const(0, w))
            for region in stall_input_regions(self.design, child,
                                              self.controllers, cpath):
                if region in nl.stall_nets:
                    sub.drives[f"stall_r{region}"] = nl.stall_nets[region]


def stall_input_regions(design: Design, mod: Module,
                        controllers: list[StallControllerInfo],
                        path: str) -> list[int]:
    """Region ids a module needs as stall input ports: regions gating its
    rules, instances, or descendants, whose controller lives in an ancestor."""
    local = {c.region for c in controllers if c.module_path == path}
    regions = set()
    for r in mod.rules:
        if r.stall_region is not None:
            regions.add(r.stall_region)
    for i in mod.instances:
        if i.stall_region is not None:
            regions.add(i.stall_region)
        if isinstance(i.kind, Submodule):
            child = design.module(i.kind.module)
            cpath = f"{path}.{i.name}" if path else i.name
            regions.update(stall_input_regions(design, child, controllers, cpath))
    return sorted(regions - local)


def lower_to_netlist(design: Design,
                     controllers: Optional[list[StallControllerInfo]] = None,
                     ) -> SynthResult:
    """Per-module netlists for a fully intra-cycle design."""
    controllers = controllers or []
    from .graph import instance_paths
    netlists: dict[str, ModuleNetlist] = {}
    for path, mod in instance_paths(design, design.top):
        if mod.name not in netlists:
            b = _Builder(design, mod, controllers, path)
            netlists[mod.name] = b.build()
    return SynthResult(netlists, design.top)
