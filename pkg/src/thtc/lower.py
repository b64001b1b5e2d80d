"""Temporal implementation: guards and channels become ordinary instances.

Per temporal edge (one predecessor declaration on one successor rule):

  delay(0)        a combinational wire: the predecessor drives valid+data,
                  the successor's guard reads valid the same cycle;
  delay(k>=1)     one k-deep shift chain carrying the valid bit and the
                  packed messages; the chain advances every cycle, so an
                  unconsumed message falls off exactly at expiry;
  channel-only    the same chain (or wire) without the valid conjunct, its
                  depth taken from the inferred region offsets;
  dyndelay(k)     a FIFO (bypass for k=0; behind a k-1 shift plus transfer
                  rule for k>=2, which realizes the minimum latency); the
                  successor's deq readiness is the latency-insensitive wait.

Stall insertion then annotates every rule and chain of a latency-sensitive
region that has boundary dyndelay edges, and emits one controller per such
region; its watch list drives the region-wide freeze in the netlist.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import graph as G
from .ir import (
    CallStep, ChannelDecl, Design, ExprStep, FifoPrim, GConst, GOp, GRead,
    GuardExpr, Instance, Module, PredDecl, RecvStep, Rule, SendStep,
    ShiftPrim, Step, Submodule, WirePrim,
)
from .sim import DEFAULT_CHANNEL_DEPTH
from .synth import StallControllerInfo


class LowerError(Exception):
    pass


@dataclass
class LowerInfo:
    # edge key (path, succ rule, alias) -> lowered instance (path, name, kind)
    edge_insts: dict[tuple, tuple] = field(default_factory=dict)
    controllers: list[StallControllerInfo] = field(default_factory=list)
    shift_chains: int = 0
    wires: int = 0
    fifos: int = 0


@dataclass
class _Edge:
    path: str
    pred: str
    succ: str
    alias: str
    kind: Optional[str]
    cycles: int
    guard_kept: bool
    channels: list[ChannelDecl]
    region: Optional[int]
    inst: str = ""
    depth: int = DEFAULT_CHANNEL_DEPTH


def lower_design(design: Design, analysis: Optional[G.Analysis] = None
                 ) -> tuple[Design, LowerInfo]:
    """lower_guards + insert_stall over every module of the design."""
    if analysis is None:
        analysis = G.analyze(design)
    if analysis.errors:
        raise LowerError("temporal errors present: " +
                         "; ".join(d.render() for d in analysis.errors))
    info = LowerInfo()
    edges = _collect_edges(design, analysis)

    lowered = design
    by_module: dict[str, list[_Edge]] = {}
    path_of_module: dict[str, str] = {}
    for e in edges:
        mod = G.module_at(design, design.top, e.path)
        prev = path_of_module.setdefault(mod.name, e.path)
        if prev != e.path:
            raise LowerError(
                f"module '{mod.name}' is instantiated more than once with "
                "temporal structure; lowering regions is per-instance")
        by_module.setdefault(mod.name, []).append(e)

    for mname, medges in by_module.items():
        mod = lowered.module(mname)
        lowered = lowered.replace_module(_lower_module(mod, medges, info))

    lowered = insert_stall(lowered, analysis, info)
    return lowered, info


def _collect_edges(design: Design, analysis: G.Analysis) -> list[_Edge]:
    timing = analysis.timing
    kept = set()
    for e in analysis.pruned.edges:
        if e.kind == "delay":
            kept.add((e.dst, e.alias))
    edges: list[_Edge] = []
    for path, mod in G.instance_paths(design, design.top):
        for rule in mod.rules:
            if rule.is_multicycle:
                raise LowerError(f"rule '{rule.id}' is still multi-cycle")
            recv_ch: dict[str, list[str]] = {}
            for s in rule.steps:
                if isinstance(s, RecvStep):
                    recv_ch.setdefault(s.pred, []).append(s.channel)
            for p in rule.preds:
                pr = mod.rule(p.pred)
                chans = [pr.channel(c) for c in recv_ch.get(p.alias, [])]
                v = (path, rule.id)
                pv = (path, p.pred)
                if p.kind is None:
                    cycles = timing.offset(v) - timing.offset(pv)
                    if cycles < 0:
                        raise LowerError(
                            f"channel from '{p.pred}' to '{rule.id}' goes "
                            "backward in time")
                    guard_kept = False
                    kind = None
                elif p.kind == "dyndelay":
                    cycles = p.cycles
                    guard_kept = True
                    kind = "dyndelay"
                else:
                    cycles = p.cycles
                    guard_kept = (v, p.alias) in kept
                    kind = "delay"
                region = None
                if kind != "dyndelay" and timing.same_region(pv, v):
                    region = timing.region_of[v]
                src_region = timing.region_of.get(pv)
                e = _Edge(path, p.pred, rule.id, p.alias, kind, cycles,
                          guard_kept, chans, region)
                if kind == "dyndelay":
                    e.region = src_region
                    depths = [c.depth for c in chans if c.depth is not None]
                    e.depth = min(depths) if depths else DEFAULT_CHANNEL_DEPTH
                edges.append(e)
    return edges


def _lower_module(mod: Module, edges: list[_Edge], info: LowerInfo) -> Module:
    instances = list(mod.instances)
    names = {i.name for i in instances}

    def fresh(base: str) -> str:
        name = base
        n = 0
        while name in names:
            n += 1
            name = f"{base}{n}"
        names.add(name)
        return name

    # new instances and transfer rules
    xfer_rules: list[Rule] = []
    for e in edges:
        if e.kind != "dyndelay" and not e.guard_kept and not e.channels:
            e.inst = ""
            continue
        w = sum(c.width for c in e.channels)
        payload = max(w, 1)
        if e.kind == "dyndelay":
            qname = fresh(f"ddq_{e.pred}_{e.succ}")
            instances.append(Instance(
                qname, FifoPrim(payload, e.depth, bypass=(e.cycles == 0))))
            info.fifos += 1
            e.inst = qname
            if e.cycles >= 2:
                sh = fresh(f"dds_{e.pred}_{e.succ}")
                instances.append(Instance(sh, ShiftPrim(payload, e.cycles - 1),
                                          stall_region=e.region))
                info.shift_chains += 1
                guard = GOp("eq", (GRead(sh, "out_valid"), GConst(1, 1)))
                xfer_rules.append(Rule(
                    id=fresh(f"xf_{e.pred}_{e.succ}"), flavor="always",
                    guard=guard,
                    steps=(CallStep(("d",), sh, "out_data", ()),
                           CallStep((), qname, "enq", ("d",))),
                    stall_region=e.region))
                e.inst = qname + "|" + sh
        elif e.cycles == 0:
            wname = fresh(f"tg_{e.pred}_{e.succ}")
            instances.append(Instance(wname, WirePrim(payload)))
            info.wires += 1
            e.inst = wname
        else:
            sname = fresh(f"tg_{e.pred}_{e.succ}")
            instances.append(Instance(sname, ShiftPrim(payload, e.cycles),
                                      stall_region=e.region))
            info.shift_chains += 1
            e.inst = sname
        info.edge_insts[(e.path, e.succ, e.alias)] = (e.path, e.inst, e.kind)

    by_pred: dict[str, list[_Edge]] = {}
    by_succ: dict[str, list[_Edge]] = {}
    for e in edges:
        if not e.inst:
            continue
        by_pred.setdefault(e.pred, []).append(e)
        by_succ.setdefault(e.succ, []).append(e)

    rules = [_lower_rule(mod, r, by_pred.get(r.id, []), by_succ.get(r.id, []))
             for r in mod.rules]
    return replace(mod, instances=tuple(instances),
                   rules=tuple(rules + xfer_rules))


def _lower_rule(mod: Module, rule: Rule, outs: list[_Edge],
                ins: list[_Edge]) -> Rule:
    if not outs and not ins and not rule.preds and not rule.channels:
        return rule

    send_vals = {s.channel: s.value for s in rule.steps
                 if isinstance(s, SendStep)}
    fresh_n = [0]

    def fresh(base: str) -> str:
        fresh_n[0] += 1
        return f"__lw{fresh_n[0]}_{base}"

    guard: GuardExpr = rule.guard
    pre_steps: list[Step] = []
    body: list[Step] = []
    recv_done: dict[tuple[str, str], tuple[str, int]] = {}

    # incoming edges: readiness conjuncts and message retrieval
    for e in ins:
        q = e.inst.split("|")[0]
        if e.kind == "dyndelay":
            pack = fresh("pk")
            pre_steps.append(CallStep((pack,), q, "deq", ()))
        elif e.cycles == 0:
            if e.guard_kept:
                guard = GOp("and", (guard,
                                    GOp("eq", (GRead(q, "read_valid"),
                                               GConst(1, 1)))))
            pack = fresh("pk")
            pre_steps.append(CallStep((pack,), q, "read_data", ()))
        else:
            if e.guard_kept:
                guard = GOp("and", (guard,
                                    GOp("eq", (GRead(q, "out_valid"),
                                               GConst(1, 1)))))
            pack = fresh("pk")
            pre_steps.append(CallStep((pack,), q, "out_data", ()))
        lo = 0
        for c in reversed(e.channels):
            recv_done[(e.alias, c.name)] = (pack, lo)
            lo += c.width
        e._pack_widths = {c.name: c.width for c in e.channels}  # type: ignore
        e._pack_name = pack  # type: ignore

    for s in rule.steps:
        if isinstance(s, RecvStep):
            e = next(x for x in ins if x.alias == s.pred)
            pack, lo = recv_done[(s.pred, s.channel)]
            w = e._pack_widths[s.channel]  # type: ignore
            body.append(ExprStep(s.out, "slice", (pack,), (lo + w - 1, lo)))
        elif isinstance(s, SendStep):
            continue
        else:
            body.append(s)

    # outgoing edges: pack and push/enq/drive
    post_steps: list[Step] = []
    for e in outs:
        if e.channels:
            if len(e.channels) == 1:
                packed = send_vals[e.channels[0].name]
            else:
                packed = send_vals[e.channels[0].name]
                for c in e.channels[1:]:
                    nxt = fresh("cat")
                    post_steps.append(ExprStep(nxt, "concat",
                                               (packed, send_vals[c.name])))
                    packed = nxt
        else:
            packed = fresh("one")
            post_steps.append(ExprStep(packed, "const", (), (1, 1)))
        parts = e.inst.split("|")
        if e.kind == "dyndelay":
            if len(parts) == 2:
                post_steps.append(CallStep((), parts[1], "push", (packed,)))
            else:
                post_steps.append(CallStep((), parts[0], "enq", (packed,)))
        elif e.cycles == 0:
            post_steps.append(CallStep((), parts[0], "drive", (packed,)))
        else:
            post_steps.append(CallStep((), parts[0], "push", (packed,)))

    return replace(rule, guard=guard,
                   steps=tuple(pre_steps + body + post_steps),
                   preds=(), channels=())


def insert_stall(design: Design, analysis: G.Analysis,
                  info: LowerInfo) -> Design:
    """Annotate region members and create one controller per region with
    boundary dyndelay edges."""
    plans = G.stall_plan(analysis.timing, analysis.graph)
    if not plans:
        return design
    mod_rule_region: dict[str, dict[str, int]] = {}
    mod_path: dict[str, str] = {}
    for plan in plans:
        for (path, rid) in plan.region.members:
            mod = G.module_at(design, design.top, path)
            prev = mod_path.setdefault(mod.name, path)
            if prev != path:
                raise LowerError(
                    f"module '{mod.name}' spans stall regions at multiple "
                    "instantiation paths")
            mod_rule_region.setdefault(mod.name, {})[rid] = plan.region.id
        watches: list[tuple[str, str]] = []
        wpath: Optional[str] = None
        for w in plan.watches:
            inst = info.edge_insts.get(w.key)
            if inst is None:
                continue
            path, name, _ = inst
            if wpath is None:
                wpath = path
            elif wpath != path:
                raise LowerError(
                    f"stall region {plan.region.id} watches edges in more "
                    "than one module")
            watches.append((w.kind, name.split("|")[0]))
        info.controllers.append(StallControllerInfo(
            plan.region.id, wpath if wpath is not None else
            plan.region.members[0][0], watches))

    out = design
    for mname, rids in mod_rule_region.items():
        mod = out.module(mname)
        rules = tuple(replace(r, stall_region=rids.get(r.id, r.stall_region))
                      for r in mod.rules)
        out = out.replace_module(replace(mod, rules=rules))
    return out
