"""Temporal rule graph and inter-cycle analyses.

The graph flattens the instance hierarchy of one module: vertices are the
intra-cycle rules of the module and (recursively, name-prefixed) of its
submodule instances; edges are method calls, delay guards, and dyndelay
guards.  A latency-sensitive region is a connected component under call and
delay edges; every region carries inferred per-rule cycle offsets.

Analyses: timing inference (offset solve), rule coordination checking
(delay guards against implied offsets), temporal relationship pruning
(guard edges made redundant by calls or shorter guards), and false-static
detection (a surviving delay guard next to any other fallible condition).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import prims
from .ir import (
    CallStep, Design, Diagnostic, GConst, Module, RecvStep, Rule, SendStep,
    Submodule,
)

Vertex = tuple[str, str]          # (instance path, rule id); "" = analyzed top


class GraphError(Exception):
    pass


@dataclass(frozen=True)
class Edge:
    src: Vertex
    dst: Vertex
    kind: str                     # "call" | "delay" | "dyndelay"
    cycles: int = 0
    alias: Optional[str] = None   # pred alias on dst, for guard edges


@dataclass(frozen=True)
class ChanEdge:
    """Channel-only link (pred declared without a temporal guard)."""
    src: Vertex
    dst: Vertex
    alias: str


@dataclass
class Region:
    id: int
    members: list[Vertex]
    root: Vertex
    offsets: dict[Vertex, int]
    boundary: list[Edge] = field(default_factory=list)   # dyndelay edges touching region

    def has_delay_edges(self, graph: "TemporalRuleGraph") -> bool:
        mem = set(self.members)
        return any(e.kind == "delay" and e.src in mem and e.dst in mem
                   for e in graph.edges)


@dataclass
class TemporalRuleGraph:
    design: Design
    top: str
    vertices: list[Vertex]
    edges: list[Edge]
    chan_edges: list[ChanEdge]

    def rule_of(self, v: Vertex) -> Rule:
        path, rid = v
        mod = module_at(self.design, self.top, path)
        return mod.rule(rid)

    def without_edges(self, drop: set[Edge]) -> "TemporalRuleGraph":
        return TemporalRuleGraph(self.design, self.top, list(self.vertices),
                                 [e for e in self.edges if e not in drop],
                                 list(self.chan_edges))


def vname(v: Vertex) -> str:
    path, rid = v
    return f"{path}.{rid}" if path else rid


def module_at(design: Design, top: str, path: str) -> Module:
    mod = design.module(top)
    if path:
        for part in path.split("."):
            inst = mod.instance(part)
            mod = design.module(inst.kind.module)
    return mod


def instance_paths(design: Design, top: str) -> list[tuple[str, Module]]:
    """(path, module) pairs, submodules before their parents (postorder)."""
    out: list[tuple[str, Module]] = []

    def walk(path: str, mod: Module) -> None:
        for inst in mod.instances:
            if isinstance(inst.kind, Submodule):
                sub = design.module(inst.kind.module)
                walk(f"{path}.{inst.name}" if path else inst.name, sub)
        out.append((path, mod))

    walk("", design.module(top))
    return out


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def build_graph(design: Design, top: Optional[str] = None) -> TemporalRuleGraph:
    """Flattened temporal rule graph for `top` (default: design top).

    Requires every multi-cycle rule to have been scheduled and partitioned
    away; raises GraphError otherwise.
    """
    topname = top or design.top
    vertices: list[Vertex] = []
    edges: list[Edge] = []
    chans: list[ChanEdge] = []

    for path, mod in instance_paths(design, topname):
        for r in mod.rules:
            if r.is_multicycle:
                which = "untimed" if not r.timed else "timed"
                hint = ("run the schedule pass first" if which == "untimed"
                        else "run the partition pass first")
                raise GraphError(
                    f"{vname((path, r.id))}: {which} multi-cycle rule present; {hint}")
            vertices.append((path, r.id))

    vset = set(vertices)
    for path, mod in instance_paths(design, topname):
        for r in mod.rules:
            v = (path, r.id)
            for p in r.preds:
                src = (path, p.pred)
                if p.kind is None:
                    chans.append(ChanEdge(src, v, p.alias))
                elif p.kind == "dyndelay":
                    edges.append(Edge(src, v, "dyndelay", p.cycles, p.alias))
                else:
                    # eagerdelay anchors at a multicycle predecessor's entry;
                    # after partitioning it has been rewritten to delay.
                    edges.append(Edge(src, v, "delay", p.cycles, p.alias))
            for s in r.steps:
                if isinstance(s, CallStep):
                    inst = mod.instance(s.inst)
                    if inst is not None and isinstance(inst.kind, Submodule):
                        cpath = f"{path}.{s.inst}" if path else s.inst
                        cv = (cpath, s.method)
                        sub = design.module(inst.kind.module)
                        mr = sub.method_rule(s.method)
                        if mr is not None and (cpath, mr.id) in vset:
                            edges.append(Edge(v, (cpath, mr.id), "call", 0))
    return TemporalRuleGraph(design, topname, vertices, edges, chans)


# ---------------------------------------------------------------------------
# Timing inference
# ---------------------------------------------------------------------------


class _OffsetUF:
    """Union-find with relative offsets: offset(x) - offset(root(x)) = delta."""

    def __init__(self, items: list[Vertex]):
        self.parent: dict[Vertex, Vertex] = {v: v for v in items}
        self.delta: dict[Vertex, int] = {v: 0 for v in items}

    def find(self, v: Vertex) -> tuple[Vertex, int]:
        if self.parent[v] == v:
            return v, 0
        root, d = self.find(self.parent[v])
        self.parent[v] = root
        self.delta[v] += d
        return root, self.delta[v]

    def union(self, a: Vertex, b: Vertex, k: int) -> Optional[int]:
        """Require offset(b) - offset(a) == k.  Returns the existing
        difference when a and b are already joined and it disagrees."""
        ra, da = self.find(a)
        rb, db = self.find(b)
        if ra == rb:
            have = db - da
            return None if have == k else have
        self.parent[rb] = ra
        self.delta[rb] = da + k - db
        return None


@dataclass
class Timing:
    regions: list[Region]
    region_of: dict[Vertex, int]
    diagnostics: list[Diagnostic]

    def offset(self, v: Vertex) -> int:
        return self.regions[self.region_of[v]].offsets[v]

    def same_region(self, a: Vertex, b: Vertex) -> bool:
        return self.region_of.get(a) == self.region_of.get(b)


def infer_timing(graph: TemporalRuleGraph) -> Timing:
    """Solve per-region cycle offsets.

    Call edges equate offsets (a caller fires with its callee); delay edges
    fix the difference.  Call edges are merged first so that the offsets
    implied by callees are authoritative; a delay guard that then disagrees
    is reported by check_coordination.
    """
    uf = _OffsetUF(graph.vertices)
    mismatched: list[tuple[Edge, int]] = []
    for e in graph.edges:
        if e.kind == "call":
            have = uf.union(e.src, e.dst, 0)
            if have is not None:
                mismatched.append((e, have))
    for e in graph.edges:
        if e.kind == "delay":
            have = uf.union(e.src, e.dst, e.cycles)
            if have is not None:
                mismatched.append((e, have))

    groups: dict[Vertex, list[Vertex]] = {}
    for v in graph.vertices:
        root, _ = uf.find(v)
        groups.setdefault(root, []).append(v)

    order = {v: i for i, v in enumerate(graph.vertices)}
    regions: list[Region] = []
    region_of: dict[Vertex, int] = {}
    for root in sorted(groups, key=lambda v: order[v]):
        members = sorted(groups[root], key=lambda v: order[v])
        rel = {v: uf.find(v)[1] for v in members}
        base = min(rel.values())
        offsets = {v: rel[v] - base for v in members}
        rid = len(regions)
        zero = [v for v in members if offsets[v] == 0]
        regions.append(Region(rid, members, zero[0], offsets))
        for v in members:
            region_of[v] = rid

    for r in regions:
        mem = set(r.members)
        for e in graph.edges:
            if e.kind == "dyndelay" and (e.src in mem) != (e.dst in mem):
                if e not in r.boundary:
                    r.boundary.append(e)
            elif e.kind == "dyndelay" and e.src in mem and e.dst in mem:
                # dyndelay inside one region still splits timebases at the
                # token level; keep it on the boundary list of its region.
                r.boundary.append(e)

    diags: list[Diagnostic] = []
    for e, have in mismatched:
        path, rid = e.dst
        mod = module_at(graph.design, graph.top, path)
        if e.kind == "delay":
            diags.append(Diagnostic(
                "error", "TemporalError", mod.name, rid,
                f"temporal guard {e.alias or ''} delay({e.cycles}) from "
                f"'{vname(e.src)}' mismatches the inferred delay {have}",
                fix=have))
        else:
            diags.append(Diagnostic(
                "error", "TemporalError", mod.name, rid,
                f"call paths imply conflicting offsets for '{vname(e.dst)}' "
                f"(difference {have} vs 0)"))
    return Timing(regions, region_of, diags)


def check_coordination(graph: TemporalRuleGraph, timing: Timing) -> list[Diagnostic]:
    """Coordination diagnostics: every delay guard must match the offsets
    implied by the rest of its region."""
    return list(timing.diagnostics)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


def _connected_without(graph: TemporalRuleGraph, skip: set[Edge],
                       a: Vertex, b: Vertex) -> bool:
    adj: dict[Vertex, list[Vertex]] = {}
    for e in graph.edges:
        if e.kind == "dyndelay" or e in skip:
            continue
        adj.setdefault(e.src, []).append(e.dst)
        adj.setdefault(e.dst, []).append(e.src)
    seen = {a}
    work = [a]
    while work:
        v = work.pop()
        if v == b:
            return True
        for w in adj.get(v, []):
            if w not in seen:
                seen.add(w)
                work.append(w)
    return a == b


def prune(graph: TemporalRuleGraph, timing: Timing) -> TemporalRuleGraph:
    """Remove redundant delay guard edges.

    A rule whose firing time is already implied by one of its callees loses
    every delay guard; otherwise all but the shortest-delay guard go.  Only
    guards are removed; channel links are untouched.
    """
    drop: set[Edge] = set()
    by_dst: dict[Vertex, list[Edge]] = {}
    for e in graph.edges:
        if e.kind == "delay":
            by_dst.setdefault(e.dst, []).append(e)
    for v in graph.vertices:
        incoming = by_dst.get(v, [])
        if not incoming:
            continue
        root = timing.regions[timing.region_of[v]].root
        implied = False
        if any(e.kind == "call" and e.src == v for e in graph.edges):
            implied = _connected_without(graph, set(incoming), v, root)
        if implied:
            drop.update(incoming)
        elif len(incoming) > 1:
            keep = min(incoming, key=lambda e: (e.cycles, graph.edges.index(e)))
            drop.update(e for e in incoming if e is not keep)
    return graph.without_edges(drop)


# ---------------------------------------------------------------------------
# False-static detection
# ---------------------------------------------------------------------------


def _call_can_fail(design: Design, mod: Module, rule: Rule) -> bool:
    from .ir import FifoPrim

    for path, kind, m in prims.rule_touches(design, mod, rule):
        if isinstance(kind, Submodule):
            sub = design.module(kind.module)
            mr = sub.method_rule(m) if sub is not None else None
            if mr is not None and (mr.preds or mr.guard != GConst(1, 1)):
                return True
        elif isinstance(kind, FifoPrim) and m in ("enq", "deq", "first"):
            return True
    return False


def _sends_into_dyndelay(graph: TemporalRuleGraph, v: Vertex) -> bool:
    return any(e.kind == "dyndelay" and e.src == v for e in graph.edges)


def check_false_static(graph: TemporalRuleGraph, design: Design) -> list[Diagnostic]:
    """Warn when a surviving delay guard coexists with any other fallible
    guard condition; the message recommends dyndelay."""
    diags: list[Diagnostic] = []
    guarded: dict[Vertex, list[Edge]] = {}
    for e in graph.edges:
        if e.kind == "delay":
            guarded.setdefault(e.dst, []).append(e)
    for v in graph.vertices:
        if v not in guarded:
            continue
        path, rid = v
        mod = module_at(design, graph.top, path)
        rule = mod.rule(rid)
        reasons: list[str] = []
        if rule.guard != GConst(1, 1):
            reasons.append("a boolean guard")
        if _call_can_fail(design, mod, rule):
            reasons.append("a callee that can be unready")
        if _sends_into_dyndelay(graph, v):
            reasons.append("a send into a latency-insensitive channel")
        if reasons:
            diags.append(Diagnostic(
                "warning", "FalseStatic", mod.name, rid,
                f"delay guard together with {' and '.join(reasons)} risks "
                "silent message expiry; consider dyndelay"))
    return diags


# ---------------------------------------------------------------------------
# Full analysis driver and stall planning
# ---------------------------------------------------------------------------


@dataclass
class Watch:
    kind: str          # "recv_empty" | "send_full"
    edge: Edge

    @property
    def key(self) -> tuple[str, str, str]:
        path, rid = self.edge.dst
        return (path, rid, self.edge.alias or "")


@dataclass
class RegionPlan:
    region: Region
    watches: list[Watch]


@dataclass
class Analysis:
    graph: TemporalRuleGraph
    timing: Timing
    pruned: TemporalRuleGraph
    errors: list[Diagnostic]
    warnings: list[Diagnostic]

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return self.errors + self.warnings


def analyze(design: Design, top: Optional[str] = None) -> Analysis:
    graph = build_graph(design, top)
    timing = infer_timing(graph)
    errors = check_coordination(graph, timing)
    if errors:
        return Analysis(graph, timing, graph, errors, [])
    pruned = prune(graph, timing)
    warnings = check_false_static(pruned, design)
    return Analysis(graph, timing, pruned, errors, warnings)


def stall_plan(timing: Timing, graph: TemporalRuleGraph) -> list[RegionPlan]:
    """Which regions need a stall controller and what each one watches.

    Every region with at least one boundary dyndelay edge gets a controller.
    It watches (a) member sends into dyndelay edges, since an unconsumed
    latency-sensitive token behind a full channel would expire, and (b)
    member receives over dyndelay edges when the receiver sits mid-chain
    (has an in-region delay guard): its token wave must freeze until data
    arrives.  Region roots gate themselves and are not watched.
    """
    plans: list[RegionPlan] = []
    for region in timing.regions:
        if not region.boundary:
            continue
        mem = set(region.members)
        watches: list[Watch] = []
        for e in region.boundary:
            if e.src in mem and e.dst not in mem:
                watches.append(Watch("send_full", e))
            elif e.dst in mem:
                mid = any(x.kind == "delay" and x.dst == e.dst
                          and x.src in mem for x in graph.edges)
                if mid:
                    watches.append(Watch("recv_empty", e))
        plans.append(RegionPlan(region, watches))
    return plans


# ---------------------------------------------------------------------------
# DOT emission
# ---------------------------------------------------------------------------


def to_dot(graph: TemporalRuleGraph, timing: Optional[Timing] = None) -> str:
    """DOT rendering: solid call edges, dashed delay(k) labeled k, dotted
    dyndelay; regions as clusters."""
    if timing is None:
        timing = infer_timing(graph)
    out = ["digraph temporal_rules {", "  rankdir=LR;"]
    idx = {v: f"n{i}" for i, v in enumerate(graph.vertices)}
    for region in timing.regions:
        out.append(f"  subgraph cluster_{region.id} {{")
        out.append(f'    label="region {region.id}";')
        for v in region.members:
            off = region.offsets[v]
            out.append(f'    {idx[v]} [label="{vname(v)}\\n+{off}"];')
        out.append("  }")
    for e in graph.edges:
        if e.kind == "call":
            attr = "style=solid"
        elif e.kind == "delay":
            attr = f'style=dashed, label="{e.cycles}"'
        else:
            attr = f'style=dotted, label="{e.cycles}"'
        out.append(f"  {idx[e.src]} -> {idx[e.dst]} [{attr}];")
    for c in graph.chan_edges:
        out.append(f'  {idx[c.src]} -> {idx[c.dst]} [style=dotted, color=gray, '
                   f'label="chan"];')
    out.append("}")
    return "\n".join(out) + "\n"
