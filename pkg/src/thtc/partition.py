"""Temporal partitioning: multi-cycle rules into intra-cycle rules.

Method-call inlining first rewrites calls to already-synthesized multi-cycle
methods into an entry call plus a result-retrieval call.  Partitioning then
splits each timed rule into one intra-cycle rule per timing slot:

  * consecutive slots of one timing variable chain through delay(k) guards,
  * a slot opening a new timing variable hangs off its anchor slot with a
    dyndelay(0) guard (the latency-insensitive wait),
  * every value crossing a slot boundary travels in a channel, declared on
    the producing slot and received through a channel-only predecessor.

A partitioned multi-cycle method keeps its arguments on a new entry method
`<name>_` and exposes its results on a `finish` method; other rules that
referenced the original rule (guards or channels) are rewritten to point at
the partitioned pieces: eager guards anchor at the entry rule, plain guards
at the completion rule, and channel accesses at each channel's new owner.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .ir import (
    CallStep, ChannelDecl, Design, ExprStep, Interface, MethodSig, Module,
    Port, PredDecl, RecvStep, Rule, SendStep, Step, Submodule, TimingLabel,
)
from .schedule import rule_value_widths


class PartitionError(Exception):
    pass


@dataclass
class PartitionInfo:
    """How one multi-cycle rule was split."""
    original: str
    entry_rule: str
    completion_rule: str
    entry_method: Optional[str] = None
    result_method: Optional[str] = None
    channel_owner: dict[str, str] = field(default_factory=dict)
    created_preds: set = field(default_factory=set)   # (rule id, alias)


# ---------------------------------------------------------------------------
# Inlining
# ---------------------------------------------------------------------------


def inline_calls(design: Design, mod: Module, rule: Rule,
                 renames: dict[tuple[str, str], tuple[str, str]]) -> Rule:
    """Rewrite multi-cycle method calls to entry + result-retrieval calls.

    `renames` maps (submodule, original method) to (entry, result) method
    names of the already-partitioned callee.
    """
    if not rule.is_multicycle:
        return rule
    steps: list[Step] = []
    for s in rule.steps:
        if isinstance(s, CallStep):
            inst = mod.instance(s.inst)
            if inst is not None and isinstance(inst.kind, Submodule):
                key = (inst.kind.module, s.method)
                if key in renames:
                    entry, result = renames[key]
                    steps.append(replace(s, outs=(), method=entry))
                    steps.append(CallStep(s.outs, s.inst, result, (),
                                          s.start, s.finish))
                    continue
        steps.append(s)
    return replace(rule, steps=tuple(steps))


# ---------------------------------------------------------------------------
# Partitioning one timed rule
# ---------------------------------------------------------------------------


def _var_order(rule: Rule) -> list[str]:
    seen: list[str] = []
    for s in rule.steps:
        for lab in (s.start, s.finish):
            if lab is not None and lab.var not in seen:
                seen.append(lab.var)
    return seen


def partition_rule(design: Design, mod: Module, rule: Rule
                   ) -> tuple[list[Rule], PartitionInfo]:
    """Split one timed multi-cycle rule into intra-cycle rules."""
    if not (rule.is_multicycle and rule.timed):
        raise PartitionError(f"rule '{rule.id}' is not a timed multi-cycle rule")
    widths = rule_value_widths(design, mod, rule)
    varord = _var_order(rule)
    vpos = {v: i for i, v in enumerate(varord)}

    slots: list[tuple[str, int]] = []
    groups: dict[tuple[str, int], list[int]] = {}
    for i, s in enumerate(rule.steps):
        key = (s.start.var, s.start.offset)
        if key not in groups:
            groups[key] = []
            slots.append(key)
        groups[key].append(i)
    slots.sort(key=lambda k: (vpos[k[0]], k[1]))
    root_var = varord[0] if varord else "G"

    # external predecessors must be consumed in the entry slot
    entry_slot = slots[0]
    for i, s in enumerate(rule.steps):
        if isinstance(s, RecvStep) and (s.start.var, s.start.offset) != entry_slot:
            raise PartitionError(
                f"rule '{rule.id}': recv from external predecessor "
                f"'{s.pred}' outside the entry slot is not supported")

    producer: dict[str, tuple[tuple[str, int], int]] = {}
    for i, s in enumerate(rule.steps):
        outs = (s.out,) if isinstance(s, (ExprStep, RecvStep)) else \
               (s.outs if isinstance(s, CallStep) else ())
        for o in outs:
            producer[o] = ((s.start.var, s.start.offset), i)

    ambient = set(widths) - set(producer)

    def slot_rule_name(idx: int) -> str:
        if idx == 0:
            return f"{rule.method}_" if rule.method is not None else rule.id
        return f"{rule.id}__s{idx}"

    names = {slot: slot_rule_name(i) for i, slot in enumerate(slots)}

    # values needed across slot boundaries (ambient args only reach the entry)
    needs: dict[tuple[str, int], list[str]] = {slot: [] for slot in slots}
    for i, s in enumerate(rule.steps):
        slot = (s.start.var, s.start.offset)
        deps = []
        if isinstance(s, (ExprStep, CallStep)):
            deps = list(s.args)
        elif isinstance(s, SendStep):
            deps = [s.value]
        for a in deps:
            if a in ambient:
                src_slot = entry_slot
            else:
                src_slot = producer[a][0]
            if src_slot != slot and a not in needs[slot]:
                needs[slot].append(a)
    result_needs: list[str] = []
    if rule.results:
        for v in rule.results:
            result_needs.append(v)

    # channels created on producing slots: value -> channel name
    xch: dict[tuple[str, int], list[str]] = {slot: [] for slot in slots}
    for slot in slots:
        for v in needs[slot]:
            src = entry_slot if v in ambient else producer[v][0]
            if v not in xch[src]:
                xch[src].append(v)

    new_rules: list[Rule] = []
    info = PartitionInfo(rule.id, names[slots[0]], names[slots[-1]],
                         entry_method=(f"{rule.method}_" if rule.method else None),
                         result_method=("finish" if rule.method else None))

    prev_on_var: dict[str, tuple[str, int]] = {}
    for idx, slot in enumerate(slots):
        var, off = slot
        steps: list[Step] = []
        preds: list[PredDecl] = []
        channels: list[ChannelDecl] = []
        guard = rule.guard if idx == 0 else None

        if idx == 0:
            preds.extend(rule.preds)
        if var == root_var and idx > 0 or (var != root_var and var in prev_on_var):
            pvar, poff = prev_on_var[var] if var in prev_on_var else (None, None)
        # chain / anchor predecessors
        if idx > 0:
            if var in prev_on_var:
                psl = prev_on_var[var]
                preds.append(PredDecl("__chain", names[psl], "delay",
                                      off - psl[1]))
                info.created_preds.add((names[slot], "__chain"))
            else:
                # first slot of a fresh variable: wait on its anchor slot
                anchor = _anchor_slot(rule, var, producer, entry_slot)
                preds.append(PredDecl("__li", names[anchor], "dyndelay", 0))
                info.created_preds.add((names[slot], "__li"))

        # cross-slot inputs arrive under fresh local names
        local: dict[str, str] = {}
        for v in needs[slot]:
            src = entry_slot if v in ambient else producer[v][0]
            alias = f"__v_{v}"
            local[v] = f"xv_{v}"
            preds.append(PredDecl(alias, names[src], None, 0))
            info.created_preds.add((names[slot], alias))
            steps.append(RecvStep(local[v], alias, f"x_{v}"))

        for i in groups[slot]:
            steps.append(_remap(_strip(rule.steps[i]), local))

        for v in xch[slot]:
            channels.append(ChannelDecl(f"x_{v}", widths[v]))
            steps.append(SendStep(f"x_{v}", v))

        # original output channels move to the slot containing their send
        own_channels = []
        for i in groups[slot]:
            s = rule.steps[i]
            if isinstance(s, SendStep) and rule.channel(s.channel) is not None:
                own_channels.append(rule.channel(s.channel))
                info.channel_owner[s.channel] = names[slot]
        channels = own_channels + channels

        flavor = "method" if (idx == 0 and rule.method) else "always"
        new_rules.append(Rule(
            id=names[slot], flavor=flavor,
            guard=guard if guard is not None else rule.guard if idx == 0 else
            _true(), steps=tuple(steps), preds=tuple(preds),
            channels=tuple(channels),
            method=(info.entry_method if idx == 0 and rule.method else None),
            timed=False, results=()))

        prev_on_var[var] = slot

    # result-retrieval method; with no result values it signals completion
    if rule.method is not None:
        res_slot = slots[-1]
        best = (-1, -1)
        for v in rule.results:
            src = entry_slot if v in ambient else producer[v][0]
            key = (vpos[src[0]], src[1])
            if key >= best:
                best = key
                res_slot = src
        preds: list[PredDecl] = []
        steps2: list[Step] = []
        same_var = res_slot[0] == root_var
        kind = "delay" if same_var else "dyndelay"
        cyc = 0
        preds.append(PredDecl("__fin", names[res_slot], kind, cyc))
        info.created_preds.add(("finish", "__fin"))
        recvd: dict[str, str] = {}
        for v in rule.results:
            src = entry_slot if v in ambient else producer[v][0]
            if v not in xch[src]:
                xch[src].append(v)
                owner = next(r for r in new_rules if r.id == names[src])
                i = new_rules.index(owner)
                sv = v
                new_rules[i] = replace(
                    owner,
                    channels=owner.channels + (ChannelDecl(f"x_{v}", widths[v]),),
                    steps=owner.steps + (SendStep(f"x_{v}", sv),))
            alias = f"__r_{v}"
            if src == res_slot:
                alias = "__fin"
            elif not any(p.alias == alias for p in preds):
                preds.append(PredDecl(alias, names[src], None, 0))
                info.created_preds.add(("finish", alias))
            if v not in recvd:
                recvd[v] = f"xv_{v}"
                steps2.append(RecvStep(recvd[v], alias, f"x_{v}"))
        new_rules.append(Rule(
            id="finish", flavor="method", guard=_true(), steps=tuple(steps2),
            preds=tuple(preds), channels=(), method="finish", timed=False,
            results=tuple(recvd[v] for v in rule.results)))
        info.completion_rule = "finish"
    return new_rules, info


def _anchor_slot(rule: Rule, var: str, producer, entry_slot):
    """Slot holding the step whose finish opened timing variable `var`."""
    for s in rule.steps:
        if s.finish is not None and s.finish.var == var:
            return (s.start.var, s.start.offset)
    return entry_slot


def _strip(s: Step) -> Step:
    return replace(s, start=None, finish=None)


def _remap(s: Step, local: dict[str, str]) -> Step:
    if not local:
        return s
    if isinstance(s, (ExprStep, CallStep)):
        return replace(s, args=tuple(local.get(a, a) for a in s.args))
    if isinstance(s, SendStep):
        return replace(s, value=local.get(s.value, s.value))
    return s


def _true():
    from .ir import GConst
    return GConst(1, 1)


# ---------------------------------------------------------------------------
# Module-level partitioning
# ---------------------------------------------------------------------------


def partition_module(design: Design, mod: Module,
                     infos: list[PartitionInfo]) -> Module:
    """Split every timed multi-cycle rule of `mod` and rewrite references.

    `infos` receives one PartitionInfo per partitioned rule.
    """
    new_rules: list[Rule] = []
    by_orig: dict[str, PartitionInfo] = {}
    for rule in mod.rules:
        if rule.is_multicycle:
            if not rule.timed:
                raise PartitionError(
                    f"rule '{rule.id}' is untimed; schedule it first")
            parts, info = partition_rule(design, mod, rule)
            new_rules.extend(parts)
            by_orig[rule.id] = info
            infos.append(info)
        else:
            new_rules.append(rule)

    if not by_orig:
        return replace(mod, rules=tuple(new_rules))

    # rewrite predecessors and channel accesses that referenced originals
    final_rules: list[Rule] = []
    for rule in new_rules:
        if rule.id in {i.entry_rule for i in by_orig.values()} or \
           rule.id in {r.id for infos_ in [by_orig] for r in []}:
            pass
        final_rules.append(_rewrite_refs(rule, by_orig))

    itf = _rewrite_interface(mod.interface, mod, by_orig)
    precs = tuple((by_orig[a].entry_rule if a in by_orig else a,
                   by_orig[b].entry_rule if b in by_orig else b)
                  for a, b in mod.precs)
    return replace(mod, interface=itf, rules=tuple(final_rules), precs=precs)


def _rewrite_refs(rule: Rule, by_orig: dict[str, PartitionInfo]) -> Rule:
    created = set()
    for info in by_orig.values():
        created.update(info.created_preds)
    todo = [p for p in rule.preds
            if p.pred in by_orig and (rule.id, p.alias) not in created]
    if not todo:
        return rule
    # channels a recv pulls through each alias
    recv_ch: dict[str, list[str]] = {}
    for s in rule.steps:
        if isinstance(s, RecvStep):
            recv_ch.setdefault(s.pred, []).append(s.channel)

    preds: list[PredDecl] = []
    alias_map: dict[tuple[str, str], str] = {}
    for p in rule.preds:
        if p.pred not in by_orig or (rule.id, p.alias) in created:
            preds.append(p)
            continue
        info = by_orig[p.pred]
        if p.kind == "eagerdelay":
            gtarget = info.entry_rule
            gkind = "delay"
        elif p.kind is not None:
            gtarget = info.completion_rule
            gkind = p.kind
        else:
            gtarget = None
            gkind = None
        used = recv_ch.get(p.alias, [])
        owners = {ch: info.channel_owner.get(ch) for ch in used}
        if gtarget is not None:
            preds.append(PredDecl(p.alias, gtarget, gkind, p.cycles))
        for ch in used:
            owner = owners[ch]
            if owner is None:
                raise PartitionError(
                    f"rule '{rule.id}' receives '{ch}' from '{p.pred}' but the "
                    "partitioned rule never sends it")
            if gtarget == owner:
                alias_map[(p.alias, ch)] = p.alias
            else:
                alias = f"{p.alias}__{ch}"
                alias_map[(p.alias, ch)] = alias
                preds.append(PredDecl(alias, owner, None, 0))

    steps = []
    for s in rule.steps:
        if isinstance(s, RecvStep) and (s.pred, s.channel) in alias_map:
            steps.append(replace(s, pred=alias_map[(s.pred, s.channel)]))
        else:
            steps.append(s)
    return replace(rule, preds=tuple(preds), steps=tuple(steps))


def _rewrite_interface(itf: Interface, mod: Module,
                       by_orig: dict[str, PartitionInfo]) -> Interface:
    part_methods = {}
    for info in by_orig.values():
        if info.entry_method is not None:
            orig_rule = info.original
            part_methods[_orig_method(mod, orig_rule)] = info
    if not part_methods:
        return itf
    methods: list[MethodSig] = []
    for m in itf.methods:
        if m.name in part_methods:
            info = part_methods[m.name]
            if itf.method(info.result_method) is not None:
                raise PartitionError(
                    f"result method name '{info.result_method}' already in use")
            methods.append(MethodSig(info.entry_method, m.args, ()))
            methods.append(MethodSig(info.result_method, (), m.results))
        else:
            methods.append(m)
    return Interface(itf.name, itf.ports, tuple(methods))


def _orig_method(mod: Module, rule_id: str) -> Optional[str]:
    r = mod.rule(rule_id)
    return r.method if r is not None else rule_id
