"""Temporal scheduling: timing labels for untimed multi-cycle rules.

The scheduler walks the body in program order and gives each action the
earliest slot satisfying both dependency families:

  data dependency      a step starts no earlier than every producer finishes;
  physical timing      the accumulated combinational delay of any dependency
                       path inside one slot stays within the clock period,
                       otherwise the step is retimed into the next cycle.

A call to a latency-sensitive method finishes a fixed number of cycles after
it starts; a call to a latency-insensitive method gets a fresh timing
variable for its finish and everything depending on it moves to the new
timebase.  State-mutating calls keep body order, calls that conflict on
shared state never share a slot, and pure expressions float.

verify_schedule is the independent checker: it re-walks every dependency
path of a labeled rule and reports violations instead of fixing them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import prims
from .delays import DelayModel
from .ir import (
    CallStep, Design, ExprStep, Module, RecvStep, Rule, SendStep, Step,
    Submodule, TimingLabel, expr_width, method_widths, _ambient_values,
)


class ScheduleError(Exception):
    pass


@dataclass(frozen=True)
class MethodSummary:
    """Latency summary of a multi-cycle method after synthesis."""
    entry: str
    result: Optional[str]
    kind: str            # "LS" | "LI"
    latency: int = 0     # LS only


@dataclass
class VarInfo:
    name: str
    lower_bounds: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class Schedule:
    rule_id: str
    starts: list[TimingLabel]
    finishes: list[Optional[TimingLabel]]
    vars: list[VarInfo]

    def var(self, name: str) -> VarInfo:
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)

    def label_ge(self, a: TimingLabel, b: TimingLabel) -> bool:
        """Is label `a` provably at or after label `b`?"""
        if a.var == b.var:
            return a.offset >= b.offset
        best: dict[str, int] = {a.var: a.offset}
        work = [(a.var, a.offset)]
        while work:
            var, off = work.pop()
            for pvar, k in self.var(var).lower_bounds:
                cand = off + k
                if pvar not in best or cand > best[pvar]:
                    best[pvar] = cand
                    work.append((pvar, cand))
        return b.var in best and best[b.var] >= b.offset

    def apply(self, rule: Rule) -> Rule:
        steps = []
        for s, st, fin in zip(rule.steps, self.starts, self.finishes):
            steps.append(replace(s, start=st,
                                 finish=None if fin == st else fin))
        return replace(rule, steps=tuple(steps), timed=True)

    def slot_table(self) -> list[tuple[str, int, list[int]]]:
        slots: dict[tuple[str, int], list[int]] = {}
        for i, lab in enumerate(self.starts):
            slots.setdefault((lab.var, lab.offset), []).append(i)
        order = {v.name: i for i, v in enumerate(self.vars)}
        return [(v, o, idxs) for (v, o), idxs in
                sorted(slots.items(), key=lambda kv: (order[kv[0][0]], kv[0][1]))]


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def rule_value_widths(design: Design, mod: Module, rule: Rule) -> dict[str, int]:
    env = _ambient_values(mod, rule)
    for st in rule.steps:
        if isinstance(st, ExprStep):
            env[st.out] = expr_width(st.op, tuple(env[a] for a in st.args),
                                     st.params)
        elif isinstance(st, CallStep):
            inst = mod.instance(st.inst)
            mw = method_widths(design, mod, inst, st.method, prims)
            for o, w in zip(st.outs, mw[1]):
                env[o] = w
        elif isinstance(st, RecvStep):
            pd = rule.pred_decl(st.pred)
            env[st.out] = mod.rule(pd.pred).channel(st.channel).width
    return env


def step_delay(model: DelayModel, s: Step, widths: dict[str, int]) -> float:
    if isinstance(s, ExprStep):
        ws = tuple(widths[a] for a in s.args)
        w = max(ws + (widths[s.out],)) if ws else widths[s.out]
        return model.delta(s.op, w)
    return model.call_delay


def _mutates(design: Design, mod: Module, s: Step) -> bool:
    if isinstance(s, SendStep):
        return True
    if not isinstance(s, CallStep):
        return False
    inst = mod.instance(s.inst)
    if isinstance(inst.kind, Submodule):
        return not prims.is_pure_method(design, mod, inst, s.method)
    table = prims.prim_methods(inst.kind)
    return not table[s.method][2]


def _call_summary(mod: Module, s: CallStep, summaries: dict):
    inst = mod.instance(s.inst)
    if inst is None or not isinstance(inst.kind, Submodule):
        return None
    return summaries.get((inst.kind.module, s.method))


def _result_index(summaries: dict) -> dict:
    """(module, result method) -> entry summary, for pairing result calls."""
    out = {}
    for (modname, _), summ in summaries.items():
        if summ.result is not None:
            out[(modname, summ.result)] = summ
    return out


def _as_result_call(mod: Module, s: CallStep, summaries: dict):
    inst = mod.instance(s.inst)
    if inst is None or not isinstance(inst.kind, Submodule):
        return None
    return _result_index(summaries).get((inst.kind.module, s.method))


def _step_deps(s: Step) -> tuple[str, ...]:
    if isinstance(s, ExprStep):
        return s.args
    if isinstance(s, CallStep):
        return s.args
    if isinstance(s, SendStep):
        return (s.value,)
    return ()


def _step_outs(s: Step) -> tuple[str, ...]:
    if isinstance(s, ExprStep):
        return (s.out,)
    if isinstance(s, CallStep):
        return s.outs
    if isinstance(s, RecvStep):
        return (s.out,)
    return ()


# ---------------------------------------------------------------------------
# ASAP scheduling with retiming
# ---------------------------------------------------------------------------


def schedule_rule(design: Design, mod: Module, rule: Rule,
                  summaries: Optional[dict] = None,
                  model: Optional[DelayModel] = None) -> Schedule:
    """Custom ASAP schedule for one untimed multi-cycle rule."""
    summaries = summaries or {}
    model = model or DelayModel()
    if not rule.is_multicycle:
        raise ScheduleError(f"rule '{rule.id}' is not multi-cycle")
    if rule.timed:
        raise ScheduleError(f"rule '{rule.id}' is already timed")

    widths = rule_value_widths(design, mod, rule)
    sched = Schedule(rule.id, [], [], [VarInfo("G")])
    fresh_n = 0

    def fresh_var(bounds: list[tuple[str, int]]) -> str:
        nonlocal fresh_n
        name = "T" if fresh_n == 0 else f"T{fresh_n}"
        fresh_n += 1
        sched.vars.append(VarInfo(name, bounds))
        return name

    def max_label(labels: list[TimingLabel]) -> TimingLabel:
        best = TimingLabel("G", 0)
        for lab in labels:
            if sched.label_ge(lab, best):
                best = lab
            elif not sched.label_ge(best, lab):
                join = fresh_var([(best.var, best.offset), (lab.var, lab.offset)])
                best = TimingLabel(join, 0)
        return best

    # value id -> (label available, combinational ns inside that slot)
    avail: dict[str, tuple[TimingLabel, float]] = {}
    for name in _ambient_values(mod, rule):
        avail[name] = (TimingLabel("G", 0), 0.0)

    slot_calls: dict[tuple[str, int], list[tuple[str, str]]] = {}
    last_mut = TimingLabel("G", 0)
    pending_results: dict[tuple[str, str], list[TimingLabel]] = {}

    for s in rule.steps:
        dep_avail = [avail[a] for a in _step_deps(s)]
        labels = [lab for lab, _ in dep_avail]
        if isinstance(s, CallStep):
            # a result-retrieval call waits for its paired entry call
            rsum = _as_result_call(mod, s, summaries)
            if rsum is not None:
                q = pending_results.get((s.inst, s.method))
                if q:
                    labels.append(q.pop(0))
        start = max_label(labels)
        mutating = _mutates(design, mod, s)
        if mutating:
            start = max_label([start, last_mut])

        d = step_delay(model, s, widths)
        if d > model.period:
            raise ScheduleError(
                f"rule '{rule.id}': op "
                f"'{s.op if isinstance(s, ExprStep) else type(s).__name__}' "
                f"needs {d:.3f} ns, exceeding the period {model.period} ns")

        def base_at(lab: TimingLabel) -> float:
            b = 0.0
            for dlab, ns in dep_avail:
                if dlab == lab and ns > b:
                    b = ns
            return b

        while base_at(start) + d > model.period:
            start = TimingLabel(start.var, start.offset + 1)

        if isinstance(s, CallStep):
            inst = mod.instance(s.inst)
            while True:
                clash = False
                for inst0, m0 in slot_calls.get((start.var, start.offset), []):
                    if inst0 != s.inst:
                        continue
                    rel = prims.method_relation(design, mod, inst, m0, s.method)
                    if rel in (prims.CONFLICT, prims.SEQ_AFTER):
                        clash = True
                        break
                if not clash:
                    break
                start = TimingLabel(start.var, start.offset + 1)
            slot_calls.setdefault((start.var, start.offset), []).append(
                (s.inst, s.method))

        finish: Optional[TimingLabel] = None
        ns_done = base_at(start) + d
        if isinstance(s, CallStep):
            summ = _call_summary(mod, s, summaries)
            if summ is not None and summ.result is not None:
                if summ.kind == "LS":
                    ready = TimingLabel(start.var, start.offset + summ.latency)
                else:
                    ready = TimingLabel(fresh_var([(start.var, start.offset)]), 0)
                pending_results.setdefault((s.inst, summ.result), []).append(ready)
        if mutating:
            last_mut = start

        sched.starts.append(start)
        sched.finishes.append(finish)
        out_lab = finish if finish is not None else start
        for o in _step_outs(s):
            avail[o] = (out_lab, ns_done)
    return sched


# ---------------------------------------------------------------------------
# Independent schedule verification
# ---------------------------------------------------------------------------


def schedule_of_rule(rule: Rule) -> Schedule:
    """Schedule view of an already-timed rule (labels taken as written)."""
    starts, finishes, seen = [], [], []
    for s in rule.steps:
        starts.append(s.start)
        finishes.append(s.finish)
        for lab in (s.start, s.finish):
            if lab is not None and lab.var not in seen:
                seen.append(lab.var)
    if not seen:
        seen = ["G"]
    # user-written timebases: assume later-declared variables are anchored
    # no earlier than the first (checked only within one variable otherwise)
    root = seen[0]
    vars_ = [VarInfo(root)] + [VarInfo(v, [(root, 0)]) for v in seen[1:]]
    return Schedule(rule.id, starts, finishes, vars_)


def verify_schedule(design: Design, mod: Module, rule: Rule,
                    sched: Schedule, model: Optional[DelayModel] = None,
                    summaries: Optional[dict] = None) -> list[str]:
    """Re-walk every dependency path of a labeled rule; returns violations.

    Checks: (a) data dependency ordering, (b) per-slot combinational path
    delay within the clock period, (c) body order of state-mutating steps
    and slot-disjointness of conflicting calls, (d) declared latencies of
    latency-sensitive callees.
    """
    model = model or DelayModel()
    summaries = summaries or {}
    problems: list[str] = []
    widths = rule_value_widths(design, mod, rule)

    def finish_of(i: int) -> TimingLabel:
        return sched.finishes[i] or sched.starts[i]

    producer: dict[str, int] = {}
    for i, s in enumerate(rule.steps):
        for o in _step_outs(s):
            producer[o] = i

    # (a) data dependencies
    for i, s in enumerate(rule.steps):
        for a in _step_deps(s):
            if a not in producer:
                continue
            p = producer[a]
            if not sched.label_ge(sched.starts[i], finish_of(p)):
                problems.append(
                    f"step {i} starts at {_fmt(sched.starts[i])} before its "
                    f"input %{a} is ready at {_fmt(finish_of(p))}")

    # (b) per-slot path delays
    arrival: dict[int, float] = {}
    for i, s in enumerate(rule.steps):
        d = step_delay(model, s, widths)
        base = 0.0
        for a in _step_deps(s):
            p = producer.get(a)
            if p is None:
                continue
            if finish_of(p) == sched.starts[i] and sched.finishes[p] is None:
                base = max(base, arrival.get(p, 0.0))
        arrival[i] = base + d
        if arrival[i] > model.period + 1e-9:
            problems.append(
                f"step {i} ends a combinational path of {arrival[i]:.3f} ns in "
                f"slot {_fmt(sched.starts[i])}, over the period {model.period} ns")

    # (c) mutating order and conflicting calls per slot
    last_mut: Optional[int] = None
    slot_calls: dict[tuple[str, int], list[tuple[str, str, int]]] = {}
    for i, s in enumerate(rule.steps):
        if not _mutates(design, mod, s):
            continue
        if last_mut is not None and \
                not sched.label_ge(sched.starts[i], sched.starts[last_mut]):
            problems.append(
                f"state-mutating step {i} at {_fmt(sched.starts[i])} is "
                f"scheduled before earlier mutating step {last_mut}")
        last_mut = i
        if isinstance(s, CallStep):
            key = (sched.starts[i].var, sched.starts[i].offset)
            inst = mod.instance(s.inst)
            for inst0, m0, j in slot_calls.get(key, []):
                if inst0 != s.inst:
                    continue
                rel = prims.method_relation(design, mod, inst, m0, s.method)
                if rel in (prims.CONFLICT, prims.SEQ_AFTER):
                    problems.append(
                        f"steps {j} and {i} place conflicting calls "
                        f"'{m0}'/'{s.method}' on '{s.inst}' in one slot")
            slot_calls.setdefault(key, []).append((s.inst, s.method, i))

    # (d) result-retrieval calls honor their callee's latency
    pending: dict[tuple[str, str], list[int]] = {}
    for i, s in enumerate(rule.steps):
        if not isinstance(s, CallStep):
            continue
        summ = _call_summary(mod, s, summaries)
        if summ is not None and summ.result is not None:
            pending.setdefault((s.inst, summ.result), []).append(i)
        rsum = _as_result_call(mod, s, summaries)
        if rsum is not None:
            q = pending.get((s.inst, s.method))
            if not q:
                problems.append(
                    f"step {i} retrieves results from '{s.inst}.{s.method}' "
                    "without a preceding entry call")
                continue
            j = q.pop(0)
            if rsum.kind == "LS":
                want = TimingLabel(sched.starts[j].var,
                                   sched.starts[j].offset + rsum.latency)
                if sched.starts[i] != want:
                    problems.append(
                        f"step {i} must retrieve the {rsum.latency}-cycle "
                        f"result at {_fmt(want)}, not {_fmt(sched.starts[i])}")
            else:
                if not sched.label_ge(sched.starts[i], sched.starts[j]):
                    problems.append(
                        f"step {i} retrieves a latency-insensitive result "
                        f"before its entry call at {_fmt(sched.starts[j])}")
    return problems


def _fmt(lab: TimingLabel) -> str:
    return lab.var if lab.offset == 0 else f"{lab.var}+{lab.offset}"


# ---------------------------------------------------------------------------
# Latency summaries
# ---------------------------------------------------------------------------


def rule_latency_summary(design: Design, module_name: str,
                         pairs: Optional[dict[str, str]] = None,
                         ) -> dict[str, MethodSummary]:
    """Per-method latency summaries of a compiled (fully intra-cycle) module.

    `pairs` maps entry method name -> result method name for partitioned
    multi-cycle methods (default: the `<m>_` / `finish` naming convention).
    A pair in one latency-sensitive region k cycles apart reports LS(k),
    otherwise LI.  Plain intra-cycle methods are LS(0).
    """
    from . import graph as G
    mod = design.module(module_name)
    g = G.build_graph(design, module_name)
    timing = G.infer_timing(g)
    if pairs is None:
        pairs = {}
        if mod.interface.method("finish") is not None:
            for m in mod.interface.methods:
                if m.name.endswith("_"):
                    pairs[m.name] = "finish"
    out: dict[str, MethodSummary] = {}
    for m in mod.interface.methods:
        if mod.method_rule(m.name) is not None:
            out[m.name] = MethodSummary(m.name, None, "LS", 0)
    for entry, result in pairs.items():
        er = mod.method_rule(entry)
        rr = mod.method_rule(result)
        if er is None or rr is None:
            continue
        ev, rv = ("", er.id), ("", rr.id)
        if timing.same_region(ev, rv):
            k = timing.offset(rv) - timing.offset(ev)
            out[entry] = MethodSummary(entry, result, "LS", k)
        else:
            out[entry] = MethodSummary(entry, result, "LI", 0)
    return out
