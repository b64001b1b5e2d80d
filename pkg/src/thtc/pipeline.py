"""End-to-end compilation driver.

Bottom-up over the instantiation order: inline multi-cycle method calls,
schedule untimed rules (verifying every schedule independently), partition,
then design-wide analysis, temporal lowering with stall insertion, netlist
synthesis, and Verilog emission.  Every intermediate design is kept for
pass dumps and pass-equivalence testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import graph as G
from .delays import DelayModel
from .ir import Design, Diagnostic, Module, has_errors, validate
from .lower import LowerInfo, lower_design
from .netsim import FlatNetlist, flatten
from .partition import PartitionInfo, inline_calls, partition_module
from .schedule import (
    MethodSummary, Schedule, rule_latency_summary, schedule_of_rule,
    schedule_rule, verify_schedule,
)
from .synth import SynthResult, lower_to_netlist


class CompileError(Exception):
    pass


@dataclass
class CompileResult:
    source: Design
    partitioned: Design
    analysis: G.Analysis
    lowered: Design
    lower_info: LowerInfo
    synth: SynthResult
    flat: FlatNetlist
    verilog: str
    schedules: dict[tuple[str, str], Schedule] = field(default_factory=dict)
    summaries: dict[tuple[str, str], MethodSummary] = field(default_factory=dict)
    infos: list[PartitionInfo] = field(default_factory=list)

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return self.analysis.diagnostics


def synthesize_temporal(design: Design, model: Optional[DelayModel] = None,
                        ) -> tuple[Design, dict, dict, list[PartitionInfo]]:
    """Inline + schedule + partition every module, leaf-first.

    Returns the fully intra-cycle design plus schedules, callee summaries,
    and partition records.
    """
    model = model or DelayModel()
    diags = validate(design)
    if has_errors(diags):
        raise CompileError("design does not validate:\n" +
                           "\n".join(d.render() for d in diags
                                     if d.severity == "error"))
    current = design
    renames: dict[tuple[str, str], tuple[str, str]] = {}
    summaries: dict[tuple[str, str], MethodSummary] = {}
    schedules: dict[tuple[str, str], Schedule] = {}
    all_infos: list[PartitionInfo] = []

    for mname in design.instantiation_order():
        mod = current.module(mname)
        if any(r.is_multicycle for r in mod.rules):
            new_rules = []
            for rule in mod.rules:
                if not rule.is_multicycle:
                    new_rules.append(rule)
                    continue
                rule = inline_calls(current, mod, rule, renames)
                if not rule.timed:
                    sched = schedule_rule(current, mod, rule, summaries, model)
                    rule = sched.apply(rule)
                else:
                    sched = schedule_of_rule(rule)
                schedules[(mname, rule.id)] = sched
                problems = verify_schedule(current, mod, rule, sched, model,
                                           summaries)
                if problems:
                    raise CompileError(
                        f"illegal schedule for '{mname}.{rule.id}':\n  " +
                        "\n  ".join(problems))
                new_rules.append(rule)
            mod = replace(mod, rules=tuple(new_rules))
            infos: list[PartitionInfo] = []
            mod = partition_module(current, mod, infos)
            all_infos.extend(infos)
            current = current.replace_module(mod)
            for info in infos:
                if info.entry_method is not None:
                    orig = _orig_method_name(design.module(mname), info.original)
                    renames[(mname, orig)] = (info.entry_method,
                                              info.result_method)
        pairs = {i.entry_method: i.result_method for i in all_infos
                 if i.entry_method is not None
                 and current.module(mname).method_rule(i.entry_method)}
        for m, summ in rule_latency_summary(current, mname, pairs).items():
            summaries[(mname, m)] = summ
    diags = validate(current)
    if has_errors(diags):
        raise CompileError("partitioned design does not validate:\n" +
                           "\n".join(d.render() for d in diags
                                     if d.severity == "error"))
    return current, schedules, summaries, all_infos


def _orig_method_name(mod: Module, rule_id: str) -> str:
    r = mod.rule(rule_id)
    return r.method if r is not None and r.method else rule_id


def compile_design(design: Design, model: Optional[DelayModel] = None,
                   ) -> CompileResult:
    """Full pipeline to netlist and Verilog.  Raises CompileError on
    temporal errors; warnings ride along in the analysis."""
    from .verilog import emit
    model = model or DelayModel()
    partitioned, schedules, summaries, infos = synthesize_temporal(design, model)
    analysis = G.analyze(partitioned)
    if analysis.errors:
        raise CompileError("temporal errors:\n" +
                           "\n".join(d.render() for d in analysis.errors))
    lowered, lower_info = lower_design(partitioned, analysis)
    diags = validate(lowered)
    if has_errors(diags):
        raise CompileError("lowered design does not validate:\n" +
                           "\n".join(d.render() for d in diags
                                     if d.severity == "error"))
    synth = lower_to_netlist(lowered, lower_info.controllers)
    flat = flatten(synth)
    verilog = emit(synth, lowered)
    return CompileResult(design, partitioned, analysis, lowered, lower_info,
                         synth, flat, verilog, schedules, summaries, infos)
