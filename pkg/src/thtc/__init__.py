"""Compiler toolchain and reference simulator for temporal hardware
transactions: guarded atomic rules with cycle-level temporal relationships
and multi-cycle rules, lowered through scheduling, partitioning, and
temporal implementation to a structural netlist and Verilog, with a
transactional interpreter as the semantic oracle."""

from .build import DesignBuilder, ModuleBuilder, interface
from .delays import DelayModel, load_delay_config, parse_delay_config
from .ir import Design, Diagnostic, Module, Rule, validate
from .pipeline import CompileError, CompileResult, compile_design
from .sim import NetMachine, Report, Testbench, TxnSim, compare_traces, run
from .text import ParseError, parse, parse_checked, print_design

__all__ = [
    "CompileError", "CompileResult", "Design", "DesignBuilder", "DelayModel",
    "Diagnostic", "Module", "ModuleBuilder", "NetMachine", "ParseError",
    "Report", "Rule", "Testbench", "TxnSim", "compare_traces",
    "compile_design", "interface", "load_delay_config", "parse",
    "parse_checked", "parse_delay_config", "print_design", "run", "validate",
]
