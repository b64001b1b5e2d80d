"""Verilog-2001 emission from per-module netlists.

One file per design, one Verilog module per design module, submodules
before their parents.  Registers are clocked always blocks with synchronous
active-high reset to the declared init values; combinational nodes are
continuous assigns in dependency order; FIFOs and shift chains expand to
per-slot registers.  Emission is deterministic: the same netlist always
yields byte-identical text.
"""

from __future__ import annotations

import re
from typing import Optional

from .ir import Design, Submodule
from .synth import FifoNode, ModuleNetlist, RegNode, ShiftNode, SynthResult


class EmitError(Exception):
    pass


_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")

_BIN = {"add": "+", "sub": "-", "mul": "*", "and": "&", "or": "|",
        "xor": "^", "shl": "<<", "shr": ">>", "eq": "==", "lt": "<"}


def _san(name: str) -> str:
    out = re.sub(r"[^A-Za-z0-9_$]", "_", name)
    if not out or out[0].isdigit():
        out = "_" + out
    return out


class _ModEmit:
    def __init__(self, nl: ModuleNetlist, design: Design):
        self.nl = nl
        self.design = design
        self.names: dict[int, str] = {}
        used: set[str] = {"clk", "rst"}
        for net in range(len(nl.widths)):
            base = _san(nl.names.get(net, f"n{net}"))
            name = base
            k = 0
            while name in used:
                k += 1
                name = f"{base}_{k}"
            used.add(name)
            self.names[net] = name

    def n(self, net: int) -> str:
        return self.names[net]

    def _decl(self, kind: str, net: int) -> str:
        w = self.nl.widths[net]
        rng = f" [{w - 1}:0]" if w > 1 else ""
        return f"  {kind}{rng} {self.n(net)};"

    def emit(self) -> str:
        nl = self.nl
        lines: list[str] = []
        ports = ["input wire clk", "input wire rst"]
        for name, net in nl.in_ports.items():
            w = nl.widths[net]
            rng = f" [{w - 1}:0]" if w > 1 else ""
            ports.append(f"input wire{rng} {_san(name)}")
        for name, net in nl.out_ports.items():
            w = nl.widths[net]
            rng = f" [{w - 1}:0]" if w > 1 else ""
            ports.append(f"output wire{rng} {_san(name)}")
        lines.append(f"module {_san(nl.module)} (")
        lines.append("  " + ",\n  ".join(ports))
        lines.append(");")

        op_nodes = [nd for nd in nl.nodes if nd[0] == "op"]
        for nd in op_nodes:
            lines.append(self._decl("wire", nd[4]))
        state_lines: list[str] = []
        for r in nl.regs:
            lines.append(self._decl("reg", r.q))
            state_lines += self._reg(r)
        for f in nl.fifos:
            dec, body = self._fifo(f)
            lines += dec
            state_lines += body
        for s in nl.shifts:
            dec, body = self._shift(s)
            lines += dec
            state_lines += body
        for sub in nl.subs:
            child = self.design.module(sub.module)
            for name, net in sub.imports.items():
                lines.append(self._decl("wire", net))

        for nd in self._ordered_ops():
            lines.append(self._assign(nd))
        for name, net in nl.out_ports.items():
            lines.append(f"  assign {_san(name)} = {self.n(net)};")
        lines += state_lines

        for sub in nl.subs:
            lines += self._instance(sub)
        lines.append("endmodule")
        return "\n".join(lines)

    def _ordered_ops(self) -> list[tuple]:
        # order assigns so every referenced wire is assigned earlier
        nl = self.nl
        driver: dict[int, int] = {}
        ops = [(i, nd) for i, nd in enumerate(nl.nodes) if nd[0] == "op"]
        for i, nd in ops:
            driver[nd[4]] = i
        order: list[int] = []
        mark: dict[int, int] = {}
        for start, _ in ops:
            if mark.get(start):
                continue
            stack = [(start, 0)]
            mark[start] = 1
            while stack:
                idx, di = stack[-1]
                ins = nl.nodes[idx][3]
                moved = False
                while di < len(ins):
                    net = ins[di]
                    di += 1
                    d = driver.get(net)
                    if d is not None and mark.get(d, 0) == 0:
                        stack[-1] = (idx, di)
                        stack.append((d, 0))
                        mark[d] = 1
                        moved = True
                        break
                    if d is not None and mark.get(d) == 1 and d != idx:
                        raise EmitError("combinational cycle in module "
                                        f"'{nl.module}'")
                if moved:
                    continue
                stack.pop()
                mark[idx] = 2
                order.append(idx)
        return [nl.nodes[i] for i in order]

    def _assign(self, nd: tuple) -> str:
        _, op, params, ins, out = nd
        a = [self.n(i) for i in ins]
        if op == "const":
            v, w = params
            rhs = f"{w}'d{v}"
        elif op in _BIN:
            rhs = f"{a[0]} {_BIN[op]} {a[1]}"
        elif op == "not":
            rhs = f"~{a[0]}"
        elif op == "mux":
            rhs = f"{a[0]} ? {a[1]} : {a[2]}"
        elif op == "slice":
            hi, lo = params
            rhs = f"{a[0]}[{hi}:{lo}]" if hi != lo else f"{a[0]}[{hi}]"
        elif op == "concat":
            rhs = f"{{{a[0]}, {a[1]}}}"
        else:
            raise EmitError(f"unsupported node op '{op}'")
        return f"  assign {self.n(out)} = {rhs};"

    def _reg(self, r: RegNode) -> list[str]:
        w = r.width
        return [
            "  always @(posedge clk) begin",
            f"    if (rst) {self.n(r.q)} <= {w}'d{r.init};",
            f"    else if ({self.n(r.en)}) {self.n(r.q)} <= {self.n(r.d)};",
            "  end",
        ]

    def _fifo(self, f: FifoNode) -> tuple[list[str], list[str]]:
        n = _san(f.name)
        w, cw = f.width, self.nl.widths[f.count]
        dec = []
        slots = [f"{n}_d{i}" for i in range(f.depth)]
        for s in slots:
            rng = f" [{w - 1}:0]" if w > 1 else ""
            dec.append(f"  reg{rng} {s};")
        rng = f" [{cw - 1}:0]" if cw > 1 else ""
        dec.append(f"  reg{rng} {n}_cnt;")
        dec.append(self._decl("wire", f.first))
        dec.append(self._decl("wire", f.count))
        dec.append(f"  assign {self.n(f.first)} = {slots[0]};")
        dec.append(f"  assign {self.n(f.count)} = {n}_cnt;")
        enq, deq, flush = self.n(f.enq_en), self.n(f.deq_en), self.n(f.flush_en)
        data = self.n(f.enq_data)
        body = ["  always @(posedge clk) begin",
                f"    if (rst) {n}_cnt <= {cw}'d0;",
                f"    else if ({flush}) {n}_cnt <= {cw}'d0;",
                f"    else {n}_cnt <= {n}_cnt + {{{{{cw - 1}{{1'b0}}}}, {enq}}}"
                f" - {{{{{cw - 1}{{1'b0}}}}, {deq}}};",
                "  end"]
        for i in range(f.depth):
            if f.bypass:
                app_i = (f"(({enq} && {n}_cnt == {cw}'d{i}) ? {data} : {slots[i]})")
                if i + 1 < f.depth:
                    app_n = (f"(({enq} && {n}_cnt == {cw}'d{i + 1}) ? {data} : "
                             f"{slots[i + 1]})")
                else:
                    app_n = f"{w}'d0"
                nxt = f"{deq} ? {app_n} : {app_i}"
            else:
                shifted = slots[i + 1] if i + 1 < f.depth else f"{w}'d0"
                base = f"({deq} ? {shifted} : {slots[i]})"
                widx = f"({n}_cnt - {{{{{cw - 1}{{1'b0}}}}, {deq}}})"
                nxt = f"({enq} && {widx} == {cw}'d{i}) ? {data} : {base}"
            body += ["  always @(posedge clk) begin",
                     f"    if (rst) {slots[i]} <= {w}'d0;",
                     f"    else {slots[i]} <= {nxt};",
                     "  end"]
        return dec, body

    def _shift(self, s: ShiftNode) -> tuple[list[str], list[str]]:
        n = _san(s.name)
        w = s.width
        dec = []
        for i in range(s.depth):
            dec.append(f"  reg {n}_v{i};")
            rng = f" [{w - 1}:0]" if w > 1 else ""
            dec.append(f"  reg{rng} {n}_q{i};")
        dec.append(self._decl("wire", s.out_valid))
        dec.append(self._decl("wire", s.out_data))
        dec.append(f"  assign {self.n(s.out_valid)} = {n}_v{s.depth - 1};")
        dec.append(f"  assign {self.n(s.out_data)} = {n}_q{s.depth - 1};")
        body = ["  always @(posedge clk) begin",
                "    if (rst) begin"]
        for i in range(s.depth):
            body.append(f"      {n}_v{i} <= 1'b0;")
            body.append(f"      {n}_q{i} <= {w}'d0;")
        body += ["    end",
                 f"    else if ({self.n(s.en)}) begin",
                 f"      {n}_v0 <= {self.n(s.in_valid)};",
                 f"      {n}_q0 <= {self.n(s.in_data)};"]
        for i in range(1, s.depth):
            body.append(f"      {n}_v{i} <= {n}_v{i - 1};")
            body.append(f"      {n}_q{i} <= {n}_q{i - 1};")
        body += ["    end", "  end"]
        return dec, body

    def _instance(self, sub) -> list[str]:
        conns = ["    .clk(clk)", "    .rst(rst)"]
        for name, net in sub.drives.items():
            conns.append(f"    .{_san(name)}({self.n(net)})")
        for name, net in sub.imports.items():
            conns.append(f"    .{_san(name)}({self.n(net)})")
        return [f"  {_san(sub.module)} {_san(sub.name)} (",
                ",\n".join(conns), "  );"]


def emit(synth: SynthResult, design: Design) -> str:
    """Deterministic Verilog for the whole design, submodules first."""
    order = design.instantiation_order()
    out = ["// generated structural Verilog", ""]
    for mname in order:
        if mname not in synth.netlists:
            continue
        out.append(_ModEmit(synth.netlists[mname], design).emit())
        out.append("")
    text = "\n".join(out)
    problems = scan(text)
    if problems:
        raise EmitError("emitted Verilog failed self-check: " +
                        "; ".join(problems[:5]))
    return text


# ---------------------------------------------------------------------------
# Structural self-check
# ---------------------------------------------------------------------------

_DECL_RE = re.compile(
    r"^\s*(?:input\s+wire|output\s+wire|wire|reg)\s*(?:\[[^\]]+\])?\s*"
    r"([A-Za-z_][A-Za-z0-9_$]*)\s*[;,)]?")
_MODULE_RE = re.compile(r"^\s*module\s+([A-Za-z_][A-Za-z0-9_$]*)")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")

_KEYWORDS = {"module", "endmodule", "input", "output", "wire", "reg",
             "assign", "always", "posedge", "begin", "end", "if", "else",
             "clk", "rst", "b0", "b1"}


def scan(text: str) -> list[str]:
    """Lightweight structural check of emitted Verilog: balanced modules,
    legal identifiers, no duplicate nets, every referenced net declared."""
    problems: list[str] = []
    modules: dict[str, set[str]] = {}
    uses: dict[str, set[str]] = {}
    cur: Optional[str] = None
    for raw in text.splitlines():
        line = raw.split("//")[0]
        m = _MODULE_RE.match(line)
        if m:
            if cur is not None:
                problems.append(f"module '{m.group(1)}' opens inside '{cur}'")
            cur = m.group(1)
            if cur in modules:
                problems.append(f"module '{cur}' defined twice")
            modules[cur] = set()
            uses[cur] = set()
            continue
        if re.match(r"^\s*endmodule\b", line):
            if cur is None:
                problems.append("endmodule without module")
            cur = None
            continue
        if cur is None:
            if line.strip():
                problems.append(f"text outside modules: {line.strip()[:40]}")
            continue
        stripped = line.strip()
        dm = _DECL_RE.match(line)
        if dm and (stripped.startswith(("input", "output", "wire", "reg"))):
            name = dm.group(1)
            if name in modules[cur]:
                problems.append(f"duplicate declaration '{name}' in '{cur}'")
            modules[cur].add(name)
            if not _ID_RE.match(name):
                problems.append(f"illegal identifier '{name}'")
            continue
        if stripped.startswith("assign") or stripped.startswith("if") or \
                stripped.startswith("else") or "<=" in stripped:
            body = re.sub(r"\d+'[bd][0-9a-fA-F]+", " ", stripped)
            body = re.sub(r"\{\s*\d+\s*\{[^}]*\}\s*\}", " ", body)
            for ident in _IDENT_RE.findall(body):
                if ident not in _KEYWORDS and not ident[0].isdigit():
                    uses[cur].add(ident)
        elif stripped.startswith("."):
            inner = re.sub(r"^\.[A-Za-z0-9_$]+\(", "", stripped).rstrip("),")
            for ident in _IDENT_RE.findall(inner):
                if ident not in _KEYWORDS:
                    uses[cur].add(ident)
    if cur is not None:
        problems.append(f"module '{cur}' missing endmodule")
    if not modules:
        problems.append("no modules emitted")
    for mod, idents in uses.items():
        for ident in sorted(idents):
            if ident not in modules[mod]:
                problems.append(f"'{ident}' used but not declared in '{mod}'")
    return problems
