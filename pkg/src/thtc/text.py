"""Textual serialization of the IR (.ctir files).

The grammar is line and keyword oriented:

    top <module>
    module <name> {
      interface {
        port <name> in|out <width>
        method <name>(<p>, ...) [-> (<p>, ...)]
      }
      instance <name> = reg(<w>, init=<v>) | fifo(<w>, depth=<d>[, bypass])
                        | shift(<w>, depth=<d>) | module <name>
      prec <a> < <b>
      rule <id> { ... } | method <name> { ... }
      multicycle [method] <id> [timed] { ... }
    }

Rule bodies:

    pred <alias> = <rule> [delay(k) | dyndelay(k) | eagerdelay(k)]
    channel <name> width <w> [depth <d>]
    guard <expr>
    at <var>[+k] [.. <var>[+k]]
    %v = const <value>:<width>
    %v = <op> %a %b [...]             (slice takes hi lo literals)
    [%r, ...] = call #<inst>.<method> [%a ...]
    send <channel> %v
    %v = recv <alias>.<channel>
    return %a [%b ...]

Comments run from // to end of line.  print() emits a canonical form:
parse(print(d)) is structurally equal to d for any validated design.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .ir import (
    CallStep, ChannelDecl, Design, ExprStep, FifoPrim, GConst, GOp, GPort,
    GRead, GuardExpr, Instance, Interface, MethodSig, Module, Port, PredDecl,
    RecvStep, RegPrim, Rule, SendStep, ShiftPrim, Step, Submodule,
    TimingLabel, WirePrim, OPS,
)


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    col: int
    end_line: int
    end_col: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan, expected: tuple[str, ...] = ()):
        self.message = message
        self.span = span
        self.expected = expected
        detail = f"{span}: {message}"
        if expected:
            detail += " (expected " + ", ".join(expected) + ")"
        super().__init__(detail)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_PUNCT = ("->", "..", "&&", "||", "==", "<<", ">>",
          "{", "}", "(", ")", "=", "<", ">", ",", ".", "#", "%", "+", "-",
          "*", "!", "^", ":")


@dataclass
class Tok:
    kind: str   # "id" | "int" | "punct" | "eof"
    text: str
    line: int
    col: int


def _tokenize(text: str, filename: str) -> list[Tok]:
    toks: list[Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            if toks and toks[-1].kind != "nl":
                toks.append(Tok("nl", "\n", line, col))
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isdigit():
            j = i
            if text.startswith("0x", i) or text.startswith("0X", i):
                j = i + 2
                while j < n and text[j] in "0123456789abcdefABCDEF":
                    j += 1
            else:
                while j < n and text[j].isdigit():
                    j += 1
            toks.append(Tok("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(Tok("id", text[i:j], line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(Tok("punct", p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            span = SourceSpan(filename, line, col, line, col + 1)
            raise ParseError(f"unexpected character {c!r}", span)
    toks.append(Tok("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, filename: str):
        self.toks = _tokenize(text, filename)
        self.pos = 0
        self.filename = filename

    def peek(self) -> Tok:
        """Raw lookahead: newline tokens terminate step argument lists."""
        return self.toks[self.pos]

    def next(self) -> Tok:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def skip_nl(self) -> None:
        while self.toks[self.pos].kind == "nl":
            self.pos += 1

    def span(self, t: Tok) -> SourceSpan:
        return SourceSpan(self.filename, t.line, t.col, t.line, t.col + max(len(t.text), 1))

    def fail(self, msg: str, expected: tuple[str, ...] = ()) -> ParseError:
        self.skip_nl()
        return ParseError(msg, self.span(self.peek()), expected)

    def expect(self, kind: str, text: Optional[str] = None) -> Tok:
        if kind != "nl":
            self.skip_nl()
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text if text is not None else kind
            raise self.fail(f"found {t.text!r}", (want,))
        return self.next()

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Tok]:
        if kind != "nl":
            self.skip_nl()
        t = self.peek()
        if t.kind == kind and (text is None or t.text == text):
            return self.next()
        return None

    def int_value(self) -> int:
        t = self.expect("int")
        return int(t.text, 0)

    # -- design ------------------------------------------------------------

    def design(self) -> Design:
        top: Optional[str] = None
        modules: list[Module] = []
        self.skip_nl()
        while self.peek().kind != "eof":
            t = self.peek()
            if t.kind == "id" and t.text == "top":
                self.next()
                if top is not None:
                    raise self.fail("duplicate top directive")
                top = self.expect("id").text
            elif t.kind == "id" and t.text == "module":
                modules.append(self.module())
            else:
                raise self.fail(f"found {t.text!r}", ("top", "module"))
            self.skip_nl()
        if top is None:
            raise ParseError("missing top directive",
                             SourceSpan(self.filename, 1, 1, 1, 1), ("top",))
        return Design(tuple(modules), top)

    def module(self) -> Module:
        self.expect("id", "module")
        name = self.expect("id").text
        self.expect("punct", "{")
        interface = Interface(name)
        instances: list[Instance] = []
        rules: list[Rule] = []
        precs: list[tuple[str, str]] = []
        while not self.accept("punct", "}"):
            t = self.peek()
            if t.kind != "id":
                raise self.fail(f"found {t.text!r}",
                                ("interface", "instance", "prec", "rule",
                                 "method", "multicycle", "}"))
            if t.text == "interface":
                interface = self.interface(name)
            elif t.text == "instance":
                instances.append(self.instance())
            elif t.text == "prec":
                self.next()
                a = self.expect("id").text
                self.expect("punct", "<")
                b = self.expect("id").text
                precs.append((a, b))
            elif t.text in ("rule", "method", "multicycle"):
                rules.append(self.rule())
            else:
                raise self.fail(f"found {t.text!r}",
                                ("interface", "instance", "prec", "rule",
                                 "method", "multicycle"))
        return Module(name, interface, tuple(instances), tuple(rules), tuple(precs))

    def interface(self, modname: str) -> Interface:
        self.expect("id", "interface")
        self.expect("punct", "{")
        ports: list[Port] = []
        methods: list[MethodSig] = []
        while not self.accept("punct", "}"):
            t = self.peek()
            if t.kind == "id" and t.text == "port":
                self.next()
                pname = self.expect("id").text
                d = self.expect("id").text
                w = self.int_value()
                ports.append(Port(pname, d, w))
            elif t.kind == "id" and t.text == "method":
                self.next()
                mname = self.expect("id").text
                self.expect("punct", "(")
                args: list[str] = []
                while not self.accept("punct", ")"):
                    if args:
                        self.expect("punct", ",")
                    pname = self.expect("id").text
                    self.expect("punct", ":")
                    w = self.int_value()
                    args.append(pname)
                    ports.append(Port(pname, "in", w))
                results: list[str] = []
                if self.accept("punct", "->"):
                    self.expect("punct", "(")
                    while not self.accept("punct", ")"):
                        if results:
                            self.expect("punct", ",")
                        pname = self.expect("id").text
                        self.expect("punct", ":")
                        w = self.int_value()
                        results.append(pname)
                        ports.append(Port(pname, "out", w))
                methods.append(MethodSig(mname, tuple(args), tuple(results)))
            else:
                raise self.fail(f"found {t.text!r}", ("port", "method", "}"))
        return Interface(modname, tuple(ports), tuple(methods))

    def instance(self) -> Instance:
        self.expect("id", "instance")
        name = self.expect("id").text
        self.expect("punct", "=")
        kw = self.expect("id").text
        if kw == "module":
            sub = self.expect("id").text
            return Instance(name, Submodule(sub))
        self.expect("punct", "(")
        width = self.int_value()
        if kw == "reg":
            init = 0
            if self.accept("punct", ","):
                self.expect("id", "init")
                self.expect("punct", "=")
                init = self.int_value()
            self.expect("punct", ")")
            return Instance(name, RegPrim(width, init))
        if kw == "fifo":
            self.expect("punct", ",")
            self.expect("id", "depth")
            self.expect("punct", "=")
            depth = self.int_value()
            bypass = False
            if self.accept("punct", ","):
                self.expect("id", "bypass")
                bypass = True
            self.expect("punct", ")")
            return Instance(name, FifoPrim(width, depth, bypass))
        if kw == "shift":
            self.expect("punct", ",")
            self.expect("id", "depth")
            self.expect("punct", "=")
            depth = self.int_value()
            self.expect("punct", ")")
            return Instance(name, ShiftPrim(width, depth))
        if kw == "wire":
            self.expect("punct", ")")
            return Instance(name, WirePrim(width))
        raise self.fail(f"unknown instance kind '{kw}'",
                        ("reg", "fifo", "shift", "wire", "module"))

    # -- rules -------------------------------------------------------------

    def rule(self) -> Rule:
        kw = self.expect("id").text
        flavor = "always"
        method: Optional[str] = None
        timed = False
        if kw == "multicycle":
            flavor = "multicycle"
            if self.accept("id", "method"):
                method = self.expect("id").text
                rid = method
            else:
                rid = self.expect("id").text
            if self.accept("id", "timed"):
                timed = True
        elif kw == "method":
            flavor = "method"
            method = self.expect("id").text
            rid = method
        else:
            rid = self.expect("id").text
        self.expect("punct", "{")

        guard: GuardExpr = GConst(1, 1)
        preds: list[PredDecl] = []
        channels: list[ChannelDecl] = []
        steps: list[Step] = []
        results: tuple[str, ...] = ()
        cur_start: Optional[TimingLabel] = None
        cur_finish: Optional[TimingLabel] = None

        while not self.accept("punct", "}"):
            t = self.peek()
            if t.kind == "id" and t.text == "guard":
                self.next()
                guard = self.guard_expr()
            elif t.kind == "id" and t.text == "pred":
                self.next()
                alias = self.expect("id").text
                self.expect("punct", "=")
                pred = self.expect("id").text
                kind: Optional[str] = None
                cycles = 0
                nt = self.peek()
                if nt.kind == "id" and nt.text in ("delay", "dyndelay", "eagerdelay"):
                    kind = self.next().text
                    self.expect("punct", "(")
                    cycles = self.int_value()
                    self.expect("punct", ")")
                preds.append(PredDecl(alias, pred, kind, cycles))
            elif t.kind == "id" and t.text == "channel":
                self.next()
                cname = self.expect("id").text
                self.expect("id", "width")
                w = self.int_value()
                depth = None
                if self.accept("id", "depth"):
                    depth = self.int_value()
                channels.append(ChannelDecl(cname, w, depth))
            elif t.kind == "id" and t.text == "at":
                self.next()
                cur_start = self.timing_label()
                cur_finish = None
                if self.accept("punct", ".."):
                    fin = self.timing_label()
                    cur_finish = None if fin == cur_start else fin
            elif t.kind == "id" and t.text == "return":
                self.next()
                vals = [self.value_id()]
                while self.peek().kind == "punct" and self.peek().text == "%":
                    vals.append(self.value_id())
                results = tuple(vals)
            elif t.kind == "id" and t.text == "send":
                self.next()
                ch = self.expect("id").text
                v = self.value_id()
                steps.append(SendStep(ch, v, cur_start, cur_finish))
            elif t.kind == "id" and t.text == "call":
                self.next()
                inst, m, args = self.call_target()
                steps.append(CallStep((), inst, m, args, cur_start, cur_finish))
            elif t.kind == "punct" and t.text == "%":
                outs = [self.value_id()]
                while self.accept("punct", ","):
                    outs.append(self.value_id())
                self.expect("punct", "=")
                steps.append(self.rhs(tuple(outs), cur_start, cur_finish))
            else:
                raise self.fail(f"found {t.text!r}",
                                ("guard", "pred", "channel", "at", "send",
                                 "call", "return", "%", "}"))
        return Rule(rid, flavor, guard, tuple(steps), tuple(preds),
                    tuple(channels), method, timed, results)

    def timing_label(self) -> TimingLabel:
        var = self.expect("id").text
        off = 0
        if self.accept("punct", "+"):
            off = self.int_value()
        return TimingLabel(var, off)

    def value_id(self) -> str:
        self.expect("punct", "%")
        return self.expect("id").text

    def call_target(self) -> tuple[str, str, tuple[str, ...]]:
        self.expect("punct", "#")
        inst = self.expect("id").text
        self.expect("punct", ".")
        m = self.expect("id").text
        args: list[str] = []
        while self.peek().kind == "punct" and self.peek().text == "%":
            args.append(self.value_id())
        return inst, m, tuple(args)

    def rhs(self, outs: tuple[str, ...],
            start: Optional[TimingLabel], finish: Optional[TimingLabel]) -> Step:
        t = self.peek()
        if t.kind == "id" and t.text == "call":
            self.next()
            inst, m, args = self.call_target()
            return CallStep(outs, inst, m, args, start, finish)
        if t.kind == "id" and t.text == "recv":
            self.next()
            alias = self.expect("id").text
            self.expect("punct", ".")
            ch = self.expect("id").text
            if len(outs) != 1:
                raise self.fail("recv binds exactly one value")
            return RecvStep(outs[0], alias, ch, start, finish)
        if len(outs) != 1:
            raise self.fail("expression steps bind exactly one value")
        op = self.expect("id").text
        if op not in OPS:
            raise ParseError(f"unknown op '{op}'", self.span(t), OPS)
        if op == "const":
            v = self.int_value()
            self.expect("punct", ":")
            w = self.int_value()
            return ExprStep(outs[0], "const", (), (v, w), start, finish)
        args: list[str] = []
        while self.peek().kind == "punct" and self.peek().text == "%":
            args.append(self.value_id())
        params: list[int] = []
        while self.peek().kind == "int":
            params.append(self.int_value())
        return ExprStep(outs[0], op, tuple(args), tuple(params), start, finish)

    # -- guard expressions ---------------------------------------------------
    # Precedence, loosest first: ||, &&, ^, (== <), (+ -), (* << >>), unary.

    def guard_expr(self) -> GuardExpr:
        return self._g_or()

    def _binop(self, sub, table: dict[str, str]) -> GuardExpr:
        e = sub()
        while True:
            t = self.peek()
            if t.kind == "punct" and t.text in table:
                self.next()
                e = GOp(table[t.text], (e, sub()))
            else:
                return e

    def _g_or(self) -> GuardExpr:
        return self._binop(self._g_and, {"||": "or"})

    def _g_and(self) -> GuardExpr:
        return self._binop(self._g_xor, {"&&": "and"})

    def _g_xor(self) -> GuardExpr:
        return self._binop(self._g_cmp, {"^": "xor"})

    def _g_cmp(self) -> GuardExpr:
        return self._binop(self._g_add, {"==": "eq", "<": "lt"})

    def _g_add(self) -> GuardExpr:
        return self._binop(self._g_mul, {"+": "add", "-": "sub"})

    def _g_mul(self) -> GuardExpr:
        return self._binop(self._g_unary, {"*": "mul", "<<": "shl", ">>": "shr"})

    def _g_unary(self) -> GuardExpr:
        if self.accept("punct", "!"):
            return GOp("not", (self._g_unary(),))
        return self._g_primary()

    def _g_primary(self) -> GuardExpr:
        t = self.peek()
        if t.kind == "punct" and t.text == "(":
            self.next()
            e = self.guard_expr()
            self.expect("punct", ")")
            return e
        if t.kind == "punct" and t.text == "#":
            self.next()
            inst = self.expect("id").text
            self.expect("punct", ".")
            m = self.expect("id").text
            self.expect("punct", "(")
            self.expect("punct", ")")
            return GRead(inst, m)
        if t.kind == "int":
            v = self.int_value()
            self.expect("punct", ":")
            w = self.int_value()
            return GConst(v, w)
        if t.kind == "id":
            if t.text == "true":
                self.next()
                return GConst(1, 1)
            if t.text == "false":
                self.next()
                return GConst(0, 1)
            if t.text in ("mux", "slice", "concat"):
                op = self.next().text
                self.expect("punct", "(")
                args: list[GuardExpr] = [self.guard_expr()]
                params: list[int] = []
                while self.accept("punct", ","):
                    if op == "slice" and self.peek().kind == "int":
                        params.append(self.int_value())
                    else:
                        args.append(self.guard_expr())
                self.expect("punct", ")")
                return GOp(op, tuple(args), tuple(params))
            self.next()
            return GPort(t.text)
        raise self.fail(f"found {t.text!r} in guard expression")


def parse(text: str, filename: str = "<input>") -> Design:
    """Parse .ctir text into a Design.  Raises ParseError on bad syntax."""
    return _Parser(text, filename).design()


def parse_checked(text: str, filename: str = "<input>"):
    """Parse and validate; returns (design, diagnostics)."""
    from .ir import validate
    d = parse(text, filename)
    return d, validate(d)


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------


def _fmt_guard(e: GuardExpr) -> str:
    if isinstance(e, GConst):
        if e.width == 1 and e.value == 1:
            return "true"
        if e.width == 1 and e.value == 0:
            return "false"
        return f"{e.value}:{e.width}"
    if isinstance(e, GPort):
        return e.name
    if isinstance(e, GRead):
        return f"#{e.inst}.{e.method}()"
    assert isinstance(e, GOp)
    sym = {"or": "||", "and": "&&", "xor": "^", "eq": "==", "lt": "<",
           "add": "+", "sub": "-", "mul": "*", "shl": "<<", "shr": ">>"}
    if e.op == "not":
        return f"!{_fmt_guard(e.args[0])}"
    if e.op in sym:
        return f"({_fmt_guard(e.args[0])} {sym[e.op]} {_fmt_guard(e.args[1])})"
    inner = ", ".join(_fmt_guard(a) for a in e.args)
    if e.params:
        inner += ", " + ", ".join(str(p) for p in e.params)
    return f"{e.op}({inner})"


def _fmt_label(lab: TimingLabel) -> str:
    return lab.var if lab.offset == 0 else f"{lab.var}+{lab.offset}"


def _fmt_step(s: Step) -> str:
    if isinstance(s, ExprStep):
        if s.op == "const":
            return f"%{s.out} = const {s.params[0]}:{s.params[1]}"
        parts = [f"%{s.out} = {s.op}"]
        parts += [f"%{a}" for a in s.args]
        parts += [str(p) for p in s.params]
        return " ".join(parts)
    if isinstance(s, CallStep):
        head = ", ".join(f"%{o}" for o in s.outs)
        call = f"call #{s.inst}.{s.method}"
        if s.args:
            call += " " + " ".join(f"%{a}" for a in s.args)
        return f"{head} = {call}" if head else call
    if isinstance(s, SendStep):
        return f"send {s.channel} %{s.value}"
    assert isinstance(s, RecvStep)
    return f"%{s.out} = recv {s.pred}.{s.channel}"


def print_design(design: Design) -> str:
    """Canonical deterministic text for a design."""
    out: list[str] = [f"top {design.top}", ""]
    for mod in design.modules:
        out.append(f"module {mod.name} {{")
        itf = mod.interface
        method_ports = {p for m in itf.methods for p in list(m.args) + list(m.results)}
        raw = [p for p in itf.ports if p.name not in method_ports]
        if raw or itf.methods:
            out.append("  interface {")
            for p in raw:
                out.append(f"    port {p.name} {p.direction} {p.width}")
            for m in itf.methods:
                args = ", ".join(f"{a}:{itf.port(a).width}" for a in m.args)
                line = f"    method {m.name}({args})"
                if m.results:
                    res = ", ".join(f"{r}:{itf.port(r).width}" for r in m.results)
                    line += f" -> ({res})"
                out.append(line)
            out.append("  }")
        for inst in mod.instances:
            k = inst.kind
            if isinstance(k, RegPrim):
                out.append(f"  instance {inst.name} = reg({k.width}, init={k.init})")
            elif isinstance(k, FifoPrim):
                s = f"  instance {inst.name} = fifo({k.width}, depth={k.depth}"
                s += ", bypass)" if k.bypass else ")"
                out.append(s)
            elif isinstance(k, ShiftPrim):
                out.append(f"  instance {inst.name} = shift({k.width}, depth={k.depth})")
            elif isinstance(k, WirePrim):
                out.append(f"  instance {inst.name} = wire({k.width})")
            else:
                out.append(f"  instance {inst.name} = module {k.module}")
        for a, b in mod.precs:
            out.append(f"  prec {a} < {b}")
        for r in mod.rules:
            out.extend(_print_rule(r))
        out.append("}")
        out.append("")
    return "\n".join(out)


def _print_rule(r: Rule) -> list[str]:
    if r.flavor == "method":
        head = f"  method {r.method} {{"
    elif r.flavor == "multicycle":
        head = "  multicycle "
        head += f"method {r.method}" if r.method is not None else r.id
        if r.timed:
            head += " timed"
        head += " {"
    else:
        head = f"  rule {r.id} {{"
    out = [head]
    for p in r.preds:
        line = f"    pred {p.alias} = {p.pred}"
        if p.kind is not None:
            line += f" {p.kind}({p.cycles})"
        out.append(line)
    for c in r.channels:
        line = f"    channel {c.name} width {c.width}"
        if c.depth is not None:
            line += f" depth {c.depth}"
        out.append(line)
    if r.guard != GConst(1, 1):
        out.append(f"    guard {_fmt_guard(r.guard)}")
    cur: tuple[Optional[TimingLabel], Optional[TimingLabel]] = (None, None)
    for s in r.steps:
        lab = (s.start, s.finish)
        if lab != cur and s.start is not None:
            line = f"    at {_fmt_label(s.start)}"
            if s.finish is not None and s.finish != s.start:
                line += f" .. {_fmt_label(s.finish)}"
            out.append(line)
            cur = lab
        out.append("    " + _fmt_step(s))
    if r.results:
        out.append("    return " + " ".join(f"%{v}" for v in r.results))
    out.append("  }")
    return out
