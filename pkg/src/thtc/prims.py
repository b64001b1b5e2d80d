"""Primitive instance semantics and method conflict metadata.

Three primitive kinds exist: registers, FIFOs, and valid+data shift chains.
Each exposes a small method set with a fixed pairwise relation matrix:

  register   read CF read, read CF write (reads return the cycle-start
             value), write conflicts with write.
  fifo       deq sequenced before enq sequenced before flush; enq/deq/flush
             each conflict with themselves; first/can_enq/can_deq are pure.
             Bypass FIFOs flip the data ordering: enq before first/deq, so a
             value enqueued into an empty bypass FIFO is visible that cycle.
  shift      push conflicts with push; out_valid/out_data are pure reads of
             the oldest stage.

Submodule method relations are derived from the method rule bodies: two
methods relate by combining the relations of every primitive method pair
they (transitively) touch on shared state, plus any explicit precedence
between their rules.
"""

from __future__ import annotations

from typing import Optional

from .ir import (
    CallStep, Design, FifoPrim, Instance, Module, RegPrim, Rule, SendStep,
    ShiftPrim, Submodule, WirePrim,
)

CF = "cf"
SEQ_BEFORE = "before"     # first method must execute earlier in the cycle
SEQ_AFTER = "after"       # first method must execute later in the cycle
CONFLICT = "conflict"


def _flip(rel: str) -> str:
    if rel == SEQ_BEFORE:
        return SEQ_AFTER
    if rel == SEQ_AFTER:
        return SEQ_BEFORE
    return rel


# method -> (arg widths as fn of prim, result widths, pure?)
def prim_methods(kind) -> Optional[dict]:
    if isinstance(kind, RegPrim):
        return {
            "read": ((), (kind.width,), True),
            "write": ((kind.width,), (), False),
        }
    if isinstance(kind, FifoPrim):
        return {
            "enq": ((kind.width,), (), False),
            "deq": ((), (kind.width,), False),
            "first": ((), (kind.width,), True),
            "flush": ((), (), False),
            "can_enq": ((), (1,), True),
            "can_deq": ((), (1,), True),
        }
    if isinstance(kind, ShiftPrim):
        w = max(kind.width, 1)
        return {
            "push": ((w,), (), False),
            "out_valid": ((), (1,), True),
            "out_data": ((), (w,), True),
        }
    if isinstance(kind, WirePrim):
        return {
            "drive": ((kind.width,), (), False),
            "read_valid": ((), (1,), True),
            "read_data": ((), (kind.width,), True),
        }
    return None


def prim_method_widths(kind, method: str):
    table = prim_methods(kind)
    if table is None or method not in table:
        return None
    a, r, _ = table[method]
    return a, r


def _fifo_relation(m1: str, m2: str, bypass: bool) -> str:
    order = ["first", "deq", "enq", "flush"] if not bypass else \
            ["enq", "first", "deq", "flush"]
    mutating = ("enq", "deq", "flush")
    if m1 in ("can_enq", "can_deq") or m2 in ("can_enq", "can_deq"):
        return CF
    if m1 == m2:
        return CONFLICT if m1 in mutating else CF
    i1, i2 = order.index(m1), order.index(m2)
    return SEQ_BEFORE if i1 < i2 else SEQ_AFTER


def prim_relation(kind, m1: str, m2: str) -> str:
    if isinstance(kind, RegPrim):
        if m1 == "write" and m2 == "write":
            return CONFLICT
        return CF
    if isinstance(kind, FifoPrim):
        return _fifo_relation(m1, m2, kind.bypass)
    if isinstance(kind, ShiftPrim):
        if m1 == "push" and m2 == "push":
            return CONFLICT
        return CF
    if isinstance(kind, WirePrim):
        if m1 == "drive" and m2 == "drive":
            return CONFLICT
        if m1 == "drive":
            return SEQ_BEFORE
        if m2 == "drive":
            return SEQ_AFTER
        return CF
    raise ValueError(f"not a primitive kind: {kind}")


# ---------------------------------------------------------------------------
# Derived relations for submodule methods
# ---------------------------------------------------------------------------


def method_touches(design: Design, module: Module, method: str,
                   _seen: Optional[set] = None) -> list[tuple[str, object, str]]:
    """Primitive touches of a method, transitively: (path, prim kind, prim method).

    Paths are instance names joined by '.', relative to `module`.
    """
    if _seen is None:
        _seen = set()
    key = (module.name, method)
    if key in _seen:
        return []
    _seen.add(key)
    rule = module.method_rule(method)
    if rule is None:
        return []
    return rule_touches(design, module, rule, _seen)


def rule_touches(design: Design, module: Module, rule: Rule,
                 _seen: Optional[set] = None) -> list[tuple[str, object, str]]:
    out: list[tuple[str, object, str]] = []
    for s in rule.steps:
        if not isinstance(s, CallStep):
            continue
        inst = module.instance(s.inst)
        if inst is None:
            continue
        if isinstance(inst.kind, Submodule):
            sub = design.module(inst.kind.module)
            if sub is None:
                continue
            for path, kind, m in method_touches(design, sub, s.method, _seen):
                out.append((f"{s.inst}.{path}" if path else s.inst, kind, m))
            # The submodule method itself is a touch point at its instance.
            out.append((s.inst, Submodule(inst.kind.module), s.method))
        else:
            out.append((s.inst, inst.kind, s.method))
    return out


def _combine(rels: list[str]) -> str:
    if CONFLICT in rels:
        return CONFLICT
    has_b = SEQ_BEFORE in rels
    has_a = SEQ_AFTER in rels
    if has_b and has_a:
        return CONFLICT
    if has_b:
        return SEQ_BEFORE
    if has_a:
        return SEQ_AFTER
    return CF


def method_relation(design: Design, module: Module, inst: Instance,
                    m1: str, m2: str) -> str:
    """Relation of calling m1 earlier than m2 on the same instance."""
    if not isinstance(inst.kind, Submodule):
        return prim_relation(inst.kind, m1, m2)
    sub = design.module(inst.kind.module)
    if sub is None:
        return CF
    return submodule_method_relation(design, sub, m1, m2)


def submodule_method_relation(design: Design, sub: Module, m1: str, m2: str) -> str:
    t1 = dict_touches(design, sub, m1)
    t2 = dict_touches(design, sub, m2)
    rels: list[str] = []
    for path in t1:
        if path not in t2:
            continue
        for kind, a in t1[path]:
            for _, b in t2[path]:
                rels.append(prim_relation(kind, a, b))
    r1, r2 = sub.method_rule(m1), sub.method_rule(m2)
    if r1 is not None and r2 is not None:
        for x, y in sub.precs:
            if x == r1.id and y == r2.id:
                rels.append(SEQ_BEFORE)
            if x == r2.id and y == r1.id:
                rels.append(SEQ_AFTER)
    # A method re-entered in the same cycle conflicts with itself if it
    # mutates anything or consumes temporal tokens.
    if m1 == m2:
        rule = sub.method_rule(m1)
        if rule is not None and (rule.preds or
                                 any(isinstance(s, SendStep) for s in rule.steps)):
            rels.append(CONFLICT)
    return _combine(rels)


def dict_touches(design: Design, module: Module, method: str) -> dict:
    out: dict[str, list] = {}
    for path, kind, m in method_touches(design, module, method):
        if isinstance(kind, Submodule):
            continue
        out.setdefault(path, []).append((kind, m))
    return out


def is_pure_method(design: Design, module: Module, inst: Instance, method: str) -> bool:
    """True iff calling the method can never mutate state (guard-legal)."""
    k = inst.kind
    if not isinstance(k, Submodule):
        table = prim_methods(k)
        if table is None or method not in table:
            return False
        return table[method][2]
    sub = design.module(k.module)
    if sub is None:
        return False
    rule = sub.method_rule(method)
    if rule is None or rule.is_multicycle or rule.preds or rule.channels:
        return False
    for s in rule.steps:
        if isinstance(s, SendStep):
            return False
        if isinstance(s, CallStep):
            si = sub.instance(s.inst)
            if si is None or not is_pure_method(design, sub, si, s.method):
                return False
    return True
