"""Flattening and cycle-accurate evaluation of structural netlists.

The flattener inlines the instance tree of per-module netlists into one
graph: child input sockets alias parent nets, child outputs feed parent
import nets, and all state elements get hierarchical names.  Evaluation
orders combinational nodes topologically once, then each cycle computes
every net and commits register / FIFO / shift state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ir import eval_op
from .synth import FifoNode, ModuleNetlist, RegNode, ShiftNode, SynthError, SynthResult


@dataclass
class FlatNetlist:
    widths: list[int] = field(default_factory=list)
    names: dict[int, str] = field(default_factory=dict)
    nodes: list[tuple] = field(default_factory=list)   # ("op",...) | ("input", name, out)
    regs: list[RegNode] = field(default_factory=list)
    fifos: list[FifoNode] = field(default_factory=list)
    shifts: list[ShiftNode] = field(default_factory=list)
    in_ports: dict[str, int] = field(default_factory=dict)
    out_ports: dict[str, int] = field(default_factory=dict)
    rule_wf: dict[str, int] = field(default_factory=dict)   # "path.rule" -> net
    eval_order: list[int] = field(default_factory=list)     # node indices
    mutation: Optional[str] = None
    _mutated_node: Optional[int] = None

    def stats(self) -> dict:
        return {"nets": len(self.widths), "nodes": len(self.nodes),
                "regs": len(self.regs), "fifos": len(self.fifos),
                "shifts": len(self.shifts)}


def flatten(result: SynthResult) -> FlatNetlist:
    flat = FlatNetlist()

    def inst(modname: str, prefix: str, drives: dict[str, int]) -> dict[str, int]:
        ml: ModuleNetlist = result.netlists[modname]
        mapping: dict[int, int] = {}

        def fmap(local: int) -> int:
            if local not in mapping:
                w = ml.widths[local]
                name = ml.names.get(local)
                full = f"{prefix}.{name}" if (prefix and name) else name
                mapping[local] = flat.widths.__len__()
                flat.widths.append(w)
                if full:
                    flat.names[mapping[local]] = full
            return mapping[local]

        # input sockets alias parent nets; top-level ports become inputs
        for name, net in ml.in_ports.items():
            if name in drives:
                mapping[net] = drives[name]
            else:
                out = fmap(net)
                if prefix == "":
                    flat.nodes.append(("input", name, out))
                    flat.in_ports[name] = out
                else:
                    # undriven child port reads as zero
                    flat.nodes.append(("op", "const", (0, ml.widths[net]), (), out))

        for node in ml.nodes:
            if node[0] == "portin":
                continue
            _, op, params, ins, out = node
            flat.nodes.append(("op", op, params,
                               tuple(fmap(i) for i in ins), fmap(out)))

        for r in ml.regs:
            flat.regs.append(RegNode(f"{prefix}.{r.name}" if prefix else r.name,
                                     r.width, r.init, fmap(r.d), fmap(r.en),
                                     fmap(r.q)))
        for f in ml.fifos:
            flat.fifos.append(FifoNode(
                f"{prefix}.{f.name}" if prefix else f.name, f.width, f.depth,
                f.bypass, fmap(f.enq_en), fmap(f.enq_data), fmap(f.deq_en),
                fmap(f.flush_en), fmap(f.first), fmap(f.count)))
        for s in ml.shifts:
            flat.shifts.append(ShiftNode(
                f"{prefix}.{s.name}" if prefix else s.name, s.width, s.depth,
                fmap(s.in_valid), fmap(s.in_data), fmap(s.en),
                fmap(s.out_valid), fmap(s.out_data)))

        for rid, net in ml.rule_wf.items():
            flat.rule_wf[f"{prefix}.{rid}" if prefix else rid] = fmap(net)

        outs = {name: fmap(net) for name, net in ml.out_ports.items()}

        for sub in ml.subs:
            cprefix = f"{prefix}.{sub.name}" if prefix else sub.name
            cdrives = {k: fmap(v) for k, v in sub.drives.items()}
            couts = inst(sub.module, cprefix, cdrives)
            for name, local in sub.imports.items():
                flat.nodes.append(("alias", couts[name], fmap(local)))
        return outs

    top_outs = inst(result.top, "", {})
    flat.out_ports = top_outs
    _toposort(flat)
    return flat


def _toposort(flat: FlatNetlist) -> None:
    """Order nodes so every net is computed before use; detect cycles."""
    driver: dict[int, int] = {}
    for idx, node in enumerate(flat.nodes):
        driver[node[-1]] = idx
    state_out = set()
    for r in flat.regs:
        state_out.add(r.q)
    for f in flat.fifos:
        state_out.update((f.first, f.count))
    for s in flat.shifts:
        state_out.update((s.out_valid, s.out_data))

    def deps(idx: int) -> tuple[int, ...]:
        node = flat.nodes[idx]
        if node[0] == "op":
            return node[3]
        if node[0] == "alias":
            return (node[1],)
        return ()

    order: list[int] = []
    mark: dict[int, int] = {}
    for start in range(len(flat.nodes)):
        if mark.get(start, 0) == 2:
            continue
        stack: list[tuple[int, int]] = [(start, 0)]
        mark[start] = 1
        while stack:
            idx, di = stack[-1]
            ds = deps(idx)
            advanced = False
            while di < len(ds):
                net = ds[di]
                di += 1
                if net in state_out:
                    continue
                d = driver.get(net)
                if d is None:
                    continue
                st = mark.get(d, 0)
                if st == 1:
                    names = [flat.names.get(flat.nodes[i][-1], f"n{flat.nodes[i][-1]}")
                             for i, _ in stack]
                    raise SynthError("combinational cycle through: "
                                     + " -> ".join(names[-8:]))
                if st == 0:
                    stack[-1] = (idx, di)
                    stack.append((d, 0))
                    mark[d] = 1
                    advanced = True
                    break
            if advanced:
                continue
            stack.pop()
            mark[idx] = 2
            order.append(idx)
    flat.eval_order = order


def mutate(flat: FlatNetlist, seed: int) -> str:
    """Invert the output of one deterministic combinational node."""
    cands = [i for i, n in enumerate(flat.nodes)
             if n[0] == "op" and n[1] not in ("const",)]
    if not cands:
        raise SynthError("nothing to mutate")
    pick = cands[seed % len(cands)]
    flat._mutated_node = pick
    node = flat.nodes[pick]
    flat.mutation = f"node {pick} ({node[1]}) output inverted"
    return flat.mutation


class NetSim:
    """Cycle-accurate evaluator over a flattened netlist."""

    def __init__(self, flat: FlatNetlist):
        self.flat = flat
        self.values = [0] * len(flat.widths)
        self.inputs: dict[str, int] = {name: 0 for name in flat.in_ports}
        self.reg_state = [r.init for r in flat.regs]
        self.fifo_state: list[list[int]] = [[] for _ in flat.fifos]
        self.shift_state: list[list[tuple[int, int]]] = [
            [(0, 0)] * s.depth for s in flat.shifts]
        self.cycle = 0

    # -- cycle evaluation ---------------------------------------------------

    def eval_comb(self) -> None:
        flat = self.flat
        vals = self.values
        for i, r in enumerate(flat.regs):
            vals[r.q] = self.reg_state[i]
        for i, f in enumerate(flat.fifos):
            items = self.fifo_state[i]
            vals[f.first] = items[0] if items else 0
            vals[f.count] = len(items)
        for i, s in enumerate(flat.shifts):
            v, d = self.shift_state[i][-1]
            vals[s.out_valid] = v
            vals[s.out_data] = d
        mut = flat._mutated_node
        for idx in flat.eval_order:
            node = flat.nodes[idx]
            if node[0] == "input":
                vals[node[2]] = self.inputs.get(node[1], 0)
                continue
            if node[0] == "alias":
                vals[node[2]] = vals[node[1]]
                continue
            _, op, params, ins, out = node
            widths = tuple(flat.widths[i] for i in ins)
            vals[out] = eval_op(op, tuple(vals[i] for i in ins), widths, params)
            if idx == mut:
                vals[out] ^= 1

    def commit(self) -> None:
        vals = self.values
        for i, r in enumerate(self.flat.regs):
            if vals[r.en]:
                self.reg_state[i] = vals[r.d]
        for i, f in enumerate(self.flat.fifos):
            items = self.fifo_state[i]
            if f.bypass:
                if vals[f.enq_en]:
                    items.append(vals[f.enq_data])
                if vals[f.deq_en] and items:
                    items.pop(0)
                if vals[f.flush_en]:
                    items.clear()
            else:
                if vals[f.deq_en] and items:
                    items.pop(0)
                if vals[f.enq_en]:
                    items.append(vals[f.enq_data])
                if vals[f.flush_en]:
                    items.clear()
        for i, s in enumerate(self.flat.shifts):
            if vals[s.en]:
                st = self.shift_state[i]
                st.insert(0, (vals[s.in_valid], vals[s.in_data]))
                st.pop()
        self.cycle += 1

    def step(self) -> None:
        self.eval_comb()
        self.commit()

    # -- observers ------------------------------------------------------------

    def wf(self, name: str) -> int:
        return self.values[self.flat.rule_wf[name]]

    def out(self, name: str) -> int:
        return self.values[self.flat.out_ports[name]]
