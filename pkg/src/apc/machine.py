"""Computing-element semantics, netlist graph and structural validation.

An analog program is a directed graph of computing elements connected by
nets. Every element drives exactly one net; a net may fan out to any
number of element inputs. All signals live in machine units, the
interval [-1, 1]; values that leave it are clamped and flagged as
overloads.

Element semantics (machine convention: summers and integrators invert):

    Summer              out = -(sum of inputs)
    Integrator          out = state; d(state)/dtau = -k0 * (sum of inputs)
    Multiplier          out = x * y
    Coefficient         out = alpha * x, alpha in [0, 1]
    FunctionGenerator   out = piecewise-linear table lookup, end-clamped
    Reference           out = +1 or -1

Netlists are immutable after construction and safe to share between
concurrent simulations.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx


class StructuralError(ValueError):
    """A netlist or element is malformed beyond what a report can carry."""


class AlgebraicLoopError(StructuralError):
    """An operation that requires a loop-free algebraic graph found cycles."""

    def __init__(self, cycles):
        self.cycles = cycles
        super().__init__(f"algebraic loop(s): {cycles}")


class Kind(str, Enum):
    SUMMER = "summer"
    INTEGRATOR = "integrator"
    MULTIPLIER = "multiplier"
    COEFFICIENT = "coefficient"
    FUNCTION_GENERATOR = "function_generator"
    REFERENCE = "reference"


# input arity per kind: (min, max); None = unbounded
_ARITY = {
    Kind.SUMMER: (1, None),
    Kind.INTEGRATOR: (1, None),
    Kind.MULTIPLIER: (2, 2),
    Kind.COEFFICIENT: (1, 1),
    Kind.FUNCTION_GENERATOR: (1, 1),
    Kind.REFERENCE: (0, 0),
}

_PARAM_KEYS = {
    Kind.SUMMER: set(),
    Kind.INTEGRATOR: {"ic", "k0"},
    Kind.MULTIPLIER: set(),
    Kind.COEFFICIENT: {"alpha"},
    Kind.FUNCTION_GENERATOR: {"table"},
    Kind.REFERENCE: {"constant"},
}


@dataclass(frozen=True)
class MachineValue:
    """A machine-unit value together with its overload status.

    After clamping, ``value`` lies in [-1, 1] and ``overloaded`` is true
    exactly when the pre-clamp magnitude exceeded 1.
    """

    value: float
    overloaded: bool = False


def clamp(value: float) -> MachineValue:
    """Limit a raw value to the machine interval [-1, 1].

    Non-finite input signals a simulator bug and raises StructuralError
    rather than being silently absorbed.
    """
    if not math.isfinite(value):
        raise StructuralError(f"non-finite machine value: {value!r}")
    if value > 1.0:
        return MachineValue(1.0, True)
    if value < -1.0:
        return MachineValue(-1.0, True)
    return MachineValue(value, False)


def interpolate(table, x: float) -> float:
    """Piecewise-linear interpolation of a breakpoint table, end-clamped."""
    xs = [p[0] for p in table]
    ys = [p[1] for p in table]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[-1]:
        return ys[-1]
    i = bisect_right(xs, x)
    x0, x1 = xs[i - 1], xs[i]
    y0, y1 = ys[i - 1], ys[i]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


@dataclass(frozen=True)
class Element:
    """One computing element: identity, kind, parameters and input nets."""

    id: str
    kind: Kind
    params: dict = field(default_factory=dict)
    inputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind is Kind.FUNCTION_GENERATOR and "table" in self.params:
            table = tuple((float(x), float(y)) for x, y in self.params["table"])
            object.__setattr__(self, "params", {**self.params, "table": table})


def summer(eid: str, inputs) -> Element:
    return Element(eid, Kind.SUMMER, {}, tuple(inputs))


def integrator(eid: str, inputs, ic: float = 0.0, k0: float = 1.0) -> Element:
    return Element(eid, Kind.INTEGRATOR, {"ic": float(ic), "k0": float(k0)}, tuple(inputs))


def multiplier(eid: str, a: str, b: str) -> Element:
    return Element(eid, Kind.MULTIPLIER, {}, (a, b))


def coefficient(eid: str, src: str, alpha: float) -> Element:
    return Element(eid, Kind.COEFFICIENT, {"alpha": float(alpha)}, (src,))


def function_generator(eid: str, src: str, table) -> Element:
    return Element(eid, Kind.FUNCTION_GENERATOR, {"table": tuple(table)}, (src,))


def reference(eid: str, constant: float) -> Element:
    return Element(eid, Kind.REFERENCE, {"constant": float(constant)}, ())


def element_output(kind: Kind, params: dict, inputs, state: float | None = None) -> float:
    """Evaluate one element given machine-unit input values.

    Integrators return ``state``; their state evolution belongs to the
    simulator. Raises StructuralError on arity mismatch.
    """
    lo, hi = _ARITY[kind]
    n = len(inputs)
    if n < lo or (hi is not None and n > hi):
        raise StructuralError(f"{kind.value} takes {lo}..{hi or 'N'} inputs, got {n}")
    if kind is Kind.SUMMER:
        return -sum(inputs)
    if kind is Kind.INTEGRATOR:
        if state is None:
            raise StructuralError("integrator evaluation requires a state")
        return state
    if kind is Kind.MULTIPLIER:
        return inputs[0] * inputs[1]
    if kind is Kind.COEFFICIENT:
        return params["alpha"] * inputs[0]
    if kind is Kind.FUNCTION_GENERATOR:
        return interpolate(params["table"], inputs[0])
    return params["constant"]


@dataclass(frozen=True)
class Net:
    """A single-driver net: the driving element id and an optional name."""

    driver: str
    name: str | None = None


class Netlist:
    """Immutable element graph.

    ``elements`` maps element id to Element, ``nets`` maps net id to Net,
    ``outputs`` lists net names exposed to traces. Construction freezes
    insertion order, which downstream passes rely on for determinism.
    """

    def __init__(self, elements, nets, outputs=()):
        self.elements: dict[str, Element] = {}
        for e in elements:
            if e.id in self.elements:
                raise StructuralError(f"duplicate element id {e.id!r}")
            self.elements[e.id] = e
        self.nets: dict[str, Net] = {}
        for nid, net in nets.items():
            self.nets[nid] = net if isinstance(net, Net) else Net(*net)
        self.outputs: tuple[str, ...] = tuple(outputs)

    @classmethod
    def from_elements(cls, elements, outputs: dict[str, str] | None = None) -> "Netlist":
        """Build a netlist where each element drives a net of the same id.

        ``outputs`` maps output name -> element id.
        """
        outputs = outputs or {}
        names = {eid: name for name, eid in outputs.items()}
        nets = {e.id: Net(e.id, names.get(e.id)) for e in elements}
        return cls(elements, nets, tuple(outputs))

    def net_by_name(self, name: str) -> str:
        for nid, net in self.nets.items():
            if net.name == name:
                return nid
        raise KeyError(f"no net named {name!r}")

    def consumers(self, net_id: str):
        return [e for e in self.elements.values() if net_id in e.inputs]

    def counts(self) -> dict[str, int]:
        """Element counts by kind, with single-input summers split out."""
        out = {k.value: 0 for k in Kind}
        out["inverter"] = 0
        for e in self.elements.values():
            if e.kind is Kind.SUMMER and len(e.inputs) == 1:
                out["inverter"] += 1
            else:
                out[e.kind.value] += 1
        return {k: v for k, v in out.items() if v}


@dataclass(frozen=True)
class Violation:
    element: str
    rule: str
    message: str


def _check_params(e: Element):
    keys = set(e.params)
    want = _PARAM_KEYS[e.kind]
    if keys != want:
        yield Violation(e.id, "param-range", f"expected params {sorted(want)}, got {sorted(keys)}")
        return
    if e.kind is Kind.INTEGRATOR:
        ic, k0 = e.params["ic"], e.params["k0"]
        if not (math.isfinite(ic) and -1.0 <= ic <= 1.0):
            yield Violation(e.id, "param-range", f"ic {ic} outside [-1, 1]")
        if not (math.isfinite(k0) and k0 > 0):
            yield Violation(e.id, "param-range", f"k0 {k0} must be positive")
    elif e.kind is Kind.COEFFICIENT:
        a = e.params["alpha"]
        if not (math.isfinite(a) and 0.0 <= a <= 1.0):
            yield Violation(e.id, "param-range", f"alpha {a} outside [0, 1]")
    elif e.kind is Kind.REFERENCE:
        if e.params["constant"] not in (1.0, -1.0):
            yield Violation(e.id, "param-range", f"constant {e.params['constant']} not in {{+1, -1}}")
    elif e.kind is Kind.FUNCTION_GENERATOR:
        table = e.params["table"]
        if len(table) < 2:
            yield Violation(e.id, "param-range", "table needs at least 2 breakpoints")
            return
        xs = [p[0] for p in table]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            yield Violation(e.id, "param-range", "table x values must be strictly increasing")
        for x, y in table:
            if not (-1.0 <= x <= 1.0 and -1.0 <= y <= 1.0):
                yield Violation(e.id, "param-range", f"breakpoint ({x}, {y}) outside [-1, 1]")


def validate(netlist: Netlist) -> list[Violation]:
    """Structural validation report; empty means the netlist is well formed.

    Checks the single-driver rule, input arities, parameter ranges, and
    that every declared output name exists. Violations are report
    entries, never exceptions.
    """
    report: list[Violation] = []
    drivers_seen: dict[str, str] = {}
    for nid, net in netlist.nets.items():
        if net.driver not in netlist.elements:
            report.append(Violation(net.driver, "single-driver", f"net {nid!r} driven by unknown element"))
        elif net.driver in drivers_seen:
            report.append(
                Violation(net.driver, "single-driver", f"element drives both {drivers_seen[net.driver]!r} and {nid!r}")
            )
        else:
            drivers_seen[net.driver] = nid
    for e in netlist.elements.values():
        if e.id not in drivers_seen:
            report.append(Violation(e.id, "single-driver", "element drives no net"))
        lo, hi = _ARITY[e.kind]
        n = len(e.inputs)
        if n < lo or (hi is not None and n > hi):
            report.append(Violation(e.id, "arity", f"{e.kind.value} takes {lo}..{hi or 'N'} inputs, got {n}"))
        for nid in e.inputs:
            if nid not in netlist.nets:
                report.append(Violation(e.id, "dangling-input", f"input references missing net {nid!r}"))
        report.extend(_check_params(e))
    names = {net.name for net in netlist.nets.values() if net.name}
    for name in netlist.outputs:
        if name not in names:
            report.append(Violation("", "missing-output", f"output {name!r} names no net"))
    return report


def _element_graph(netlist: Netlist) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(netlist.elements)
    for e in netlist.elements.values():
        for nid in e.inputs:
            g.add_edge(netlist.nets[nid].driver, e.id)
    return g


def algebraic_loops(netlist: Netlist) -> list[list[str]]:
    """Every element cycle that does not pass through an integrator.

    Feedback through integrators is the normal programming pattern;
    integrator-free cycles have no defined dataflow value. Cycles are
    rotated to start at their smallest id and sorted, so output is
    deterministic.
    """
    g = _element_graph(netlist)
    g.remove_nodes_from([eid for eid, e in netlist.elements.items() if e.kind is Kind.INTEGRATOR])
    cycles = []
    for cyc in nx.simple_cycles(g):
        k = cyc.index(min(cyc))
        cycles.append(cyc[k:] + cyc[:k])
    cycles.sort()
    return cycles


def evaluation_order(netlist: Netlist) -> list[str]:
    """Topological order of the non-integrator elements.

    Integrator outputs are treated as sources (their values come from
    simulator state), so evaluating elements in this order computes every
    net in a single pass. Raises AlgebraicLoopError if cycles remain.
    """
    loops = algebraic_loops(netlist)
    if loops:
        raise AlgebraicLoopError(loops)
    g = _element_graph(netlist)
    g.remove_nodes_from([eid for eid, e in netlist.elements.items() if e.kind is Kind.INTEGRATOR])
    return list(nx.topological_sort(g))


# ---------------------------------------------------------------------------
# JSON wire format. Field names are part of the contract; unknown keys are
# rejected so that format drift fails loudly.

def _reject_unknown(doc: dict, allowed: set[str], where: str):
    extra = set(doc) - allowed
    if extra:
        raise StructuralError(f"unknown key(s) {sorted(extra)} in {where}")


def netlist_to_dict(netlist: Netlist) -> dict:
    elements = []
    for e in netlist.elements.values():
        params = dict(e.params)
        if "table" in params:
            params["table"] = [list(p) for p in params["table"]]
        elements.append({"id": e.id, "kind": e.kind.value, "params": params, "inputs": list(e.inputs)})
    nets = [{"id": nid, "driver": net.driver, "name": net.name} for nid, net in netlist.nets.items()]
    return {"elements": elements, "nets": nets, "outputs": list(netlist.outputs)}


def netlist_from_dict(doc: dict) -> Netlist:
    _reject_unknown(doc, {"elements", "nets", "outputs"}, "netlist")
    for key in ("elements", "nets", "outputs"):
        if key not in doc:
            raise StructuralError(f"netlist document missing {key!r}")
    elements = []
    for ed in doc["elements"]:
        _reject_unknown(ed, {"id", "kind", "params", "inputs"}, f"element {ed.get('id')!r}")
        try:
            kind = Kind(ed["kind"])
        except ValueError:
            raise StructuralError(f"unknown element kind {ed.get('kind')!r}") from None
        params = dict(ed.get("params", {}))
        _reject_unknown(params, _PARAM_KEYS[kind], f"params of {ed.get('id')!r}")
        if "table" in params:
            params["table"] = tuple((float(x), float(y)) for x, y in params["table"])
        elements.append(Element(ed["id"], kind, params, tuple(ed.get("inputs", ()))))
    nets = {}
    for nd in doc["nets"]:
        _reject_unknown(nd, {"id", "driver", "name"}, f"net {nd.get('id')!r}")
        nets[nd["id"]] = Net(nd["driver"], nd.get("name"))
    return Netlist(elements, nets, tuple(doc["outputs"]))


def save_netlist(netlist: Netlist, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(netlist_to_dict(netlist), fh, indent=2)
        fh.write("\n")


def load_netlist(path) -> Netlist:
    with open(path, encoding="utf-8") as fh:
        return netlist_from_dict(json.load(fh))
