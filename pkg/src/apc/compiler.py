"""Lowering a resolved ODE system to a computing-element netlist.

The classic feedback construction: assume the highest derivative of each
variable is available on a net, derive the lower derivatives by a chain
of integrators, synthesize the right-hand side from those signals, and
feed it back into the head of the chain.

Because summers and integrators invert, every net carries a sign parity:
net value = parity * signal value. The lowering tracks parity per net
and inserts single-input summers only where parities genuinely clash;
with the chain head assumed positive, the k-th integrator output carries
parity (-1)^k and its initial-condition setting is parity * init.

Amplitude and time scaling enter here: a ScaleMap turns each chain stage
into a coefficient of alpha = lambda * m_upper / (m_lower * k0) and
folds amplitude factors into term coefficients. Without a ScaleMap the
chains are plain and the netlist computes y(k0 * tau).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

from .dsl import Bin, Call, Expr, Neg, Num, OdeSystem, Ref, signal_name
from .machine import (
    Element,
    Kind,
    Net,
    Netlist,
    algebraic_loops,
    validate,
)
from .scaling import Mapping, ParamBinding, ScaleMap, ScalingError, SignalBinding, algebraic_order, stage_gain

_PENDING = "__pending__"
_TOL = 1e-9


class CompileError(ValueError):
    pass


class UnscaledCoefficientError(CompileError):
    """A constant landed outside [-1, 1]; amplitude scaling must run first."""


class ScalingViolationError(CompileError):
    """An initial condition or stage gain escaped machine range."""


@dataclass(frozen=True)
class CompileOptions:
    """``k0`` applies when no ScaleMap is given; a ScaleMap carries its own."""

    k0: float = 1.0
    optimize_inverters: bool = True
    scale: ScaleMap | None = None

    def __post_init__(self):
        if not (self.k0 > 0):
            raise ValueError("k0 must be positive")


@dataclass
class SignalMap:
    """Where each (variable, derivative order) signal lives, with parity."""

    entries: dict = field(default_factory=dict)  # (var, order) -> (net, parity)

    def net(self, var: str, order: int = 0) -> str:
        return self.entries[(var, order)][0]

    def parity(self, var: str, order: int = 0) -> int:
        return self.entries[(var, order)][1]


@dataclass
class CompileResult:
    netlist: Netlist
    mapping: Mapping
    signal_map: SignalMap
    report: dict


class NetlistBuilder:
    """Accumulates elements and nets with deterministic ids (kind + counter)."""

    def __init__(self):
        self.elements: dict[str, Element] = {}
        self.nets: dict[str, Net] = {}
        self._counters: Counter = Counter()

    def _add(self, prefix: str, kind: Kind, params: dict, inputs) -> str:
        self._counters[prefix] += 1
        eid = f"{prefix}{self._counters[prefix]}"
        self.elements[eid] = Element(eid, kind, params, tuple(inputs))
        self.nets[eid] = Net(eid)
        return eid

    def add_summer(self, inputs) -> str:
        return self._add("sum", Kind.SUMMER, {}, inputs)

    def add_integrator(self, inputs, ic: float, k0: float) -> str:
        return self._add("int", Kind.INTEGRATOR, {"ic": ic, "k0": k0}, inputs)

    def add_multiplier(self, a: str, b: str) -> str:
        return self._add("mul", Kind.MULTIPLIER, {}, (a, b))

    def add_coefficient(self, src: str, alpha: float) -> str:
        return self._add("coef", Kind.COEFFICIENT, {"alpha": alpha}, (src,))

    def add_reference(self, constant: float) -> str:
        return self._add("ref", Kind.REFERENCE, {"constant": constant}, ())

    def add_function_generator(self, src: str, table) -> str:
        return self._add("fgen", Kind.FUNCTION_GENERATOR, {"table": table}, (src,))

    def set_inputs(self, eid: str, inputs) -> None:
        self.elements[eid] = replace(self.elements[eid], inputs=tuple(inputs))

    def name_net(self, net_id: str, name: str) -> None:
        self.nets[net_id] = replace(self.nets[net_id], name=name)

    def build(self, outputs) -> Netlist:
        for e in self.elements.values():
            if _PENDING in e.inputs:
                raise CompileError(f"internal error: unpatched feedback input on {e.id}")
        return Netlist(self.elements.values(), self.nets, outputs)


# --- expression normalization ----------------------------------------------
# An expression becomes a sum of terms; each term is a numeric coefficient
# (with symbolic param bookkeeping for the sweep interface) times signal,
# lookup and parenthesized-sum factors. Products never distribute over
# sums, so the element structure of the source is preserved.

@dataclass
class _FSignal:
    var: str
    order: int


@dataclass
class _FLut:
    table: str
    arg: "_NSum"


@dataclass
class _FSum:
    inner: "_NSum"


@dataclass
class _Term:
    coeff: float
    pexps: Counter
    factors: list


@dataclass
class _NSum:
    terms: list


def _mk_sum(terms) -> _NSum:
    merged: dict = {}
    out = []
    for t in terms:
        if t.coeff == 0.0:
            continue
        if not t.factors:
            key = frozenset(t.pexps.items())
            if key in merged:
                merged[key].coeff += t.coeff
            else:
                merged[key] = _Term(t.coeff, t.pexps, [])
                out.append(merged[key])
        else:
            out.append(t)
    return _NSum([t for t in out if t.coeff != 0.0])


def _is_const(n: _NSum) -> bool:
    return len(n.terms) == 1 and not n.terms[0].factors


def _scaled(n: _NSum, c: float, pexps: Counter) -> _NSum:
    return _mk_sum([_Term(t.coeff * c, t.pexps + pexps, t.factors) for t in n.terms])


def _negated(n: _NSum) -> _NSum:
    return _NSum([_Term(-t.coeff, t.pexps, t.factors) for t in n.terms])


def normalize(expr: Expr, system: OdeSystem) -> _NSum:
    if isinstance(expr, Num):
        return _mk_sum([_Term(expr.value, Counter(), [])])
    if isinstance(expr, Ref):
        if expr.name in system.params:
            return _mk_sum([_Term(system.params[expr.name], Counter({expr.name: 1}), [])])
        return _mk_sum([_Term(1.0, Counter(), [_FSignal(expr.name, expr.order)])])
    if isinstance(expr, Neg):
        return _negated(normalize(expr.operand, system))
    if isinstance(expr, Bin):
        left = normalize(expr.left, system)
        right = normalize(expr.right, system)
        if expr.op == "+":
            return _mk_sum(left.terms + right.terms)
        if expr.op == "-":
            return _mk_sum(left.terms + _negated(right).terms)
        if _is_const(left):
            t = left.terms[0]
            return _scaled(right, t.coeff, t.pexps)
        if _is_const(right):
            t = right.terms[0]
            return _scaled(left, t.coeff, t.pexps)

        def as_factors(n: _NSum):
            if len(n.terms) == 1:
                t = n.terms[0]
                return t.coeff, t.pexps, t.factors
            return 1.0, Counter(), [_FSum(n)]

        lc, lp, lf = as_factors(left)
        rc, rp, rf = as_factors(right)
        return _mk_sum([_Term(lc * rc, lp + rp, lf + rf)])
    if isinstance(expr, Call) and expr.func == "lut":
        arg = normalize(expr.args[1], system)
        return _mk_sum([_Term(1.0, Counter(), [_FLut(expr.args[0].name, arg)])])
    raise CompileError(f"cannot lower expression {expr!r}")


# --- synthesis ---------------------------------------------------------------

class _Synth:
    def __init__(self, builder: NetlistBuilder, system: OdeSystem, scale: ScaleMap,
                 signal_map: SignalMap):
        self.b = builder
        self.system = system
        self.scale = scale
        self.map = signal_map
        # param -> list of (coefficient element or None, alpha scale factor)
        self.param_sites: dict[str, list] = {}

    def _record_params(self, pexps: Counter, element: str | None, coeff: float):
        for name, exp in pexps.items():
            site = None
            if element is not None and exp == 1 and self.system.params[name] != 0.0:
                site = (element, coeff / self.system.params[name])
            self.param_sites.setdefault(name, []).append(site)

    def invert(self, net: str) -> str:
        return self.b.add_summer([net])

    def const_net(self, value: float, pexps: Counter, want: int) -> str:
        """Materialize a constant on a net at the requested parity."""
        mag = abs(value)
        if mag > 1.0 + _TOL:
            raise UnscaledCoefficientError(
                f"unscaled coefficient {value:.6g}: constants must lie in [-1, 1]; "
                "run the autoscaler or rescale the program")
        mag = min(mag, 1.0)
        sign = 1.0 if value >= 0 else -1.0
        ref = self.b.add_reference(want * sign)
        if mag == 1.0:
            self._record_params(pexps, None, value)
            return ref
        coef = self.b.add_coefficient(ref, mag)
        self._record_params(pexps, coef, value)
        return coef

    def term(self, t: _Term, m_top: float):
        """Lower one term; returns ('const', value, pexps) or ('net', id, parity)."""
        if not t.factors:
            return ("const", t.coeff / m_top, t.pexps)
        amp = 1.0
        nets = []
        parity = 1
        for f in t.factors:
            if isinstance(f, _FSignal):
                net, p = self.map.entries[(f.var, f.order)]
                amp *= self.scale.m(f.var, f.order)
            elif isinstance(f, _FSum):
                net, p = self.sum(f.inner, m_top=1.0)
            else:
                arg, _ = self.sum(f.arg, m_top=1.0, want=1)
                net = self.b.add_function_generator(arg, self.system.tables[f.table])
                p = 1
            nets.append(net)
            parity *= p
        out = nets[0]
        for other in nets[1:]:
            out = self.b.add_multiplier(out, other)
        c = t.coeff * amp / m_top
        mag = abs(c)
        if mag > 1.0 + _TOL:
            raise UnscaledCoefficientError(
                f"unscaled coefficient {c:.6g}: term gains must lie in [-1, 1]; "
                "run the autoscaler or rescale the program")
        mag = min(mag, 1.0)
        if mag != 1.0:
            coef = self.b.add_coefficient(out, mag)
            self._record_params(t.pexps, coef, c)
            out = coef
        else:
            self._record_params(t.pexps, None, c)
        if c < 0:
            parity = -parity
        return ("net", out, parity)

    def sum(self, n: _NSum, m_top: float, want: int | None = None, hint: int = 1):
        """Lower a sum of terms to one net.

        ``want`` requests an output parity; the summer's input-side target
        parity is chosen to honor it for free where possible, and a final
        inverter is inserted only when unavoidable. Mixed-parity addends
        are gathered by a single group summer rather than inverted one by
        one. Returns (net, parity).
        """
        lowered = [self.term(t, m_top) for t in n.terms]
        consts = [(x[1], x[2]) for x in lowered if x[0] == "const"]
        nets = [(x[1], x[2]) for x in lowered if x[0] == "net"]

        if not nets and not consts:
            zero = self.b.add_coefficient(self.b.add_reference(1.0), 0.0)
            return (zero, 1)
        if not nets and len(consts) == 1:
            parity = want or hint
            return (self.const_net(consts[0][0], consts[0][1], parity), parity)
        if len(nets) == 1 and not consts:
            net, parity = nets[0]
            if want is not None and parity != want:
                return (self.invert(net), -parity)
            return (net, parity)

        if want is not None:
            target = -want
        else:
            vote = sum(p for _, p in nets)
            target = (1 if vote > 0 else -1) if vote != 0 else -hint
        direct = [net for net, p in nets if p == target]
        minority = [net for net, p in nets if p != target]
        direct.extend(self.const_net(v, px, target) for v, px in consts)
        if minority:
            direct.append(self.b.add_summer(minority))
        out = self.b.add_summer(direct)
        return (out, -target)


def build_integrator_chain(builder: NetlistBuilder, var: str, order: int,
                           machine_inits, k0: float, gains=None):
    """Create the integrator chain for one variable.

    ``machine_inits[k]`` is the scaled initial value of derivative order
    k. ``gains[j]`` is the required stage gain feeding integrator j
    (default 1.0 each, realized as a coefficient of gains[j] / k0 when
    that is not unity). Returns (entry element id, {(var, order) ->
    (net, parity)}). The entry element's input stays unpatched for the
    fed-back highest derivative.
    """
    gains = gains or [k0] * (order + 1)
    entries = {}
    entry = None
    prev_net = None
    for j in range(1, order + 1):
        d = order - j
        parity = -1 if j % 2 else 1
        init = machine_inits[d]
        ic = parity * init
        if abs(ic) > 1.0 + _TOL:
            raise ScalingViolationError(
                f"initial condition of {signal_name(var, d)} is {init:.6g} machine units; "
                "the autoscaler must run first")
        ic = max(-1.0, min(1.0, ic))
        alpha = gains[j] / k0
        if alpha > 1.0 + _TOL or alpha <= 0:
            raise ScalingViolationError(
                f"stage gain {gains[j]:.6g} needs alpha {alpha:.6g} at k0={k0:.6g}; "
                "rerun time scaling")
        alpha = min(alpha, 1.0)
        src = _PENDING if j == 1 else prev_net
        if alpha != 1.0:
            src = builder.add_coefficient(src, alpha)
        eid = builder.add_integrator([src], ic=ic, k0=k0)
        if j == 1:
            entry = src if src != eid and src != _PENDING else eid
        entries[(var, d)] = (eid, parity)
        prev_net = eid
    return entry, entries


def close_feedback(builder: NetlistBuilder, entry: str, rhs_net: str) -> None:
    """Patch the fed-back highest-derivative net into a chain entry element."""
    e = builder.elements[entry]
    builder.set_inputs(entry, [rhs_net if n == _PENDING else n for n in e.inputs])


# --- inverter optimization ---------------------------------------------------

def _optimize_inverters(builder: NetlistBuilder, protected: set) -> None:
    """Cancel inverter pairs and double-negated multiplier inputs, then
    drop elements that no longer feed anything observable."""
    elements = builder.elements

    def is_inverter(eid: str) -> bool:
        e = elements[eid]
        return e.kind is Kind.SUMMER and len(e.inputs) == 1

    def driver(net_id: str) -> str:
        return builder.nets[net_id].driver

    for _ in range(len(elements) + 1):
        changed = False
        for eid, e in list(elements.items()):
            if e.kind is Kind.MULTIPLIER:
                da, db = driver(e.inputs[0]), driver(e.inputs[1])
                if is_inverter(da) and is_inverter(db):
                    builder.set_inputs(eid, (elements[da].inputs[0], elements[db].inputs[0]))
                    changed = True
            if is_inverter(eid):
                d = driver(e.inputs[0])
                if is_inverter(d):
                    src = elements[d].inputs[0]
                    for cid, c in list(elements.items()):
                        if cid != eid and eid in c.inputs:
                            builder.set_inputs(cid, [src if n == eid else n for n in c.inputs])
                            changed = True
        if not changed:
            break

    live = set()
    stack = [eid for eid, e in elements.items() if e.kind is Kind.INTEGRATOR]
    stack += [builder.nets[n].driver for n in protected if n in builder.nets]
    while stack:
        eid = stack.pop()
        if eid in live:
            continue
        live.add(eid)
        stack.extend(driver(n) for n in elements[eid].inputs)
    for eid in [eid for eid in elements if eid not in live]:
        del elements[eid]
        del builder.nets[eid]


# --- top-level compilation ---------------------------------------------------

def compile_system(system: OdeSystem, options: CompileOptions | None = None) -> CompileResult:
    """Lower a resolved system to a validated netlist plus its sidecar.

    Deterministic: identical input produces an identical netlist. The
    netlist is loop-free (every cycle passes through an integrator);
    order-0 subsystems with algebraic cycles are a compile error naming
    the cycle.
    """
    options = options or CompileOptions()
    scale = options.scale if options.scale is not None else ScaleMap.identity(options.k0)
    k0 = scale.k0

    builder = NetlistBuilder()
    signal_map = SignalMap()
    synth = _Synth(builder, system, scale, signal_map)

    chains = {}
    for var, order in system.var_order.items():
        if order == 0:
            continue
        inits = [system.inits[(var, k)] / scale.m(var, k) for k in range(order)]
        gains = [None] + [stage_gain(scale, var, order - j) for j in range(1, order + 1)]
        entry, entries = build_integrator_chain(builder, var, order, inits, k0, gains)
        chains[var] = entry
        signal_map.entries.update(entries)

    try:
        zero_order = algebraic_order(system)
    except ScalingError as exc:
        raise CompileError(str(exc)) from None
    for var in zero_order:
        net, parity = synth.sum(normalize(system.equations[var], system),
                                m_top=scale.m(var, 0))
        signal_map.entries[(var, 0)] = (net, parity)

    for var, order in system.var_order.items():
        if order == 0:
            continue
        net, parity = synth.sum(normalize(system.equations[var], system),
                                m_top=scale.m(var, order), want=1)
        if parity != 1:
            raise CompileError(f"internal parity bookkeeping error on {var!r}")
        close_feedback(builder, chains[var], net)
        signal_map.entries[(var, order)] = (net, 1)

    for name, order in system.outputs:
        net, parity = signal_map.entries[(name, order)]
        if order == 0 and parity == -1:
            net = synth.invert(net)
            parity = 1
            signal_map.entries[(name, 0)] = (net, parity)
        builder.name_net(net, signal_name(name, order))

    if options.optimize_inverters:
        protected = {net for net, _ in signal_map.entries.values()}
        _optimize_inverters(builder, protected)

    outputs = tuple(signal_name(name, order) for name, order in system.outputs)
    netlist = builder.build(outputs)

    problems = validate(netlist)
    if problems:
        raise CompileError(f"internal error: compiled netlist invalid: {problems}")
    loops = algebraic_loops(netlist)
    if loops:
        raise CompileError(f"algebraic loop without an integrator: {loops[0]}")

    signals = {
        signal_name(var, order): SignalBinding(net, parity, scale.m(var, order))
        for (var, order), (net, parity) in signal_map.entries.items()
    }
    params = {}
    for name, sites in synth.param_sites.items():
        if len(sites) == 1 and sites[0] is not None:
            element, alpha_scale = sites[0]
            params[name] = ParamBinding(element, alpha_scale, system.params[name])
    mapping = Mapping(signals, params, lam=scale.lam, k0=k0,
                      horizon_machine=system.horizon / scale.lam)
    return CompileResult(netlist, mapping, signal_map, netlist.counts())
