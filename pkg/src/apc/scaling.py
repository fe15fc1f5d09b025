"""Amplitude and time scaling into the machine interval [-1, 1].

Scaling proceeds in three steps:

1. ``estimate_bounds``: per-signal peak magnitudes over the horizon,
   either from ``bound`` annotations in the source or from a reference
   oracle run (adaptive RK45 at rtol 1e-9, plus a 25% safety margin).
2. ``amplitude_scale``: pick a scale factor m per signal so that the
   machine net carries signal/m; factors come from the human-legible
   grid {1, 2, 2.5, 5} x 10^k, rounded up, which also keeps predicted
   utilization of the interval at 0.5 or better.
3. ``time_scale``: pick the machine-time factor lambda (problem time
   t = lambda * tau) and the integrator rate k0. Each integrator stage
   then needs gain alpha * k0 = lambda * m_upper / m_lower; alphas
   outside (0, 1] are a scaling error with a suggested lambda.

The same module owns the compiled program's sidecar mapping (signal and
parameter bindings) and trace de-scaling back to problem units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import networkx as nx
from scipy.integrate import solve_ivp

from .dsl import Bin, Call, Expr, Neg, Num, OdeSystem, Ref, signal_name
from .simulator import Trace

#: Margin applied to oracle-estimated maxima before grid rounding.
SAFETY_MARGIN = 1.25
ORACLE_RTOL = 1e-9
ORACLE_ATOL = 1e-12


class ScalingError(ValueError):
    pass


# --- expression evaluation (shared by the oracle and bound arithmetic) -----

def eval_expr(expr: Expr, env: dict, params: dict, tables: dict):
    """Evaluate a resolved runtime expression.

    ``env`` maps (var, order) to values; works elementwise on numpy
    arrays as well as on scalars.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        if expr.name in params and expr.order == 0 and (expr.name, 0) not in env:
            return params[expr.name]
        return env[(expr.name, expr.order)]
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, env, params, tables)
    if isinstance(expr, Bin):
        l = eval_expr(expr.left, env, params, tables)
        r = eval_expr(expr.right, env, params, tables)
        if expr.op == "+":
            return l + r
        if expr.op == "-":
            return l - r
        return l * r
    if isinstance(expr, Call) and expr.func == "lut":
        table = tables[expr.args[0].name]
        x = eval_expr(expr.args[1], env, params, tables)
        xs = [p[0] for p in table]
        ys = [p[1] for p in table]
        return np.interp(x, xs, ys)
    raise TypeError(f"cannot evaluate {expr!r}")


def _refs(expr: Expr):
    if isinstance(expr, Ref):
        yield expr
    elif isinstance(expr, Neg):
        yield from _refs(expr.operand)
    elif isinstance(expr, Bin):
        yield from _refs(expr.left)
        yield from _refs(expr.right)
    elif isinstance(expr, Call):
        for a in expr.args[1:] if expr.func == "lut" else expr.args:
            yield from _refs(a)


def algebraic_order(system: OdeSystem) -> list[str]:
    """Dependency order of the order-0 variables; cycles are an error."""
    zeros = [v for v, n in system.var_order.items() if n == 0]
    g = nx.DiGraph()
    g.add_nodes_from(zeros)
    for v in zeros:
        for ref in _refs(system.equations[v]):
            if ref.name in system.var_order and system.var_order[ref.name] == 0:
                g.add_edge(ref.name, v)
    try:
        return list(nx.topological_sort(g))
    except nx.NetworkXUnfeasible:
        cycle = [e[0] for e in nx.find_cycle(g)]
        raise ScalingError(f"algebraic cycle among order-0 variables: {cycle}") from None


@dataclass
class OracleSolution:
    """High-precision reference trajectories in problem units."""

    t: np.ndarray
    signals: dict  # (var, order) -> np.ndarray


def reference_solution(system: OdeSystem, points: int = 2001,
                       rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL,
                       t_eval=None) -> OracleSolution:
    """Integrate the system with an adaptive-step oracle (RK45, rtol 1e-9).

    Returns trajectories for every signal, including the highest
    derivative of each variable. Independent of the netlist path: it
    evaluates the resolved equations directly.
    """
    zeros = algebraic_order(system)
    state_keys = [(v, k) for v, n in system.var_order.items() if n >= 1 for k in range(n)]

    def fill_env(env):
        for v in zeros:
            env[(v, 0)] = eval_expr(system.equations[v], env, system.params, system.tables)
        return env

    def rhs(_t, x):
        env = fill_env(dict(zip(state_keys, x)))
        dx = []
        for v, k in state_keys:
            if k < system.var_order[v] - 1:
                dx.append(env[(v, k + 1)])
            else:
                dx.append(eval_expr(system.equations[v], env, system.params, system.tables))
        return dx

    if t_eval is None:
        t_eval = np.linspace(0.0, system.horizon, points)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
    if state_keys:
        x0 = [system.inits[key] for key in state_keys]
        sol = solve_ivp(rhs, (0.0, max(system.horizon, float(t_eval[-1]))), x0, method="RK45",
                        rtol=rtol, atol=atol, t_eval=t_eval)
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise ScalingError("unbounded system: the reference run diverged; "
                               "annotate bounds with 'bound NAME = VALUE'")
        env = fill_env({key: sol.y[i] for i, key in enumerate(state_keys)})
    else:
        env = fill_env({})
        env = {key: np.full_like(t_eval, float(val)) for key, val in env.items()}
    for v, n in system.var_order.items():
        if n >= 1:
            env[(v, n)] = np.asarray(
                eval_expr(system.equations[v], env, system.params, system.tables)
            ) + np.zeros_like(t_eval)
    if any(not np.all(np.isfinite(np.asarray(a, dtype=float))) for a in env.values()):
        raise ScalingError("unbounded system: non-finite reference values; annotate bounds")
    if max((float(np.max(np.abs(a))) for a in env.values()), default=0.0) > 1e12:
        raise ScalingError("unbounded system: reference magnitudes exceed 1e12; annotate bounds")
    return OracleSolution(t_eval, env)


# --- bounds -----------------------------------------------------------------

@dataclass(frozen=True)
class BoundsEstimate:
    """Per-signal peak magnitudes (problem units) and how they were obtained."""

    values: dict  # (var, order) -> bound > 0
    method: dict  # (var, order) -> "user" | "oracle"

    def of(self, var: str, order: int) -> float:
        return self.values[(var, order)]


def _interval_bound(expr: Expr, env: dict, params: dict, tables: dict) -> float:
    """Conservative magnitude bound of an expression given signal bounds."""
    if isinstance(expr, Num):
        return abs(expr.value)
    if isinstance(expr, Ref):
        if (expr.name, expr.order) in env:
            return env[(expr.name, expr.order)]
        return abs(params[expr.name])
    if isinstance(expr, Neg):
        return _interval_bound(expr.operand, env, params, tables)
    if isinstance(expr, Bin):
        l = _interval_bound(expr.left, env, params, tables)
        r = _interval_bound(expr.right, env, params, tables)
        return l * r if expr.op == "*" else l + r
    if isinstance(expr, Call) and expr.func == "lut":
        return max(abs(p[1]) for p in tables[expr.args[0].name])
    raise TypeError(f"cannot bound {expr!r}")


def estimate_bounds(system: OdeSystem) -> BoundsEstimate:
    """Peak-magnitude estimate for every signal, including top derivatives.

    ``bound`` annotations are taken as given. When only the driven
    (highest-derivative or order-0) signals are missing they are filled
    by interval arithmetic over the annotated bounds; any other gap
    triggers the reference oracle, whose maxima get a 25% margin.
    """
    needed = system.signals()
    values: dict = {}
    method: dict = {}
    for key, v in system.bounds.items():
        values[key] = v
        method[key] = "user"

    missing = [key for key in needed if key not in values]
    driven = {(v, n) for v, n in system.var_order.items()}
    if missing and all(key in driven for key in missing):
        order = algebraic_order(system)
        rest = [key for key in missing if key[0] not in order]
        for v in order + [key[0] for key in rest]:
            key = (v, system.var_order[v])
            if key in values:
                continue
            b = _interval_bound(system.equations[v], values, system.params, system.tables)
            values[key] = max(b, 1e-9)
            method[key] = "user"
    elif missing:
        oracle = reference_solution(system)
        for key in missing:
            peak = float(np.max(np.abs(oracle.signals[key])))
            values[key] = peak * SAFETY_MARGIN if peak > 1e-12 else 1.0
            method[key] = "oracle"
    return BoundsEstimate(values, method)


# --- scale factors ----------------------------------------------------------

_GRID = (1.0, 2.0, 2.5, 5.0)


def round_up_grid(x: float) -> float:
    """Smallest {1, 2, 2.5, 5} x 10^k value >= x (within float slack)."""
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"grid rounding needs a positive finite value, got {x}")
    e = math.floor(math.log10(x)) - 1
    for exp in (e, e + 1, e + 2):
        for g in _GRID:
            cand = g * 10.0 ** exp
            if cand >= x * (1.0 - 1e-9):
                return cand
    raise AssertionError("unreachable")


def round_down_grid(x: float) -> float:
    """Largest {1, 2, 2.5, 5} x 10^k value <= x (within float slack)."""
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"grid rounding needs a positive finite value, got {x}")
    e = math.floor(math.log10(x)) + 1
    for exp in (e, e - 1, e - 2):
        for g in sorted(_GRID, reverse=True):
            cand = g * 10.0 ** exp
            if cand <= x * (1.0 + 1e-9):
                return cand
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class ScaleMap:
    """Amplitude factors per signal plus the time-scale factor.

    Machine signal = problem signal / m; problem time t = lam * tau.
    ``k0`` is the integrator rate the compiled netlist will use; with the
    default lam = k0 and uniform amplitudes the integrator chains carry
    unit stage coefficients.
    """

    amplitude: dict = field(default_factory=dict)
    lam: float = 1.0
    k0: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.k0 > 0):
            raise ValueError("lambda and k0 must be positive")

    def m(self, var: str, order: int) -> float:
        return self.amplitude.get((var, order), 1.0)

    @classmethod
    def identity(cls, k0: float = 1.0) -> "ScaleMap":
        return cls({}, lam=k0, k0=k0)


def _lut_arg_signals(system: OdeSystem):
    found = set()

    def walk(e):
        if isinstance(e, Call) and e.func == "lut":
            found.update((r.name, r.order) for r in _refs(e.args[1])
                         if r.name in system.var_order)
            walk(e.args[1])
        elif isinstance(e, Bin):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Neg):
            walk(e.operand)

    for expr in system.equations.values():
        walk(expr)
    return found


def _gain_profile(expr: Expr, amplitude: dict, params: dict, tables: dict):
    """Structural requirements of a scaled right-hand side.

    Returns (kind, G, V) where G is the largest gain any single term
    demands (its constant times the amplitude factors of its signal
    leaves) and V a worst-case magnitude of the whole expression with
    every machine net at full scale. The driven net's amplitude must
    cover max(G, V) so that every coefficient lands in [0, 1] and the
    summing net cannot saturate. ``kind`` distinguishes constant
    subtrees ("const"), single terms ("single") and sums ("multi"):
    sums used as multiplier operands stay unscaled nets, so they must
    fit the machine interval on their own and contribute no gain.
    """
    if isinstance(expr, Num):
        return ("const", abs(expr.value), abs(expr.value))
    if isinstance(expr, Ref):
        if (expr.name, expr.order) in amplitude:
            m = amplitude[(expr.name, expr.order)]
            return ("single", m, m)
        c = abs(params[expr.name])
        return ("const", c, c)
    if isinstance(expr, Neg):
        return _gain_profile(expr.operand, amplitude, params, tables)
    if isinstance(expr, Call) and expr.func == "lut":
        _, _, v_arg = _gain_profile(expr.args[1], amplitude, params, tables)
        if v_arg > 1.0 + 1e-9:
            raise ScalingError(
                f"lookup-table argument can reach {v_arg:.4g}; arguments must stay in [-1, 1]")
        top = max(abs(p[1]) for p in tables[expr.args[0].name])
        return ("single", 1.0, top)

    kl, gl, vl = _gain_profile(expr.left, amplitude, params, tables)
    kr, gr, vr = _gain_profile(expr.right, amplitude, params, tables)
    if expr.op in "+-":
        if kl == "const" and kr == "const":
            return ("const", gl + gr, vl + vr)
        return ("multi", max(gl, gr), vl + vr)
    if kl == "const":
        return (kr if kr != "const" else "const", gl * gr, vl * vr)
    if kr == "const":
        return (kl, gl * gr, vl * vr)

    def as_factor(kind, g, v):
        if kind == "multi":  # becomes an unscaled net: must fit on its own
            if max(g, v) > 1.0 + 1e-9:
                raise ScalingError(
                    f"parenthesized sum needs {max(g, v):.4g} machine units; "
                    "expand it or bound its inputs")
            return 1.0, min(1.0, v)
        return g, v

    gl, vl = as_factor(kl, gl, vl)
    gr, vr = as_factor(kr, gr, vr)
    return ("single", gl * gr, vl * vr)


def amplitude_scale(system: OdeSystem, bounds: BoundsEstimate) -> ScaleMap:
    """Choose per-signal amplitude factors from the scaling grid.

    Signals feeding lookup tables keep scale 1: a table maps the actual
    net value, so rescaling its argument would change the function.

    A feasibility pass then raises each driven (equation) scale to what
    its scaled right-hand side demands, so every term coefficient lands
    in [0, 1] and the summing net cannot saturate. Grid rounding of
    independent signals would otherwise let a gain escape by up to 2x.
    """
    pinned = _lut_arg_signals(system)
    amplitude = {}
    for key in system.signals():
        b = bounds.values[key]
        if key in pinned:
            limit = SAFETY_MARGIN if bounds.method.get(key) == "oracle" else 1.0
            if b > limit * (1 + 1e-9):
                raise ScalingError(
                    f"signal {signal_name(*key)} feeds a lookup table but exceeds "
                    f"machine range (bound {b}); restructure or bound it to 1")
            amplitude[key] = 1.0
        else:
            amplitude[key] = round_up_grid(b)

    driven = algebraic_order(system) + [v for v, n in system.var_order.items() if n >= 1]
    for v in driven:
        key = (v, system.var_order[v])
        _, g, val = _gain_profile(system.equations[v], amplitude, system.params, system.tables)
        need = max(g, val)
        if key in pinned:
            if need > 1.0 + 1e-9:
                raise ScalingError(
                    f"signal {signal_name(*key)} feeds a lookup table but its equation "
                    f"can reach {need:.4g}; restructure or bound it to 1")
        elif need > amplitude[key] * (1 + 1e-9):
            amplitude[key] = round_up_grid(need)
    return ScaleMap(amplitude)


def _stage_ratios(system: OdeSystem, scale: ScaleMap):
    """(var, stage) -> m_lower / m_upper for every integrator stage."""
    out = {}
    for v, n in system.var_order.items():
        for j in range(1, n + 1):  # integrator j outputs derivative order n - j
            out[(v, j)] = scale.m(v, n - j) / scale.m(v, n - j + 1)
    return out


def stage_gain(scale: ScaleMap, var: str, low_order: int) -> float:
    """Required gain alpha*k0 feeding the integrator that outputs ``low_order``."""
    return scale.lam * scale.m(var, low_order + 1) / scale.m(var, low_order)


def time_scale(system: OdeSystem, scale: ScaleMap, lam: float | None = None,
               budget: float | None = None, k0: float = 1.0) -> ScaleMap:
    """Fix lambda and k0; verify every stage coefficient lands in (0, 1].

    ``budget`` requests a machine-time horizon in seconds (lambda =
    horizon / budget). With neither given, lambda defaults to k0 (or the
    largest grid value the stage ratios allow), so unit-amplitude systems
    compile to plain chains.
    """
    ratios = _stage_ratios(system, scale)
    limit = k0 * min(ratios.values(), default=1.0)
    if budget is not None:
        if budget <= 0:
            raise ScalingError("wall-clock budget must be positive")
        lam = system.horizon / budget
    if lam is None:
        lam = k0 if limit >= k0 * (1 - 1e-9) else round_down_grid(limit)
    scaled = replace(scale, lam=lam, k0=k0)
    for (v, j), ratio in ratios.items():
        alpha = lam / (k0 * ratio)
        if alpha > 1.0 + 1e-9:
            raise ScalingError(
                f"stage coefficient {alpha:.6g} for {v!r} falls outside (0, 1]; "
                f"suggested lambda <= {round_down_grid(limit)}")
    return scaled


def autoscale(system: OdeSystem, k0: float = 1.0, lam: float | None = None,
              budget: float | None = None) -> ScaleMap:
    """Bounds, amplitude and time scaling in one call."""
    bounds = estimate_bounds(system)
    scale = amplitude_scale(system, bounds)
    return time_scale(system, scale, lam=lam, budget=budget, k0=k0)


# --- sidecar mapping and de-scaling -----------------------------------------

@dataclass(frozen=True)
class SignalBinding:
    """Where a source-level signal lives in the netlist.

    net value = parity * signal / scale.
    """

    net: str
    parity: int
    scale: float = 1.0


@dataclass(frozen=True)
class ParamBinding:
    """A source parameter realized by one coefficient: alpha = |scale * value|."""

    element: str
    scale: float
    value: float


@dataclass
class Mapping:
    """Compiler sidecar: signal and parameter bindings plus time scaling."""

    signals: dict
    params: dict
    lam: float = 1.0
    k0: float = 1.0
    horizon_machine: float | None = None

    def to_dict(self) -> dict:
        return {
            "signals": {
                name: {"net": b.net, "parity": b.parity, "amplitude_scale": b.scale}
                for name, b in self.signals.items()
            },
            "params": {
                name: {"element": b.element, "scale": b.scale, "value": b.value}
                for name, b in self.params.items()
            },
            "lambda": self.lam,
            "k0": self.k0,
            "horizon_machine": self.horizon_machine,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mapping":
        extra = set(doc) - {"signals", "params", "lambda", "k0", "horizon_machine"}
        if extra:
            raise ValueError(f"unknown key(s) {sorted(extra)} in mapping file")
        signals = {
            name: SignalBinding(d["net"], int(d["parity"]), float(d["amplitude_scale"]))
            for name, d in doc.get("signals", {}).items()
        }
        params = {
            name: ParamBinding(d["element"], float(d["scale"]), float(d["value"]))
            for name, d in doc.get("params", {}).items()
        }
        return cls(signals, params, float(doc.get("lambda", 1.0)), float(doc.get("k0", 1.0)),
                   doc.get("horizon_machine"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Mapping":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def descale_trace(trace: Trace, mapping: Mapping) -> Trace:
    """Map a machine-unit trace back to problem units and problem time."""
    series = {}
    for name, values in trace.series.items():
        if name not in mapping.signals:
            raise ScalingError(f"signal {name!r} is not in the mapping")
        b = mapping.signals[name]
        factor = b.parity * b.scale
        series[name] = [factor * v for v in values]
    t = [mapping.lam * tau for tau in trace.tau]
    overloads = [replace(ev, time=mapping.lam * ev.time) for ev in trace.overloads]
    return Trace(t, series, overloads, mapping=mapping, time_label="t")
