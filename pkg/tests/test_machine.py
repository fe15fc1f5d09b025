import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apc.machine import (
    AlgebraicLoopError,
    Element,
    Kind,
    Net,
    Netlist,
    StructuralError,
    algebraic_loops,
    clamp,
    coefficient,
    element_output,
    evaluation_order,
    function_generator,
    integrator,
    multiplier,
    netlist_from_dict,
    netlist_to_dict,
    reference,
    summer,
    validate,
)


def fig2_netlist():
    """x = a(b+c) with constant sources a=0.5, b=c=0.25."""
    elems = [
        reference("ref1", 1.0),
        coefficient("a", "ref1", 0.5),
        coefficient("b", "ref1", 0.25),
        coefficient("c", "ref1", 0.25),
        summer("sum1", ["b", "c"]),
        summer("inv1", ["sum1"]),
        multiplier("mul1", "a", "inv1"),
    ]
    return Netlist.from_elements(elems, outputs={"x": "mul1"})


class TestElementOutput:
    def test_summer_negates_sum(self):
        assert element_output(Kind.SUMMER, {}, [0.25, 0.25]) == -0.5

    def test_single_input_summer_is_inverter(self):
        assert element_output(Kind.SUMMER, {}, [0.7]) == -0.7

    def test_multiplier(self):
        assert element_output(Kind.MULTIPLIER, {}, [0.5, -0.5]) == -0.25

    def test_coefficient_zero_annihilates(self):
        assert element_output(Kind.COEFFICIENT, {"alpha": 0.0}, [0.9]) == 0.0

    def test_function_generator_identity_table(self):
        table = ((-1.0, -1.0), (0.0, 0.0), (1.0, 1.0))
        assert element_output(Kind.FUNCTION_GENERATOR, {"table": table}, [0.3]) == pytest.approx(0.3)

    def test_function_generator_clamps_ends(self):
        table = ((-0.5, -0.25), (0.5, 0.25))
        assert element_output(Kind.FUNCTION_GENERATOR, {"table": table}, [0.9]) == 0.25
        assert element_output(Kind.FUNCTION_GENERATOR, {"table": table}, [-0.9]) == -0.25

    def test_reference(self):
        assert element_output(Kind.REFERENCE, {"constant": -1.0}, []) == -1.0

    def test_integrator_returns_state(self):
        assert element_output(Kind.INTEGRATOR, {"ic": 0.0, "k0": 1.0}, [0.5], state=0.25) == 0.25

    def test_arity_mismatch(self):
        with pytest.raises(StructuralError):
            element_output(Kind.MULTIPLIER, {}, [0.5])
        with pytest.raises(StructuralError):
            element_output(Kind.COEFFICIENT, {"alpha": 0.5}, [0.1, 0.2])

    @given(st.floats(-1, 1), st.floats(0, 1))
    def test_coefficient_never_amplifies(self, x, alpha):
        assert abs(element_output(Kind.COEFFICIENT, {"alpha": alpha}, [x])) <= abs(x)

    @given(st.floats(-1, 1))
    def test_summer_single_input_exact_negation(self, x):
        assert element_output(Kind.SUMMER, {}, [x]) == -x


class TestClamp:
    def test_inside(self):
        mv = clamp(0.7)
        assert (mv.value, mv.overloaded) == (0.7, False)

    def test_above(self):
        mv = clamp(1.3)
        assert (mv.value, mv.overloaded) == (1.0, True)

    def test_boundary_is_legal(self):
        mv = clamp(-1.0)
        assert (mv.value, mv.overloaded) == (-1.0, False)

    def test_non_finite_is_structural(self):
        with pytest.raises(StructuralError):
            clamp(float("nan"))
        with pytest.raises(StructuralError):
            clamp(float("inf"))

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_idempotent(self, v):
        once = clamp(v)
        assert clamp(once.value).value == once.value
        assert not clamp(once.value).overloaded


class TestValidate:
    def test_fig2_netlist_is_clean(self):
        assert validate(fig2_netlist()) == []

    def test_coefficient_range(self):
        n = Netlist.from_elements([reference("r", 1.0), coefficient("k", "r", 1.5)])
        rules = {v.rule for v in validate(n)}
        assert "param-range" in rules

    def test_dangling_input(self):
        n = Netlist.from_elements([reference("r", 1.0), multiplier("m", "r", "ghost")])
        report = validate(n)
        assert any(v.rule == "dangling-input" and v.element == "m" for v in report)

    def test_missing_output_name(self):
        n = Netlist([reference("r", 1.0)], {"r": Net("r")}, outputs=("y",))
        assert any(v.rule == "missing-output" for v in validate(n))

    def test_unknown_driver(self):
        n = Netlist([reference("r", 1.0)], {"r": Net("r"), "n2": Net("ghost")})
        assert any(v.rule == "single-driver" for v in validate(n))

    def test_element_driving_two_nets(self):
        n = Netlist([reference("r", 1.0)], {"n1": Net("r"), "n2": Net("r")})
        assert any(v.rule == "single-driver" for v in validate(n))

    def test_arity_violation(self):
        n = Netlist.from_elements([reference("r", 1.0), Element("s", Kind.SUMMER, {}, ())])
        assert any(v.rule == "arity" and v.element == "s" for v in validate(n))

    def test_integrator_param_ranges(self):
        n = Netlist.from_elements([reference("r", 1.0), integrator("i", ["r"], ic=1.5, k0=-1.0)])
        msgs = [v for v in validate(n) if v.rule == "param-range"]
        assert len(msgs) == 2

    def test_bad_table(self):
        n = Netlist.from_elements(
            [reference("r", 1.0), function_generator("f", "r", [(0.5, 0.0), (-0.5, 0.1)])]
        )
        assert any(v.rule == "param-range" for v in validate(n))


class TestGraphAnalysis:
    def test_oscillator_loop_passes_through_integrators(self, sine):
        _, result = sine
        assert algebraic_loops(result.netlist) == []

    def test_two_summers_feeding_each_other(self):
        n = Netlist.from_elements([summer("s1", ["s2"]), summer("s2", ["s1"])])
        cycles = algebraic_loops(n)
        assert len(cycles) == 1
        assert sorted(cycles[0]) == ["s1", "s2"]

    def test_empty_netlist(self):
        n = Netlist([], {})
        assert algebraic_loops(n) == []
        assert evaluation_order(n) == []

    def test_fig2_order(self):
        order = evaluation_order(fig2_netlist())
        assert order.index("sum1") < order.index("inv1") < order.index("mul1")

    def test_single_reference(self):
        n = Netlist.from_elements([reference("r", 1.0)])
        assert evaluation_order(n) == ["r"]

    def test_order_rejects_cycles(self):
        n = Netlist.from_elements([summer("s1", ["s2"]), summer("s2", ["s1"])])
        with pytest.raises(AlgebraicLoopError):
            evaluation_order(n)


# -- random valid DAG netlists for the executable-order and round-trip laws --

@st.composite
def dag_netlists(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    elems = [reference("ref0", 1.0)]
    nets = ["ref0"]
    for i in range(1, n + 1):
        eid = f"e{i}"
        kind = draw(st.sampled_from(["summer", "multiplier", "coefficient", "integrator", "fgen"]))
        pick = lambda: draw(st.sampled_from(nets))  # noqa: E731
        if kind == "summer":
            k = draw(st.integers(min_value=1, max_value=3))
            elems.append(summer(eid, [pick() for _ in range(k)]))
        elif kind == "multiplier":
            elems.append(multiplier(eid, pick(), pick()))
        elif kind == "coefficient":
            elems.append(coefficient(eid, pick(), draw(st.floats(0, 1))))
        elif kind == "integrator":
            elems.append(integrator(eid, [pick()], ic=draw(st.floats(-1, 1)), k0=1.0))
        else:
            elems.append(function_generator(eid, pick(), [(-1.0, -0.5), (1.0, 0.5)]))
        nets.append(eid)
    out = draw(st.sampled_from(nets))
    return Netlist.from_elements(elems, outputs={"out": out})


@settings(max_examples=60, deadline=None, derandomize=True)
@given(dag_netlists())
def test_evaluation_order_assigns_every_net_once(netlist):
    assert validate(netlist) == []
    order = evaluation_order(netlist)
    values = {}
    for e in netlist.elements.values():
        if e.kind is Kind.INTEGRATOR:
            values[e.id] = e.params["ic"]
    for eid in order:
        e = netlist.elements[eid]
        assert eid not in values or e.kind is Kind.INTEGRATOR
        ins = [values[netlist.nets[n].driver] for n in e.inputs]  # inputs all ready
        values[eid] = element_output(e.kind, e.params, ins, state=values.get(eid))
    assert set(values) == set(netlist.elements)


@settings(max_examples=60, deadline=None, derandomize=True)
@given(dag_netlists())
def test_json_round_trip(netlist):
    doc = netlist_to_dict(netlist)
    back = netlist_from_dict(doc)
    assert set(back.elements) == set(netlist.elements)
    for eid, e in netlist.elements.items():
        b = back.elements[eid]
        assert (b.kind, b.params, b.inputs) == (e.kind, e.params, e.inputs)
    assert back.nets == netlist.nets
    assert back.outputs == netlist.outputs


def test_json_rejects_unknown_keys():
    doc = netlist_to_dict(fig2_netlist())
    doc["extra"] = 1
    with pytest.raises(StructuralError):
        netlist_from_dict(doc)


def test_json_rejects_unknown_param_keys():
    doc = netlist_to_dict(fig2_netlist())
    doc["elements"][0]["params"]["weird"] = 2
    with pytest.raises(StructuralError):
        netlist_from_dict(doc)


def test_json_rejects_unknown_kind():
    doc = netlist_to_dict(fig2_netlist())
    doc["elements"][0]["kind"] = "comparator"
    with pytest.raises(StructuralError):
        netlist_from_dict(doc)


def test_interpolation_midpoints():
    table = ((-1.0, 0.0), (0.0, 1.0), (1.0, 0.0))
    assert element_output(Kind.FUNCTION_GENERATOR, {"table": table}, [-0.5]) == pytest.approx(0.5)
    assert element_output(Kind.FUNCTION_GENERATOR, {"table": table}, [0.25]) == pytest.approx(0.75)


def test_duplicate_element_ids_rejected():
    with pytest.raises(StructuralError):
        Netlist([reference("r", 1.0), reference("r", -1.0)], {})


def test_counts_split_inverters():
    counts = fig2_netlist().counts()
    assert counts == {"summer": 1, "inverter": 1, "multiplier": 1, "coefficient": 3, "reference": 1}


def test_nan_param_flagged():
    n = Netlist.from_elements([reference("r", 1.0), coefficient("k", "r", math.nan)])
    assert any(v.rule == "param-range" for v in validate(n))
