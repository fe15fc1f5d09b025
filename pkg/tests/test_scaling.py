import math

import numpy as np
import pytest

from apc import compiler, simulator
from apc.compiler import CompileOptions, compile_system
from apc.scaling import (
    Mapping,
    ScaleMap,
    ScalingError,
    SignalBinding,
    amplitude_scale,
    autoscale,
    descale_trace,
    estimate_bounds,
    reference_solution,
    round_down_grid,
    round_up_grid,
    time_scale,
)
from apc.simulator import OverloadEvent, SimConfig, Trace, new_instance
from conftest import SINE5_SRC, resolve_src

HALF_SINE_SRC = """\
system smallsine
var y order 2
eq y'' = -y
init y = 0.5
init y' = 0
time 10
output y
"""


class TestGrid:
    @pytest.mark.parametrize("x,expect", [
        (6.25, 10.0), (0.625, 1.0), (1.25, 2.0), (0.3, 0.5),
        (2.0, 2.0), (2.5, 2.5), (0.051, 0.1), (49.0, 50.0),
    ])
    def test_round_up(self, x, expect):
        assert round_up_grid(x) == expect

    @pytest.mark.parametrize("x,expect", [
        (0.2, 0.2), (0.21, 0.2), (6.25, 5.0), (1.0, 1.0), (0.9, 0.5),
    ])
    def test_round_down(self, x, expect):
        assert round_down_grid(x) == expect

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            round_up_grid(0.0)


class TestBounds:
    def test_oracle_bounds_with_margin(self):
        system = resolve_src(SINE5_SRC)
        bounds = estimate_bounds(system)
        # y = 5 cos t: every derivative peaks at 5, margin 1.25 makes 6.25
        assert bounds.of("y", 0) == pytest.approx(6.25, rel=1e-3)
        assert bounds.of("y", 1) == pytest.approx(6.25, rel=1e-3)
        assert bounds.method[("y", 0)] == "oracle"

    def test_in_range_system(self):
        system = resolve_src(HALF_SINE_SRC)
        bounds = estimate_bounds(system)
        assert bounds.of("y", 0) == pytest.approx(0.625, rel=1e-3)

    def test_user_annotation_passthrough(self):
        src = ("system t\nvar y order 2\neq y'' = -y\ninit y = 0.5\ninit y' = 0\n"
               "bound y = 2\nbound y' = 2\nbound y'' = 2\ntime 1\n")
        bounds = estimate_bounds(resolve_src(src))
        assert bounds.of("y", 0) == 2.0
        assert bounds.method[("y", 0)] == "user"

    def test_interval_fill_for_top_derivative(self):
        src = ("system t\nvar y order 2\neq y'' = -y - 0.5*y'\ninit y = 0.5\ninit y' = 0\n"
               "bound y = 2\nbound y' = 4\ntime 1\n")
        bounds = estimate_bounds(resolve_src(src))
        assert bounds.of("y", 2) == pytest.approx(2 + 0.5 * 4)
        assert bounds.method[("y", 2)] == "user"

    def test_divergent_system_reports_unbounded(self):
        src = "system t\nvar y order 1\neq y' = y*y\ninit y = 2\ntime 1\n"
        with pytest.raises(ScalingError, match="annotate bounds"):
            estimate_bounds(resolve_src(src))

    def test_zero_signal_defaults_to_unit_bound(self):
        src = "system t\nvar y order 1\neq y' = -y\ninit y = 0\ntime 1\n"
        bounds = estimate_bounds(resolve_src(src))
        assert bounds.of("y", 0) == 1.0


class TestAmplitudeScale:
    def test_bound_625_scales_by_10(self):
        system = resolve_src(SINE5_SRC)
        scale = amplitude_scale(system, estimate_bounds(system))
        assert scale.m("y", 0) == 10.0
        assert system.inits[("y", 0)] / scale.m("y", 0) == 0.5

    def test_in_range_system_keeps_unit_scale(self):
        system = resolve_src(HALF_SINE_SRC)
        scale = amplitude_scale(system, estimate_bounds(system))
        assert scale.m("y", 0) == 1.0  # 0.625 already uses over half the interval

    def test_lut_argument_pinned_to_unit(self):
        src = ("system t\nvar z order 1\neq z' = -lut(f, z)\ninit z = 0.9\n"
               "table f = (-1, -1) (0, 0) (1, 1)\ntime 5\n")
        system = resolve_src(src)
        scale = amplitude_scale(system, estimate_bounds(system))
        assert scale.m("z", 0) == 1.0

    def test_lut_argument_out_of_range_rejected(self):
        src = ("system t\nvar z order 1\neq z' = -lut(f, z)\ninit z = 0.9\n"
               "table f = (-1, -1) (0, 0) (1, 1)\nbound z = 3\ntime 5\n")
        system = resolve_src(src)
        with pytest.raises(ScalingError, match="lookup table"):
            amplitude_scale(system, estimate_bounds(system))


class TestTimeScale:
    def test_identity(self):
        system = resolve_src(HALF_SINE_SRC)
        scale = time_scale(system, amplitude_scale(system, estimate_bounds(system)), lam=1.0)
        assert scale.lam == 1.0 and scale.k0 == 1.0

    def test_default_lambda_equals_k0_for_uniform_amplitudes(self):
        system = resolve_src(SINE5_SRC)
        scale = time_scale(system, amplitude_scale(system, estimate_bounds(system)), k0=1000.0)
        assert scale.lam == 1000.0

    def test_fast_system_slows_down(self):
        src = ("system fast\nvar y order 2\neq y'' = -25*y\ninit y = 0.25\n"
               "init y' = 2.1650635094610966\ntime 2\n")
        system = resolve_src(src)
        scale = time_scale(system, amplitude_scale(system, estimate_bounds(system)))
        assert scale.lam < 1.0
        compile_system(system, CompileOptions(scale=scale))  # all alphas legal

    def test_explicit_lambda_out_of_range_suggests(self):
        src = ("system fast\nvar y order 2\neq y'' = -25*y\ninit y = 0.25\n"
               "init y' = 2.1650635094610966\ntime 2\n")
        system = resolve_src(src)
        amp = amplitude_scale(system, estimate_bounds(system))
        with pytest.raises(ScalingError, match="suggested lambda"):
            time_scale(system, amp, lam=1.0, k0=1.0)

    def test_budget_sets_lambda(self):
        system = resolve_src(SINE5_SRC)  # horizon 10
        scale = time_scale(system, amplitude_scale(system, estimate_bounds(system)),
                           budget=0.01, k0=1000.0)
        assert scale.lam == pytest.approx(1000.0)

    def test_phase_invariance(self):
        # scaling decisions depend on bounds only, not on phase
        a = resolve_src(SINE5_SRC)
        b = resolve_src(SINE5_SRC.replace("init y = 5\ninit y' = 0", "init y = 0\ninit y' = 5"))
        assert autoscale(a).amplitude == autoscale(b).amplitude


class TestRoundTrip:
    def test_scaled_run_matches_oracle_after_descale(self):
        system = resolve_src(SINE5_SRC)
        scale = autoscale(system)
        result = compile_system(system, CompileOptions(scale=scale))
        inst = new_instance(result.netlist, SimConfig(dt=1e-3))
        trace = inst.run(result.mapping.horizon_machine)
        assert trace.overloads == []  # honest bounds leave no overloads

        problem = descale_trace(trace, result.mapping)
        oracle = reference_solution(system, t_eval=np.asarray(problem.tau))
        err = np.max(np.abs(np.array(problem.series["y"]) - oracle.signals[("y", 0)]))
        assert err < 1e-3 * 5.0

    def test_utilization(self):
        system = resolve_src(SINE5_SRC)
        scale = autoscale(system)
        result = compile_system(system, CompileOptions(scale=scale))
        inst = new_instance(result.netlist, SimConfig(dt=1e-3))
        trace = inst.run(result.mapping.horizon_machine)
        best = max(max(abs(v) for v in series) for series in trace.series.values())
        assert best >= 0.5


class TestDescale:
    def _mapping(self, lam=1.0, m=10.0, parity=1):
        return Mapping({"y": SignalBinding("n1", parity, m)}, {}, lam=lam, k0=lam)

    def test_amplitude(self):
        trace = Trace([0.0], {"y": [0.5]}, [])
        out = descale_trace(trace, self._mapping())
        assert out.series["y"] == [5.0]

    def test_machine_millisecond_is_problem_second(self):
        trace = Trace([0.001], {"y": [0.1]}, [])
        out = descale_trace(trace, self._mapping(lam=1000.0))
        assert out.tau == [1.0]
        assert out.time_label == "t"

    def test_identity(self):
        trace = Trace([0.0, 1.0], {"y": [0.1, 0.2]}, [])
        out = descale_trace(trace, self._mapping(lam=1.0, m=1.0))
        assert out.series == trace.series and out.tau == trace.tau

    def test_parity_applied(self):
        trace = Trace([0.0], {"y": [0.5]}, [])
        out = descale_trace(trace, self._mapping(m=1.0, parity=-1))
        assert out.series["y"] == [-0.5]

    def test_unknown_signal(self):
        trace = Trace([0.0], {"zz": [0.5]}, [])
        with pytest.raises(ScalingError):
            descale_trace(trace, self._mapping())

    def test_overload_times_mapped(self):
        trace = Trace([0.0], {"y": [0.5]}, [OverloadEvent(0.001, "int1", 1.2)])
        out = descale_trace(trace, self._mapping(lam=1000.0))
        assert out.overloads[0].time == pytest.approx(1.0)


class TestMappingSerialization:
    def test_round_trip(self):
        from apc.scaling import ParamBinding

        m = Mapping({"y": SignalBinding("int2", 1, 10.0)},
                    {"k": ParamBinding("coef1", -1.0, 0.5)}, lam=2.0, k0=2.0,
                    horizon_machine=5.0)
        back = Mapping.from_dict(m.to_dict())
        assert back == m

    def test_unknown_keys_rejected(self):
        doc = Mapping({}, {}).to_dict()
        doc["bogus"] = 1
        with pytest.raises(ValueError):
            Mapping.from_dict(doc)
