import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glomnet.nn import NumericError
from glomnet.optim import OptimizerConfig, OptimizerState, lr_at, rmsprop_step

CFG = OptimizerConfig(rho=0.9, epsilon=1e-6, lr0=1e-4, epochs=10)


def step(theta, g, state, lr=1e-4):
    return rmsprop_step({"w": np.array(theta, float)}, {"w": np.array(g, float)}, state, lr, CFG)


class TestRmsprop:
    def test_first_step(self):
        params, state = step([0.0], [1.0], OptimizerState())
        assert state.accumulators["w"][0] == pytest.approx(0.1)
        assert params["w"][0] == pytest.approx(-1e-4 / np.sqrt(0.1 + 1e-6), rel=1e-12)
        assert params["w"][0] == pytest.approx(-3.16226e-4, rel=1e-5)

    def test_second_step(self):
        params, state = step([0.0], [1.0], OptimizerState())
        first = params["w"][0]
        params, state = step(params["w"], [1.0], state)
        assert state.accumulators["w"][0] == pytest.approx(0.19)
        assert params["w"][0] - first == pytest.approx(-2.29415e-4, rel=1e-5)

    def test_zero_gradient_no_move(self):
        params, state = step([1.5, -2.0], [0.0, 0.0], OptimizerState())
        assert params["w"].tolist() == [1.5, -2.0]
        assert not state.accumulators["w"].any()

    def test_inputs_untouched(self):
        p = {"w": np.ones(3)}
        g = {"w": np.full(3, 2.0)}
        s = OptimizerState.fresh(p)
        rmsprop_step(p, g, s, 0.1, CFG)
        assert p["w"].tolist() == [1, 1, 1] and not s.accumulators["w"].any()

    def test_zero_lr_keeps_params(self):
        params, state = step([0.25], [3.0], OptimizerState(), lr=0.0)
        assert params["w"][0] == 0.25 and state.step_count == 1

    def test_non_finite_gradient(self):
        with pytest.raises(NumericError):
            step([0.0], [np.nan], OptimizerState())
        with pytest.raises(NumericError):
            step([0.0], [np.inf], OptimizerState())

    def test_name_mismatch(self):
        with pytest.raises(ValueError):
            rmsprop_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, OptimizerState(), 0.1, CFG)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.integers(1, 6))
    def test_accumulator_nonnegative_and_step_bounded(self, grads, steps):
        g = np.array(grads)
        params, state = {"w": np.zeros_like(g)}, OptimizerState()
        bound = 1e-2 / np.sqrt(1 - CFG.rho)
        for _ in range(steps):
            new, state = rmsprop_step(params, {"w": g}, state, 1e-2, CFG)
            assert np.all(state.accumulators["w"] >= 0)
            assert np.all(np.abs(new["w"] - params["w"]) <= bound * (1 + 1e-12))
            params = new


class TestSchedule:
    def test_linear_decay(self):
        assert lr_at(0, CFG) == 1e-4
        assert lr_at(5, CFG) == pytest.approx(5e-5)
        assert lr_at(9, CFG) == pytest.approx(1e-5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(10, CFG)
        with pytest.raises(ValueError):
            lr_at(-1, CFG)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(rho=1.0)
        with pytest.raises(ValueError):
            OptimizerConfig(batch_size=0)
