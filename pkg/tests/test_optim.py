"""Tests for AdamW and the warm-restart cosine schedule."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bindspace.binary import ByteWriter
from bindspace.errors import ConfigError, DimensionError, FormatError
from bindspace.models import OptimizerConfig, ScheduleConfig
from bindspace.optim import (
    AdamWState,
    adamw_step,
    annealed_lr,
    deserialize_state,
    locate,
    lr_at,
    restart_steps,
    serialize_state,
)


@pytest.fixture()
def params():
    rng = np.random.default_rng(0)
    return {"W0": rng.normal(size=(3, 2)), "b0": rng.normal(size=(1, 2))}


class TestAdamW:
    def test_zero_gradient_is_pure_decay(self, params):
        hyper = OptimizerConfig()
        state = AdamWState.zeros(params, hyper, lr=1e-3)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        new, _ = adamw_step(params, zero, state)
        for name, theta in params.items():
            assert np.array_equal(new[name], theta - 1e-3 * (0.01 * theta))
            assert np.allclose(new[name], theta * (1 - 1e-3 * 0.01), rtol=0, atol=1e-15)

    def test_single_step_by_hand(self):
        hyper = OptimizerConfig(weight_decay=0.0)
        theta = {"x": np.array([[1.0]])}
        state = AdamWState.zeros(theta, hyper, lr=5e-5)
        new, after = adamw_step(theta, {"x": np.array([[0.5]])}, state)

        m = (1 - 0.99) * 0.5
        v = (1 - 0.98) * 0.25
        m_hat = m / (1 - 0.99)
        v_hat = v / (1 - 0.98)
        expected = 1.0 - 5e-5 * (m_hat / (math.sqrt(v_hat) + 1e-8))
        assert new["x"][0, 0] == pytest.approx(expected, abs=1e-15)
        assert after.t == 1
        assert after.m["x"][0, 0] == pytest.approx(m)
        assert after.v["x"][0, 0] == pytest.approx(v)

    def test_no_decay_and_no_gradient_is_identity(self, params):
        hyper = OptimizerConfig(weight_decay=0.0)
        state = AdamWState.zeros(params, hyper, lr=1e-2)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        current = params
        for _ in range(5):
            current, state = adamw_step(current, zero, state)
        for name in params:
            assert np.array_equal(current[name], params[name])

    def test_excluded_names_skip_decay(self):
        theta = {"w": np.array([[2.0]]), "log_inv_tau": np.array([[2.0]])}
        state = AdamWState.zeros(theta, OptimizerConfig(), lr=0.1, no_decay=["log_inv_tau"])
        zero = {k: np.zeros_like(v) for k, v in theta.items()}
        new, _ = adamw_step(theta, zero, state)
        assert new["log_inv_tau"][0, 0] == 2.0
        assert new["w"][0, 0] < 2.0

    def test_deterministic(self, params):
        state = AdamWState.zeros(params, OptimizerConfig(), lr=1e-3)
        grads = {k: np.ones_like(v) for k, v in params.items()}
        a, sa = adamw_step(params, grads, state)
        b, sb = adamw_step(params, grads, state)
        assert all(np.array_equal(a[k], b[k]) for k in params)
        assert serialize_state(sa) == serialize_state(sb)

    def test_inputs_untouched(self, params):
        copy = {k: v.copy() for k, v in params.items()}
        state = AdamWState.zeros(params, OptimizerConfig(), lr=1e-3)
        adamw_step(params, {k: np.ones_like(v) for k, v in params.items()}, state)
        assert all(np.array_equal(params[k], copy[k]) for k in params)
        assert state.t == 0 and not state.m["W0"].any()

    def test_second_moment_non_negative(self, params):
        state = AdamWState.zeros(params, OptimizerConfig(), lr=1e-3)
        rng = np.random.default_rng(1)
        for _ in range(10):
            grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
            params, state = adamw_step(params, grads, state)
        assert all((v >= 0).all() for v in state.v.values())

    def test_shape_mismatch(self, params):
        state = AdamWState.zeros(params, OptimizerConfig())
        grads = {"W0": np.ones((2, 3)), "b0": np.ones((1, 2))}
        with pytest.raises(DimensionError, match="W0"):
            adamw_step(params, grads, state)

    def test_unknown_parameter(self, params):
        state = AdamWState.zeros(params, OptimizerConfig())
        with pytest.raises(DimensionError):
            adamw_step({"other": np.ones((1, 1))}, {}, state)


class TestSchedule:
    def test_start_is_eta_max(self):
        s = ScheduleConfig(eta_max=1e-3, eta_min=1e-5, t0=10)
        assert lr_at(s, 0) == pytest.approx(1e-3, abs=1e-18)

    def test_midpoint(self):
        s = ScheduleConfig(eta_max=1e-3, eta_min=1e-5, t0=10)
        assert lr_at(s, 5) == pytest.approx((1e-3 + 1e-5) / 2, abs=1e-18)

    def test_end_of_period_closed_form(self):
        s = ScheduleConfig(eta_max=1e-3, eta_min=1e-5, t0=10)
        assert annealed_lr(s, 10, 10) == pytest.approx(1e-5, abs=1e-18)
        assert lr_at(s, 10) == pytest.approx(1e-3, abs=1e-18)

    def test_restart_jumps_back(self):
        s = ScheduleConfig(eta_max=1.0, eta_min=0.0, t0=4, t_mult=2)
        assert lr_at(s, 3) < 0.2
        assert lr_at(s, 4) == 1.0
        assert locate(s, 4) == (0, 8)

    def test_restarts_double(self):
        s = ScheduleConfig(t0=200, t_mult=2)
        assert restart_steps(s, 3000) == [200, 600, 1400, 3000]
        starts = [step for step in range(1, 1500) if locate(s, step)[0] == 0]
        assert starts == [200, 600, 1400]

    def test_constant_period(self):
        s = ScheduleConfig(t0=5, t_mult=1)
        assert [locate(s, step)[0] for step in (4, 5, 6, 10)] == [4, 0, 1, 0]

    @settings(max_examples=200, deadline=None)
    @given(
        step=st.integers(0, 100_000),
        t0=st.integers(1, 500),
        t_mult=st.integers(1, 3),
        eta_min=st.floats(0, 1e-3),
    )
    def test_within_bounds(self, step, t0, t_mult, eta_min):
        s = ScheduleConfig(eta_max=1e-3, eta_min=eta_min, t0=t0, t_mult=t_mult)
        lr = lr_at(s, step)
        assert eta_min - 1e-18 <= lr <= 1e-3 + 1e-18

    def test_negative_step(self):
        with pytest.raises(ConfigError):
            lr_at(ScheduleConfig(), -1)

    def test_invalid_schedule_rejected_by_model(self):
        with pytest.raises(ValueError):
            ScheduleConfig(t0=0)
        with pytest.raises(ValueError):
            ScheduleConfig(eta_max=1e-5, eta_min=1e-3)


class TestPersistence:
    def test_roundtrip_after_steps(self, params):
        state = AdamWState.zeros(params, OptimizerConfig(beta1=0.9), lr=3e-4, no_decay=["b0"])
        rng = np.random.default_rng(2)
        for _ in range(3):
            grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
            params, state = adamw_step(params, grads, state)
        data = serialize_state(state)
        restored = deserialize_state(data)
        assert serialize_state(restored) == data
        assert restored.t == 3 and restored.no_decay == frozenset({"b0"})
        assert restored.hyper == state.hyper
        assert all(np.array_equal(restored.m[k], state.m[k]) for k in state.m)

    def test_truncated(self, params):
        data = serialize_state(AdamWState.zeros(params, OptimizerConfig()))
        with pytest.raises(FormatError):
            deserialize_state(data[:-3])

    def test_bad_hyperparameters(self):
        data = ByteWriter().text('{"beta1": 2.0}').getvalue()
        with pytest.raises(FormatError, match="hyperparameters"):
            deserialize_state(data)
