"""Tests for the InfoNCE losses and the learnable temperature."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bindspace import numeric as nm
from bindspace.encoder import forward_graph, init_encoder
from bindspace.errors import ConfigError, DegenerateInputError, DimensionError
from bindspace.gradcheck import finite_diff_grad, relative_error
from bindspace.loss import (
    INITIAL_TAU,
    Temperature,
    clamp_temperature,
    infonce,
    infonce_directional,
    infonce_symmetric,
    temperature_value,
)


def _directional_by_enumeration(o, c, tau):
    """Straight-line evaluation of the directional loss, one term at a time."""
    k = len(o)
    o_hat = [row / math.sqrt(sum(v * v for v in row)) for row in o]
    c_hat = [row / math.sqrt(sum(v * v for v in row)) for row in c]
    total = 0.0
    for i in range(k):
        scores = [float(np.dot(o_hat[i], c_hat[j])) / tau for j in range(k)]
        denominator = sum(math.exp(s) for s in scores)
        total += -math.log(math.exp(scores[i]) / denominator)
    return total / k


def _symmetric_by_enumeration(o, a, tau):
    return 0.5 * (_directional_by_enumeration(o, a, tau) + _directional_by_enumeration(a, o, tau))


def _temp(tau):
    return Temperature(log_inv_tau=-math.log(tau))


# ---------------------------------------------------------------------------
# Temperature
# ---------------------------------------------------------------------------


class TestTemperature:
    def test_initial_value(self):
        assert temperature_value(Temperature()) == pytest.approx(INITIAL_TAU, abs=1e-15)

    def test_zero_means_unit_tau(self):
        assert temperature_value(Temperature(0.0)) == 1.0

    def test_clamp_upper(self):
        temp = clamp_temperature(Temperature(math.log(250.0)))
        assert 1.0 / temperature_value(temp) == pytest.approx(100.0)

    def test_clamp_lower(self):
        temp = clamp_temperature(Temperature(-3.0))
        assert temperature_value(temp) == 1.0

    def test_clamp_keeps_values_in_range(self):
        temp = clamp_temperature(Temperature())
        assert temp.log_inv_tau == -math.log(INITIAL_TAU)

    def test_node_is_trainable_leaf(self):
        node = Temperature().as_node()
        assert node.requires_grad and node.shape == (1, 1)


# ---------------------------------------------------------------------------
# Spot values
# ---------------------------------------------------------------------------


class TestSpotValues:
    def test_single_row_is_zero(self):
        rng = np.random.default_rng(0)
        for variant in ("directional", "symmetric"):
            out = infonce(variant, rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), Temperature())
            assert out.value == 0.0

    def test_identical_rows_give_ln2(self):
        rows = np.tile([[0.3, -1.2, 0.8]], (2, 1))
        out = infonce_directional(rows, rows, Temperature())
        assert abs(out.value - math.log(2.0)) < 1e-12

    def test_orthonormal_alignment_at_unit_tau(self):
        eye = np.eye(2)
        out = infonce_symmetric(eye, eye, Temperature(0.0))
        assert abs(out.value - math.log(1.0 + math.exp(-1.0))) < 1e-9
        assert out.value == pytest.approx(0.313262, abs=1e-6)

    def test_logits_are_detached_copy(self):
        eye = np.eye(2)
        out = infonce_directional(eye, eye, Temperature(0.0))
        assert np.allclose(out.logits, eye)
        assert isinstance(out.logits, np.ndarray)


# ---------------------------------------------------------------------------
# Oracle equivalence and invariances
# ---------------------------------------------------------------------------


class TestOracle:
    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_directional_matches_enumeration(self, k):
        rng = np.random.default_rng(k)
        for _ in range(100):
            o, c = rng.normal(size=(k, 5)), rng.normal(size=(k, 5))
            tau = float(rng.uniform(0.01, 1.0))
            got = infonce_directional(o, c, _temp(tau)).value
            assert abs(got - _directional_by_enumeration(o, c, tau)) < 1e-9

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_symmetric_matches_enumeration(self, k):
        rng = np.random.default_rng(100 + k)
        for _ in range(100):
            o, a = rng.normal(size=(k, 5)), rng.normal(size=(k, 5))
            tau = float(rng.uniform(0.01, 1.0))
            got = infonce_symmetric(o, a, _temp(tau)).value
            assert abs(got - _symmetric_by_enumeration(o, a, tau)) < 1e-9

    def test_default_tau_case(self):
        rng = np.random.default_rng(9)
        o, c = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        got = infonce_directional(o, c, Temperature()).value
        assert abs(got - _directional_by_enumeration(o, c, INITIAL_TAU)) < 1e-9


class TestInvariants:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
    def test_non_negative(self, seed, k):
        rng = np.random.default_rng(seed)
        o, a = rng.normal(size=(k, 4)), rng.normal(size=(k, 4))
        assert infonce_directional(o, a, Temperature()).value >= 0.0
        assert infonce_symmetric(o, a, Temperature()).value >= 0.0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 8))
    def test_symmetric_argument_order(self, seed, k):
        rng = np.random.default_rng(seed)
        o, a = rng.normal(size=(k, 4)), rng.normal(size=(k, 4))
        assert infonce_symmetric(o, a, Temperature()).value == pytest.approx(
            infonce_symmetric(a, o, Temperature()).value, abs=1e-12
        )

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 8))
    def test_batch_permutation(self, seed, k):
        rng = np.random.default_rng(seed)
        o, a = rng.normal(size=(k, 4)), rng.normal(size=(k, 4))
        perm = rng.permutation(k)
        for fn in (infonce_directional, infonce_symmetric):
            base = fn(o, a, Temperature()).value
            assert abs(fn(o[perm], a[perm], Temperature()).value - base) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 8))
    def test_row_scale(self, seed, k):
        rng = np.random.default_rng(seed)
        o, a = rng.normal(size=(k, 4)), rng.normal(size=(k, 4))
        scaled = o * rng.uniform(0.1, 10.0, size=(k, 1))
        for fn in (infonce_directional, infonce_symmetric):
            assert abs(fn(scaled, a, Temperature()).value - fn(o, a, Temperature()).value) < 1e-9

    def test_perfect_alignment_is_local_optimum(self):
        # perturbations toward other rows or out of their span; none makes an
        # off-diagonal similarity negative
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        rows, complement = q[:4], q[4:]
        temp = Temperature(0.0)
        base = infonce_symmetric(rows, rows, temp).value
        for i in range(4):
            for j in range(4):
                for step in (0.05, 0.5, 2.0):
                    moved = rows.copy()
                    moved[i] = rows[i] + step * (rows[j] if j != i else complement[0])
                    assert infonce_symmetric(moved, rows, temp).value >= base - 1e-12
            moved = rows.copy()
            moved[i] = rows[i] + rng.uniform(0.1, 1.0, size=2) @ complement
            assert infonce_symmetric(moved, rows, temp).value > base


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


class TestGradients:
    @pytest.mark.parametrize("variant", ["directional", "symmetric"])
    @pytest.mark.parametrize("seed", range(20))
    def test_through_two_layer_mlp(self, variant, seed):
        rng = np.random.default_rng(seed)
        enc = init_encoder((8, 16, 8), "tanh", seed=seed)
        x = rng.normal(size=(5, 8))
        target = rng.normal(size=(5, 8))
        s0 = float(rng.uniform(0.5, 3.0))

        out, params = forward_graph(enc, nm.constant(x))
        temp = Temperature(s0)
        s = temp.as_node()
        loss = infonce(variant, out, target, temp, s)
        grads = nm.backward(loss.loss, wrt=[*params.values(), s])

        for name in ("W0", "b1"):
            def f(w, name=name):
                moved = enc.with_parameters({**enc.parameters(), name: w})
                o, _ = forward_graph(moved, nm.constant(x))
                return infonce(variant, o, target, Temperature(s0), nm.constant(s0)).value

            numeric = finite_diff_grad(f, enc.parameters()[name])
            assert relative_error(grads[params[name]], numeric) < 1e-4

        numeric_s = finite_diff_grad(
            lambda v: infonce(variant, out.value, target, Temperature(), nm.constant(v)).value,
            np.array([[s0]]),
        )
        assert relative_error(grads[s], numeric_s) < 1e-4

    def test_gradient_wrt_both_inputs(self):
        rng = np.random.default_rng(21)
        o0, a0 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        o, a = nm.parameter(o0), nm.parameter(a0)
        loss = infonce_symmetric(o, a, Temperature(1.0), nm.constant(1.0))
        grads = nm.backward(loss.loss)
        num_o = finite_diff_grad(lambda v: infonce_symmetric(v, a0, Temperature(1.0)).value, o0)
        num_a = finite_diff_grad(lambda v: infonce_symmetric(o0, v, Temperature(1.0)).value, a0)
        assert relative_error(grads[o], num_o) < 1e-4
        assert relative_error(grads[a], num_a) < 1e-4


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(DimensionError, match="4x3 vs 4x2"):
            infonce_directional(np.ones((4, 3)), np.ones((4, 2)), Temperature())

    def test_zero_row(self):
        o = np.ones((3, 2))
        o[1] = 0.0
        with pytest.raises(DegenerateInputError):
            infonce_symmetric(o, np.ones((3, 2)), Temperature())

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            infonce("triplet", np.eye(2), np.eye(2), Temperature())
