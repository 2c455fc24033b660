"""Tensor values, seeded randomness, and the gradient tape."""

import numpy as np
import pytest

from hsnet.errors import CapacityError, GraphError, NumericsError, ShapeError
from hsnet.tensor import (
    Rng,
    Tape,
    add,
    backward,
    from_array,
    mul,
    randn,
    scale,
    sub,
    tensor_sum,
    zeros,
)

from oracles import finite_difference, rel_error


class TestConstructors:
    def test_zeros_scalar_shape(self):
        t = zeros((1, 1, 1, 1))
        assert t.dims == (1, 1, 1, 1)
        assert t.data.tolist() == [[[[0.0]]]]

    def test_zeros_empty_extent_preserves_dims(self):
        t = zeros((2, 3, 0, 4))
        assert t.dims == (2, 3, 0, 4)
        assert t.data.size == 0

    def test_zeros_eight_entries(self):
        t = zeros((1, 2, 2, 2))
        assert t.data.size == 8
        assert not t.data.any()

    def test_negative_dim_rejected(self):
        with pytest.raises(ShapeError):
            zeros((1, -1, 2, 2))

    def test_capacity_guard(self):
        with pytest.raises(CapacityError):
            zeros((1 << 17, 1 << 17, 1 << 17, 1))

    def test_non_rank4_rejected(self):
        with pytest.raises(ShapeError):
            from_array(np.zeros((2, 3)))

    def test_nan_rejected_at_construction(self):
        bad = np.zeros((1, 1, 2, 2))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericsError):
            from_array(bad)


class TestRandn:
    def test_same_seed_bit_identical(self):
        a = randn((2, 3, 4, 5), Rng(123), std=0.7)
        b = randn((2, 3, 4, 5), Rng(123), std=0.7)
        assert np.array_equal(a.data, b.data)

    def test_different_seeds_differ(self):
        a = randn((1, 1, 8, 8), Rng(1))
        b = randn((1, 1, 8, 8), Rng(2))
        assert not np.array_equal(a.data, b.data)

    def test_sample_moments(self):
        t = randn((1, 1, 100, 100), Rng(7), std=1.0)
        assert abs(t.data.mean()) < 0.05
        assert abs(t.data.std() - 1.0) < 0.05

    def test_ten_sigma_bound(self):
        t = randn((1, 1, 100, 100), Rng(11), std=0.01)
        assert np.abs(t.data).max() < 0.1

    def test_nonpositive_std_rejected(self):
        with pytest.raises(ValueError):
            randn((1, 1, 2, 2), Rng(0), std=0.0)


class TestRng:
    def test_child_streams_are_independent_and_stable(self):
        r = Rng(42)
        a1 = r.child("a").standard_normal(4)
        a2 = Rng(42).child("a").standard_normal(4)
        b = Rng(42).child("b").standard_normal(4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_child_order_does_not_matter(self):
        r1 = Rng(5)
        first = r1.child("x").uniform(size=3)
        r2 = Rng(5)
        _ = r2.child("y").uniform(size=3)
        second = r2.child("x").uniform(size=3)
        assert np.array_equal(first, second)

    def test_known_stream_frozen(self):
        # Philox keyed with 2024; frozen so a platform or dependency change
        # that silently alters the stream fails loudly here.
        got = Rng(2024).uniform(size=3)
        expected = np.array(
            [0.7539532404108791, 0.6536530412806927, 0.8305111850799092]
        )
        np.testing.assert_allclose(got, expected, rtol=0, atol=5e-16)


class TestElementwise:
    def test_add_zero_identity(self):
        x = randn((2, 2, 3, 3), Rng(0))
        assert np.array_equal(add(x, zeros(x.dims)).data, x.data)

    def test_scale_one_identity(self):
        x = randn((2, 2, 3, 3), Rng(1))
        assert np.array_equal(scale(x, 1.0).data, x.data)

    def test_sub_self_is_zero(self):
        x = randn((1, 2, 2, 2), Rng(2))
        assert not sub(x, x).data.any()

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            add(zeros((1, 2, 3, 3)), zeros((1, 2, 3, 4)))

    def test_dtype_mismatch(self):
        with pytest.raises(ShapeError):
            add(zeros((1, 1, 2, 2), dtype=np.float32), zeros((1, 1, 2, 2)))

    def test_mul_gradient_is_other_operand(self):
        x = randn((1, 2, 3, 2), Rng(3), requires_grad=True)
        y = randn((1, 2, 3, 2), Rng(4))
        with Tape() as tape:
            loss = tensor_sum(mul(x, y))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, y.data)

    def test_mul_gradient_vs_finite_differences(self):
        rng = Rng(5)
        x = randn((1, 2, 2, 2), rng.child("x"), requires_grad=True)
        y = randn((1, 2, 2, 2), rng.child("y"), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(mul(x, y))
        backward(tape, loss)

        fd = finite_difference(lambda: tensor_sum(mul(x, y)).item(), x.data)
        assert rel_error(x.grad, fd) < 1e-4


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = randn((2, 3, 2, 2), Rng(0), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(x)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones(x.dims))

    def test_half_square_gradient_is_x(self):
        x = randn((2, 1, 3, 3), Rng(1), requires_grad=True)
        with Tape() as tape:
            loss = scale(tensor_sum(mul(x, x)), 0.5)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-12)

    def test_three_layer_composite_vs_finite_differences(self):
        rng = Rng(9)
        x = randn((1, 2, 2, 3), rng.child("x"), requires_grad=True)
        y = randn((1, 2, 2, 3), rng.child("y"), requires_grad=True)

        def value():
            f1 = add(x, y)
            f2 = mul(f1, x)
            return tensor_sum(scale(f2, 1.7)).item()

        with Tape() as tape:
            f1 = add(x, y)
            f2 = mul(f1, x)
            loss = tensor_sum(scale(f2, 1.7))
        backward(tape, loss)

        assert rel_error(x.grad, finite_difference(value, x.data)) < 1e-4
        assert rel_error(y.grad, finite_difference(value, y.data)) < 1e-4

    def test_non_scalar_loss_rejected(self):
        x = randn((1, 1, 2, 2), Rng(0), requires_grad=True)
        with Tape() as tape:
            y = scale(x, 2.0)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_detached_loss_rejected(self):
        x = randn((1, 1, 1, 1), Rng(0), requires_grad=True)
        with Tape() as tape:
            _ = scale(x, 2.0)
        detached = tensor_sum(x)  # recorded on no tape
        with pytest.raises(GraphError):
            backward(tape, detached)

    def test_loss_must_be_final_output(self):
        x = randn((1, 1, 1, 1), Rng(0), requires_grad=True)
        with Tape() as tape:
            first = tensor_sum(x)
            _ = scale(first, 3.0)
        with pytest.raises(GraphError):
            backward(tape, first)

    def test_tape_consumed_once(self):
        x = randn((1, 1, 2, 2), Rng(0), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(x)
        backward(tape, loss)
        with pytest.raises(GraphError):
            backward(tape, loss)

    def test_tape_linearity(self):
        rng = Rng(21)
        x = randn((1, 2, 2, 2), rng.child("x"), requires_grad=True)
        y = randn((1, 2, 2, 2), rng.child("y"))

        with Tape() as tape:
            loss = add(tensor_sum(mul(x, y)), scale(tensor_sum(mul(x, x)), 0.5))
        backward(tape, loss)
        combined = x.grad.copy()

        x.grad = None
        with Tape() as t1:
            l1 = tensor_sum(mul(x, y))
        backward(t1, l1)
        with Tape() as t2:
            l2 = scale(tensor_sum(mul(x, x)), 0.5)
        backward(t2, l2)  # accumulates onto the l1 gradient

        np.testing.assert_allclose(x.grad, combined, rtol=1e-12)

    def test_fixed_seed_graph_is_bit_stable(self):
        def run():
            rng = Rng(33)
            x = randn((2, 2, 3, 3), rng.child("x"), requires_grad=True)
            y = randn((2, 2, 3, 3), rng.child("y"))
            with Tape() as tape:
                loss = tensor_sum(mul(add(x, y), x))
            backward(tape, loss)
            return loss.item(), x.grad.copy()

        v1, g1 = run()
        v2, g2 = run()
        assert v1 == v2
        assert np.array_equal(g1, g2)
