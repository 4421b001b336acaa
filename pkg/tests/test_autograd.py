"""Tests for autograd.py: tensors, the tape, and the elementwise primitives."""

import numpy as np
import pytest
from _support import leaf

from spiking_par.autograd import Tape, Tensor, backward
from spiking_par.errors import DimensionError, EngineUsageError
from spiking_par.gradcheck import finite_diff_check


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_integer_arrays_are_promoted(self):
        assert Tensor(np.arange(3)).dtype == np.float32

    def test_float64_is_preserved(self):
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64

    def test_numpy_scalars_keep_their_dtype(self):
        assert Tensor(np.float64(1.5)).dtype == np.float64

    def test_item_of_scalar(self):
        assert Tensor(np.array([[2.5]])).item() == 2.5

    def test_item_of_vector_raises(self):
        with pytest.raises(DimensionError):
            Tensor([1.0, 2.0]).item()

    def test_reshape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros(6)).reshape(4, 2)


class TestTape:
    def test_records_only_inside_context(self):
        x = leaf(np.ones(3))
        y = (x * 2.0).sum()
        with Tape() as tape:
            z = (x * 3.0).sum()
        assert len(tape.nodes) == 2
        with pytest.raises(EngineUsageError):
            tape.backward(y)
        tape.backward(z)
        np.testing.assert_allclose(x.grad, [3.0, 3.0, 3.0])

    def test_non_scalar_loss_raises(self):
        x = leaf(np.ones(3))
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(EngineUsageError):
            tape.backward(y)

    def test_gradients_accumulate_across_backward_calls(self):
        x = leaf(np.array([1.0, -2.0]))
        for _ in range(2):
            with Tape() as tape:
                loss = (x * x).sum()
            backward(tape, loss)
        np.testing.assert_allclose(x.grad, [4.0, -8.0])

    def test_zero_grad_clears(self):
        x = leaf(np.ones(2))
        with Tape() as tape:
            loss = x.sum()
        tape.backward(loss)
        x.zero_grad()
        assert x.grad is None

    def test_detached_tensor_gets_no_gradient(self):
        x = leaf(np.ones(2))
        with Tape() as tape:
            loss = (x.detach() * x).sum()
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [1.0, 1.0])
        assert x.detach().grad is None

    def test_reused_tensor_sums_both_paths(self):
        x = leaf(np.array([3.0]))
        with Tape() as tape:
            loss = (x * x + x).sum()
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_broadcast_gradient_is_summed(self):
        x = leaf(np.ones((3, 4)))
        b = leaf(np.ones((1, 4)))
        with Tape() as tape:
            loss = (x + b).sum()
        tape.backward(loss)
        assert b.grad.shape == (1, 4)
        np.testing.assert_allclose(b.grad, np.full((1, 4), 3.0))

    def test_float32_gradients_stay_float32(self):
        x = Tensor([1.0, 1.0, 1.0], requires_grad=True)
        with Tape() as tape:
            loss = (x * x).mean()
        tape.backward(loss)
        assert x.grad.dtype == np.float32

    def test_nested_tapes_record_on_innermost(self):
        x = leaf(np.ones(2))
        with Tape() as outer:
            with Tape() as inner:
                loss = x.sum()
            assert Tape.active() is outer
        assert len(inner.nodes) == 1
        assert outer.nodes == []


class TestPrimitiveGradients:
    def test_sum_is_exact(self, rng):
        assert finite_diff_check(lambda t: t.sum(), rng.normal(size=(3, 4))) < 1e-6

    def test_quadratic_form(self, rng):
        a = rng.normal(size=(4, 4))
        a = Tensor(a @ a.T, dtype=np.float64)

        def f(t):
            col = t.reshape(4, 1)
            return (col.transpose(1, 0) @ (a @ col)).sum()

        assert finite_diff_check(f, rng.normal(size=4), eps=1e-3) < 1e-4

    @pytest.mark.parametrize(
        "fn",
        [
            lambda t: (t * t * 3.0 - t).sum(),
            lambda t: (t / (t * t + 1.0)).sum(),
            lambda t: (t.exp() * 0.5).mean(),
            lambda t: ((t * t + 1.0).log()).sum(),
            lambda t: ((t * t + 1.0) ** 1.5).sum(),
            lambda t: (t.transpose(1, 0).reshape(12) * np.arange(12.0)).sum(),
            lambda t: (t.sum(axis=0) ** 2).sum(),
            lambda t: (t.mean(axis=1, keepdims=True) * t).sum(),
            lambda t: (-t * 2.0 - (1.0 - t)).sum(),
        ],
    )
    def test_elementwise_and_shape_ops(self, fn, rng):
        assert finite_diff_check(fn, rng.normal(size=(3, 4))) < 1e-3

    def test_sampled_coordinates(self, rng):
        err = finite_diff_check(lambda t: (t * t).sum(), rng.normal(size=(10, 10)), samples=7, seed=2)
        assert err < 1e-6
