import numpy as np
import numpy.testing as npt
import pytest

import pyramidqa.ops as ops
import pyramidqa.tensor as T
from pyramidqa.errors import ContractError, NumericError
from pyramidqa.tensor import Tape, Tensor


class TestTensor:
    def test_wraps_row_major_float(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float64
        assert t.shape == (2, 2)
        assert t.data.flags["C_CONTIGUOUS"]

    def test_dtype_widths(self):
        assert Tensor(np.ones(3, dtype=np.float32)).dtype == np.float32
        assert Tensor(np.ones(3, dtype=np.int64)).dtype == np.float64
        assert Tensor(1.0, dtype=np.float32).dtype == np.float32

    def test_item_requires_scalar(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_assert_finite(self):
        Tensor([1.0, 2.0]).assert_finite()
        with pytest.raises(NumericError):
            Tensor([1.0, np.inf]).assert_finite("loss")
        with pytest.raises(NumericError):
            Tensor([np.nan]).assert_finite()


class TestTape:
    def test_insertion_order_is_topological(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tape = Tape()
        with T.record(tape):
            y = ops.mul(x, x)
            z = ops.sum_all(ops.add(y, x))
        assert len(tape) == 3
        assert tape.check_topological()
        assert z.node_id == 2

    def test_no_tape_suspends_recording(self):
        x = Tensor([1.0], requires_grad=True)
        tape = Tape()
        with T.record(tape):
            with T.no_tape():
                ops.mul(x, x)
            ops.add(x, x)
        assert len(tape) == 1

    def test_backward_needs_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tape = Tape()
        with T.record(tape):
            y = ops.mul(x, x)
        with pytest.raises(ContractError):
            T.backward(y, tape)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
        tape = Tape()
        with T.record(tape):
            loss = ops.sum_all(x)
        T.backward(loss, tape)
        npt.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gradient(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        tape = Tape()
        with T.record(tape):
            loss = ops.sum_all(ops.mul(x, x))
        T.backward(loss, tape)
        npt.assert_allclose(x.grad, 2 * x.data)

    def test_fanout_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        tape = Tape()
        with T.record(tape):
            a = ops.mul(x, 3.0)
            b = ops.mul(x, 5.0)
            loss = ops.sum_all(ops.add(a, b))
        T.backward(loss, tape)
        npt.assert_allclose(x.grad, [8.0])

    def test_all_reachable_tensors_have_grads(self, rng):
        # Build a small random graph and confirm no requires_grad tensor
        # reachable from the loss is left without a gradient.
        x = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
        tape = Tape()
        with T.record(tape):
            h = ops.elu(ops.matmul(x, w))
            s = ops.softmax_last(h)
            loss = ops.sum_all(ops.mul(s, s))
        T.backward(loss, tape)
        for node in tape.nodes:
            assert node.output.grad is not None or node.output is loss
        assert x.grad is not None and w.grad is not None

    def test_grad_dtype_follows_data(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        tape = Tape()
        with T.record(tape):
            loss = ops.sum_all(ops.mul(x, x))
        T.backward(loss, tape)
        assert x.grad.dtype == np.float32
