import numpy as np
import pytest

from portion3d import autodiff as ad
from portion3d.autodiff import (
    AdamState,
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    backward,
    seeded_init,
    sgd_step,
)
from portion3d.errors import DimensionMismatchError, PortionError
from portion3d.gradcheck import op_checks


class TestForwardSemantics:
    def test_matmul_identity(self, rng):
        x = rng.normal(size=(2, 5))
        out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(DimensionMismatchError) as err:
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)

    def test_relu(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_conv2d_identity_kernel(self, rng):
        x = rng.normal(size=(1, 3, 3))
        kernel = np.ones((1, 1, 1, 1))
        out = ad.conv2d(Tensor(x), Tensor(kernel), stride=1, padding=0)
        np.testing.assert_allclose(out.data, x, rtol=1e-6)

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            ad.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_broadcast_add(self):
        out = ad.add(Tensor(np.ones((2, 3))), Tensor(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_array_equal(out.data, [[2, 3, 4], [2, 3, 4]])

    def test_incompatible_broadcast_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))

    def test_max_over_axis_ties_to_lowest_index(self):
        values, idx = ad.max_over_axis(Tensor([[1.0, 3.0, 3.0]]), axis=1)
        assert idx.tolist() == [1]
        np.testing.assert_array_equal(values.data, [3.0])

    def test_forward_deterministic(self, rng):
        a = Tensor(rng.normal(size=(8, 8)))
        b = Tensor(rng.normal(size=(8, 8)))
        r1 = ad.matmul(ad.relu(a), b).data
        r2 = ad.matmul(ad.relu(a), b).data
        np.testing.assert_array_equal(r1, r2)


class TestL1Loss:
    def test_equal_inputs_zero(self):
        out = ad.l1_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0]))
        assert out.item() == 0.0

    def test_forced_example(self):
        out = ad.l1_loss(Tensor([1.0, 3.0]), Tensor([2.0, 5.0]))
        assert out.item() == pytest.approx(1.5)

    def test_gradient_is_sign_over_n(self):
        pred = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.l1_loss(pred, Tensor([1.0]))
        backward(loss, tape)
        np.testing.assert_array_equal(pred.grad, [1.0])

    def test_gradient_zero_at_ties(self):
        pred = Tensor([2.0, 5.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.l1_loss(pred, Tensor([2.0, 1.0]))
        backward(loss, tape)
        np.testing.assert_array_equal(pred.grad, [0.0, 0.5])

    def test_empty_batch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ad.l1_loss(Tensor(np.zeros(0)), Tensor(np.zeros(0)))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ad.sum_all(w)
        backward(loss, tape)
        np.testing.assert_array_equal(w.grad, np.ones((3, 4)))

    def test_square_gradient_closed_form(self):
        w = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(w, w))
        backward(loss, tape)
        np.testing.assert_allclose(w.grad, [6.0])

    def test_loss_must_be_scalar(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = ad.mul(w, w)
        with pytest.raises(DimensionMismatchError):
            backward(out, tape)

    def test_loss_must_be_on_tape(self):
        w = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            ad.mul(w, w)
        loss = ad.sum_all(w)  # recorded on no tape
        with pytest.raises(PortionError):
            backward(loss, tape)

    def test_accumulation_across_uses_doubles(self, rng):
        x = rng.normal(size=(4,))
        w = Tensor(x, requires_grad=True)
        with Tape() as tape:
            loss = ad.sum_all(ad.add(w, w))
        backward(loss, tape)
        np.testing.assert_array_equal(w.grad, 2.0 * np.ones(4))
        w2 = Tensor(x, requires_grad=True)
        with Tape() as tape:
            loss = ad.sum_all(w2)
        backward(loss, tape)
        np.testing.assert_array_equal(2.0 * w2.grad, w.grad)

    def test_grads_accumulate_across_backward_calls(self):
        w = Tensor([1.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = ad.sum_all(w)
            backward(loss, tape)
        np.testing.assert_array_equal(w.grad, [2.0])

    def test_concat_backward_reassembles_exactly(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        weights = rng.normal(size=(2, 7))
        with Tape() as tape:
            fused = ad.concat(a, b, axis=1)
            loss = ad.sum_all(ad.mul(fused, Tensor(weights)))
        backward(loss, tape)
        np.testing.assert_array_equal(np.concatenate([a.grad, b.grad], axis=1), weights)

    def test_no_tape_means_no_recording(self):
        w = Tensor([1.0], requires_grad=True)
        out = ad.mul(w, w)
        assert out.requires_grad
        tape = Tape()
        with tape:
            pass
        with pytest.raises(PortionError):
            backward(out, tape)


class TestFiniteDifferenceOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_all_ops_pass(self, seed):
        for result in op_checks(seed):
            assert result.passed, f"{result.name}: {result.max_rel_err:.2e}"


class TestOptimizers:
    def _param(self, value):
        params = ParameterSet()
        params.add("w", Tensor(np.array(value, dtype=np.float64), requires_grad=True, dtype=np.float64))
        return params

    def test_sgd_single_step_closed_form(self):
        params = self._param([1.0])
        w = params["w"]
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(w, w))
        backward(loss, tape)
        sgd_step(params, lr=0.1)
        np.testing.assert_allclose(w.data, [0.8])
        assert w.grad is None

    def test_sgd_converges_on_quadratic(self):
        params = self._param([1.0])
        w = params["w"]
        target = Tensor(np.array([5.0], dtype=np.float64))
        for _ in range(200):
            with Tape() as tape:
                diff = ad.sub(w, target)
                loss = ad.sum_all(ad.mul(diff, diff))
            backward(loss, tape)
            sgd_step(params, lr=0.1)
        assert abs(w.data[0] - 5.0) < 1e-6

    def test_adam_first_step_magnitude_is_lr(self):
        for scale in (1e-4, 1.0, 1e4):
            params = self._param([2.0])
            w = params["w"]
            state = AdamState()
            w.grad = np.array([scale], dtype=np.float64)
            adam_step(params, lr=0.01, state=state)
            # bias-corrected first step is lr * g / (|g| + eps)
            assert abs((2.0 - w.data[0]) - 0.01) < 1e-6

    def test_adam_state_persists(self):
        params = self._param([0.0])
        w = params["w"]
        state = AdamState()
        for step in range(3):
            w.grad = np.array([1.0], dtype=np.float64)
            adam_step(params, lr=0.1, state=state)
        assert state.t == 3
        assert "w" in state.m and "w" in state.v

    def test_missing_grad_errors(self):
        params = self._param([1.0])
        with pytest.raises(PortionError):
            sgd_step(params, lr=0.1)
        with pytest.raises(PortionError):
            adam_step(params, lr=0.1, state=AdamState())


class TestSeededInit:
    def test_zeros_scheme(self):
        t = seeded_init((3, 4), "zeros", seed=1)
        assert t.requires_grad
        np.testing.assert_array_equal(t.data, np.zeros((3, 4)))

    def test_same_seed_identical(self):
        a = seeded_init((5, 6), "uniform_fan_in", seed=42)
        b = seeded_init((5, 6), "uniform_fan_in", seed=42)
        np.testing.assert_array_equal(a.data, b.data)
        c = seeded_init((5, 6), "uniform_fan_in", seed=43)
        assert not np.array_equal(a.data, c.data)

    def test_fan_in_bounds_and_mean(self):
        t = seeded_init((100, 1000), "uniform_fan_in", seed=0)
        vals = t.data.ravel()
        assert vals.size == 100_000
        assert np.abs(vals).max() <= 0.1
        assert abs(vals.mean()) < 0.002

    def test_conv_fan_in_uses_receptive_field(self):
        t = seeded_init((8, 4, 3, 3), "uniform_fan_in", seed=0)
        assert np.abs(t.data).max() <= 1.0 / np.sqrt(4 * 9)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(PortionError):
            seeded_init((2,), "orthogonal", seed=0)


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        params = ParameterSet()
        params.add("w", Tensor([1.0], requires_grad=True))
        with pytest.raises(PortionError):
            params.add("w", Tensor([2.0], requires_grad=True))

    def test_iteration_order_is_insertion_order(self):
        params = ParameterSet()
        for name in ("zebra", "alpha", "mid"):
            params.add(name, Tensor([0.0], requires_grad=True))
        assert params.names() == ["zebra", "alpha", "mid"]

    def test_requires_grad_enforced(self):
        params = ParameterSet()
        with pytest.raises(PortionError):
            params.add("w", Tensor([1.0]))
