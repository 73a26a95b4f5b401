import math

import numpy as np
import pytest

from policymix import autodiff as ad
from policymix.autodiff import Adam, DivergenceError, ShapeMismatchError, Tensor


def make_param(rng, shape, name, scale=0.5):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


class TestLinearForward:
    def test_identity_weights(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor(np.eye(2))
        b = Tensor([0.0, 0.0])
        y = ad.linear_forward(x, w, b)
        np.testing.assert_array_equal(y.data, [[1.0, 2.0]])

    def test_zero_input_passes_bias(self):
        x = Tensor([[0.0, 0.0]])
        w = Tensor([[5.0, 7.0], [-1.0, 2.0]])
        b = Tensor([3.0, -1.0])
        y = ad.linear_forward(x, w, b)
        np.testing.assert_array_equal(y.data, [[3.0, -1.0]])

    def test_hand_matrix_multiply(self):
        # [1,1] @ [[1,0],[0,2]] + [1,1] = [2,3]
        x = Tensor([[1.0, 1.0]])
        w = Tensor([[1.0, 0.0], [0.0, 2.0]])
        b = Tensor([1.0, 1.0])
        y = ad.linear_forward(x, w, b)
        np.testing.assert_array_equal(y.data, [[2.0, 3.0]])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ad.linear_forward(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        with pytest.raises(ShapeMismatchError):
            ad.linear_forward(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0, 1.0]))

    def test_bias_gradient_sums_over_batch(self):
        x = Tensor(np.ones((4, 2)))
        w = Tensor(np.eye(2), requires_grad=True, name="w")
        b = Tensor([0.0, 0.0], requires_grad=True, name="b")
        loss = ad.sum_(ad.linear_forward(x, w, b))
        grads = ad.backward(loss)
        np.testing.assert_array_equal(grads["b"], [4.0, 4.0])
        np.testing.assert_array_equal(grads["w"], [[4.0, 4.0], [4.0, 4.0]])


class TestRelu:
    def test_definition(self):
        y = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        y = ad.relu(Tensor([-3.0, -0.5, -1e-9]))
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 0.0])

    def test_gradient_is_positivity_indicator(self):
        x = Tensor([-1.0, 2.0], requires_grad=True, name="x")
        grads = ad.backward(ad.sum_(ad.relu(x)))
        np.testing.assert_array_equal(grads["x"], [0.0, 1.0])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True, name="x")
        grads = ad.backward(ad.sum_(x))
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])

    def test_half_square(self):
        x = Tensor(3.0, requires_grad=True, name="x")
        loss = Tensor(0.5) * x * x
        grads = ad.backward(loss)
        assert grads["x"] == pytest.approx(3.0, abs=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True, name="x")
        with pytest.raises(ShapeMismatchError):
            ad.backward(x * x)

    def test_graph_cleared_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True, name="x")
        y = ad.sum_(x * x)
        ad.backward(y)
        assert y._bw is None and y._parents == ()
        assert x.grad is None

    def test_diamond_graph_accumulates(self):
        # f = x*x + 3*x -> df/dx = 2x + 3
        x = Tensor(2.0, requires_grad=True, name="x")
        grads = ad.backward(x * x + Tensor(3.0) * x)
        assert grads["x"] == pytest.approx(7.0, abs=1e-15)

    def test_mlp_loss_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        params = {
            "w1": make_param(rng, (3, 8), "w1"),
            "b1": make_param(rng, (8,), "b1"),
            "w2": make_param(rng, (8, 1), "w2"),
            "b2": make_param(rng, (1,), "b2"),
        }
        x = Tensor(rng.normal(size=(5, 3)))
        target = Tensor(rng.normal(size=(5, 1)))

        def f():
            h = ad.relu(ad.linear_forward(x, params["w1"], params["b1"]))
            out = ad.linear_forward(h, params["w2"], params["b2"])
            d = out - target
            return ad.mean_(d * d)

        err = ad.finite_diff_check(f, params, h=1e-5)
        assert err < 1e-4


class TestOps:
    def test_minimum_routes_gradient_to_smaller(self):
        a = Tensor([1.0, 5.0], requires_grad=True, name="a")
        b = Tensor([2.0, 3.0], requires_grad=True, name="b")
        grads = ad.backward(ad.sum_(ad.minimum(a, b)))
        np.testing.assert_array_equal(grads["a"], [1.0, 0.0])
        np.testing.assert_array_equal(grads["b"], [0.0, 1.0])

    def test_clip_zero_gradient_outside(self):
        x = Tensor([-2.0, 0.5, 3.0], requires_grad=True, name="x")
        grads = ad.backward(ad.sum_(ad.clip(x, -1.0, 1.0)))
        np.testing.assert_array_equal(grads["x"], [0.0, 1.0, 0.0])

    def test_concat_and_slice_grads(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True, name="a")
        b = Tensor([[3.0]], requires_grad=True, name="b")
        c = ad.concat(a, b)
        np.testing.assert_array_equal(c.data, [[1.0, 2.0, 3.0]])
        grads = ad.backward(ad.sum_(c * c))
        np.testing.assert_array_equal(grads["a"], [[2.0, 4.0]])
        np.testing.assert_array_equal(grads["b"], [[6.0]])

        x = Tensor([[1.0, 2.0, 3.0, 4.0]], requires_grad=True, name="x")
        left = ad.slice_cols(x, 0, 2)
        grads = ad.backward(ad.sum_(left))
        np.testing.assert_array_equal(grads["x"], [[1.0, 1.0, 0.0, 0.0]])

    def test_detach_blocks_gradient(self):
        x = Tensor([2.0], requires_grad=True, name="x")
        y = ad.detach(x * x)
        loss = ad.sum_(y * x)
        grads = ad.backward(loss)
        np.testing.assert_array_equal(grads["x"], [4.0])  # only the live factor

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True, name="x")
        with ad.no_grad():
            y = x * x
        assert not y.requires_grad and y._bw is None


class TestAdam:
    def test_first_step_unit_gradient(self):
        # bias-corrected m_hat / (sqrt(v_hat) + eps) = 1/(1+1e-8) on step one
        p = {"w": Tensor(np.zeros(4), requires_grad=True, name="w")}
        opt = Adam(lr=3e-4)
        opt.step(p, {"w": np.ones(4)})
        np.testing.assert_allclose(p["w"].data, -3e-4, atol=1e-9)

    def test_zero_gradient_no_change(self):
        p = {"w": Tensor([1.0, -2.0], requires_grad=True, name="w")}
        opt = Adam(lr=3e-4)
        opt.step(p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_step_count_increments(self):
        p = {"w": Tensor([0.0], requires_grad=True, name="w")}
        opt = Adam(lr=3e-4)
        opt.step(p, {"w": np.ones(1)})
        opt.step(p, {"w": np.ones(1)})
        assert opt.state["w"].step_count == 2

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=(3, 3))
        p = {"w": Tensor(vals.copy(), requires_grad=True, name="w")}
        opt = Adam(lr=0.0)
        for _ in range(5):
            opt.step(p, {"w": rng.normal(size=(3, 3))})
        np.testing.assert_array_equal(p["w"].data, vals)

    def test_nan_gradient_names_parameter(self):
        p = {"bad.w": Tensor([0.0], requires_grad=True, name="bad.w")}
        opt = Adam(lr=3e-4)
        with pytest.raises(DivergenceError, match="bad.w"):
            opt.step(p, {"bad.w": np.array([np.nan])})

    def test_second_moment_nonnegative(self):
        p = {"w": Tensor(np.zeros(8), requires_grad=True, name="w")}
        opt = Adam(lr=1e-3)
        rng = np.random.default_rng(11)
        for _ in range(20):
            opt.step(p, {"w": rng.normal(size=8)})
        assert np.all(opt.state["w"].second_moment >= 0.0)


class TestFiniteDiff:
    def test_quadratic_is_near_exact(self):
        p = {"x": Tensor([1.0, -2.0, 0.5], requires_grad=True, name="x")}

        def f():
            return ad.sum_(p["x"] * p["x"])

        assert ad.finite_diff_check(f, p, h=1e-5) < 1e-8

    def test_two_layer_relu_mlp(self):
        rng = np.random.default_rng(19)
        params = {
            "w1": make_param(rng, (2, 6), "w1"),
            "b1": make_param(rng, (6,), "b1"),
            "w2": make_param(rng, (6, 6), "w2"),
            "b2": make_param(rng, (6,), "b2"),
            "w3": make_param(rng, (6, 1), "w3"),
            "b3": make_param(rng, (1,), "b3"),
        }
        x = Tensor(rng.normal(size=(4, 2)))

        def f():
            h1 = ad.relu(ad.linear_forward(x, params["w1"], params["b1"]))
            h2 = ad.relu(ad.linear_forward(h1, params["w2"], params["b2"]))
            return ad.mean_(ad.linear_forward(h2, params["w3"], params["b3"]))

        assert ad.finite_diff_check(f, params, h=1e-5) < 1e-4


def test_forward_and_gradients_deterministic():
    def run():
        rng = np.random.default_rng(42)
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True, name="w")
        x = Tensor(rng.normal(size=(2, 3)))
        loss = ad.sum_(ad.tanh(ad.linear_forward(x, w, Tensor(np.zeros(3)))))
        value = loss.data.copy()
        return value, ad.backward(loss)["w"]

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)
