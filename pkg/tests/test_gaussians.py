import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from policymix import autodiff as ad
from policymix import gaussians as gs
from policymix.autodiff import Tensor


def gauss(mean, log_std, grad=False, tag=""):
    m = Tensor(np.asarray(mean, dtype=np.float64), requires_grad=grad, name=f"m{tag}")
    ls = Tensor(np.asarray(log_std, dtype=np.float64), requires_grad=grad, name=f"ls{tag}")
    return gs.DiagGaussian(m, ls)


def uniform_weights(k, d):
    return gs.ActivationWeights.from_matrix(np.full((k, d), 1.0 / k))


def trapezoid(y, x):
    dx = np.diff(x)
    return float(np.sum(0.5 * (y[:-1] + y[1:]) * dx))


class TestWeights:
    def test_equal_logits_give_uniform(self):
        w = gs.weights_from_logits([Tensor([0.0, 0.0]), Tensor([0.0, 0.0])])
        np.testing.assert_allclose(w.as_matrix(), 0.5, atol=1e-15)

    def test_logits_one_zero(self):
        w = gs.weights_from_logits([Tensor([1.0]), Tensor([0.0])])
        e = math.e
        np.testing.assert_allclose(w.per_policy[0].data, e / (e + 1.0), atol=1e-12)
        np.testing.assert_allclose(w.per_policy[1].data, 1.0 / (e + 1.0), atol=1e-12)

    def test_extreme_logits_saturate_without_overflow(self):
        w = gs.weights_from_logits([Tensor([40.0]), Tensor([-40.0])])
        assert np.all(np.isfinite(w.as_matrix()))
        np.testing.assert_allclose(w.per_policy[0].data, 1.0, atol=1e-15)
        np.testing.assert_allclose(w.per_policy[1].data, 0.0, atol=1e-15)

    def test_shift_invariance(self):
        a = gs.weights_from_logits([Tensor([2.0, -1.0]), Tensor([0.5, 3.0])])
        b = gs.weights_from_logits([Tensor([2.0 + 7.0, -1.0 + 7.0]), Tensor([0.5 + 7.0, 3.0 + 7.0])])
        np.testing.assert_allclose(a.as_matrix(), b.as_matrix(), atol=1e-14)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=4))
    @settings(deadline=None)
    def test_simplex_per_dimension(self, raw):
        logits = [Tensor([v, -v / 2.0]) for v in raw]
        w = gs.weights_from_logits(logits).as_matrix()
        assert np.all(w >= 0.0) and np.all(w <= 1.0)
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)

    def test_matches_numpy_mirror_bitwise(self):
        rng = np.random.default_rng(5)
        raw = rng.normal(size=(3, 4, 2))
        tape = gs.weights_from_logits([Tensor(raw[k]) for k in range(3)]).as_matrix()
        assert np.array_equal(tape, gs.softmax_k_np(raw))


class TestComposeLinear:
    def test_two_policy_example(self):
        # means 0 and 2, unit stds, half/half weights -> mean 1, variance 0.5
        g = gs.compose_linear([gauss([0.0], [0.0]), gauss([2.0], [0.0])], uniform_weights(2, 1))
        np.testing.assert_allclose(g.mean.data, 1.0, atol=1e-12)
        np.testing.assert_allclose(np.exp(2.0 * g.log_std.data), 0.5, atol=1e-12)

    def test_one_hot_returns_selected_component(self):
        w = gs.ActivationWeights.from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        g = gs.compose_linear(
            [gauss([1.0, 2.0], [0.1, 0.2]), gauss([-3.0, 4.0], [0.3, 0.4])], w
        )
        np.testing.assert_allclose(g.mean.data, [-3.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(g.log_std.data, [0.3, 0.2], atol=1e-12)

    def test_mean_matches_monte_carlo(self):
        # the composed action is a weighted sum of independent Gaussians, so
        # sample moments must converge to the closed form
        rng = np.random.default_rng(123)
        n = 400_000
        for _ in range(3):
            means = rng.uniform(0.5, 2.0, size=(2, 2))
            stds = rng.uniform(0.5, 1.5, size=(2, 2))
            w = gs.softmax_k_np(rng.normal(size=(2, 2)))
            m, ls = gs.compose_linear_np(means, np.log(stds), w)
            draws = means[:, None, :] + stds[:, None, :] * rng.standard_normal((2, n, 2))
            combined = (w[:, None, :] * draws).sum(axis=0)
            se_mean = combined.std(axis=0) / math.sqrt(n)
            assert np.all(np.abs(combined.mean(axis=0) - m) < 5.0 * se_mean + 1e-12)
            var = np.exp(2.0 * ls)
            se_var = combined.var(axis=0) * math.sqrt(2.0 / (n - 1))
            assert np.all(np.abs(combined.var(axis=0) - var) < 5.0 * se_var + 1e-12)

    def test_rejects_mismatched_counts(self):
        with pytest.raises(ad.ShapeMismatchError):
            gs.compose_linear([gauss([0.0], [0.0])], uniform_weights(2, 1))


class TestComposeProduct:
    def test_two_policy_example(self):
        # precisions add: w/sigma^2 sums to 1 -> variance 1; mean pulled to 1
        g = gs.compose_product([gauss([0.0], [0.0]), gauss([2.0], [0.0])], uniform_weights(2, 1))
        np.testing.assert_allclose(g.mean.data, 1.0, atol=1e-12)
        np.testing.assert_allclose(np.exp(2.0 * g.log_std.data), 1.0, atol=1e-12)

    def test_one_hot_returns_selected_component(self):
        w = gs.ActivationWeights.from_matrix(np.array([[1.0], [0.0]]))
        g = gs.compose_product([gauss([1.5], [-0.3]), gauss([-2.0], [0.7])], w)
        np.testing.assert_allclose(g.mean.data, [1.5], atol=1e-12)
        np.testing.assert_allclose(g.log_std.data, [-0.3], atol=1e-12)

    def test_identical_components_are_fixed_point(self):
        g0 = gauss([0.7, -0.2], [-0.5, 0.1])
        g = gs.compose_product([g0, gauss([0.7, -0.2], [-0.5, 0.1])], uniform_weights(2, 2))
        np.testing.assert_allclose(g.mean.data, g0.mean.data, atol=1e-12)
        np.testing.assert_allclose(g.log_std.data, g0.log_std.data, atol=1e-12)

    def test_moments_match_density_grid(self):
        # normalize prod_k N(x; m_k, s_k^2)^{w_k} on a dense grid and compare
        # numeric moments against the closed form
        rng = np.random.default_rng(77)
        for _ in range(4):
            k = 3
            means = rng.uniform(-2.0, 2.0, size=(k, 1))
            stds = rng.uniform(0.4, 1.6, size=(k, 1))
            w = gs.softmax_k_np(rng.normal(size=(k, 1)))
            m, ls = gs.compose_product_np(means, np.log(stds), w)
            x = np.linspace(means.min() - 10.0, means.max() + 10.0, 200_001)
            log_pdf = np.zeros_like(x)
            for j in range(k):
                log_pdf += w[j, 0] * (
                    -0.5 * ((x - means[j, 0]) / stds[j, 0]) ** 2 - math.log(stds[j, 0])
                )
            pdf = np.exp(log_pdf - log_pdf.max())
            pdf /= trapezoid(pdf, x)
            grid_mean = trapezoid(pdf * x, x)
            grid_var = trapezoid(pdf * (x - grid_mean) ** 2, x)
            assert abs(grid_mean - m[0]) < 1e-3
            assert abs(grid_var - np.exp(2.0 * ls[0])) < 1e-3


class TestComposeProperties:
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from([1, 2]))
    @settings(deadline=None, max_examples=60)
    def test_mean_stays_in_component_hull(self, seed, k, d):
        rng = np.random.default_rng(seed)
        means = rng.uniform(-3.0, 3.0, size=(k, d))
        log_stds = rng.uniform(-1.5, 0.5, size=(k, d))
        w = gs.softmax_k_np(rng.normal(size=(k, d)))
        for rule in (gs.compose_linear_np, gs.compose_product_np):
            m, _ = rule(means, log_stds, w)
            assert np.all(m >= means.min(axis=0) - 1e-12)
            assert np.all(m <= means.max(axis=0) + 1e-12)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
    @settings(deadline=None, max_examples=60)
    def test_variance_bounds(self, seed, k):
        rng = np.random.default_rng(seed)
        means = rng.uniform(-3.0, 3.0, size=(k, 2))
        log_stds = rng.uniform(-1.5, 0.5, size=(k, 2))
        variances = np.exp(2.0 * log_stds)
        w = gs.softmax_k_np(rng.normal(size=(k, 2)))

        _, ls_lin = gs.compose_linear_np(means, log_stds, w)
        var_lin = np.exp(2.0 * ls_lin)
        assert np.all(var_lin > 0.0)
        assert np.all(var_lin <= variances.max(axis=0) + 1e-12)

        _, ls_pro = gs.compose_product_np(means, log_stds, w)
        var_pro = np.exp(2.0 * ls_pro)
        assert np.all(var_pro >= variances.min(axis=0) - 1e-12)
        assert np.all(var_pro <= variances.max(axis=0) + 1e-12)

    def test_tape_matches_numpy_mirror_bitwise(self):
        rng = np.random.default_rng(31)
        means = rng.normal(size=(2, 5, 2))
        log_stds = rng.uniform(-1.0, 0.5, size=(2, 5, 2))
        w = gs.softmax_k_np(rng.normal(size=(2, 5, 2)))
        policies = [gauss(means[k], log_stds[k]) for k in range(2)]
        weights = gs.ActivationWeights.from_matrix(w)
        for tape_rule, np_rule in (
            (gs.compose_linear, gs.compose_linear_np),
            (gs.compose_product, gs.compose_product_np),
        ):
            g = tape_rule(policies, weights)
            m, ls = np_rule(means, log_stds, w)
            assert np.array_equal(g.mean.data, m)
            assert np.array_equal(g.log_std.data, ls)


class TestSquashedSampling:
    def test_zero_noise_standard_normal_log_prob(self):
        # at the mode of a unit Gaussian with a_max = 1 the log-density is
        # -0.5*log(2*pi) - log(1 + 1e-6) ~= -0.91894
        s = gs.sample_squashed(gauss([0.0], [0.0]), np.zeros(1), np.ones(1))
        expected = -0.5 * math.log(2.0 * math.pi) - math.log(1.0 + 1e-6)
        np.testing.assert_allclose(s.log_prob.data, expected, atol=1e-12)
        np.testing.assert_allclose(s.log_prob.data, -0.91894, atol=1e-5)
        np.testing.assert_array_equal(s.action.data, [0.0])

    def test_action_is_bounded_tanh_of_mean(self):
        a_max = np.array([4.0, 2.0])
        s = gs.sample_squashed(gauss([10.0, -0.5], [0.0, 0.0]), np.zeros(2), a_max)
        np.testing.assert_allclose(
            s.action.data, a_max * np.tanh([10.0, -0.5]), atol=1e-12
        )
        assert np.all(np.abs(s.action.data) <= a_max)

    def test_log_prob_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(9)
        g = gauss(rng.normal(size=(64, 2)), rng.uniform(-1, 0.5, size=(64, 2)))
        a_max = np.array([4.0, 4.0])
        s = gs.sample_squashed(g, rng.standard_normal((64, 2)), a_max)
        again = gs.log_prob_squashed(g, s.pre_squash.data, a_max)
        assert np.array_equal(again.data, s.log_prob.data)

    def test_tape_matches_numpy_mirror_bitwise(self):
        rng = np.random.default_rng(10)
        mean = rng.normal(size=(8, 2))
        log_std = rng.uniform(-1, 0.5, size=(8, 2))
        noise = rng.standard_normal((8, 2))
        a_max = np.array([4.0, 4.0])
        s = gs.sample_squashed(gauss(mean, log_std), noise, a_max)
        a_np, u_np, lp_np = gs.sample_squashed_np(mean, log_std, noise, a_max)
        assert np.array_equal(s.action.data, a_np)
        assert np.array_equal(s.pre_squash.data, u_np)
        assert np.array_equal(s.log_prob.data, lp_np)

    def test_log_prob_factorizes_over_dimensions(self):
        rng = np.random.default_rng(21)
        mean = rng.normal(size=(1, 2))
        log_std = rng.uniform(-1, 0.5, size=(1, 2))
        u = rng.normal(size=(1, 2))
        a_max = np.array([4.0, 2.0])
        joint = gs.log_prob_squashed_np(mean, log_std, u, a_max)
        parts = [
            gs.log_prob_squashed_np(mean[:, i : i + 1], log_std[:, i : i + 1], u[:, i : i + 1], a_max[i : i + 1])
            for i in range(2)
        ]
        np.testing.assert_allclose(joint, parts[0] + parts[1], atol=1e-12)

    def test_density_integrates_to_one(self):
        # change of variables back to the pre-squash axis; the 1e-6 floor in
        # the Jacobian only shaves off a negligible sliver of mass
        for m, sigma, a_max in [(0.0, 1.0, 1.0), (0.4, 0.7, 4.0), (-1.0, 1.5, 2.0)]:
            u = np.linspace(m - 9.0 * sigma, m + 9.0 * sigma, 1_000_001)
            lp = gs.log_prob_squashed_np(
                np.array([m]), np.array([math.log(sigma)]), u[:, None], np.array([a_max])
            )
            da_du = a_max * (1.0 - np.tanh(u) ** 2)
            total = trapezoid(np.exp(lp) * da_du, u)
            assert abs(total - 1.0) < 0.01

    def test_sharper_gaussian_has_higher_peak_log_prob(self):
        peaks = [
            gs.log_prob_squashed_np(
                np.array([0.3]), np.array([math.log(s)]), np.array([[0.3]]), np.array([1.0])
            )[0]
            for s in (1.0, 0.5, 0.25, 0.125)
        ]
        assert all(a < b for a, b in zip(peaks, peaks[1:]))

    def test_log_std_clamp_bounds_std(self):
        g = gauss([0.0, 0.0], [-50.0, 50.0])
        np.testing.assert_allclose(
            g.std.data, [math.exp(gs.LOG_STD_MIN), math.exp(gs.LOG_STD_MAX)], rtol=1e-12
        )


class TestGradients:
    def test_composed_moments_differentiable(self):
        rng = np.random.default_rng(13)
        for rule in (gs.compose_linear, gs.compose_product):
            params = {
                "m0": Tensor(rng.normal(size=2), requires_grad=True, name="m0"),
                "m1": Tensor(rng.normal(size=2), requires_grad=True, name="m1"),
                "ls0": Tensor(rng.uniform(-1, 0.5, size=2), requires_grad=True, name="ls0"),
                "ls1": Tensor(rng.uniform(-1, 0.5, size=2), requires_grad=True, name="ls1"),
                "lg0": Tensor(rng.normal(size=2), requires_grad=True, name="lg0"),
                "lg1": Tensor(rng.normal(size=2), requires_grad=True, name="lg1"),
            }

            def f():
                pols = [
                    gs.DiagGaussian(params["m0"], params["ls0"]),
                    gs.DiagGaussian(params["m1"], params["ls1"]),
                ]
                w = gs.weights_from_logits([params["lg0"], params["lg1"]])
                g = rule(pols, w)
                return ad.sum_(g.mean) + ad.sum_(g.log_std)

            assert ad.finite_diff_check(f, params, h=1e-6) < 1e-5

    def test_sample_log_prob_differentiable(self):
        rng = np.random.default_rng(17)
        noise = rng.standard_normal((3, 2))
        params = {
            "m": Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="m"),
            "ls": Tensor(rng.uniform(-1, 0.5, size=(3, 2)), requires_grad=True, name="ls"),
        }

        def f():
            s = gs.sample_squashed(
                gs.DiagGaussian(params["m"], params["ls"]), noise, np.array([4.0, 4.0])
            )
            return ad.mean_(s.log_prob)

        assert ad.finite_diff_check(f, params, h=1e-6) < 1e-5

    def test_weight_gradient_reaches_logits(self):
        lg0 = Tensor([0.2, -0.4], requires_grad=True, name="lg0")
        lg1 = Tensor([-0.1, 0.3], requires_grad=True, name="lg1")
        pols = [gauss([1.0, 1.0], [0.0, 0.0]), gauss([-1.0, -1.0], [0.0, 0.0])]
        g = gs.compose_linear(pols, gs.weights_from_logits([lg0, lg1]))
        grads = ad.backward(ad.sum_(g.mean))
        assert np.all(np.abs(grads["lg0"]) > 1e-6)
        assert np.all(np.abs(grads["lg1"]) > 1e-6)
