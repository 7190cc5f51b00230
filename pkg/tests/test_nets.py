"""nn substrate: forward/backward oracles, AdamW, KL, reparam, rng, checkpoints."""

import math

import numpy as np
import pytest

from manex.errors import DomainError, NumericError, ShapeError, StateError
from manex.nets import (
    AdamW,
    DenseNet,
    kl_diag_gaussian_to_standard,
    load_param_container,
    reparam_sample,
    save_param_container,
)
from manex.rng import RngStream

from helpers import finite_diff_param_grads, max_rel_err


def _straight_line_forward(ws, bs, x):
    # independent oracle: explicit loops, no shared code with DenseNet
    h = list(x)
    for li, (W, b) in enumerate(zip(ws, bs)):
        nxt = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += h[i] * W[i, j]
            if li < len(ws) - 1:
                s = s if s > 0 else 0.0
            nxt.append(s)
        h = nxt
    return np.array(h)


class TestForward:
    def test_zero_params_zero_output(self):
        net = DenseNet([3, 4, 2])
        assert np.array_equal(net.forward(np.array([1.0, -2.0, 3.0])), np.zeros(2))

    def test_identity_single_layer(self):
        net = DenseNet([2, 2])
        net.weights[0][...] = np.eye(2)
        out = net.forward(np.array([1.0, 2.0]))
        assert np.array_equal(out, np.array([1.0, 2.0]))

    def test_golden_forward(self):
        net = DenseNet([3, 5, 2], RngStream(0, "golden-net"), name="g")
        x = np.array([0.3, -0.7, 1.1])
        out = net.forward(x)
        ref = _straight_line_forward(net.weights, net.biases, x)
        assert np.allclose(out, ref, atol=1e-14)
        # frozen from the oracle above
        assert np.allclose(out, [-0.9200293548707313, 0.6992180852315032], atol=1e-12)

    def test_width_mismatch(self):
        net = DenseNet([3, 2])
        with pytest.raises(ShapeError):
            net.forward(np.zeros(4))

    def test_batched_matches_single(self):
        net = DenseNet([3, 6, 2], RngStream(3, "b"))
        xs = RngStream(4, "x").normal((5, 3))
        batched = net.forward(xs)
        singles = np.stack([net.forward(x) for x in xs])
        assert np.allclose(batched, singles, atol=1e-14)


class TestBackward:
    def test_backward_before_forward_raises(self):
        net = DenseNet([2, 2])
        with pytest.raises(StateError):
            net.backward(np.zeros(2))

    def test_zero_upstream_zero_grads(self):
        net = DenseNet([3, 4, 2], RngStream(1, "z"))
        net.forward(np.array([0.5, 0.5, 0.5]))
        grads, dx = net.backward(np.zeros(2))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)
        assert np.array_equal(dx, np.zeros(3))

    def test_scalar_linear_net(self):
        # f(x) = w*x, upstream 1 -> dL/dw = x, dL/dx = w
        net = DenseNet([1, 1])
        net.weights[0][...] = 2.5
        net.forward(np.array([3.0]))
        grads, dx = net.backward(np.array([1.0]))
        assert grads[0][0, 0] == 3.0
        assert grads[1][0] == 1.0
        assert dx[0] == 2.5

    @pytest.mark.parametrize("widths", [[2, 3, 1], [3, 5, 5, 2], [4, 8, 8, 8, 3]])
    def test_finite_difference_oracle(self, widths):
        net = DenseNet(widths, RngStream(11, f"fd{len(widths)}"))
        x = RngStream(12, "fdx").normal(widths[0])
        w = RngStream(13, "fdw").normal(widths[-1])

        def loss():
            return float(net.forward(x) @ w)

        loss()
        analytic, _ = net.backward(w)
        numeric = finite_diff_param_grads(loss, net.parameters())
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_input_gradient_chains(self):
        # d(sum f(x))/dx by finite differences
        net = DenseNet([3, 4, 2], RngStream(21, "chain"))
        x = np.array([0.2, -0.4, 0.9])
        net.forward(x)
        _, dx = net.backward(np.ones(2))
        h = 1e-6
        num = np.zeros(3)
        for i in range(3):
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            num[i] = (net.forward(xp).sum() - net.forward(xm).sum()) / (2 * h)
        assert np.max(np.abs(dx - num)) < 1e-6


class TestAdamW:
    def test_decay_only_step(self):
        p = np.array([2.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step([np.zeros(1)])
        assert np.isclose(p[0], 2.0 * (1 - 0.1 * 0.5))

    def test_first_step_magnitude(self):
        p = np.array([1.0])
        opt = AdamW([p], lr=1e-3, weight_decay=0.0)
        opt.step([np.array([0.37])])
        # bias-corrected first step is lr * sign(g) up to the eps guard
        assert np.isclose(1.0 - p[0], 1e-3, rtol=1e-4)

    def test_five_step_scalar_golden(self):
        p = np.array([1.0])
        opt = AdamW([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
        grads = [0.5, -0.3, 0.2, 0.1, -0.4]
        # frozen from an independent straight-line scalar loop
        expected = [
            0.899000002,
            0.8789511989397751,
            0.8433294795899422,
            0.8050780551236283,
            0.8071193462703399,
        ]
        for g, e in zip(grads, expected):
            opt.step([np.array([g])])
            assert np.isclose(p[0], e, rtol=0, atol=1e-12)
        assert opt.t == 5

    def test_nonfinite_grad_names_param(self):
        p = np.array([1.0])
        opt = AdamW([p], names=["head/W0"])
        with pytest.raises(NumericError, match="head/W0"):
            opt.step([np.array([np.nan])])

    def test_finite_params_after_steps(self):
        rng = RngStream(5, "opt")
        net = DenseNet([3, 8, 2], rng)
        opt = AdamW(net.parameters(), lr=1e-2)
        for i in range(50):
            x = rng.normal(3)
            out = net.forward(x)
            grads, _ = net.backward(2 * out)
            opt.step(grads)
        assert all(np.all(np.isfinite(p)) for p in net.parameters())


class TestKl:
    def test_zero_at_standard(self):
        for d in (1, 4, 16):
            assert kl_diag_gaussian_to_standard(np.zeros(d), np.ones(d)) == 0.0

    def test_unit_mean(self):
        assert np.isclose(kl_diag_gaussian_to_standard(np.array([1.0]), np.array([1.0])), 0.5)

    def test_sigma_two(self):
        expected = 0.5 * (4 - 1 - math.log(4.0))
        got = kl_diag_gaussian_to_standard(np.array([0.0]), np.array([2.0]))
        assert np.isclose(got, expected, atol=1e-12)
        assert np.isclose(got, 0.8068528194400547, atol=1e-10)

    def test_nonpositive_sigma_raises(self):
        with pytest.raises(DomainError):
            kl_diag_gaussian_to_standard(np.zeros(2), np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            kl_diag_gaussian_to_standard(np.zeros(1), np.array([-1.0]))

    def test_nonnegative_and_zero_iff_standard(self):
        rng = RngStream(9, "klprop")
        for _ in range(200):
            mu = rng.normal(8) * 3
            sigma = np.exp(rng.normal(8))
            v = kl_diag_gaussian_to_standard(mu, sigma)
            assert v >= 0.0
            if v == 0.0:
                assert np.allclose(mu, 0) and np.allclose(sigma, 1)


class TestReparam:
    def test_alpha_zero_exact(self):
        rng = RngStream(1, "r")
        mu = np.array([0.3, -0.2])
        z = reparam_sample(mu, np.array([1.0, 5.0]), 0.0, rng)
        assert np.array_equal(z, mu)

    def test_sigma_zero_exact(self):
        rng = RngStream(1, "r")
        mu = np.array([0.3, -0.2])
        z = reparam_sample(mu, np.zeros(2), 3.0, rng)
        assert np.array_equal(z, mu)

    def test_fixed_seed_scaling(self):
        # z = 2 * (first normal draws of the stream) when mu=0, sigma=1
        z = reparam_sample(np.zeros(3), np.ones(3), 2.0, RngStream(7, "reparam"))
        draws = RngStream(7, "reparam").normal(3)
        assert np.array_equal(z, 2.0 * draws)
        assert np.allclose(
            z,
            2.0
            * np.array([-1.663769681201812, -0.4703805202837059, -0.5731698093458185]),
            atol=1e-12,
        )

    def test_negative_alpha_raises(self):
        with pytest.raises(DomainError):
            reparam_sample(np.zeros(1), np.ones(1), -0.1, RngStream(0, "r"))


class TestRngStream:
    def test_same_seed_same_draws(self):
        a = RngStream(123, "x").normal(10)
        b = RngStream(123, "x").normal(10)
        assert np.array_equal(a, b)

    def test_names_are_independent(self):
        a = RngStream(123, "x").normal(10)
        b = RngStream(123, "y").normal(10)
        assert not np.array_equal(a, b)

    def test_child_paths_stable(self):
        a = RngStream(5).child("train/il").normal(4)
        b = RngStream(5, "root/train/il").normal(4)
        assert np.array_equal(a, b)


class TestParamContainer:
    def test_roundtrip(self, tmp_path):
        params = {
            "net/W0": RngStream(2, "ckpt").normal((3, 4)),
            "net/b0": np.arange(4.0),
        }
        path = str(tmp_path / "ckpt.json")
        save_param_container(path, params, {"note": "t"})
        loaded, meta = load_param_container(path)
        assert meta["note"] == "t"
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k], params[k])

    def test_version_check(self, tmp_path):
        path = str(tmp_path / "bad.json")
        with open(path, "w") as f:
            f.write('{"format_version": 99, "params": {}}')
        with pytest.raises(StateError):
            load_param_container(path)
