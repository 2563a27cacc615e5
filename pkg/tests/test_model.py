"""Network forward/backward: group statistics, determinism, gradients, calibration."""

import numpy as np
import pytest

from seva.core_math import DiagCovariance
from seva.model import (
    NORM_EPS,
    adaptable_layout,
    adaptable_params,
    batch_loss,
    build_network,
    calibrate_covariance,
    forward_features,
    forward_features_batch,
    forward_probs,
    forward_with_caches,
    grad_loss_wrt_adaptable,
    set_adaptable_params,
)


def reference_forward(net, x):
    """Loop-based re-implementation of the forward pass (independent route)."""
    v = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        h = np.array([float(layer.weight[i] @ v) for i in range(layer.channels)])
        c = layer.channels
        size = c // layer.groups
        out = np.empty(c)
        for g in range(layer.groups):
            sl = slice(g * size, (g + 1) * size)
            mean = sum(h[sl]) / size
            var = sum((h[sl] - mean) ** 2) / size
            out[sl] = (h[sl] - mean) / np.sqrt(var + NORM_EPS)
        v = np.tanh(layer.gamma * out + layer.beta)
    return v


# golden feature vector for build_network(seed=2024, d_in=6, d=8, C=4,
# n_layers=2, groups=2) at x = [0.5, -1, 0.25, 0, 1, -0.5], recorded from
# reference_forward before the vectorized path existed
GOLDEN_X = np.array([0.5, -1.0, 0.25, 0.0, 1.0, -0.5])
GOLDEN_FEATURE = np.array(
    [
        -0.9150595832966113,
        0.40570920767101504,
        0.8265151999619075,
        -0.04968389576228698,
        -0.8984764195350479,
        0.8635502052328715,
        -0.17797372033184977,
        0.3248021471513692,
    ]
)


@pytest.fixture
def net():
    return build_network(seed=2024, d_in=6, d=8, C=4, n_layers=2, groups=2)


class TestBuild:
    def test_same_seed_identical(self, net):
        other = build_network(seed=2024, d_in=6, d=8, C=4, n_layers=2, groups=2)
        for a, b in zip(net.layers, other.layers):
            np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(net.head.weights, other.head.weights)

    def test_different_seed_differs(self, net):
        other = build_network(seed=2025, d_in=6, d=8, C=4, n_layers=2, groups=2)
        assert not np.array_equal(net.layers[0].weight, other.layers[0].weight)

    def test_identity_extractor(self):
        ident = build_network(seed=1, d_in=5, d=5, C=3, n_layers=0, groups=1)
        x = np.array([0.1, -2.0, 3.0, 0.0, 1.0])
        np.testing.assert_array_equal(forward_features(ident, x), x)

    def test_identity_needs_matching_dims(self):
        with pytest.raises(ValueError, match="d_in == d"):
            build_network(seed=1, d_in=5, d=8, C=3, n_layers=0, groups=1)

    def test_groups_must_divide_channels(self):
        with pytest.raises(ValueError, match="does not divide"):
            build_network(seed=1, d_in=4, d=6, C=3, n_layers=1, groups=4)

    def test_initial_affine_is_identity(self, net):
        for layer in net.layers:
            np.testing.assert_array_equal(layer.gamma, np.ones(8))
            np.testing.assert_array_equal(layer.beta, np.zeros(8))

    def test_spec_round_trip(self, net):
        spec = net.spec()
        rebuilt = build_network(
            seed=spec["seed"],
            d_in=spec["d_in"],
            d=spec["feature_dim"],
            C=spec["n_classes"],
            n_layers=spec["n_layers"],
            groups=spec["groups"],
            activation=spec["activation"],
        )
        x = np.linspace(-1, 1, 6)
        np.testing.assert_array_equal(forward_features(net, x), forward_features(rebuilt, x))


class TestForward:
    def test_group_stats_are_normalized(self, net):
        x = np.array([0.3, -0.5, 1.0, 2.0, -1.0, 0.1])
        _, caches = forward_with_caches(net, x[None, :])
        normalized = caches[0].normalized[0].reshape(2, 4)
        np.testing.assert_allclose(normalized.mean(axis=1), 0.0, atol=1e-12)
        # variance of normalized values is var/(var+eps), just below 1
        assert (normalized.var(axis=1) <= 1.0 + 1e-12).all()
        assert (normalized.var(axis=1) >= 0.99).all()

    def test_matches_reference_forward(self, net):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.standard_normal(6) * 2
            np.testing.assert_allclose(
                forward_features(net, x), reference_forward(net, x), atol=1e-12
            )

    def test_golden_vector(self, net):
        np.testing.assert_allclose(forward_features(net, GOLDEN_X), GOLDEN_FEATURE, atol=1e-12)

    def test_zero_input_with_beta_path(self, net):
        # W @ 0 = 0, a constant group normalizes to 0, so the first block
        # emits tanh(beta); the reference loop confirms the composition
        beta = np.linspace(-0.5, 0.5, 8)
        net.layers[0].beta = beta.copy()
        x = np.zeros(6)
        feats = forward_features(net, x)
        np.testing.assert_allclose(feats, reference_forward(net, x), atol=1e-12)
        first_block = np.tanh(beta)
        v = np.array([float(net.layers[1].weight[i] @ first_block) for i in range(8)])
        assert not np.allclose(v, 0.0)

    def test_input_scale_invariance_of_normalized_output(self, net):
        # exact up to the norm epsilon: (h-m)/sqrt(v + eps/c^2) vs /sqrt(v + eps)
        x = np.random.default_rng(1).standard_normal(6)
        _, caches1 = forward_with_caches(net, x[None, :])
        _, caches7 = forward_with_caches(net, (7.0 * x)[None, :])
        np.testing.assert_allclose(
            caches7[0].normalized, caches1[0].normalized, rtol=0, atol=1e-3
        )

    def test_batch_equals_single(self, net):
        X = np.random.default_rng(2).standard_normal((64, 6))
        batched = forward_features_batch(net, X)
        singles = np.stack([forward_features(net, row) for row in X])
        np.testing.assert_allclose(batched, singles, atol=1e-12)

    def test_no_cross_sample_coupling(self, net):
        # changing the other rows of a batch never changes a sample's feature
        rng = np.random.default_rng(3)
        x = rng.standard_normal(6)
        a = forward_features_batch(net, np.stack([x, rng.standard_normal(6)]))
        b = forward_features_batch(net, np.stack([x, rng.standard_normal(6)]))
        np.testing.assert_array_equal(a[0], b[0])

    def test_repeated_calls_bit_identical(self, net):
        x = np.random.default_rng(4).standard_normal(6)
        np.testing.assert_array_equal(forward_features(net, x), forward_features(net, x))

    def test_forward_probs(self, net):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p = forward_probs(net, rng.standard_normal(6))
            assert abs(p.sum() - 1.0) <= 1e-12
            assert (p >= 0).all()

    def test_uniform_head_gives_uniform_probs(self, net):
        from seva.core_math import ClassifierHead

        net.head = ClassifierHead(np.tile(np.linspace(0, 1, 8), (4, 1)), np.zeros(4))
        p = forward_probs(net, np.random.default_rng(6).standard_normal(6))
        np.testing.assert_allclose(p, 0.25, atol=1e-12)


class TestParamVector:
    def test_layout(self, net):
        assert adaptable_layout(net) == (
            (0, "gamma", 8),
            (0, "beta", 8),
            (1, "gamma", 8),
            (1, "beta", 8),
        )

    def test_round_trip(self, net):
        vec = np.random.default_rng(7).standard_normal(32)
        set_adaptable_params(net, vec)
        np.testing.assert_array_equal(adaptable_params(net), vec)

    def test_set_rejects_wrong_shape(self, net):
        with pytest.raises(Exception, match="expected"):
            set_adaptable_params(net, np.zeros(31))


def fd_params_gradient(net, X, loss_kind, sigma, h_scale=1e-5):
    theta = adaptable_params(net)
    g = np.zeros_like(theta)
    for k in range(theta.size):
        h = h_scale * (1.0 + abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        set_adaptable_params(net, tp)
        fp = batch_loss(net, X, loss_kind, sigma)
        set_adaptable_params(net, tm)
        fm = batch_loss(net, X, loss_kind, sigma)
        g[k] = (fp - fm) / (2 * h)
    set_adaptable_params(net, theta)
    return g


class TestAdaptableGradients:
    def test_uniform_head_zero_gradient(self, net):
        from seva.core_math import ClassifierHead

        net.head = ClassifierHead(np.tile(np.linspace(0, 1, 8), (4, 1)), np.zeros(4))
        X = np.random.default_rng(8).standard_normal((3, 6))
        g = grad_loss_wrt_adaptable(net, X, "entropy")
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_zero_sigma_augmented_equals_entropy_gradient(self, net):
        X = np.random.default_rng(9).standard_normal((4, 6))
        g_ent = grad_loss_wrt_adaptable(net, X, "entropy")
        g_aug = grad_loss_wrt_adaptable(net, X, "augmented_entropy", DiagCovariance.zeros(8))
        np.testing.assert_allclose(g_aug, g_ent, atol=1e-9)

    @pytest.mark.parametrize("loss_kind", ["entropy", "augmented_entropy"])
    def test_fd_agreement_20_instances(self, loss_kind):
        rng = np.random.default_rng(10)
        for i in range(10):
            net = build_network(
                seed=100 + i, d_in=5, d=6, C=3, n_layers=int(rng.integers(1, 3)), groups=2
            )
            set_adaptable_params(
                net,
                adaptable_params(net) + 0.1 * rng.standard_normal(adaptable_params(net).size),
            )
            X = rng.standard_normal((int(rng.integers(1, 5)), 5))
            sigma = DiagCovariance(rng.uniform(0, 1.0, 6))
            g = grad_loss_wrt_adaptable(net, X, loss_kind, sigma)
            fd = fd_params_gradient(net, X, loss_kind, sigma)
            scale = max(np.abs(fd).max(), 1e-12)
            assert np.abs(g - fd).max() / scale <= 1e-4

    def test_empty_batch_rejected(self, net):
        with pytest.raises(ValueError, match="empty batch"):
            grad_loss_wrt_adaptable(net, np.zeros((0, 6)), "entropy")

    def test_unknown_loss_kind(self, net):
        with pytest.raises(ValueError, match="loss kind"):
            grad_loss_wrt_adaptable(net, np.zeros((1, 6)), "hinge")


class TestCalibration:
    def test_identical_inputs_zero_covariance(self, net):
        from seva.core_math import augmented_entropy, entropy, softmax

        X = np.tile(np.linspace(-1, 1, 6), (10, 1))
        sigma = calibrate_covariance(net, X, 1.5)
        assert (sigma.variances <= 1e-30).all()  # zero up to mean-rounding
        z = forward_features(net, X[0])
        lae = augmented_entropy(net.head, z, sigma)
        h = entropy(softmax(z @ net.head.weights.T + net.head.biases))
        assert lae == pytest.approx(h, abs=1e-9)  # degenerates to plain entropy

    def test_zero_scale(self, net):
        X = np.random.default_rng(11).standard_normal((16, 6))
        sigma = calibrate_covariance(net, X, 0.0)
        np.testing.assert_array_equal(sigma.variances, np.zeros(8))

    def test_scale_is_linear(self, net):
        X = np.random.default_rng(12).standard_normal((128, 6))
        s1 = calibrate_covariance(net, X, 1.0)
        s15 = calibrate_covariance(net, X, 1.5)
        np.testing.assert_allclose(s15.variances, 1.5 * s1.variances, rtol=1e-12)
        feats = forward_features_batch(net, X)
        np.testing.assert_allclose(s1.variances, feats.var(axis=0), rtol=1e-12)

    def test_too_few_inputs(self, net):
        with pytest.raises(ValueError, match="at least 2"):
            calibrate_covariance(net, np.zeros((1, 6)), 1.5)
