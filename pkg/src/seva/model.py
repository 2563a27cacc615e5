"""A small frozen feature extractor whose only trainable knobs are the
scale/shift parameters of its per-sample group-normalization blocks.

Layer l applies a frozen linear map, group normalization over its output
channels (statistics per sample, so batch size 1 is well defined and
batching never changes a sample's feature), a learnable per-channel affine
(gamma, beta), and a fixed smooth activation. The final activation output
is the feature fed to the classifier head, and is also the tap point for
covariance calibration.

Layer norm is the one-group special case. The activation is tanh so that
finite-difference gradient checks are free of kink noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    ClassifierHead,
    DiagCovariance,
    DimensionMismatch,
    grad_augmented_entropy_wrt_feature_batch,
    grad_entropy_wrt_feature_batch,
    augmented_entropy_batch,
    entropy_from_logits,
    softmax_rows,
)
from .rng import substream

__all__ = [
    "NORM_EPS",
    "NormAffineLayer",
    "ToyNetwork",
    "LayerCache",
    "build_network",
    "forward_features",
    "forward_features_batch",
    "forward_probs",
    "forward_with_caches",
    "backward_adaptable",
    "adaptable_params",
    "set_adaptable_params",
    "adaptable_layout",
    "per_sample_loss",
    "batch_loss",
    "grad_loss_wrt_adaptable",
    "calibrate_covariance",
]

NORM_EPS = 1e-5

LOSS_KINDS = ("entropy", "augmented_entropy")

# activation -> (f, derivative expressed through the activation output)
_ACTIVATIONS = {
    "tanh": (np.tanh, lambda out: 1.0 - out * out),
}


@dataclass
class NormAffineLayer:
    """Frozen linear map + group norm with adaptable per-channel affine."""

    weight: np.ndarray  # (c_out, c_in), frozen after construction
    groups: int
    gamma: np.ndarray  # (c_out,)
    beta: np.ndarray  # (c_out,)

    @property
    def channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class ToyNetwork:
    layers: list[NormAffineLayer]
    head: ClassifierHead
    d_in: int
    feature_dim: int
    activation: str = "tanh"
    seed: int = 0

    def spec(self) -> dict:
        """Construction parameters, sufficient to rebuild the frozen parts."""
        return {
            "seed": self.seed,
            "d_in": self.d_in,
            "feature_dim": self.feature_dim,
            "n_classes": self.head.n_classes,
            "n_layers": len(self.layers),
            "groups": self.layers[0].groups if self.layers else 1,
            "activation": self.activation,
        }


@dataclass
class LayerCache:
    """Per-layer forward intermediates needed by the backward pass."""

    normalized: np.ndarray  # (n, c) group-normalized pre-affine values
    inv_std: np.ndarray  # (n, groups) 1/sqrt(var + eps)
    output: np.ndarray  # (n, c) post-activation values


def build_network(
    seed: int,
    d_in: int,
    d: int,
    C: int,
    n_layers: int,
    groups: int,
    activation: str = "tanh",
) -> ToyNetwork:
    """Seeded network with frozen scaled-Gaussian weights, gamma=1, beta=0.

    Hidden widths all equal the feature dimension d; ``groups`` must divide
    d. ``n_layers = 0`` gives the identity extractor and requires d_in = d.
    """
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation '{activation}'")
    if d_in < 1 or d < 1 or C < 1:
        raise ValueError(f"invalid dims d_in={d_in}, d={d}, C={C}")
    if n_layers == 0 and d_in != d:
        raise ValueError(f"identity extractor needs d_in == d, got {d_in} != {d}")
    if n_layers > 0 and d % groups != 0:
        raise ValueError(f"groups={groups} does not divide channel count {d}")
    layers = []
    c_in = d_in
    for l in range(n_layers):
        gen = substream(seed, "layer", l)
        w = gen.standard_normal((d, c_in)) / np.sqrt(c_in)
        layers.append(NormAffineLayer(w, groups, np.ones(d), np.zeros(d)))
        c_in = d
    gen = substream(seed, "head")
    head = ClassifierHead(gen.standard_normal((C, d)) / np.sqrt(d), np.zeros(C))
    return ToyNetwork(layers, head, d_in, d, activation, seed)


def _group_stats(h: np.ndarray, groups: int) -> tuple[np.ndarray, np.ndarray]:
    n, c = h.shape
    grouped = h.reshape(n, groups, c // groups)
    mean = grouped.mean(axis=2)
    var = grouped.var(axis=2)  # population variance, per sample and group
    return mean, var


def _expand(per_group: np.ndarray, groups: int, channels: int) -> np.ndarray:
    return np.repeat(per_group, channels // groups, axis=1)


def _forward(net: ToyNetwork, X: np.ndarray, keep_caches: bool):
    act, _ = _ACTIVATIONS[net.activation]
    caches: list[LayerCache] = []
    v = X
    for layer in net.layers:
        h = v @ layer.weight.T
        mean, var = _group_stats(h, layer.groups)
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        normalized = (h - _expand(mean, layer.groups, layer.channels)) * _expand(
            inv, layer.groups, layer.channels
        )
        v = act(layer.gamma * normalized + layer.beta)
        if keep_caches:
            caches.append(LayerCache(normalized=normalized, inv_std=inv, output=v))
    return v, caches


def _check_input(net: ToyNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise DimensionMismatch(
            f"input batch has shape {X.shape}, network expects (n, {net.d_in})"
        )
    return X


def forward_features_batch(net: ToyNetwork, X) -> np.ndarray:
    """(n, d) features for an (n, d_in) input batch."""
    feats, _ = _forward(net, _check_input(net, X), keep_caches=False)
    return feats


def forward_features(net: ToyNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single input vector, got shape {x.shape}")
    return forward_features_batch(net, x[None, :])[0]


def forward_probs(net: ToyNetwork, x) -> np.ndarray:
    """Class probabilities for a single input."""
    z = forward_features(net, x)
    return softmax_rows((z @ net.head.weights.T + net.head.biases)[None, :])[0]


def forward_with_caches(net: ToyNetwork, X) -> tuple[np.ndarray, list[LayerCache]]:
    """Features plus the per-layer intermediates the backward pass consumes."""
    X = _check_input(net, X)
    feats, caches = _forward(net, X, keep_caches=True)
    return feats, caches


def backward_adaptable(net: ToyNetwork, caches: list[LayerCache], d_feature: np.ndarray) -> np.ndarray:
    """Backpropagate per-sample feature gradients to the flat (gamma, beta) vector.

    ``d_feature`` is (n, d): the gradient of the scalar loss with respect to
    each sample's feature. Rows may be zero for samples excluded from the loss.
    """
    _, d_act = _ACTIVATIONS[net.activation]
    grads: list[np.ndarray] = []
    delta = np.asarray(d_feature, dtype=np.float64)
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        g = layer.groups
        c = layer.channels
        d_pre = delta * d_act(cache.output)
        d_gamma = (d_pre * cache.normalized).sum(axis=0)
        d_beta = d_pre.sum(axis=0)
        grads.append(d_beta)
        grads.append(d_gamma)
        d_norm = d_pre * layer.gamma
        # group-norm backward: dh = inv * (dn - mean(dn) - nh * mean(dn * nh))
        n = delta.shape[0]
        dn = d_norm.reshape(n, g, c // g)
        nh = cache.normalized.reshape(n, g, c // g)
        inv = cache.inv_std[:, :, None]
        dh = inv * (dn - dn.mean(axis=2, keepdims=True) - nh * (dn * nh).mean(axis=2, keepdims=True))
        delta = dh.reshape(n, c) @ layer.weight
    grads.reverse()
    return np.concatenate(grads) if grads else np.zeros(0)


def adaptable_params(net: ToyNetwork) -> np.ndarray:
    """Flat copy of all (gamma, beta) entries, layer by layer."""
    parts = []
    for layer in net.layers:
        parts.append(layer.gamma)
        parts.append(layer.beta)
    return np.concatenate(parts) if parts else np.zeros(0)


def set_adaptable_params(net: ToyNetwork, vec) -> None:
    vec = np.asarray(vec, dtype=np.float64)
    expected = sum(2 * layer.channels for layer in net.layers)
    if vec.shape != (expected,):
        raise DimensionMismatch(f"parameter vector has shape {vec.shape}, expected ({expected},)")
    pos = 0
    for layer in net.layers:
        c = layer.channels
        layer.gamma = vec[pos : pos + c].copy()
        layer.beta = vec[pos + c : pos + 2 * c].copy()
        pos += 2 * c


def adaptable_layout(net: ToyNetwork) -> tuple[tuple[int, str, int], ...]:
    """(layer index, name, size) triples describing the flat vector layout."""
    layout = []
    for idx, layer in enumerate(net.layers):
        layout.append((idx, "gamma", layer.channels))
        layout.append((idx, "beta", layer.channels))
    return tuple(layout)


def _check_loss_kind(loss_kind: str, sigma: DiagCovariance | None) -> None:
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind '{loss_kind}'")
    if loss_kind == "augmented_entropy" and sigma is None:
        raise ValueError("augmented_entropy loss needs a covariance")


def per_sample_loss(
    net: ToyNetwork,
    features: np.ndarray,
    loss_kind: str,
    sigma: DiagCovariance | None = None,
) -> np.ndarray:
    """Per-sample loss values evaluated at already-computed features."""
    _check_loss_kind(loss_kind, sigma)
    if loss_kind == "entropy":
        return entropy_from_logits(features @ net.head.weights.T + net.head.biases)
    return augmented_entropy_batch(net.head, features, sigma)


def batch_loss(
    net: ToyNetwork,
    X,
    loss_kind: str,
    sigma: DiagCovariance | None = None,
    feature_noise: np.ndarray | None = None,
) -> float:
    """Mean per-sample loss over the batch, at the current parameters."""
    feats = forward_features_batch(net, X)
    if feature_noise is not None:
        feats = feats + feature_noise
    return float(np.mean(per_sample_loss(net, feats, loss_kind, sigma)))


def grad_loss_wrt_adaptable(
    net: ToyNetwork,
    X,
    loss_kind: str,
    sigma: DiagCovariance | None = None,
    feature_noise: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the batch-mean loss w.r.t. all (gamma, beta) parameters.

    ``feature_noise``, when given, is added to the features before the loss
    (the explicit-augmentation baseline trains through the perturbed point).
    """
    X = _check_input(net, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    _check_loss_kind(loss_kind, sigma)
    feats, caches = forward_with_caches(net, X)
    if feature_noise is not None:
        feats = feats + feature_noise
    if loss_kind == "entropy":
        d_feat = grad_entropy_wrt_feature_batch(net.head, feats)
    else:
        d_feat = grad_augmented_entropy_wrt_feature_batch(net.head, feats, sigma)
    return backward_adaptable(net, caches, d_feat / X.shape[0])


def calibrate_covariance(net: ToyNetwork, calibration_inputs, scale: float) -> DiagCovariance:
    """Per-dimension feature variance over a calibration batch, times ``scale``.

    Fixed for the whole run once computed; identical inputs or scale = 0
    give the zero covariance, collapsing the augmented loss to plain entropy.
    """
    X = _check_input(net, calibration_inputs)
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 calibration inputs, got {X.shape[0]}")
    feats = forward_features_batch(net, X)
    return DiagCovariance(float(scale) * feats.var(axis=0))
