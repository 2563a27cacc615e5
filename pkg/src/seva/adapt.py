"""Online test-time adaptation engine.

One engine owns one network for one streaming pass. Per batch it predicts
(before any update), scores each sample with the method's loss, applies
the method's selection rule, and takes one SGD-with-momentum step on the
mean loss of the selected samples. Methods:

* ``seva``            -- augmented-entropy loss, selection by the same loss
* ``tent``            -- plain entropy loss on every sample, no selection
* ``entropy_select``  -- entropy loss, selection by an entropy threshold
* ``explicit_va``     -- entropy threshold selection, then ``rounds``
                         sequential update rounds, each training on one
                         fresh vicinal draw per selected sample
* ``no_adapt``        -- predictions only, parameters never change

Selection is strict: a sample trains only if its loss is < rho * ln(C).
Labels never enter the engine; ``run_stream`` is the evaluator that
compares the engine's pre-update predictions against the hidden labels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core_math import DiagCovariance, softmax_rows
from .model import (
    ToyNetwork,
    adaptable_params,
    backward_adaptable,
    calibrate_covariance,
    forward_with_caches,
    grad_augmented_entropy_wrt_feature_batch,
    grad_entropy_wrt_feature_batch,
    per_sample_loss,
    set_adaptable_params,
)
from .rng import substream

__all__ = [
    "METHOD_KINDS",
    "MethodConfig",
    "OptimizerState",
    "StepReport",
    "RunTrace",
    "Counters",
    "AdaptEngine",
    "select",
    "threshold_default",
    "sgd_momentum_step",
    "adapt_step",
    "run_stream",
]

METHOD_KINDS = ("seva", "tent", "entropy_select", "explicit_va", "no_adapt")


@dataclass(frozen=True)
class MethodConfig:
    """Method kind plus its hyperparameters.

    threshold_rho scales the selection boundary rho * ln(C); sigma_scale
    multiplies the calibrated feature variances; rounds is the number of
    explicit augmentation rounds (explicit_va only).
    """

    kind: str
    threshold_rho: float = 1.0
    sigma_scale: float = 1.5
    lr: float = 0.01
    momentum: float = 0.9
    rounds: int = 1

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind '{self.kind}'")
        if self.kind != "no_adapt" and not self.lr > 0:
            raise ValueError(f"lr must be > 0 for method '{self.kind}', got {self.lr}")
        if self.kind == "explicit_va" and self.rounds < 1:
            raise ValueError(f"explicit_va needs rounds >= 1, got {self.rounds}")
        if not self.threshold_rho > 0:
            raise ValueError(f"threshold_rho must be > 0, got {self.threshold_rho}")

    @property
    def needs_sigma(self) -> bool:
        return self.kind in ("seva", "explicit_va")

    @property
    def loss_kind(self) -> str:
        return "augmented_entropy" if self.kind == "seva" else "entropy"


@dataclass
class OptimizerState:
    """Momentum buffer, shaped like the flat adaptable-parameter vector."""

    velocity: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimizerState":
        return cls(np.zeros_like(params))


@dataclass
class Counters:
    """Per-sample work counters (calibration tracked separately)."""

    n_forward: int = 0
    n_backward: int = 0
    n_optimizer_steps: int = 0
    n_calibration_forward: int = 0


@dataclass
class StepReport:
    """Everything observable about one batch, predictions taken pre-update."""

    losses: np.ndarray
    selected: np.ndarray
    predicted: np.ndarray
    confidence: np.ndarray
    n_selected: int
    updated: bool
    step_wall_time: float


@dataclass
class RunTrace:
    """Evaluator-side record of a full streaming pass."""

    steps: list[StepReport] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)
    n_samples: int = 0
    n_correct: int = 0
    wall_time: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_samples if self.n_samples else 0.0

    def concat(self, attr: str) -> np.ndarray:
        return np.concatenate([getattr(s, attr) for s in self.steps])

    def concat_labels(self) -> np.ndarray:
        return np.concatenate(self.labels)


def select(loss_value: float, threshold: float) -> bool:
    """Train on a sample iff its loss is strictly below the boundary."""
    return bool(loss_value < threshold)


def threshold_default(C: int, rho: float) -> float:
    """Selection boundary rho * ln(C)."""
    if C < 1:
        raise ValueError(f"need C >= 1, got {C}")
    if not rho > 0:
        raise ValueError(f"need rho > 0, got {rho}")
    return rho * math.log(C)


def sgd_momentum_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
    lr: float,
    momentum: float,
) -> tuple[np.ndarray, OptimizerState]:
    """v <- momentum * v + g; theta <- theta - lr * v. No dampening, no Nesterov."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.velocity.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"velocity {state.velocity.shape}"
        )
    velocity = momentum * state.velocity + grads
    return params - lr * velocity, OptimizerState(velocity)


class AdaptEngine:
    """Owns one network, one optimizer state, and one method for a run."""

    def __init__(
        self,
        net: ToyNetwork,
        method: MethodConfig,
        sigma: DiagCovariance | None = None,
        seed: int = 0,
    ):
        self.net = net
        self.method = method
        self.sigma = sigma
        self.threshold = threshold_default(net.head.n_classes, method.threshold_rho)
        self.opt_state = OptimizerState.zeros_like(adaptable_params(net))
        self.counters = Counters()
        self._va_rng = substream(seed, "vicinal-rounds")

    def calibrate(self, inputs) -> DiagCovariance:
        """Fix the vicinal covariance from a calibration batch (pre-adaptation)."""
        inputs = np.asarray(inputs, dtype=np.float64)
        self.sigma = calibrate_covariance(self.net, inputs, self.method.sigma_scale)
        self.counters.n_calibration_forward += inputs.shape[0]
        return self.sigma

    def _require_sigma(self) -> DiagCovariance:
        if self.sigma is None:
            raise RuntimeError(f"method '{self.method.kind}' requires calibration first")
        return self.sigma

    def _optimizer_step(self, grads: np.ndarray) -> None:
        params = adaptable_params(self.net)
        new_params, self.opt_state = sgd_momentum_step(
            params, grads, self.opt_state, self.method.lr, self.method.momentum
        )
        set_adaptable_params(self.net, new_params)
        self.counters.n_optimizer_steps += 1

    def adapt_step(self, inputs) -> StepReport:
        """Predict, score, select, and (maybe) update on one batch."""
        X = np.asarray(inputs, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        t0 = time.perf_counter()
        kind = self.method.kind
        n = X.shape[0]

        feats, caches = forward_with_caches(self.net, X)
        self.counters.n_forward += n
        head = self.net.head
        probs = softmax_rows(feats @ head.weights.T + head.biases)
        predicted = probs.argmax(axis=1)
        confidence = probs.max(axis=1)

        if kind == "seva":
            losses = per_sample_loss(self.net, feats, "augmented_entropy", self._require_sigma())
        else:
            losses = per_sample_loss(self.net, feats, "entropy")

        if kind == "tent":
            selected = np.ones(n, dtype=bool)
        elif kind == "no_adapt":
            selected = np.zeros(n, dtype=bool)
        else:
            selected = losses < self.threshold

        n_selected = int(selected.sum())
        updated = False
        if kind in ("seva", "tent", "entropy_select") and n_selected > 0:
            if kind == "seva":
                d_feat = grad_augmented_entropy_wrt_feature_batch(head, feats, self.sigma)
            else:
                d_feat = grad_entropy_wrt_feature_batch(head, feats)
            d_feat[~selected] = 0.0
            grads = backward_adaptable(self.net, caches, d_feat / n_selected)
            self.counters.n_backward += n_selected
            self._optimizer_step(grads)
            updated = True
        elif kind == "explicit_va" and n_selected > 0:
            sigma = self._require_sigma()
            std = np.sqrt(sigma.variances)
            X_sel = X[selected]
            for _ in range(self.method.rounds):
                f_sel, c_sel = forward_with_caches(self.net, X_sel)
                self.counters.n_forward += n_selected
                noisy = f_sel + self._va_rng.standard_normal(f_sel.shape) * std[None, :]
                d_feat = grad_entropy_wrt_feature_batch(head, noisy)
                grads = backward_adaptable(self.net, c_sel, d_feat / n_selected)
                self.counters.n_backward += n_selected
                self._optimizer_step(grads)
            updated = True

        return StepReport(
            losses=losses,
            selected=selected,
            predicted=predicted,
            confidence=confidence,
            n_selected=n_selected,
            updated=updated,
            step_wall_time=time.perf_counter() - t0,
        )


def adapt_step(engine: AdaptEngine, batch) -> StepReport:
    return engine.adapt_step(batch)


def run_stream(engine: AdaptEngine, stream) -> RunTrace:
    """Single ordered pass; online accuracy from pre-update predictions.

    ``stream`` yields batches exposing ``inputs`` and ``labels``; only the
    inputs ever reach the engine.
    """
    if engine.method.needs_sigma and engine.sigma is None:
        raise RuntimeError(f"method '{engine.method.kind}' requires calibration before streaming")
    trace = RunTrace()
    t0 = time.perf_counter()
    for batch in stream:
        report = engine.adapt_step(batch.inputs)
        labels = np.asarray(batch.labels)
        trace.steps.append(report)
        trace.labels.append(labels)
        trace.n_samples += labels.shape[0]
        trace.n_correct += int((report.predicted == labels).sum())
    trace.wall_time = time.perf_counter() - t0
    return trace
