"""Central-difference verification of the analytic gradients.

Models are instantiated in float64; each parameter element is perturbed
by +/-step and the loss difference compared against the backward pass.
The error metric is |analytic - numeric| / max(|analytic|, |numeric|)
where that maximum exceeds 1e-6, absolute difference otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lidkit.nnet import (
    BnDnn,
    Classifier,
    bn_dnn_loss_and_grads,
    classifier_loss_and_grads,
    init_bn_dnn,
    init_classifier,
)

DEFAULT_STEP = 1e-5


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_tensor: dict[str, float]

    def ok(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error <= tolerance


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.abs(analytic - numeric) / np.where(scale > 1e-6, scale, 1.0)
    return rel


def finite_difference(loss_fn, params: dict[str, np.ndarray],
                      step: float = DEFAULT_STEP) -> dict[str, np.ndarray]:
    """Numeric gradients by in-place central differences."""
    out: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + step
            up = loss_fn()
            flat[idx] = saved - step
            down = loss_fn()
            flat[idx] = saved
            gflat[idx] = (up - down) / (2.0 * step)
        out[name] = grad
    return out


def compare_gradients(analytic: dict[str, np.ndarray],
                      numeric: dict[str, np.ndarray]) -> GradCheckResult:
    per_tensor = {name: float(relative_errors(analytic[name], numeric[name]).max())
                  for name in analytic}
    return GradCheckResult(max_relative_error=max(per_tensor.values()),
                           per_tensor=per_tensor)


def gradcheck_classifier(seed: int = 0, input_dim: int = 3, lstm_size: int = 4,
                         relu_size: int = 6, num_classes: int = 3,
                         block_length: int = 5, batch: int = 2,
                         step: float = DEFAULT_STEP) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    model = init_classifier(rng, input_dim, lstm_size, relu_size, num_classes,
                            dtype=np.float64)
    blocks = rng.normal(size=(batch, block_length, input_dim))
    targets = rng.integers(0, num_classes, size=batch)

    _, analytic = classifier_loss_and_grads(model, blocks, targets)
    numeric = finite_difference(
        lambda: classifier_loss_and_grads(model, blocks, targets)[0],
        model.parameters(), step)
    return compare_gradients(analytic, numeric)


def gradcheck_bn_dnn(seed: int = 0, input_dim: int = 6,
                     hidden_sizes: tuple[int, ...] = (5, 4), bottleneck: int = 3,
                     targets: int = 4, batch: int = 3,
                     step: float = DEFAULT_STEP) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    dnn = init_bn_dnn(rng, input_dim, hidden_sizes, bottleneck, targets,
                      dtype=np.float64)
    x = rng.normal(size=(batch, input_dim))
    y = rng.integers(0, targets, size=batch)

    _, analytic = bn_dnn_loss_and_grads(dnn, x, y)
    numeric = finite_difference(lambda: bn_dnn_loss_and_grads(dnn, x, y)[0],
                                dnn.parameters(), step)
    return compare_gradients(analytic, numeric)
