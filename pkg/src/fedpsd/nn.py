"""Dense feed-forward networks with exact analytic gradients.

Everything here is plain float64 numpy. A model is a list of
(weight, bias) pairs with ReLU on hidden layers and raw logits at the
output; the backward pass is hand-derived and checkable against
central finite differences (``finite_diff_check``).

Loss conventions: batch losses are means over the batch, and the
logit gradients returned by the loss helpers are already divided by
the batch size, so ``backprop`` output feeds straight into
``sgd_step`` without rescaling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor applied to probabilities before taking logs.
PROB_EPS = 1e-12

# Stream tag for model initialisation; keeps init draws independent of
# every other consumer of the same experiment seed.
_INIT_STREAM = 11


class ContractViolation(ValueError):
    """An interface precondition was broken (shape or domain mismatch)."""


@dataclass
class ModelParams:
    """Parameters of a dense network.

    ``weights[i]`` has shape (out_i, in_i) and ``biases[i]`` shape
    (out_i,); adjacent layers must chain (in_{i+1} == out_i). All
    arrays are float64.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractViolation("model needs one (weight, bias) pair per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ContractViolation(
                    f"layer {i}: weight {w.shape} and bias {b.shape} do not agree"
                )
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ContractViolation(
                    f"layer {i}: input dim {w.shape[1]} does not chain with "
                    f"layer {i - 1} output dim {self.weights[i - 1].shape[0]}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return self.biases[-1].shape[0]

    def layer_sizes(self) -> list[int]:
        """[input_dim, hidden..., output_dim]."""
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (weights then bias per layer)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_model(layer_sizes: list[int], seed: int) -> ModelParams:
    """He-initialised dense net for the given [in, hidden..., out] sizes.

    Deterministic in ``seed``; the draw stream is namespaced so the
    same experiment seed can be reused elsewhere without collisions.
    """
    if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
        raise ContractViolation(f"bad layer sizes {layer_sizes}")
    rng = np.random.default_rng([seed, _INIT_STREAM])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * scale)
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def _forward_cached(model: ModelParams, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning logits and the input activation of each layer."""
    acts = [batch]
    h = batch
    last = model.num_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        h = z if i == last else np.maximum(z, 0.0)
        if i != last:
            acts.append(h)
    return h, acts


def forward(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits for a (B, d) float64 batch; shape (B, num_classes)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ContractViolation(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != model.weights[0].shape[1]:
        raise ContractViolation(
            f"layer 0 expects input dim {model.weights[0].shape[1]}, "
            f"got {batch.shape[1]}"
        )
    logits, _ = _forward_cached(model, batch)
    return logits


def backprop(model: ModelParams, batch: np.ndarray, dlogits: np.ndarray) -> ModelParams:
    """Exact parameter gradients given d(loss)/d(logits).

    ``dlogits`` must carry any batch-mean factor already; the result
    has the same shapes as ``model`` and is suitable for ``sgd_step``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    logits, acts = _forward_cached(model, batch)
    return _backprop_from_acts(model, acts, np.asarray(dlogits, dtype=np.float64),
                               expect_shape=logits.shape)


def _backprop_from_acts(
    model: ModelParams,
    acts: list[np.ndarray],
    dlogits: np.ndarray,
    expect_shape: tuple[int, ...],
) -> ModelParams:
    if dlogits.shape != expect_shape:
        raise ContractViolation(
            f"dlogits shape {dlogits.shape} does not match logits shape {expect_shape}"
        )
    d_weights = [np.empty(0)] * model.num_layers
    d_biases = [np.empty(0)] * model.num_layers
    delta = dlogits
    for i in range(model.num_layers - 1, -1, -1):
        a = acts[i]
        d_weights[i] = delta.T @ a
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            # ReLU mask from post-activation: a > 0 iff pre-activation > 0.
            delta = (delta @ model.weights[i]) * (a > 0.0)
    return ModelParams(d_weights, d_biases)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractViolation(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its logit gradient.

    Returns (loss, dlogits) with dlogits = (softmax(logits) - onehot) / B,
    computed through log-sum-exp for stability.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = float(-log_p[np.arange(b), labels].mean())
    dlogits = (np.exp(log_p) - one_hot(labels, logits.shape[1])) / b
    return loss, dlogits


def _check_prob_vector(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ContractViolation(f"{name} must be 1-D, got shape {v.shape}")
    if v.size and v.min() < 0.0:
        raise ContractViolation(f"{name} has negative entries (min {v.min()})")
    s = v.sum()
    if abs(s - 1.0) > 1e-9:
        raise ContractViolation(f"{name} sums to {s!r}, expected 1 within 1e-9")
    return v


def kl_divergence(target: np.ndarray, pred: np.ndarray) -> float:
    """KL(target || pred) in nats over two probability vectors.

    Zero-probability target entries contribute nothing; pred is floored
    at PROB_EPS before the log. The result is clamped at zero to absorb
    rounding, since the true divergence is never negative.
    """
    target = _check_prob_vector("target", target)
    pred = _check_prob_vector("pred", pred)
    if target.shape != pred.shape:
        raise ContractViolation(
            f"target shape {target.shape} != pred shape {pred.shape}"
        )
    mask = target > 0.0
    p = np.clip(pred[mask], PROB_EPS, None)
    val = float(np.sum(target[mask] * (np.log(target[mask]) - np.log(p))))
    return max(val, 0.0)


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the
    lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ContractViolation(f"logits must be non-empty 2-D, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ContractViolation(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class OptimizerState:
    """Classical-momentum SGD state: one velocity buffer per parameter array."""

    velocities: list[np.ndarray]
    learning_rate: float
    momentum: float
    weight_decay: float


def init_optimizer(
    model: ModelParams,
    learning_rate: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> OptimizerState:
    if learning_rate < 0 or momentum < 0 or weight_decay < 0:
        raise ContractViolation("optimizer hyperparameters must be non-negative")
    return OptimizerState(
        velocities=[np.zeros_like(a) for a in model.arrays()],
        learning_rate=learning_rate,
        momentum=momentum,
        weight_decay=weight_decay,
    )


def sgd_step(
    model: ModelParams, grads: ModelParams, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One classical-momentum update.

    v <- momentum * v + (grad + weight_decay * param)
    param <- param - lr * v

    Weight decay is applied to every parameter array, biases included.
    Raises on non-finite gradients so a poisoned round aborts loudly
    instead of propagating NaNs into the global model.
    """
    p_arrays = model.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(
        p.shape != g.shape for p, g in zip(p_arrays, g_arrays)
    ):
        raise ContractViolation("gradient shapes do not match model shapes")
    new_params: list[np.ndarray] = []
    new_vel: list[np.ndarray] = []
    for i, (p, g, v) in enumerate(zip(p_arrays, g_arrays, state.velocities)):
        if not np.isfinite(g).all():
            kind = "weight" if i % 2 == 0 else "bias"
            raise FloatingPointError(
                f"non-finite gradient in layer {i // 2} {kind}"
            )
        nv = state.momentum * v + (g + state.weight_decay * p)
        new_vel.append(nv)
        new_params.append(p - state.learning_rate * nv)
    out = ModelParams(new_params[0::2], new_params[1::2])
    return out, OptimizerState(new_vel, state.learning_rate, state.momentum, state.weight_decay)


def finite_diff_check(
    model: ModelParams,
    batch: np.ndarray,
    loss_fn,
    param_term=None,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(logits) -> (loss, dlogits)`` defines the data-dependent
    part of the objective; ``param_term(model) -> (loss, grads)`` is an
    optional extra term that acts on parameters directly (a proximal
    penalty, say). Relative error is |analytic - numeric| / max(1, |numeric|),
    maximised over every parameter coordinate.
    """
    batch = np.asarray(batch, dtype=np.float64)
    _, dlogits = loss_fn(forward(model, batch))
    analytic = backprop(model, batch, dlogits)
    if param_term is not None:
        _, extra = param_term(model)
        analytic = ModelParams(
            [a + e for a, e in zip(analytic.weights, extra.weights)],
            [a + e for a, e in zip(analytic.biases, extra.biases)],
        )

    def total_loss(m: ModelParams) -> float:
        val = loss_fn(forward(m, batch))[0]
        if param_term is not None:
            val += param_term(m)[0]
        return val

    worst = 0.0
    probe = model.copy()
    for arr, g_arr in zip(probe.arrays(), analytic.arrays()):
        flat = arr.reshape(-1)
        g_flat = g_arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = total_loss(probe)
            flat[j] = orig - step
            down = total_loss(probe)
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(g_flat[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
