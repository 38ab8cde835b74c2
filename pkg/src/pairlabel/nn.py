"""Minimal dense-network engine.

Forward/backward passes for stacks of fully connected layers with ReLU,
tanh, softmax or identity activations, inverted dropout between layers,
and plain SGD updates. Data is column-major: one sample per column,
float64 throughout.
"""

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "softmax", "identity")

DEFAULT_DROPOUT = 0.3


class ShapeError(ValueError):
    """Raised when layer/input/gradient dimensions disagree."""


@dataclass
class DenseLayer:
    """One fully connected layer: y = W x + b, W is (out x in)."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy())


@dataclass
class ForwardTrace:
    """Everything backward() needs to replay one forward pass.

    For each layer: the input it saw (post-dropout of the previous layer),
    its pre-activation, its post-activation (before dropout), and the
    dropout scale mask applied on top (None where no dropout ran).
    """

    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    postacts: list = field(default_factory=list)
    drop_masks: list = field(default_factory=list)
    activations: list = field(default_factory=list)


@dataclass
class SgdConfig:
    learning_rate: float
    batch_size: int = 32
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def init_layer(in_size: int, out_size: int, rng: np.random.Generator) -> DenseLayer:
    """Uniform init in +/- sqrt(6/(in+out)), zero bias."""
    limit = np.sqrt(6.0 / (in_size + out_size))
    w = rng.uniform(-limit, limit, size=(out_size, in_size))
    return DenseLayer(w, np.zeros(out_size))


def softmax(z: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max-subtraction for stability."""
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return softmax(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_backward(name: str, grad: np.ndarray, preact: np.ndarray,
                        postact: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the post-activation back to the pre-activation."""
    if name == "relu":
        return grad * (preact > 0)
    if name == "tanh":
        return grad * (1.0 - postact ** 2)
    if name == "softmax":
        # J^T g per column: p * g - p * (p . g)
        dot = np.sum(postact * grad, axis=0, keepdims=True)
        return postact * (grad - dot)
    if name == "identity":
        return grad
    raise ValueError(f"unknown activation {name!r}")


def forward(layers, activations, inputs: np.ndarray, train_mode: bool = False,
            rng: np.random.Generator | None = None, dropout: float = DEFAULT_DROPOUT):
    """Run `inputs` (d x b) through the layer stack.

    Dropout (inverted scaling) is applied between layers, never after the
    final one, and only when `train_mode` is set. Returns (output, trace).
    """
    if len(layers) != len(activations):
        raise ShapeError(
            f"{len(layers)} layers but {len(activations)} activation tags")
    for name in activations:
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"input must be a d x b matrix, got shape {x.shape}")
    if x.shape[0] != layers[0].in_size:
        raise ShapeError(
            f"layer 0 expects {layers[0].in_size} input rows, got {x.shape[0]}")
    if train_mode and dropout > 0 and rng is None:
        raise ValueError("train_mode dropout requires an rng")

    trace = ForwardTrace(activations=list(activations))
    for i, (layer, act) in enumerate(zip(layers, activations)):
        if x.shape[0] != layer.in_size:
            raise ShapeError(
                f"layer {i} expects {layer.in_size} input rows, got {x.shape[0]}")
        z = layer.weights @ x + layer.bias[:, None]
        a = apply_activation(act, z)
        trace.inputs.append(x)
        trace.preacts.append(z)
        trace.postacts.append(a)
        last = i == len(layers) - 1
        if train_mode and dropout > 0 and not last:
            keep = 1.0 - dropout
            mask = (rng.random(a.shape) < keep) / keep
            trace.drop_masks.append(mask)
            x = a * mask
        else:
            trace.drop_masks.append(None)
            x = a
    return x, trace


def backward(trace: ForwardTrace, output_gradient: np.ndarray, layers,
             at_preactivation: bool = False, tap_grads: dict | None = None):
    """Backpropagate through a recorded forward pass.

    `output_gradient` is w.r.t. the final post-activation, or w.r.t. the
    final pre-activation when `at_preactivation` is set (losses on softmax
    logits hand over p - onehot directly). `tap_grads` maps a layer index
    to an extra gradient injected at that layer's post-activation, before
    dropout (used for hidden-feature losses).

    Returns (param_grads, input_gradient) where param_grads[i] is a
    (dW, db) pair for layer i.
    """
    depth = len(trace.preacts)
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != trace.postacts[-1].shape:
        raise ShapeError(
            f"output gradient shape {g.shape} does not match forward output "
            f"shape {trace.postacts[-1].shape}")
    tap_grads = tap_grads or {}
    for idx, tg in tap_grads.items():
        if tg.shape != trace.postacts[idx].shape:
            raise ShapeError(
                f"tap gradient for layer {idx} has shape {tg.shape}, "
                f"expected {trace.postacts[idx].shape}")

    param_grads = [None] * depth
    for i in reversed(range(depth)):
        act = trace.activations[i]
        if i == depth - 1:
            d_post = g
            if at_preactivation:
                d_pre = d_post
            else:
                d_pre = activation_backward(act, d_post, trace.preacts[i],
                                            trace.postacts[i])
        else:
            mask = trace.drop_masks[i]
            d_post = g * mask if mask is not None else g
            if i in tap_grads:
                d_post = d_post + tap_grads[i]
            d_pre = activation_backward(act, d_post, trace.preacts[i],
                                        trace.postacts[i])
        x = trace.inputs[i]
        dw = d_pre @ x.T
        db = d_pre.sum(axis=1)
        param_grads[i] = (dw, db)
        g = layers[i].weights.T @ d_pre
    return param_grads, g


def sgd_step(layers, param_grads, learning_rate: float):
    """In-place p <- p - lr * g for every layer. Rejects non-finite grads."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if len(layers) != len(param_grads):
        raise ShapeError("one gradient pair per layer required")
    for i, (layer, (dw, db)) in enumerate(zip(layers, param_grads)):
        if not np.all(np.isfinite(dw)):
            raise ValueError(f"non-finite gradient for layer {i} weights")
        if not np.all(np.isfinite(db)):
            raise ValueError(f"non-finite gradient for layer {i} bias")
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        layer.weights -= learning_rate * dw
        layer.bias -= learning_rate * db
