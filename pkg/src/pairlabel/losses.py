"""The four training losses and the weighted total.

All losses are batch sums (one column = one sample) and return the
gradient needed to continue backpropagation:

  cross_entropy          -> gradient w.r.t. pre-softmax logits
  center_loss            -> gradient w.r.t. tapped features + center deltas
  entropy_regularization -> gradient w.r.t. pre-softmax logits
  reconstruction         -> gradient w.r.t. the reconstruction
"""

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    alpha_ce: float = 1.0
    alpha_c: float = 0.5
    alpha_ent: float = 1.0
    alpha_r: float = 0.01

    def __post_init__(self):
        for name in ("alpha_ce", "alpha_c", "alpha_ent", "alpha_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _check_labels(labels, n_classes, batch):
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {labels.shape}")
    bad = np.nonzero((labels < 0) | (labels >= n_classes))[0]
    if bad.size:
        raise ValueError(
            f"label {labels[bad[0]]} out of range [0, {n_classes}) "
            f"at sample {bad[0]}")
    return labels.astype(int)


def cross_entropy(softmax_outputs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """-sum_j log p_j[label_j]; gradient w.r.t. logits is p - onehot."""
    p = np.asarray(softmax_outputs, dtype=np.float64)
    n_classes, batch = p.shape
    labels = _check_labels(labels, n_classes, batch)
    picked = np.clip(p[labels, np.arange(batch)], PROB_FLOOR, None)
    loss = float(-np.log(picked).sum())
    grad = p.copy()
    grad[labels, np.arange(batch)] -= 1.0
    return loss, grad


def center_loss(features: np.ndarray, labels, centers: np.ndarray):
    """Squared distance of each feature column to its class center.

    Returns (loss, gradient w.r.t. features, center deltas). The delta for
    class k is sum_{j: label_j=k} (c_k - x_j) / (1 + count_k); the caller
    applies it as c <- c - lr' * delta, which moves each center toward the
    batch mean of its class.
    """
    x = np.asarray(features, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    n_classes = c.shape[0]
    deltas = np.zeros_like(c)
    if x.shape[1] == 0:
        return 0.0, np.zeros_like(x), deltas
    labels = _check_labels(labels, n_classes, x.shape[1])
    diff = x - c[labels].T
    loss = float(np.sum(diff ** 2))
    grad = 2.0 * diff
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    # sum over class members of (c_k - x_j), accumulated per class
    sums = np.zeros_like(c)
    np.add.at(sums, labels, -diff.T)
    deltas = sums / (1.0 + counts)[:, None]
    return loss, grad, deltas


def entropy_regularization(softmax_outputs: np.ndarray):
    """Shannon entropy of each softmax column, summed over the batch.

    Gradient w.r.t. logits (through the softmax Jacobian) is
    -p * (log p + H) per column.
    """
    p = np.asarray(softmax_outputs, dtype=np.float64)
    logp = np.log(np.clip(p, PROB_FLOOR, None))
    per_col = -(p * logp).sum(axis=0, keepdims=True)
    loss = float(per_col.sum())
    grad = -p * (logp + per_col)
    return loss, grad


def reconstruction(inputs: np.ndarray, reconstructions: np.ndarray):
    """sum_j ||x_j - xhat_j||^2; gradient w.r.t. xhat is 2(xhat - x)."""
    x = np.asarray(inputs, dtype=np.float64)
    xhat = np.asarray(reconstructions, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(
            f"input shape {x.shape} != reconstruction shape {xhat.shape}")
    diff = xhat - x
    return float(np.sum(diff ** 2)), 2.0 * diff


def total_loss(ce: float, c: float, ent: float, r: float,
               weights: LossWeights) -> float:
    terms = (ce, c, ent, r)
    if not all(np.isfinite(t) for t in terms):
        raise ValueError(f"non-finite loss term in {terms}")
    return (weights.alpha_ce * ce + weights.alpha_c * c
            + weights.alpha_ent * ent + weights.alpha_r * r)


def init_centers(features: np.ndarray, labels, n_classes: int) -> np.ndarray:
    """Per-class means of the given features; every class must appear."""
    x = np.asarray(features, dtype=np.float64)
    labels = _check_labels(labels, n_classes, x.shape[1])
    centers = np.zeros((n_classes, x.shape[0]))
    for k in range(n_classes):
        members = labels == k
        if not members.any():
            raise ValueError(f"class {k} has no samples for center init")
        centers[k] = x[:, members].mean(axis=1)
    return centers
