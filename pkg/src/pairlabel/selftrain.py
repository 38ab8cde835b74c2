"""Iterative self-training over paired modalities.

Train both modality networks on the labeled data, predict labels for the
unlabeled pairs, keep only predictions that pass a dual-evidence check
(softmax confidence above tau AND agreement with the nearest-class-mean
prediction in the original feature space), then fine-tune on the grown
pool and repeat until the pool size stops changing.

Which modality's evidence is in force switches automatically each
iteration to the one with the higher validation accuracy (ties go to
modality 0).
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses, model, nn
from .losses import LossWeights
from .rng import seed_stream, substream_seed


@dataclass
class LpfConfig:
    """Knobs for the full loop; defaults are the production values."""

    seed: int = 0
    hidden: int = 250
    dropout: float = 0.3
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 32
    learning_rate: float = 1e-2
    lr_decay_epoch: int = 100
    lr_decay_factor: float = 0.1
    epochs: int = 200
    patience: int = 20
    finetune_learning_rate: float = 1e-4
    finetune_epochs: int = 20
    center_lr_scale: float = 5.0
    tau: float = 0.9
    max_iterations: int = 10

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class ConstraintDecision:
    """Which modality's condition pair is active for one iteration."""

    active_modality: int      # 0 or 1
    cf: tuple                 # validation accuracies (cf_1, cf_2)
    tau: float


@dataclass
class IterationRecord:
    iteration: int
    cf_1: float
    cf_2: float
    active_modality: int
    pool_size: int
    pool_accuracy: float | None
    n_out_of_class: int = 0


@dataclass
class PseudoLabelPool:
    """Accepted unlabeled pairs; rebuilt from scratch every iteration."""

    selected_indices: np.ndarray = field(
        default_factory=lambda: np.array([], dtype=int))
    assigned_labels: np.ndarray = field(
        default_factory=lambda: np.array([], dtype=int))
    history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.selected_indices.size


@dataclass
class LpfResult:
    models: list
    pool: PseudoLabelPool
    expanded_features: list   # per modality: [X_train | X_pseudo]
    expanded_labels: np.ndarray
    history: list


def compute_class_means(features_by_modality, labels, n_classes: int):
    """Per-class arithmetic means of the original labeled features, one
    (C, d_t) matrix per modality."""
    labels = np.asarray(labels, dtype=int)
    bank = []
    for f in features_by_modality:
        means = np.zeros((n_classes, f.shape[0]))
        for k in range(n_classes):
            members = labels == k
            if not members.any():
                raise ValueError(f"class {k} has no labeled samples")
            means[k] = f[:, members].mean(axis=1)
        bank.append(means)
    return bank


def mean_feature_predict(bank, samples: np.ndarray, modality: int) -> np.ndarray:
    """Nearest class mean under squared Euclidean distance (a coarse,
    model-free prediction); ties go to the lowest class index."""
    means = bank[modality]
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    # ||x - m||^2 = ||x||^2 - 2 m.x + ||m||^2; ||x||^2 is constant per column
    d2 = (means ** 2).sum(axis=1)[:, None] - 2.0 * means @ x
    return np.argmin(d2, axis=0)


def validation_accuracy(m: model.EncoderDecoder, features: np.ndarray,
                        labels) -> float:
    if features.shape[1] == 0:
        raise ValueError("validation set is empty")
    predicted, _ = model.predict_label(m, features)
    return float(np.mean(predicted == np.asarray(labels)))


def build_constraint_set(cf_1: float, cf_2: float, tau: float) -> ConstraintDecision:
    """Modality 0's conditions when cf_1 >= cf_2, else modality 1's."""
    active = 0 if cf_1 >= cf_2 else 1
    return ConstraintDecision(active, (cf_1, cf_2), tau)


def select_pseudo_labels(models, bank, unlabeled_by_modality,
                         decision: ConstraintDecision):
    """Apply the active modality's condition pair to every unlabeled pair.

    A pair is accepted iff the active encoder's top softmax probability is
    >= tau and its prediction matches the nearest-mean prediction for the
    same modality. Returns (positions into the unlabeled arrays, assigned
    labels = the active encoder's predictions).
    """
    t = decision.active_modality
    x = unlabeled_by_modality[t]
    if x.shape[1] == 0:
        return np.array([], dtype=int), np.array([], dtype=int)
    predicted, confidence = model.predict_label(models[t], x)
    coarse = mean_feature_predict(bank, x, t)
    accepted = (confidence >= decision.tau) & (predicted == coarse)
    positions = np.nonzero(accepted)[0]
    return positions, predicted[positions]


def _batch_step(m: model.EncoderDecoder, x: np.ndarray, labels: np.ndarray,
                weights: LossWeights, lr: float, center_lr: float,
                rng: np.random.Generator):
    """One SGD step on a mixed batch; labels are -1 for unlabeled columns.

    Loss terms are batch sums (cross-entropy and center over the labeled
    columns, entropy over the unlabeled ones, reconstruction over all) and
    the step applies the summed gradient directly, matching an objective
    defined as a sum over samples.
    """
    scale = 1.0
    out, enc_trace = model.encode(m, x, train_mode=True, rng=rng)
    x_hat, dec_trace = model.decode(m, out.x_tanh, train_mode=True, rng=rng)

    labeled = labels >= 0
    unlabeled = ~labeled
    d_logits = np.zeros_like(out.logits)
    tap = np.zeros_like(out.x_f)
    loss_ce = loss_c = loss_ent = 0.0
    center_deltas = None

    if labeled.any():
        loss_ce, g_ce = losses.cross_entropy(out.x_softmax[:, labeled],
                                             labels[labeled])
        d_logits[:, labeled] += weights.alpha_ce * g_ce
        loss_c, g_c, center_deltas = losses.center_loss(
            out.x_f[:, labeled], labels[labeled], m.centers)
        tap[:, labeled] += weights.alpha_c * g_c
    if unlabeled.any():
        loss_ent, g_ent = losses.entropy_regularization(out.x_softmax[:, unlabeled])
        d_logits[:, unlabeled] += weights.alpha_ent * g_ent

    loss_r, g_r = losses.reconstruction(x, x_hat)
    dec_grads, d_xtanh = nn.backward(dec_trace, weights.alpha_r * g_r * scale,
                                     m.decoder)
    d_logits = d_logits * scale + d_xtanh * (1.0 - out.x_tanh ** 2)
    enc_grads, _ = nn.backward(enc_trace, d_logits, m.encoder,
                               at_preactivation=True,
                               tap_grads={1: tap * scale})

    nn.sgd_step(m.encoder, enc_grads, lr)
    nn.sgd_step(m.decoder, dec_grads, lr)
    if center_deltas is not None:
        m.centers -= center_lr * center_deltas

    total = losses.total_loss(loss_ce, loss_c, loss_ent, loss_r, weights)
    return total


def _validation_ce(m: model.EncoderDecoder, x_val, y_val) -> float:
    out, _ = model.encode(m, x_val)
    value, _ = losses.cross_entropy(out.x_softmax, np.asarray(y_val, dtype=int))
    return float(value)


def _train_network(m: model.EncoderDecoder, x_labeled, y_labeled, x_unlabeled,
                   x_val, y_val, cfg: LpfConfig, base_lr: float, epochs: int,
                   rng: np.random.Generator, patience: int | None = None,
                   decay_epoch: int | None = None):
    """Epoch loop for one modality network.

    With `patience` set, tracks validation accuracy, keeps the best
    snapshot and stops after that many epochs without improvement. Equal
    accuracies are tie-broken by validation cross-entropy, so a run that
    has saturated accuracy but is still sharpening its predictions keeps
    counting as improving.
    """
    n_lab = x_labeled.shape[1]
    n_unl = x_unlabeled.shape[1]
    all_x = np.concatenate([x_labeled, x_unlabeled], axis=1)
    all_y = np.concatenate([np.asarray(y_labeled, dtype=int),
                            np.full(n_unl, -1, dtype=int)])
    n = n_lab + n_unl

    best_acc = -1.0
    best_ce = np.inf
    best_snapshot = None
    stall = 0
    for epoch in range(epochs):
        lr = base_lr
        if decay_epoch is not None and epoch >= decay_epoch:
            lr = base_lr * cfg.lr_decay_factor
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            cols = order[start:start + cfg.batch_size]
            _batch_step(m, all_x[:, cols], all_y[cols], cfg.weights, lr,
                        cfg.center_lr_scale * lr, rng)
        if patience is not None:
            acc = validation_accuracy(m, x_val, y_val)
            ce = _validation_ce(m, x_val, y_val)
            if acc > best_acc or (acc == best_acc and ce < best_ce):
                best_acc = acc
                best_ce = ce
                best_snapshot = m.copy()
                stall = 0
            else:
                stall += 1
                if stall >= patience:
                    break
    if best_snapshot is not None:
        m.encoder = best_snapshot.encoder
        m.decoder = best_snapshot.decoder
        m.centers = best_snapshot.centers


def run_lpf(dataset, cfg: LpfConfig) -> LpfResult:
    """Full loop: supervised training, then alternating pseudo-label
    selection and fine-tuning until the pool saturates or the iteration
    cap is hit.

    The pool is rebuilt from all unlabeled samples every iteration, so
    earlier selections can be corrected. An empty selection is fine; the
    fine-tune pass then runs on the labeled data alone.
    """
    tr = dataset.indices("train")
    va = dataset.indices("val")
    ul = dataset.indices("unlabeled")
    if tr.size == 0 or va.size == 0:
        raise ValueError("dataset needs non-empty train and val partitions")
    n_classes = dataset.n_train_classes
    features = dataset.features
    y = dataset.labels
    n_modalities = len(features)

    labeled_idx = np.concatenate([tr, va])
    bank = compute_class_means([f[:, labeled_idx] for f in features],
                               y[labeled_idx], n_classes)

    models = []
    for t in range(n_modalities):
        m = model.init_model(features[t].shape[0], n_classes,
                             seed=substream_seed(cfg.seed, f"init/{t}"),
                             hidden=cfg.hidden, dropout=cfg.dropout)
        out, _ = model.encode(m, features[t][:, tr])
        m.centers = losses.init_centers(out.x_f, y[tr], n_classes)
        models.append(m)

    # The initial phase is supervised: batches hold only labeled training
    # samples, so the entropy term (defined over unlabeled columns) is
    # inactive until fine-tuning brings unlabeled samples into the batches.
    empty = [f[:, :0] for f in features]
    for t in range(n_modalities):
        _train_network(models[t], features[t][:, tr], y[tr], empty[t],
                       features[t][:, va], y[va],
                       cfg, cfg.learning_rate, cfg.epochs,
                       seed_stream(cfg.seed, f"train/{t}"),
                       patience=cfg.patience, decay_epoch=cfg.lr_decay_epoch)

    pool = PseudoLabelPool()
    unlabeled_views = [f[:, ul] for f in features]
    prev_size = None
    iterations = range(1, cfg.max_iterations + 1) if ul.size else range(0)
    for iteration in iterations:
        cf = [validation_accuracy(models[t], features[t][:, va], y[va])
              for t in range(n_modalities)]
        decision = build_constraint_set(cf[0], cf[1], cfg.tau)
        positions, assigned = select_pseudo_labels(models, bank,
                                                   unlabeled_views, decision)
        pool.selected_indices = ul[positions]
        pool.assigned_labels = assigned

        truth = y[pool.selected_indices]
        accuracy = float(np.mean(assigned == truth)) if pool.size else None
        contamination = int(np.sum(truth >= n_classes)) if pool.size else 0
        pool.history.append(IterationRecord(
            iteration, cf[0], cf[1], decision.active_modality, pool.size,
            accuracy, contamination))

        if pool.size == prev_size:
            break
        prev_size = pool.size

        ft_labeled = np.concatenate([tr, pool.selected_indices])
        ft_labels = np.concatenate([y[tr], pool.assigned_labels])
        still_unlabeled = np.setdiff1d(ul, pool.selected_indices,
                                       assume_unique=True)
        for t in range(n_modalities):
            _train_network(models[t], features[t][:, ft_labeled], ft_labels,
                           features[t][:, still_unlabeled],
                           features[t][:, va], y[va],
                           cfg, cfg.finetune_learning_rate,
                           cfg.finetune_epochs,
                           seed_stream(cfg.seed, f"finetune/{t}/{iteration}"))

    expanded = [np.concatenate([f[:, tr], f[:, pool.selected_indices]], axis=1)
                for f in features]
    expanded_labels = np.concatenate([y[tr], pool.assigned_labels])
    return LpfResult(models, pool, expanded, expanded_labels, pool.history)
