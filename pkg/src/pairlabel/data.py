"""Paired-modality datasets: file ingestion, normalization, splits,
open-set splits, and a synthetic generator for desk-scale runs.

File format: delimited text, one row per feature dimension and one column
per sample (whitespace or comma separated, '#' comments allowed), plus a
one-value-per-line label file. Columns are aligned across modalities:
column j of both feature files and line j of the label file describe the
same sample pair.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import seed_stream

PARTITIONS = ("train", "val", "unlabeled", "test")

STD_FLOOR = 1e-8


class DataFormatError(ValueError):
    """Malformed dataset file (carries file and line context)."""


class AlignmentError(ValueError):
    """Sample counts disagree across the modality/label files."""


@dataclass
class PairedDataset:
    """Two feature matrices with aligned columns plus labels and masks.

    `labels` always holds the true class of every sample; the unlabeled
    mask controls what training is allowed to see, while the true values
    stay available for accuracy reporting. `n_train_classes` is the number
    of classes a model may predict (smaller than the label range only for
    open-set datasets, where held-out classes get the top label values).
    """

    features: list                    # [(d_1, N), (d_2, N)]
    labels: np.ndarray                # (N,) int
    masks: dict = field(default_factory=dict)
    n_train_classes: int | None = None

    def __post_init__(self):
        n = self.features[0].shape[1]
        for t, f in enumerate(self.features):
            if f.shape[1] != n:
                raise AlignmentError(
                    f"modality 0 has {n} samples but modality {t} has "
                    f"{f.shape[1]}")
        if self.labels.shape != (n,):
            raise AlignmentError(
                f"{n} samples but {self.labels.shape[0]} labels")
        for name in PARTITIONS:
            self.masks.setdefault(name, np.zeros(n, dtype=bool))
        if self.n_train_classes is None:
            self.n_train_classes = int(self.labels.max()) + 1 if n else 0

    @property
    def n_samples(self) -> int:
        return self.features[0].shape[1]

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    def indices(self, partition: str) -> np.ndarray:
        return np.nonzero(self.masks[partition])[0]

    def check_partitions(self, exhaustive: bool = True):
        """Masks must be pairwise disjoint; and cover all samples once a
        split has been made."""
        total = np.zeros(self.n_samples, dtype=int)
        for name in PARTITIONS:
            total += self.masks[name].astype(int)
        if (total > 1).any():
            raise ValueError("partition masks overlap")
        if exhaustive and (total == 0).any():
            raise ValueError("partition masks do not cover all samples")


@dataclass
class SplitSpec:
    """Controls the labeled:unlabeled split.

    rho is the labeled fraction of the training pool; val_fraction of the
    labeled portion is held out, stratified, for validation. test_fraction
    carves a test partition first, but only when the dataset does not
    already designate one. open_set switches to the held-out-class
    protocol: (seen class list, unseen class list, kappa >= 0) with
    in-class:out-of-class unlabeled data in ratio 1:kappa.
    """

    rho: float
    seed: int = 0
    val_fraction: float = 0.2
    test_fraction: float = 0.0
    open_set: tuple | None = None

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must be in (0, 1]")
        if self.open_set is not None:
            seen, unseen, kappa = self.open_set
            if set(seen) & set(unseen):
                raise ValueError("seen and unseen class sets overlap")
            if kappa < 0:
                raise ValueError("kappa must be >= 0")


def _parse_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cells = line.replace(",", " ").split()
            try:
                row = [float(c) for c in cells]
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _parse_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                v = int(line)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-integer label {line!r}") from None
            if v < 0:
                raise DataFormatError(f"{path}:{lineno}: negative label {v}")
            values.append(v)
    if not values:
        raise DataFormatError(f"{path}: no labels")
    return np.asarray(values, dtype=int)


def load_dataset(path_1, path_2, labels_path) -> PairedDataset:
    """Read two feature files and a label file into an unsplit dataset."""
    f1 = _parse_matrix(path_1)
    f2 = _parse_matrix(path_2)
    labels = _parse_labels(labels_path)
    if f1.shape[1] != f2.shape[1]:
        raise AlignmentError(
            f"{path_1} has {f1.shape[1]} samples but {path_2} has {f2.shape[1]}")
    if labels.shape[0] != f1.shape[1]:
        raise AlignmentError(
            f"feature files have {f1.shape[1]} samples but {labels_path} "
            f"has {labels.shape[0]} labels")
    return PairedDataset([f1, f2], labels)


def save_dataset(dataset: PairedDataset, path_1, path_2, labels_path):
    """Write the dataset in the same text format; %.17g keeps float64
    values bit-exact across a round trip."""
    for path, mat in ((path_1, dataset.features[0]), (path_2, dataset.features[1])):
        with open(path, "w", encoding="utf-8") as fh:
            for row in mat:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for v in dataset.labels:
            fh.write(f"{v}\n")


@dataclass
class NormalizationStats:
    means: list   # per modality, (d_t,)
    stds: list    # per modality, (d_t,) floored


def zscore_normalize(dataset: PairedDataset):
    """Standardize every dimension using labeled-train statistics only,
    then apply those statistics to all partitions (no leakage)."""
    train_idx = dataset.indices("train")
    if train_idx.size == 0:
        raise ValueError("labeled-train partition is empty; split first")
    means, stds, normalized = [], [], []
    for f in dataset.features:
        mu = f[:, train_idx].mean(axis=1)
        sd = f[:, train_idx].std(axis=1)
        sd = np.maximum(sd, STD_FLOOR)
        means.append(mu)
        stds.append(sd)
        normalized.append((f - mu[:, None]) / sd[:, None])
    out = PairedDataset(normalized, dataset.labels.copy(),
                        {k: v.copy() for k, v in dataset.masks.items()},
                        dataset.n_train_classes)
    return out, NormalizationStats(means, stds)


def _largest_remainder(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Per-class target sizes whose total matches round(fraction * total)
    and whose per-class deviation from exact proportionality is < 1."""
    quotas = counts * fraction
    base = np.floor(quotas).astype(int)
    remainder = int(round(quotas.sum())) - base.sum()
    order = np.argsort(-(quotas - base), kind="stable")
    for i in order[:remainder]:
        base[i] += 1
    return base


def _stratified_take(indices_by_class: list, targets: np.ndarray,
                     rng: np.random.Generator):
    taken, left = [], []
    for idx, k in zip(indices_by_class, targets):
        idx = idx.copy()
        rng.shuffle(idx)
        taken.append(idx[:k])
        left.append(idx[k:])
    return taken, left


def make_splits(dataset: PairedDataset, spec: SplitSpec) -> dict:
    """Assign train/val/unlabeled/test masks, stratified by class.

    A pre-existing test mask is respected; otherwise spec.test_fraction
    carves one. Of the labeled rho-fraction, val_fraction goes to
    validation and the rest to train. Deterministic under spec.seed.
    """
    rng = seed_stream(spec.seed, "splits")
    n = dataset.n_samples
    masks = {name: np.zeros(n, dtype=bool) for name in PARTITIONS}

    existing_test = dataset.masks["test"]
    if existing_test.any():
        masks["test"] = existing_test.copy()
        pool = np.nonzero(~existing_test)[0]
    else:
        pool = np.arange(n)

    classes = np.unique(dataset.labels[pool])
    by_class = [pool[dataset.labels[pool] == k] for k in classes]
    counts = np.array([idx.size for idx in by_class])

    if not existing_test.any() and spec.test_fraction > 0:
        test_targets = _largest_remainder(counts, spec.test_fraction)
        taken, by_class = _stratified_take(by_class, test_targets, rng)
        for idx in taken:
            masks["test"][idx] = True
        counts = np.array([idx.size for idx in by_class])

    labeled_targets = _largest_remainder(counts, spec.rho)
    labeled, rest = _stratified_take(by_class, labeled_targets, rng)
    for k, idx in zip(classes, labeled):
        if idx.size < 2:
            raise ValueError(
                f"class {k} has {idx.size} labeled sample(s) after the "
                f"rho={spec.rho} split; need at least 2 (train + val)")
    val_targets = _largest_remainder(labeled_targets, spec.val_fraction)
    val_targets = np.minimum(np.maximum(val_targets, 1), labeled_targets - 1)
    val, train = _stratified_take(labeled, val_targets, rng)
    for idx in val:
        masks["val"][idx] = True
    for idx in train:
        masks["train"][idx] = True
    for idx in rest:
        masks["unlabeled"][idx] = True
    return masks


def make_open_set_splits(dataset: PairedDataset, spec: SplitSpec):
    """Open-set protocol: labeled and test partitions hold only seen
    classes; the unlabeled partition mixes seen and unseen class samples
    in ratio 1:kappa.

    Returns a new re-indexed dataset restricted to the samples actually
    used (leftover unseen samples are dropped, keeping the partition masks
    exhaustive). Seen classes are renumbered 0..len(seen)-1 in the given
    order; unseen classes follow, so n_train_classes = len(seen). When the
    unseen supply cannot honor kappa, it is capped with a warning and the
    effective value is reported in the returned info dict.
    """
    if spec.open_set is None:
        raise ValueError("spec.open_set is required")
    seen, unseen, kappa = spec.open_set
    seen, unseen = list(seen), list(unseen)
    if not unseen:
        raise ValueError("unseen class set is empty")

    relabel = {c: i for i, c in enumerate(seen)}
    relabel.update({c: len(seen) + i for i, c in enumerate(unseen)})

    seen_mask = np.isin(dataset.labels, seen)
    seen_idx = np.nonzero(seen_mask)[0]
    seen_ds = PairedDataset(
        [f[:, seen_idx] for f in dataset.features],
        np.array([relabel[c] for c in dataset.labels[seen_idx]]),
        {k: v[seen_idx].copy() for k, v in dataset.masks.items()},
        n_train_classes=len(seen))
    seen_masks = make_splits(seen_ds, spec)

    n_in = int(seen_masks["unlabeled"].sum())
    want_out = int(round(kappa * n_in))
    out_pool = np.nonzero(np.isin(dataset.labels, unseen))[0]
    rng = seed_stream(spec.seed, "splits/open")
    take_out = min(want_out, out_pool.size)
    effective_kappa = take_out / n_in if n_in else 0.0
    capped = take_out < want_out
    if capped:
        warnings.warn(
            f"only {out_pool.size} out-of-class samples available; kappa "
            f"capped from {kappa} to {effective_kappa:.3f}")
    chosen_out = rng.permutation(out_pool)[:take_out] if take_out else \
        np.array([], dtype=int)

    keep = np.concatenate([seen_idx, chosen_out])
    features = [f[:, keep] for f in dataset.features]
    labels = np.array([relabel[c] for c in dataset.labels[keep]])
    masks = {name: np.zeros(keep.size, dtype=bool) for name in PARTITIONS}
    n_seen = seen_idx.size
    for name in PARTITIONS:
        masks[name][:n_seen] = seen_masks[name]
    masks["unlabeled"][n_seen:] = True

    out = PairedDataset(features, labels, masks, n_train_classes=len(seen))
    out.check_partitions()
    info = {"kappa_requested": kappa, "kappa_effective": effective_kappa,
            "capped": capped, "n_in_class_unlabeled": n_in,
            "n_out_of_class": take_out}
    return out, info


def synth_generate(n_classes: int, d_1: int, d_2: int, per_class_count,
                   separation, noise, seed: int,
                   per_class_test: int = 50) -> PairedDataset:
    """Paired Gaussian-blob data for desk-scale experiments.

    Each class gets an independent random anchor per modality (scaled by
    that modality's separation); samples are anchor + noise * N(0, I) with
    independent draws per modality, so the two views of a pair share only
    the class. `per_class_count` may be a scalar or one value per class;
    test samples get the test mask set. Deterministic under seed.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    sep = np.broadcast_to(np.asarray(separation, dtype=float), (2,))
    sig = np.broadcast_to(np.asarray(noise, dtype=float), (2,))
    if (sep <= 0).any():
        raise ValueError("separation must be > 0")
    counts = np.broadcast_to(np.asarray(per_class_count, dtype=int),
                             (n_classes,))
    rng = seed_stream(seed, "synth")
    dims = (d_1, d_2)
    anchors = [rng.standard_normal((n_classes, d)) * s
               for d, s in zip(dims, sep)]

    feats = [[], []]
    labels, is_test = [], []
    for k in range(n_classes):
        total = counts[k] + per_class_test
        for t, d in enumerate(dims):
            feats[t].append(anchors[t][k][:, None]
                            + sig[t] * rng.standard_normal((d, total)))
        labels.extend([k] * total)
        is_test.extend([False] * counts[k] + [True] * per_class_test)

    features = [np.concatenate(f, axis=1) for f in feats]
    masks = {name: np.zeros(len(labels), dtype=bool) for name in PARTITIONS}
    masks["test"] = np.asarray(is_test)
    return PairedDataset(features, np.asarray(labels), masks, n_classes)


def save_split_masks(dataset: PairedDataset, path):
    """Export partitions as 'partition index' rows for reproducibility."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in PARTITIONS:
            for i in dataset.indices(name):
                fh.write(f"{name} {i}\n")


def load_split_masks(path, n_samples: int) -> dict:
    masks = {name: np.zeros(n_samples, dtype=bool) for name in PARTITIONS}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in PARTITIONS:
                raise DataFormatError(f"{path}:{lineno}: bad mask row {line!r}")
            masks[parts[0]][int(parts[1])] = True
    return masks
