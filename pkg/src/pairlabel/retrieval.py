"""Retrieval evaluation: average precision, MAP@R, cosine ranking, a
closed-form linear retriever, and per-class accuracy tables.

Relevance is label equality. A query with no relevant item in its top R
scores AP = 0 (the strictest reading of the 0/0 case).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class RetrievalRun:
    query_modality: str
    database_modality: str
    ranked: np.ndarray        # (n_queries, >=R) database indices
    query_labels: np.ndarray
    database_labels: np.ndarray


@dataclass
class MapReport:
    map_i2t: float
    map_t2i: float
    r: int
    mode: str
    per_class_accuracy: list | None = None   # per modality, (C,) with NaN=absent


def average_precision(relevance_flags) -> float:
    """AP over a ranked 0/1 relevance vector:
    sum_r P(r) * delta(r) / sum_r delta(r), with 0 when nothing relevant."""
    flags = np.asarray(relevance_flags, dtype=float)
    if flags.ndim != 1 or flags.size < 1:
        raise ValueError("relevance flags must be a non-empty vector")
    hits = np.cumsum(flags)
    total = hits[-1]
    if total == 0:
        return 0.0
    precision_at = hits / np.arange(1, flags.size + 1)
    return float(np.sum(precision_at * flags) / total)


def map_at_r(run: RetrievalRun, r: int = 50) -> float:
    """Mean AP over all queries at cutoff r."""
    if run.ranked.shape[1] < r:
        raise ValueError(
            f"ranked lists have {run.ranked.shape[1]} entries, need {r}")
    aps = []
    for q in range(run.ranked.shape[0]):
        retrieved = run.ranked[q, :r]
        flags = run.database_labels[retrieved] == run.query_labels[q]
        aps.append(average_precision(flags))
    return float(np.mean(aps))


def rank_by_similarity(queries: np.ndarray, database: np.ndarray):
    """Rank database columns per query column by descending cosine
    similarity; ties break toward the lower database index.

    Zero-norm embeddings get similarity -inf (ranked last); their count is
    returned so callers can surface a warning.
    """
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(database, dtype=np.float64)
    if q.shape[0] != d.shape[0]:
        raise ValueError(
            f"query dim {q.shape[0]} != database dim {d.shape[0]}")
    qn = np.linalg.norm(q, axis=0)
    dn = np.linalg.norm(d, axis=0)
    zero_count = int((qn == 0).sum() + (dn == 0).sum())
    sim = (q / np.where(qn == 0, 1.0, qn)).T @ (d / np.where(dn == 0, 1.0, dn))
    sim[qn == 0, :] = -np.inf
    sim[:, dn == 0] = -np.inf
    # stable sort keeps ascending index order among equal similarities
    ranked = np.argsort(-sim, axis=1, kind="stable")
    return ranked, zero_count


@dataclass
class LinearLabelRetriever:
    """Per-modality ridge maps from features into the shared C-dim label
    space; cross-modal retrieval then ranks by cosine there."""

    maps: list          # per modality, (d_t, C)
    ridge: float

    def project(self, modality: int, features: np.ndarray) -> np.ndarray:
        return self.maps[modality].T @ np.asarray(features, dtype=np.float64)


def fit_linear_label_retriever(features_by_modality, labels, n_classes: int,
                               ridge: float = 1e-3) -> LinearLabelRetriever:
    """Ridge-regularized least squares from each modality's features to
    one-hot label targets. The ridge term keeps the normal matrix
    invertible for any input."""
    labels = np.asarray(labels, dtype=int)
    targets = np.zeros((n_classes, labels.size))
    targets[labels, np.arange(labels.size)] = 1.0
    maps = []
    for f in features_by_modality:
        x = np.asarray(f, dtype=np.float64)
        gram = x @ x.T + ridge * np.eye(x.shape[0])
        maps.append(np.linalg.solve(gram, x @ targets.T))
    return LinearLabelRetriever(maps, ridge)


def per_class_accuracy(predicted, true, n_classes: int) -> np.ndarray:
    """Accuracy per true class; classes with no samples are NaN (absent),
    never zero."""
    predicted = np.asarray(predicted, dtype=int)
    true = np.asarray(true, dtype=int)
    out = np.full(n_classes, np.nan)
    for k in range(n_classes):
        members = true == k
        if members.any():
            out[k] = float(np.mean(predicted[members] == k))
    return out


def cross_modal_map(retriever: LinearLabelRetriever, test_features, test_labels,
                    r: int = 50):
    """MAP@r in both directions over the test set; the database for each
    direction is the full opposite-modality test set, counterpart
    included."""
    emb = [retriever.project(t, f) for t, f in enumerate(test_features)]
    labels = np.asarray(test_labels, dtype=int)
    maps = []
    for qt, dt in ((0, 1), (1, 0)):
        ranked, _ = rank_by_similarity(emb[qt], emb[dt])
        run = RetrievalRun(query_modality=str(qt), database_modality=str(dt),
                           ranked=ranked, query_labels=labels,
                           database_labels=labels)
        maps.append(map_at_r(run, r))
    return maps[0], maps[1]
