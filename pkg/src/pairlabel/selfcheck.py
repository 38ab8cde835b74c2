"""Built-in sanity battery behind the `check` verb and /check endpoint.

Each check recomputes an expected answer through an independent route
(finite differences, brute-force ranking, hand-worked cases) and compares
it with what the package computes. All checks are deterministic and run
in a few seconds.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import losses, model, nn, retrieval, selftrain
from .losses import LossWeights
from .rng import seed_stream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)   # numpy bools confuse serializers


def _toy_model(seed: int = 0, d: int = 4, hidden: int = 6, n_classes: int = 3):
    return model.init_model(d, n_classes, seed=seed, hidden=hidden, dropout=0.0)


def _toy_batch(m, rng, batch: int = 5):
    x = rng.standard_normal((m.input_dim, batch))
    labels = np.array([0, 1, 2, -1, -1][:batch])
    m.centers = rng.standard_normal(m.centers.shape)
    return x, labels


def _objective(m, x, labels, weights: LossWeights) -> float:
    """The combined batch-sum loss as one scalar function of the model."""
    out, _ = model.encode(m, x)
    x_hat, _ = model.decode(m, out.x_tanh)
    labeled = labels >= 0
    total = 0.0
    if labeled.any():
        l_ce, _ = losses.cross_entropy(out.x_softmax[:, labeled], labels[labeled])
        l_c, _, _ = losses.center_loss(out.x_f[:, labeled], labels[labeled],
                                       m.centers)
        total += weights.alpha_ce * l_ce + weights.alpha_c * l_c
    if (~labeled).any():
        l_ent, _ = losses.entropy_regularization(out.x_softmax[:, ~labeled])
        total += weights.alpha_ent * l_ent
    l_r, _ = losses.reconstruction(x, x_hat)
    return total + weights.alpha_r * l_r


def _analytic_gradients(m, x, labels, weights: LossWeights):
    """Backprop through both stacks for the combined sum loss (no batch
    scaling, no dropout), plus the true center gradient."""
    out, enc_trace = model.encode(m, x)
    x_hat, dec_trace = model.decode(m, out.x_tanh)
    labeled = labels >= 0
    d_logits = np.zeros_like(out.logits)
    tap = np.zeros_like(out.x_f)
    d_centers = np.zeros_like(m.centers)
    if labeled.any():
        _, g_ce = losses.cross_entropy(out.x_softmax[:, labeled], labels[labeled])
        d_logits[:, labeled] += weights.alpha_ce * g_ce
        _, g_c, _ = losses.center_loss(out.x_f[:, labeled], labels[labeled],
                                       m.centers)
        tap[:, labeled] += weights.alpha_c * g_c
        for j, k in enumerate(labels[labeled]):
            d_centers[k] += weights.alpha_c * 2.0 * (
                m.centers[k] - out.x_f[:, labeled][:, j])
    if (~labeled).any():
        _, g_ent = losses.entropy_regularization(out.x_softmax[:, ~labeled])
        d_logits[:, ~labeled] += weights.alpha_ent * g_ent
    _, g_r = losses.reconstruction(x, x_hat)
    dec_grads, d_xtanh = nn.backward(dec_trace, weights.alpha_r * g_r, m.decoder)
    d_logits = d_logits + d_xtanh * (1.0 - out.x_tanh ** 2)
    enc_grads, _ = nn.backward(enc_trace, d_logits, m.encoder,
                               at_preactivation=True, tap_grads={1: tap})
    return enc_grads, dec_grads, d_centers


def _fd_relative_error(m, x, labels, weights, h: float = 1e-6) -> float:
    enc_grads, dec_grads, d_centers = _analytic_gradients(m, x, labels, weights)
    worst = 0.0

    def probe(array, analytic):
        nonlocal worst
        flat = array.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = _objective(m, x, labels, weights)
            flat[i] = keep - h
            down = _objective(m, x, labels, weights)
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            a = analytic.ravel()[i]
            err = abs(fd - a) / max(abs(fd), abs(a), 1e-6)
            worst = max(worst, err)

    for layer, (dw, db) in zip(m.encoder, enc_grads):
        probe(layer.weights, dw)
        probe(layer.bias, db)
    for layer, (dw, db) in zip(m.decoder, dec_grads):
        probe(layer.weights, dw)
        probe(layer.bias, db)
    probe(m.centers, d_centers)
    return worst


def check_gradients() -> CheckResult:
    rng = seed_stream(7, "selfcheck/grad")
    m = _toy_model(seed=7)
    x, labels = _toy_batch(m, rng)
    worst = _fd_relative_error(m, x, labels, LossWeights())
    return CheckResult(
        "gradient_finite_difference", worst <= 1e-4,
        f"worst relative error {worst:.3g} (tolerance 1e-4)")


def check_softmax() -> CheckResult:
    rng = seed_stream(7, "selfcheck/softmax")
    z = rng.standard_normal((6, 40)) * 5
    p = nn.softmax(z)
    p_shift = nn.softmax(z + 1000.0)
    ok = (np.all(p >= 0) and np.all(p <= 1)
          and np.allclose(p.sum(axis=0), 1.0, atol=1e-12)
          and np.allclose(p, p_shift, atol=1e-12))
    return CheckResult(
        "softmax_probabilities", bool(ok),
        "columns sum to 1, entries in [0, 1], shift-invariant")


def check_dropout_inference() -> CheckResult:
    rng = seed_stream(7, "selfcheck/dropout")
    m = model.init_model(5, 3, seed=3, hidden=8, dropout=0.5)
    x = rng.standard_normal((5, 11))
    out_a, _ = model.encode(m, x)
    out_b, _ = model.encode(m, x)
    m0 = model.init_model(5, 3, seed=3, hidden=8, dropout=0.0)
    out_eval, _ = model.encode(m0, x)
    out_train, _ = model.encode(m0, x, train_mode=True,
                                rng=seed_stream(7, "selfcheck/dropout/fwd"))
    ok = (np.array_equal(out_a.logits, out_b.logits)
          and np.allclose(out_eval.logits, out_train.logits, atol=1e-12))
    return CheckResult(
        "dropout_inference_noop", bool(ok),
        "inference is deterministic; rate 0 training equals inference")


def check_init_determinism() -> CheckResult:
    a = model.init_model(9, 4, seed=123, hidden=10, dropout=0.3)
    b = model.init_model(9, 4, seed=123, hidden=10, dropout=0.3)
    ok = all(np.array_equal(la.weights, lb.weights)
             and np.array_equal(la.bias, lb.bias)
             for la, lb in zip(a.encoder + a.decoder, b.encoder + b.decoder))
    return CheckResult("init_determinism", bool(ok),
                       "same seed reproduces identical weights")


def check_average_precision() -> CheckResult:
    cases = [
        ([1, 0, 1], (1.0 + 2.0 / 3.0) / 2.0),
        ([0, 0, 0], 0.0),
        ([0, 1], 0.5),
        ([1, 1, 1], 1.0),
    ]
    worst = max(abs(retrieval.average_precision(flags) - want)
                for flags, want in cases)
    return CheckResult("average_precision_hand_cases", worst <= 1e-12,
                       f"worst deviation {worst:.3g} on hand-worked cases")


def check_map_bruteforce() -> CheckResult:
    rng = seed_stream(7, "selfcheck/map")
    q = rng.standard_normal((6, 25))
    d = rng.standard_normal((6, 30))
    ql = rng.integers(0, 4, 25)
    dl = rng.integers(0, 4, 30)
    ranked, _ = retrieval.rank_by_similarity(q, d)
    run = retrieval.RetrievalRun("0", "1", ranked, ql, dl)
    got = retrieval.map_at_r(run, r=10)

    aps = []
    for i in range(q.shape[1]):
        sims = []
        for j in range(d.shape[1]):
            sims.append(float(q[:, i] @ d[:, j]
                              / (np.linalg.norm(q[:, i]) * np.linalg.norm(d[:, j]))))
        order = sorted(range(d.shape[1]), key=lambda j: (-sims[j], j))[:10]
        hits = 0.0
        num = 0.0
        for rank, j in enumerate(order, start=1):
            if dl[j] == ql[i]:
                hits += 1.0
                num += hits / rank
        aps.append(num / hits if hits else 0.0)
    want = float(np.mean(aps))
    return CheckResult("map_bruteforce", abs(got - want) <= 1e-12,
                       f"library {got:.12f} vs brute force {want:.12f}")


def check_tie_break() -> CheckResult:
    db = np.array([[1.0, 1.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0]])
    q = np.array([[1.0], [0.0]])
    ranked, _ = retrieval.rank_by_similarity(q, db)
    ok = ranked[0].tolist() == [0, 1, 2, 3]
    return CheckResult("ranking_tie_break", ok,
                       "equal similarities rank by ascending database index")


def check_tau_monotonicity() -> CheckResult:
    rng = seed_stream(7, "selfcheck/tau")
    confidence = rng.uniform(0.3, 1.0, 400)
    predicted = rng.integers(0, 5, 400)
    coarse = np.where(rng.uniform(size=400) < 0.7, predicted,
                      rng.integers(0, 5, 400))
    keep = {}
    for tau in (0.5, 0.95):
        keep[tau] = set(np.nonzero((confidence >= tau)
                                   & (predicted == coarse))[0].tolist())
    ok = keep[0.95] <= keep[0.5]
    return CheckResult("tau_monotonicity", ok,
                       f"{len(keep[0.95])} picks at 0.95 within "
                       f"{len(keep[0.5])} picks at 0.5")


def check_center_update_direction() -> CheckResult:
    rng = seed_stream(7, "selfcheck/centers")
    x = rng.standard_normal((6, 20))
    labels = rng.integers(0, 3, 20)
    centers = rng.standard_normal((3, 6))
    before, _, deltas = losses.center_loss(x, labels, centers)
    after, _, _ = losses.center_loss(x, labels, centers - 0.5 * deltas)
    return CheckResult("center_update_direction", after < before,
                       f"loss {before:.4f} -> {after:.4f} after one update")


def check_entropy_maximum() -> CheckResult:
    c = 8
    uniform = np.full((c, 1), 1.0 / c)
    value, _ = losses.entropy_regularization(uniform)
    rng = seed_stream(7, "selfcheck/entropy")
    p = rng.dirichlet(np.ones(c), size=5).T
    others, _ = losses.entropy_regularization(p)
    ok = (abs(value - math.log(c)) <= 1e-9 and others < 5 * math.log(c))
    return CheckResult("entropy_uniform_maximum", bool(ok),
                       f"uniform entropy {value:.12f} vs ln {c} = "
                       f"{math.log(c):.12f}")


def check_selection_agreement() -> CheckResult:
    rng = seed_stream(7, "selfcheck/selection")
    bank = [rng.standard_normal((3, 4)) * 3, rng.standard_normal((3, 5)) * 3]
    m = model.init_model(4, 3, seed=11, hidden=6, dropout=0.0)
    x = rng.standard_normal((4, 60))
    decision = selftrain.build_constraint_set(0.9, 0.5, tau=0.2)
    positions, assigned = selftrain.select_pseudo_labels(
        [m, None], bank, [x, None], decision)
    predicted, confidence = model.predict_label(m, x)
    coarse = selftrain.mean_feature_predict(bank, x, 0)
    ok = (np.all(confidence[positions] >= 0.2)
          and np.array_equal(assigned, predicted[positions])
          and np.array_equal(predicted[positions], coarse[positions]))
    return CheckResult("selection_agreement", bool(ok),
                       f"{positions.size}/60 accepted; every pick passes "
                       "both conditions")


ALL_CHECKS = (
    check_gradients,
    check_softmax,
    check_dropout_inference,
    check_init_determinism,
    check_average_precision,
    check_map_bruteforce,
    check_tie_break,
    check_tau_monotonicity,
    check_center_update_direction,
    check_entropy_maximum,
    check_selection_agreement,
)


def run_all() -> list:
    return [fn() for fn in ALL_CHECKS]
