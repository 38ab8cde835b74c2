"""Experiment runner: one dataset, repeated random splits, retriever fits
under several supervision modes, and deterministic report artifacts.

Supervision modes for the retriever fit:
  f   every training-pool sample with its true label (upper bound)
  l   only the labeled rho-fraction (lower bound)
  ss  the labeled train split grown with accepted pseudo-labeled pairs

The runner writes plain TSV row files plus a rendered summary; `report`
re-renders the summary from the row files without recomputing anything.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model, retrieval, selftrain
from .config import ExperimentConfig
from .data import (PairedDataset, load_dataset, load_split_masks,
                   make_open_set_splits, make_splits, save_dataset,
                   save_split_masks, synth_generate, zscore_normalize)
from .rng import substream_seed

MAP_FILE = "map_rows.tsv"
HISTORY_FILE = "history_rows.tsv"
CLASS_FILE = "class_accuracy.tsv"
CONTAMINATION_FILE = "contamination.tsv"
SUMMARY_FILE = "summary.txt"
CONFIG_FILE = "config_used.ini"

MAP_COLUMNS = ("mode", "direction", "r", "map", "seed")
HISTORY_COLUMNS = ("seed", "iteration", "cf_1", "cf_2", "active_modality",
                   "pool_size", "pool_accuracy", "n_out_of_class")
CLASS_COLUMNS = ("seed", "modality", "class", "accuracy")
CONTAMINATION_COLUMNS = ("seed", "kappa_requested", "kappa_effective",
                         "capped", "n_in_class_unlabeled", "n_out_of_class")


@dataclass
class ExperimentResult:
    output_dir: str
    files: list
    map_rows: list
    history_rows: list
    class_rows: list
    contamination_rows: list
    summary: str


def materialize_dataset(config: ExperimentConfig) -> PairedDataset:
    """Load the configured feature/label files or draw the synthetic
    dataset (seeded from the run seed's `data` substream)."""
    if config.source == "files":
        ds = load_dataset(config.feature_paths[0], config.feature_paths[1],
                          config.labels_path)
        if config.splits_file:
            ds.masks.update(load_split_masks(config.splits_file, ds.n_samples))
        return ds
    s = config.synth
    return synth_generate(s.classes, s.d_1, s.d_2, s.per_class_count,
                          s.separation, s.noise,
                          seed=substream_seed(config.seed, "data"),
                          per_class_test=s.per_class_test)


def generate_synth_files(config: ExperimentConfig, out_dir) -> dict:
    """Write a synthetic dataset as feature/label text files plus the
    pre-assigned test mask, ready to be consumed via data.source=files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = config.synth
    ds = synth_generate(s.classes, s.d_1, s.d_2, s.per_class_count,
                        s.separation, s.noise,
                        seed=substream_seed(config.seed, "data"),
                        per_class_test=s.per_class_test)
    paths = {
        "features_1": str(out / "features_1.txt"),
        "features_2": str(out / "features_2.txt"),
        "labels": str(out / "labels.txt"),
        "splits": str(out / "splits.txt"),
    }
    save_dataset(ds, paths["features_1"], paths["features_2"], paths["labels"])
    save_split_masks(ds, paths["splits"])
    return {"paths": paths, "n_samples": ds.n_samples,
            "n_classes": ds.n_train_classes}


def _split_for_rep(base: PairedDataset, config: ExperimentConfig,
                   rep_seed: int):
    spec = config.split_spec(rep_seed)
    if config.open_set is not None:
        return make_open_set_splits(base, spec)
    masks = make_splits(base, spec)
    ds = PairedDataset(base.features, base.labels.copy(), masks,
                       base.n_train_classes)
    ds.check_partitions()
    return ds, None


def _fit_set(norm: PairedDataset, mode: str, config: ExperimentConfig,
             rep_seed: int):
    """Features/labels the retriever may see under one supervision mode.
    Returns (features, labels, lpf_result-or-None)."""
    n_c = norm.n_train_classes
    if mode == "f":
        pool = np.sort(np.concatenate([norm.indices(p)
                                       for p in ("train", "val", "unlabeled")]))
        pool = pool[norm.labels[pool] < n_c]   # open-set: no valid label
        return ([f[:, pool] for f in norm.features], norm.labels[pool], None)
    if mode == "l":
        lab = np.sort(np.concatenate([norm.indices("train"),
                                      norm.indices("val")]))
        return ([f[:, lab] for f in norm.features], norm.labels[lab], None)
    result = selftrain.run_lpf(norm, config.lpf_config(rep_seed))
    return result.expanded_features, result.expanded_labels, result


def run_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentResult:
    outdir = Path(output_dir or config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    base = materialize_dataset(config)

    map_rows, history_rows, class_rows, contamination_rows = [], [], [], []
    for rep in range(config.repetitions):
        rep_seed = substream_seed(config.seed, f"rep/{rep}")
        ds, os_info = _split_for_rep(base, config, rep_seed)
        norm, _ = zscore_normalize(ds)
        test_idx = norm.indices("test")
        if test_idx.size == 0:
            raise ValueError("test partition is empty; set split.test_fraction"
                             " or provide a test mask")
        test_feats = [f[:, test_idx] for f in norm.features]
        test_labels = norm.labels[test_idx]
        n_c = norm.n_train_classes

        for mode in config.modes:
            fit_feats, fit_labels, lpf = _fit_set(norm, mode, config, rep_seed)
            retriever = retrieval.fit_linear_label_retriever(
                fit_feats, fit_labels, n_c, config.ridge)
            m12, m21 = retrieval.cross_modal_map(retriever, test_feats,
                                                 test_labels, config.r)
            for direction, value in (("1->2", m12), ("2->1", m21)):
                map_rows.append({"mode": mode, "direction": direction,
                                 "r": config.r, "map": value,
                                 "seed": rep_seed})
            if lpf is None:
                continue
            for rec in lpf.history:
                history_rows.append({
                    "seed": rep_seed, "iteration": rec.iteration,
                    "cf_1": rec.cf_1, "cf_2": rec.cf_2,
                    "active_modality": rec.active_modality,
                    "pool_size": rec.pool_size,
                    "pool_accuracy": (np.nan if rec.pool_accuracy is None
                                      else rec.pool_accuracy),
                    "n_out_of_class": rec.n_out_of_class})
            for t, m in enumerate(lpf.models):
                predicted, _ = model.predict_label(m, test_feats[t])
                acc = retrieval.per_class_accuracy(predicted, test_labels, n_c)
                for k in range(n_c):
                    class_rows.append({"seed": rep_seed, "modality": t,
                                       "class": k, "accuracy": acc[k]})
        if os_info is not None:
            contamination_rows.append({
                "seed": rep_seed,
                "kappa_requested": os_info["kappa_requested"],
                "kappa_effective": os_info["kappa_effective"],
                "capped": int(os_info["capped"]),
                "n_in_class_unlabeled": os_info["n_in_class_unlabeled"],
                "n_out_of_class": os_info["n_out_of_class"]})

    files = _write_artifacts(outdir, config, map_rows, history_rows,
                             class_rows, contamination_rows)
    summary = render_report(outdir, write=True)
    files.append(SUMMARY_FILE)
    return ExperimentResult(str(outdir), files, map_rows, history_rows,
                            class_rows, contamination_rows, summary)


def _format_cell(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return f"{float(value):.17g}"
    return str(value)


def _write_rows(path: Path, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_format_cell(row[c]) for c in columns) + "\n")


def _write_artifacts(outdir: Path, config, map_rows, history_rows,
                     class_rows, contamination_rows) -> list:
    (outdir / CONFIG_FILE).write_text(config.dump(), encoding="utf-8")
    _write_rows(outdir / MAP_FILE, MAP_COLUMNS, map_rows)
    _write_rows(outdir / HISTORY_FILE, HISTORY_COLUMNS, history_rows)
    _write_rows(outdir / CLASS_FILE, CLASS_COLUMNS, class_rows)
    _write_rows(outdir / CONTAMINATION_FILE, CONTAMINATION_COLUMNS,
                contamination_rows)
    return [CONFIG_FILE, MAP_FILE, HISTORY_FILE, CLASS_FILE,
            CONTAMINATION_FILE]


_COLUMN_TYPES = {
    "mode": str, "direction": str, "r": int, "map": float, "seed": int,
    "iteration": int, "cf_1": float, "cf_2": float, "active_modality": int,
    "pool_size": int, "pool_accuracy": float, "n_out_of_class": int,
    "modality": int, "class": int, "accuracy": float,
    "kappa_requested": float, "kappa_effective": float, "capped": int,
    "n_in_class_unlabeled": int,
}


def load_rows(path) -> list:
    """Parse one artifact TSV back into typed row dicts."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty artifact file")
    columns = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        cells = line.split("\t")
        if len(cells) != len(columns):
            raise ValueError(f"{path}: row has {len(cells)} cells, "
                             f"expected {len(columns)}")
        rows.append({c: _COLUMN_TYPES[c](v) for c, v in zip(columns, cells)})
    return rows


def _ordered_unique(values):
    seen, out = set(), []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def render_report(artifact_dir, write: bool = False) -> str:
    """Render the human summary from the row files alone (no model state),
    so a rerun of `report` is byte-identical to the original run's."""
    outdir = Path(artifact_dir)
    for name in (MAP_FILE, HISTORY_FILE):
        if not (outdir / name).exists():
            raise FileNotFoundError(f"{outdir / name}: missing artifact")
    map_rows = load_rows(outdir / MAP_FILE)
    history_rows = load_rows(outdir / HISTORY_FILE)
    class_rows = (load_rows(outdir / CLASS_FILE)
                  if (outdir / CLASS_FILE).exists() else [])
    contamination_rows = (load_rows(outdir / CONTAMINATION_FILE)
                          if (outdir / CONTAMINATION_FILE).exists() else [])

    lines = ["cross-modal label prediction summary",
             "====================================", ""]
    seeds = _ordered_unique([row["seed"] for row in map_rows])
    r_values = _ordered_unique([row["r"] for row in map_rows])
    r_text = ",".join(str(r) for r in r_values) if r_values else "-"
    lines.append(f"repetitions: {len(seeds)}    MAP cutoff R: {r_text}")
    lines.append("")
    lines.append("MAP by mode and direction (median [min, max] over reps):")
    for mode in _ordered_unique([row["mode"] for row in map_rows]):
        for direction in ("1->2", "2->1"):
            values = [row["map"] for row in map_rows
                      if row["mode"] == mode and row["direction"] == direction]
            if not values:
                continue
            lines.append(f"  {mode:<3} {direction}  "
                         f"{np.median(values):.4f} "
                         f"[{min(values):.4f}, {max(values):.4f}]")
    lines.append("")

    if history_rows:
        lines.append("self-training trajectory (median over reps):")
        lines.append("  iter  cf_1    cf_2    active  pool_size  pool_acc  out_of_class")
        for it in _ordered_unique([row["iteration"] for row in history_rows]):
            at = [row for row in history_rows if row["iteration"] == it]
            med = {c: np.median([row[c] for row in at])
                   for c in ("cf_1", "cf_2", "pool_size", "n_out_of_class")}
            accs = [row["pool_accuracy"] for row in at
                    if not np.isnan(row["pool_accuracy"])]
            active = int(np.median([row["active_modality"] for row in at]))
            acc_text = f"{np.median(accs):.4f}" if accs else "-"
            lines.append(f"  {it:<5} {med['cf_1']:.4f}  {med['cf_2']:.4f}  "
                         f"{active + 1:<7} {med['pool_size']:<10.1f}"
                         f"{acc_text:<9} {med['n_out_of_class']:.1f}")
        lines.append("")

    if class_rows:
        lines.append("per-class test accuracy of the self-trained encoders")
        lines.append("(median over reps; '-' marks classes absent from test):")
        for t in _ordered_unique([row["modality"] for row in class_rows]):
            cells = []
            for k in _ordered_unique([row["class"] for row in class_rows]):
                values = [row["accuracy"] for row in class_rows
                          if row["modality"] == t and row["class"] == k]
                med = np.nanmedian(values) if values else np.nan
                cells.append("-" if np.isnan(med) else f"{med:.3f}")
            lines.append(f"  modality {t + 1}: " + " ".join(cells))
        lines.append("")

    if contamination_rows:
        lines.append("open-set unlabeled mix:")
        for row in contamination_rows:
            capped = " (capped)" if row["capped"] else ""
            lines.append(
                f"  seed {row['seed']}: kappa {row['kappa_requested']:.2f} "
                f"requested, {row['kappa_effective']:.2f} effective{capped}; "
                f"{row['n_in_class_unlabeled']} in-class + "
                f"{row['n_out_of_class']} out-of-class unlabeled")
        final = {}
        for row in history_rows:
            if (row["seed"] not in final
                    or row["iteration"] > final[row["seed"]]["iteration"]):
                final[row["seed"]] = row
        if final:
            picked = [row["n_out_of_class"] for row in final.values()]
            sizes = [row["pool_size"] for row in final.values()]
            lines.append(f"  final pools (median): {np.median(sizes):.1f} "
                         f"selected, {np.median(picked):.1f} out-of-class")
        lines.append("")

    text = "\n".join(lines)
    if write:
        (outdir / SUMMARY_FILE).write_text(text, encoding="utf-8")
    return text
