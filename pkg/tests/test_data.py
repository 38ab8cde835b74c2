"""Dataset plumbing: file parsing, round trips, normalization, stratified
and open-set splits, the synthetic generator, masks."""

import numpy as np
import pytest

from pairlabel import data
from pairlabel.data import (AlignmentError, DataFormatError, PairedDataset,
                            SplitSpec)
from pairlabel.rng import seed_stream


def _tiny_dataset(n_per_class=10, n_classes=3, seed=0):
    return data.synth_generate(n_classes, 4, 5, per_class_count=n_per_class,
                               separation=2.0, noise=0.5, seed=seed,
                               per_class_test=2)


class TestFileFormat:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        rng = seed_stream(1, "test/data/roundtrip")
        ds = PairedDataset(
            [rng.standard_normal((3, 7)) * 1e-8, rng.standard_normal((4, 7)) * 1e6],
            rng.integers(0, 2, 7))
        p1, p2, pl = (tmp_path / n for n in ("f1.txt", "f2.txt", "l.txt"))
        data.save_dataset(ds, p1, p2, pl)
        back = data.load_dataset(p1, p2, pl)
        np.testing.assert_array_equal(back.features[0], ds.features[0])
        np.testing.assert_array_equal(back.features[1], ds.features[1])
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_comments_commas_and_blank_lines(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("# header\n1, 2.5, 3\n\n4 5 6  # trailing\n")
        mat = data._parse_matrix(p)
        np.testing.assert_array_equal(mat, [[1.0, 2.5, 3.0], [4.0, 5.0, 6.0]])

    def test_bad_cell_names_file_and_line(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("1 2\n3 oops\n")
        with pytest.raises(DataFormatError, match=r"m\.txt:2"):
            data._parse_matrix(p)

    def test_ragged_rows_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("1 2 3\n4 5\n")
        with pytest.raises(DataFormatError, match="expected 3 columns"):
            data._parse_matrix(p)

    def test_missing_and_empty_files(self, tmp_path):
        with pytest.raises(DataFormatError, match="not found"):
            data._parse_matrix(tmp_path / "nope.txt")
        p = tmp_path / "empty.txt"
        p.write_text("# only a comment\n")
        with pytest.raises(DataFormatError, match="no data rows"):
            data._parse_matrix(p)

    def test_label_validation(self, tmp_path):
        p = tmp_path / "l.txt"
        p.write_text("0\n1\n-3\n")
        with pytest.raises(DataFormatError, match=r"l\.txt:3.*negative"):
            data._parse_labels(p)
        p.write_text("0\n1.5\n")
        with pytest.raises(DataFormatError, match="non-integer"):
            data._parse_labels(p)

    def test_alignment_errors(self, tmp_path):
        (tmp_path / "a.txt").write_text("1 2 3\n")
        (tmp_path / "b.txt").write_text("1 2\n")
        (tmp_path / "l.txt").write_text("0\n1\n0\n")
        with pytest.raises(AlignmentError, match="samples"):
            data.load_dataset(tmp_path / "a.txt", tmp_path / "b.txt",
                              tmp_path / "l.txt")
        (tmp_path / "b.txt").write_text("1 2 3\n")
        (tmp_path / "l.txt").write_text("0\n1\n")
        with pytest.raises(AlignmentError, match="labels"):
            data.load_dataset(tmp_path / "a.txt", tmp_path / "b.txt",
                              tmp_path / "l.txt")


class TestPairedDataset:
    def test_misaligned_modalities_rejected(self):
        with pytest.raises(AlignmentError):
            PairedDataset([np.zeros((2, 4)), np.zeros((3, 5))],
                          np.zeros(4, dtype=int))

    def test_check_partitions_flags_overlap_and_gaps(self):
        ds = _tiny_dataset()
        masks = {k: v.copy() for k, v in ds.masks.items()}
        masks["train"][:] = False
        ds_gap = PairedDataset(ds.features, ds.labels, masks, 3)
        with pytest.raises(ValueError, match="cover"):
            ds_gap.check_partitions()
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=0))
        masks["val"][np.nonzero(masks["train"])[0][0]] = True
        bad = PairedDataset(ds.features, ds.labels, masks, 3)
        with pytest.raises(ValueError, match="overlap"):
            bad.check_partitions()


class TestNormalization:
    def test_stats_come_from_train_only(self):
        ds = _tiny_dataset()
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=1))
        ds = PairedDataset(ds.features, ds.labels, masks, 3)
        norm, stats = data.zscore_normalize(ds)
        tr = ds.indices("train")
        for t in range(2):
            np.testing.assert_allclose(stats.means[t],
                                       ds.features[t][:, tr].mean(axis=1))
            np.testing.assert_allclose(norm.features[t][:, tr].mean(axis=1),
                                       0.0, atol=1e-12)
            np.testing.assert_allclose(norm.features[t][:, tr].std(axis=1),
                                       1.0, atol=1e-9)

    def test_constant_dimension_uses_floor(self):
        ds = _tiny_dataset()
        ds.features[0][2, :] = 5.0
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=1))
        ds = PairedDataset(ds.features, ds.labels, masks, 3)
        norm, stats = data.zscore_normalize(ds)
        assert stats.stds[0][2] == data.STD_FLOOR
        assert np.all(np.isfinite(norm.features[0]))

    def test_unsplit_dataset_rejected(self):
        with pytest.raises(ValueError, match="split"):
            data.zscore_normalize(_tiny_dataset())


class TestLargestRemainder:
    def test_totals_and_deviation_bound(self):
        rng = seed_stream(2, "test/data/remainder")
        for _ in range(50):
            counts = rng.integers(1, 40, size=rng.integers(2, 9))
            frac = float(rng.uniform(0.05, 0.95))
            targets = data._largest_remainder(counts, frac)
            assert targets.sum() == int(round(counts.sum() * frac))
            assert np.all(np.abs(targets - counts * frac) < 1.0)
            assert np.all(targets >= 0) and np.all(targets <= counts)


class TestMakeSplits:
    def test_masks_partition_everything(self):
        ds = _tiny_dataset(n_per_class=20)
        masks = data.make_splits(ds, SplitSpec(rho=0.3, seed=3))
        ds = PairedDataset(ds.features, ds.labels, masks, 3)
        ds.check_partitions()

    def test_existing_test_mask_respected(self):
        ds = _tiny_dataset()
        before = ds.masks["test"].copy()
        assert before.any()
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=4))
        np.testing.assert_array_equal(masks["test"], before)

    def test_test_fraction_carves_when_absent(self):
        ds = _tiny_dataset(n_per_class=20)
        ds.masks["test"][:] = False
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=5,
                                               test_fraction=0.25))
        total = len(ds.labels)
        assert masks["test"].sum() == int(round(total * 0.25))

    def test_stratification_is_proportional(self):
        ds = data.synth_generate(4, 3, 3, per_class_count=[40, 20, 28, 12],
                                 separation=1.0, noise=1.0, seed=6,
                                 per_class_test=0)
        masks = data.make_splits(ds, SplitSpec(rho=0.25, seed=6))
        labeled = masks["train"] | masks["val"]
        for k, count in enumerate([40, 20, 28, 12]):
            got = int(labeled[ds.labels == k].sum())
            assert abs(got - count * 0.25) < 1.0

    def test_val_gets_a_fifth_of_labeled(self):
        ds = _tiny_dataset(n_per_class=20)
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=7))
        labeled = int(masks["train"].sum() + masks["val"].sum())
        assert int(masks["val"].sum()) == int(round(labeled * 0.2))

    def test_every_class_keeps_train_and_val(self):
        ds = _tiny_dataset(n_per_class=10)
        masks = data.make_splits(ds, SplitSpec(rho=0.3, seed=8))
        for k in range(3):
            member = ds.labels == k
            assert masks["train"][member].any()
            assert masks["val"][member].any()

    def test_too_few_labeled_samples_rejected(self):
        ds = _tiny_dataset(n_per_class=4)
        with pytest.raises(ValueError, match="at least 2"):
            data.make_splits(ds, SplitSpec(rho=0.1, seed=9))

    def test_deterministic_under_seed(self):
        ds = _tiny_dataset(n_per_class=20)
        a = data.make_splits(ds, SplitSpec(rho=0.3, seed=10))
        b = data.make_splits(ds, SplitSpec(rho=0.3, seed=10))
        c = data.make_splits(ds, SplitSpec(rho=0.3, seed=11))
        for name in data.PARTITIONS:
            np.testing.assert_array_equal(a[name], b[name])
        assert any(not np.array_equal(a[n], c[n]) for n in data.PARTITIONS)

    def test_rho_validation(self):
        with pytest.raises(ValueError, match="rho"):
            SplitSpec(rho=0.0)
        with pytest.raises(ValueError, match="rho"):
            SplitSpec(rho=1.2)


class TestOpenSetSplits:
    def _dataset(self, seed=0, unseen_count=30):
        return data.synth_generate(
            5, 4, 5, per_class_count=[20, 20, 20, 30, 30][:3] + [unseen_count] * 2,
            separation=1.5, noise=1.0, seed=seed, per_class_test=4)

    def test_relabeling_and_partition_rules(self):
        ds = self._dataset()
        spec = SplitSpec(rho=0.5, seed=1, open_set=([4, 0, 2], [1, 3], 0.5))
        out, info = data.make_open_set_splits(ds, spec)
        out.check_partitions()
        assert out.n_train_classes == 3
        for name in ("train", "val", "test"):
            assert np.all(out.labels[out.indices(name)] < 3)
        unl = out.labels[out.indices("unlabeled")]
        assert np.any(unl >= 3)
        # original class 4 -> 0, 0 -> 1, 2 -> 2; unseen 1 -> 3, 3 -> 4
        orig = ds.labels
        assert int((orig == 4).sum()) == int((out.labels == 0).sum())

    def test_kappa_ratio_exact_when_supply_allows(self):
        ds = self._dataset(unseen_count=200)
        spec = SplitSpec(rho=0.5, seed=2, open_set=([0, 1, 2], [3, 4], 1.5))
        out, info = data.make_open_set_splits(ds, spec)
        n_in = info["n_in_class_unlabeled"]
        assert info["n_out_of_class"] == int(round(1.5 * n_in))
        assert info["kappa_effective"] == pytest.approx(1.5)
        assert not info["capped"]

    def test_kappa_capped_with_warning(self):
        ds = self._dataset(unseen_count=5)
        spec = SplitSpec(rho=0.5, seed=3, open_set=([0, 1, 2], [3, 4], 10.0))
        with pytest.warns(UserWarning, match="capped"):
            out, info = data.make_open_set_splits(ds, spec)
        assert info["capped"]
        assert info["kappa_effective"] < 10.0
        # entire unseen supply: 2 classes x (5 train-pool + 4 test) samples
        assert info["n_out_of_class"] == 18

    def test_kappa_zero_keeps_unlabeled_clean(self):
        ds = self._dataset()
        spec = SplitSpec(rho=0.5, seed=4, open_set=([0, 1, 2], [3, 4], 0.0))
        out, info = data.make_open_set_splits(ds, spec)
        assert info["n_out_of_class"] == 0
        assert np.all(out.labels[out.indices("unlabeled")] < 3)

    def test_overlapping_class_sets_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            SplitSpec(rho=0.5, open_set=([0, 1], [1, 2], 1.0))


class TestSynthGenerate:
    def test_shapes_counts_and_test_mask(self):
        ds = data.synth_generate(3, 4, 6, per_class_count=[5, 7, 9],
                                 separation=1.0, noise=1.0, seed=5,
                                 per_class_test=2)
        assert ds.features[0].shape == (4, 5 + 7 + 9 + 6)
        assert ds.features[1].shape == (6, 27)
        for k, want in enumerate([5, 7, 9]):
            member = ds.labels == k
            assert int((member & ~ds.masks["test"]).sum()) == want
            assert int((member & ds.masks["test"]).sum()) == 2

    def test_deterministic_under_seed(self):
        a = data.synth_generate(3, 4, 5, 10, 1.0, 1.0, seed=6)
        b = data.synth_generate(3, 4, 5, 10, 1.0, 1.0, seed=6)
        np.testing.assert_array_equal(a.features[0], b.features[0])
        np.testing.assert_array_equal(a.features[1], b.features[1])

    def test_per_modality_separation_controls_spread(self):
        ds = data.synth_generate(6, 10, 10, 30, separation=(5.0, 0.2),
                                 noise=1.0, seed=7, per_class_test=0)
        # anchor spread dominates modality 0; class means far apart there
        means = [np.stack([f[:, ds.labels == k].mean(axis=1) for k in range(6)])
                 for f in ds.features]
        d0 = np.linalg.norm(means[0][0] - means[0][1])
        d1 = np.linalg.norm(means[1][0] - means[1][1])
        assert d0 > d1

    def test_validation(self):
        with pytest.raises(ValueError, match="classes"):
            data.synth_generate(1, 4, 5, 10, 1.0, 1.0, seed=0)
        with pytest.raises(ValueError, match="separation"):
            data.synth_generate(3, 4, 5, 10, 0.0, 1.0, seed=0)


class TestSplitMasks:
    def test_roundtrip(self, tmp_path):
        ds = _tiny_dataset(n_per_class=8)
        masks = data.make_splits(ds, SplitSpec(rho=0.5, seed=12))
        ds = PairedDataset(ds.features, ds.labels, masks, 3)
        path = tmp_path / "splits.txt"
        data.save_split_masks(ds, path)
        back = data.load_split_masks(path, ds.n_samples)
        for name in data.PARTITIONS:
            np.testing.assert_array_equal(back[name], ds.masks[name])

    def test_bad_row_rejected(self, tmp_path):
        path = tmp_path / "splits.txt"
        path.write_text("train 0\nwat 1\n")
        with pytest.raises(DataFormatError, match="splits.txt:2"):
            data.load_split_masks(path, 4)
