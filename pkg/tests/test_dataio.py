import json

import numpy as np
import pytest

from tinyfuse import dataio
from tinyfuse.errors import DataError

import helpers


class TestGenerate:
    def test_bitwise_deterministic(self):
        spec = helpers.tiny_task()
        a = dataio.generate(spec, seed=42)
        b = dataio.generate(spec, seed=42)
        assert a.fingerprint() == b.fingerprint()
        for m in spec.modality_names:
            assert np.array_equal(a.modalities[m], b.modalities[m])
        assert np.array_equal(a.labels, b.labels)

    def test_different_seed_changes_data(self):
        spec = helpers.tiny_task()
        assert dataio.generate(spec, 1).fingerprint() != dataio.generate(spec, 2).fingerprint()

    def test_class_balance_within_one(self):
        spec = dataio.SyntheticTaskSpec("t", (2, 3), ((6, 6, 1), (6, 6, 1)), 0.1, 3, 1000)
        ds = dataio.generate(spec, 0)
        counts = np.bincount(ds.labels, minlength=spec.num_classes)
        assert counts.max() - counts.min() <= 1

    def test_noiseless_samples_are_bitwise_templates(self):
        spec = dataio.SyntheticTaskSpec("t", (4, 2), ((8, 8, 1), (8, 8, 1)), 0.0, 7, 64)
        ds = dataio.generate(spec, 5)
        digits = np.array(
            [dataio.decompose_label(k, spec.alphabet_sizes) for k in ds.labels]
        )
        m0 = ds.modalities["m0"]
        for symbol in range(4):
            idx = np.flatnonzero(digits[:, 0] == symbol)
            for i in idx[1:]:
                assert np.array_equal(m0[i], m0[idx[0]])

    def test_modality_shows_only_its_own_digit(self):
        # same modality-0 sub-symbol, different classes -> identical rendering
        spec = dataio.SyntheticTaskSpec("t", (2, 2), ((6, 6, 1), (6, 6, 1)), 0.0, 7, 32)
        ds = dataio.generate(spec, 5)
        digits = np.array([dataio.decompose_label(k, (2, 2)) for k in ds.labels])
        sel0 = np.flatnonzero((digits[:, 0] == 0) & (digits[:, 1] == 0))[0]
        sel1 = np.flatnonzero((digits[:, 0] == 0) & (digits[:, 1] == 1))[0]
        assert ds.labels[sel0] != ds.labels[sel1]
        assert np.array_equal(ds.modalities["m0"][sel0], ds.modalities["m0"][sel1])

    def test_unimodal_ceiling(self):
        spec = dataio.PRESETS["audio3"]
        for m in range(3):
            assert dataio.unimodal_ceiling(spec, m) == 0.25
        assert dataio.unimodal_ceiling(dataio.PRESETS["image2"], 0) == 0.25

    def test_split_sizes_and_disjointness(self):
        ds = dataio.generate(helpers.tiny_task(500), 3)
        sizes = {k: v.size for k, v in ds.splits.items()}
        assert sizes == {"train": 350, "val": 50, "test": 100}
        merged = np.concatenate(list(ds.splits.values()))
        assert np.unique(merged).size == 500

    def test_mixed_radix_decomposition(self):
        assert dataio.decompose_label(0, (2, 2, 2)) == (0, 0, 0)
        assert dataio.decompose_label(5, (2, 2, 2)) == (1, 0, 1)
        assert dataio.decompose_label(11, (4, 4)) == (2, 3)
        for k in range(24):
            digits = dataio.decompose_label(k, (2, 3, 4))
            assert (digits[0] * 3 + digits[1]) * 4 + digits[2] == k

    def test_sample_count_below_class_count_rejected(self):
        with pytest.raises(DataError):
            dataio.SyntheticTaskSpec("t", (4, 4), ((4, 4, 1), (4, 4, 1)), 0.1, 1, 10)

    def test_presets_exist(self):
        assert dataio.PRESETS["audio3"].num_classes == 8
        assert dataio.PRESETS["audio3"].sample_count == 6000
        assert dataio.PRESETS["image2"].num_classes == 16
        assert dataio.PRESETS["image2"].shapes[0] == (64, 64, 1)


class TestPersistence:
    def test_round_trip_bitwise(self, tmp_path, tiny_dataset):
        manifest = dataio.save_dataset(tiny_dataset, tmp_path / "ds")
        again = dataio.load_dataset(manifest)
        for m in tiny_dataset.spec.modality_names:
            assert np.array_equal(again.modalities[m], tiny_dataset.modalities[m])
            assert again.modalities[m].dtype == np.float32
        assert np.array_equal(again.labels, tiny_dataset.labels)
        for split in tiny_dataset.splits:
            assert np.array_equal(again.splits[split], tiny_dataset.splits[split])
        assert again.fingerprint() == tiny_dataset.fingerprint()

    def test_checksum_mismatch_rejected(self, tmp_path, tiny_dataset):
        directory = tmp_path / "ds"
        dataio.save_dataset(tiny_dataset, directory)
        blob = directory / "m0.bin"
        data = bytearray(blob.read_bytes())
        data[-1] ^= 0xFF
        blob.write_bytes(bytes(data))
        with pytest.raises(DataError, match="checksum"):
            dataio.load_dataset(directory)

    def test_truncated_blob_names_file(self, tmp_path, tiny_dataset):
        directory = tmp_path / "ds"
        dataio.save_dataset(tiny_dataset, directory)
        blob = directory / "m1.bin"
        blob.write_bytes(blob.read_bytes()[:100])
        manifest = json.loads((directory / "manifest.json").read_text())
        import hashlib

        manifest["files"]["m1"]["sha256"] = hashlib.sha256(blob.read_bytes()).hexdigest()
        (directory / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="m1.bin"):
            dataio.load_dataset(directory)

    def test_overlapping_splits_rejected(self, tmp_path, tiny_dataset):
        directory = tmp_path / "ds"
        dataio.save_dataset(tiny_dataset, directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        manifest["splits"]["val"] = manifest["splits"]["train"][:5]
        (directory / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="overlap"):
            dataio.load_dataset(directory)

    def test_blob_header_is_sixteen_bytes_of_extents(self, tmp_path, tiny_dataset):
        directory = tmp_path / "ds"
        dataio.save_dataset(tiny_dataset, directory)
        raw = (directory / "m0.bin").read_bytes()
        dims = np.frombuffer(raw[:16], dtype="<u2")
        n, h, w, c = tiny_dataset.modalities["m0"].shape
        assert dims.tolist() == [n, h, w, c, 1, 1, 1, 1]
        assert len(raw) == 16 + n * h * w * c * 4
