import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mibench import dataio
from mibench.datamodel import DatasetDescriptor, EventMarker, Recording
from mibench.errors import (
    DimensionMismatch,
    InvalidSpec,
    IoFailure,
    MalformedManifest,
    MissingFile,
    UnsupportedVersion,
)
from mibench.preprocess import epoch

SMALL = dataio.SynthSpec(2, 2, 4, 3, mixing_seed=1, noise_seed=2)


def tree_digest(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}


def written(tmp_path, spec=SMALL):
    desc, recs = dataio.generate_synthetic(spec)
    return desc, recs, dataio.write_dataset(desc, recs, tmp_path / "ds")


class TestRoundTrip:
    def test_bit_identical(self, tmp_path):
        desc, recs, root = written(tmp_path)
        desc2, recs2 = dataio.read_dataset(root)
        assert desc2 == desc
        for sid, sessions in recs.items():
            for ses, rec in sessions.items():
                got = recs2[sid][ses]
                assert got.samples.dtype == np.float32
                assert np.array_equal(got.samples, rec.samples)
                assert got.events == rec.events

    def test_epochs_bit_identical(self, tmp_path):
        desc, recs, root = written(tmp_path)
        _, recs2 = dataio.read_dataset(root)
        a = epoch(recs["1"]["1"], desc.epoch_window_s, desc.classes)
        b = epoch(recs2["1"]["1"], desc.epoch_window_s, desc.classes)
        assert np.array_equal(a.data, b.data) and np.array_equal(a.labels, b.labels)

    def test_manifest_layout(self, tmp_path):
        _, _, root = written(tmp_path)
        raw = json.loads((root / "dataset.json").read_text())
        assert raw["format_version"] == 1
        assert set(raw) == {"format_version", "dataset_id", "classes", "sampling_rate_hz", "channel_names",
                            "epoch_window_s", "subjects"}
        ses = raw["subjects"][0]["sessions"]
        assert [s["signal_file"] for s in ses] == ["1_1.f32", "1_2.f32"]
        size = (root / "1_1.f32").stat().st_size
        assert size == 3 * ses[0]["n_samples"] * 4

    def test_channel_major(self, tmp_path):
        desc = DatasetDescriptor("d", ("a", "b"), (0, 1), 100, ("C1", "C2"), {"1": ("1",)})
        rec = Recording(("C1", "C2"), 100, np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        root = dataio.write_dataset(desc, {"1": {"1": rec}}, tmp_path / "d")
        assert np.array_equal(np.fromfile(root / "1_1.f32", "<f4"), [1, 2, 3, 4, 5, 6])
        raw = json.loads((root / "dataset.json").read_text())
        assert raw["subjects"][0]["sessions"][0]["events"] == []

    def test_deterministic_bytes(self, tmp_path):
        desc, recs = dataio.generate_synthetic(SMALL)
        a = dataio.write_dataset(desc, recs, tmp_path / "a")
        b = dataio.write_dataset(*dataio.generate_synthetic(SMALL), tmp_path / "b")
        assert tree_digest(a) == tree_digest(b)

    def test_subject_subset(self, tmp_path):
        _, _, root = written(tmp_path)
        desc, recs = dataio.read_dataset(root, subjects=["2"])
        assert set(desc.subjects) == {"1", "2"} and set(recs) == {"2"}
        (root / "1_1.f32").unlink()  # not needed for subject 2
        dataio.read_dataset(root, subjects=["2"])


class TestReadErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            dataio.read_dataset(tmp_path)

    def test_truncated_signal(self, tmp_path):
        _, _, root = written(tmp_path)
        f = root / "1_1.f32"
        f.write_bytes(f.read_bytes()[:-4])
        with pytest.raises(DimensionMismatch):
            dataio.read_dataset(root)

    def test_missing_signal(self, tmp_path):
        _, _, root = written(tmp_path)
        (root / "2_2.f32").unlink()
        with pytest.raises(MissingFile):
            dataio.read_dataset(root)

    def edit(self, root, fn):
        path = root / "dataset.json"
        raw = json.loads(path.read_text())
        fn(raw)
        path.write_text(json.dumps(raw))

    def test_version(self, tmp_path):
        _, _, root = written(tmp_path)
        self.edit(root, lambda r: r.update(format_version=2))
        with pytest.raises(UnsupportedVersion):
            dataio.read_dataset(root)

    @pytest.mark.parametrize("mutate", [
        lambda r: r.pop("classes"),
        lambda r: r.update(sampling_rate_hz="fast"),
        lambda r: r.update(classes=["a", "a"]),
        lambda r: r["subjects"][0]["sessions"][0]["events"][0].update(label="foot"),
        lambda r: r["subjects"][0]["sessions"][0]["events"][0].update(sample_index=-1),
        lambda r: r["subjects"].append(r["subjects"][0]),
        lambda r: r["subjects"][0]["sessions"][0]["events"][0].update(sample_index=10**9),
    ])
    def test_malformed(self, tmp_path, mutate):
        _, _, root = written(tmp_path)
        self.edit(root, mutate)
        with pytest.raises(MalformedManifest):
            dataio.read_dataset(root)

    def test_not_json(self, tmp_path):
        _, _, root = written(tmp_path)
        (root / "dataset.json").write_text("{nope")
        with pytest.raises(MalformedManifest):
            dataio.read_dataset(root)


class TestWrite:
    def test_inconsistent(self, tmp_path):
        desc, recs = dataio.generate_synthetic(SMALL)
        del recs["2"]["2"]
        with pytest.raises(InvalidSpec):
            dataio.write_dataset(desc, recs, tmp_path / "x")

    def test_io_failure(self, tmp_path):
        desc, recs = dataio.generate_synthetic(SMALL)
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(IoFailure):
            dataio.write_dataset(desc, recs, blocker / "sub")


class TestSynthetic:
    def test_invalid_specs(self):
        for bad in ({"n_channels": 2}, {"snr": -1}, {"epoch_window_s": (2, 1)}, {"n_subjects": 0},
                    {"mixing_seed": -1}, {"sampling_rate_hz": 50}):
            with pytest.raises(InvalidSpec):
                dataio.SynthSpec(**{**dict(n_subjects=1, n_sessions=1, n_trials_per_class=2, n_channels=3), **bad})

    def test_layout(self):
        spec = dataio.SynthSpec(1, 1, 5, 4, sampling_rate_hz=256)
        desc, recs = dataio.generate_synthetic(spec)
        rec = recs["1"]["1"]
        labels = [e.label for e in rec.events]
        assert sorted(labels) == ["left_hand"] * 5 + ["right_hand"] * 5
        onsets = np.array([e.sample_index for e in rec.events])
        assert np.all(np.diff(onsets) == int(256 * (2.5 + 1.0)))
        assert rec.samples.shape == (4, onsets[-1] + int(256 * 3.5))

    def test_pure_function_of_spec(self):
        a = dataio.generate_synthetic(SMALL)[1]
        b = dataio.generate_synthetic(SMALL)[1]
        assert all(np.array_equal(a[s][k].samples, b[s][k].samples) for s in a for k in a[s])
        c = dataio.generate_synthetic(dataio.SynthSpec(2, 2, 4, 3, mixing_seed=1, noise_seed=3))[1]
        assert not np.array_equal(a["1"]["1"].samples, c["1"]["1"].samples)

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**63))
    def test_snr0_class_covariances_converge(self, seed):
        """Distance between class-mean covariances shrinks like 1/sqrt(n)."""
        dists = []
        for n in (20, 320):
            spec = dataio.SynthSpec(1, 1, n, 4, snr=0.0, mixing_seed=seed, noise_seed=seed + 1)
            desc, recs = dataio.generate_synthetic(spec)
            e = epoch(recs["1"]["1"], desc.epoch_window_s, desc.classes)
            Xc = e.data - e.data.mean(axis=2, keepdims=True)
            covs = Xc @ Xc.transpose(0, 2, 1) / Xc.shape[2]
            dists.append(np.linalg.norm(covs[e.labels == 0].mean(0) - covs[e.labels == 1].mean(0)))
        # 16x the trials: expected ratio 1/4; allow sampling noise
        assert dists[1] < 0.6 * dists[0]

    def test_snr_moves_one_source(self):
        spec = dataio.SynthSpec(1, 1, 60, 8, snr=4.0, mixing_seed=11, noise_seed=12)
        desc, recs = dataio.generate_synthetic(spec)
        e = epoch(recs["1"]["1"], desc.epoch_window_s, desc.classes)
        covs = np.einsum("nct,ndt->ncd", e.data, e.data) / e.data.shape[2]
        C0, C1 = covs[e.labels == 0].mean(0), covs[e.labels == 1].mean(0)
        lam = np.sort(np.linalg.eigvals(np.linalg.solve(C0, C1)).real)
        # source 0 up by 5x in class 1 and source 1 up by 5x in class 0
        assert lam[-1] == pytest.approx(5.0, rel=0.25)
        assert lam[0] == pytest.approx(0.2, rel=0.25)
        assert np.all(np.abs(lam[1:-1] - 1) < 0.3)

    def test_load_specs(self, tmp_path):
        f = tmp_path / "s.yaml"
        f.write_text("datasets:\n  - {dataset_id: a, n_subjects: 1, n_sessions: 1, n_trials_per_class: 2, n_channels: 3}\n"
                     "  - {dataset_id: b, n_subjects: 1, n_sessions: 1, n_trials_per_class: 2, n_channels: 3}\n")
        assert [s.dataset_id for s in dataio.load_synth_specs(f)] == ["a", "b"]
        f.write_text("{n_subjects: 1, n_sessions: 1, n_trials_per_class: 2, n_channels: 3, bogus: 1}")
        with pytest.raises(InvalidSpec):
            dataio.load_synth_specs(f)


class TestKnownDatasets:
    def test_registry(self):
        assert len(dataio.KNOWN_DATASETS) == 12
        assert sum(d.n_subjects for d in dataio.KNOWN_DATASETS) == 275
        assert dataio.known_dataset("BNCI 2014-001").epoch_window_s == (2.0, 6.0)
