"""Dataset container format and the synthetic motor-imagery generator.

A container is a directory holding ``dataset.json`` plus one raw signal file
per session, ``<subject>_<session>.f32``: little-endian float32 samples laid
out channel after channel.  Events live inline in the manifest.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .datamodel import DatasetDescriptor, EventMarker, Recording
from .errors import (
    DataError,
    DimensionMismatch,
    InvalidSpec,
    IoFailure,
    MalformedManifest,
    MissingFile,
    UnsupportedVersion,
)
from .preprocess import design_bandpass

FORMAT_VERSION = 1
MANIFEST_NAME = "dataset.json"
SIGNAL_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class KnownDataset:
    name: str
    imagery: tuple[str, str]
    n_channels: int
    n_trials: str
    n_sessions: str
    n_subjects: int
    epoch_window_s: tuple[float, float]


# Public motor-imagery corpora the benchmark was designed around.  Reading
# them requires an external converter into this container format.
KNOWN_DATASETS = (
    KnownDataset("Cho et al. 2017", ("left_hand", "right_hand"), 64, "200", "1", 49, (0.0, 3.0)),
    KnownDataset("Physionet", ("left_hand", "right_hand"), 64, "40-60", "1", 109, (1.0, 3.0)),
    KnownDataset("Shin et al. 2017", ("left_hand", "right_hand"), 25, "60", "3", 29, (0.0, 10.0)),
    KnownDataset("BNCI 2014-001", ("left_hand", "right_hand"), 22, "144", "2", 9, (2.0, 6.0)),
    KnownDataset("BNCI 2014-002", ("feet", "right_hand"), 15, "160", "1", 14, (3.0, 8.0)),
    KnownDataset("BNCI 2014-004", ("left_hand", "right_hand"), 3, "120-160", "5", 9, (3.0, 7.5)),
    KnownDataset("BNCI 2015-001", ("feet", "right_hand"), 13, "200", "2/3", 13, (3.0, 8.0)),
    KnownDataset("BNCI 2015-004", ("feet", "right_hand"), 30, "70-80", "2", 10, (3.0, 10.0)),
    KnownDataset("Alexandre Motor Imagery", ("feet", "right_hand"), 16, "40", "1", 9, (0.0, 3.0)),
    KnownDataset("Yi et al. 2014", ("left_hand", "right_hand"), 60, "160", "1", 10, (3.0, 7.0)),
    KnownDataset("Zhou et al. 2016", ("left_hand", "right_hand"), 14, "100", "3", 4, (1.0, 6.0)),
    KnownDataset("Grosse-Wentrup et al. 2009", ("left_hand", "right_hand"), 128, "300", "1", 10, (3.0, 10.0)),
)


def known_dataset(name: str) -> KnownDataset:
    for d in KNOWN_DATASETS:
        if d.name == name:
            return d
    raise KeyError(name)


# ---------------------------------------------------------------------------
# container

def signal_file_name(subject: str, session: str) -> str:
    return f"{subject}_{session}.f32"


def _manifest(descriptor: DatasetDescriptor, recordings) -> dict:
    subjects = []
    for sid, sessions in descriptor.subjects.items():
        entries = []
        for ses in sessions:
            rec = recordings[sid][ses]
            entries.append({
                "id": ses,
                "signal_file": signal_file_name(sid, ses),
                "n_samples": rec.n_samples,
                "events": [{"sample_index": e.sample_index, "label": e.label} for e in rec.events],
            })
        subjects.append({"id": sid, "sessions": entries})
    return {
        "format_version": FORMAT_VERSION,
        "dataset_id": descriptor.dataset_id,
        "classes": list(descriptor.classes),
        "sampling_rate_hz": descriptor.sampling_rate_hz,
        "channel_names": list(descriptor.channel_names),
        "epoch_window_s": list(descriptor.epoch_window_s),
        "subjects": subjects,
    }


def _check_consistent(descriptor, recordings):
    names = set()
    for sid, sessions in descriptor.subjects.items():
        for ses in sessions:
            try:
                rec = recordings[sid][ses]
            except KeyError:
                raise InvalidSpec(f"no recording for subject {sid} session {ses}") from None
            if rec.channel_names != descriptor.channel_names:
                raise DimensionMismatch(f"{sid}/{ses}: channel names differ from descriptor")
            if rec.sampling_rate_hz != descriptor.sampling_rate_hz:
                raise DimensionMismatch(f"{sid}/{ses}: sampling rate differs from descriptor")
            bad = [e.label for e in rec.events if e.label not in descriptor.classes]
            if bad:
                raise InvalidSpec(f"{sid}/{ses}: undeclared event labels {sorted(set(bad))}")
            fname = signal_file_name(sid, ses)
            if fname in names or os.sep in fname or (os.altsep and os.altsep in fname):
                raise InvalidSpec(f"subject/session ids give an invalid or duplicate file name {fname!r}")
            names.add(fname)


def write_dataset(descriptor: DatasetDescriptor, recordings, path) -> Path:
    """Write ``recordings[subject][session]`` as a container under ``path``.

    Samples are stored as float32; float64 input is rounded on the way out.
    Output bytes depend only on the inputs.
    """
    _check_consistent(descriptor, recordings)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for sid, sessions in descriptor.subjects.items():
            for ses in sessions:
                data = np.ascontiguousarray(recordings[sid][ses].samples, dtype=SIGNAL_DTYPE)
                (root / signal_file_name(sid, ses)).write_bytes(data.tobytes())
        text = json.dumps(_manifest(descriptor, recordings), indent=2) + "\n"
        (root / MANIFEST_NAME).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {root}: {exc}") from exc
    return root


def _require(obj, key, kind, where="manifest"):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedManifest(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise MalformedManifest(f"{where}: field {key!r} has type {type(value).__name__}")
    return value


def read_dataset(path, subjects=None):
    """Load a container; ``path`` is its directory or its manifest file.

    Returns (descriptor, {subject: {session: Recording}}).  When
    ``subjects`` is given, only those subjects' signal files are loaded;
    the descriptor still lists every subject.
    """
    wanted = None if subjects is None else {str(s) for s in subjects}
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    root = manifest_path.parent
    if not manifest_path.is_file():
        raise MissingFile(f"no manifest at {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"{manifest_path}: {exc}") from None
    if not isinstance(raw, dict):
        raise MalformedManifest("manifest must be a JSON object")
    version = _require(raw, "format_version", int)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format_version {version} (supported: {FORMAT_VERSION})")
    channel_names = [str(c) for c in _require(raw, "channel_names", list)]
    fs = _require(raw, "sampling_rate_hz", float)
    classes = _require(raw, "classes", list)
    window = _require(raw, "epoch_window_s", list)
    subjects = {}
    recordings = {}
    for subj in _require(raw, "subjects", list):
        sid = str(_require(subj, "id", (str, int), "subject"))
        if sid in subjects:
            raise MalformedManifest(f"duplicate subject id {sid}")
        session_ids = []
        load = wanted is None or sid in wanted
        if load:
            recordings[sid] = {}
        for ses in _require(subj, "sessions", list, f"subject {sid}"):
            where = f"subject {sid} session"
            ses_id = str(_require(ses, "id", (str, int), where))
            n_samples = _require(ses, "n_samples", int, where)
            signal = root / _require(ses, "signal_file", str, where)
            events = []
            for ev in _require(ses, "events", list, where):
                label = _require(ev, "label", str, "event")
                index = _require(ev, "sample_index", int, "event")
                if label not in classes:
                    raise MalformedManifest(f"event label {label!r} not in classes {classes}")
                if index < 0:
                    raise MalformedManifest(f"negative event sample index {index}")
                events.append(EventMarker(index, label))
            if ses_id in session_ids:
                raise MalformedManifest(f"subject {sid}: duplicate session id {ses_id}")
            session_ids.append(ses_id)
            if not load:
                continue
            if not signal.is_file():
                raise MissingFile(f"signal file {signal} is missing")
            expected = len(channel_names) * n_samples * SIGNAL_DTYPE.itemsize
            actual = signal.stat().st_size
            if actual != expected:
                raise DimensionMismatch(f"{signal.name}: {actual} bytes, expected {expected}")
            data = np.fromfile(signal, dtype=SIGNAL_DTYPE).reshape(len(channel_names), n_samples)
            try:
                recordings[sid][ses_id] = Recording(channel_names, fs, data, events)
            except (ValueError, DataError) as exc:
                raise MalformedManifest(f"{sid}/{ses_id}: {exc}") from None
        subjects[sid] = tuple(session_ids)
    try:
        descriptor = DatasetDescriptor(
            dataset_id=str(_require(raw, "dataset_id", str)),
            classes=tuple(classes),
            epoch_window_s=tuple(window),
            sampling_rate_hz=fs,
            channel_names=tuple(channel_names),
            subjects=subjects,
        )
    except (TypeError, ValueError, DataError) as exc:
        raise MalformedManifest(str(exc)) from None
    if wanted is not None and wanted - set(subjects):
        raise MalformedManifest(f"unknown subjects requested: {sorted(wanted - set(subjects))}")
    return descriptor, recordings


# ---------------------------------------------------------------------------
# synthetic data

GAP_S = 1.0
SOURCE_BAND = (8.0, 30.0)


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int
    n_sessions: int
    n_trials_per_class: int
    n_channels: int
    sampling_rate_hz: float = 256.0
    epoch_window_s: tuple = (0.5, 2.5)
    snr: float = 0.0
    mixing_seed: int = 0
    noise_seed: int = 0
    dataset_id: str = "synthetic"
    classes: tuple = ("left_hand", "right_hand")

    def __post_init__(self):
        for name in ("n_subjects", "n_sessions", "n_trials_per_class", "n_channels"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidSpec(f"{name} must be a positive integer, got {value!r}")
        if self.n_channels < 3:
            raise InvalidSpec("n_channels must be at least 3")
        start, end = (float(v) for v in self.epoch_window_s)
        if not (end > start >= 0):
            raise InvalidSpec(f"epoch window must satisfy 0 <= start < end, got {self.epoch_window_s}")
        if not float(self.snr) >= 0:
            raise InvalidSpec("snr must be non-negative")
        if not float(self.sampling_rate_hz) > 2 * (SOURCE_BAND[1] + 2):
            raise InvalidSpec("sampling rate too low for the 8-30 Hz source band")
        for name in ("mixing_seed", "noise_seed"):
            if not 0 <= int(getattr(self, name)) < 2**64:
                raise InvalidSpec(f"{name} must be an unsigned 64-bit integer")
        if len(self.classes) != 2 or self.classes[0] == self.classes[1]:
            raise InvalidSpec("exactly two distinct classes required")
        object.__setattr__(self, "epoch_window_s", (start, end))
        object.__setattr__(self, "snr", float(self.snr))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epoch_window_s"] = list(self.epoch_window_s)
        d["classes"] = list(self.classes)
        return d


def load_synth_specs(path) -> list[SynthSpec]:
    """Read one spec (a mapping) or several (``datasets: [...]``) from YAML/JSON."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None
    items = raw.get("datasets") if isinstance(raw, dict) and "datasets" in raw else [raw]
    if not isinstance(items, list) or not items:
        raise InvalidSpec(f"{path}: no dataset specs")
    specs = []
    for item in items:
        if not isinstance(item, dict):
            raise InvalidSpec(f"{path}: each spec must be a mapping")
        try:
            specs.append(SynthSpec(**item))
        except TypeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from None
    ids = [s.dataset_id for s in specs]
    if len(set(ids)) != len(ids):
        raise InvalidSpec(f"{path}: duplicate dataset ids")
    return specs


def _mixing_matrix(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def _band_limited_noise(rng, n_sources, n_samples, fs):
    taps = np.asarray(design_bandpass(SOURCE_BAND, fs).taps)
    half = taps.size // 2
    white = rng.standard_normal((n_sources, n_samples + 2 * half))
    # 'valid' convolution: every output sample sees a full kernel of noise
    out = np.stack([np.convolve(row, taps, mode="valid") for row in white])
    return out / np.sqrt(np.sum(taps**2))


def synth_session(spec: SynthSpec, subject: int, session: int) -> Recording:
    """One continuous recording of ``2 * n_trials_per_class`` trials.

    Sources are unit-variance 8-30 Hz noise.  Inside a trial's epoch
    window, source 0 (class ``classes[1]``) or source 1 (``classes[0]``)
    has its variance multiplied by 1 + snr.  Trials follow each other with
    ``GAP_S`` seconds of plain source noise in between and at both ends.
    """
    fs = spec.sampling_rate_hz
    mix = _mixing_matrix(np.random.default_rng(np.random.SeedSequence(spec.mixing_seed, spawn_key=(subject,))),
                         spec.n_channels)
    rng = np.random.default_rng(np.random.SeedSequence(spec.noise_seed, spawn_key=(subject, session)))
    n_trials = 2 * spec.n_trials_per_class
    labels = rng.permutation(np.repeat([0, 1], spec.n_trials_per_class))
    start_s, end_s = spec.epoch_window_s
    gap = round(GAP_S * fs)
    w_start, w_end = round(start_s * fs), round(end_s * fs)
    period = w_end + gap
    n_samples = gap + n_trials * period
    sources = _band_limited_noise(rng, spec.n_channels, n_samples, fs)
    gain = np.sqrt(1.0 + spec.snr)
    events = []
    for i, lab in enumerate(labels):
        onset = gap + i * period
        src = 0 if lab == 1 else 1
        sources[src, onset + w_start:onset + w_end] *= gain
        events.append(EventMarker(onset, spec.classes[int(lab)]))
    names = tuple(f"C{i + 1}" for i in range(spec.n_channels))
    return Recording(names, fs, (mix @ sources).astype(np.float32), events)


def generate_synthetic(spec: SynthSpec):
    """Build (descriptor, {subject: {session: Recording}}), fully seeded by ``spec``."""
    subjects = {f"{s + 1}": tuple(f"{k + 1}" for k in range(spec.n_sessions)) for s in range(spec.n_subjects)}
    descriptor = DatasetDescriptor(
        dataset_id=spec.dataset_id,
        classes=spec.classes,
        epoch_window_s=spec.epoch_window_s,
        sampling_rate_hz=spec.sampling_rate_hz,
        channel_names=tuple(f"C{i + 1}" for i in range(spec.n_channels)),
        subjects=subjects,
    )
    recordings = {
        sid: {ses: synth_session(spec, s, k) for k, ses in enumerate(sessions)}
        for s, (sid, sessions) in enumerate(subjects.items())
    }
    return descriptor, recordings
