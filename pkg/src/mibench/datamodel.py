"""Value types shared by every stage of the benchmark.

All containers are frozen dataclasses holding numpy arrays.  The arrays are
marked read-only on construction so a value can be handed to several workers
without defensive copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MismatchedLabels,
    NotSpd,
    RaggedTrials,
    SingleClass,
    DataError,
)

SYMMETRY_RTOL = 1e-10


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EventMarker:
    sample_index: int
    label: str

    def __post_init__(self):
        if int(self.sample_index) < 0:
            raise DataError(f"negative event sample index {self.sample_index}")
        object.__setattr__(self, "sample_index", int(self.sample_index))


@dataclass(frozen=True)
class Recording:
    """One continuous session: ``samples`` is channels x time."""

    channel_names: tuple[str, ...]
    sampling_rate_hz: float
    samples: np.ndarray
    events: tuple[EventMarker, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.dtype not in (np.float32, np.float64):
            samples = samples.astype(np.float64)
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))
        if self.samples.ndim != 2:
            raise DataError("samples must be a channels x time matrix")
        if self.samples.shape[0] != len(self.channel_names):
            raise DataError(
                f"{self.samples.shape[0]} signal rows for "
                f"{len(self.channel_names)} channel names"
            )
        if not self.sampling_rate_hz > 0:
            raise DataError("sampling rate must be positive")
        n = self.samples.shape[1]
        for ev in self.events:
            if ev.sample_index >= n:
                raise DataError(
                    f"event at sample {ev.sample_index} beyond recording length {n}"
                )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def replace(self, **changes) -> "Recording":
        kw = dict(
            channel_names=self.channel_names,
            sampling_rate_hz=self.sampling_rate_hz,
            samples=self.samples,
            events=self.events,
        )
        kw.update(changes)
        return Recording(**kw)


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    classes: tuple[str, str]
    epoch_window_s: tuple[float, float]
    sampling_rate_hz: float
    channel_names: tuple[str, ...]
    # subject id -> session ids
    subjects: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        classes = tuple(str(c) for c in self.classes)
        if len(classes) != 2 or classes[0] == classes[1]:
            raise DataError(f"exactly two distinct classes required, got {classes}")
        start, end = (float(v) for v in self.epoch_window_s)
        if not end > start:
            raise DataError(f"epoch window end must exceed start: {self.epoch_window_s}")
        if not float(self.sampling_rate_hz) > 0:
            raise DataError("sampling rate must be positive")
        subjects = {str(k): tuple(str(s) for s in v) for k, v in self.subjects.items()}
        for sid, sessions in subjects.items():
            if not sessions:
                raise DataError(f"subject {sid} has no sessions")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "epoch_window_s", (start, end))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "subjects", subjects)

    def encode_label(self, label: str) -> int:
        """Map a class name to 0/1 by lexicographic order of the class list."""
        ordered = sorted(self.classes)
        return ordered.index(label)


@dataclass(frozen=True)
class EpochSet:
    """Trials x channels x samples with binary labels."""

    data: np.ndarray
    labels: np.ndarray
    sampling_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]


def validate_epochset(e: EpochSet, training: bool = True) -> None:
    """Raise if ``e`` violates an EpochSet invariant.

    Ragged trials can only come from object arrays or a wrong rank, since a
    numeric ndarray is rectangular by construction.
    """
    if e.data.ndim != 3:
        raise RaggedTrials(f"expected trials x channels x samples, got shape {e.data.shape}")
    if e.labels.ndim != 1 or e.labels.shape[0] != e.data.shape[0]:
        raise MismatchedLabels(
            f"{e.labels.shape[0] if e.labels.ndim else 0} labels for {e.data.shape[0]} trials"
        )
    if not np.isin(e.labels, (0, 1)).all():
        raise MismatchedLabels("labels must be 0/1")
    if training and len(np.unique(e.labels)) < 2:
        raise SingleClass("both classes must be present to train")


def make_epochset(trials, labels, sampling_rate_hz: float) -> EpochSet:
    """Stack a sequence of per-trial arrays, rejecting unequal shapes."""
    shapes = {np.shape(t) for t in trials}
    if len(shapes) > 1:
        raise RaggedTrials(f"trials have differing shapes: {sorted(shapes)}")
    data = np.stack([np.asarray(t, dtype=np.float64) for t in trials]) if len(trials) else np.zeros((0, 0, 0))
    return EpochSet(data, np.asarray(labels), sampling_rate_hz)


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive-definite matrix, symmetrized on construction."""

    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise NotSpd(f"not a square matrix: shape {a.shape}")
        scale = max(np.abs(a).max(), np.finfo(float).tiny)
        if np.abs(a - a.T).max() > SYMMETRY_RTOL * scale:
            raise NotSpd("matrix is not symmetric")
        a = (a + a.T) / 2
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotSpd("matrix is not positive definite") from None
        object.__setattr__(self, "values", _frozen(a))

    @property
    def dim(self) -> int:
        return self.values.shape[0]
