"""Band-pass filtering, resampling and epoch extraction.

The processing order is fixed: filter, then resample, then epoch.  The
band-pass doubles as the anti-aliasing filter, since every band used here
ends well below the 64 Hz Nyquist limit of the 128 Hz target rate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import yaml
from scipy.signal import fftconvolve

from .datamodel import EpochSet, EventMarker, Recording
from .errors import InvalidBand, InvalidSpec, NoTrials, TooShortRecording, UpsamplingError

log = logging.getLogger(__name__)

TRANSITION_HZ = 2.0
DEFAULT_RESAMPLE_HZ = 128.0
DEFAULT_BAND = (8.0, 35.0)
FILTER_BANK_BANDS = ((8.0, 12.0), (12.0, 16.0), (16.0, 20.0), (20.0, 24.0), (24.0, 28.0), (28.0, 35.0))


def round_half_up(x) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BandSpec:
    low_hz: float
    high_hz: float

    def __post_init__(self):
        object.__setattr__(self, "low_hz", float(self.low_hz))
        object.__setattr__(self, "high_hz", float(self.high_hz))
        if not 0 < self.low_hz < self.high_hz:
            raise InvalidBand(f"need 0 < low < high, got ({self.low_hz}, {self.high_hz})")

    def check(self, fs: float) -> None:
        """Raise unless the band can be realized at rate ``fs``.

        With a 2 Hz transition, the lower edge must sit at least one
        transition width above DC, the upper edge one below Nyquist, and the
        band must be at least one transition wide.
        """
        if self.high_hz >= fs / 2:
            raise InvalidBand(f"band {self} reaches Nyquist at fs={fs}")
        if (self.low_hz < TRANSITION_HZ or self.high_hz + TRANSITION_HZ > fs / 2
                or self.high_hz - self.low_hz < TRANSITION_HZ):
            raise InvalidBand(f"band {self} too close to DC, Nyquist or too narrow for fs={fs}")

    def as_list(self):
        return [self.low_hz, self.high_hz]


def as_band(b) -> BandSpec:
    return b if isinstance(b, BandSpec) else BandSpec(*b)


@dataclass(frozen=True)
class FilterKernel:
    taps: np.ndarray
    sampling_rate_hz: float

    @property
    def half_length(self) -> int:
        return (self.taps.size - 1) // 2


def kernel_length(fs: float) -> int:
    n = math.ceil(3.3 * fs / TRANSITION_HZ)
    return n if n % 2 else n + 1


def design_bandpass(band, fs: float) -> FilterKernel:
    """Hamming-windowed sinc band-pass, normalized to unit gain at the band centre."""
    band = as_band(band)
    band.check(fs)
    n = kernel_length(fs)
    m = np.arange(n) - (n - 1) / 2
    lo, hi = band.low_hz / fs, band.high_hz / fs
    h = (2 * hi * np.sinc(2 * hi * m) - 2 * lo * np.sinc(2 * lo * m)) * np.hamming(n)
    centre = (band.low_hz + band.high_hz) / 2 / fs
    gain = abs(np.sum(h * np.exp(-2j * np.pi * centre * m)))
    taps = h / gain
    taps.setflags(write=False)
    return FilterKernel(taps, float(fs))


def apply_filter(rec: Recording, kernel: FilterKernel) -> Recording:
    """Convolve every channel with ``kernel``; output is delay-compensated.

    The odd symmetric kernel is centred on each output sample ('same'
    convolution), which removes its (L-1)/2 group delay.  Samples beyond
    the recording are taken as zero.
    """
    taps = np.asarray(kernel.taps, dtype=np.float64)
    if taps.size >= rec.n_samples:
        raise TooShortRecording(f"kernel of {taps.size} taps for {rec.n_samples} samples")
    x = np.asarray(rec.samples, dtype=np.float64)
    out = fftconvolve(x, taps[None, :], mode="same", axes=1)
    return rec.replace(samples=out)


def resample(rec: Recording, target_hz: float) -> Recording:
    """Linear interpolation onto the grid k / target_hz."""
    fs = rec.sampling_rate_hz
    target_hz = float(target_hz)
    if target_hz == fs:
        return rec
    if target_hz > fs:
        raise UpsamplingError(f"cannot resample {fs} Hz up to {target_hz} Hz")
    ratio = Fraction(target_hz) / Fraction(fs)
    n_out = math.floor((rec.n_samples - 1) * ratio) + 1
    pos = np.arange(n_out) * (fs / target_hz)
    src = np.arange(rec.n_samples)
    x = np.asarray(rec.samples, dtype=np.float64)
    out = np.stack([np.interp(pos, src, row) for row in x]) if x.shape[0] else np.zeros((0, n_out))
    events = [
        EventMarker(min(math.floor(ev.sample_index * ratio + Fraction(1, 2)), n_out - 1), ev.label)
        for ev in rec.events
    ]
    return rec.replace(samples=out, sampling_rate_hz=target_hz, events=events)


def epoch(rec: Recording, window_s, classes, edge_s: float = 0.0) -> EpochSet:
    """Cut event-locked trials.

    ``classes`` lists the two class names; labels are their lexicographic
    rank.  Events of other classes are skipped.  Windows that leave the
    recording, or enter the first/last ``edge_s`` seconds where filtering
    saw zero padding, are dropped.
    """
    fs = rec.sampling_rate_hz
    start_s, end_s = (float(v) for v in window_s)
    ordered = sorted(classes)
    offset = round_half_up(start_s * fs)
    length = round_half_up((end_s - start_s) * fs)
    edge = math.ceil(edge_s * fs - 1e-9) if edge_s > 0 else 0
    trials, labels, dropped = [], [], 0
    for ev in rec.events:
        if ev.label not in ordered:
            continue
        a = ev.sample_index + offset
        if a < edge or a + length > rec.n_samples - edge:
            dropped += 1
            continue
        trials.append(rec.samples[:, a:a + length])
        labels.append(ordered.index(ev.label))
    if dropped:
        log.warning("dropped %d trial(s) with windows outside the usable recording", dropped)
    if not trials:
        raise NoTrials("no trial window fits inside the recording")
    return EpochSet(np.stack(trials), np.array(labels), fs)


def filter_bank(rec: Recording, bands) -> list[Recording]:
    bands = [as_band(b) for b in bands]
    if not bands:
        raise InvalidBand("at least one band is required")
    return [apply_filter(rec, design_bandpass(b, rec.sampling_rate_hz)) for b in bands]


@dataclass(frozen=True)
class ParadigmConfig:
    bands: tuple = (BandSpec(*DEFAULT_BAND),)
    resample_hz: float = DEFAULT_RESAMPLE_HZ
    # dataset id -> (start, end) overriding the descriptor's window
    epoch_window_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        bands = tuple(as_band(b) for b in self.bands)
        if not bands:
            raise InvalidSpec("paradigm needs at least one band")
        if not float(self.resample_hz) > 0:
            raise InvalidSpec("resample_hz must be positive")
        overrides = {}
        for k, w in self.epoch_window_overrides.items():
            start, end = (float(v) for v in w)
            if not end > start:
                raise InvalidSpec(f"epoch window for {k} must have end > start")
            overrides[str(k)] = (start, end)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "resample_hz", float(self.resample_hz))
        object.__setattr__(self, "epoch_window_overrides", overrides)

    def window_for(self, descriptor) -> tuple[float, float]:
        return self.epoch_window_overrides.get(descriptor.dataset_id, descriptor.epoch_window_s)

    def to_dict(self) -> dict:
        return {
            "bands": [b.as_list() for b in self.bands],
            "resample_hz": self.resample_hz,
            "epoch_window_s": {k: list(v) for k, v in sorted(self.epoch_window_overrides.items())},
        }


def load_paradigm(path) -> ParadigmConfig:
    """Read a paradigm file with keys ``bands``, ``resample_hz``, ``epoch_window_s``.

    ``epoch_window_s`` maps dataset ids to [start, end] overrides.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidSpec(f"{path}: expected a mapping")
    unknown = set(raw) - {"bands", "resample_hz", "epoch_window_s"}
    if unknown:
        raise InvalidSpec(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return ParadigmConfig(
            bands=tuple(BandSpec(*b) for b in raw.get("bands", [DEFAULT_BAND])),
            resample_hz=raw.get("resample_hz", DEFAULT_RESAMPLE_HZ),
            epoch_window_overrides=raw.get("epoch_window_s") or {},
        )
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(f"{path}: {exc}") from None


def prepare(rec: Recording, bands, resample_hz: float, window_s, classes) -> list[EpochSet]:
    """Filter, resample and epoch ``rec`` once per band.

    Every band uses the same kernel length, so the same trials survive the
    edge rule in each band.
    """
    kernels = [design_bandpass(b, rec.sampling_rate_hz) for b in bands]
    edge_s = kernels[0].half_length / rec.sampling_rate_hz
    return [
        epoch(resample(apply_filter(rec, k), resample_hz), window_s, classes, edge_s)
        for k in kernels
    ]
