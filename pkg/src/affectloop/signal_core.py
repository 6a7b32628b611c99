"""Deterministic EEG preprocessing: filtering, bad-channel handling,
re-referencing, windowing, and band-power extraction.

All operations work on 32-channel data in microvolts. Offline filtering is
zero-phase (forward-backward); the online path keeps per-channel filter state
so a stream can be processed block by block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import signal as sps

N_CHANNELS = 32
DEFAULT_SAMPLE_RATE = 250.0

# (name, low, high) in Hz; half-open [low, high) so 7 Hz belongs to alpha only.
BANDS = (("theta", 4.0, 7.0), ("alpha", 7.0, 15.0), ("beta", 15.0, 30.0))
N_BANDS = len(BANDS)

BANDPASS_LOW = 1.0
BANDPASS_HIGH = 40.0
FILTER_ORDER = 4

AMPLITUDE_LIMIT_UV = 200.0
FLATNESS_EPS_UV = 1e-6
FLATNESS_SPAN_S = 5.0
HF_NOISE_BAND = (20.0, 40.0)
HF_NOISE_Z_THRESHOLD = 4.0

# 10-20 labels in the order of the headset's channel list.
CHANNEL_LABELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FT9", "FC5", "FC1",
    "FC2", "FC6", "FT10", "T7", "C3", "Cz", "C4", "T8", "TP9", "CP5",
    "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "POz",
    "O1", "O2",
)

# Idealized 10-20 sphere: (inclination from vertex, azimuth from nose) in
# degrees, azimuth positive toward the right ear.
_MONTAGE_ANGLES = {
    "Fp1": (72, -18), "Fp2": (72, 18),
    "F7": (72, -54), "F3": (48, -40), "Fz": (36, 0), "F4": (48, 40),
    "F8": (72, 54),
    "FT9": (100, -72), "FC5": (66, -72), "FC1": (32, -45),
    "FC2": (32, 45), "FC6": (66, 72), "FT10": (100, 72),
    "T7": (90, -90), "C3": (36, -90), "Cz": (0, 0), "C4": (36, 90),
    "T8": (90, 90),
    "TP9": (100, -108), "CP5": (66, -108), "CP1": (32, -135),
    "CP2": (32, 135), "CP6": (66, 108), "TP10": (100, 108),
    "P7": (72, -126), "P3": (48, -140), "Pz": (36, 180), "P4": (48, 140),
    "P8": (72, 126),
    "POz": (54, 180), "O1": (72, -162), "O2": (72, 162),
}


class FilterBandError(ValueError):
    """Requested filter band is outside what the sample rate supports."""


class InsufficientHistoryError(ValueError):
    """Bad-channel detection was asked to run on too little data."""


class UnrecoverableEpochError(ValueError):
    """Every channel is bad; interpolation has no sources."""


@dataclass(frozen=True)
class ChannelMontage:
    """32 channel labels plus unit-sphere electrode positions."""

    labels: tuple[str, ...]
    positions: np.ndarray  # (32, 3), unit norm

    def __post_init__(self):
        if len(self.labels) != N_CHANNELS:
            raise ValueError(f"montage needs {N_CHANNELS} labels, got {len(self.labels)}")
        if len(set(self.labels)) != N_CHANNELS:
            raise ValueError("montage labels must be unique")
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (N_CHANNELS, 3):
            raise ValueError(f"positions must be ({N_CHANNELS}, 3), got {pos.shape}")
        norms = np.linalg.norm(pos, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("electrode positions must lie on the unit sphere")
        object.__setattr__(self, "positions", pos)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @classmethod
    def from_csv(cls, path: str) -> "ChannelMontage":
        """Load a montage from a CSV with columns label,x,y,z."""
        labels, rows = [], []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                labels.append(rec["label"])
                rows.append([float(rec["x"]), float(rec["y"]), float(rec["z"])])
        return cls(tuple(labels), np.array(rows))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "x", "y", "z"])
            for lab, (x, y, z) in zip(self.labels, self.positions):
                w.writerow([lab, repr(float(x)), repr(float(y)), repr(float(z))])


def default_montage() -> ChannelMontage:
    """The built-in idealized 10-20 montage for the 32 headset channels."""
    pos = np.empty((N_CHANNELS, 3))
    for i, lab in enumerate(CHANNEL_LABELS):
        inc, az = _MONTAGE_ANGLES[lab]
        inc, az = math.radians(inc), math.radians(az)
        pos[i] = (math.sin(inc) * math.sin(az),
                  math.sin(inc) * math.cos(az),
                  math.cos(inc))
    return ChannelMontage(CHANNEL_LABELS, pos)


@dataclass(frozen=True)
class EegFrame:
    """One timestamped 32-channel sample (microvolts)."""

    timestamp: float
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.shape != (N_CHANNELS,):
            raise ValueError(f"frame needs {N_CHANNELS} samples, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or not math.isfinite(self.timestamp):
            raise ValueError("frame contains non-finite values")
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True)
class EegEpoch:
    """Contiguous window of samples, channels x samples (microvolts)."""

    start_time: float
    sample_rate: float
    data: np.ndarray  # (32, n)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != N_CHANNELS:
            raise ValueError(f"epoch data must be ({N_CHANNELS}, n), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("epoch contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class BandPowerWindow:
    """Per-window 32x3 band powers (uV^2) plus which channels were interpolated."""

    window_start: float
    powers: np.ndarray  # (32, 3): theta, alpha, beta
    bad_channels: frozenset[int] = frozenset()

    def __post_init__(self):
        arr = np.asarray(self.powers, dtype=float)
        if arr.shape != (N_CHANNELS, N_BANDS):
            raise ValueError(f"powers must be ({N_CHANNELS}, {N_BANDS}), got {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("band powers must be finite and nonnegative")
        object.__setattr__(self, "powers", arr)
        object.__setattr__(self, "bad_channels", frozenset(self.bad_channels))


def _design_bandpass(low: float, high: float, sample_rate: float) -> np.ndarray:
    if not (0.0 < low < high < sample_rate / 2.0):
        raise FilterBandError(
            f"band [{low}, {high}] Hz invalid for sample rate {sample_rate} Hz")
    return sps.butter(FILTER_ORDER, [low, high], btype="bandpass",
                      fs=sample_rate, output="sos")


def bandpass(epoch: EegEpoch, low: float = BANDPASS_LOW,
             high: float = BANDPASS_HIGH) -> EegEpoch:
    """Zero-phase 4th-order Butterworth bandpass (offline mode)."""
    sos = _design_bandpass(low, high, epoch.sample_rate)
    out = sps.sosfiltfilt(sos, epoch.data, axis=1)
    return EegEpoch(epoch.start_time, epoch.sample_rate, out)


class OnlineBandpass:
    """Causal 4th-order Butterworth bandpass with persistent per-channel state.

    One instance belongs to exactly one stream; feed blocks in order. Not
    safe to share across threads without external serialization.
    """

    def __init__(self, low: float = BANDPASS_LOW, high: float = BANDPASS_HIGH,
                 sample_rate: float = DEFAULT_SAMPLE_RATE):
        self.sos = _design_bandpass(low, high, sample_rate)
        self.sample_rate = sample_rate
        zi = sps.sosfilt_zi(self.sos)  # (n_sections, 2)
        self._zi = np.repeat(zi[:, np.newaxis, :], N_CHANNELS, axis=1) * 0.0

    def process(self, block: np.ndarray) -> np.ndarray:
        """Filter a (32, n) block, carrying state across calls."""
        block = np.asarray(block, dtype=float)
        if block.ndim != 2 or block.shape[0] != N_CHANNELS:
            raise ValueError(f"block must be ({N_CHANNELS}, n)")
        if not np.all(np.isfinite(block)):
            raise ValueError("block contains non-finite samples")
        out, self._zi = sps.sosfilt(self.sos, block, axis=1, zi=self._zi)
        return out

    def process_epoch(self, epoch: EegEpoch) -> EegEpoch:
        if epoch.sample_rate != self.sample_rate:
            raise ValueError("epoch sample rate does not match filter design")
        return EegEpoch(epoch.start_time, epoch.sample_rate,
                        self.process(epoch.data))


def clamp_amplitude(epoch: EegEpoch,
                    limit: float = AMPLITUDE_LIMIT_UV) -> tuple[EegEpoch, int]:
    """Clip samples to +-limit uV; returns (epoch, number of clipped samples).

    Stands in for the commercial artifact-subspace step: extreme transients
    are bounded so they cannot dominate band powers downstream.
    """
    mask = np.abs(epoch.data) > limit
    n_clipped = int(mask.sum())
    if n_clipped == 0:
        return epoch, 0
    out = np.clip(epoch.data, -limit, limit)
    return EegEpoch(epoch.start_time, epoch.sample_rate, out), n_clipped


def _concat_history(recent: EegEpoch | Sequence[EegEpoch]) -> EegEpoch:
    if isinstance(recent, EegEpoch):
        return recent
    epochs = list(recent)
    if not epochs:
        raise InsufficientHistoryError("empty epoch history")
    data = np.concatenate([e.data for e in epochs], axis=1)
    return EegEpoch(epochs[0].start_time, epochs[0].sample_rate, data)


def detect_bad_channels(recent: EegEpoch | Sequence[EegEpoch]) -> set[int]:
    """Flag channels that are flat for >= 5 s or carry outlier 20-40 Hz noise.

    Rule (a): sample standard deviation below FLATNESS_EPS_UV over any
    contiguous 5 s stretch. Rule (b): robust z-score (median/MAD across
    channels) of the 20-40 Hz residual standard deviation exceeds 4.
    """
    hist = _concat_history(recent)
    fs = hist.sample_rate
    n5 = int(round(FLATNESS_SPAN_S * fs))
    if hist.n_samples < n5:
        raise InsufficientHistoryError(
            f"need >= {FLATNESS_SPAN_S} s of history, got {hist.duration:.3f} s")

    bad: set[int] = set()

    # Rule (a): scan every 5 s window with a cumulative-sum variance at a
    # loose threshold, then confirm candidates with an exact two-pass std.
    # The cumsum shortcut alone cannot resolve 1e-12 uV^2 against rounding
    # noise, so it only nominates windows.
    x = hist.data - hist.data.mean(axis=1, keepdims=True)
    zeros = np.zeros((N_CHANNELS, 1))
    s1 = np.concatenate([zeros, np.cumsum(x, axis=1)], axis=1)
    s2 = np.concatenate([zeros, np.cumsum(x * x, axis=1)], axis=1)
    win_sum = s1[:, n5:] - s1[:, :-n5]
    win_sumsq = s2[:, n5:] - s2[:, :-n5]
    var = np.maximum(win_sumsq / n5 - (win_sum / n5) ** 2, 0.0)
    for ch in range(N_CHANNELS):
        for i in np.flatnonzero(var[ch] < 1e-8):
            if x[ch, i:i + n5].std() < FLATNESS_EPS_UV:
                bad.add(ch)
                break

    # Rule (b): high-frequency residual SD, robust-z across channels.
    lo, hi = HF_NOISE_BAND
    hi = min(hi, fs / 2.0 * 0.99)
    sos = _design_bandpass(lo, hi, fs)
    resid = sps.sosfiltfilt(sos, x, axis=1)
    sd = resid.std(axis=1)
    med = float(np.median(sd))
    mad = float(np.median(np.abs(sd - med)))
    scale = max(1.4826 * mad, 1e-12)
    z = (sd - med) / scale
    bad.update(np.flatnonzero(z > HF_NOISE_Z_THRESHOLD).tolist())
    return bad


def interpolate(epoch: EegEpoch, bad: Iterable[int],
                montage: ChannelMontage) -> EegEpoch:
    """Replace bad channels by inverse-squared-spherical-distance averages.

    Each bad channel becomes, sample by sample, the weighted mean of all
    good channels with weights 1/d^2 over great-circle distance d. Good
    channels pass through untouched.
    """
    bad = sorted(set(int(b) for b in bad))
    if not bad:
        return epoch
    if any(b < 0 or b >= N_CHANNELS for b in bad):
        raise ValueError(f"bad channel indices out of range: {bad}")
    if len(bad) >= N_CHANNELS:
        raise UnrecoverableEpochError("all channels bad; nothing to interpolate from")

    good = [i for i in range(N_CHANNELS) if i not in bad]
    pos = montage.positions
    out = epoch.data.copy()
    for b in bad:
        cosang = np.clip(pos[good] @ pos[b], -1.0, 1.0)
        dist = np.arccos(cosang)
        w = 1.0 / np.maximum(dist, 1e-9) ** 2
        out[b] = (w @ epoch.data[good]) / w.sum()
    return EegEpoch(epoch.start_time, epoch.sample_rate, out)


def rereference_average(epoch: EegEpoch) -> EegEpoch:
    """Common average reference: per-sample cross-channel mean subtracted."""
    out = epoch.data - epoch.data.mean(axis=0, keepdims=True)
    return EegEpoch(epoch.start_time, epoch.sample_rate, out)


def epoch_from_frames(frames: Sequence[EegFrame],
                      sample_rate: float = DEFAULT_SAMPLE_RATE) -> EegEpoch:
    """Stack time-ordered frames into one epoch."""
    if not frames:
        raise ValueError("no frames")
    ts = np.array([f.timestamp for f in frames])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    data = np.stack([f.samples for f in frames], axis=1)
    return EegEpoch(float(ts[0]), sample_rate, data)


def window_epoch(epoch: EegEpoch, window_s: float = 2.0,
                 overlap_s: float = 0.5) -> list[EegEpoch]:
    """Cut an epoch into complete windows with hop = window - overlap."""
    if not (window_s > overlap_s >= 0.0):
        raise ValueError("need window > overlap >= 0")
    fs = epoch.sample_rate
    win_n = int(round(window_s * fs))
    hop_n = int(round((window_s - overlap_s) * fs))
    out = []
    k = 0
    while k * hop_n + win_n <= epoch.n_samples:
        i = k * hop_n
        out.append(EegEpoch(epoch.start_time + i / fs, fs,
                            epoch.data[:, i:i + win_n]))
        k += 1
    return out


def window_stream(frames: Sequence[EegFrame], window_s: float = 2.0,
                  overlap_s: float = 0.5,
                  sample_rate: float = DEFAULT_SAMPLE_RATE) -> list[EegEpoch]:
    """Window a frame stream; a stream shorter than one window yields []."""
    if not (window_s > overlap_s >= 0.0):
        raise ValueError("need window > overlap >= 0")
    if len(frames) < int(round(window_s * sample_rate)):
        return []
    return window_epoch(epoch_from_frames(frames, sample_rate), window_s, overlap_s)


def extract_band_powers(epoch: EegEpoch, window_s: float = 2.0,
                        bad_channels: Iterable[int] = (),
                        bands: Sequence[tuple[str, float, float]] = BANDS
                        ) -> BandPowerWindow:
    """Welch band powers (uV^2) per channel over theta/alpha/beta.

    Welch uses 1 s Hann segments with 50% overlap, giving 1 Hz resolution
    inside the 2 s window; band edges are half-open [lo, hi).
    """
    if len(bands) != N_BANDS:
        raise ValueError(f"need exactly {N_BANDS} bands, got {len(bands)}")
    fs = epoch.sample_rate
    expected = int(round(window_s * fs))
    if epoch.n_samples != expected:
        raise ValueError(
            f"epoch has {epoch.n_samples} samples, expected {expected} "
            f"({window_s} s at {fs} Hz)")
    nperseg = min(int(round(fs)), epoch.n_samples)
    freqs, psd = sps.welch(epoch.data, fs=fs, window="hann",
                           nperseg=nperseg, noverlap=nperseg // 2, axis=1)
    df = freqs[1] - freqs[0]
    powers = np.empty((N_CHANNELS, N_BANDS))
    for j, (_, lo, hi) in enumerate(bands):
        if not lo < hi:
            raise ValueError(f"band edges must ascend, got [{lo}, {hi})")
        mask = (freqs >= lo) & (freqs < hi)
        powers[:, j] = psd[:, mask].sum(axis=1) * df
    return BandPowerWindow(epoch.start_time, powers, frozenset(bad_channels))


def write_replay_csv(path: str, epoch: EegEpoch) -> None:
    """Write a stream as CSV with header time,ch01..ch32 (seconds, uV).

    Values are fixed to 4 decimals: 0.1 ms timing and 0.1 nV amplitude,
    far below anything the pipeline can resolve.
    """
    fs = epoch.sample_rate
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"ch{i + 1:02d}" for i in range(N_CHANNELS)])
        for i in range(epoch.n_samples):
            t = epoch.start_time + i / fs
            w.writerow([f"{t:.4f}"] + [f"{v:.4f}" for v in epoch.data[:, i]])


def read_replay_csv(path: str) -> tuple[np.ndarray, np.ndarray, int]:
    """Read a replay CSV; returns (times, samples (n, 32), skipped_rows).

    Malformed rows (wrong field count, unparseable or non-finite values)
    are skipped and counted, never fatal.
    """
    times, rows, skipped = [], [], 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.empty(0), np.empty((0, N_CHANNELS)), 0
        for rec in reader:
            if len(rec) != N_CHANNELS + 1:
                skipped += 1
                continue
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                skipped += 1
                continue
            if not all(math.isfinite(v) for v in vals):
                skipped += 1
                continue
            times.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        return np.empty(0), np.empty((0, N_CHANNELS)), skipped
    return np.array(times), np.array(rows), skipped


def total_band_power(epoch: EegEpoch, lo: float = 1.0, hi: float = 40.0,
                     window_s: float = 2.0) -> np.ndarray:
    """Welch power over [lo, hi) per channel, same estimator as the bands."""
    fs = epoch.sample_rate
    nperseg = min(int(round(fs)), epoch.n_samples)
    freqs, psd = sps.welch(epoch.data, fs=fs, window="hann",
                           nperseg=nperseg, noverlap=nperseg // 2, axis=1)
    df = freqs[1] - freqs[0]
    mask = (freqs >= lo) & (freqs < hi)
    return psd[:, mask].sum(axis=1) * df
