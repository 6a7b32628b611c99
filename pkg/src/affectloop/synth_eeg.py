"""Ground-truth synthetic EEG so the full pipeline is verifiable without
human subjects.

Each stimulus segment is per-channel 1/f noise plus three band-limited
components (theta, alpha, beta). Affect classes scale component amplitudes:
arousal drives the frontal beta gain, valence an F4-vs-F3 alpha asymmetry.
At strength 0 every gain collapses to 1 and the labels carry no information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .features_ml import AffectClass
from .signal_core import CHANNEL_LABELS, N_CHANNELS, EegEpoch, write_replay_csv

FRONTAL_CHANNELS = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8")

# Generator bands deliberately sit inside the feature bands but clear of the
# 20-40 Hz bad-channel detector, so boosted channels never read as noisy.
COMPONENT_BANDS = {"theta": (4.0, 7.0), "alpha": (8.0, 13.0), "beta": (15.0, 19.0)}

CLASS_TO_SAM = {AffectClass.Low: 1, AffectClass.Neutral: 3, AffectClass.High: 5}

ARTIFACT_KINDS = ("flat", "hf_noise", "spike")
LABELS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AffectSignature:
    """Band-gain multipliers tying affect classes to spectral structure."""

    frontal_channels: tuple[str, ...] = FRONTAL_CHANNELS
    arousal_beta_gain: float = 2.0
    valence_alpha_gain: float = 2.0

    def __post_init__(self):
        if self.arousal_beta_gain <= 0 or self.valence_alpha_gain <= 0:
            raise ValueError("gains must be positive")
        unknown = set(self.frontal_channels) - set(CHANNEL_LABELS)
        if unknown:
            raise ValueError(f"unknown channels: {sorted(unknown)}")


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: float = 250.0
    base_amplitude_uv: float = 10.0
    # Band components at 0.3x the base RMS keep the overall 1/f slope near -1
    # while leaving the gains plenty of headroom over the noise floor.
    component_ratio: float = 0.3
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must be in [0, 1]")
        if self.base_amplitude_uv <= 0 or self.sample_rate <= 0:
            raise ValueError("amplitude and sample rate must be positive")
        if self.component_ratio < 0:
            raise ValueError("component_ratio must be nonnegative")


@dataclass(frozen=True)
class StimulusTruth:
    stimulus_id: int  # 1-based
    start: float
    duration: float
    arousal: AffectClass
    valence: AffectClass
    sam_arousal: int
    sam_valence: int


@dataclass(frozen=True)
class ArtifactEvent:
    kind: str
    channel: int
    start: float
    duration: float
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"kind must be one of {ARTIFACT_KINDS}")
        if not 0 <= self.channel < N_CHANNELS:
            raise ValueError("channel out of range")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")


@dataclass(frozen=True)
class SynthSession:
    """One generated stream plus its ground truth."""

    epoch: EegEpoch
    stimuli: tuple[StimulusTruth, ...]
    artifacts: tuple[ArtifactEvent, ...] = ()
    config: SynthConfig = field(default_factory=SynthConfig)


def _pink_noise(rng: np.random.Generator, n: int, fs: float, rms: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    amp = np.zeros_like(f)
    amp[1:] = 1.0 / np.sqrt(f[1:])  # power spectral density ~ 1/f
    x = np.fft.irfft(spec * amp, n=n)
    return x * (rms / x.std())


def _band_noise(rng: np.random.Generator, n: int, fs: float,
                lo: float, hi: float, rms: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x * (rms / x.std())


def _class_direction(cls: AffectClass) -> float:
    return float(int(cls))  # Low -1, Neutral 0, High +1


def generate_session(labels: Sequence[tuple[AffectClass, AffectClass]],
                     duration_s: float = 10.0,
                     signature: AffectSignature | None = None,
                     config: SynthConfig | None = None) -> SynthSession:
    """Generate one contiguous stream, one segment per (arousal, valence).

    Deterministic given config.seed. Segment k occupies
    [k*duration_s, (k+1)*duration_s).
    """
    signature = signature or AffectSignature()
    config = config or SynthConfig()
    if not labels:
        raise ValueError("need at least one stimulus label pair")
    if duration_s <= 0:
        raise ValueError("duration must be positive")

    fs = config.sample_rate
    n_seg = int(round(duration_s * fs))
    rng = np.random.default_rng(config.seed)
    frontal = [CHANNEL_LABELS.index(c) for c in signature.frontal_channels]
    i_f3 = CHANNEL_LABELS.index("F3")
    i_f4 = CHANNEL_LABELS.index("F4")
    base = config.base_amplitude_uv
    comp = config.component_ratio * base
    s = config.strength

    segments = []
    stimuli = []
    for k, (arousal, valence) in enumerate(labels):
        g_beta = signature.arousal_beta_gain ** (s * _class_direction(arousal))
        g_alpha = signature.valence_alpha_gain ** (s * _class_direction(valence))
        data = np.empty((N_CHANNELS, n_seg))
        for ch in range(N_CHANNELS):
            beta_gain = g_beta if ch in frontal else 1.0
            if ch == i_f4:
                alpha_gain = g_alpha
            elif ch == i_f3:
                alpha_gain = 1.0 / g_alpha
            else:
                alpha_gain = 1.0
            x = _pink_noise(rng, n_seg, fs, base)
            x += _band_noise(rng, n_seg, fs, *COMPONENT_BANDS["theta"], comp)
            x += alpha_gain * _band_noise(rng, n_seg, fs, *COMPONENT_BANDS["alpha"], comp)
            x += beta_gain * _band_noise(rng, n_seg, fs, *COMPONENT_BANDS["beta"], comp)
            data[ch] = x
        segments.append(data)
        stimuli.append(StimulusTruth(
            stimulus_id=k + 1, start=k * duration_s, duration=duration_s,
            arousal=arousal, valence=valence,
            sam_arousal=CLASS_TO_SAM[arousal], sam_valence=CLASS_TO_SAM[valence]))

    epoch = EegEpoch(0.0, fs, np.concatenate(segments, axis=1))
    return SynthSession(epoch, tuple(stimuli), (), config)


def inject_artifacts(session: SynthSession, events: Sequence[ArtifactEvent],
                     rng: np.random.Generator | None = None) -> SynthSession:
    """Overlay artifacts and extend the ground-truth log."""
    if rng is None:
        rng = np.random.default_rng(session.config.seed + 1)
    epoch = session.epoch
    fs = epoch.sample_rate
    data = epoch.data.copy()
    for ev in events:
        i0 = int(round((ev.start - epoch.start_time) * fs))
        i1 = i0 + max(int(round(ev.duration * fs)), 1)
        if i0 < 0 or i1 > epoch.n_samples:
            raise ValueError(f"artifact [{ev.start}, {ev.start + ev.duration}) "
                             "outside the stream")
        if ev.kind == "flat":
            data[ev.channel, i0:i1] = data[ev.channel, i0]
        elif ev.kind == "hf_noise":
            rms = data[ev.channel].std() * ev.magnitude
            data[ev.channel, i0:i1] += _band_noise(rng, i1 - i0, fs, 20.0,
                                                   min(40.0, fs / 2 * 0.99), rms)
        else:  # spike
            data[ev.channel, i0:i1] += ev.magnitude
    new_epoch = EegEpoch(epoch.start_time, fs, data)
    return replace(session, epoch=new_epoch,
                   artifacts=session.artifacts + tuple(events))


# ------------------------------------------------------------- file I/O

def write_session(csv_path: str, labels_path: str, session: SynthSession) -> None:
    """Replay CSV plus the labels JSON sidecar."""
    write_replay_csv(csv_path, session.epoch)
    doc = {
        "v": LABELS_SCHEMA_VERSION,
        "sample_rate": session.config.sample_rate,
        "strength": session.config.strength,
        "seed": session.config.seed,
        "stimuli": [
            {"id": st.stimulus_id, "start": st.start, "duration": st.duration,
             "arousal": st.arousal.name, "valence": st.valence.name,
             "sam_arousal": st.sam_arousal, "sam_valence": st.sam_valence}
            for st in session.stimuli
        ],
        "artifacts": [
            {"kind": ev.kind, "channel": ev.channel, "start": ev.start,
             "duration": ev.duration, "magnitude": ev.magnitude}
            for ev in session.artifacts
        ],
    }
    with open(labels_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_labels(labels_path: str) -> dict:
    """Parse the sidecar; returns sample_rate, stimuli, artifacts."""
    with open(labels_path) as fh:
        doc = json.load(fh)
    if doc.get("v") != LABELS_SCHEMA_VERSION:
        raise ValueError(f"unsupported labels schema version: {doc.get('v')!r}")
    stimuli = tuple(
        StimulusTruth(int(d["id"]), float(d["start"]), float(d["duration"]),
                      AffectClass[d["arousal"]], AffectClass[d["valence"]],
                      int(d["sam_arousal"]), int(d["sam_valence"]))
        for d in doc["stimuli"])
    artifacts = tuple(
        ArtifactEvent(d["kind"], int(d["channel"]), float(d["start"]),
                      float(d["duration"]), float(d["magnitude"]))
        for d in doc.get("artifacts", ()))
    return {"sample_rate": float(doc["sample_rate"]),
            "strength": float(doc["strength"]), "seed": int(doc["seed"]),
            "stimuli": stimuli, "artifacts": artifacts}


def balanced_label_sequence(n: int) -> list[tuple[AffectClass, AffectClass]]:
    """Cycle the 9 (arousal, valence) pairs so every class is well covered."""
    if n < 1:
        raise ValueError("need at least one stimulus")
    pairs = [(a, v) for a in (AffectClass.Low, AffectClass.Neutral, AffectClass.High)
             for v in (AffectClass.Low, AffectClass.Neutral, AffectClass.High)]
    return [pairs[i % len(pairs)] for i in range(n)]
