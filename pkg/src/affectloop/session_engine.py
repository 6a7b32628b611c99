"""Four-phase experiment protocol as a deterministic state machine, plus the
orchestration that ties the EEG pipeline to it.

The state machine itself (advance) is a pure function over immutable values;
SessionEngine wraps it with a stream buffer, model fitting, debounced online
classification, prediction sinks, and an append-only trial log.
"""

from __future__ import annotations

import json
import threading
import time
import warnings
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .design_space import DesignConfig, config_from_dict, config_to_dict
from .features_ml import (
    DEFAULT_C,
    DEFAULT_K_FEATURES,
    AffectClass,
    CvReport,
    EcocModel,
    FeatureVector,
    SamRating,
    band_powers_to_features,
    evaluate,
    predict,
    sam_to_class,
    train_ecoc,
)
from .signal_core import (
    BANDS,
    ChannelMontage,
    EegEpoch,
    EegFrame,
    bandpass,
    clamp_amplitude,
    default_montage,
    detect_bad_channels,
    extract_band_powers,
    interpolate,
    rereference_average,
    window_epoch,
)
from .stream_gateway import LineIngestor, PredictionMessage, emit_prediction

N_TRAINING_STIMULI = 49
N_PROBES_PER_KIND = 6
N_FREE_DESIGNS = 3
ONLINE_WINDOW_OFFSET_S = 0.5
ONLINE_WINDOW_S = 2.0
LATENCY_BUDGET_S = 3.0
DEBOUNCE_S = 0.5
BAD_CHANNEL_HISTORY_S = 6.0

PHASES = ("Idle", "Training", "Fitting", "Validation", "FreeDesign", "Done")
RECORD_KINDS = ("TrainingStimulus", "AgreeProbe", "SamProbe", "FreeChange")


class IllegalEventError(ValueError):
    """Event is not legal in the current phase; state was not changed."""


@dataclass(frozen=True)
class StimulusRecord:
    """Presentation metadata for one training stimulus (images are abstract)."""

    stimulus_id: int  # 1-based
    label: str
    description: str
    judge_arousal: float  # averaged SAM ratings, 1-5
    judge_valence: float

    def __post_init__(self):
        if not 1 <= self.stimulus_id <= N_TRAINING_STIMULI:
            raise ValueError("stimulus_id must be in 1..49")
        for name in ("judge_arousal", "judge_valence"):
            if not 1.0 <= getattr(self, name) <= 5.0:
                raise ValueError(f"{name} must be in [1, 5]")


_CLASS_WORDS = {AffectClass.Low: ("calm", 2.0), AffectClass.Neutral: ("neutral", 3.0),
                AffectClass.High: ("intense", 4.0)}
_VALENCE_WORDS = {AffectClass.Low: ("unpleasant", 2.0),
                  AffectClass.Neutral: ("plain", 3.0),
                  AffectClass.High: ("pleasant", 4.0)}


def default_stimuli() -> tuple[StimulusRecord, ...]:
    """49 stimuli cycling the nine (arousal, valence) class pairs."""
    classes = (AffectClass.Low, AffectClass.Neutral, AffectClass.High)
    pairs = [(a, v) for a in classes for v in classes]
    out = []
    for i in range(N_TRAINING_STIMULI):
        arousal, valence = pairs[i % len(pairs)]
        a_word, a_score = _CLASS_WORDS[arousal]
        v_word, v_score = _VALENCE_WORDS[valence]
        out.append(StimulusRecord(
            stimulus_id=i + 1,
            label=f"stimulus {i + 1:02d}",
            description=f"{a_word}, {v_word} panorama",
            judge_arousal=a_score, judge_valence=v_score))
    return tuple(out)


_DEFAULT_STIMULI = default_stimuli()


# ---------------------------------------------------------------- events

@dataclass(frozen=True)
class StartSession:
    t: float = 0.0


@dataclass(frozen=True)
class StimulusShown:
    stimulus_id: int
    t: float


@dataclass(frozen=True)
class EegCaptured:
    stimulus_id: int
    start: float
    duration: float
    t: float


@dataclass(frozen=True)
class SamSubmitted:
    rating: SamRating
    t: float


@dataclass(frozen=True)
class FitCompleted:
    t: float


@dataclass(frozen=True)
class DesignChanged:
    design: DesignConfig
    t: float


@dataclass(frozen=True)
class PredictionShown:
    arousal: AffectClass
    valence: AffectClass
    t: float


@dataclass(frozen=True)
class AgreeResponse:
    agree: bool
    t: float


@dataclass(frozen=True)
class SamProbeResponse:
    rating: SamRating
    t: float


@dataclass(frozen=True)
class DesignFinalized:
    t: float


SessionEvent = (StartSession | StimulusShown | EegCaptured | SamSubmitted
                | FitCompleted | DesignChanged | PredictionShown
                | AgreeResponse | SamProbeResponse | DesignFinalized)


# --------------------------------------------------------------- records

@dataclass(frozen=True)
class TrialRecord:
    """One audited protocol step."""

    kind: str
    t_event: float
    t_response: float
    stimulus_id: int | None = None
    capture_start: float | None = None
    capture_duration: float | None = None
    sam: SamRating | None = None
    predicted_arousal: AffectClass | None = None
    predicted_valence: AffectClass | None = None
    agree: bool | None = None
    design_before: DesignConfig | None = None
    design_after: DesignConfig | None = None

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"kind must be one of {RECORD_KINDS}")
        if self.t_response < self.t_event:
            raise ValueError("response cannot precede the event it answers")
        if self.kind == "TrainingStimulus" and self.sam is None:
            raise ValueError("TrainingStimulus record requires a SAM rating")
        if self.kind == "AgreeProbe" and not isinstance(self.agree, bool):
            raise ValueError("AgreeProbe record requires a boolean response")
        if self.kind == "SamProbe" and self.sam is None:
            raise ValueError("SamProbe record requires a SAM rating")


def record_to_dict(record: TrialRecord) -> dict:
    d = {"kind": record.kind, "t_event": record.t_event,
         "t_response": record.t_response}
    if record.stimulus_id is not None:
        d["stimulus_id"] = record.stimulus_id
    if record.capture_start is not None:
        d["capture_start"] = record.capture_start
        d["capture_duration"] = record.capture_duration
    if record.sam is not None:
        d["sam"] = {"arousal": record.sam.arousal, "valence": record.sam.valence}
    if record.predicted_arousal is not None:
        d["predicted_arousal"] = record.predicted_arousal.name
        d["predicted_valence"] = record.predicted_valence.name
    if record.agree is not None:
        d["agree"] = record.agree
    if record.design_before is not None:
        d["design_before"] = config_to_dict(record.design_before)
        d["design_after"] = config_to_dict(record.design_after)
    return d


def record_from_dict(d: dict) -> TrialRecord:
    sam = d.get("sam")
    return TrialRecord(
        kind=d["kind"], t_event=float(d["t_event"]),
        t_response=float(d["t_response"]),
        stimulus_id=d.get("stimulus_id"),
        capture_start=d.get("capture_start"),
        capture_duration=d.get("capture_duration"),
        sam=SamRating(int(sam["arousal"]), int(sam["valence"])) if sam else None,
        predicted_arousal=(AffectClass[d["predicted_arousal"]]
                           if "predicted_arousal" in d else None),
        predicted_valence=(AffectClass[d["predicted_valence"]]
                           if "predicted_valence" in d else None),
        agree=d.get("agree"),
        design_before=(config_from_dict(d["design_before"])
                       if "design_before" in d else None),
        design_after=(config_from_dict(d["design_after"])
                      if "design_after" in d else None),
    )


# ----------------------------------------------------------------- state

@dataclass(frozen=True)
class SessionState:
    """Immutable protocol state; advance() is the only way to move it."""

    phase: str = "Idle"
    # Training scratch
    stimulus_index: int = 0
    training_stage: str = ""
    stimulus_t: float | None = None
    capture_window: tuple[float, float] | None = None
    # Validation scratch
    next_probe: str = ""
    probe_stage: str = ""
    agree_done: int = 0
    sam_done: int = 0
    probe_t: float | None = None
    probe_design_before: DesignConfig | None = None
    predicted: tuple[AffectClass, AffectClass] | None = None
    prediction_t: float | None = None
    # FreeDesign
    design_index: int = 0
    # Shared
    design: DesignConfig = field(default_factory=DesignConfig)
    records: tuple[TrialRecord, ...] = ()

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if not 0 <= self.agree_done <= N_PROBES_PER_KIND:
            raise ValueError("agree_done out of range")
        if not 0 <= self.sam_done <= N_PROBES_PER_KIND:
            raise ValueError("sam_done out of range")
        if not 0 <= self.stimulus_index <= N_TRAINING_STIMULI:
            raise ValueError("stimulus_index out of range")
        if not 0 <= self.design_index <= N_FREE_DESIGNS:
            raise ValueError("design_index out of range")


def _illegal(state: SessionState, event) -> IllegalEventError:
    stage = state.training_stage or state.probe_stage
    where = f"{state.phase}[{stage}]" if stage else state.phase
    return IllegalEventError(
        f"event {type(event).__name__} is illegal in state {where}")


def _design_step_ok(before: DesignConfig, after: DesignConfig) -> bool:
    diffs = sum(a != b for a, b in zip(before.as_digits(), after.as_digits()))
    return diffs == 1


def advance(state: SessionState, event: SessionEvent) -> SessionState:
    """Deterministic transition table; illegal events raise, state untouched."""
    if state.phase == "Idle":
        if isinstance(event, StartSession):
            return replace(state, phase="Training", stimulus_index=1,
                           training_stage="await_stimulus")
        raise _illegal(state, event)

    if state.phase == "Training":
        k = state.stimulus_index
        if state.training_stage == "await_stimulus" and isinstance(event, StimulusShown):
            if event.stimulus_id != k:
                raise IllegalEventError(
                    f"expected stimulus {k}, got {event.stimulus_id}")
            return replace(state, training_stage="await_capture",
                           stimulus_t=event.t)
        if state.training_stage == "await_capture" and isinstance(event, EegCaptured):
            if event.stimulus_id != k:
                raise IllegalEventError(
                    f"expected capture for stimulus {k}, got {event.stimulus_id}")
            if event.duration <= 0:
                raise IllegalEventError("capture duration must be positive")
            return replace(state, training_stage="await_sam",
                           capture_window=(event.start, event.duration))
        if state.training_stage == "await_sam" and isinstance(event, SamSubmitted):
            record = TrialRecord(
                kind="TrainingStimulus", t_event=state.stimulus_t,
                t_response=event.t, stimulus_id=k,
                capture_start=state.capture_window[0],
                capture_duration=state.capture_window[1], sam=event.rating)
            nxt = replace(state, records=state.records + (record,),
                          stimulus_t=None, capture_window=None)
            if k == N_TRAINING_STIMULI:
                return replace(nxt, phase="Fitting", training_stage="",
                               stimulus_index=k)
            return replace(nxt, stimulus_index=k + 1,
                           training_stage="await_stimulus")
        raise _illegal(state, event)

    if state.phase == "Fitting":
        if isinstance(event, FitCompleted):
            return replace(state, phase="Validation", next_probe="agree",
                           probe_stage="await_change")
        raise _illegal(state, event)

    if state.phase == "Validation":
        if isinstance(event, DesignChanged):
            if state.probe_stage not in ("await_change", "await_prediction"):
                raise _illegal(state, event)
            if not _design_step_ok(state.design, event.design):
                raise IllegalEventError(
                    "design change must alter exactly one field")
            before = (state.design if state.probe_stage == "await_change"
                      else state.probe_design_before)
            return replace(state, probe_stage="await_prediction",
                           probe_t=event.t, probe_design_before=before,
                           design=event.design, predicted=None,
                           prediction_t=None)
        if state.probe_stage == "await_prediction" and isinstance(event, PredictionShown):
            if event.t < state.probe_t:
                raise IllegalEventError("prediction cannot precede the change")
            return replace(state, probe_stage="await_response",
                           predicted=(event.arousal, event.valence),
                           prediction_t=event.t)
        if state.probe_stage == "await_response" and isinstance(
                event, (AgreeResponse, SamProbeResponse)):
            if isinstance(event, AgreeResponse):
                if state.next_probe != "agree":
                    raise IllegalEventError(
                        "probes alternate: a SAM probe is due, not an agree probe")
                record = TrialRecord(
                    kind="AgreeProbe", t_event=state.probe_t,
                    t_response=event.t,
                    predicted_arousal=state.predicted[0],
                    predicted_valence=state.predicted[1], agree=event.agree,
                    design_before=state.probe_design_before,
                    design_after=state.design)
                nxt = replace(state, agree_done=state.agree_done + 1,
                              next_probe="sam",
                              records=state.records + (record,))
            else:
                if state.next_probe != "sam":
                    raise IllegalEventError(
                        "probes alternate: an agree probe is due, not a SAM probe")
                record = TrialRecord(
                    kind="SamProbe", t_event=state.probe_t,
                    t_response=event.t, sam=event.rating,
                    predicted_arousal=state.predicted[0],
                    predicted_valence=state.predicted[1],
                    design_before=state.probe_design_before,
                    design_after=state.design)
                nxt = replace(state, sam_done=state.sam_done + 1,
                              next_probe="agree",
                              records=state.records + (record,))
            nxt = replace(nxt, probe_stage="await_change", probe_t=None,
                          probe_design_before=None, predicted=None,
                          prediction_t=None)
            if (nxt.agree_done == N_PROBES_PER_KIND
                    and nxt.sam_done == N_PROBES_PER_KIND):
                return replace(nxt, phase="FreeDesign", design_index=1,
                               next_probe="", probe_stage="")
            return nxt
        raise _illegal(state, event)

    if state.phase == "FreeDesign":
        if isinstance(event, DesignChanged):
            if not _design_step_ok(state.design, event.design):
                raise IllegalEventError(
                    "design change must alter exactly one field")
            record = TrialRecord(kind="FreeChange", t_event=event.t,
                                 t_response=event.t,
                                 design_before=state.design,
                                 design_after=event.design)
            return replace(state, design=event.design,
                           records=state.records + (record,))
        if isinstance(event, DesignFinalized):
            if state.design_index == N_FREE_DESIGNS:
                return replace(state, phase="Done")
            return replace(state, design_index=state.design_index + 1)
        raise _illegal(state, event)

    raise _illegal(state, event)  # Done accepts nothing


def state_to_dict(state: SessionState) -> dict:
    prompt = None
    if (state.phase == "Validation" and state.probe_stage == "await_response"
            and state.predicted is not None):
        if state.next_probe == "agree":
            prompt = agree_prompt_text(*state.predicted)
        else:
            prompt = SAM_PROBE_PROMPT
    stimulus = None
    if state.phase == "Training" and 1 <= state.stimulus_index <= N_TRAINING_STIMULI:
        rec = _DEFAULT_STIMULI[state.stimulus_index - 1]
        stimulus = {"label": rec.label, "description": rec.description}
    return {
        "phase": state.phase,
        "stimulus_index": state.stimulus_index,
        "training_stage": state.training_stage,
        "stimulus_t": state.stimulus_t,
        "stimulus": stimulus,
        "next_probe": state.next_probe,
        "probe_stage": state.probe_stage,
        "agree_done": state.agree_done,
        "sam_done": state.sam_done,
        "design_index": state.design_index,
        "design": config_to_dict(state.design),
        "n_records": len(state.records),
        "prompt": prompt,
        "totals": {"training": N_TRAINING_STIMULI,
                   "probes_per_kind": N_PROBES_PER_KIND,
                   "free_designs": N_FREE_DESIGNS},
    }


# ------------------------------------------------------------ prompt text

SAM_PROBE_PROMPT = ("How does this design change make you feel? "
                    "Rate arousal and valence from 1 to 5.")


def agree_prompt_text(arousal: AffectClass, valence: AffectClass) -> str:
    """Deterministic agree-probe wording for a predicted class pair."""
    words = []
    if arousal is AffectClass.High:
        words.append("excited")
    elif arousal is AffectClass.Low:
        words.append("calm")
    if valence is AffectClass.High:
        words.append("positive")
    elif valence is AffectClass.Low:
        words.append("negative")
    feeling = " and ".join(words) if words else "no strong feeling"
    return (f"Your AI companion thinks you would feel {feeling} about this "
            "design change, do you agree? (Yes/No)")


# ------------------------------------------------------------ fit + classify

@dataclass(frozen=True)
class AffectModelPair:
    """Per-axis models plus their offline CV reports and the feature table."""

    arousal: EcocModel
    valence: EcocModel
    arousal_report: CvReport
    valence_report: CvReport
    dataset: tuple[tuple[float, np.ndarray, AffectClass, AffectClass], ...]


def preprocess_capture(epoch: EegEpoch, montage: ChannelMontage,
                       window_s: float = 2.0, overlap_s: float = 0.5,
                       bands: Sequence = BANDS) -> tuple[list, set[int], int]:
    """Clamp, filter, repair, re-reference, window, and extract band powers.

    Returns (band-power windows, bad channels, clipped sample count).
    """
    clamped, n_clipped = clamp_amplitude(epoch)
    filtered = bandpass(clamped)
    bad = detect_bad_channels(filtered)
    repaired = interpolate(filtered, bad, montage)
    referenced = rereference_average(repaired)
    windows = [extract_band_powers(w, window_s=window_s, bad_channels=bad,
                                   bands=bands)
               for w in window_epoch(referenced, window_s, overlap_s)]
    return windows, bad, n_clipped


def fit_models(records: Sequence[TrialRecord],
               eeg: EegEpoch | Callable[[float, float], EegEpoch | None],
               montage: ChannelMontage | None = None,
               k_features: int = DEFAULT_K_FEATURES,
               C: float = DEFAULT_C, n_folds: int = 5,
               window_s: float = 2.0, overlap_s: float = 0.5,
               bands: Sequence = BANDS) -> AffectModelPair:
    """Train both axis models from Training-phase records and their EEG.

    eeg is either the whole session stream or a slicer(start, duration).
    Only TrainingStimulus captures are touched: validation EEG never enters
    the training statistics.
    """
    montage = montage or default_montage()
    if isinstance(eeg, EegEpoch):
        whole = eeg

        def slicer(start: float, duration: float) -> EegEpoch | None:
            fs = whole.sample_rate
            i0 = int(round((start - whole.start_time) * fs))
            i1 = i0 + int(round(duration * fs))
            if i0 < 0 or i1 > whole.n_samples:
                return None
            return EegEpoch(start, fs, whole.data[:, i0:i1])
    else:
        slicer = eeg

    training = [r for r in records if r.kind == "TrainingStimulus"]
    if not training:
        raise ValueError("no TrainingStimulus records to fit from")

    dataset = []
    for rec in training:
        segment = slicer(rec.capture_start, rec.capture_duration)
        if segment is None:
            raise ValueError(
                f"stimulus {rec.stimulus_id}: EEG for "
                f"[{rec.capture_start}, {rec.capture_start + rec.capture_duration}) "
                "is not available")
        windows, _, _ = preprocess_capture(segment, montage, window_s,
                                           overlap_s, bands)
        if not windows:
            raise ValueError(f"stimulus {rec.stimulus_id}: capture too short "
                             "for a single window")
        for bp in windows:
            fv = band_powers_to_features(bp)
            dataset.append((bp.window_start, fv.values,
                            sam_to_class(rec.sam.arousal),
                            sam_to_class(rec.sam.valence)))
    dataset.sort(key=lambda row: row[0])

    reports, models = {}, {}
    for axis, label_idx in (("arousal", 2), ("valence", 3)):
        rows = [FeatureVector(r[0], r[1], r[label_idx]) for r in dataset]
        reports[axis] = evaluate(rows, k_features=k_features, C=C,
                                 n_folds=n_folds)
        models[axis] = train_ecoc(rows, k_features=k_features, C=C)

    return AffectModelPair(models["arousal"], models["valence"],
                           reports["arousal"], reports["valence"],
                           tuple(dataset))


def classify_window(models: AffectModelPair, window: EegEpoch,
                    history: EegEpoch, montage: ChannelMontage) -> tuple:
    """One online decision from a 2 s window plus recent history.

    History (>= 5 s ending at the window) supplies the bad-channel verdict;
    the window itself is then repaired, re-referenced, and classified.
    Returns (arousal class, arousal scores, valence class, valence scores).
    """
    hist_clamped, _ = clamp_amplitude(history)
    bad = detect_bad_channels(bandpass(hist_clamped))
    clamped, _ = clamp_amplitude(window)
    filtered = bandpass(clamped)
    repaired = interpolate(filtered, bad, montage)
    referenced = rereference_average(repaired)
    bp = extract_band_powers(referenced, bad_channels=bad)
    fv = band_powers_to_features(bp)
    ar_cls, ar_scores = predict(models.arousal, fv)
    va_cls, va_scores = predict(models.valence, fv)
    return ar_cls, ar_scores, va_cls, va_scores


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class SessionMetrics:
    """The three outcome measures; absent metrics are None, never 0."""

    agreement_rate: float | None
    arousal_consistency: float | None
    valence_consistency: float | None
    arousal_confusion: np.ndarray | None  # rows self-reported, cols predicted
    valence_confusion: np.ndarray | None
    n_agree_trials: int
    n_sam_trials: int

    def to_dict(self) -> dict:
        def conf(m):
            return None if m is None else np.asarray(m, dtype=int).tolist()

        return {
            "agreement_rate": self.agreement_rate,
            "self_report_consistency": {
                "arousal": self.arousal_consistency,
                "valence": self.valence_consistency,
            },
            "confusion": {
                "arousal": conf(self.arousal_confusion),
                "valence": conf(self.valence_confusion),
            },
            "n_agree_trials": self.n_agree_trials,
            "n_sam_trials": self.n_sam_trials,
            "class_order": [c.name for c in
                            (AffectClass.Low, AffectClass.Neutral, AffectClass.High)],
        }


def compute_metrics(records: Sequence[TrialRecord]) -> SessionMetrics:
    """Agreement rate, per-axis self-report consistency, per-axis confusion."""
    agrees = [r for r in records if r.kind == "AgreeProbe"]
    sams = [r for r in records if r.kind == "SamProbe"]

    agreement = (sum(1 for r in agrees if r.agree) / len(agrees)
                 if agrees else None)

    order = {AffectClass.Low: 0, AffectClass.Neutral: 1, AffectClass.High: 2}
    consistency = {}
    confusion = {}
    for axis in ("arousal", "valence"):
        if not sams:
            consistency[axis] = None
            confusion[axis] = None
            continue
        conf = np.zeros((3, 3), dtype=int)
        hits = 0
        for r in sams:
            reported = sam_to_class(getattr(r.sam, axis))
            predicted = getattr(r, f"predicted_{axis}")
            conf[order[reported], order[predicted]] += 1
            hits += reported == predicted
        consistency[axis] = hits / len(sams)
        confusion[axis] = conf

    return SessionMetrics(
        agreement_rate=agreement,
        arousal_consistency=consistency["arousal"],
        valence_consistency=consistency["valence"],
        arousal_confusion=confusion["arousal"],
        valence_confusion=confusion["valence"],
        n_agree_trials=len(agrees),
        n_sam_trials=len(sams),
    )


# ----------------------------------------------------------- stream buffer

class StreamBuffer:
    """Time-indexed frame store with gap-aware slicing."""

    def __init__(self, sample_rate: float = 250.0):
        self.sample_rate = sample_rate
        self._times: list[float] = []
        self._rows: list[np.ndarray] = []
        self._lock = threading.Lock()

    def append(self, frames: Sequence[EegFrame]) -> None:
        with self._lock:
            for f in frames:
                if self._times and f.timestamp <= self._times[-1]:
                    continue  # ingestor already drops these; belt and braces
                self._times.append(f.timestamp)
                self._rows.append(f.samples)

    @property
    def end_time(self) -> float | None:
        with self._lock:
            return self._times[-1] if self._times else None

    @property
    def n_frames(self) -> int:
        with self._lock:
            return len(self._times)

    def slice(self, start: float, duration: float) -> EegEpoch | None:
        """Return [start, start+duration) or None if not fully covered."""
        n_need = int(round(duration * self.sample_rate))
        with self._lock:
            i0 = bisect_left(self._times, start - 0.25 / self.sample_rate)
            i1 = i0 + n_need
            if i0 >= len(self._times) or i1 > len(self._times):
                return None
            if self._times[i0] > start + 0.5 / self.sample_rate:
                return None  # requested start lies before the buffered data
            span = self._times[i1 - 1] - self._times[i0]
            expected = (n_need - 1) / self.sample_rate
            if span > expected + 0.5 / self.sample_rate:
                return None  # gap inside the requested range
            data = np.stack(self._rows[i0:i1], axis=1)
            return EegEpoch(self._times[i0], self.sample_rate, data)


# ---------------------------------------------------------------- engine

@dataclass
class _ClassifyJob:
    t_event: float
    wall_deadline: float
    apply_event: bool  # inject PredictionShown into the state machine


class SessionEngine:
    """Single-writer orchestration around the pure state machine.

    All events are serialized through submit_event; EEG arrives through an
    ingestor drained by the worker thread, which also runs due classification
    jobs. Prediction messages go to the configured sinks as identical bytes.
    """

    def __init__(self, montage: ChannelMontage | None = None,
                 sinks: Sequence = (), ingestor: LineIngestor | None = None,
                 sample_rate: float = 250.0, log_path: str | None = None,
                 k_features: int = DEFAULT_K_FEATURES, C: float = DEFAULT_C,
                 auto_fit: bool = True, job_timeout_s: float = 10.0):
        self.montage = montage or default_montage()
        self.sinks = list(sinks)
        self.ingestor = ingestor or LineIngestor()
        self.buffer = StreamBuffer(sample_rate)
        self.log_path = log_path
        self.k_features = k_features
        self.C = C
        self.auto_fit = auto_fit
        self.job_timeout_s = job_timeout_s

        self.state = SessionState()
        self.models: AffectModelPair | None = None
        self.suppressed_predictions = 0
        self.insufficient_data = 0
        self.last_prediction: PredictionMessage | None = None

        self._lock = threading.RLock()
        self._job: _ClassifyJob | None = None
        self._fit_thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._worker: threading.Thread | None = None

    # -- event path --------------------------------------------------

    def submit_event(self, event: SessionEvent) -> SessionState:
        with self._lock:
            new_state = advance(self.state, event)  # raises on illegal input
            grew = len(new_state.records) - len(self.state.records)
            self.state = new_state
            if grew:
                self._log_records(new_state.records[-grew:])
            if isinstance(event, DesignChanged) and self.models is not None:
                apply_event = new_state.phase == "Validation"
                if self._job is not None:
                    self.suppressed_predictions += 1
                self._job = _ClassifyJob(
                    t_event=event.t,
                    wall_deadline=time.monotonic() + self.job_timeout_s,
                    apply_event=apply_event)
            if new_state.phase == "Fitting" and self.auto_fit:
                self._start_fit()
        self._publish_state()
        return new_state

    def _log_records(self, records: Sequence[TrialRecord]) -> None:
        if not self.log_path:
            return
        with open(self.log_path, "a") as fh:
            for rec in records:
                fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")

    def _publish_state(self) -> None:
        payload = json.dumps({"kind": "state", "state": state_to_dict(self.state)},
                             sort_keys=True).encode()
        for sink in self.sinks:
            try:
                sink.send(payload)
            except Exception:
                pass

    # -- fitting ------------------------------------------------------

    def _start_fit(self) -> None:
        self._fit_thread = threading.Thread(target=self._fit_and_complete,
                                            name="fit", daemon=True)
        self._fit_thread.start()

    def _fit_and_complete(self) -> None:
        try:
            self.run_fit()
        except Exception as exc:  # surfaced via state staying in Fitting
            warnings.warn(f"model fitting failed: {exc}")

    def run_fit(self) -> AffectModelPair:
        """Fit from the recorded captures, then apply FitCompleted."""
        with self._lock:
            records = self.state.records
        pair = fit_models(records, self.buffer.slice, self.montage,
                          self.k_features, self.C)
        with self._lock:
            self.models = pair
            end = self.buffer.end_time or 0.0
            self.state = advance(self.state, FitCompleted(t=end))
        self._publish_state()
        return pair

    # -- worker -------------------------------------------------------

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stop.clear()
        self._worker = threading.Thread(target=self._run, name="engine",
                                        daemon=True)
        self._worker.start()

    def stop(self) -> None:
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=2.0)
            self._worker = None

    def _run(self) -> None:
        while not self._stop.is_set():
            self.poll()
            time.sleep(0.02)

    def poll(self) -> None:
        """Drain the ingestor and run a due classification job, if any."""
        frames = self.ingestor.take()
        if frames:
            self.buffer.append(frames)
        job = self._job
        if job is None or self.models is None:
            return
        window_end = job.t_event + ONLINE_WINDOW_OFFSET_S + ONLINE_WINDOW_S
        end = self.buffer.end_time
        if end is not None and end >= window_end:
            self._run_job(job)
        elif time.monotonic() > job.wall_deadline:
            with self._lock:
                if self._job is job:
                    self._job = None
                    self.insufficient_data += 1
            warnings.warn(f"no EEG for the window after t={job.t_event:.3f}; "
                          "prediction suppressed")

    def _run_job(self, job: _ClassifyJob) -> None:
        t0 = job.t_event + ONLINE_WINDOW_OFFSET_S
        window = self.buffer.slice(t0, ONLINE_WINDOW_S)
        hist_start = max(job.t_event + ONLINE_WINDOW_OFFSET_S + ONLINE_WINDOW_S
                         - BAD_CHANNEL_HISTORY_S, 0.0)
        history = self.buffer.slice(hist_start, BAD_CHANNEL_HISTORY_S)
        if window is None or history is None:
            with self._lock:
                if self._job is job:
                    self._job = None
                    self.insufficient_data += 1
            warnings.warn(f"stream gap around t={job.t_event:.3f}; "
                          "prediction suppressed")
            return
        ar_cls, ar_scores, va_cls, va_scores = classify_window(
            self.models, window, history, self.montage)
        with self._lock:
            if self._job is not job:
                return  # a newer design change superseded this job
            self._job = None
            msg = PredictionMessage(
                t=job.t_event, arousal=int(ar_cls), valence=int(va_cls),
                arousal_scores=tuple(ar_scores),
                valence_scores=tuple(va_scores),
                session_phase=self.state.phase)
            self.last_prediction = msg
            if job.apply_event:
                self.state = advance(self.state, PredictionShown(
                    arousal=ar_cls, valence=va_cls, t=job.t_event))
        if self.sinks:
            emit_prediction(msg, self.sinks)
        self._publish_state()

    # -- views ---------------------------------------------------------

    def metrics(self) -> SessionMetrics:
        with self._lock:
            return compute_metrics(self.state.records)

    def reports(self) -> dict[str, CvReport] | None:
        with self._lock:
            if self.models is None:
                return None
            return {"arousal": self.models.arousal_report,
                    "valence": self.models.valence_report}
