"""Feature labeling, mRMR selection, 3-class ECOC linear-SVM training and
prediction, chronological cross-validation, and classification metrics.

Features are 96 log band powers (32 channels x theta/alpha/beta, channel-major
order). Labels are three-level affect classes per axis. The SVM is trained on
the dual with a maximal-violating-pair SMO loop; no external ML library is
involved.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .signal_core import N_BANDS, N_CHANNELS, BandPowerWindow

N_FEATURES = N_CHANNELS * N_BANDS  # 96
LOG_POWER_EPS = 1e-12
DEFAULT_K_FEATURES = 32
DEFAULT_C = 1.0
MODEL_SCHEMA_VERSION = 1


class AffectClass(enum.IntEnum):
    """Three-level affect class; integer value is the wire code."""

    Low = -1
    Neutral = 0
    High = 1


CLASS_ORDER = (AffectClass.Low, AffectClass.Neutral, AffectClass.High)

# One-vs-one pairs; the first class of each pair maps to label +1.
ECOC_CODING = (
    (AffectClass.Low, AffectClass.Neutral),
    (AffectClass.Low, AffectClass.High),
    (AffectClass.Neutral, AffectClass.High),
)


class DegenerateTrainingError(ValueError):
    """Training data is missing at least one class entirely."""


def sam_to_class(rating: int) -> AffectClass:
    """Map a 1-5 SAM rating to Low/Neutral/High ({1,2}/{3}/{4,5})."""
    if rating not in (1, 2, 3, 4, 5):
        raise ValueError(f"SAM rating must be an integer in [1, 5], got {rating!r}")
    if rating <= 2:
        return AffectClass.Low
    if rating == 3:
        return AffectClass.Neutral
    return AffectClass.High


@dataclass(frozen=True)
class SamRating:
    """One self-assessment: arousal and valence, each 1-5."""

    arousal: int
    valence: int

    def __post_init__(self):
        for name in ("arousal", "valence"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 1 <= v <= 5:
                raise ValueError(f"{name} must be an integer in [1, 5], got {v!r}")


@dataclass(frozen=True)
class FeatureVector:
    """One window's 96 features with its start time and optional label."""

    window_start: float
    values: np.ndarray
    label: AffectClass | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (N_FEATURES,):
            raise ValueError(f"feature vector needs {N_FEATURES} values, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature vector contains non-finite values")
        object.__setattr__(self, "values", arr)


def band_powers_to_features(window: BandPowerWindow,
                            label: AffectClass | None = None) -> FeatureVector:
    """log10(power + eps), flattened channel-major: f0..f2 are channel 0."""
    values = np.log10(window.powers + LOG_POWER_EPS).reshape(-1)
    return FeatureVector(window.window_start, values, label)


# ------------------------------------------------------------------ mRMR

def discretize_equal_frequency(column: np.ndarray, bins: int = 3) -> np.ndarray:
    """Equal-frequency binning by sorted-order thresholds; returns bin ids."""
    x = np.asarray(column, dtype=float)
    if x.size == 0:
        raise ValueError("empty column")
    xs = np.sort(x)
    n = x.size
    out = np.zeros(n, dtype=np.int64)
    for m in range(1, bins):
        t = xs[math.ceil(m * n / bins) - 1]
        out += x > t
    return out


def mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in mutual information in bits from empirical counts."""
    x = np.asarray(x).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.size == 0:
        raise ValueError("empty input")
    if x.size != y.size:
        raise ValueError("length mismatch")
    xi = np.unique(x, return_inverse=True)[1]
    yi = np.unique(y, return_inverse=True)[1]
    joint = np.zeros((int(xi.max()) + 1, int(yi.max()) + 1))
    np.add.at(joint, (xi, yi), 1.0)
    pxy = joint / x.size
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))


def mrmr_select(X: np.ndarray, y: Sequence[int], k: int) -> list[int]:
    """Greedy mRMR (MID variant): maximize MI(f;y) - mean MI(f;selected).

    Features are discretized by equal-frequency 3-bin quantization first.
    Ties on the score prefer the candidate with lower redundancy, then the
    lower index; an exact duplicate of a selected feature can then never
    beat an independent one.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if not 0 < k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    y = np.asarray([int(c) for c in y])
    if y.size != n:
        raise ValueError("label count does not match rows")

    disc = np.stack([discretize_equal_frequency(X[:, j]) for j in range(d)], axis=1)
    relevance = np.array([mutual_information(disc[:, j], y) for j in range(d)])

    selected: list[int] = []
    remaining = list(range(d))
    red_sum = np.zeros(d)
    while len(selected) < k:
        best = None
        for j in remaining:
            red = red_sum[j] / len(selected) if selected else 0.0
            key = (relevance[j] - red, -red, -j)
            if best is None or key > best[0]:
                best = (key, j)
        pick = best[1]
        selected.append(pick)
        remaining.remove(pick)
        for j in remaining:
            red_sum[j] += mutual_information(disc[:, j], disc[:, pick])
    return selected


# ------------------------------------------------------------------ SVM

@dataclass(frozen=True)
class LinearSvmBinary:
    """Linear decision function w.x + b for labels in {-1, +1}."""

    weights: np.ndarray
    bias: float
    C: float = DEFAULT_C

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("non-finite SVM parameters")
        object.__setattr__(self, "weights", w)

    def decision(self, x: np.ndarray) -> float:
        return float(self.weights @ np.asarray(x, dtype=float) + self.bias)


def train_linear_svm(X: np.ndarray, y: Sequence[int], C: float = DEFAULT_C,
                     tol: float = 1e-8, max_iter: int = 200_000) -> LinearSvmBinary:
    """Soft-margin linear SVM via SMO on the dual.

    Working pair selection is the maximal violating pair; the loop stops
    when the KKT gap drops below tol. The bias comes from free support
    vectors when any exist, otherwise from the midpoint of the gap bounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray([int(v) for v in y], dtype=float)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise DegenerateTrainingError(
            f"binary training needs both labels -1 and +1, got {sorted(set(y))}")
    if C <= 0:
        raise ValueError("C must be positive")

    n = len(y)
    K = X @ X.T
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective, Q @ alpha - 1

    for _ in range(max_iter):
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        down = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not (up.any() and down.any()):
            break
        iu = np.flatnonzero(up)
        idn = np.flatnonzero(down)
        i = iu[np.argmax(yG[iu])]
        j = idn[np.argmin(yG[idn])]
        if yG[i] - yG[j] <= tol:
            break
        quad = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        delta = (yG[i] - yG[j]) / quad
        # Keep both multipliers inside [0, C] along the feasible direction.
        if y[i] > 0:
            delta = min(delta, C - alpha[i])
        else:
            delta = min(delta, alpha[i])
        if y[j] > 0:
            delta = min(delta, alpha[j])
        else:
            delta = min(delta, C - alpha[j])
        if delta <= 0:
            break
        dai = y[i] * delta
        daj = -y[j] * delta
        alpha[i] = min(max(alpha[i] + dai, 0.0), C)
        alpha[j] = min(max(alpha[j] + daj, 0.0), C)
        G += Q[:, i] * dai + Q[:, j] * daj

    w = (alpha * y) @ X
    margins = y - X @ w
    free = (alpha > 1e-9 * C) & (alpha < C * (1.0 - 1e-9))
    if free.any():
        b = float(margins[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        down = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = margins[up].max() if up.any() else 0.0
        lo = margins[down].min() if down.any() else 0.0
        b = float((hi + lo) / 2.0)
    return LinearSvmBinary(w, b, C)


def svm_objective(model: LinearSvmBinary, X: np.ndarray, y: Sequence[int]) -> float:
    """Primal objective (1/2)|w|^2 + C * sum of hinge losses."""
    X = np.asarray(X, dtype=float)
    y = np.asarray([int(v) for v in y], dtype=float)
    margins = y * (X @ model.weights + model.bias)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return float(0.5 * model.weights @ model.weights + model.C * hinge)


# ------------------------------------------------------------------ ECOC

@dataclass(frozen=True)
class EcocModel:
    """One-vs-one ECOC over the three affect classes for one axis."""

    learners: tuple[LinearSvmBinary, ...]
    selected_features: tuple[int, ...]
    feature_means: np.ndarray
    feature_sds: np.ndarray
    coding: tuple[tuple[AffectClass, AffectClass], ...] = ECOC_CODING
    # Runtime audit trail: which window starts fed the training statistics.
    # Never serialized.
    training_window_starts: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.learners) != len(self.coding):
            raise ValueError("learner count must match coding rows")
        if len(set(self.selected_features)) != len(self.selected_features):
            raise ValueError("selected_features must be unique")
        object.__setattr__(self, "feature_means",
                           np.asarray(self.feature_means, dtype=float))
        object.__setattr__(self, "feature_sds",
                           np.asarray(self.feature_sds, dtype=float))


def _class_array(dataset: Sequence[FeatureVector]) -> np.ndarray:
    labels = []
    for fv in dataset:
        if fv.label is None:
            raise ValueError("training requires labeled feature vectors")
        labels.append(fv.label)
    return np.array(labels, dtype=object)


def train_ecoc(dataset: Sequence[FeatureVector], k_features: int = DEFAULT_K_FEATURES,
               C: float = DEFAULT_C) -> EcocModel:
    """Fit mRMR selection, z-scoring, and the three pairwise linear SVMs.

    Rows are sorted by window start before fitting so training is
    order-free. Normalization and selection statistics come from this
    dataset only; the window starts that fed them are recorded for audit.
    """
    rows = sorted(dataset, key=lambda fv: fv.window_start)
    if not rows:
        raise ValueError("empty training set")
    X = np.stack([fv.values for fv in rows])
    y = _class_array(rows)
    present = set(y.tolist())
    missing = [c for c in CLASS_ORDER if c not in present]
    if missing:
        raise DegenerateTrainingError(
            "missing class(es) in training data: "
            + ", ".join(c.name for c in missing))

    means = X.mean(axis=0)
    sds = X.std(axis=0)
    sds = np.where(sds < 1e-12, 1.0, sds)
    Xn = (X - means) / sds

    k = min(k_features, N_FEATURES)
    selected = mrmr_select(Xn, [int(c) for c in y], k)
    Xs = Xn[:, selected]

    learners = []
    for pos, neg in ECOC_CODING:
        mask = (y == pos) | (y == neg)
        yb = np.where(y[mask] == pos, 1, -1)
        learners.append(train_linear_svm(Xs[mask], yb, C=C))

    return EcocModel(tuple(learners), tuple(selected), means, sds,
                     training_window_starts=tuple(fv.window_start for fv in rows))


def predict(model: EcocModel, fv: FeatureVector | np.ndarray) -> tuple[AffectClass, np.ndarray]:
    """Decode one feature vector: majority vote, |decision| support tie-break.

    Returns (class, per-class support scores in Low/Neutral/High order).
    """
    values = fv.values if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=float)
    if values.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} features")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite features")
    xs = ((values - model.feature_means) / model.feature_sds)[list(model.selected_features)]

    votes = {c: 0 for c in CLASS_ORDER}
    support = {c: 0.0 for c in CLASS_ORDER}
    for learner, (pos, neg) in zip(model.learners, model.coding):
        d = learner.decision(xs)
        winner = pos if d >= 0 else neg
        votes[winner] += 1
        support[winner] += abs(d)
    best = max(CLASS_ORDER,
               key=lambda c: (votes[c], support[c], -CLASS_ORDER.index(c)))
    scores = np.array([support[c] for c in CLASS_ORDER])
    return best, scores


# ------------------------------------------------------- cross-validation

def chronological_kfold(n: int, k: int = 5) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous time-block folds; remainder goes to the earliest blocks."""
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds sample count n={n}")
    base, rem = divmod(n, k)
    splits = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        val = np.arange(start, start + size)
        train = np.concatenate([np.arange(0, start), np.arange(start + size, n)])
        splits.append((train, val))
        start += size
    return splits


def imbalance_ratio(labels: Iterable[AffectClass]) -> float:
    """Largest class count over smallest; infinite if a class is absent."""
    labels = list(labels)
    if not labels:
        raise ValueError("no labels")
    counts = [sum(1 for c in labels if c == cls) for cls in CLASS_ORDER]
    if min(counts) == 0:
        absent = [cls.name for cls, n in zip(CLASS_ORDER, counts) if n == 0]
        warnings.warn(f"class(es) absent from labels: {', '.join(absent)}; "
                      "imbalance ratio is infinite")
        return math.inf
    return max(counts) / min(counts)


@dataclass(frozen=True)
class FoldAudit:
    """Which window starts fed a fold's training statistics vs validation."""

    fold: int
    stat_window_starts: tuple[float, ...]
    validation_window_starts: tuple[float, ...]


@dataclass(frozen=True)
class CvReport:
    """Chronological k-fold results for one axis."""

    fold_accuracies: tuple[float, ...]
    mean_accuracy: float
    training_accuracy: float
    confusion: np.ndarray  # rows true, cols predicted, Low/Neutral/High order
    precision: dict[str, float]
    recall: dict[str, float]
    imbalance_ratio: float
    n_samples: int
    fold_audits: tuple[FoldAudit, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": list(self.fold_accuracies),
            "mean_accuracy": self.mean_accuracy,
            "training_accuracy": self.training_accuracy,
            "confusion": np.asarray(self.confusion, dtype=int).tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "imbalance_ratio": self.imbalance_ratio,
            "n_samples": self.n_samples,
            "class_order": [c.name for c in CLASS_ORDER],
        }

    def format_table(self) -> str:
        lines = [
            "fold  accuracy",
            *(f"{i + 1:>4}  {a:.4f}" for i, a in enumerate(self.fold_accuracies)),
            f"mean  {self.mean_accuracy:.4f}",
            f"train {self.training_accuracy:.4f}",
            f"imbalance ratio {self.imbalance_ratio:.4f}  (n={self.n_samples})",
            "",
            "confusion (rows true, cols predicted): " + "/".join(c.name for c in CLASS_ORDER),
        ]
        for cls, row in zip(CLASS_ORDER, np.asarray(self.confusion, dtype=int)):
            lines.append(f"{cls.name:>8} " + " ".join(f"{v:>5d}" for v in row))
        lines.append("")
        lines.append("class     precision  recall")
        for c in CLASS_ORDER:
            lines.append(f"{c.name:>8}  {self.precision[c.name]:>9.4f}  "
                         f"{self.recall[c.name]:>6.4f}")
        return "\n".join(lines)


def evaluate(dataset: Sequence[FeatureVector], k_features: int = DEFAULT_K_FEATURES,
             C: float = DEFAULT_C, n_folds: int = 5) -> CvReport:
    """Chronological k-fold evaluation with per-fold refit of everything.

    mRMR, normalization, and the SVMs are fitted inside each training split
    only; the audit trail records which window starts fed each fold.
    """
    rows = list(dataset)
    starts = [fv.window_start for fv in rows]
    if any(b < a for a, b in zip(starts, starts[1:])):
        raise ValueError("dataset must be ordered by window_start")
    y_true = _class_array(rows)

    order = {c: i for i, c in enumerate(CLASS_ORDER)}
    confusion = np.zeros((3, 3), dtype=int)
    fold_accuracies = []
    audits = []
    for f, (train_idx, val_idx) in enumerate(chronological_kfold(len(rows), n_folds)):
        model = train_ecoc([rows[i] for i in train_idx], k_features, C)
        hits = 0
        for i in val_idx:
            pred, _ = predict(model, rows[i])
            confusion[order[y_true[i]], order[pred]] += 1
            hits += pred == y_true[i]
        fold_accuracies.append(hits / len(val_idx))
        audits.append(FoldAudit(f, model.training_window_starts,
                                tuple(rows[i].window_start for i in val_idx)))

    full = train_ecoc(rows, k_features, C)
    train_hits = sum(predict(full, fv)[0] == fv.label for fv in rows)

    precision, recall = {}, {}
    for c in CLASS_ORDER:
        i = order[c]
        col = confusion[:, i].sum()
        row = confusion[i, :].sum()
        precision[c.name] = confusion[i, i] / col if col else 0.0
        recall[c.name] = confusion[i, i] / row if row else 0.0

    return CvReport(
        fold_accuracies=tuple(fold_accuracies),
        mean_accuracy=float(np.mean(fold_accuracies)),
        training_accuracy=train_hits / len(rows),
        confusion=confusion,
        precision=precision,
        recall=recall,
        imbalance_ratio=imbalance_ratio(y_true.tolist()),
        n_samples=len(rows),
        fold_audits=tuple(audits),
    )


# ------------------------------------------------------------- file I/O

def write_dataset_csv(path: str, dataset: Sequence[tuple[float, np.ndarray,
                                                          AffectClass, AffectClass]]) -> None:
    """Write rows of (window_start, 96 features, arousal, valence)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start"] + [f"f{i:02d}" for i in range(N_FEATURES)]
                   + ["arousal_label", "valence_label"])
        for start, values, ar, va in dataset:
            values = np.asarray(values, dtype=float)
            if values.shape != (N_FEATURES,):
                raise ValueError("each row needs 96 features")
            w.writerow([repr(float(start))] + [repr(float(v)) for v in values]
                       + [ar.name, va.name])


def read_dataset_csv(path: str) -> list[tuple[float, np.ndarray, AffectClass, AffectClass]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            values = np.array([float(rec[f"f{i:02d}"]) for i in range(N_FEATURES)])
            out.append((float(rec["window_start"]), values,
                        AffectClass[rec["arousal_label"]],
                        AffectClass[rec["valence_label"]]))
    return out


def dataset_axis(rows: Sequence[tuple[float, np.ndarray, AffectClass, AffectClass]],
                 axis: str) -> list[FeatureVector]:
    """Project dataset rows onto one axis ('arousal' or 'valence')."""
    idx = {"arousal": 2, "valence": 3}[axis]
    return [FeatureVector(r[0], r[1], r[idx]) for r in rows]


def ecoc_to_dict(model: EcocModel) -> dict:
    return {
        "coding": [[a.name, b.name] for a, b in model.coding],
        "learners": [
            {"weights": [float(v) for v in ln.weights],
             "bias": float(ln.bias), "C": float(ln.C)}
            for ln in model.learners
        ],
        "selected_features": [int(i) for i in model.selected_features],
        "feature_means": [float(v) for v in model.feature_means],
        "feature_sds": [float(v) for v in model.feature_sds],
    }


def ecoc_from_dict(d: dict) -> EcocModel:
    coding = tuple((AffectClass[a], AffectClass[b]) for a, b in d["coding"])
    learners = tuple(LinearSvmBinary(np.array(ln["weights"], dtype=float),
                                     float(ln["bias"]), float(ln["C"]))
                     for ln in d["learners"])
    return EcocModel(learners, tuple(int(i) for i in d["selected_features"]),
                     np.array(d["feature_means"], dtype=float),
                     np.array(d["feature_sds"], dtype=float), coding)


def save_models(path: str, models: dict[str, EcocModel],
                reports: dict[str, CvReport] | None = None) -> None:
    """Versioned JSON for the per-axis models (and optional CV reports)."""
    doc = {"v": MODEL_SCHEMA_VERSION,
           "models": {axis: ecoc_to_dict(m) for axis, m in models.items()}}
    if reports:
        doc["reports"] = {axis: r.to_dict() for axis, r in reports.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_models(path: str) -> dict[str, EcocModel]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("v") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {doc.get('v')!r}")
    return {axis: ecoc_from_dict(d) for axis, d in doc["models"].items()}
