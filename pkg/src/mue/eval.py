"""Calibration against known mode distributions and generalized energy distance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .model import MueModel, topk_batch
from .tasks import (
    AMBIGUOUS,
    N_SLOTS,
    DigitBank,
    GuessingGameSpec,
    _slot_view,
    classify_modes,
    ground_truth_labels,
    sample_batch,
)


@dataclass
class PredictionSet:
    items: List[Tuple[np.ndarray, float]]
    source: Optional[int] = None

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.items], dtype=np.float64)

    @property
    def outputs(self) -> list:
        return [o for o, _ in self.items]


def normalize_topN(preds: PredictionSet) -> PredictionSet:  # noqa: N802
    """Rescale probabilities to sum to one, keeping order."""
    p = preds.probs
    if p.size == 0 or p.sum() <= 0:
        raise ValueError("normalize_topN: need at least one positive probability")
    p = p / p.sum()
    return PredictionSet([(o, float(q)) for o, q in zip(preds.outputs, p)], preds.source)


# IoU and GED -------------------------------------------------------------------------

def binarize(a, threshold: float = 0.5) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype == bool else a > threshold


def iou(a, b, threshold: float = 0.5) -> float:
    """Intersection over union of binarised masks; two empty masks score 1."""
    a, b = binarize(a, threshold), binarize(b, threshold)
    if a.shape != b.shape:
        raise ValueError(f"iou: shape mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def iou_distance(a, b) -> float:
    return 1.0 - iou(a, b)


def _pairwise(xs: Sequence, ys: Sequence, d: Callable) -> np.ndarray:
    return np.array([[d(x, y) for y in ys] for x in xs], dtype=np.float64).reshape(len(xs), len(ys))


def ged_from_distances(p_y, p_s, d_ys, d_yy, d_ss) -> float:
    """``2 E d(Y,S) - E d(Y,Y') - E d(S,S')`` from distance matrices and weights."""
    p_y = np.asarray(p_y, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    if p_y.size == 0 or p_s.size == 0:
        raise ValueError("ged: empty label or prediction set")
    cross = p_y @ np.asarray(d_ys, dtype=np.float64) @ p_s
    within_y = p_y @ np.asarray(d_yy, dtype=np.float64) @ p_y
    within_s = p_s @ np.asarray(d_ss, dtype=np.float64) @ p_s
    return float(2.0 * cross - within_y - within_s)


def ged(labels: Sequence[Tuple[np.ndarray, float]], preds, distance: Callable = iou_distance) -> float:
    """Squared generalized energy distance between weighted label and prediction sets.

    ``labels`` is a list of ``(label, p_y)``; ``preds`` a PredictionSet or a
    list of ``(output, p_s)``.
    """
    items = preds.items if isinstance(preds, PredictionSet) else list(preds)
    if not labels or not items:
        raise ValueError("ged: empty label or prediction set")
    ys = [y for y, _ in labels]
    ss = [s for s, _ in items]
    return ged_from_distances([p for _, p in labels], [p for _, p in items],
                              _pairwise(ys, ss, distance), _pairwise(ys, ys, distance),
                              _pairwise(ss, ss, distance))


def uniform_labels(labels: Sequence[np.ndarray]) -> List[Tuple[np.ndarray, float]]:
    """Weights ``1/|Y|`` when only the label set, not its distribution, is known."""
    return [(y, 1.0 / len(labels)) for y in labels]


def slot_support(y, threshold: float = 0.5) -> np.ndarray:
    """Boolean per slot: does any element of the slot exceed ``threshold``."""
    hit = (_slot_view(np.asarray(y)) > threshold).any(axis=-1)
    return hit.reshape(-1, N_SLOTS).any(axis=0)


@dataclass
class GedReport:
    values: np.ndarray
    mean: float
    std: float

    @classmethod
    def from_values(cls, values) -> "GedReport":
        v = np.asarray(values, dtype=np.float64)
        return cls(v, float(v.mean()), float(v.std()))


def ged_report(model: MueModel, spec: GuessingGameSpec, bank: DigitBank, n_inputs: int,
               top_n: int, rng: np.random.Generator) -> GedReport:
    """Per-input GED between the true weighted targets and the normalised top-N predictions.

    Vector inputs compare slot-support masks; image inputs compare pixel masks.
    """
    batch = sample_batch(spec, bank, rng, n_inputs)
    mask = slot_support if bank.kind == "vector" else binarize
    values = []
    for start in range(0, n_inputs, 64):
        xs = batch.x[start:start + 64]
        _, probs, outs = topk_batch(model, xs, top_n)
        for j in range(len(xs)):
            i = start + j
            labels = [(mask(y), p) for y, p in ground_truth_labels(spec, batch.x[i], int(batch.category[i]))]
            preds = normalize_topN(PredictionSet([(mask(o), float(p)) for o, p in zip(outs[j], probs[j])], i))
            values.append(ged(labels, preds))
    return GedReport.from_values(values)


# calibration ------------------------------------------------------------------------------

@dataclass
class CategoryCalibration:
    name: str
    truth: np.ndarray
    predicted: np.ndarray
    ambiguous: float
    n_inputs: int

    @property
    def l1_error(self) -> float:
        return float(np.abs(self.predicted - self.truth).sum())

    @property
    def abs_errors(self) -> np.ndarray:
        return np.abs(self.predicted - self.truth)


@dataclass
class CalibrationTable:
    rows: List[CategoryCalibration] = field(default_factory=list)

    def l1_errors(self) -> List[float]:
        return [r.l1_error for r in self.rows]

    def mode_errors(self) -> np.ndarray:
        return np.concatenate([r.abs_errors for r in self.rows])


def mode_masses(probs: np.ndarray, modes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sum probabilities per classified mode; returns (per-mode mass (n, 4), ambiguous mass (n,))."""
    mass = np.zeros((probs.shape[0], N_SLOTS))
    for m in range(N_SLOTS):
        mass[:, m] = np.where(modes == m, probs, 0.0).sum(axis=1)
    amb = np.where(modes == AMBIGUOUS, probs, 0.0).sum(axis=1)
    return mass, amb


def calibrate(model: MueModel, spec: GuessingGameSpec, bank: DigitBank, n_inputs: int,
              k: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              chunk: int = 32, ratio: float = 2.0) -> CalibrationTable:
    """Aggregate predicted mode distribution per category over ``n_inputs`` inputs each.

    Every input's top-``k`` predictions (all codes by default) are decoded and
    classified; probabilities add up per mode, unclassifiable outputs go to
    the ambiguous column. A truncated top-k is renormalised first.
    """
    rng = np.random.Generator(np.random.PCG64(0)) if rng is None else rng
    k = model.arch.n_codes if k is None else k
    item_ndim = len(model.arch.label_shape)
    table = CalibrationTable()
    for c, cat in enumerate(spec.categories):
        batch = sample_batch(spec, bank, rng, n_inputs, categories=[c] * n_inputs)
        mass_sum = np.zeros(N_SLOTS)
        amb_sum = 0.0
        for start in range(0, n_inputs, chunk):
            _, probs, outs = topk_batch(model, batch.x[start:start + chunk], k)
            probs = probs / probs.sum(axis=1, keepdims=True)
            modes = classify_modes(outs, item_ndim, ratio)
            mass, amb = mode_masses(probs, modes)
            mass_sum += mass.sum(axis=0)
            amb_sum += amb.sum()
        table.rows.append(CategoryCalibration(cat.name, np.array(cat.probs), mass_sum / n_inputs,
                                              amb_sum / n_inputs, n_inputs))
    return table
