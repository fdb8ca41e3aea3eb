"""Confusion counts, skill scores, improvement percentages and performance-diagram geometry."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels

F1_ISOLINES = tuple(round(0.1 * i, 1) for i in range(1, 10))
BIAS_RAYS = (0.3, 0.5, 0.8, 1.0, 1.3, 2.0, 3.3)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SkillScores:
    precision: float
    recall: float
    f1: float
    frequency_bias: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def confusion(pred: np.ndarray, label: np.ndarray, valid: np.ndarray | None = None) -> ConfusionCounts:
    pred = np.asarray(pred)
    label = np.asarray(label)
    if valid is None:
        valid = np.ones(label.shape, dtype=np.uint8)
    valid = np.asarray(valid)
    if not (pred.shape == label.shape == valid.shape):
        raise MetricError(f"shape mismatch: pred {pred.shape}, label {label.shape}, valid {valid.shape}")
    return ConfusionCounts(*_kernels.confusion_counts(pred, label, valid))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def scores(c: ConfusionCounts) -> SkillScores:
    """Precision, recall, F1 and frequency bias; 0/0 evaluates to 0."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    bias = _ratio(c.tp + c.fp, c.tp + c.fn)
    return SkillScores(precision, recall, f1, bias)


def f1_from_pr(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def improvement(f1_single: float, f1_ens: float) -> float:
    """Percent gain of the ensemble over the best single model, relative to the ensemble score."""
    if f1_ens <= 0:
        raise MetricError("ensemble F1 must be > 0 to express an improvement")
    return 100.0 * (f1_ens - f1_single) / f1_ens


def eval_record(c: ConfusionCounts) -> dict[str, float | int]:
    """The flat JSON shape written by ``eval``."""
    return {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn, **scores(c).to_dict()}


# --------------------------------------------------------------------------
# performance diagram


def f1_isoline(f: float, n: int = 101) -> np.ndarray:
    """Points ``(precision, recall)`` with F1 = f, inside the unit square.

    recall = f * p / (2p - f) is defined for p > f/2 and reaches recall 1 at
    p = f / (2 - f), so sampling starts there.
    """
    if not 0 < f < 1:
        raise MetricError("isoline level must lie in (0, 1)")
    x = np.linspace(f / (2.0 - f), 1.0, n)
    y = f * x / (2.0 * x - f)
    return np.column_stack([x, y])


def bias_ray(b: float) -> np.ndarray:
    """Segment of recall = b * precision from the origin to the unit-square edge."""
    if b <= 0:
        raise MetricError("bias must be > 0")
    end = (1.0, b) if b <= 1 else (1.0 / b, 1.0)
    return np.array([[0.0, 0.0], end])


@dataclass
class DiagramSpec:
    points: list[dict] = field(default_factory=list)  # {name, precision, recall, f1, bias}
    isolines: dict[float, np.ndarray] = field(default_factory=dict)
    bias_rays: dict[float, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "points": self.points,
            "isolines": {str(k): v.tolist() for k, v in self.isolines.items()},
            "bias_rays": {str(k): v.tolist() for k, v in self.bias_rays.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagramSpec":
        return cls(
            points=list(d.get("points", [])),
            isolines={float(k): np.asarray(v) for k, v in d.get("isolines", {}).items()},
            bias_rays={float(k): np.asarray(v) for k, v in d.get("bias_rays", {}).items()},
        )


def diagram_data(points: list[tuple[str, SkillScores]], n: int = 101) -> DiagramSpec:
    markers = [
        {
            "name": name,
            "precision": s.precision,
            "recall": s.recall,
            "f1": s.f1,
            "bias": s.frequency_bias,
        }
        for name, s in points
    ]
    return DiagramSpec(
        points=markers,
        isolines={f: f1_isoline(f, n) for f in F1_ISOLINES},
        bias_rays={b: bias_ray(b) for b in BIAS_RAYS},
    )
