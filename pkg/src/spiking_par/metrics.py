"""Multi-label attribute recognition scores.

``ConfusionCounts`` keeps only integers: per-attribute TP/TN/FP/FN and, per
sample seen, the sizes of the predicted set, the true set and their
intersection. Scores are derived from those integers with ``math.fsum``, so
any split of the data into batches, in any order, yields bit-identical
reports.

mA is the label-based balanced accuracy (mean of per-attribute TPR and TNR).
Acc/Prec/Recall/F1 come in two flavours:

* ``instance`` (default): per-sample set scores, averaged over samples;
  F1 is the harmonic mean of the averaged precision and recall.
* ``count``: pooled TP/TN/FP/FN over every (sample, attribute) cell.

A zero denominator scores 0 and adds a flag to the report instead of
producing NaN.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DimensionError, EvaluationError, ValidationError
from .functional import sigmoid_array

logger = logging.getLogger(__name__)

MetricMode = Literal["instance", "count"]
METRIC_MODES: tuple[str, ...] = ("instance", "count")
REPORT_KEYS: tuple[str, ...] = ("mA", "Acc", "Prec", "Recall", "F1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    inter: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pred_size: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    true_size: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def empty(cls, num_attributes: int) -> "ConfusionCounts":
        z = np.zeros(num_attributes, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())

    @property
    def num_attributes(self) -> int:
        return len(self.tp)

    @property
    def samples_seen(self) -> int:
        return len(self.inter)

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.num_attributes != self.num_attributes:
            msg = f"cannot merge counts over {self.num_attributes} and {other.num_attributes} attributes"
            raise DimensionError(msg)
        return ConfusionCounts(
            self.tp + other.tp,
            self.tn + other.tn,
            self.fp + other.fp,
            self.fn + other.fn,
            np.concatenate([self.inter, other.inter]),
            np.concatenate([self.pred_size, other.pred_size]),
            np.concatenate([self.true_size, other.true_size]),
        )

    __add__ = merge


def _as_binary(name: str, array: np.ndarray) -> np.ndarray:
    arr = np.asarray(array)
    if not np.isin(arr, (0, 1)).all():
        msg = f"{name} must be binary (0/1)"
        raise ValidationError(msg)
    return arr.astype(bool)


def accumulate(counts: ConfusionCounts, predictions: np.ndarray, labels: np.ndarray) -> ConfusionCounts:
    """Return *counts* plus the tallies of one ``[B, M]`` batch."""
    pred = _as_binary("predictions", predictions)
    true = _as_binary("labels", labels)
    if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != counts.num_attributes:  # noqa: PLR2004
        msg = f"predictions {pred.shape} and labels {true.shape} must both be [B, {counts.num_attributes}]"
        raise DimensionError(msg)
    batch = ConfusionCounts(
        tp=(pred & true).sum(axis=0, dtype=np.int64),
        tn=(~pred & ~true).sum(axis=0, dtype=np.int64),
        fp=(pred & ~true).sum(axis=0, dtype=np.int64),
        fn=(~pred & true).sum(axis=0, dtype=np.int64),
        inter=(pred & true).sum(axis=1, dtype=np.int64),
        pred_size=pred.sum(axis=1, dtype=np.int64),
        true_size=true.sum(axis=1, dtype=np.int64),
    )
    return counts.merge(batch)


def threshold_predictions(logits: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary predictions: ``sigmoid(logit) > threshold``."""
    return (sigmoid_array(np.asarray(logits, dtype=np.float64)) > threshold).astype(np.uint8)


def _ratio(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def label_based_mA(  # noqa: N802
    counts: ConfusionCounts,
    *,
    strict: bool = False,
    attributes: tuple[str, ...] | None = None,
    flags: list[str] | None = None,
) -> float:
    """Mean over attributes of ``(TPR + TNR) / 2``.

    Strict mode requires every attribute to have at least one positive and
    one negative. Otherwise an attribute missing one class is scored on the
    half that is defined; one with no samples at all scores 0.
    """
    flags = [] if flags is None else flags
    m = counts.num_attributes
    if m == 0:
        return 0.0
    names = attributes or tuple(f"attr{j}" for j in range(m))
    per_attr = []
    for j in range(m):
        pos = int(counts.tp[j] + counts.fn[j])
        neg = int(counts.tn[j] + counts.fp[j])
        if strict and (pos == 0 or neg == 0):
            missing = "positives" if pos == 0 else "negatives"
            msg = f"attribute {names[j]!r} has no {missing}; mA undefined in strict mode"
            raise EvaluationError(msg)
        halves = []
        if pos:
            halves.append(int(counts.tp[j]) / pos)
        if neg:
            halves.append(int(counts.tn[j]) / neg)
        if len(halves) < 2:  # noqa: PLR2004
            flags.append(f"mA:{names[j]}")
        per_attr.append(math.fsum(halves) / len(halves) if halves else 0.0)
    return math.fsum(per_attr) / m


def instance_metrics(
    counts: ConfusionCounts,
    mode: MetricMode = "instance",
    *,
    flags: list[str] | None = None,
) -> tuple[float, float, float, float]:
    """``(Acc, Prec, Recall, F1)`` in the requested mode."""
    flags = [] if flags is None else flags
    if mode not in METRIC_MODES:
        msg = f"unknown metric mode {mode!r}; expected one of {', '.join(METRIC_MODES)}"
        raise ValidationError(msg)
    if mode == "count":
        tp, tn = int(counts.tp.sum()), int(counts.tn.sum())
        fp, fn = int(counts.fp.sum()), int(counts.fn.sum())
        acc = _ratio(tp + tn, tp + tn + fp + fn, "Acc", flags)
        prec = _ratio(tp, tp + fp, "Prec", flags)
        rec = _ratio(tp, tp + fn, "Recall", flags)
    else:
        n = counts.samples_seen
        if n == 0:
            flags.append("no-samples")
            return 0.0, 0.0, 0.0, 0.0
        union = counts.pred_size + counts.true_size - counts.inter
        acc_i, prec_i, rec_i = [], [], []
        for inter, pred, true, uni in zip(
            counts.inter.tolist(), counts.pred_size.tolist(), counts.true_size.tolist(), union.tolist(), strict=True
        ):
            acc_i.append(_ratio(inter, uni, "Acc", flags))
            prec_i.append(_ratio(inter, pred, "Prec", flags))
            rec_i.append(_ratio(inter, true, "Recall", flags))
        acc = math.fsum(acc_i) / n
        prec = math.fsum(prec_i) / n
        rec = math.fsum(rec_i) / n
    f1 = _ratio(2 * prec * rec, prec + rec, "F1", flags)
    return acc, prec, rec, f1


@dataclass(frozen=True)
class MetricsReport:
    mA: float  # noqa: N815
    Acc: float  # noqa: N815
    Prec: float  # noqa: N815
    Recall: float  # noqa: N815
    F1: float  # noqa: N815
    mode: str = "instance"
    samples: int = 0
    flags: tuple[str, ...] = ()

    def scores(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in REPORT_KEYS}

    def to_dict(self) -> dict[str, object]:
        return {**self.scores(), "mode": self.mode, "samples": self.samples, "flags": list(self.flags)}

    def format_text(self) -> str:
        lines = [f"{key}={value:.5f}" for key, value in self.scores().items()]
        lines.append(f"mode={self.mode}")
        lines.append(f"samples={self.samples}")
        if self.flags:
            lines.append(f"flags={','.join(self.flags)}")
        return "\n".join(lines) + "\n"


def build_report(
    counts: ConfusionCounts,
    *,
    mode: MetricMode = "instance",
    strict: bool = False,
    attributes: tuple[str, ...] | None = None,
) -> MetricsReport:
    flags: list[str] = []
    ma = label_based_mA(counts, strict=strict, attributes=attributes, flags=flags)
    acc, prec, rec, f1 = instance_metrics(counts, mode, flags=flags)
    if flags:
        logger.warning("zero denominators while scoring: %s", sorted(set(flags)))
    return MetricsReport(ma, acc, prec, rec, f1, mode, counts.samples_seen, tuple(sorted(set(flags))))


def evaluate_predictions(
    predictions: np.ndarray,
    labels: np.ndarray,
    *,
    mode: MetricMode = "instance",
    strict: bool = False,
    attributes: tuple[str, ...] | None = None,
) -> MetricsReport:
    """Score a full prediction matrix in one call."""
    counts = accumulate(ConfusionCounts.empty(np.asarray(labels).shape[1]), predictions, labels)
    return build_report(counts, mode=mode, strict=strict, attributes=attributes)


def write_report(report: MetricsReport, out_dir: Path) -> tuple[Path, Path]:
    """Write ``report.txt`` (five decimals) and ``report.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "report.txt"
    json_path = out_dir / "report.json"
    text_path.write_text(report.format_text(), encoding="utf-8")
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return text_path, json_path
