"""Training objectives and the teacher artifact they read.

Loss terms:

* ``weighted_bce``: class-imbalance weighted binary cross-entropy, summed over
  attributes and averaged over the batch.
* ``resp_kd``: per-attribute Bernoulli KL between temperature-softened
  teacher and student probabilities, scaled by ``temperature**2``.
* ``feat_kd``: KL between softmaxes (over attributes) of cosine similarities
  between attribute text embeddings and visual features; student features
  reach the teacher width through a learnable linear ``FeatureProjection``.

The teacher never runs in-process. Its per-sample logits and features come
from a ``TeacherArtifact`` file written by :mod:`spiking_par.mock_teacher`
(or by any external model that writes the same format).
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor
from .errors import ConfigError, DataIntegrityError, DimensionError, ValidationError
from .functional import clip, l2_normalize, linear, log_softmax, matmul, sigmoid, softmax, softplus
from .tensor_io import ByteReader, atomic_write

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-7
ARTIFACT_MAGIC = b"SNTA1\0"


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 2.0
    feature_temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            msg = f"distill.alpha and distill.beta must be >= 0, got {self.alpha}, {self.beta}"
            raise ConfigError(msg)
        if not self.temperature > 0 or not self.feature_temperature > 0:
            msg = f"distillation temperatures must be positive, got {self.temperature}, {self.feature_temperature}"
            raise ConfigError(msg)

    @property
    def uses_teacher(self) -> bool:
        return self.alpha > 0 or self.beta > 0


@dataclass(frozen=True)
class AttrWeights:
    """Per-attribute BCE weights derived from training-set positive ratios."""

    ratios: np.ndarray
    omega_pos: np.ndarray
    omega_neg: np.ndarray

    @classmethod
    def from_ratios(cls, ratios: Sequence[float] | np.ndarray) -> "AttrWeights":
        r = np.asarray(ratios, dtype=np.float64)
        if r.ndim != 1 or np.any((r < 0) | (r > 1)) or not np.all(np.isfinite(r)):
            msg = f"positive ratios must lie in [0, 1], got {r}"
            raise ValidationError(msg)
        if np.any((r == 0) | (r == 1)):
            logger.warning("attribute(s) %s have no positives or no negatives", np.flatnonzero((r == 0) | (r == 1)))
        return cls(r, np.exp(1.0 - r), np.exp(r))

    @classmethod
    def uniform(cls, num_attributes: int) -> "AttrWeights":
        ones = np.ones(num_attributes)
        return cls(np.full(num_attributes, 0.5), ones, ones)

    def matrix(self, labels: np.ndarray) -> np.ndarray:
        return np.where(labels > 0, self.omega_pos, self.omega_neg)


def _check_labels(labels: np.ndarray) -> None:
    if not np.isin(labels, (0, 1)).all():
        msg = "labels must be binary (0/1)"
        raise ValidationError(msg)


def weighted_bce(logits: Tensor, labels: np.ndarray, weights: AttrWeights) -> Tensor:
    """Mean over the batch of the weighted per-attribute BCE sum.

    Uses ``-log sigmoid(z) = softplus(-z)`` and ``-log(1 - sigmoid(z)) = softplus(z)``.
    """
    y = np.asarray(labels)
    if y.shape != logits.shape:
        msg = f"labels {y.shape} do not match logits {logits.shape}"
        raise DimensionError(msg)
    _check_labels(y)
    y = y.astype(logits.dtype)
    w = weights.matrix(y).astype(logits.dtype)
    per_term = softplus(-logits) * y + softplus(logits) * (1.0 - y)
    return (per_term * w).sum(axis=1).mean()


def _bernoulli_probs(logits: Tensor, temperature: float) -> Tensor:
    return clip(sigmoid(logits / temperature), PROB_FLOOR, 1.0 - PROB_FLOOR)


def resp_kd(student_logits: Tensor, teacher_logits: np.ndarray | Tensor, temperature: float) -> Tensor:
    """Mean per-attribute ``KL(teacher || student)`` times ``temperature**2``."""
    if not temperature > 0:
        msg = f"temperature must be positive, got {temperature}"
        raise ConfigError(msg)
    teacher = as_tensor(teacher_logits).detach()
    if teacher.shape != student_logits.shape:
        msg = f"teacher logits {teacher.shape} do not match student logits {student_logits.shape}"
        raise DimensionError(msg)
    teacher = Tensor(teacher.data.astype(student_logits.dtype))
    t = _bernoulli_probs(teacher, temperature)
    s = _bernoulli_probs(student_logits, temperature)
    kl = t * (t.log() - s.log()) + (1.0 - t) * ((1.0 - t).log() - (1.0 - s).log())
    return kl.mean() * (temperature * temperature)


class FeatureProjection:
    """Bias-free linear map from student width to teacher width."""

    def __init__(
        self,
        student_dim: int,
        teacher_dim: int,
        *,
        seed: int = 0,
        dtype: np.dtype | type = np.float32,
        weight: np.ndarray | None = None,
    ) -> None:
        if weight is None:
            rng = np.random.default_rng(seed)
            weight = rng.normal(0.0, 1.0 / np.sqrt(student_dim), size=(teacher_dim, student_dim))
        elif weight.shape != (teacher_dim, student_dim):
            msg = f"projection weight must be {(teacher_dim, student_dim)}, got {weight.shape}"
            raise DimensionError(msg)
        self.weight = Tensor(np.asarray(weight, dtype=dtype), requires_grad=True, name="projection.weight")

    def parameters(self) -> dict[str, Tensor]:
        return {"projection.weight": self.weight}

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight)


def _attribute_similarity(visual: Tensor, text: Tensor) -> Tensor:
    return matmul(l2_normalize(visual), l2_normalize(text).transpose(1, 0))


def _require_nonzero_rows(array: np.ndarray, what: str) -> None:
    if np.any(np.linalg.norm(array, axis=-1) == 0):
        msg = f"{what} contains a zero-norm row; cosine similarity is undefined"
        raise ValidationError(msg)


def feat_kd(  # noqa: PLR0913
    student_feat: Tensor,
    teacher_feat: np.ndarray,
    text_feat: np.ndarray,
    projection: FeatureProjection,
    *,
    temperature: float = 1.0,
) -> Tensor:
    """Mean over the batch of ``KL(p || q)`` between attribute-similarity softmaxes."""
    dtype = student_feat.dtype
    projected = projection(student_feat)
    teacher = np.asarray(teacher_feat, dtype=dtype)
    text = np.asarray(text_feat, dtype=dtype)
    if projected.shape != teacher.shape or text.shape[1] != teacher.shape[1]:
        msg = f"feature shapes disagree: student→{projected.shape}, teacher {teacher.shape}, text {text.shape}"
        raise DimensionError(msg)
    _require_nonzero_rows(projected.data, "projected student features")
    _require_nonzero_rows(teacher, "teacher visual features")
    _require_nonzero_rows(text, "attribute text features")

    text_t = Tensor(text)
    teacher_sims = _attribute_similarity(Tensor(teacher), text_t) / temperature
    student_sims = _attribute_similarity(projected, text_t) / temperature
    p = softmax(teacher_sims)
    kl = p * (log_softmax(teacher_sims) - log_softmax(student_sims))
    return kl.sum(axis=1).mean()


def total_loss(
    ce: Tensor | float,
    respkd: Tensor | float,
    featkd: Tensor | float,
    cfg: DistillConfig,
) -> Tensor | float:
    """``ce + alpha * respkd + beta * featkd``; zero-weighted terms are dropped."""
    total = ce
    if cfg.alpha:
        total = total + respkd * cfg.alpha
    if cfg.beta:
        total = total + featkd * cfg.beta
    return total


# ── teacher artifact ─────────────────────────────────────────────────


@dataclass(frozen=True)
class TeacherArtifact:
    ids: np.ndarray  # [S] int64
    logits: np.ndarray  # [S, M]
    visual: np.ndarray  # [S, D_t]
    text: np.ndarray  # [M, D_t]

    def __post_init__(self) -> None:
        s, m = self.logits.shape
        if self.ids.shape != (s,) or self.visual.shape[0] != s or self.text.shape != (m, self.visual.shape[1]):
            msg = (
                f"inconsistent artifact shapes: ids {self.ids.shape}, logits {self.logits.shape}, "
                f"visual {self.visual.shape}, text {self.text.shape}"
            )
            raise DataIntegrityError(msg)
        if len(np.unique(self.ids)) != s:
            msg = "teacher artifact has duplicate sample ids"
            raise DataIntegrityError(msg)
        _require_nonzero_rows(self.visual, "teacher visual features")
        _require_nonzero_rows(self.text, "attribute text features")
        object.__setattr__(self, "_index", {int(i): row for row, i in enumerate(self.ids)})

    @property
    def num_samples(self) -> int:
        return len(self.ids)

    @property
    def num_attributes(self) -> int:
        return self.logits.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.visual.shape[1]

    def missing_ids(self, ids: Sequence[int] | np.ndarray) -> list[int]:
        index = self._index  # type: ignore[attr-defined]
        return [int(i) for i in ids if int(i) not in index]

    def lookup(self, ids: Sequence[int] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Teacher logits and visual features for *ids*, in the given order."""
        missing = self.missing_ids(ids)
        if missing:
            msg = f"teacher artifact lacks {len(missing)} sample id(s): {missing[:10]}"
            raise ValidationError(msg)
        index = self._index  # type: ignore[attr-defined]
        rows = np.fromiter((index[int(i)] for i in ids), dtype=np.int64, count=len(ids))
        return self.logits[rows], self.visual[rows]


def _record_dtype(m: int, d: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("logits", "<f4", (m,)), ("visual", "<f4", (d,))])


def write_artifact(path: Path, artifact: TeacherArtifact) -> None:
    s, m, d = artifact.num_samples, artifact.num_attributes, artifact.feature_dim
    records = np.empty(s, dtype=_record_dtype(m, d))
    records["id"] = artifact.ids
    records["logits"] = artifact.logits
    records["visual"] = artifact.visual
    header = np.array([s, m, d], dtype="<u8").tobytes()
    text = np.ascontiguousarray(artifact.text, dtype="<f4").tobytes()
    atomic_write(path, ARTIFACT_MAGIC + header + text + records.tobytes())
    logger.info("wrote teacher artifact %s (%d samples, M=%d, D_t=%d)", path, s, m, d)


def read_artifact(path: Path) -> TeacherArtifact:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        msg = f"missing teacher artifact: {path}"
        raise DataIntegrityError(msg) from None
    reader = ByteReader(blob, str(path))
    reader.magic(ARTIFACT_MAGIC)
    s, m, d = reader.u64(), reader.u64(), reader.u64()
    text = reader.f32s(m * d).reshape(m, d)
    dtype = _record_dtype(m, d)
    records = np.frombuffer(reader.take(s * dtype.itemsize), dtype=dtype)
    if not reader.exhausted:
        msg = f"{path}: trailing bytes after {s} teacher records"
        raise DataIntegrityError(msg)
    return TeacherArtifact(
        ids=records["id"].astype(np.int64),
        logits=records["logits"].astype(np.float32),
        visual=records["visual"].astype(np.float32),
        text=text,
    )
