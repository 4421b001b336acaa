"""Student training, checkpoints, evaluation, and the distillation ablation.

A run directory holds::

    config.resolved     fully resolved key=value config
    metrics.jsonl       one JSON object per finished epoch
    checkpoint.snpk     model parameters, BN buffers, projection, Adam state
    checkpoint.json     epoch counter, metric history, attribute vocabulary, config
    report.txt/.json    final test-split scores

The checkpoint is rewritten after every epoch, so an interrupted run resumes
from the last finished epoch and continues exactly as an uninterrupted one:
shuffles are seeded per epoch and the learning rate is a pure function of
the global step.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .autograd import Tape, Tensor
from .config import RunConfig, apply_overrides, config_from_text, dump_config
from .data import SplitData, available_splits, batch_iter, load_split, positive_ratios
from .distill import (
    AttrWeights,
    DistillConfig,
    FeatureProjection,
    TeacherArtifact,
    feat_kd,
    read_artifact,
    resp_kd,
    total_loss,
    weighted_bce,
)
from .errors import ConfigError, DataIntegrityError, ValidationError
from .metrics import ConfusionCounts, MetricMode, MetricsReport, accumulate, build_report, threshold_predictions, write_report
from .optim import Adam, lr_at
from .spikingformer import Spikingformer
from .tensor_io import atomic_write, read_pack, write_pack

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.snpk"
METRICS_LOG = "metrics.jsonl"
RESOLVED_CONFIG = "config.resolved"
EVAL_BATCH = 64


# ── checkpoints ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class Checkpoint:
    tensors: dict[str, np.ndarray]
    epoch: int
    history: list[dict[str, Any]]
    attributes: tuple[str, ...]
    config: RunConfig

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        cut = len(prefix) + 1
        return {name[cut:]: arr for name, arr in self.tensors.items() if name.startswith(f"{prefix}.")}

    def build_model(self) -> Spikingformer:
        model = Spikingformer(self.config.model, seed=self.config.seed)
        model.load_state(self.group("model"))
        return model


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(  # noqa: PLR0913
    path: Path,
    model: Spikingformer,
    projection: FeatureProjection | None,
    optimizer: Adam,
    *,
    epoch: int,
    history: list[dict[str, Any]],
    attributes: tuple[str, ...],
    cfg: RunConfig,
) -> Path:
    tensors: dict[str, np.ndarray] = {f"model.{n}": p.data for n, p in model.parameters().items()}
    tensors.update({f"model.{n}": buf for n, buf in model.buffers().items()})
    if projection is not None:
        tensors.update({n: p.data for n, p in projection.parameters().items()})
    tensors.update(optimizer.state_dict())
    write_pack(path, tensors)
    meta = {
        "epoch": epoch,
        "history": history,
        "attributes": list(attributes),
        "config": dump_config(cfg),
    }
    atomic_write(sidecar_path(path), (json.dumps(meta, indent=2) + "\n").encode("utf-8"))
    return Path(path)


def load_checkpoint(path: Path) -> Checkpoint:
    tensors = read_pack(path)
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError:
        msg = f"checkpoint sidecar missing: {side}"
        raise DataIntegrityError(msg) from None
    except json.JSONDecodeError as exc:
        msg = f"{side}: invalid JSON ({exc.msg} at line {exc.lineno})"
        raise DataIntegrityError(msg) from None
    try:
        return Checkpoint(
            tensors=tensors,
            epoch=int(meta["epoch"]),
            history=list(meta["history"]),
            attributes=tuple(meta["attributes"]),
            config=config_from_text(meta["config"], str(side)),
        )
    except KeyError as exc:
        msg = f"{side}: missing field {exc.args[0]!r}"
        raise DataIntegrityError(msg) from None


# ── evaluation ───────────────────────────────────────────────────────


class Evaluation(NamedTuple):
    report: MetricsReport
    predictions: np.ndarray
    logits: np.ndarray


def evaluate(  # noqa: PLR0913
    model: Spikingformer,
    split: SplitData,
    *,
    threshold: float = 0.5,
    mode: MetricMode = "instance",
    strict: bool = False,
    batch_size: int = EVAL_BATCH,
) -> Evaluation:
    """Score *split* with evaluation-mode batch norm."""
    counts = ConfusionCounts.empty(len(split.attributes))
    logits, preds = [], []
    for batch in batch_iter(split, batch_size):
        lg = model.forward(batch.images, train=False).logits.data
        pr = threshold_predictions(lg, threshold)
        counts = accumulate(counts, pr, batch.labels)
        logits.append(lg)
        preds.append(pr)
    report = build_report(counts, mode=mode, strict=strict, attributes=split.attributes)
    m = len(split.attributes)
    return Evaluation(
        report,
        np.concatenate(preds) if preds else np.zeros((0, m), np.uint8),
        np.concatenate(logits) if logits else np.zeros((0, m), np.float32),
    )


# ── training ─────────────────────────────────────────────────────────


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    history: list[dict[str, Any]] = field(default_factory=list)
    final_report: MetricsReport | None = None


def _value(x: Tensor | float) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


class _Step(NamedTuple):
    ce: float
    resp_kd: float
    feat_kd: float
    total: float


def _train_step(  # noqa: PLR0913
    model: Spikingformer,
    projection: FeatureProjection | None,
    teacher: TeacherArtifact | None,
    optimizer: Adam,
    batch_ids: np.ndarray,
    images: np.ndarray,
    labels: np.ndarray,
    weights: AttrWeights,
    dcfg: DistillConfig,
) -> _Step:
    with Tape() as tape:
        out = model.forward(images, train=True)
        ce = weighted_bce(out.logits, labels, weights)
        resp: Tensor | float = 0.0
        feat: Tensor | float = 0.0
        if teacher is not None:
            t_logits, t_visual = teacher.lookup(batch_ids)
            if dcfg.alpha:
                resp = resp_kd(out.logits, t_logits, dcfg.temperature)
            if dcfg.beta and projection is not None:
                feat = feat_kd(out.features, t_visual, teacher.text, projection, temperature=dcfg.feature_temperature)
        loss = total_loss(ce, resp, feat, dcfg)
    tape.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    return _Step(ce.item(), _value(resp), _value(feat), _value(loss))


def _load_teacher(cfg: RunConfig, train: SplitData) -> TeacherArtifact | None:
    if not cfg.distill.uses_teacher:
        return None
    if cfg.teacher is None:
        logger.info("no teacher artifact given; training with the weighted BCE term only")
        return None
    teacher = read_artifact(cfg.teacher)
    if teacher.num_attributes != len(train.attributes):
        msg = f"teacher covers {teacher.num_attributes} attributes, dataset selects {len(train.attributes)}"
        raise ValidationError(msg)
    missing = teacher.missing_ids(train.ids)
    if missing:
        msg = f"teacher artifact lacks {len(missing)} training sample id(s): {missing[:20]}"
        raise ValidationError(msg)
    return teacher


def _check_compatible(cfg: RunConfig, train: SplitData) -> None:
    m = len(train.attributes)
    if cfg.model.num_attributes != m:
        msg = f"model.num_attributes={cfg.model.num_attributes} but the dataset selects {m} attributes"
        raise ConfigError(msg)
    expected = (cfg.model.in_channels, cfg.model.image_height, cfg.model.image_width)
    if len(train) and train.images.shape[1:] != expected:
        msg = f"dataset images are {train.images.shape[1:]}, model expects {expected}"
        raise ConfigError(msg)


def _validation_split(dataset_dir: Path) -> SplitData | None:
    for name in ("val", "test"):
        if name in available_splits(dataset_dir):
            split = load_split(dataset_dir, name)
            if len(split):
                return split
    return None


def _write_history(path: Path, history: list[dict[str, Any]]) -> None:
    atomic_write(path, "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history).encode("utf-8"))


def train(  # noqa: PLR0915
    cfg: RunConfig,
    dataset_dir: Path,
    *,
    teacher_path: Path | None = None,
    resume: Path | None = None,
) -> TrainResult:
    """Train a student on ``dataset_dir`` and return the run summary.

    ``teacher_path`` overrides ``cfg.teacher``; ``resume`` names a checkpoint
    to continue from.
    """
    cfg = apply_overrides(cfg, {"teacher": teacher_path})
    dataset_dir = Path(dataset_dir)
    train_split = load_split(dataset_dir, "train")
    if not len(train_split):
        msg = f"{dataset_dir}: the train split is empty"
        raise DataIntegrityError(msg)
    _check_compatible(cfg, train_split)
    val_split = _validation_split(dataset_dir)
    teacher = _load_teacher(cfg, train_split)
    dcfg = cfg.distill if teacher is not None else DistillConfig(alpha=0.0, beta=0.0)

    model = Spikingformer(cfg.model, seed=cfg.seed)
    projection = None
    if teacher is not None and dcfg.beta:
        projection = FeatureProjection(cfg.model.embed_dim, teacher.feature_dim, seed=cfg.seed + 1)
    params = model.parameters() | (projection.parameters() if projection else {})
    optimizer = Adam(params, cfg.optimizer)
    m = len(train_split.attributes)
    weights = AttrWeights.uniform(m) if cfg.uniform_weights else AttrWeights.from_ratios(positive_ratios(train_split.labels))

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    history: list[dict[str, Any]] = []
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.attributes != train_split.attributes:
            msg = f"checkpoint vocabulary {ckpt.attributes} does not match dataset {train_split.attributes}"
            raise ValidationError(msg)
        model.load_state(ckpt.group("model"))
        if projection is not None:
            if "projection.weight" not in ckpt.tensors:
                msg = f"{resume} has no feature projection; it was trained without feat_kd"
                raise DataIntegrityError(msg)
            projection.weight.data[...] = ckpt.tensors["projection.weight"]
        optimizer.load_state_dict(ckpt.tensors)
        start_epoch, history = ckpt.epoch + 1, ckpt.history
        logger.info("resuming from %s at epoch %d", resume, start_epoch)

    (out_dir / RESOLVED_CONFIG).write_text(dump_config(cfg), encoding="utf-8")
    logger.info("resolved config:\n%s", dump_config(cfg).rstrip())

    steps_per_epoch = math.ceil(len(train_split) / cfg.batch_size)
    for epoch in range(start_epoch, cfg.epochs):
        steps: list[_Step] = []
        lr = cfg.optimizer.lr
        for i, batch in enumerate(batch_iter(train_split, cfg.batch_size, shuffle_seed=cfg.seed * 1000 + epoch)):
            lr = lr_at(epoch * steps_per_epoch + i, steps_per_epoch, cfg.schedule, cfg.optimizer.lr)
            optimizer.lr = lr
            steps.append(
                _train_step(
                    model, projection, teacher, optimizer, batch.ids, batch.images, batch.labels, weights, dcfg
                )
            )
        record: dict[str, Any] = {"epoch": epoch, "lr": lr}
        for key in _Step._fields:
            record[key] = math.fsum(getattr(s, key) for s in steps) / len(steps)
        if val_split is not None:
            val = evaluate(model, val_split, threshold=cfg.threshold, mode=cfg.eval_mode).report  # type: ignore[arg-type]
            record["val"] = val.scores()
        history.append(record)
        logger.info(
            "epoch %d/%d total %.4f (ce %.4f resp %.4f feat %.4f)%s",
            epoch + 1,
            cfg.epochs,
            record["total"],
            record["ce"],
            record["resp_kd"],
            record["feat_kd"],
            f" val mA {record['val']['mA']:.4f} F1 {record['val']['F1']:.4f}" if "val" in record else "",
            extra={k: v for k, v in record.items() if k != "val"} | {f"val_{k}": v for k, v in record.get("val", {}).items()},
        )
        _write_history(out_dir / METRICS_LOG, history)
        save_checkpoint(
            ckpt_path,
            model,
            projection,
            optimizer,
            epoch=epoch,
            history=history,
            attributes=train_split.attributes,
            cfg=cfg,
        )

    result = TrainResult(out_dir, ckpt_path, history)
    if "test" in available_splits(dataset_dir):
        test_split = load_split(dataset_dir, "test")
        if len(test_split):
            result.final_report = evaluate(
                model, test_split, threshold=cfg.threshold, mode=cfg.eval_mode  # type: ignore[arg-type]
            ).report
            write_report(result.final_report, out_dir)
            logger.info("test mA %.4f F1 %.4f", result.final_report.mA, result.final_report.F1)
    return result


# ── distillation ablation ────────────────────────────────────────────


class AblationRow(NamedTuple):
    name: str
    alpha: float
    beta: float
    mA: list[float]  # noqa: N815
    F1: list[float]  # noqa: N815

    @property
    def mean_mA(self) -> float:  # noqa: N802
        return math.fsum(self.mA) / len(self.mA)

    @property
    def mean_F1(self) -> float:  # noqa: N802
        return math.fsum(self.F1) / len(self.F1)


def ablation_rows(cfg: DistillConfig) -> list[tuple[str, float, float]]:
    a = cfg.alpha or 1.0
    b = cfg.beta or 1.0
    return [("ce", 0.0, 0.0), ("ce+featkd", 0.0, b), ("ce+respkd", a, 0.0), ("ce+respkd+featkd", a, b)]


def run_ablation(cfg: RunConfig, dataset_dir: Path, seeds: int) -> list[AblationRow]:
    """Train every distillation row for ``seeds`` seeds and tabulate test scores."""
    if cfg.teacher is None:
        msg = "the ablation needs a teacher artifact"
        raise ConfigError(msg)
    if seeds < 1:
        msg = f"seeds must be >= 1, got {seeds}"
        raise ConfigError(msg)
    base_out = Path(cfg.out)
    rows = []
    for name, alpha, beta in ablation_rows(cfg.distill):
        ma, f1 = [], []
        for offset in range(seeds):
            run_cfg = apply_overrides(
                cfg,
                {
                    "distill.alpha": alpha,
                    "distill.beta": beta,
                    "seed": cfg.seed + offset,
                    "out": base_out / name / f"seed{cfg.seed + offset}",
                },
            )
            report = train(run_cfg, dataset_dir).final_report
            if report is None:
                msg = f"{dataset_dir} has no test split to score the ablation on"
                raise DataIntegrityError(msg)
            ma.append(report.mA)
            f1.append(report.F1)
        rows.append(AblationRow(name, alpha, beta, ma, f1))
        logger.info("ablation row %s: mean mA %.4f mean F1 %.4f", name, rows[-1].mean_mA, rows[-1].mean_F1)
    write_ablation(rows, base_out)
    return rows


def write_ablation(rows: list[AblationRow], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = [
        {"name": r.name, "alpha": r.alpha, "beta": r.beta, "mA": r.mA, "F1": r.F1, "mean_mA": r.mean_mA, "mean_F1": r.mean_F1}
        for r in rows
    ]
    (out_dir / "ablation.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    width = max(len(r.name) for r in rows)
    lines = [f"{'row':<{width}}  {'mA':>8}  {'F1':>8}"]
    lines.extend(f"{r.name:<{width}}  {r.mean_mA:8.5f}  {r.mean_F1:8.5f}" for r in rows)
    (out_dir / "ablation.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
