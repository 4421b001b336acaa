"""A small dense conv classifier that stands in for a large teacher model.

Architecture::

    conv 3x3 s2 (C→16) ─ BN ─ ReLU ─ conv 3x3 s2 (16→32) ─ BN ─ ReLU
        ─ region average pool to a 4x2 grid ─ flatten (256) ─ FC (→ M)

The flattened pooled map is the visual feature ``F_v``; the rows of the FC
weight serve as the per-attribute text embeddings ``F_t``. After training,
every sample of every split in the dataset directory is scored and written
to a teacher artifact.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .autograd import Tape, Tensor
from .data import SplitData, available_splits, batch_iter, load_split, positive_ratios
from .distill import AttrWeights, TeacherArtifact, weighted_bce, write_artifact
from .errors import DataIntegrityError
from .functional import avgpool2d, batchnorm2d, conv2d, linear, relu
from .metrics import evaluate_predictions, threshold_predictions
from .optim import Adam, OptimizerConfig

logger = logging.getLogger(__name__)

GRID = (4, 2)


@dataclass(frozen=True)
class TeacherOptions:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 3e-3
    seed: int = 0
    widths: tuple[int, int] = (16, 32)


class TeacherResult(NamedTuple):
    artifact: TeacherArtifact
    path: Path
    test_mA: float  # noqa: N815


class DenseTeacher:
    def __init__(self, in_channels: int, num_attributes: int, image_hw: tuple[int, int], opts: TeacherOptions) -> None:
        rng = np.random.default_rng(opts.seed)
        c1, c2 = opts.widths
        h, w = image_hw
        for _ in range(2):
            h, w = (h + 1) // 2, (w + 1) // 2
        if h < GRID[0] or w < GRID[1]:
            msg = f"images of {image_hw} are too small for the teacher's {GRID} pooling grid"
            raise DataIntegrityError(msg)
        self.pool = (h // GRID[0], w // GRID[1])
        self.feature_dim = c2 * (h // self.pool[0]) * (w // self.pool[1])

        def conv(cin: int, cout: int, name: str) -> Tensor:
            w0 = rng.normal(0.0, math.sqrt(2.0 / (cin * 9)), size=(cout, cin, 3, 3))
            return Tensor(w0.astype(np.float32), requires_grad=True, name=name)

        self.params: dict[str, Tensor] = {
            "conv1.weight": conv(in_channels, c1, "conv1.weight"),
            "bn1.gamma": Tensor(np.ones(c1, np.float32), requires_grad=True),
            "bn1.beta": Tensor(np.zeros(c1, np.float32), requires_grad=True),
            "conv2.weight": conv(c1, c2, "conv2.weight"),
            "bn2.gamma": Tensor(np.ones(c2, np.float32), requires_grad=True),
            "bn2.beta": Tensor(np.zeros(c2, np.float32), requires_grad=True),
            "fc.weight": Tensor(
                rng.normal(0.0, 1.0 / math.sqrt(self.feature_dim), size=(num_attributes, self.feature_dim)).astype(
                    np.float32
                ),
                requires_grad=True,
            ),
            "fc.bias": Tensor(np.zeros(num_attributes, np.float32), requires_grad=True),
        }
        self.stats = {
            name: (np.zeros(c, np.float32), np.ones(c, np.float32)) for name, c in (("bn1", c1), ("bn2", c2))
        }

    def forward(self, images: np.ndarray, *, train: bool) -> tuple[Tensor, Tensor]:
        p = self.params
        x = Tensor(images.astype(np.float32))
        for idx in (1, 2):
            x = conv2d(x, p[f"conv{idx}.weight"], stride=2, padding=1)
            mean, var = self.stats[f"bn{idx}"]
            x = relu(batchnorm2d(x, p[f"bn{idx}.gamma"], p[f"bn{idx}.beta"], mean, var, train=train))
        pooled = avgpool2d(x, self.pool)
        features = pooled.reshape(pooled.shape[0], -1)
        return linear(features, p["fc.weight"], p["fc.bias"]), features


def _score(teacher: DenseTeacher, split: SplitData, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    logits, feats = [], []
    for batch in batch_iter(split, batch_size):
        lg, ft = teacher.forward(batch.images, train=False)
        logits.append(lg.data)
        feats.append(ft.data)
    return np.concatenate(logits), np.concatenate(feats)


def train_mock_teacher(dataset_dir: Path, out_path: Path, opts: TeacherOptions | None = None) -> TeacherResult:
    opts = opts or TeacherOptions()
    splits = {name: load_split(dataset_dir, name) for name in available_splits(dataset_dir)}
    if "train" not in splits:
        msg = f"{dataset_dir} has no train split"
        raise DataIntegrityError(msg)
    train = splits["train"]
    m = train.labels.shape[1]
    teacher = DenseTeacher(train.images.shape[1], m, train.images.shape[2:], opts)
    optimizer = Adam(teacher.params, OptimizerConfig(lr=opts.lr, weight_decay=0.0))
    weights = AttrWeights.from_ratios(positive_ratios(train.labels))

    for epoch in range(opts.epochs):
        losses = []
        for batch in batch_iter(train, opts.batch_size, shuffle_seed=opts.seed * 1000 + epoch):
            with Tape() as tape:
                logits, _ = teacher.forward(batch.images, train=True)
                loss = weighted_bce(logits, batch.labels, weights)
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            losses.append(loss.item())
        logger.info("teacher epoch %d loss %.4f", epoch, math.fsum(losses) / max(len(losses), 1))

    ids, logits, visual = [], [], []
    for split in splits.values():
        if not len(split):
            continue
        lg, ft = _score(teacher, split, opts.batch_size)
        ids.append(split.ids)
        logits.append(lg)
        visual.append(ft)
    # ReLU features can be all-zero for a sample; nudge so cosine similarity stays defined
    feats = np.concatenate(visual)
    feats[np.linalg.norm(feats, axis=1) == 0] = 1e-6
    artifact = TeacherArtifact(
        ids=np.concatenate(ids),
        logits=np.concatenate(logits).astype(np.float32),
        visual=feats.astype(np.float32),
        text=teacher.params["fc.weight"].data.copy(),
    )
    write_artifact(out_path, artifact)

    eval_split = splits.get("test") or splits.get("val") or train
    preds = threshold_predictions(_score(teacher, eval_split, opts.batch_size)[0])
    report = evaluate_predictions(preds, eval_split.labels)
    logger.info("mock teacher %s mA %.4f F1 %.4f", eval_split.manifest.split, report.mA, report.F1)
    return TeacherResult(artifact, Path(out_path), report.mA)
