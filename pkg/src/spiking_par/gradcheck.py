"""Finite-difference checks of the analytic gradients.

``finite_diff_check`` compares one tensor's gradient against central
differences. ``check_parameters`` does the same for a sample of coordinates
drawn from every parameter of a model and keeps the worst coordinate per
parameter tensor. ``tiny_problem`` builds the small soft-mode network plus
distillation losses that the ``grad-check`` command runs on.

The checked function must be smooth at the evaluation point; spiking layers
therefore run in ``soft`` mode, and everything is promoted to float64.
"""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autograd import Tape, Tensor
from .distill import AttrWeights, DistillConfig, FeatureProjection, feat_kd, resp_kd, total_loss, weighted_bce
from .errors import ConfigError
from .spikingformer import ModelConfig, Spikingformer

logger = logging.getLogger(__name__)

TOLERANCE = 1e-3
# coordinates whose analytic and numeric values differ by less than this pass
# regardless of relative error; float64 round-off at eps=1e-4 sits near 1e-12
ABS_TOLERANCE = 1e-9

# 5-point weights for f(x-2h), f(x-h), f(x+h), f(x+2h), divided by 12h
_FIVE_POINT = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))
_THREE_POINT = ((-1, -1.0), (1, 1.0))


def relative_error(analytic: float, numeric: float, floor: float = 1e-12) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + floor)


def _central_difference(f: Callable[[], float], data: np.ndarray, idx: tuple[int, ...], eps: float, stencil: int) -> float:
    taps, denom = (_THREE_POINT, 2 * eps) if stencil == 3 else (_FIVE_POINT, 12 * eps)  # noqa: PLR2004
    orig = data[idx]
    total = 0.0
    try:
        for offset, weight in taps:
            data[idx] = orig + offset * eps
            total += weight * f()
    finally:
        data[idx] = orig
    return total / denom


def _sample_indices(shape: tuple[int, ...], count: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    size = int(np.prod(shape))
    flat = np.arange(size) if count >= size else rng.choice(size, size=count, replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in np.sort(flat)]


def finite_diff_check(  # noqa: PLR0913
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-3,
    *,
    samples: int | None = None,
    seed: int = 0,
    floor: float = 1e-12,
    stencil: int = 3,
) -> float:
    """Max relative error between ``d f(x) / dx`` and central differences.

    *f* maps a tensor to a scalar tensor. The input is copied to float64;
    ``samples`` limits the check to that many random coordinates.
    """
    if stencil not in (3, 5):
        msg = f"stencil must be 3 or 5, got {stencil}"
        raise ConfigError(msg)
    base = x.data if isinstance(x, Tensor) else np.asarray(x)
    point = Tensor(base, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        out = f(point)
    tape.backward(out)
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    count = point.size if samples is None else samples
    worst = 0.0
    for idx in _sample_indices(point.shape, count, np.random.default_rng(seed)):
        numeric = _central_difference(lambda: f(point).item(), point.data, idx, eps, stencil)
        worst = max(worst, relative_error(float(analytic[idx]), numeric, floor))
    return worst


class Coordinate(NamedTuple):
    index: tuple[int, ...]
    analytic: float
    numeric: float
    error: float

    @property
    def abs_error(self) -> float:
        return abs(self.analytic - self.numeric)


@dataclass
class GradCheckReport:
    tolerance: float
    atol: float = ABS_TOLERANCE
    worst: dict[str, Coordinate] = field(default_factory=dict)
    checked: int = 0

    @property
    def max_error(self) -> float:
        return max((c.error for c in self.worst.values()), default=0.0)

    def accepts(self, c: Coordinate) -> bool:
        return c.error < self.tolerance or c.abs_error <= self.atol

    def _badness(self, c: Coordinate) -> tuple[bool, float]:
        return (not self.accepts(c), c.error)

    def record(self, name: str, c: Coordinate) -> None:
        """Keep *c* as the worst coordinate of *name* if it is worse; failures outrank passes."""
        current = self.worst.get(name)
        if current is None or self._badness(c) > self._badness(current):
            self.worst[name] = c
        self.checked += 1

    @property
    def passed(self) -> bool:
        return self.checked > 0 and all(self.accepts(c) for c in self.worst.values())

    def lines(self) -> list[str]:
        lines = ["=== Gradient check ===", ""]
        for name, c in self.worst.items():
            mark = "ok  " if self.accepts(c) else "FAIL"
            lines.append(
                f"{mark} {name:<32} worst {c.error:.3e} at {c.index} "
                f"(analytic {c.analytic:+.6e}, numeric {c.numeric:+.6e})"
            )
        lines.append("")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}: max relative error {self.max_error:.3e} over {self.checked} coordinates "
            f"(tolerance {self.tolerance:g}, absolute {self.atol:g})"
        )
        return lines


def _allocate(sizes: Mapping[str, int], samples: int) -> dict[str, int]:
    """Spread *samples* over tensors proportionally to size, at least two each."""
    total = sum(sizes.values())
    return {name: min(size, max(2, round(samples * size / total))) for name, size in sizes.items()}


def check_parameters(  # noqa: PLR0913
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    samples: int = 256,
    eps: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-12,
    tolerance: float = TOLERANCE,
    atol: float = ABS_TOLERANCE,
    stencil: int = 5,
) -> GradCheckReport:
    """Check sampled coordinates of every parameter; report the worst per tensor.

    *loss_fn* recomputes the scalar loss from the current parameter values. A
    coordinate passes when its relative error is below *tolerance* or its
    absolute error is at most *atol*.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance, atol)
    for name, count in _allocate({n: p.size for n, p in params.items()}, samples).items():
        p = params[name]
        for idx in _sample_indices(p.shape, count, rng):
            numeric = _central_difference(lambda: loss_fn().item(), p.data, idx, eps, stencil)
            a = float(analytic[name][idx])
            report.record(name, Coordinate(idx, a, numeric, relative_error(a, numeric, floor)))
        logger.debug("gradient check %s: %d coordinates", name, count)
    return report


# ── the tiny soft-mode problem ───────────────────────────────────────


TINY_CONFIG = ModelConfig(
    image_height=4,
    image_width=4,
    in_channels=3,
    tokenizer_widths=(4, 8),
    embed_dim=8,
    num_heads=2,
    num_blocks=1,
    mlp_ratio=2,
    time_steps=2,
    num_attributes=3,
    neuron_mode="soft",
)
TINY_BATCH = 2
TINY_TEACHER_DIM = 5


def tiny_problem(seed: int = 0, cfg: ModelConfig = TINY_CONFIG) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    """Loss closure over a float64 soft-mode model with every loss term active."""
    rng = np.random.default_rng(seed)
    model = Spikingformer(cfg, seed=seed, dtype=np.float64)
    projection = FeatureProjection(cfg.embed_dim, TINY_TEACHER_DIM, seed=seed + 1, dtype=np.float64)
    m = cfg.num_attributes
    images = rng.uniform(0.0, 1.0, size=(TINY_BATCH, cfg.in_channels, cfg.image_height, cfg.image_width))
    labels = rng.integers(0, 2, size=(TINY_BATCH, m)).astype(np.uint8)
    teacher_logits = rng.normal(size=(TINY_BATCH, m))
    teacher_visual = rng.normal(size=(TINY_BATCH, TINY_TEACHER_DIM))
    text = rng.normal(size=(m, TINY_TEACHER_DIM))
    weights = AttrWeights.from_ratios(np.linspace(0.3, 0.7, m))
    dcfg = DistillConfig()

    def loss_fn() -> Tensor:
        out = model.forward(images, train=True)
        ce = weighted_bce(out.logits, labels, weights)
        resp = resp_kd(out.logits, teacher_logits, dcfg.temperature)
        feat = feat_kd(out.features, teacher_visual, text, projection)
        return total_loss(ce, resp, feat, dcfg)  # type: ignore[return-value]

    return loss_fn, model.parameters() | projection.parameters()


def run_grad_check(
    *,
    seed: int = 0,
    samples: int = 256,
    eps: float = 1e-4,
    tolerance: float = TOLERANCE,
    atol: float = ABS_TOLERANCE,
) -> GradCheckReport:
    loss_fn, params = tiny_problem(seed)
    report = check_parameters(
        loss_fn, params, samples=samples, eps=eps, seed=seed, tolerance=tolerance, atol=atol
    )
    logger.info(
        "gradient check over %d coordinates: max relative error %.3e",
        report.checked,
        report.max_error,
        extra={"checked": report.checked, "max_error": report.max_error, "passed": report.passed},
    )
    return report
