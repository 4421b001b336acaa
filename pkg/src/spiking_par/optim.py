"""Adam and the warm-up / step-decay learning-rate schedule."""

import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, DataIntegrityError

logger = logging.getLogger(__name__)

_STEP_LIMB = 2**24


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 8e-4
    weight_decay: float = 1e-4
    betas: tuple[float, ...] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            msg = f"optimizer.lr must be positive, got {self.lr}"
            raise ConfigError(msg)
        if self.weight_decay < 0:
            msg = f"optimizer.weight_decay must be >= 0, got {self.weight_decay}"
            raise ConfigError(msg)
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):  # noqa: PLR2004
            msg = f"optimizer.betas must be two values in [0, 1), got {self.betas}"
            raise ConfigError(msg)
        if not self.eps > 0:
            msg = f"optimizer.eps must be positive, got {self.eps}"
            raise ConfigError(msg)


@dataclass(frozen=True)
class ScheduleConfig:
    """Epochs are counted from 0; a decay epoch ``d`` applies from epoch ``d`` on."""

    warmup_epochs: int = 10
    warmup_target: float | None = None
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (30, 50)

    def __post_init__(self) -> None:
        if self.warmup_epochs < 0:
            msg = f"schedule.warmup_epochs must be >= 0, got {self.warmup_epochs}"
            raise ConfigError(msg)
        if self.warmup_target is not None and not self.warmup_target > 0:
            msg = f"schedule.warmup_target must be positive, got {self.warmup_target}"
            raise ConfigError(msg)
        if not 0 < self.decay_factor <= 1:
            msg = f"schedule.decay_factor must lie in (0, 1], got {self.decay_factor}"
            raise ConfigError(msg)


def lr_at(step: int, steps_per_epoch: int, schedule: ScheduleConfig, base_lr: float) -> float:
    """Learning rate for global iteration *step* (0-based).

    Warm-up ramps linearly per iteration from 0 to the warm-up target over
    ``warmup_epochs``; afterwards ``base_lr`` is multiplied by ``decay_factor``
    once for every decay epoch already reached.
    """
    epoch = step // max(steps_per_epoch, 1)
    if epoch < schedule.warmup_epochs:
        target = schedule.warmup_target if schedule.warmup_target is not None else base_lr
        return target * (step + 1) / (schedule.warmup_epochs * steps_per_epoch)
    passed = sum(1 for d in schedule.decay_epochs if epoch >= d)
    return base_lr * schedule.decay_factor**passed


class Adam:
    """Adam with L2 weight decay folded into the gradient.

    Parameters without a gradient this step are left untouched (their moments
    do not advance), so parameters that never receive gradients never move.
    """

    def __init__(self, params: Mapping[str, Tensor], cfg: OptimizerConfig) -> None:
        self.params = dict(params)
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.cfg.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.cfg.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        # packs hold float32, which is exact only below 2**24; split the counter
        low, high = self.t % _STEP_LIMB, self.t // _STEP_LIMB
        state = {"adam.step": np.array([low, high], dtype=np.float32)}
        for name in self.params:
            state[f"adam.m.{name}"] = self.m[name]
            state[f"adam.v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        try:
            self.t = _read_step(state["adam.step"])
            for name, p in self.params.items():
                for slot, store in (("m", self.m), ("v", self.v)):
                    arr = state[f"adam.{slot}.{name}"]
                    if arr.shape != p.shape:
                        msg = f"optimizer state {slot}.{name} has shape {arr.shape}, expected {p.shape}"
                        raise DataIntegrityError(msg)
                    store[name] = arr.astype(p.dtype).copy()
        except KeyError as exc:
            msg = f"checkpoint lacks optimizer state {exc.args[0]!r}"
            raise DataIntegrityError(msg) from None


def _read_step(arr: np.ndarray) -> int:
    """Step counter from ``[low, high]`` 24-bit limbs; a lone value is read as is."""
    flat = np.asarray(arr).reshape(-1)
    if flat.size == 1:
        return int(flat[0])
    if flat.size != 2:  # noqa: PLR2004
        msg = f"optimizer step counter must hold 1 or 2 values, got {flat.size}"
        raise DataIntegrityError(msg)
    return int(flat[0]) + int(flat[1]) * _STEP_LIMB
