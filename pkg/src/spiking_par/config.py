"""Run configuration: dataclasses, ``key=value`` files, and environment reads.

Config files are UTF-8 text, one ``key=value`` per line, ``#`` starts a
comment. Keys inside a section use a dotted prefix::

    epochs=30
    model.embed_dim=64
    model.tokenizer_widths=16,32
    schedule.decay_epochs=20
    distill.alpha=1.0

Unknown keys and unparsable values raise ``ConfigError`` naming the file and
line. ``dump_config`` writes the fully resolved config in the same format.

Environment variables:

* ``SNNPAR_LOG_LEVEL``: log level name for the CLI (default ``INFO``).
"""

import dataclasses
import logging
import os
import types
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cache
from pathlib import Path
from typing import Any, Literal, Union, get_args, get_origin, get_type_hints

from .data import SyntheticSpec
from .distill import DistillConfig
from .errors import ConfigError
from .metrics import METRIC_MODES
from .optim import OptimizerConfig, ScheduleConfig
from .spikingformer import ModelConfig

logger = logging.getLogger(__name__)

_LEVEL_NAMES = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@cache
def get_log_level() -> int:
    """Return the log level named by ``SNNPAR_LOG_LEVEL``.

    Falls back to INFO (with a one-time warning) on unknown names.
    Memoized so every caller sees the same value for the process lifetime.
    """
    raw = os.environ.get("SNNPAR_LOG_LEVEL", "").strip().upper()
    if not raw:
        return logging.INFO
    if raw not in _LEVEL_NAMES:
        logger.warning("SNNPAR_LOG_LEVEL=%r is not a log level name; using INFO", raw)
        return logging.INFO
    return getattr(logging, raw)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    teacher: Path | None = None
    epochs: int = 60
    batch_size: int = 12
    seed: int = 0
    out: Path = Path("runs/latest")
    threshold: float = 0.5
    uniform_weights: bool = False
    eval_mode: str = "instance"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            msg = f"epochs must be >= 1, got {self.epochs}"
            raise ConfigError(msg)
        if self.batch_size < 1:
            msg = f"batch_size must be >= 1, got {self.batch_size}"
            raise ConfigError(msg)
        if self.schedule.warmup_epochs >= self.epochs:
            msg = f"schedule.warmup_epochs ({self.schedule.warmup_epochs}) must be below epochs ({self.epochs})"
            raise ConfigError(msg)
        if not 0 < self.threshold < 1:
            msg = f"threshold must lie in (0, 1), got {self.threshold}"
            raise ConfigError(msg)
        if self.eval_mode not in METRIC_MODES:
            msg = f"eval_mode must be one of {', '.join(METRIC_MODES)}, got {self.eval_mode!r}"
            raise ConfigError(msg)


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "schedule": ScheduleConfig,
    "distill": DistillConfig,
}


# ── value coercion ───────────────────────────────────────────────────


def _coerce(raw: str, hint: Any, where: str) -> Any:  # noqa: PLR0911
    origin, args = get_origin(hint), get_args(hint)
    text = raw.strip()
    if origin in (Union, types.UnionType):
        if text.lower() in {"", "none"} and type(None) in args:
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(text, inner, where)
    if origin is Literal:
        if text not in args:
            msg = f"{where}: {text!r} is not one of {', '.join(map(str, args))}"
            raise ConfigError(msg)
        return text
    if origin is tuple:
        return tuple(_coerce(part, args[0], where) for part in text.split(",") if part.strip())
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in {"1", "true", "yes", "on"}:
                return True
            if lowered in {"0", "false", "no", "off"}:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is Path:
            return Path(text)
    except ValueError:
        msg = f"{where}: cannot read {text!r} as {getattr(hint, '__name__', hint)}"
        raise ConfigError(msg) from None
    return text


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


# ── parsing ──────────────────────────────────────────────────────────


def parse_lines(text: str, source: str) -> list[tuple[int, str, str]]:
    """``(lineno, key, raw_value)`` for every non-blank, non-comment line."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            msg = f"{source}:{lineno}: expected key=value, got {line.strip()!r}"
            raise ConfigError(msg)
        key, value = stripped.split("=", 1)
        entries.append((lineno, key.strip(), value.strip()))
    return entries


def _build(cls: type, values: Mapping[str, Any], prefix: str) -> Any:
    try:
        return cls(**values)
    except TypeError as exc:
        msg = f"invalid {prefix or 'top-level'} settings: {exc}"
        raise ConfigError(msg) from None


def _assign(
    sections: dict[str, dict[str, Any]],
    top: dict[str, Any],
    key: str,
    value: Any,
    where: str,
) -> None:
    section, _, name = key.rpartition(".")
    if section:
        cls = _SECTIONS.get(section)
        if cls is None:
            msg = f"{where}: unknown section {section!r} in key {key!r}"
            raise ConfigError(msg)
        target = sections.setdefault(section, {})
    else:
        cls = RunConfig
        target = top
    hints = get_type_hints(cls)
    if name not in hints or name in _SECTIONS:
        msg = f"{where}: unknown setting {key!r}"
        raise ConfigError(msg)
    target[name] = _coerce(value, hints[name], where) if isinstance(value, str) else value


def _merge(base: RunConfig, sections: dict[str, dict[str, Any]], top: dict[str, Any]) -> RunConfig:
    built = {
        name: dataclasses.replace(getattr(base, name), **sections[name]) if name in sections else getattr(base, name)
        for name in _SECTIONS
    }
    return dataclasses.replace(base, **built, **top)


def config_from_text(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for lineno, key, value in parse_lines(text, source):
        _assign(sections, top, key, value, f"{source}:{lineno}")
    return _merge(base or RunConfig(), sections, top)


def load_config(path: Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        msg = f"config file not found: {path}"
        raise ConfigError(msg) from None
    return config_from_text(text, str(path))


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply dotted-key overrides; ``None`` values are skipped (flag not given)."""
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, value in overrides.items():
        if value is not None:
            _assign(sections, top, key, value, "override")
    return _merge(cfg, sections, top) if sections or top else cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        if f.name in _SECTIONS:
            continue
        lines.append(f"{f.name}={_render(getattr(cfg, f.name))}")
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.extend(f"{name}.{f.name}={_render(getattr(section, f.name))}" for f in dataclasses.fields(section))
    return "\n".join(lines) + "\n"


def load_synthetic_spec(path: Path | None, **overrides: Any) -> SyntheticSpec:
    """Read ``synthetic.*`` keys from *path* (if given) and apply keyword overrides."""
    values: dict[str, Any] = {}
    hints = get_type_hints(SyntheticSpec)
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            msg = f"config file not found: {path}"
            raise ConfigError(msg) from None
        for lineno, key, value in parse_lines(text, str(path)):
            section, _, name = key.rpartition(".")
            where = f"{path}:{lineno}"
            if section != "synthetic" or name not in hints:
                msg = f"{where}: unknown setting {key!r}"
                raise ConfigError(msg)
            values[name] = _coerce(value, hints[name], where)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return _build(SyntheticSpec, values, "synthetic")
