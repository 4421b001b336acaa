"""Manifests, the synthetic pedestrian dataset, and batch iteration.

Directory layout produced by :func:`generate_synthetic`::

    <root>/train.manifest
    <root>/test.manifest
    <root>/tensors/train/<id>.sntf
    <root>/tensors/test/<id>.sntf

Manifest format (UTF-8): line 1 lists the attribute vocabulary, comma
separated, where a ``~`` prefix marks an attribute that is carried but not
selected for training. Each following line is ``id,relative_path,bits`` with
one ``0``/``1`` per vocabulary entry.

Synthetic images are ``[3, H, W]`` float32 in ``[0, 1]``: a low-saturation
background, a figure drawn from fixed fractional regions, and uniform
per-pixel jitter. Every attribute is decided by one probe pixel, so
:func:`oracle_labels` recovers the labels of any generated image exactly.
"""

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataIntegrityError
from .tensor_io import atomic_write, read_tensor, write_tensor

logger = logging.getLogger(__name__)

SPLITS: tuple[str, ...] = ("train", "val", "test")
UNSELECTED_PREFIX = "~"

ATTRIBUTES: tuple[str, ...] = (
    "hat",
    "upper_warm",
    "upper_stripe",
    "wide_body",
    "bag",
    "lower_dark",
    "long_lower",
    "shoes_light",
)
DEFAULT_RATIOS: tuple[float, ...] = (0.3, 0.5, 0.25, 0.4, 0.2, 0.5, 0.6, 0.35)

IMAGE_SIZES: dict[str, tuple[int, int]] = {"desk": (64, 32), "full": (256, 128)}

# RGB colours
_SKIN = (0.9, 0.75, 0.6)
_HAT = (0.1, 0.8, 0.1)
_WARM = (0.85, 0.2, 0.15)
_COOL = (0.15, 0.25, 0.85)
_STRIPE = (0.95, 0.95, 0.95)
_BAG = (0.9, 0.85, 0.1)
_DARK = (0.15, 0.3, 0.15)
_LIGHT = (0.6, 0.7, 0.9)
_SHOE_LIGHT = (0.95, 0.55, 0.1)
_SHOE_DARK = (0.05, 0.05, 0.05)


# ── manifest ─────────────────────────────────────────────────────────


class SampleRecord(NamedTuple):
    id: int
    path: str
    bits: tuple[int, ...]


@dataclass(frozen=True)
class Manifest:
    attributes: tuple[str, ...]
    selected: tuple[bool, ...]
    records: list[SampleRecord] = field(default_factory=list)
    split: str = "train"

    @property
    def selected_attributes(self) -> tuple[str, ...]:
        return tuple(a for a, keep in zip(self.attributes, self.selected, strict=True) if keep)

    @property
    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records], dtype=np.int64)

    def labels(self) -> np.ndarray:
        """``[N, M_selected]`` uint8 label matrix over the selected attributes."""
        mask = np.array(self.selected, dtype=bool)
        full = np.array([r.bits for r in self.records], dtype=np.uint8).reshape(len(self.records), len(mask))
        return full[:, mask]

    def __len__(self) -> int:
        return len(self.records)


def manifest_path(root: Path, split: str) -> Path:
    return Path(root) / f"{split}.manifest"


def write_manifest(manifest: Manifest, path: Path) -> None:
    header = ",".join(
        name if keep else f"{UNSELECTED_PREFIX}{name}"
        for name, keep in zip(manifest.attributes, manifest.selected, strict=True)
    )
    lines = [header]
    lines.extend(f"{r.id},{r.path},{''.join(map(str, r.bits))}" for r in manifest.records)
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_vocabulary(line: str, path: Path) -> tuple[tuple[str, ...], tuple[bool, ...]]:
    names, selected = [], []
    for raw in line.split(","):
        token = raw.strip()
        keep = not token.startswith(UNSELECTED_PREFIX)
        name = token.removeprefix(UNSELECTED_PREFIX)
        if not name:
            msg = f"{path}:1: empty attribute name"
            raise DataIntegrityError(msg)
        names.append(name)
        selected.append(keep)
    if len(set(names)) != len(names):
        msg = f"{path}:1: duplicate attribute names"
        raise DataIntegrityError(msg)
    return tuple(names), tuple(selected)


def _parse_record(line: str, lineno: int, width: int, path: Path) -> SampleRecord:
    parts = line.split(",")
    if len(parts) != 3:  # noqa: PLR2004
        msg = f"{path}:{lineno}: expected 'id,relative_path,bits', got {line!r}"
        raise DataIntegrityError(msg)
    raw_id, rel, bits = (p.strip() for p in parts)
    try:
        sample_id = int(raw_id)
    except ValueError:
        msg = f"{path}:{lineno}: sample id {raw_id!r} is not an integer"
        raise DataIntegrityError(msg) from None
    if sample_id < 0:
        msg = f"{path}:{lineno}: sample id must be non-negative"
        raise DataIntegrityError(msg)
    if len(bits) != width or set(bits) - {"0", "1"}:
        msg = f"{path}:{lineno}: label bits {bits!r} must be {width} characters of 0/1"
        raise DataIntegrityError(msg)
    return SampleRecord(sample_id, rel, tuple(int(b) for b in bits))


def load_manifest(path: Path, *, split: str | None = None, verify_files: bool = True) -> Manifest:
    """Parse and validate a manifest; tensor paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        msg = f"missing manifest: {path}"
        raise DataIntegrityError(msg) from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        msg = f"{path}:1: missing attribute vocabulary line"
        raise DataIntegrityError(msg)
    attributes, selected = _parse_vocabulary(lines[0], path)

    records: list[SampleRecord] = []
    seen: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = _parse_record(line, lineno, len(attributes), path)
        if record.id in seen:
            msg = f"{path}:{lineno}: duplicate sample id {record.id}"
            raise DataIntegrityError(msg)
        if verify_files and not (path.parent / record.path).is_file():
            msg = f"{path}:{lineno}: missing tensor file {record.path}"
            raise DataIntegrityError(msg)
        seen.add(record.id)
        records.append(record)
    return Manifest(attributes, selected, records, split or path.stem)


def positive_ratios(labels: np.ndarray) -> np.ndarray:
    """Per-attribute fraction of positive labels (``count / N``)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return np.zeros(labels.shape[1] if labels.ndim == 2 else 0)  # noqa: PLR2004
    return labels.sum(axis=0, dtype=np.int64) / len(labels)


# ── loaded splits and batches ────────────────────────────────────────


@dataclass(frozen=True)
class SplitData:
    manifest: Manifest
    ids: np.ndarray
    images: np.ndarray
    labels: np.ndarray

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.manifest.selected_attributes

    def __len__(self) -> int:
        return len(self.ids)


class Batch(NamedTuple):
    ids: np.ndarray
    images: np.ndarray
    labels: np.ndarray


def available_splits(root: Path) -> list[str]:
    return [s for s in SPLITS if manifest_path(root, s).is_file()]


def load_split(root: Path, split: str) -> SplitData:
    """Load a split's manifest and every tensor it references."""
    root = Path(root)
    manifest = load_manifest(manifest_path(root, split), split=split)
    images = [read_tensor(root / r.path) for r in manifest.records]
    if images:
        shape = images[0].shape
        bad = next((r.path for r, img in zip(manifest.records, images, strict=True) if img.shape != shape), None)
        if bad is not None or len(shape) != 3:  # noqa: PLR2004
            msg = f"{split}: images must share one [C, H, W] shape (offender: {bad or manifest.records[0].path})"
            raise DataIntegrityError(msg)
        stacked = np.clip(np.stack(images), 0.0, 1.0).astype(np.float32)
    else:
        stacked = np.zeros((0, 3, 0, 0), dtype=np.float32)
    logger.debug("loaded %s split: %d samples", split, len(manifest))
    return SplitData(manifest, manifest.ids, stacked, manifest.labels())


def batch_iter(data: SplitData, batch_size: int, shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Yield batches in manifest order, or in a seeded permutation; last batch may be short."""
    if batch_size < 1:
        msg = f"batch_size must be >= 1, got {batch_size}"
        raise ConfigError(msg)
    n = len(data)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(data.ids[idx], data.images[idx], data.labels[idx])


# ── synthetic generator ──────────────────────────────────────────────


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    train: int = 2000
    val: int = 0
    test: int = 500
    height: int = 64
    width: int = 32
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    noise: float = 0.05

    def __post_init__(self) -> None:
        if min(self.train, self.val, self.test) < 0:
            msg = "synthetic split sizes must be >= 0"
            raise ConfigError(msg)
        if self.height < 16 or self.width < 8:  # noqa: PLR2004
            msg = f"synthetic images need at least 16x8 pixels, got {self.height}x{self.width}"
            raise ConfigError(msg)
        if len(self.ratios) != len(ATTRIBUTES) or not all(0 < r < 1 for r in self.ratios):
            msg = f"synthetic.ratios needs {len(ATTRIBUTES)} values in (0, 1), got {self.ratios}"
            raise ConfigError(msg)
        if sum(self.ratios) < 1:
            msg = "synthetic.ratios must sum to at least 1 so every sample can carry a positive"
            raise ConfigError(msg)
        if not 0 <= self.noise < 0.1:  # noqa: PLR2004
            msg = f"synthetic.noise must lie in [0, 0.1), got {self.noise}"
            raise ConfigError(msg)

    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


class _Layout(NamedTuple):
    """Pixel rows/columns of every region for one image size."""

    hat_rows: slice
    head_rows: slice
    head_cols: slice
    torso_rows: slice
    stripe_rows: slice
    narrow_cols: slice
    wide_cols: slice
    bag_rows: slice
    bag_cols: slice
    lower_rows: slice
    short_rows: slice
    lower_cols: slice
    shoe_rows: slice
    probe_hat: tuple[int, int]
    probe_torso: tuple[int, int]
    probe_stripe: tuple[int, int]
    probe_wide: tuple[int, int]
    probe_bag: tuple[int, int]
    probe_lower: tuple[int, int]
    probe_long: tuple[int, int]
    probe_shoes: tuple[int, int]


def _layout(h: int, w: int) -> _Layout:
    def rows(a: float, b: float) -> slice:
        return slice(int(a * h), max(int(b * h), int(a * h) + 1))

    cx = w // 2
    narrow, wide = int(0.18 * w), int(0.32 * w)
    head, leg = max(int(0.12 * w), 1), max(int(0.15 * w), 1)
    stripe_top = int(0.3 * h)
    return _Layout(
        hat_rows=rows(0.02, 0.07),
        head_rows=rows(0.05, 0.2),
        head_cols=slice(cx - head, cx + head),
        torso_rows=rows(0.22, 0.55),
        stripe_rows=slice(stripe_top, stripe_top + max(int(0.04 * h), 1)),
        narrow_cols=slice(cx - narrow, cx + narrow),
        wide_cols=slice(cx - wide, cx + wide),
        bag_rows=rows(0.4, 0.55),
        bag_cols=slice(0, max(int(0.15 * w), 2)),
        lower_rows=rows(0.55, 0.92),
        short_rows=rows(0.55, 0.72),
        lower_cols=slice(cx - leg, cx + leg),
        shoe_rows=slice(int(0.92 * h), h),
        probe_hat=(int(0.04 * h), cx),
        probe_torso=(int(0.4 * h), cx),
        probe_stripe=(stripe_top, cx),
        probe_wide=(int(0.45 * h), cx + int(0.25 * w)),
        probe_bag=(int(0.47 * h), int(0.07 * w)),
        probe_lower=(int(0.6 * h), cx),
        probe_long=(int(0.82 * h), cx),
        probe_shoes=(int(0.95 * h), cx),
    )


def _paint(img: np.ndarray, rows: slice, cols: slice, colour: tuple[float, float, float]) -> None:
    img[:, rows, cols] = np.asarray(colour, dtype=img.dtype)[:, None, None]


def render(labels: Sequence[int], rng: np.random.Generator, height: int, width: int, noise: float = 0.05) -> np.ndarray:
    """Draw one ``[3, H, W]`` image whose pixels encode *labels* (ATTRIBUTES order)."""
    hat, warm, stripe, wide, bag, dark, long_lower, light_shoes = (int(v) for v in labels)
    lay = _layout(height, width)
    grey = rng.uniform(0.3, 0.45)
    tint = rng.uniform(-0.05, 0.05, size=3)
    img = np.empty((3, height, width), dtype=np.float64)
    img[:] = (grey + tint)[:, None, None]

    _paint(img, lay.head_rows, lay.head_cols, _SKIN)
    if hat:
        _paint(img, lay.hat_rows, lay.head_cols, _HAT)
    torso_cols = lay.wide_cols if wide else lay.narrow_cols
    _paint(img, lay.torso_rows, torso_cols, _WARM if warm else _COOL)
    if stripe:
        _paint(img, lay.stripe_rows, torso_cols, _STRIPE)
    if bag:
        _paint(img, lay.bag_rows, lay.bag_cols, _BAG)
    lower = _DARK if dark else _LIGHT
    if long_lower:
        _paint(img, lay.lower_rows, lay.lower_cols, lower)
    else:
        _paint(img, lay.lower_rows, lay.lower_cols, _SKIN)
        _paint(img, lay.short_rows, lay.lower_cols, lower)
    _paint(img, lay.shoe_rows, lay.lower_cols, _SHOE_LIGHT if light_shoes else _SHOE_DARK)

    img += rng.uniform(-noise, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def oracle_labels(image: np.ndarray) -> np.ndarray:
    """Decode the attribute vector of a synthetic image from its probe pixels."""
    _, h, w = image.shape
    lay = _layout(h, w)

    def px(at: tuple[int, int]) -> np.ndarray:
        return image[:, at[0], at[1]].astype(np.float64)

    hat = px(lay.probe_hat)
    torso = px(lay.probe_torso)
    stripe = px(lay.probe_stripe)
    side = px(lay.probe_wide)
    bag = px(lay.probe_bag)
    lower = px(lay.probe_lower)
    leg = px(lay.probe_long)
    shoes = px(lay.probe_shoes)
    skin_leg = leg[0] > 0.75 and leg[0] - leg[2] > 0.15  # noqa: PLR2004
    decided = (
        hat[1] > 0.6 and hat[0] < 0.35,  # noqa: PLR2004
        torso[0] > torso[2],
        stripe.min() > 0.8,  # noqa: PLR2004
        side.max() - side.min() > 0.4,  # noqa: PLR2004
        bag[0] > 0.6 and bag[1] > 0.6 and bag[2] < 0.35,  # noqa: PLR2004
        lower.mean() < 0.4,  # noqa: PLR2004
        not skin_leg,
        shoes.mean() > 0.4,  # noqa: PLR2004
    )
    return np.array(decided, dtype=np.uint8)


def draw_labels(rng: np.random.Generator, n: int, ratios: Sequence[float]) -> np.ndarray:
    """``[n, M]`` labels with exactly ``round(r_j * n)`` positives per column and no empty row."""
    m = len(ratios)
    labels = np.zeros((n, m), dtype=np.uint8)
    for j, r in enumerate(ratios):
        labels[rng.permutation(n)[: round(r * n)], j] = 1
    for i in np.flatnonzero(labels.sum(axis=1) == 0):
        # swap a positive in from a row that can spare one; column sums stay fixed
        for j in rng.permutation(m):
            donors = np.flatnonzero((labels[:, j] == 1) & (labels.sum(axis=1) > 1))
            if len(donors):
                k = donors[rng.integers(len(donors))]
                labels[k, j], labels[i, j] = 0, 1
                break
    return labels


def generate_synthetic(spec: SyntheticSpec, out_dir: Path) -> dict[str, int]:
    """Write a dataset directory; a pure function of *spec*."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    next_id = 0
    written: dict[str, int] = {}
    for split, n in spec.split_sizes().items():
        if n == 0:
            continue
        labels = draw_labels(rng, n, spec.ratios)
        records = []
        for row in labels:
            rel = f"tensors/{split}/{next_id}.sntf"
            write_tensor(out_dir / rel, render(row, rng, spec.height, spec.width, spec.noise))
            records.append(SampleRecord(next_id, rel, tuple(int(v) for v in row)))
            next_id += 1
        manifest = Manifest(ATTRIBUTES, (True,) * len(ATTRIBUTES), records, split)
        write_manifest(manifest, manifest_path(out_dir, split))
        written[split] = n
        logger.info("generated %s split: %d samples at %dx%d", split, n, spec.height, spec.width)
    return written
