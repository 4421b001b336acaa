"""Spike statistics, synaptic-operation counts and an energy estimate.

A layer is *spike-driven* when it is built to consume spikes and the input it
actually receives is binary. Its cost is counted in synaptic operations: one
accumulate per nonzero input element per weight tap it reaches. Every other
layer (the pixel encoder, the linear head, or any layer in ``relu``/``soft``
mode) is counted in multiply-accumulates.

Dense MACs count only kernel taps that land inside the input, never the zero
padding, so a spike-driven layer whose input is all ones has exactly as many
SOPs as MACs.

The two ``Q (K^T V)`` products of self-attention are left out of both the SNN
and the dense tally, as are batch norm and pooling.
"""

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .functional import conv_output_size
from .spikingformer import ConvBN, ForwardProbe, ModelConfig, Spikingformer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self) -> None:
        if not self.e_mac > self.e_ac > 0:
            msg = f"energy constants must satisfy e_mac > e_ac > 0, got {self.e_mac}, {self.e_ac}"
            raise ConfigError(msg)


class EnergyEstimate(NamedTuple):
    snn_pj: float
    ann_pj: float
    ratio: float


def tap_coverage(size: int, kernel: int, stride: int, padding: int) -> np.ndarray:
    """How many output positions read each input position along one axis."""
    cover = np.zeros(size, dtype=np.int64)
    for o in range(conv_output_size(size, kernel, stride, padding)):
        lo = max(o * stride - padding, 0)
        hi = min(o * stride - padding + kernel, size)
        cover[lo:hi] += 1
    return cover


def valid_taps(size: int, kernel: int, stride: int, padding: int) -> int:
    """In-bounds (output position, kernel offset) pairs along one axis."""
    return int(tap_coverage(size, kernel, stride, padding).sum())


@dataclass
class LayerCount:
    name: str
    sops: int = 0
    macs: int = 0
    real_macs: int = 0
    nonzero: int = 0
    elements: int = 0

    @property
    def firing_rate(self) -> float:
        return self.nonzero / self.elements if self.elements else 0.0

    def to_dict(self) -> dict[str, object]:
        return {"name": self.name, "sops": self.sops, "macs": self.macs, "firing_rate": self.firing_rate}


@dataclass
class SpikeStats:
    spikes: int = 0
    elements: int = 0

    @property
    def firing_rate(self) -> float:
        return self.spikes / self.elements if self.elements else 0.0


def _is_binary(x: np.ndarray) -> bool:
    return bool(np.isin(x, (0.0, 1.0)).all())


@dataclass
class EnergyProbe(ForwardProbe):
    """Accumulates per-layer operation counts over one or more forward passes."""

    layers: dict[str, LayerCount] = field(default_factory=dict)
    spike_stats: dict[str, SpikeStats] = field(default_factory=dict)

    def _layer(self, name: str) -> LayerCount:
        return self.layers.setdefault(name, LayerCount(name))

    def on_conv(self, layer: ConvBN, x: np.ndarray) -> None:
        n, c, h, w = x.shape
        k, pad = layer.kernel, layer.padding
        cov_h, cov_w = tap_coverage(h, k, 1, pad), tap_coverage(w, k, 1, pad)
        dense = layer.out_channels * c * n * int(cov_h.sum()) * int(cov_w.sum())
        nonzero = x != 0
        entry = self._layer(layer.name)
        entry.macs += dense
        entry.nonzero += int(nonzero.sum())
        entry.elements += x.size
        if layer.consumes_spikes and _is_binary(x):
            per_position = nonzero.sum(axis=(0, 1), dtype=np.int64)
            entry.sops += layer.out_channels * int(cov_h @ per_position @ cov_w)
        else:
            entry.real_macs += dense

    def on_linear(self, name: str, x: np.ndarray, out_features: int, *, consumes_spikes: bool) -> None:
        dense = x.shape[0] * x.shape[1] * out_features
        nonzero = x != 0
        entry = self._layer(name)
        entry.macs += dense
        entry.nonzero += int(nonzero.sum())
        entry.elements += x.size
        if consumes_spikes and _is_binary(x):
            entry.sops += int(nonzero.sum()) * out_features
        else:
            entry.real_macs += dense

    def on_spikes(self, name: str, spikes: np.ndarray) -> None:
        stats = self.spike_stats.setdefault(name, SpikeStats())
        stats.spikes += int(np.count_nonzero(spikes))
        stats.elements += spikes.size

    @property
    def total_sops(self) -> int:
        return sum(layer.sops for layer in self.layers.values())

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers.values())

    @property
    def total_real_macs(self) -> int:
        return sum(layer.real_macs for layer in self.layers.values())


def count_sops(model: Spikingformer, images: np.ndarray, probe: EnergyProbe | None = None) -> EnergyProbe:
    """Run one evaluation-mode forward pass and return the filled probe."""
    probe = probe if probe is not None else EnergyProbe()
    model.forward(images, train=False, probe=probe)
    return probe


def dense_mac_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Per-layer MACs of one single-pass forward of one sample with real activations."""
    k, pad = cfg.kernel_size, cfg.kernel_size // 2
    h, w = cfg.image_height, cfg.image_width
    widths = cfg.tokenizer_widths
    out: dict[str, int] = {
        "encoder": widths[0] * cfg.in_channels * valid_taps(h, k, 1, pad) * valid_taps(w, k, 1, pad)
    }
    outs = (*widths[1:], cfg.embed_dim)
    for i, (cin, cout) in enumerate(zip(widths, outs, strict=True)):
        h, w = h // 2, w // 2
        out[f"tokenizer.{i}"] = cout * cin * valid_taps(h, k, 1, pad) * valid_taps(w, k, 1, pad)
    tokens, d, hidden = h * w, cfg.embed_dim, cfg.mlp_hidden
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}"
        for name in ("q", "k", "v", "proj"):
            out[f"{p}.attn.{name}"] = d * d * tokens
        out[f"{p}.mlp.fc1"] = d * hidden * tokens
        out[f"{p}.mlp.fc2"] = hidden * d * tokens
    out["head"] = d * cfg.num_attributes
    return out


def dense_mac_count(cfg: ModelConfig, batch_size: int = 1) -> int:
    return batch_size * sum(dense_mac_breakdown(cfg).values())


def estimate_energy(sops: int, real_macs: int, ann_macs: int, model: EnergyModel) -> EnergyEstimate:
    """SNN cost ``e_ac * SOPs + e_mac * real-input MACs`` against ``e_mac * dense MACs``."""
    snn = model.e_ac * sops + model.e_mac * real_macs
    ann = model.e_mac * ann_macs
    return EnergyEstimate(snn, ann, snn / ann if ann else 0.0)


@dataclass(frozen=True)
class EnergyReport:
    layers: list[LayerCount]
    spike_stats: dict[str, SpikeStats]
    sops: int
    macs: int
    real_macs: int
    ann_macs: int
    samples: int
    estimate: EnergyEstimate

    @classmethod
    def from_probe(cls, probe: EnergyProbe, cfg: ModelConfig, samples: int, model: EnergyModel) -> "EnergyReport":
        ann = dense_mac_count(cfg, samples)
        est = estimate_energy(probe.total_sops, probe.total_real_macs, ann, model)
        return cls(
            layers=list(probe.layers.values()),
            spike_stats=dict(probe.spike_stats),
            sops=probe.total_sops,
            macs=probe.total_macs,
            real_macs=probe.total_real_macs,
            ann_macs=ann,
            samples=samples,
            estimate=est,
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "spike_stats": {
                name: {"spikes": s.spikes, "elements": s.elements, "firing_rate": s.firing_rate}
                for name, s in self.spike_stats.items()
            },
            "totals": {
                "sops": self.sops,
                "macs": self.macs,
                "real_macs": self.real_macs,
                "ann_macs": self.ann_macs,
                "snn_pj": self.estimate.snn_pj,
                "ann_pj": self.estimate.ann_pj,
            },
            "samples": self.samples,
            "ratio": self.estimate.ratio,
        }

    def write(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def measure_energy(model: Spikingformer, batches: Iterable[np.ndarray], energy_model: EnergyModel) -> EnergyReport:
    """Count operations over every image batch and price them."""
    probe = EnergyProbe()
    samples = 0
    for images in batches:
        count_sops(model, images, probe)
        samples += len(images)
    report = EnergyReport.from_probe(probe, model.cfg, samples, energy_model)
    logger.info(
        "energy over %d samples: snn %.3g pJ, ann %.3g pJ, ratio %.4f",
        samples,
        report.estimate.snn_pj,
        report.estimate.ann_pj,
        report.estimate.ratio,
        extra={"sops": report.sops, "real_macs": report.real_macs, "ann_macs": report.ann_macs},
    )
    return report
