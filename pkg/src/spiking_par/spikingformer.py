"""The spiking student network.

Layout: activations are ``[T, B, C, H, W]``. Every ConvBN folds time into the
batch axis, runs once, and unfolds again, so weights are shared across time
steps. Tokens are the ``H * W`` positions of the last tokenizer stage; 1x1
convolutions act token-wise, which is why the attention and MLP paths never
leave the feature-map layout except for the attention product itself.

Forward order::

    image ─ replicate over T ─ encoder ConvBN ─ SPED × len(tokenizer_widths)
          ─ blocks × num_blocks ─ mean over (T, tokens) ─ FC ─ logits

Each path inside a block starts with a neuron layer, so in ``spike`` mode
every convolution after the encoder sees binary input. ``SpikeAudit`` checks
that at run time.
"""

import logging
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autograd import Tensor, as_tensor
from .errors import ConfigError, DataIntegrityError, DimensionError, EngineUsageError
from .functional import batchnorm2d, conv2d, linear, matmul, maxpool2d
from .neuron import NEURON_MODES, SURROGATE_KINDS, LifParams, NeuronMode, SpikingNeuron, SurrogateSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    image_height: int = 64
    image_width: int = 32
    in_channels: int = 3
    tokenizer_widths: tuple[int, ...] = (16, 32)
    embed_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 2
    mlp_ratio: int = 4
    time_steps: int = 4
    num_attributes: int = 8
    attention_scale: float = 0.125
    kernel_size: int = 3
    neuron_mode: NeuronMode = "spike"
    tau_m: float = 2.0
    u_rest: float = 0.0
    u_th: float = 1.0
    u_r: float = 0.0
    resistance: float = 1.0
    surrogate: str = "sigmoid"
    surrogate_width: float = 4.0

    def __post_init__(self) -> None:
        positive = {
            "image_height": self.image_height,
            "image_width": self.image_width,
            "in_channels": self.in_channels,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "mlp_ratio": self.mlp_ratio,
            "time_steps": self.time_steps,
            "num_attributes": self.num_attributes,
            "kernel_size": self.kernel_size,
        }
        for key, value in positive.items():
            if value <= 0:
                msg = f"model.{key} must be positive, got {value}"
                raise ConfigError(msg)
        if self.num_blocks < 0:
            msg = f"model.num_blocks must be >= 0, got {self.num_blocks}"
            raise ConfigError(msg)
        if not self.tokenizer_widths or any(w <= 0 for w in self.tokenizer_widths):
            msg = f"model.tokenizer_widths must be non-empty and positive, got {self.tokenizer_widths}"
            raise ConfigError(msg)
        if self.embed_dim % self.num_heads:
            msg = f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            raise ConfigError(msg)
        if self.kernel_size % 2 == 0:
            msg = f"model.kernel_size must be odd, got {self.kernel_size}"
            raise ConfigError(msg)
        if self.neuron_mode not in NEURON_MODES:
            msg = f"unknown neuron_mode {self.neuron_mode!r}; expected one of {', '.join(NEURON_MODES)}"
            raise ConfigError(msg)
        if self.surrogate not in SURROGATE_KINDS:
            msg = f"unknown surrogate {self.surrogate!r}; expected one of {', '.join(SURROGATE_KINDS)}"
            raise ConfigError(msg)
        if min(self.token_grid) < 1:
            msg = (
                f"image {self.image_height}x{self.image_width} is too small for "
                f"{len(self.tokenizer_widths)} downsampling stages"
            )
            raise ConfigError(msg)
        # Build once so bad neuron constants surface as ConfigError here.
        _ = self.lif, self.surrogate_spec

    @property
    def lif(self) -> LifParams:
        return LifParams(self.tau_m, self.u_rest, self.u_th, self.u_r, self.resistance)

    @property
    def surrogate_spec(self) -> SurrogateSpec:
        return SurrogateSpec(self.surrogate, self.surrogate_width)  # type: ignore[arg-type]

    @property
    def token_grid(self) -> tuple[int, int]:
        h, w = self.image_height, self.image_width
        for _ in self.tokenizer_widths:
            h, w = h // 2, w // 2
        return h, w

    @property
    def num_tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    @property
    def mlp_hidden(self) -> int:
        return self.mlp_ratio * self.embed_dim


# ── instrumentation ──────────────────────────────────────────────────


class ForwardProbe:
    """Observer called by the forward pass; the base class ignores everything."""

    def on_conv(self, layer: "ConvBN", x: np.ndarray) -> None:
        """*x* is the folded ``[T*B, C, H, W]`` input about to be convolved."""

    def on_linear(self, name: str, x: np.ndarray, out_features: int, *, consumes_spikes: bool) -> None:
        """*x* is ``[rows, in_features]``."""

    def on_spikes(self, name: str, spikes: np.ndarray) -> None:
        """Output of a neuron layer."""

    def on_attention(self, name: str, product: np.ndarray) -> None:
        """``Q (K^T V)`` before the attention scale is applied."""


@dataclass
class SpikeAudit(ForwardProbe):
    """Records every spike-consuming convolution whose input is not binary."""

    checked: int = 0
    violations: list[str] = field(default_factory=list)
    non_integer_attention: list[str] = field(default_factory=list)

    def on_conv(self, layer: "ConvBN", x: np.ndarray) -> None:
        if not layer.consumes_spikes:
            return
        self.checked += 1
        if not np.isin(x, (0.0, 1.0)).all():
            self.violations.append(layer.name)

    def on_attention(self, name: str, product: np.ndarray) -> None:
        if not (np.all(product >= 0) and np.array_equal(product, np.round(product))):
            self.non_integer_attention.append(name)

    def assert_pure(self) -> None:
        if self.violations or self.non_integer_attention:
            msg = (
                f"non-binary conv inputs at {self.violations}; "
                f"non-integer attention at {self.non_integer_attention}"
            )
            raise EngineUsageError(msg)


_NULL_PROBE = ForwardProbe()


# ── layers ───────────────────────────────────────────────────────────


def _fold(x: Tensor) -> Tensor:
    t, b, *rest = x.shape
    return x.reshape(t * b, *rest)


def _unfold(x: Tensor, steps: int) -> Tensor:
    n, *rest = x.shape
    return x.reshape(steps, n // steps, *rest)


def _check_layer_input(x: Tensor, channels: int) -> None:
    if x.ndim != 5 or x.shape[2] != channels:  # noqa: PLR2004
        msg = f"expected [T, B, {channels}, H, W], got {x.shape}"
        raise DimensionError(msg)


class ConvBN:
    """Bias-free convolution followed by batch normalization."""

    def __init__(  # noqa: PLR0913
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        dtype: np.dtype | type,
        *,
        consumes_spikes: bool = True,
    ) -> None:
        self.name = name
        self.kernel = kernel
        self.padding = kernel // 2
        self.consumes_spikes = consumes_spikes
        fan_in = in_channels * kernel * kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel, kernel))
        self.weight = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.gamma = Tensor(np.ones(out_channels, dtype=dtype), requires_grad=True, name=f"{name}.bn.gamma")
        self.beta = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True, name=f"{name}.bn.beta")
        self.running_mean = np.zeros(out_channels, dtype=dtype)
        self.running_var = np.ones(out_channels, dtype=dtype)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> Iterator[Tensor]:
        yield from (self.weight, self.gamma, self.beta)

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.bn.running_mean": self.running_mean, f"{self.name}.bn.running_var": self.running_var}

    def __call__(self, x: Tensor, *, train: bool, probe: ForwardProbe = _NULL_PROBE) -> Tensor:
        _check_layer_input(x, self.in_channels)
        steps = x.shape[0]
        folded = _fold(x)
        probe.on_conv(self, folded.data)
        y = conv2d(folded, self.weight, padding=self.padding)
        y = batchnorm2d(y, self.gamma, self.beta, self.running_mean, self.running_var, train=train)
        return _unfold(y, steps)


def _neuron(cfg: ModelConfig, name: str) -> SpikingNeuron:
    return SpikingNeuron(name, cfg.lif, cfg.surrogate_spec, cfg.neuron_mode)


def _fire(neuron: SpikingNeuron, x: Tensor, probe: ForwardProbe) -> Tensor:
    s = neuron(x)
    probe.on_spikes(neuron.name, s.data)
    return s


@dataclass
class SelfAttention:
    name: str
    sn_in: SpikingNeuron
    q: ConvBN
    k: ConvBN
    v: ConvBN
    sn_q: SpikingNeuron
    sn_k: SpikingNeuron
    sn_v: SpikingNeuron
    sn_out: SpikingNeuron
    proj: ConvBN
    num_heads: int
    scale: float

    def layers(self) -> tuple[ConvBN, ...]:
        return (self.q, self.k, self.v, self.proj)


@dataclass
class SpikingMlp:
    name: str
    sn1: SpikingNeuron
    fc1: ConvBN
    sn2: SpikingNeuron
    fc2: ConvBN

    def layers(self) -> tuple[ConvBN, ...]:
        return (self.fc1, self.fc2)


@dataclass
class Block:
    attn: SelfAttention
    mlp: SpikingMlp

    def layers(self) -> tuple[ConvBN, ...]:
        return self.attn.layers() + self.mlp.layers()


# ── forward pieces ───────────────────────────────────────────────────


def spe_forward(
    x: Tensor, stage: ConvBN, neuron: SpikingNeuron, *, train: bool, probe: ForwardProbe = _NULL_PROBE
) -> Tensor:
    """``ConvBN(SN(x))``."""
    return stage(_fire(neuron, x, probe), train=train, probe=probe)


def sped_forward(
    x: Tensor, stage: ConvBN, neuron: SpikingNeuron, *, train: bool, probe: ForwardProbe = _NULL_PROBE
) -> Tensor:
    """``ConvBN(MP(SN(x)))`` with a 2x2 stride-2 pool; spatial dims halve (floor)."""
    s = _fire(neuron, x, probe)
    pooled = _unfold(maxpool2d(_fold(s), 2, 2), x.shape[0])
    return stage(pooled, train=train, probe=probe)


def attention_core(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``Q (K^T V)`` over ``[..., N, d]`` operands, unscaled and without softmax."""
    return matmul(q, matmul(k.transpose(*_swap_last(k.ndim)), v))


def _swap_last(ndim: int) -> tuple[int, ...]:
    return (*range(ndim - 2), ndim - 1, ndim - 2)


def ssa_forward(x: Tensor, attn: SelfAttention, *, train: bool, probe: ForwardProbe = _NULL_PROBE) -> Tensor:
    """Spiking self-attention over the ``[T, B, D, H, W]`` residual stream."""
    t, b, d, h, w = x.shape
    if d % attn.num_heads:
        msg = f"embed_dim {d} is not divisible by num_heads {attn.num_heads}"
        raise ConfigError(msg)
    head_dim = d // attn.num_heads
    xs = _fire(attn.sn_in, x, probe)

    def heads(conv: ConvBN, neuron: SpikingNeuron) -> Tensor:
        s = _fire(neuron, conv(xs, train=train, probe=probe), probe)
        return s.reshape(t, b, attn.num_heads, head_dim, h * w).transpose(0, 1, 2, 4, 3)

    q, k, v = heads(attn.q, attn.sn_q), heads(attn.k, attn.sn_k), heads(attn.v, attn.sn_v)
    product = attention_core(q, k, v)
    probe.on_attention(attn.name, product.data)
    mixed = (product * attn.scale).transpose(0, 1, 2, 4, 3).reshape(t, b, d, h, w)
    return attn.proj(_fire(attn.sn_out, mixed, probe), train=train, probe=probe)


def spiking_mlp_forward(x: Tensor, mlp: SpikingMlp, *, train: bool, probe: ForwardProbe = _NULL_PROBE) -> Tensor:
    hidden = spe_forward(x, mlp.fc1, mlp.sn1, train=train, probe=probe)
    return spe_forward(hidden, mlp.fc2, mlp.sn2, train=train, probe=probe)


def block_forward(x: Tensor, block: Block, *, train: bool, probe: ForwardProbe = _NULL_PROBE) -> Tensor:
    y = x + ssa_forward(x, block.attn, train=train, probe=probe)
    return y + spiking_mlp_forward(y, block.mlp, train=train, probe=probe)


# ── model ────────────────────────────────────────────────────────────


class ModelOutput(NamedTuple):
    logits: Tensor
    features: Tensor


class Spikingformer:
    """Student network: tokenizer, spike-driven blocks, linear head."""

    def __init__(self, cfg: ModelConfig, *, seed: int = 0, dtype: np.dtype | type = np.float32) -> None:
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        k = cfg.kernel_size
        widths = cfg.tokenizer_widths
        self.encoder = ConvBN("encoder", cfg.in_channels, widths[0], k, rng, dtype, consumes_spikes=False)

        outs = (*widths[1:], cfg.embed_dim)
        self.tokenizer = [
            ConvBN(f"tokenizer.{i}", cin, cout, k, rng, dtype) for i, (cin, cout) in enumerate(zip(widths, outs, strict=True))
        ]
        self.tokenizer_neurons = [_neuron(cfg, f"tokenizer.{i}.sn") for i in range(len(widths))]

        d, hidden = cfg.embed_dim, cfg.mlp_hidden
        self.blocks: list[Block] = []
        for i in range(cfg.num_blocks):
            p = f"blocks.{i}"
            attn = SelfAttention(
                name=f"{p}.attn",
                sn_in=_neuron(cfg, f"{p}.attn.sn_in"),
                q=ConvBN(f"{p}.attn.q", d, d, 1, rng, dtype),
                k=ConvBN(f"{p}.attn.k", d, d, 1, rng, dtype),
                v=ConvBN(f"{p}.attn.v", d, d, 1, rng, dtype),
                sn_q=_neuron(cfg, f"{p}.attn.sn_q"),
                sn_k=_neuron(cfg, f"{p}.attn.sn_k"),
                sn_v=_neuron(cfg, f"{p}.attn.sn_v"),
                sn_out=_neuron(cfg, f"{p}.attn.sn_out"),
                proj=ConvBN(f"{p}.attn.proj", d, d, 1, rng, dtype),
                num_heads=cfg.num_heads,
                scale=cfg.attention_scale,
            )
            mlp = SpikingMlp(
                name=f"{p}.mlp",
                sn1=_neuron(cfg, f"{p}.mlp.sn1"),
                fc1=ConvBN(f"{p}.mlp.fc1", d, hidden, 1, rng, dtype),
                sn2=_neuron(cfg, f"{p}.mlp.sn2"),
                fc2=ConvBN(f"{p}.mlp.fc2", hidden, d, 1, rng, dtype),
            )
            self.blocks.append(Block(attn, mlp))

        bound = 1.0 / np.sqrt(d)
        m = cfg.num_attributes
        self.head_weight = Tensor(
            rng.uniform(-bound, bound, size=(m, d)).astype(dtype), requires_grad=True, name="head.weight"
        )
        self.head_bias = Tensor(rng.uniform(-bound, bound, size=m).astype(dtype), requires_grad=True, name="head.bias")

    # ── state ──

    def conv_layers(self) -> list[ConvBN]:
        layers = [self.encoder, *self.tokenizer]
        for block in self.blocks:
            layers.extend(block.layers())
        return layers

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for layer in self.conv_layers():
            for p in layer.parameters():
                params[p.name] = p
        params["head.weight"] = self.head_weight
        params["head.bias"] = self.head_bias
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.conv_layers():
            out.update(layer.buffers())
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy parameter and buffer values in place; every name must be present."""
        targets = {name: t.data for name, t in self.parameters().items()} | self.buffers()
        missing = sorted(set(targets) - set(arrays))
        if missing:
            msg = f"checkpoint lacks {len(missing)} model tensors, e.g. {missing[:3]}"
            raise DataIntegrityError(msg)
        for name, target in targets.items():
            src = arrays[name]
            if src.shape != target.shape:
                msg = f"{name}: checkpoint shape {src.shape} != model shape {target.shape}"
                raise DataIntegrityError(msg)
            target[...] = src

    # ── forward ──

    def forward(self, images: Tensor | np.ndarray, *, train: bool = False, probe: ForwardProbe = _NULL_PROBE) -> ModelOutput:
        cfg = self.cfg
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        expected = (cfg.in_channels, cfg.image_height, cfg.image_width)
        if arr.ndim != 4 or arr.shape[1:] != expected:  # noqa: PLR2004
            msg = f"expected images [B, {', '.join(map(str, expected))}], got {arr.shape}"
            raise ConfigError(msg)
        steps = cfg.time_steps
        replicated = np.broadcast_to(arr.astype(self.dtype, copy=False), (steps, *arr.shape))
        x = self.encoder(as_tensor(np.ascontiguousarray(replicated)), train=train, probe=probe)
        for stage, neuron in zip(self.tokenizer, self.tokenizer_neurons, strict=True):
            x = sped_forward(x, stage, neuron, train=train, probe=probe)
        for block in self.blocks:
            x = block_forward(x, block, train=train, probe=probe)
        features = x.mean(axis=(0, 3, 4))
        probe.on_linear("head", features.data, cfg.num_attributes, consumes_spikes=False)
        logits = linear(features, self.head_weight, self.head_bias)
        return ModelOutput(logits, features)

    __call__ = forward


def model_forward(
    images: Tensor | np.ndarray, model: Spikingformer, *, train: bool = False, probe: ForwardProbe = _NULL_PROBE
) -> Tensor:
    """Logits ``[B, M]`` (pre-sigmoid)."""
    return model.forward(images, train=train, probe=probe).logits


# ── parameter accounting ─────────────────────────────────────────────


def _conv_bn_params(cin: int, cout: int, kernel: int) -> int:
    return cin * cout * kernel * kernel + 2 * cout


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form learnable-scalar counts per model part."""
    k = cfg.kernel_size
    widths = cfg.tokenizer_widths
    outs = (*widths[1:], cfg.embed_dim)
    d, hidden, m = cfg.embed_dim, cfg.mlp_hidden, cfg.num_attributes
    per_block = 4 * _conv_bn_params(d, d, 1) + _conv_bn_params(d, hidden, 1) + _conv_bn_params(hidden, d, 1)
    return {
        "encoder": _conv_bn_params(cfg.in_channels, widths[0], k),
        "tokenizer": sum(_conv_bn_params(cin, cout, k) for cin, cout in zip(widths, outs, strict=True)),
        "blocks": cfg.num_blocks * per_block,
        "head": d * m + m,
    }


def param_count(cfg: ModelConfig) -> int:
    return sum(param_breakdown(cfg).values())
