"""Leaky integrate-and-fire neurons unrolled over a leading time axis.

One step of the discrete dynamics (forward Euler, unit step)::

    h_t = u_{t-1} + (-(u_{t-1} - u_rest) + R * x_t) / tau_m
    s_t = 1 if h_t >= u_th else 0
    u_t = u_r where s_t else h_t

``multistep_lif`` runs the whole train in one differentiable primitive so
the backward pass can walk time in reverse (BPTT). The Heaviside step gets a
surrogate derivative; the reset path is detached. In ``soft`` mode the step
is replaced by ``sigmoid(width * (h - u_th))`` in both directions, which
makes the network smooth enough for finite-difference checks.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .autograd import Function, Tensor
from .errors import ConfigError, DimensionError, EngineUsageError
from .functional import relu, sigmoid_array

logger = logging.getLogger(__name__)

SurrogateKind = Literal["sigmoid", "arctan", "rectangular"]
NeuronMode = Literal["spike", "soft", "relu"]

SURROGATE_KINDS: tuple[str, ...] = ("sigmoid", "arctan", "rectangular")
NEURON_MODES: tuple[str, ...] = ("spike", "soft", "relu")


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 2.0
    u_rest: float = 0.0
    u_th: float = 1.0
    u_r: float = 0.0
    resistance: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau_m > 0:
            msg = f"tau_m must be positive, got {self.tau_m}"
            raise ConfigError(msg)
        if not self.u_r < self.u_th:
            msg = f"reset potential {self.u_r} must lie below threshold {self.u_th}"
            raise ConfigError(msg)
        if not self.u_rest <= self.u_th:
            msg = f"resting potential {self.u_rest} must not exceed threshold {self.u_th}"
            raise ConfigError(msg)


@dataclass(frozen=True)
class SurrogateSpec:
    kind: SurrogateKind = "sigmoid"
    width: float = 4.0

    def __post_init__(self) -> None:
        if self.kind not in SURROGATE_KINDS:
            msg = f"unknown surrogate {self.kind!r}; expected one of {', '.join(SURROGATE_KINDS)}"
            raise ConfigError(msg)
        if not self.width > 0:
            msg = f"surrogate width must be positive, got {self.width}"
            raise ConfigError(msg)


class LifState(NamedTuple):
    u: np.ndarray
    t: int


def initial_state(shape: tuple[int, ...], p: LifParams, dtype: np.dtype | type = np.float32) -> LifState:
    return LifState(np.full(shape, p.u_rest, dtype=dtype), 0)


def _charge(u: np.ndarray, x_t: np.ndarray, p: LifParams) -> np.ndarray:
    return u + (-(u - p.u_rest) + p.resistance * x_t) / p.tau_m


def lif_step(state: LifState, x_t: np.ndarray, p: LifParams) -> tuple[np.ndarray, LifState]:
    """Advance one time step; returns binary spikes and the post-reset state."""
    if x_t.shape != state.u.shape:
        msg = f"input slice {x_t.shape} does not match membrane {state.u.shape}"
        raise DimensionError(msg)
    h = _charge(state.u, x_t, p)
    fired = h >= p.u_th
    spikes = fired.astype(h.dtype)
    u = np.where(fired, np.asarray(p.u_r, dtype=h.dtype), h)
    return spikes, LifState(u, state.t + 1)


def surrogate_backward(u_pre_reset: np.ndarray, p: LifParams, s: SurrogateSpec) -> np.ndarray:
    """Surrogate ``d spike / d u`` evaluated at the pre-reset membrane value."""
    v = u_pre_reset - p.u_th
    if s.kind == "sigmoid":
        sg = sigmoid_array(s.width * v)
        return s.width * sg * (1.0 - sg)
    if s.kind == "arctan":
        return (s.width / 2.0) / (1.0 + (math.pi / 2.0 * s.width * v) ** 2)
    # rectangular: unit area box of height ``width`` centred on the threshold
    return np.where(np.abs(v) < 0.5 / s.width, s.width, 0.0).astype(v.dtype)


class MultistepLif(Function):
    def forward(
        self,
        x: np.ndarray,
        *,
        params: LifParams,
        surrogate: SurrogateSpec,
        soft: bool,
    ) -> np.ndarray:
        if x.ndim == 0 or x.shape[0] == 0:
            msg = "multistep_lif needs at least one time step"
            raise EngineUsageError(msg)
        self.params, self.surrogate, self.soft = params, surrogate, soft
        state = initial_state(x.shape[1:], params, x.dtype)
        out = np.empty_like(x)
        self.h = np.empty_like(x)
        for t in range(x.shape[0]):
            h = _charge(state.u, x[t], params)
            if soft:
                s = sigmoid_array(surrogate.width * (h - params.u_th))
                u = h * (1.0 - s) + params.u_r * s
            else:
                s = (h >= params.u_th).astype(x.dtype)
                u = np.where(s > 0, np.asarray(params.u_r, dtype=x.dtype), h)
            self.h[t], out[t] = h, s
            state = LifState(u, t + 1)
        self.out = out
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        p = self.params
        leak = 1.0 - 1.0 / p.tau_m
        gain = p.resistance / p.tau_m
        g_x = np.empty_like(grad)
        carry = np.zeros_like(grad[0])
        for t in reversed(range(grad.shape[0])):
            h, s = self.h[t], self.out[t]
            if self.soft:
                w = self.surrogate.width
                psi = w * s * (1.0 - s)
                g_h = (grad[t] + carry * (p.u_r - h)) * psi + carry * (1.0 - s)
            else:
                g_h = grad[t] * surrogate_backward(h, p, self.surrogate) + carry * (1.0 - s)
            g_x[t] = g_h * gain
            carry = g_h * leak
        return (g_x,)


def multistep_lif(x: Tensor, p: LifParams, s: SurrogateSpec) -> Tensor:
    """Binary spike train ``[T, ...]`` for the input current train ``x``."""
    return MultistepLif.apply(x, params=p, surrogate=s, soft=False)


def soft_forward(x: Tensor, p: LifParams, s: SurrogateSpec) -> Tensor:
    """Smooth stand-in for :func:`multistep_lif` with sigmoid firing."""
    return MultistepLif.apply(x, params=p, surrogate=s, soft=True)


@dataclass(frozen=True)
class SpikingNeuron:
    """A named neuron layer; ``relu`` mode turns it into the ANN baseline."""

    name: str
    params: LifParams
    surrogate: SurrogateSpec
    mode: NeuronMode = "spike"

    def __call__(self, x: Tensor) -> Tensor:
        if self.mode == "spike":
            return multistep_lif(x, self.params, self.surrogate)
        if self.mode == "soft":
            return soft_forward(x, self.params, self.surrogate)
        return relu(x)
