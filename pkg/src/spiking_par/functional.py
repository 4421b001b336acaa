"""Neural-network primitives on top of :mod:`spiking_par.autograd`.

Convolutions use an im2col layout built with ``sliding_window_view`` and a
single ``tensordot``; the input gradient scatters back kernel offset by
kernel offset. Batch normalization folds every non-channel axis into the
statistics. All functions take and return :class:`Tensor` objects and keep
the input dtype.
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Function, Tensor
from .errors import DimensionError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(value: int | tuple[int, int]) -> tuple[int, int]:
    return (value, value) if isinstance(value, int) else (int(value[0]), int(value[1]))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output length along one axis (floor semantics)."""
    return (size + 2 * padding - kernel) // stride + 1


# ── matmul / linear ──────────────────────────────────────────────────


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:  # noqa: PLR2004
            msg = f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
            raise DimensionError(msg)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return ga, gb


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with *weight* stored as ``[out, in]``."""
    if x.shape[-1] != weight.shape[1]:
        msg = f"linear expects input width {weight.shape[1]}, got {x.shape}"
        raise DimensionError(msg)
    out = matmul(x, weight.transpose(1, 0))
    return out if bias is None else out + bias


# ── convolution ──────────────────────────────────────────────────────


def _windows(x: np.ndarray, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """``[N, C, H', W', kh, kw]`` strided view over an already padded input."""
    view = sliding_window_view(x, kernel, axis=(2, 3))
    return view[:, :, :: stride[0], :: stride[1]]


def conv2d_array(
    x: np.ndarray,
    weight: np.ndarray,
    stride: int | tuple[int, int] = 1,
    padding: int | tuple[int, int] = 0,
) -> np.ndarray:
    """Plain numpy 2-D cross-correlation, ``[N,C,H,W] * [O,C,kh,kw] → [N,O,H',W']``."""
    if x.ndim != 4 or weight.ndim != 4:  # noqa: PLR2004
        msg = f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        raise DimensionError(msg)
    if x.shape[1] != weight.shape[1]:
        msg = f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}"
        raise DimensionError(msg)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    kh, kw = weight.shape[2:]
    if x.shape[2] + 2 * ph < kh or x.shape[3] + 2 * pw < kw:
        msg = f"kernel {kh}x{kw} larger than padded input {x.shape}"
        raise DimensionError(msg)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    cols = _windows(xp, (kh, kw), (sh, sw))
    out = np.tensordot(cols, weight, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


class Conv2d(Function):
    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        *,
        stride: tuple[int, int],
        padding: tuple[int, int],
    ) -> np.ndarray:
        self.x_shape, self.weight, self.stride, self.padding = x.shape, weight, stride, padding
        out = conv2d_array(x, weight, stride, padding)
        ph, pw = padding
        self.xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kh, kw = self.weight.shape[2:]
        sh, sw = self.stride
        ph, pw = self.padding
        ho, wo = grad.shape[2:]
        cols = _windows(self.xp, (kh, kw), (sh, sw))
        g_weight = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))

        g_xp = np.zeros_like(self.xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(grad, self.weight[:, :, i, j], axes=([1], [0]))
                g_xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += contrib.transpose(
                    0, 3, 1, 2
                )
        h, w = self.x_shape[2:]
        return g_xp[:, :, ph : ph + h, pw : pw + w], g_weight


def conv2d(
    x: Tensor,
    weight: Tensor,
    *,
    stride: int | tuple[int, int] = 1,
    padding: int | tuple[int, int] = 0,
) -> Tensor:
    return Conv2d.apply(x, weight, stride=_pair(stride), padding=_pair(padding))


# ── batch normalization ──────────────────────────────────────────────


class BatchNorm2d(Function):
    """Per-channel normalization over ``N, H, W`` of an ``[N, C, H, W]`` input.

    In training mode the batch statistics normalize the input and the running
    buffers (mutated in place) move toward them by ``momentum``. In evaluation
    mode the running buffers are used and left untouched.
    """

    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        *,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        train: bool,
        momentum: float,
        eps: float,
    ) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != gamma.shape[0]:  # noqa: PLR2004
            msg = f"batchnorm expects [N, {gamma.shape[0]}, H, W], got {x.shape}"
            raise DimensionError(msg)
        axes = (0, 2, 3)
        self.train, self.gamma = train, gamma
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // x.shape[1]
            unbiased = var * count / max(count - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        else:
            mean, var = running_mean, running_var
        shape = (1, -1, 1, 1)
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        self.inv_std = inv_std.reshape(shape)
        self.x_hat = ((x - mean.reshape(shape)) * self.inv_std).astype(x.dtype)
        return self.x_hat * gamma.reshape(shape) + beta.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = (0, 2, 3)
        g_gamma = (grad * self.x_hat).sum(axis=axes)
        g_beta = grad.sum(axis=axes)
        g_xhat = grad * self.gamma.reshape(1, -1, 1, 1)
        if not self.train:
            return g_xhat * self.inv_std, g_gamma, g_beta
        count = grad.size // grad.shape[1]
        g_x = (
            self.inv_std
            / count
            * (
                count * g_xhat
                - g_xhat.sum(axis=axes, keepdims=True)
                - self.x_hat * (g_xhat * self.x_hat).sum(axis=axes, keepdims=True)
            )
        )
        return g_x, g_gamma, g_beta


def batchnorm2d(  # noqa: PLR0913
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    train: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    return BatchNorm2d.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        train=train,
        momentum=momentum,
        eps=eps,
    )


# ── pooling ──────────────────────────────────────────────────────────


class MaxPool2d(Function):
    """Max pooling without padding; ties resolve to the first window element."""

    def forward(self, x: np.ndarray, *, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
        kh, kw = kernel
        if x.shape[2] < kh or x.shape[3] < kw:
            msg = f"pool window {kh}x{kw} larger than input {x.shape}"
            raise DimensionError(msg)
        win = _windows(x, kernel, stride)
        flat = win.reshape(*win.shape[:4], kh * kw)
        self.argmax = flat.argmax(axis=-1)
        self.x_shape, self.kernel, self.stride = x.shape, kernel, stride
        return np.take_along_axis(flat, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        n, c, ho, wo = grad.shape
        kw = self.kernel[1]
        sh, sw = self.stride
        rows = np.arange(ho)[:, None] * sh + self.argmax // kw
        cols = np.arange(wo)[None, :] * sw + self.argmax % kw
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        g_x = np.zeros(self.x_shape, dtype=grad.dtype)
        np.add.at(g_x, (nn[:, :, None, None], cc[:, :, None, None], rows, cols), grad)
        return (g_x,)


def maxpool2d(x: Tensor, kernel: int | tuple[int, int] = 2, stride: int | tuple[int, int] | None = None) -> Tensor:
    k = _pair(kernel)
    return MaxPool2d.apply(x, kernel=k, stride=_pair(stride) if stride is not None else k)


class AvgPool2d(Function):
    def forward(self, x: np.ndarray, *, kernel: tuple[int, int]) -> np.ndarray:
        kh, kw = kernel
        if x.shape[2] < kh or x.shape[3] < kw:
            msg = f"pool window {kh}x{kw} larger than input {x.shape}"
            raise DimensionError(msg)
        self.x_shape, self.kernel = x.shape, kernel
        return _windows(x, kernel, kernel).mean(axis=(4, 5)).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        kh, kw = self.kernel
        ho, wo = grad.shape[2:]
        g_x = np.zeros(self.x_shape, dtype=grad.dtype)
        share = grad / (kh * kw)
        for i in range(kh):
            for j in range(kw):
                g_x[:, :, i : i + kh * ho : kh, j : j + kw * wo : kw] += share
        return (g_x,)


def avgpool2d(x: Tensor, kernel: int | tuple[int, int]) -> Tensor:
    """Non-overlapping average pooling (stride equals the window)."""
    return AvgPool2d.apply(x, kernel=_pair(kernel))


# ── pointwise nonlinearities ─────────────────────────────────────────


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = sigmoid_array(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out * (1.0 - self.out),)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


class Softplus(Function):
    """``log(1 + exp(x))`` evaluated without overflow."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.logaddexp(np.zeros((), dtype=x.dtype), x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * sigmoid_array(self.x),)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


class Relu(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


class Clip(Function):
    """Clamp to ``[low, high]``; the gradient is zero where clamping bites."""

    def forward(self, x: np.ndarray, *, low: float, high: float) -> np.ndarray:
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, low, high).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.inside,)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


class Softmax(Function):
    def forward(self, x: np.ndarray, *, axis: int) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        dot = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


class LogSoftmax(Function):
    def forward(self, x: np.ndarray, *, axis: int) -> np.ndarray:
        shifted = x - x.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.softmax, self.axis = np.exp(out), axis
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad - self.softmax * grad.sum(axis=self.axis, keepdims=True),)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale rows to unit Euclidean norm along *axis* (caller rejects zero rows)."""
    return x * ((x * x).sum(axis=axis, keepdims=True) ** -0.5)
