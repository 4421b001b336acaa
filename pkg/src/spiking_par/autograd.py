"""Dense tensors with tape-based reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. Differentiable operations are ``Function``
subclasses; ``Function.apply`` runs the numpy forward and, when a ``Tape`` is
active and any input requires gradients, appends a node to that tape. Nodes
are recorded in execution order, which is already a topological order, so
``Tape.backward`` replays them in reverse and visits each node exactly once.

Usage::

    with Tape() as tape:
        loss = (w * w).sum()
    grads = tape.backward(loss)      # also fills ``w.grad``

Arrays keep the dtype they were created with (float32 by default). The
gradient checker builds everything in float64; nothing here casts behind
the caller's back.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from .errors import DimensionError, EngineUsageError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

ArrayLike = np.ndarray | float | int | Sequence[Any]


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: np.dtype | type | None = None,
    ) -> None:
        if isinstance(data, np.ndarray | np.generic):
            # 0-d arithmetic yields numpy scalars; keep their dtype too
            arr = np.asarray(data) if dtype is None else np.asarray(data).astype(dtype, copy=False)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # ── array facade ─────────────────────────────────────────────────

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            msg = f"item() needs a single element, got shape {self.shape}"
            raise DimensionError(msg)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Return a tensor sharing data but cut off from any tape."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # ── operators ────────────────────────────────────────────────────

    def __add__(self, other: "Tensor | float") -> "Tensor":
        return Add.apply(self, _lift(other, self))

    def __radd__(self, other: "Tensor | float") -> "Tensor":
        return Add.apply(_lift(other, self), self)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        return Add.apply(self, Neg.apply(_lift(other, self)))

    def __rsub__(self, other: "Tensor | float") -> "Tensor":
        return Add.apply(_lift(other, self), Neg.apply(self))

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        return Mul.apply(self, _lift(other, self))

    def __rmul__(self, other: "Tensor | float") -> "Tensor":
        return Mul.apply(_lift(other, self), self)

    def __truediv__(self, other: "Tensor | float") -> "Tensor":
        return Div.apply(self, _lift(other, self))

    def __rtruediv__(self, other: "Tensor | float") -> "Tensor":
        return Div.apply(_lift(other, self), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from .functional import matmul  # noqa: PLC0415  functional imports this module

        return matmul(self, other)

    def sum(self, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(
        self, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False
    ) -> "Tensor":
        axes = range(self.ndim) if axis is None else ((axis,) if isinstance(axis, int) else axis)
        count = int(np.prod([self.shape[a] for a in axes]))
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        target = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        return Reshape.apply(self, shape=tuple(target))

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes))

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)


def _lift(value: "Tensor | float", like: Tensor) -> Tensor:
    """Wrap a python scalar or array as a constant tensor with *like*'s dtype."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def as_tensor(value: "Tensor | ArrayLike", dtype: np.dtype | type | None = None) -> Tensor:
    """Return *value* unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


# ── tape ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Node:
    """One executed primitive: the function instance, its inputs and its output."""

    fn: "Function"
    inputs: tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Ordered record of executed primitives for one differentiable computation."""

    _stack: ClassVar[list["Tape"]] = []

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *_exc: object) -> None:
        Tape._stack.remove(self)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, node: Node) -> None:
        self.nodes.append(node)
        self._produced.add(id(node.output))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Back-propagate from scalar *loss*; fill ``.grad`` on every reachable leaf.

        Returns the gradient buffers keyed by ``id(tensor)``. Leaf tensors that
        require gradients accumulate into their ``.grad`` (``None`` → set).
        """
        if loss.size != 1:
            msg = f"backward needs a scalar loss, got shape {loss.shape}"
            raise EngineUsageError(msg)
        if id(loss) not in self._produced:
            msg = "loss was not produced on this tape"
            raise EngineUsageError(msg)

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.fn.backward(g_out)
            for inp, g in zip(node.inputs, in_grads, strict=True):
                if g is None or not inp.requires_grad:
                    continue
                g = Function.unbroadcast(np.asarray(g), inp.shape).astype(inp.dtype, copy=False)
                key = id(inp)
                grads[key] = grads[key] + g if key in grads else g
                if id(inp) not in self._produced:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            self.grads[key] = leaf.grad
        return self.grads


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Functional spelling of :meth:`Tape.backward`."""
    return tape.backward(loss)


# ── function base ────────────────────────────────────────────────────


class Function:
    """Base class for differentiable primitives.

    Subclasses implement ``forward`` over numpy arrays (stashing whatever the
    backward pass needs on ``self``) and ``backward``, which maps the output
    gradient to one gradient per input (``None`` for non-differentiable inputs).
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in tensors), **kwargs))
        out.requires_grad = any(t.requires_grad for t in tensors)
        tape = Tape.active()
        if tape is not None and out.requires_grad:
            tape.record(Node(fn, tensors, out))
        return out

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so *grad* matches *to_shape*."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, size in enumerate(to_shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


# ── elementwise / shape primitives ───────────────────────────────────


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (-grad,)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Pow(Function):
    def forward(self, a: np.ndarray, *, exponent: float) -> np.ndarray:
        self.a, self.exponent = a, exponent
        return np.power(a, exponent).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.exponent * np.power(self.a, self.exponent - 1),)


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.exp(a)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        return np.log(a)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad / self.a,)


class Sum(Function):
    def forward(
        self,
        a: np.ndarray,
        *,
        axis: int | tuple[int, ...] | None,
        keepdims: bool,
    ) -> np.ndarray:
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(a % len(self.shape) for a in axes)
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, self.shape),)


class Reshape(Function):
    def forward(self, a: np.ndarray, *, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            msg = f"cannot reshape {a.shape} into {shape}"
            raise DimensionError(msg) from None

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a: np.ndarray, *, axes: tuple[int, ...]) -> np.ndarray:
        self.axes = axes or tuple(reversed(range(a.ndim)))
        return a.transpose(self.axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.transpose(np.argsort(self.axes)),)
