"""Reverse-mode differentiable arrays.

A ``Tensor`` wraps a numpy array and, while gradient recording is enabled,
remembers the operation that produced it together with a closure that pushes
the upstream gradient to its parents. ``backward`` walks the recorded graph in
reverse topological order. Only first-order derivatives are supported.
"""

from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided

from src.utils.error_handler import ShapeError, UsageError

ArrayLike = Union["Tensor", np.ndarray, float, int]

_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    """Return whether operations currently record a graph."""
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Numpy array with an optional recorded gradient graph."""

    __array_ufunc__ = None

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence[float]],
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _op: str = "",
    ) -> None:
        """Initialize a tensor.

        Args:
            data: Array payload; integer input is promoted to float64
            requires_grad: Whether gradients are accumulated into ``grad``
        """
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._op = _op
        self._backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None

    # ------------------------------------------------------------------ basics

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Return the payload (not a copy)."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op or 'leaf'})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Raises:
            UsageError: If the tensor is not a scalar
        """
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {self.shape}")
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node._accumulate(grad)
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad

    # ------------------------------------------------------------- graph nodes

    @staticmethod
    def _make(
        data: np.ndarray,
        parents: Tuple["Tensor", ...],
        op: str,
        backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
    ) -> "Tensor":
        needs_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs_grad, _parents=parents if needs_grad else (), _op=op)
        if needs_grad:
            out._backward = backward
        return out

    # ------------------------------------------------------------- arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data + other, (self,), "add", lambda g: (g,))
        return Tensor._make(self.data + other.data, (self, other), "add", lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other: ArrayLike) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data - other, (self,), "sub", lambda g: (g,))
        return Tensor._make(self.data - other.data, (self, other), "sub", lambda g: (g, -g))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Tensor._make(other - self.data, (self,), "rsub", lambda g: (-g,))

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data * other, (self,), "mul", lambda g: (g * other,))
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), "mul", lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data / other, (self,), "div", lambda g: (g / other,))
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other), "div", lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        a = self.data
        return Tensor._make(other / a, (self,), "rdiv", lambda g: (-g * other / (a * a),))

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor._make(
            a**exponent, (self,), "pow", lambda g: (g * exponent * a ** (exponent - 1),)
        )

    # ------------------------------------------------------------ elementwise

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), "log", lambda g: (g / a,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), "sqrt", lambda g: (g * 0.5 / out,))

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.abs(a), (self,), "abs", lambda g: (g * np.sign(a),))

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return Tensor._make(out, (self,), "sigmoid", lambda g: (g * out * (1 - out),))

    def silu(self) -> "Tensor":
        a = self.data
        s = _sigmoid(a)
        return Tensor._make(a * s, (self,), "silu", lambda g: (g * (s + a * s * (1 - s)),))

    def softplus(self) -> "Tensor":
        a = self.data
        out = np.logaddexp(0, a).astype(a.dtype, copy=False)
        return Tensor._make(out, (self,), "softplus", lambda g: (g * _sigmoid(a),))

    def clip(self, low: float, high: float) -> "Tensor":
        a = self.data
        inside = (a >= low) & (a <= high)
        return Tensor._make(np.clip(a, low, high), (self,), "clip", lambda g: (g * inside,))

    # -------------------------------------------------------------- reductions

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g: np.ndarray) -> Tuple[np.ndarray]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------ shape

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor._make(
            self.data.reshape(*shape), (self,), "reshape", lambda g: (g.reshape(original),)
        )

    def transpose(self, *axes: int) -> "Tensor":
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(*axes), (self,), "transpose", lambda g: (g.transpose(*inverse),)
        )

    def broadcast_to(self, shape: Tuple[int, ...]) -> "Tensor":
        original = self.shape
        return Tensor._make(
            np.broadcast_to(self.data, shape).copy(),
            (self,),
            "broadcast",
            lambda g: (_unbroadcast(g, original),),
        )

    def __getitem__(self, index: object) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def backward(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), "index", backward)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    positive = a >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-a[positive]))
    e = np.exp(a[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def as_tensor(value: ArrayLike, dtype: Optional[type] = None) -> Tensor:
    """Wrap a value as a constant tensor (returns tensors unchanged)."""
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype) if dtype is not None else np.asarray(value)
    return Tensor(array)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}", original_error=e)
    splits = np.cumsum(sizes)[:-1]
    return Tensor._make(
        data, tuple(tensors), "concat", lambda g: tuple(np.split(g, splits, axis=axis))
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return Tensor._make(
        np.matmul(x, y),
        (a, b),
        "matmul",
        lambda g: (np.matmul(g, np.swapaxes(y, -1, -2)), np.matmul(np.swapaxes(x, -1, -2), g)),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax built from differentiable primitives."""
    shifted = x - x.data.max(axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def _pair(value: Union[int, Tuple[int, int]]) -> Tuple[int, int]:
    return (value, value) if isinstance(value, int) else (int(value[0]), int(value[1]))


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: Union[int, Tuple[int, int]] = 0,
) -> Tensor:
    """2-D cross-correlation of a (B, C, H, W) input with an (O, C, kh, kw) kernel.

    Output spatial size is ``floor((in + 2*pad - k) / stride) + 1`` per axis.

    Raises:
        ShapeError: On channel mismatch, bad stride or an empty output
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape}, {w.shape}")
    batch, channels, height, width = x.shape
    out_channels, kernel_channels, kh, kw = w.shape
    if channels != kernel_channels:
        raise ShapeError(f"conv2d channel mismatch: input {channels}, kernel {kernel_channels}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    ph, pw = _pair(padding)
    oh = (height + 2 * ph - kh) // stride + 1
    ow = (width + 2 * pw - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {height}x{width}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    sb, sc, sh, sw = padded.strides
    windows = as_strided(
        padded,
        shape=(batch, channels, oh, ow, kh, kw),
        strides=(sb, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    )
    kernel = w.data
    out = np.einsum("bchwij,ocij->bohw", windows, kernel, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.einsum("bchwij,bohw->ocij", windows, g, optimize=True)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    gpad[
                        :, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride
                    ] += np.einsum("bohw,oc->bchw", g, kernel[:, :, i, j], optimize=True)
            gx = gpad[:, :, ph : ph + height, pw : pw + width]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, "conv2d", backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour spatial upsampling of a (B, C, H, W) tensor."""
    batch, channels, height, width = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return Tensor._make(
        out,
        (x,),
        "upsample",
        lambda g: (g.reshape(batch, channels, height, factor, width, factor).sum(axis=(3, 5)),),
    )


def group_norm(
    x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Group normalisation over (C/groups, H, W) per leading index."""
    batch, channels, height, width = x.shape
    if channels % groups:
        raise ShapeError(f"{channels} channels cannot be split into {groups} groups")
    grouped = x.reshape(batch, groups, channels // groups, height, width)
    centred = grouped - grouped.mean(axis=(2, 3, 4), keepdims=True)
    variance = (centred * centred).mean(axis=(2, 3, 4), keepdims=True)
    normed = (centred * (variance + eps) ** -0.5).reshape(batch, channels, height, width)
    return normed * gamma.reshape(1, channels, 1, 1) + beta.reshape(1, channels, 1, 1)
