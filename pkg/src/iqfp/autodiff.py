"""Reverse-mode automatic differentiation over NumPy arrays.

A deliberately small op set tailored to the layers in this package:
elementwise arithmetic, matmul, reductions, shape manipulation, a
sliding-window unfold for 1-D convolution, the usual squashing
nonlinearities, and numerically fused classification losses.

Every op records a closure that scatters the upstream gradient into its
inputs. ``Tensor.backward()`` walks the recorded graph once in reverse
topological order; the graph is then consumed and a second backward
raises :class:`GraphConsumedError`. Gradients accumulate on tensors
created with ``requires_grad=True`` until :func:`zero_grad` / manual
reset, so gradient accumulation across calls works the obvious way.

Graphs here routinely contain thousands of nodes (64-step recurrent
unrolls), so the topological sort is iterative, never recursive.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "GraphConsumedError",
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "concatenate",
    "maximum",
    "unfold1d",
    "bce_with_logits",
    "softmax_cross_entropy",
]


class GraphConsumedError(RuntimeError):
    """Backward was requested through a graph already freed by a prior backward."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / statistics updates)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing NumPy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An array plus optional gradient and backward-graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    # Make ndarray <op> Tensor defer to the reflected Tensor methods instead
    # of NumPy broadcasting elementwise over the Tensor as an object.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    # -- graph plumbing ----------------------------------------------------

    @property
    def _live(self) -> bool:
        """True when this node participates in gradient flow."""
        return self.requires_grad or bool(self._parents)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g if g.flags.owndata else g.copy()
        else:
            self.grad = self.grad + g

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._consumed:
            raise GraphConsumedError("backward was already run through this graph")
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")

        # Iterative depth-first topological sort.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            if node._consumed:
                raise GraphConsumedError(
                    "graph shares nodes with a previously consumed backward pass"
                )
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # Interior node: free graph record and transient gradient.
                node._consumed = True
                node._parents = ()
                node._backward = None
                if not node.requires_grad:
                    node.grad = None

    # -- op helpers ---------------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p._live for p in parents):
            out._parents = parents
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self.data)

        def backward(g):
            if self._live:
                self._accum(_unbroadcast(g, self.data.shape))
            if other._live:
                other._accum(_unbroadcast(g, other.data.shape))

        return self._result(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self._live:
                self._accum(-g)

        return self._result(-self.data, (self,), backward)

    def __sub__(self, other):
        other = _coerce(other, self.data)

        def backward(g):
            if self._live:
                self._accum(_unbroadcast(g, self.data.shape))
            if other._live:
                other._accum(_unbroadcast(-g, other.data.shape))

        return self._result(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return _coerce(other, self.data) - self

    def __mul__(self, other):
        other = _coerce(other, self.data)

        def backward(g):
            if self._live:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other._live:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return self._result(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other, self.data)
        out_data = self.data / other.data

        def backward(g):
            if self._live:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other._live:
                other._accum(_unbroadcast(-g * out_data / other.data, other.data.shape))

        return self._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return _coerce(other, self.data) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            if self._live:
                self._accum(g * exponent * self.data ** (exponent - 1))

        return self._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {self.data.shape} @ {other.data.shape}"
            )

        def backward(g):
            if self._live:
                self._accum(g @ other.data.T)
            if other._live:
                other._accum(self.data.T @ g)

        return self._result(self.data @ other.data, (self, other), backward)

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            if self._live:
                self._accum(g * out_data)

        return self._result(out_data, (self,), backward)

    def log(self):
        def backward(g):
            if self._live:
                self._accum(g / self.data)

        return self._result(np.log(self.data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            if self._live:
                self._accum(g * (0.5 / out_data))

        return self._result(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            if self._live:
                self._accum(g * (1.0 - out_data * out_data))

        return self._result(out_data, (self,), backward)

    def sigmoid(self):
        x = self.data
        out_data = np.empty_like(x)
        pos = x >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def backward(g):
            if self._live:
                self._accum(g * out_data * (1.0 - out_data))

        return self._result(out_data, (self,), backward)

    def relu(self):
        # Subgradient at exactly 0 is defined as 0.
        mask = self.data > 0

        def backward(g):
            if self._live:
                self._accum(g * mask)

        return self._result(np.where(mask, self.data, 0), (self,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self._live:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape))

        return self._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape

        def backward(g):
            if self._live:
                self._accum(g.reshape(old_shape))

        return self._result(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)

        def backward(g):
            if self._live:
                self._accum(g.transpose(inverse))

        return self._result(self.data.transpose(axes), (self,), backward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            if self._live:
                full = np.zeros_like(self.data)
                full[key] = g
                self._accum(full)

        return self._result(out_data, (self,), backward)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _coerce(other, like: np.ndarray) -> Tensor:
    """Wrap a binary-op operand. Python scalars adopt the tensor operand's
    dtype (NumPy weak-scalar rule) so float32 graphs stay float32."""
    if isinstance(other, Tensor):
        return other
    if isinstance(other, (int, float)) and not isinstance(other, bool):
        return Tensor(np.asarray(other, dtype=like.dtype))
    return Tensor(other)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t._live:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t._accum(g[tuple(index)])

    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(out_data, tuple(tensors), backward)


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def backward(g):
        if a._live:
            a._accum(_unbroadcast(g * take_a, a.data.shape))
        if b._live:
            b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._result(np.where(take_a, a.data, b.data), (a, b), backward)


def unfold1d(x: Tensor, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Extract sliding windows from (B, C, L) into (B, P, C*kernel).

    P = floor((L + 2*padding - kernel) / stride) + 1. The inverse
    (backward pass) scatter-adds window gradients back onto the signal.
    """
    if x.data.ndim != 3:
        raise ValueError(f"unfold1d expects (B, C, L), got {x.data.shape}")
    batch, channels, length = x.data.shape
    padded_len = length + 2 * padding
    if kernel > padded_len:
        raise ValueError(f"kernel {kernel} exceeds padded length {padded_len}")
    positions = (padded_len - kernel) // stride + 1

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    s0, s1, s2 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(batch, channels, positions, kernel),
        strides=(s0, s1, stride * s2, s2),
    )
    out_data = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        batch, positions, channels * kernel
    )

    def backward(g):
        if not x._live:
            return
        g4 = g.reshape(batch, positions, channels, kernel)
        grad_padded = np.zeros((batch, channels, padded_len), dtype=g.dtype)
        for k in range(kernel):
            grad_padded[:, :, k : k + stride * positions : stride] += g4[
                :, :, :, k
            ].transpose(0, 2, 1)
        if padding:
            grad_padded = grad_padded[:, :, padding : padding + length]
        x._accum(grad_padded)

    return Tensor._result(out_data, (x,), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy between sigmoid(logits) and targets.

    Computed in the numerically safe form
    max(x, 0) - x*t + log(1 + exp(-|x|)); the fused backward is
    (sigmoid(x) - t) / n.
    """
    x = logits.data
    t = np.asarray(targets, dtype=x.dtype)
    if t.shape != x.shape:
        raise ValueError(f"targets shape {t.shape} != logits shape {x.shape}")
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out_data = np.asarray(loss.mean(), dtype=x.dtype)

    def backward(g):
        if logits._live:
            sig = np.empty_like(x)
            pos = x >= 0
            sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
            ex = np.exp(x[~pos])
            sig[~pos] = ex / (1.0 + ex)
            logits._accum(g * (sig - t) / x.size)

    return Tensor._result(out_data, (logits,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; `labels` are integer class indices (B,)."""
    x = logits.data
    if x.ndim != 2:
        raise ValueError(f"expected (B, C) logits, got {x.shape}")
    labels = np.asarray(labels)
    batch = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    out_data = np.asarray(-log_probs[np.arange(batch), labels].mean(), dtype=x.dtype)

    def backward(g):
        if logits._live:
            grad = np.exp(log_probs)
            grad[np.arange(batch), labels] -= 1.0
            logits._accum(g * grad / batch)

    return Tensor._result(out_data, (logits,), backward)
