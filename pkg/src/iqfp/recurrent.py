"""Sequencer reshaping, real-valued LSTM stacks, and the dual-plane head.

The Sequencer turns a window of L samples into T = L // S consecutive
steps of S samples (trailing remainder trimmed, never padded) so a
recurrent stack can consume the signal in temporal order.

The LSTM is an ordinary real-valued implementation (sigmoid gates, tanh
squashing) built from autodiff primitives. Recurrent state is carried in
a :class:`RecurrentContext` holding plain arrays: values persist across
minibatches when the caller threads the context through, but the graph
is always severed at the batch boundary, so gradients never cross it.
A fresh zero context makes evaluation stateless.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concatenate
from .layers import ComplexPlanes, Module, Parameter

__all__ = ["sequence", "flatten_sequence", "RecurrentContext", "Lstm", "DualLstmHead"]


def sequence(x: ComplexPlanes, step: int) -> ComplexPlanes:
    """Reshape (B, L) planes into (B, T, step) with T = L // step."""
    batch, length = x.shape
    if step < 1:
        raise ValueError("step must be >= 1")
    if step > length:
        raise ValueError(f"sequencer step {step} exceeds signal length {length}")
    steps = length // step
    usable = steps * step
    trimmed_a = x.a[:, :usable] if usable != length else x.a
    trimmed_b = x.b[:, :usable] if usable != length else x.b
    return ComplexPlanes(
        trimmed_a.reshape(batch, steps, step),
        trimmed_b.reshape(batch, steps, step),
    )


def flatten_sequence(x: ComplexPlanes) -> ComplexPlanes:
    """Inverse of :func:`sequence` (up to the divisibility trim)."""
    batch, steps, step = x.shape
    return ComplexPlanes(
        x.a.reshape(batch, steps * step),
        x.b.reshape(batch, steps * step),
    )


class RecurrentContext:
    """Detached (h, c) values per layer/direction; shapes (B, H)."""

    __slots__ = ("h", "c")

    def __init__(self, h: list, c: list):
        self.h = h
        self.c = c

    @classmethod
    def zeros(cls, cells: int, batch: int, hidden: int, dtype) -> "RecurrentContext":
        return cls(
            [np.zeros((batch, hidden), dtype=dtype) for _ in range(cells)],
            [np.zeros((batch, hidden), dtype=dtype) for _ in range(cells)],
        )

    @property
    def batch_size(self) -> int:
        return self.h[0].shape[0]


class Lstm(Module):
    """Stacked (optionally bidirectional) LSTM over step sequences.

    Weights per cell: wx (4H, D), wh (4H, H), bias (4H,) with gate order
    input, forget, candidate, output; the forget slice starts at
    `forget_bias` so early training does not flush the cell state.
    """

    def __init__(self, input_size, hidden_size, rng, layers=1, bidirectional=False,
                 forget_bias=1.0, dtype=np.float32):
        super().__init__()
        if hidden_size < 1 or layers < 1:
            raise ValueError("hidden_size and layers must be >= 1")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.layers = layers
        self.directions = 2 if bidirectional else 1
        self.dtype = dtype
        bound = 1.0 / np.sqrt(hidden_size)
        self.cells = []
        for layer in range(layers):
            in_size = input_size if layer == 0 else hidden_size * self.directions
            for _ in range(self.directions):
                wx = Parameter(
                    rng.uniform(-bound, bound, (4 * hidden_size, in_size)).astype(dtype),
                    decay=True,
                )
                wh = Parameter(
                    rng.uniform(-bound, bound, (4 * hidden_size, hidden_size)).astype(dtype),
                    decay=True,
                )
                bias = np.zeros(4 * hidden_size, dtype=dtype)
                bias[hidden_size : 2 * hidden_size] = forget_bias
                self.cells.append(_LstmCell(wx, wh, Parameter(bias), hidden_size))

    @property
    def cell_count(self) -> int:
        return self.layers * self.directions

    def initial_context(self, batch: int) -> RecurrentContext:
        return RecurrentContext.zeros(self.cell_count, batch, self.hidden_size, self.dtype)

    def forward(self, steps: list[Tensor], ctx: RecurrentContext | None = None):
        """Run the stack over `steps` (list of (B, D) tensors).

        Returns (outputs, final, new_ctx): per-step outputs of the top
        layer, the final hidden state (B, H*directions), and the detached
        context for the next call.
        """
        if not steps:
            raise ValueError("empty step sequence")
        batch = steps[0].shape[0]
        if steps[0].shape[1] != self.input_size:
            raise ValueError(
                f"lstm expects step width {self.input_size}, got {steps[0].shape[1]}"
            )
        if ctx is None:
            ctx = self.initial_context(batch)
        if ctx.batch_size != batch:
            raise ValueError(f"context batch {ctx.batch_size} != input batch {batch}")

        new_h: list[np.ndarray] = [None] * self.cell_count
        new_c: list[np.ndarray] = [None] * self.cell_count
        finals: list[Tensor] = []
        layer_input = steps
        for layer in range(self.layers):
            direction_outputs = []
            for direction in range(self.directions):
                idx = layer * self.directions + direction
                cell = self.cells[idx]
                seq = layer_input if direction == 0 else list(reversed(layer_input))
                h = Tensor(ctx.h[idx])
                c = Tensor(ctx.c[idx])
                outs = []
                for x_t in seq:
                    h, c = cell.step(x_t, h, c)
                    outs.append(h)
                new_h[idx] = h.data.copy()
                new_c[idx] = c.data.copy()
                if direction == 1:
                    outs = list(reversed(outs))
                direction_outputs.append(outs)
                if layer == self.layers - 1:
                    finals.append(h)
            if self.directions == 1:
                layer_input = direction_outputs[0]
            else:
                layer_input = [
                    concatenate([f, b], axis=1)
                    for f, b in zip(direction_outputs[0], direction_outputs[1])
                ]
        final = finals[0] if len(finals) == 1 else concatenate(finals, axis=1)
        return layer_input, final, RecurrentContext(new_h, new_c)

    __call__ = forward


class _LstmCell(Module):
    def __init__(self, wx: Parameter, wh: Parameter, bias: Parameter, hidden: int):
        super().__init__()
        self.wx = wx
        self.wh = wh
        self.bias = bias
        self.hidden = hidden

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        H = self.hidden
        z = x @ self.wx.T + h @ self.wh.T + self.bias
        gate_in = z[:, :H].sigmoid()
        gate_forget = z[:, H : 2 * H].sigmoid()
        candidate = z[:, 2 * H : 3 * H].tanh()
        gate_out = z[:, 3 * H :].sigmoid()
        c_next = gate_forget * c + gate_in * candidate
        h_next = gate_out * c_next.tanh()
        return h_next, c_next


class DualLstmHead(Module):
    """Two parallel LSTMs, one per plane; output is [h_T^A || h_T^B]."""

    def __init__(self, input_size, hidden_size, rng, layers=1, bidirectional=False,
                 dtype=np.float32):
        super().__init__()
        self.lstm_a = Lstm(input_size, hidden_size, rng, layers, bidirectional, dtype=dtype)
        self.lstm_b = Lstm(input_size, hidden_size, rng, layers, bidirectional, dtype=dtype)

    def initial_context(self, batch: int):
        return (self.lstm_a.initial_context(batch), self.lstm_b.initial_context(batch))

    def forward(self, x: ComplexPlanes, ctx=None):
        """x is sequenced planes (B, T, S); returns ((B, 2H) features, new ctx pair)."""
        batch, steps, width = x.shape
        steps_a = [x.a[:, t, :] for t in range(steps)]
        steps_b = [x.b[:, t, :] for t in range(steps)]
        ctx_a, ctx_b = ctx if ctx is not None else (None, None)
        _, final_a, new_a = self.lstm_a(steps_a, ctx_a)
        _, final_b, new_b = self.lstm_b(steps_b, ctx_b)
        return concatenate([final_a, final_b], axis=1), (new_a, new_b)

    __call__ = forward
