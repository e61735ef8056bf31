"""Classifier architectures over raw I/Q windows.

Four families share one interface (complex window batch in, class logits
out):

  rdcn  complex batch norm -> full-length complex dense mix -> sequencer
        -> one LSTM per plane -> concatenated final states -> linear head.
        The recurrent state can persist across successive batches.
  cdcn  complex batch norm -> complex conv -> complex batch norm -> CReLU
        -> average pool -> complex dense -> CReLU -> plane combiner ->
        linear head.
  ann   real dense baseline on the interleaved planes (2L -> 2048 -> 512).
  cnn   real conv baseline on the two planes as channels.

``parameter_count`` computes sizes analytically so architecture sanity
checks never need to materialize 90M+ floats.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import layers as ly
from .autodiff import Tensor, concatenate
from .recurrent import DualLstmHead, RecurrentContext, sequence

__all__ = [
    "ARCHITECTURES",
    "ModelSpec",
    "parameter_count",
    "build_model",
    "RecurrentClassifier",
    "ConvClassifier",
    "DenseBaseline",
    "ConvBaseline",
]

ARCHITECTURES = ("rdcn", "cdcn", "ann", "cnn")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters. Unused fields are ignored by other archs."""

    arch: str
    class_count: int
    input_len: int
    kernel: int = 32
    stride: int = 1
    padding: int = 1
    conv_channels: int = 16
    dense: int = 4096
    hidden: int = 1024
    lstm_layers: int = 1
    bidirectional: bool = False
    sequencer_step: int = 100
    combiner: str = "learned_sum"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.input_len < 2:
            raise ValueError("input_len must be >= 2")
        if self.combiner not in ly.COMBINER_MODES:
            raise ValueError(f"combiner must be one of {ly.COMBINER_MODES}")
        if self.arch in ("cdcn", "cnn"):
            if self.kernel < 1 or self.stride < 1 or self.padding < 0:
                raise ValueError("conv geometry must be positive")
            if self._conv_len() < 1:
                raise ValueError("window too short for the convolution geometry")
            if self._pooled_len() < 1:
                raise ValueError("window too short for the pooling stage")
        if self.arch == "rdcn":
            if not 1 <= self.sequencer_step <= self.input_len:
                raise ValueError("sequencer_step must be in [1, input_len]")
            if self.hidden < 1 or self.lstm_layers < 1:
                raise ValueError("hidden and lstm_layers must be >= 1")

    def _conv_len(self) -> int:
        return (self.input_len + 2 * self.padding - self.kernel) // self.stride + 1

    def _pooled_len(self) -> int:
        return (self._conv_len() - ly.POOL_WINDOW) // ly.POOL_WINDOW + 1


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form learnable parameter total for a spec."""
    c = spec.class_count
    if spec.arch == "rdcn":
        bn = 5  # gamma_rr, gamma_ri, gamma_ii, beta_a, beta_b on one feature
        mix = 2 * spec.input_len * spec.input_len + 2 * spec.input_len
        dirs = 2 if spec.bidirectional else 1
        lstm = 0
        for layer in range(spec.lstm_layers):
            d = spec.sequencer_step if layer == 0 else spec.hidden * dirs
            lstm += dirs * (4 * spec.hidden * (d + spec.hidden) + 4 * spec.hidden)
        head = (2 * spec.hidden * dirs) * c + c
        return bn + mix + 2 * lstm + head
    if spec.arch == "cdcn":
        bn0 = 5
        conv = 2 * spec.conv_channels * 1 * spec.kernel + 2 * spec.conv_channels
        bn1 = 5 * spec.conv_channels
        flat = spec.conv_channels * spec._pooled_len()
        dense = 2 * flat * spec.dense + 2 * spec.dense
        combiner = {"channel_a_only": 0, "learned_sum": 2, "conv_join": 3}[spec.combiner]
        head = spec.dense * c + c
        return bn0 + conv + bn1 + dense + combiner + head
    if spec.arch == "ann":
        d0, d1 = 2048, 512
        return ((2 * spec.input_len) * d0 + d0) + (d0 * d1 + d1) + (d1 * c + c)
    # cnn
    conv = spec.conv_channels * 2 * spec.kernel + spec.conv_channels
    flat = spec.conv_channels * spec._pooled_len()
    dense = flat * spec.dense + spec.dense
    head = spec.dense * c + c
    return conv + dense + head


class ClassifierBase(ly.Module):
    """Shared front door: complex (B, L) ndarray in, logits Tensor out."""

    spec: ModelSpec

    def forward(self, x: np.ndarray) -> Tensor:
        logits, _ = self.forward_stateful(x, None)
        return logits

    def forward_stateful(self, x: np.ndarray, state):
        raise NotImplementedError

    def initial_state(self, batch_size: int):
        """Opaque cross-batch state; None for stateless architectures."""
        return None

    def _planes(self, x: np.ndarray) -> ly.ComplexPlanes:
        x = np.asarray(x)
        if x.ndim != 2:
            raise ValueError(f"expected a (batch, length) window batch, got {x.shape}")
        if x.shape[1] != self.spec.input_len:
            raise ValueError(
                f"window length {x.shape[1]} does not match spec input_len "
                f"{self.spec.input_len}"
            )
        return ly.ComplexPlanes.from_complex(x, dtype=self.dtype)


class RecurrentClassifier(ClassifierBase):
    """Full-length complex mix feeding per-plane recurrent accumulators."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.norm = ly.ComplexBatchNorm(1, dtype=dtype)
        self.mix = ly.ComplexLinear(spec.input_len, spec.input_len, rng, dtype=dtype)
        self.head_lstm = DualLstmHead(
            spec.sequencer_step,
            spec.hidden,
            rng,
            layers=spec.lstm_layers,
            bidirectional=spec.bidirectional,
            dtype=dtype,
        )
        dirs = 2 if spec.bidirectional else 1
        self.head = ly.Linear(2 * spec.hidden * dirs, spec.class_count, rng, dtype=dtype)

    def initial_state(self, batch_size: int):
        return self.head_lstm.initial_context(batch_size)

    def forward_stateful(self, x: np.ndarray, state):
        planes = self._planes(x)
        b, length = planes.shape
        as_feature = ly.ComplexPlanes(
            planes.a.reshape((b, 1, length)), planes.b.reshape((b, 1, length))
        )
        normed = self.norm(as_feature)
        flat = ly.ComplexPlanes(
            normed.a.reshape((b, length)), normed.b.reshape((b, length))
        )
        mixed = self.mix(flat)
        steps = sequence(mixed, self.spec.sequencer_step)
        features, new_state = self.head_lstm(steps, state)
        return self.head(features), new_state


class ConvClassifier(ClassifierBase):
    """Complex convolutional classifier with a plane combiner before the head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.norm_in = ly.ComplexBatchNorm(1, dtype=dtype)
        self.conv = ly.ComplexConv1d(
            1, spec.conv_channels, spec.kernel, rng,
            stride=spec.stride, padding=spec.padding, dtype=dtype,
        )
        self.norm_conv = ly.ComplexBatchNorm(spec.conv_channels, dtype=dtype)
        flat = spec.conv_channels * spec._pooled_len()
        self.dense = ly.ComplexLinear(flat, spec.dense, rng, dtype=dtype)
        self.combine = ly.ChannelCombiner(spec.combiner, dtype=dtype)
        self.head = ly.Linear(spec.dense, spec.class_count, rng, dtype=dtype)

    def forward_stateful(self, x: np.ndarray, state):
        planes = self._planes(x)
        b, length = planes.shape
        h = ly.ComplexPlanes(
            planes.a.reshape((b, 1, length)), planes.b.reshape((b, 1, length))
        )
        h = self.norm_in(h)
        h = self.conv(h)
        h = self.norm_conv(h)
        h = ly.crelu(h)
        h = ly.cpool1d(h, "avg", ly.POOL_WINDOW)
        h = ly.ComplexPlanes(h.a.reshape((b, -1)), h.b.reshape((b, -1)))
        h = self.dense(h)
        h = ly.crelu(h)
        merged = self.combine(h)
        return self.head(merged), state


class DenseBaseline(ClassifierBase):
    """Real multilayer perceptron on the interleaved planes."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.fc1 = ly.Linear(2 * spec.input_len, 2048, rng, dtype=dtype)
        self.fc2 = ly.Linear(2048, 512, rng, dtype=dtype)
        self.head = ly.Linear(512, spec.class_count, rng, dtype=dtype)

    def forward_stateful(self, x: np.ndarray, state):
        planes = self._planes(x)
        h = concatenate([planes.a, planes.b], axis=1)
        h = self.fc1(h).relu()
        h = self.fc2(h).relu()
        return self.head(h), state


class ConvBaseline(ClassifierBase):
    """Real convolutional baseline treating the planes as two channels."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.conv = ly.Conv1d(
            2, spec.conv_channels, spec.kernel, rng,
            stride=spec.stride, padding=spec.padding, dtype=dtype,
        )
        flat = spec.conv_channels * spec._pooled_len()
        self.dense = ly.Linear(flat, spec.dense, rng, dtype=dtype)
        self.head = ly.Linear(spec.dense, spec.class_count, rng, dtype=dtype)

    def forward_stateful(self, x: np.ndarray, state):
        planes = self._planes(x)
        b = planes.shape[0]
        stacked = concatenate(
            [planes.a.reshape((b, 1, -1)), planes.b.reshape((b, 1, -1))], axis=1
        )
        h = self.conv(stacked).relu()
        h = ly.pool1d(h, "avg", ly.POOL_WINDOW)
        h = h.reshape((b, -1))
        h = self.dense(h).relu()
        return self.head(h), state


_BUILDERS = {
    "rdcn": RecurrentClassifier,
    "cdcn": ConvClassifier,
    "ann": DenseBaseline,
    "cnn": ConvBaseline,
}


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> ClassifierBase:
    """Instantiate a spec with seed-deterministic initialization."""
    rng = np.random.default_rng(seed)
    return _BUILDERS[spec.arch](spec, rng, dtype=dtype)


def decimated_spec(spec: ModelSpec, factor: int) -> ModelSpec:
    """The spec for the same model run on factor-decimated windows: the
    window and the sequencer step shrink together so the step count is
    preserved."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if spec.arch == "rdcn" and spec.sequencer_step % factor != 0:
        raise ValueError("sequencer_step must be divisible by the decimation factor")
    return replace(
        spec,
        input_len=spec.input_len // factor,
        sequencer_step=(
            spec.sequencer_step // factor if spec.arch == "rdcn" else spec.sequencer_step
        ),
    )
