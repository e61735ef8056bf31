"""Core signal and dataset types shared by every other module.

A ComplexSignal is a 1-D complex sample stream plus capture metadata;
complex64/complex128 storage keeps (I, Q) pairs interleaved in memory,
mirroring the on-disk capture layout so file I/O is zero-transform.
Datasets are flat collections of fixed-length labeled windows tagged
with a train/val/test split.

All types are immutable after construction (validation happens in
__post_init__) and safe to share across threads; iteration order is
owned by the consumer, never the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ComplexSignal",
    "LabeledWindow",
    "LabeledDataset",
    "SPLITS",
    "window_signal",
    "stratified_split",
]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ComplexSignal:
    """A complex baseband sample stream x[k] = I[k] + jQ[k]."""

    samples: np.ndarray
    sample_rate_hz: float
    center_freq_hz: Optional[float] = None
    capture_time: Optional[str] = None
    source_id: Optional[str] = None

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("samples must be non-empty")
        if not np.issubdtype(samples.dtype, np.complexfloating):
            samples = samples.astype(np.complex64)
        object.__setattr__(self, "samples", samples)
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray, sample_rate_hz: Optional[float] = None) -> "ComplexSignal":
        """Same metadata, new sample content (and optionally a new rate)."""
        return replace(
            self,
            samples=samples,
            sample_rate_hz=self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
        )

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class LabeledWindow:
    """A fixed-length signal window with its device class and split tag."""

    signal: ComplexSignal
    label: int
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")


@dataclass(frozen=True)
class LabeledDataset:
    """Fixed-length labeled windows plus the class roster."""

    windows: tuple
    class_count: int
    class_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        windows = tuple(self.windows)
        object.__setattr__(self, "windows", windows)
        names = tuple(self.class_names) if self.class_names else tuple(
            f"class_{i}" for i in range(self.class_count)
        )
        object.__setattr__(self, "class_names", names)
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if len(names) != self.class_count:
            raise ValueError(
                f"class_names has {len(names)} entries for class_count {self.class_count}"
            )
        if not windows:
            return
        length = len(windows[0].signal)
        rate = windows[0].signal.sample_rate_hz
        for w in windows:
            if w.label >= self.class_count:
                raise ValueError(f"label {w.label} out of range for class_count {self.class_count}")
            if len(w.signal) != length:
                raise ValueError(
                    f"all windows must share a length; saw {len(w.signal)} and {length}"
                )
            if w.signal.sample_rate_hz != rate:
                raise ValueError("all windows must share a sample rate")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def window_len(self) -> int:
        return len(self.windows[0].signal) if self.windows else 0

    @property
    def sample_rate_hz(self) -> float:
        return self.windows[0].signal.sample_rate_hz if self.windows else 0.0

    def subset(self, split: str) -> tuple:
        return tuple(w for w in self.windows if w.split == split)

    def split_arrays(self, split: str) -> tuple:
        """Stacked (X, y) arrays for one split: X (N, L) complex64, y (N,) int64."""
        selected = self.subset(split)
        if not selected:
            return (
                np.empty((0, self.window_len), dtype=np.complex64),
                np.empty(0, dtype=np.int64),
            )
        x = np.stack([w.signal.samples.astype(np.complex64, copy=False) for w in selected])
        y = np.array([w.label for w in selected], dtype=np.int64)
        return x, y

    def counts(self) -> dict:
        out = {s: 0 for s in SPLITS}
        for w in self.windows:
            out[w.split] += 1
        return out

    def require_train_coverage(self) -> None:
        """Every class index must appear in the train split at least once."""
        seen = {w.label for w in self.windows if w.split == "train"}
        missing = sorted(set(range(self.class_count)) - seen)
        if missing:
            raise ValueError(f"classes missing from train split: {missing}")


def window_signal(signal: ComplexSignal, window_len: int, stride: int) -> list:
    """Slice a capture into fixed-length windows at the given stride.

    Yields floor((len - window_len)/stride) + 1 windows preserving sample
    order and metadata. A capture shorter than the window is rejected
    rather than zero-padded; padding would inject a learnable artifact.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    total = len(signal)
    if total < window_len:
        raise ValueError(
            f"insufficient samples: capture has {total}, window needs {window_len}"
        )
    count = (total - window_len) // stride + 1
    return [
        signal.with_samples(signal.samples[start : start + window_len])
        for start in (i * stride for i in range(count))
    ]


def _apportion(total: int, fractions: Sequence[float]) -> list:
    """Largest-remainder split of `total` into len(fractions) integer parts."""
    targets = [f * total for f in fractions]
    counts = [int(t) for t in targets]
    remainders = [t - c for t, c in zip(targets, counts)]
    shortfall = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:shortfall]:
        counts[i] += 1
    return counts


def stratified_split(dataset: LabeledDataset, fractions, seed: int = 0) -> LabeledDataset:
    """Reassign split tags so each class honors the (train, val, test) fractions.

    Per-class allocation uses largest-remainder rounding, so every split
    size is within one window of fraction * class_size. Deterministic
    given the seed; every window lands in exactly one split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")

    by_class: dict = {}
    for idx, w in enumerate(dataset.windows):
        by_class.setdefault(w.label, []).append(idx)

    rng = np.random.default_rng(seed)
    new_split = [None] * len(dataset.windows)
    for label in sorted(by_class):
        indices = by_class[label]
        if len(indices) < 3:
            name = dataset.class_names[label]
            raise ValueError(
                f"class too small: {name!r} has {len(indices)} windows, need at least 3"
            )
        counts = _apportion(len(indices), fractions)
        shuffled = [indices[i] for i in rng.permutation(len(indices))]
        cursor = 0
        for split, count in zip(SPLITS, counts):
            for idx in shuffled[cursor : cursor + count]:
                new_split[idx] = split
            cursor += count

    windows = tuple(
        replace(w, split=new_split[i]) for i, w in enumerate(dataset.windows)
    )
    return replace(dataset, windows=windows)
