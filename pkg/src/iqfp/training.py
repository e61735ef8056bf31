"""Optimization loop: Adam/SGD, plateau annealing, early halt, evaluation.

The schedule is the fixed-policy one used throughout: anneal the learning
rate by x0.1 whenever validation accuracy has not strictly improved for
`anneal_patience` consecutive epochs, halt outright once the rate falls
below `early_stop_lr`, and always hand back the parameters from the best
validation epoch rather than the last one.

Recurrent classifiers thread their hidden state across the minibatches of
an epoch (values only; gradients never cross batch boundaries) and reset
it at every epoch start and before every evaluation pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, bce_with_logits, no_grad, softmax_cross_entropy
from .dsp import CropScheduler, crop_batch
from .layers import Module, Parameter
from .signals import LabeledDataset

__all__ = [
    "TrainConfig",
    "TrainState",
    "EvalReport",
    "DivergenceError",
    "Adam",
    "Sgd",
    "LrSchedule",
    "classification_loss",
    "train",
    "evaluate",
    "evaluate_arrays",
]

OPTIMIZERS = ("adam", "sgd")
LOSSES = ("bce", "ce")


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient goes non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    lr_init: float = 1e-4
    weight_decay: float = 9e-5
    anneal_patience: int = 10
    anneal_factor: float = 0.1
    early_stop_lr: float = 1e-7
    loss: str = "bce"
    seed: int = 0
    val_fraction: float = 0.1
    rotate_augment: bool = False
    roll_augment: bool = False
    noise_augment_db: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 < self.anneal_factor < 1.0:
            raise ValueError("anneal_factor must be in (0, 1)")
        if self.lr_init <= 0 or self.early_stop_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.anneal_patience < 1:
            raise ValueError("anneal_patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainState:
    """Outcome of a training run; everything is JSON-serializable."""

    epochs_run: int = 0
    best_val_top1: float = -1.0
    best_epoch: int = -1
    halted_early: bool = False
    final_lr: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_val_top1": self.best_val_top1,
            "best_epoch": self.best_epoch,
            "halted_early": self.halted_early,
            "final_lr": self.final_lr,
            "history": self.history,
        }


@dataclass
class EvalReport:
    top1: float
    top5: float
    class_count: int
    sample_count: int
    confusion: list  # row = true class, column = predicted
    timings_s: dict

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "class_count": self.class_count,
            "sample_count": self.sample_count,
            "confusion": self.confusion,
            "timings_s": self.timings_s,
        }


class _OptimizerBase:
    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        self.params = [p for p in params if isinstance(p, Parameter)]
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)

    def set_lr(self, lr: float):
        self.lr = float(lr)

    def _decay(self, p: Parameter):
        if self.weight_decay and p.decay:
            p.data *= 1.0 - self.weight_decay

    def _grad(self, p: Parameter) -> np.ndarray:
        g = p.grad
        if g is None:
            return np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient encountered")
        return g

    def step(self):
        raise NotImplementedError


class Adam(_OptimizerBase):
    """Adam with bias correction and decoupled multiplicative weight decay.

    Decay multiplies eligible weights by (1 - weight_decay) each step,
    outside the moment estimates.
    """

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, amsgrad: bool = False):
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.amsgrad = bool(amsgrad)
        self.t = 0
        self._m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self._v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self._vmax = (
            [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
            if amsgrad else None
        )

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = self._grad(p).astype(np.float64, copy=False)
            self._decay(p)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            if self.amsgrad:
                np.maximum(self._vmax[i], v_hat, out=self._vmax[i])
                v_hat = self._vmax[i]
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


class Sgd(_OptimizerBase):
    """Plain stochastic gradient descent with the same decoupled decay."""

    def step(self):
        for p in self.params:
            g = self._grad(p)
            self._decay(p)
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)


class LrSchedule:
    """Plateau annealing with a hard floor.

    `update` returns (improved, halt). Improvement is strict; `halt`
    becomes True the first time the annealed rate falls below the floor.
    """

    def __init__(self, lr_init: float, patience: int, factor: float, floor: float):
        self.lr = float(lr_init)
        self.patience = int(patience)
        self.factor = float(factor)
        self.floor = float(floor)
        self.best = -np.inf
        self.stale = 0

    def update(self, metric: float):
        improved = metric > self.best
        if improved:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
                if self.lr < self.floor:
                    return improved, True
        return improved, False


def classification_loss(logits: Tensor, labels: np.ndarray, kind: str,
                        class_count: int) -> Tensor:
    """bce: one-hot binary cross-entropy (the default); ce: softmax cross-entropy."""
    if kind == "ce":
        return softmax_cross_entropy(logits, labels)
    if kind != "bce":
        raise ValueError(f"loss must be one of {LOSSES}")
    targets = np.zeros((labels.shape[0], class_count), dtype=logits.data.dtype)
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return bce_with_logits(logits, targets)


def _snapshot(model: Module) -> dict:
    with no_grad():
        params = {name: p.data.copy() for name, p in model.named_parameters()}
        buffers = {name: b.copy() for name, b in model.named_buffers()}
    return {"params": params, "buffers": buffers}


def _restore(model: Module, snap: dict):
    for name, p in model.named_parameters():
        p.data[...] = snap["params"][name]
    for name, b in model.named_buffers():
        b[...] = snap["buffers"][name]


def _carve_validation(y: np.ndarray, fraction: float, seed: int):
    """Per-class tail carve: deterministic, at least one window per class."""
    rng = np.random.default_rng(seed)
    val_mask = np.zeros(y.shape[0], dtype=bool)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        take = max(1, int(round(fraction * idx.size)))
        if take >= idx.size:
            raise ValueError(
                f"class {cls} has {idx.size} training windows; cannot carve "
                f"a validation fraction of {fraction}"
            )
        val_mask[idx[:take]] = True
    return ~val_mask, val_mask


def train(model, dataset: LabeledDataset, config: TrainConfig,
          crop_parts: int = 1, crop_mode: str = "extract", log=None):
    """Fit `model` on the dataset's train split; returns (model, TrainState).

    Model selection uses the dataset's val split when present, otherwise a
    deterministic carve of `val_fraction` from the train split. With
    `crop_parts` > 1, every presented window (train and validation) is a
    random contiguous 1/crop_parts crop drawn without replacement per
    window across epochs; `crop_mode` "extract" feeds the bare fragment,
    "mask" feeds the full-length window zeroed outside the fragment.
    """
    x_train, y_train = dataset.split_arrays("train")
    if x_train.shape[0] == 0:
        raise ValueError("train split is empty")
    x_val, y_val = dataset.split_arrays("val")
    if x_val.shape[0] == 0:
        if config.val_fraction <= 0:
            raise ValueError(
                "no val split and val_fraction is 0; model selection needs "
                "validation data"
            )
        keep, carved = _carve_validation(y_train, config.val_fraction, config.seed)
        x_val, y_val = x_train[carved], y_train[carved]
        x_train, y_train = x_train[keep], y_train[keep]

    class_count = dataset.class_count
    rng = np.random.default_rng(config.seed)
    crop_sched = CropScheduler(config.seed + 1) if crop_parts > 1 else None
    val_crop_sched = CropScheduler(config.seed + 2) if crop_parts > 1 else None
    optimizer = _build_optimizer(model, config)
    schedule = LrSchedule(config.lr_init, config.anneal_patience,
                          config.anneal_factor, config.early_stop_lr)
    state = TrainState(final_lr=schedule.lr)
    best = _snapshot(model)
    batch = min(config.batch_size, x_train.shape[0])

    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(x_train.shape[0])
        carry = model.initial_state(batch)
        losses = []
        t_epoch = time.perf_counter()
        for start in range(0, x_train.shape[0] - batch + 1, batch):
            idx = order[start : start + batch]
            xb = x_train[idx]
            if crop_sched is not None:
                xb = crop_batch(xb, crop_parts, crop_sched, keys=idx,
                                mode=crop_mode)
            xb = _augment(xb, config, rng)
            logits, carry = model.forward_stateful(xb, carry)
            loss = classification_loss(logits, y_train[idx], config.loss, class_count)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            losses.append(float(loss.data))
            loss.backward()
            optimizer.step()
            model.zero_grad()
        val_top1, _ = _split_accuracy(model, x_val, y_val, batch, crop_parts,
                                      val_crop_sched, crop_mode)
        improved, halt = schedule.update(val_top1)
        optimizer.set_lr(schedule.lr)
        if improved:
            best = _snapshot(model)
            state.best_val_top1 = val_top1
            state.best_epoch = epoch
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else None,
            "val_top1": val_top1,
            "lr": schedule.lr,
            "seconds": round(time.perf_counter() - t_epoch, 3),
        }
        state.history.append(record)
        state.epochs_run = epoch + 1
        state.final_lr = schedule.lr
        if log is not None:
            log(record)
        if halt:
            state.halted_early = True
            break

    _restore(model, best)
    model.eval()
    return model, state


def _augment(xb: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Label-independent training-time resampling of nuisance parameters.

    rotate: transmissions carry a uniform random initial carrier phase, so
    identity is invariant to a global rotation. roll: the capture trigger
    has no absolute time reference, so identity is invariant to a circular
    shift. noise: extra channel noise at a fixed SNR. Each redraws a
    quantity the data generator already randomizes, so none can leak the
    label; together they stop the network from memorizing individual
    training windows.
    """
    n, length = xb.shape
    if config.rotate_augment:
        rotors = np.exp(1j * rng.uniform(-np.pi, np.pi, n))
        xb = xb * rotors.astype(xb.dtype)[:, np.newaxis]
    if config.roll_augment:
        shifts = rng.integers(0, length, n)
        index = (np.arange(length)[np.newaxis, :] + shifts[:, np.newaxis]) % length
        xb = np.take_along_axis(xb, index, axis=1)
    if config.noise_augment_db is not None:
        from .dsp import awgn_array

        xb = awgn_array(xb, config.noise_augment_db, rng).astype(xb.dtype)
    return xb


def _build_optimizer(model, config: TrainConfig):
    params = list(model.parameters())
    if config.optimizer == "adam":
        return Adam(params, config.lr_init, weight_decay=config.weight_decay)
    return Sgd(params, config.lr_init, weight_decay=config.weight_decay)


def _forward_batches(model, x: np.ndarray, batch: int, crop_parts: int,
                     crop_sched: Optional[CropScheduler],
                     crop_mode: str = "extract"):
    """Yield (row_indices, logits ndarray) over x in deterministic order."""
    model.eval()
    carry = None
    with no_grad():
        for start in range(0, x.shape[0], batch):
            idx = np.arange(start, min(start + batch, x.shape[0]))
            xb = x[idx]
            if crop_parts > 1:
                xb = crop_batch(xb, crop_parts, crop_sched, keys=idx,
                                mode=crop_mode)
            if idx.size != batch or carry is None:
                carry = model.initial_state(idx.size)
            logits, carry = model.forward_stateful(xb, carry)
            yield idx, logits.data


def _split_accuracy(model, x, y, batch, crop_parts, crop_sched,
                    crop_mode="extract"):
    correct = 0
    predictions = np.zeros(y.shape[0], dtype=np.int64)
    for idx, logits in _forward_batches(model, x, batch, crop_parts, crop_sched,
                                        crop_mode):
        pred = logits.argmax(axis=1)
        predictions[idx] = pred
        correct += int(np.sum(pred == y[idx]))
    return (correct / max(1, y.shape[0])), predictions


def evaluate_arrays(model, x: np.ndarray, y: np.ndarray, class_count: int,
                    batch: int = 64, crop_parts: int = 1,
                    crop_seed: int = 0, crop_mode: str = "extract") -> EvalReport:
    """Score a window batch; top-5 uses min(5, class_count) candidates."""
    if x.shape[0] == 0:
        raise ValueError("nothing to evaluate: empty array")
    t0 = time.perf_counter()
    x = np.ascontiguousarray(x)
    t_load = time.perf_counter() - t0

    crop_sched = CropScheduler(crop_seed) if crop_parts > 1 else None
    k = min(5, class_count)
    top1 = 0
    topk = 0
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    t1 = time.perf_counter()
    for idx, logits in _forward_batches(model, x, batch, crop_parts, crop_sched,
                                        crop_mode):
        ranked = np.argsort(-logits, axis=1)[:, :k]
        truth = y[idx]
        top1 += int(np.sum(ranked[:, 0] == truth))
        topk += int(np.sum(np.any(ranked == truth[:, None], axis=1)))
        for t, p in zip(truth, ranked[:, 0]):
            confusion[t, p] += 1
    t_infer = time.perf_counter() - t1
    n = x.shape[0]
    return EvalReport(
        top1=top1 / n,
        top5=topk / n,
        class_count=class_count,
        sample_count=n,
        confusion=confusion.tolist(),
        timings_s={"load": round(t_load, 6), "infer": round(t_infer, 6)},
    )


def evaluate(model, dataset: LabeledDataset, split: str = "test",
             batch: int = 64, crop_parts: int = 1, crop_seed: int = 0,
             crop_mode: str = "extract") -> EvalReport:
    x, y = dataset.split_arrays(split)
    if x.shape[0] == 0:
        raise ValueError(f"nothing to evaluate: split {split!r} is empty")
    return evaluate_arrays(model, x, y, dataset.class_count, batch=batch,
                           crop_parts=crop_parts, crop_seed=crop_seed,
                           crop_mode=crop_mode)
