"""Central finite-difference gradient checking for the autodiff ops.

The checker is the independent route against which every analytic
gradient in this package is verified: it re-evaluates the scalar loss
under elementwise perturbations and never touches the backward graph.
Intended for 64-bit toy shapes only.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor

__all__ = ["numerical_gradient", "max_relative_error", "check_gradients"]


def numerical_gradient(
    loss_fn: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of `loss_fn` w.r.t. each array, elementwise."""
    grads = []
    for base in arrays:
        if not base.flags.c_contiguous:
            raise ValueError("numerical_gradient perturbs arrays in place; pass contiguous arrays")
        grad = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            hi = loss_fn(arrays)
            flat[i] = original - step
            lo = loss_fn(arrays)
            flat[i] = original
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(grad)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], numerical: Sequence[np.ndarray]) -> float:
    """Worst-case |analytic - numerical| scaled by the numerical gradient magnitude."""
    worst = 0.0
    for a, n in zip(analytic, numerical):
        a = np.zeros_like(n) if a is None else a
        scale = max(float(np.abs(n).max(initial=0.0)), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst


def check_gradients(
    build_loss: Callable[[Sequence[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    step: float = 1e-5,
) -> float:
    """Return the max relative error between backward() and finite differences.

    `build_loss` receives freshly wrapped leaf tensors (requires_grad=True,
    float64) and must return a scalar Tensor. It is re-invoked for every
    perturbed evaluation, so it must be a pure function of its inputs.
    """
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(leaves)
    loss.backward()
    analytic = [leaf.grad for leaf in leaves]

    def eval_loss(values: Sequence[np.ndarray]) -> float:
        out = build_loss([Tensor(v.copy()) for v in values])
        return float(out.data)

    numerical = numerical_gradient(eval_loss, arrays, step=step)
    return max_relative_error(analytic, numerical)
