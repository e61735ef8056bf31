"""Pure-NumPy biquad cascade, the fallback when the compiled kernel is absent.

The IIR recurrence is sequential in time, so this version vectorizes
across channels instead: one Python-level loop over samples, array ops
across the channel axis. Identical arithmetic (direct form II
transposed) to the compiled kernel, bit-for-bit at float64.
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "fallback"


def apply_sos(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Filter each row of x (channels, samples) through the biquad cascade.

    sos has shape (sections, 6) laid out as (b0, b1, b2, 1, a1, a2).
    Returns a new float64 array; the input is not modified.
    """
    sos = np.asarray(sos, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if sos.ndim != 2 or sos.shape[1] != 6:
        raise ValueError(f"sos must have shape (sections, 6), got {sos.shape}")
    if x.ndim != 2:
        raise ValueError(f"expected (channels, samples), got {x.shape}")
    channels, samples = x.shape
    sections = sos.shape[0]
    b0 = sos[:, 0].copy()
    b1 = sos[:, 1].copy()
    b2 = sos[:, 2].copy()
    a1 = sos[:, 4].copy()
    a2 = sos[:, 5].copy()

    y = x.copy()
    z1 = np.zeros((sections, channels))
    z2 = np.zeros((sections, channels))
    for n in range(samples):
        v = y[:, n]
        for s in range(sections):
            out = b0[s] * v + z1[s]
            z1[s] = b1[s] * v - a1[s] * out + z2[s]
            z2[s] = b2[s] * v - a2[s] * out
            v = out
        y[:, n] = v
    return y
