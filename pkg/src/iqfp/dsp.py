"""Protocol-agnostic preprocessing and augmentation for I/Q windows.

Pipeline stages: baseband shift (known center or Welch PSD-peak
estimate), Butterworth bandpass realized as a cascade of biquads,
decimation into phase-offset subsequences (optionally anti-aliased),
randomized without-replacement cropping, rotation/scaling, and
AWGN/flat-fading channel augmentation.

Filters are designed by bilinear transform with frequency pre-warping
(via scipy) and applied causally, forward only: a deployed receiver is
causal, and the transmitter's filter phase response is part of the
fingerprint, so zero-phase two-pass filtering would erase signal.
Application runs through the compiled biquad kernel when available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal as _scipy_signal

from ._kernels import apply_sos
from .signals import ComplexSignal

__all__ = [
    "BandpassSpec",
    "PreprocessConfig",
    "BiquadCascade",
    "design_butterworth_bandpass",
    "design_butterworth_lowpass",
    "filter_apply",
    "filter_array",
    "baseband",
    "baseband_array",
    "estimate_center_frequency",
    "decimate",
    "decimate_array",
    "CropScheduler",
    "random_crop",
    "crop_length",
    "rotate",
    "scale",
    "awgn",
    "awgn_array",
    "rayleigh_fade",
    "rician_fade",
    "channel_augment",
    "preprocess_signal",
    "preprocess_array",
]

BASEBAND_MODES = ("none", "known_center", "estimate_psd_peak")


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float
    high_hz: float
    order: int = 3

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("filter order must be >= 1")
        if not 0 < self.low_hz < self.high_hz:
            raise ValueError(
                f"need 0 < low_hz < high_hz, got {self.low_hz}, {self.high_hz}"
            )


@dataclass(frozen=True)
class PreprocessConfig:
    """Declarative preprocessing recipe applied uniformly to every window."""

    baseband: str = "none"
    baseband_freq_hz: float = 0.0
    bandpass: Optional[BandpassSpec] = None
    decimation_factor: int = 1
    antialias: bool = True
    crop_parts: int = 1
    crop_mode: str = "extract"

    def __post_init__(self):
        if self.baseband not in BASEBAND_MODES:
            raise ValueError(f"baseband must be one of {BASEBAND_MODES}")
        if self.decimation_factor < 1:
            raise ValueError("decimation_factor must be >= 1")
        if self.crop_parts < 1:
            raise ValueError("crop_parts must be >= 1")
        if self.crop_mode not in ("extract", "mask"):
            raise ValueError("crop_mode must be 'extract' or 'mask'")


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections (b0, b1, b2, 1, a1, a2); stable by construction."""

    sections: np.ndarray

    def __post_init__(self):
        sections = np.ascontiguousarray(self.sections, dtype=np.float64)
        if sections.ndim != 2 or sections.shape[1] != 6:
            raise ValueError(f"sections must have shape (n, 6), got {sections.shape}")
        for row in sections:
            poles = np.roots([1.0, row[4], row[5]])
            if np.any(np.abs(poles) >= 1.0):
                raise ValueError("unstable section: pole on or outside the unit circle")
        object.__setattr__(self, "sections", sections)

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response H(e^{j 2 pi f / fs}) per requested frequency."""
        z = np.exp(2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs)
        zinv = 1.0 / z
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sections:
            h *= (b0 + b1 * zinv + b2 * zinv**2) / (1.0 + a1 * zinv + a2 * zinv**2)
        return h


def design_butterworth_bandpass(low_hz: float, high_hz: float, order: int, fs: float) -> BiquadCascade:
    """Butterworth bandpass as cascaded biquads; -3.01 dB at each cutoff.

    Realized via bilinear transform with pre-warping; the biquad cascade
    stays numerically sound at extreme cutoff ratios where a flat
    order-2n polynomial would be ill-conditioned.
    """
    spec = BandpassSpec(low_hz, high_hz, order)
    if not spec.high_hz < fs / 2:
        raise ValueError(f"high cutoff {high_hz} must sit below Nyquist {fs / 2}")
    sos = _scipy_signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    return BiquadCascade(sos)


def design_butterworth_lowpass(cutoff_hz: float, order: int, fs: float) -> BiquadCascade:
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} must lie in (0, {fs / 2})")
    sos = _scipy_signal.butter(order, cutoff_hz, btype="lowpass", fs=fs, output="sos")
    return BiquadCascade(sos)


def filter_array(cascade: BiquadCascade, x: np.ndarray) -> np.ndarray:
    """Causal forward filtering of complex windows (..., L), state reset per row.

    I and Q streams are filtered independently (real coefficients), which
    is exactly complex filtering by linearity.
    """
    x = np.asarray(x)
    flat = x.reshape(-1, x.shape[-1])
    channels = np.concatenate([flat.real, flat.imag], axis=0)
    filtered = apply_sos(cascade.sections, channels)
    n = flat.shape[0]
    out = filtered[:n] + 1j * filtered[n:]
    return out.reshape(x.shape).astype(x.dtype, copy=False)


def filter_apply(cascade: BiquadCascade, sig: ComplexSignal) -> ComplexSignal:
    return sig.with_samples(filter_array(cascade, sig.samples[np.newaxis, :])[0])


def estimate_center_frequency(samples: np.ndarray, fs: float, nperseg: int = 1024) -> float:
    """Frequency of the Welch PSD peak (1024-point segments, 50% overlap)."""
    samples = np.asarray(samples)
    if not np.any(samples):
        raise ValueError("no spectral peak: signal is identically zero")
    nperseg = min(nperseg, samples.size)
    freqs, psd = _scipy_signal.welch(
        samples,
        fs=fs,
        nperseg=nperseg,
        noverlap=nperseg // 2,
        return_onesided=False,
        detrend=False,
    )
    return float(freqs[int(np.argmax(psd))])


def baseband_array(x: np.ndarray, fs: float, shift_hz: float) -> np.ndarray:
    """Multiply by e^(-j 2 pi shift k / fs), moving content at +shift to 0 Hz."""
    x = np.asarray(x)
    if shift_hz == 0.0:
        return x.copy()
    k = np.arange(x.shape[-1], dtype=np.float64)
    rotation = np.exp(-2j * np.pi * shift_hz / fs * k)
    return (x * rotation).astype(x.dtype, copy=False)


def baseband(sig: ComplexSignal, mode: str = "known_center", freq_hz: Optional[float] = None) -> ComplexSignal:
    """Shift spectral content to 0 Hz; see BASEBAND_MODES."""
    if mode == "none":
        return sig
    if mode == "known_center":
        if freq_hz is None:
            raise ValueError("known_center basebanding requires freq_hz")
        if not abs(freq_hz) < sig.sample_rate_hz / 2:
            raise ValueError(
                f"|shift| {abs(freq_hz)} must be below Nyquist {sig.sample_rate_hz / 2}"
            )
        shift = freq_hz
    elif mode == "estimate_psd_peak":
        shift = estimate_center_frequency(sig.samples, sig.sample_rate_hz)
    else:
        raise ValueError(f"baseband mode must be one of {BASEBAND_MODES}")
    return sig.with_samples(baseband_array(sig.samples, sig.sample_rate_hz, shift))


def decimate_array(x: np.ndarray, factor: int, fs: float, antialias: bool = True) -> list:
    """All `factor` phase-offset subsequences of (..., L) windows.

    Each output keeps every factor-th sample starting at its phase
    offset, length floor(L / factor) (trailing remainder dropped). With
    antialias, a 3rd-order Butterworth low-pass at fs/(2*factor) runs first.
    """
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    x = np.asarray(x)
    if x.shape[-1] < factor:
        raise ValueError(f"window of {x.shape[-1]} samples cannot be decimated by {factor}")
    if factor == 1:
        return [x.copy()]
    if antialias:
        x = filter_array(design_butterworth_lowpass(fs / (2 * factor), 3, fs), x)
    keep = (x.shape[-1] // factor) * factor
    x = x[..., :keep]
    return [np.ascontiguousarray(x[..., offset::factor]) for offset in range(factor)]


def decimate(sig: ComplexSignal, factor: int, antialias: bool = True) -> list:
    """Phase-offset decimation of a signal; sample rate divides by `factor`."""
    phases = decimate_array(sig.samples[np.newaxis, :], factor, sig.sample_rate_hz, antialias)
    new_rate = sig.sample_rate_hz / factor
    return [sig.with_samples(p[0], sample_rate_hz=new_rate) for p in phases]


def crop_length(window_len: int, parts: int) -> int:
    return window_len // parts


class CropScheduler:
    """Without-replacement crop-part draws, cycling a fresh permutation per signal.

    Successive draws for one key exhaust all part indices exactly once
    before reshuffling; the tail remainder of the signal is never served.
    Deterministic given the seed.
    """

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self._pending: dict = {}

    def draw(self, key, parts: int) -> int:
        if parts < 1:
            raise ValueError("parts must be >= 1")
        queue = self._pending.get(key)
        if not queue or queue[0] != parts:
            queue = (parts, list(self._rng.permutation(parts)))
            self._pending[key] = queue
        index = queue[1].pop()
        if not queue[1]:
            del self._pending[key]
        return int(index)


def random_crop(sig: ComplexSignal, parts: int, scheduler: CropScheduler, key=None) -> ComplexSignal:
    """One contiguous part of length floor(L / parts), drawn without replacement."""
    length = len(sig)
    if parts > length:
        raise ValueError(f"cannot crop {length} samples into {parts} parts")
    if parts == 1:
        return sig
    part_len = crop_length(length, parts)
    index = scheduler.draw(key, parts)
    start = index * part_len
    return sig.with_samples(sig.samples[start : start + part_len])


def crop_batch(
    x: np.ndarray, parts: int, scheduler: CropScheduler, keys, mode: str = "extract"
) -> np.ndarray:
    """Apply the crop scheduler per row of (N, L); keys identify the rows.

    mode "extract" returns the bare fragments, shape (N, L // parts).
    mode "mask" keeps shape (N, L) and zeroes everything outside the drawn
    fragment, preserving its position in the window. Fixed-geometry
    classifiers consume fragments this way: the fragment arrives somewhere
    inside the expected frame and the rest of the frame is silence.
    """
    if mode not in ("extract", "mask"):
        raise ValueError(f"unknown crop mode: {mode!r}")
    if parts == 1:
        return x
    part_len = crop_length(x.shape[-1], parts)
    if mode == "mask":
        out = np.zeros_like(x)
        for row, key in enumerate(keys):
            start = scheduler.draw(key, parts) * part_len
            out[row, start : start + part_len] = x[row, start : start + part_len]
        return out
    out = np.empty(x.shape[:-1] + (part_len,), dtype=x.dtype)
    for row, key in enumerate(keys):
        start = scheduler.draw(key, parts) * part_len
        out[row] = x[row, start : start + part_len]
    return out


def rotate(sig: ComplexSignal, theta: float) -> ComplexSignal:
    """Multiply every sample by e^(j theta); magnitudes are preserved."""
    factor = complex(np.cos(theta), np.sin(theta))
    return sig.with_samples((sig.samples * factor).astype(sig.samples.dtype, copy=False))


def scale(sig: ComplexSignal, a: float) -> ComplexSignal:
    """Multiply every sample by a > 0; phases are preserved."""
    if not a > 0:
        raise ValueError(f"scale factor must be positive, got {a}")
    return sig.with_samples((sig.samples * a).astype(sig.samples.dtype, copy=False))


def awgn_array(x: np.ndarray, snr_db: float, rng) -> np.ndarray:
    """Add circular complex Gaussian noise at an exact per-window SNR.

    The drawn noise vector is renormalized to the exact target power, so
    the achieved SNR over each window equals snr_db to float precision
    (well inside the +/-0.1 dB contract).
    """
    x = np.asarray(x)
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    power = np.mean(np.abs(x) ** 2, axis=-1, keepdims=True)
    if np.any(power == 0):
        raise ValueError("cannot set SNR on zero signal")
    target = power * 10.0 ** (-snr_db / 10.0)
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    drawn = np.mean(np.abs(noise) ** 2, axis=-1, keepdims=True)
    noise *= np.sqrt(target / drawn)
    return (x + noise).astype(x.dtype, copy=False)


def awgn(sig: ComplexSignal, snr_db: float, rng) -> ComplexSignal:
    return sig.with_samples(awgn_array(sig.samples[np.newaxis, :], snr_db, rng)[0])


def rayleigh_fade(sig: ComplexSignal, rng) -> ComplexSignal:
    """Multiply the whole window by one CN(0, 1) gain (|h| Rayleigh, E|h|^2 = 1)."""
    gain = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
    return sig.with_samples((sig.samples * gain).astype(sig.samples.dtype, copy=False))


def rician_fade(sig: ComplexSignal, k_factor: float, rng) -> ComplexSignal:
    """Flat Rician fading: line-of-sight power fraction k/(k+1), E|h|^2 = 1."""
    if k_factor < 0:
        raise ValueError("k_factor must be >= 0")
    scatter = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
    gain = np.sqrt(k_factor / (k_factor + 1.0)) + scatter * np.sqrt(1.0 / (k_factor + 1.0))
    return sig.with_samples((sig.samples * gain).astype(sig.samples.dtype, copy=False))


def channel_augment(sig: ComplexSignal, model: str, rng, snr_db: float = 20.0,
                    k_factor: float = 1.0) -> ComplexSignal:
    if model == "awgn":
        return awgn(sig, snr_db, rng)
    if model == "rayleigh_flat":
        return rayleigh_fade(sig, rng)
    if model == "rician_flat":
        return rician_fade(sig, k_factor, rng)
    raise ValueError(f"unknown channel model {model!r}")


def preprocess_array(x: np.ndarray, fs: float, cfg: PreprocessConfig) -> tuple:
    """Run baseband -> bandpass -> decimation over (N, L) windows.

    Returns (windows, new_fs). Decimation keeps phase offset 0; the other
    phase streams are available via :func:`decimate_array` directly.
    Cropping is not applied here; it is a per-minibatch training/eval step.
    """
    x = np.asarray(x)
    if cfg.baseband == "known_center" and cfg.baseband_freq_hz != 0.0:
        x = baseband_array(x, fs, cfg.baseband_freq_hz)
    elif cfg.baseband == "estimate_psd_peak":
        x = np.stack(
            [baseband_array(row, fs, estimate_center_frequency(row, fs)) for row in x]
        )
    if cfg.bandpass is not None:
        cascade = design_butterworth_bandpass(
            cfg.bandpass.low_hz, cfg.bandpass.high_hz, cfg.bandpass.order, fs
        )
        x = filter_array(cascade, x)
    if cfg.decimation_factor > 1:
        x = decimate_array(x, cfg.decimation_factor, fs, cfg.antialias)[0]
        fs = fs / cfg.decimation_factor
    elif cfg.baseband == "none" and cfg.bandpass is None:
        x = x.copy()
    return x, fs


def preprocess_signal(sig: ComplexSignal, cfg: PreprocessConfig) -> ComplexSignal:
    """Signal-level preprocessing with metadata kept consistent."""
    windows, new_fs = preprocess_array(
        sig.samples[np.newaxis, :], sig.sample_rate_hz, cfg
    )
    return sig.with_samples(windows[0], sample_rate_hz=new_fs)
