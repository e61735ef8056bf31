"""Filter spec, pipeline identities, cropping, channel effects, kernel parity."""

import numpy as np
import pytest
from scipy import signal as sps

from iqfp.dsp import (
    BandpassSpec,
    BiquadCascade,
    CropScheduler,
    PreprocessConfig,
    awgn,
    awgn_array,
    baseband_array,
    channel_augment,
    crop_batch,
    crop_length,
    decimate,
    decimate_array,
    design_butterworth_bandpass,
    design_butterworth_lowpass,
    estimate_center_frequency,
    filter_array,
    preprocess_array,
    random_crop,
    rotate,
    scale,
)
from iqfp.signals import ComplexSignal


def db(h):
    return 20 * np.log10(np.abs(h))


def tone(freq, fs, n, amp=1.0):
    t = np.arange(n) / fs
    return amp * np.exp(2j * np.pi * freq * t)


# ---------------------------------------------------------------------------
# filter design


def test_bandpass_cutoffs_at_minus_3db():
    cascade = design_butterworth_bandpass(25e3, 20e6, 3, 100e6)
    edges = db(cascade.response([25e3, 20e6], 100e6))
    np.testing.assert_allclose(edges, -3.0103, atol=0.1)


def test_bandpass_dc_rejection():
    cascade = design_butterworth_bandpass(25e3, 20e6, 3, 100e6)
    # response at exactly 0 Hz is -inf; probe a near-DC bin instead
    assert db(cascade.response([1.0], 100e6))[0] < -80.0
    dc_gain = np.abs(cascade.response([0.0], 100e6))[0]
    assert dc_gain < 1e-12


def test_bandpass_impulse_response_matches_design():
    """DFT of the filtered impulse is an independent check of the application path."""
    n = 65536
    fs = 100e6
    cascade = design_butterworth_bandpass(25e3, 20e6, 3, fs)
    impulse = np.zeros((1, n), dtype=np.complex128)
    impulse[0, 0] = 1.0
    h = filter_array(cascade, impulse)[0]
    assert np.sum(np.abs(h[-100:]) ** 2) < 1e-12 * np.sum(np.abs(h) ** 2)  # fully decayed
    k = np.arange(n)
    for cutoff in (25e3, 20e6):  # exact-frequency DFT avoids FFT bin quantization
        response = np.sum(h * np.exp(-2j * np.pi * cutoff * k / fs))
        assert db(response) == pytest.approx(-3.0103, abs=0.1)
    assert db(np.sum(h)) < -80.0


def test_narrowband_pipeline_filter_cutoffs():
    cascade = design_butterworth_bandpass(10e3, 300e3, 3, 100e6)
    edges = db(cascade.response([10e3, 300e3], 100e6))
    np.testing.assert_allclose(edges, -3.0103, atol=0.1)


def test_response_matches_scipy_sosfreqz():
    cascade = design_butterworth_bandpass(25e3, 20e6, 3, 100e6)
    freqs = np.linspace(1e3, 45e6, 64)
    w, h_ref = sps.sosfreqz(cascade.sections, worN=freqs, fs=100e6)
    np.testing.assert_allclose(cascade.response(freqs, 100e6), h_ref, atol=1e-12)


def test_filter_array_matches_scipy_sosfilt():
    rng = np.random.default_rng(0)
    cascade = design_butterworth_lowpass(1e6, 3, 10e6)
    x = rng.normal(size=(3, 256)) + 1j * rng.normal(size=(3, 256))
    got = filter_array(cascade, x)
    want = sps.sosfilt(cascade.sections, x, axis=-1)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_cascade_validation():
    with pytest.raises(ValueError, match=r"\(n, 6\)"):
        BiquadCascade(np.zeros((2, 5)))
    unstable = np.array([[1.0, 0.0, 0.0, 1.0, -2.5, 1.2]])  # pole outside unit circle
    with pytest.raises(ValueError, match="unstable"):
        BiquadCascade(unstable)


def test_design_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        design_butterworth_bandpass(25e3, 60e6, 3, 100e6)
    with pytest.raises(ValueError, match="cutoff"):
        design_butterworth_lowpass(6e6, 3, 10e6)
    with pytest.raises(ValueError):
        BandpassSpec(300e3, 10e3, 3)  # inverted band


# ---------------------------------------------------------------------------
# kernel parity


def test_fallback_and_active_kernel_agree():
    from iqfp._kernels import apply_sos as active
    from iqfp._kernels.fallback import apply_sos as fallback

    rng = np.random.default_rng(1)
    sos = design_butterworth_bandpass(10e3, 300e3, 3, 100e6).sections
    x = rng.normal(size=(4, 500))
    assert np.array_equal(active(sos, x), fallback(sos, x))


def test_compiled_kernel_is_active_when_built():
    compiled = pytest.importorskip("iqfp._kernels._biquad")
    from iqfp import _kernels

    assert _kernels.IMPLEMENTATION == compiled.IMPLEMENTATION == "compiled"


# ---------------------------------------------------------------------------
# pipeline identities


def test_decimation_interleave_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 24)) + 1j * rng.normal(size=(2, 24))
    phases = decimate_array(x, 4, 1e6, antialias=False)
    rebuilt = np.empty_like(x)
    for offset, phase in enumerate(phases):
        rebuilt[:, offset::4] = phase
    np.testing.assert_array_equal(rebuilt, x)


def test_decimation_drops_remainder():
    x = np.arange(10, dtype=np.complex128).reshape(1, 10)
    phases = decimate_array(x, 3, 1e6, antialias=False)
    assert [p.shape[-1] for p in phases] == [3, 3, 3]
    np.testing.assert_array_equal(phases[1][0], [1, 4, 7])


def test_decimate_signal_divides_rate():
    sig = ComplexSignal(np.ones(32, dtype=np.complex64), 8e6)
    out = decimate(sig, 4, antialias=False)
    assert len(out) == 4
    assert all(s.sample_rate_hz == 2e6 for s in out)


def test_decimation_antialias_suppresses_fold_over():
    fs = 1e6
    # tone above the post-decimation Nyquist would alias in-band
    x = tone(200e3, fs, 4096)[np.newaxis, :]
    clean = decimate_array(x, 4, fs, antialias=True)[0][0]
    dirty = decimate_array(x, 4, fs, antialias=False)[0][0]
    assert np.mean(np.abs(clean) ** 2) < 0.05 * np.mean(np.abs(dirty) ** 2)


def test_baseband_round_trip_identity():
    rng = np.random.default_rng(3)
    x = (rng.normal(size=(2, 128)) + 1j * rng.normal(size=(2, 128)))
    back = baseband_array(baseband_array(x, 1e6, 37e3), 1e6, -37e3)
    assert np.abs(back - x).max() < 1e-9


def test_baseband_shifts_tone_to_dc():
    fs = 1e6
    x = tone(100e3, fs, 1000)[np.newaxis, :]
    shifted = baseband_array(x, fs, 100e3)
    np.testing.assert_allclose(shifted, np.ones_like(shifted), atol=1e-9)


def test_rotate_round_trip_identity():
    rng = np.random.default_rng(4)
    sig = ComplexSignal((rng.normal(size=64) + 1j * rng.normal(size=64)).astype(np.complex128), 1e6)
    back = rotate(rotate(sig, 1.234), -1.234)
    assert np.abs(back.samples - sig.samples).max() < 1e-9


def test_scale_preserves_phase():
    sig = ComplexSignal(np.array([1 + 1j], dtype=np.complex128), 1e6)
    out = scale(sig, 3.0)
    np.testing.assert_allclose(out.samples, [3 + 3j])
    with pytest.raises(ValueError, match="positive"):
        scale(sig, 0.0)


def test_estimate_center_frequency_finds_tone():
    fs = 1e6
    x = tone(123e3, fs, 8192) + 0.01 * (np.random.default_rng(5).normal(size=8192))
    est = estimate_center_frequency(x, fs)
    assert abs(est - 123e3) < fs / 1024  # within one Welch bin


def test_preprocess_array_composes_stages():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 640)) + 1j * rng.normal(size=(3, 640))
    cfg = PreprocessConfig(
        bandpass=BandpassSpec(10e3, 300e3, order=3), decimation_factor=4
    )
    out, fs2 = preprocess_array(x, 4e6, cfg)
    assert out.shape == (3, 160)
    assert fs2 == 1e6
    cascade = design_butterworth_bandpass(10e3, 300e3, 3, 4e6)
    want = decimate_array(filter_array(cascade, x), 4, 4e6, True)[0]
    np.testing.assert_array_equal(out, want)


def test_preprocess_identity_config_copies():
    x = np.ones((1, 8), dtype=np.complex64)
    out, fs2 = preprocess_array(x, 1e6, PreprocessConfig())
    assert fs2 == 1e6
    np.testing.assert_array_equal(out, x)
    assert out is not x


# ---------------------------------------------------------------------------
# cropping


def test_crop_scheduler_without_replacement():
    sched = CropScheduler(seed=0)
    draws = [sched.draw("w1", 6) for _ in range(18)]
    for cycle in range(3):
        assert sorted(draws[cycle * 6 : (cycle + 1) * 6]) == list(range(6))


def test_crop_scheduler_deterministic_and_keyed():
    a = CropScheduler(seed=3)
    b = CropScheduler(seed=3)
    assert [a.draw("k", 4) for _ in range(8)] == [b.draw("k", 4) for _ in range(8)]
    c = CropScheduler(seed=3)
    first_key = [c.draw("k1", 4) for _ in range(4)]
    assert sorted(first_key) == [0, 1, 2, 3]


def test_random_crop_returns_aligned_fragment():
    sig = ComplexSignal(np.arange(20, dtype=np.complex64), 1e6)
    sched = CropScheduler(seed=1)
    out = random_crop(sig, 5, sched, key="w")
    assert len(out) == 4
    start = int(out.samples[0].real)
    assert start % 4 == 0
    np.testing.assert_array_equal(out.samples, np.arange(start, start + 4))


def test_random_crop_part_one_is_identity():
    sig = ComplexSignal(np.arange(8, dtype=np.complex64), 1e6)
    assert random_crop(sig, 1, CropScheduler(), key="w") is sig


def test_crop_batch_extract_shapes_and_values():
    x = np.arange(40, dtype=np.complex64).reshape(2, 20)
    out = crop_batch(x, 5, CropScheduler(seed=2), keys=["a", "b"])
    assert out.shape == (2, 4)
    for row in range(2):
        start = int(out[row, 0].real) - row * 20
        assert start % 4 == 0
        np.testing.assert_array_equal(out[row], x[row, start : start + 4])


def test_crop_batch_mask_keeps_geometry():
    x = np.ones((3, 12), dtype=np.complex64)
    out = crop_batch(x, 4, CropScheduler(seed=5), keys=list(range(3)), mode="mask")
    assert out.shape == (3, 12)
    np.testing.assert_array_equal(np.count_nonzero(out, axis=1), 3)


def test_crop_batch_rejects_unknown_mode():
    with pytest.raises(ValueError, match="crop mode"):
        crop_batch(np.ones((1, 8)), 2, CropScheduler(), keys=[0], mode="window")


def test_crop_length_floor():
    assert crop_length(256, 6) == 42
    assert crop_length(6400, 6) == 1066


# ---------------------------------------------------------------------------
# channel effects


def test_awgn_hits_exact_snr():
    rng = np.random.default_rng(7)
    x = tone(50e3, 1e6, 4096, amp=1.7)[np.newaxis, :]
    noisy = awgn_array(x, 12.0, rng)
    noise = noisy - x
    snr = 10 * np.log10(np.mean(np.abs(x) ** 2) / np.mean(np.abs(noise) ** 2))
    assert snr == pytest.approx(12.0, abs=1e-6)


def test_awgn_rejects_zero_signal():
    with pytest.raises(ValueError, match="zero signal"):
        awgn_array(np.zeros((1, 8), dtype=complex), 10.0, np.random.default_rng(0))


def test_fading_preserves_mean_power():
    rng = np.random.default_rng(8)
    sig = ComplexSignal(np.ones(64, dtype=np.complex128), 1e6)
    gains = [
        np.mean(np.abs(channel_augment(sig, "rayleigh_flat", rng).samples) ** 2)
        for _ in range(4000)
    ]
    assert np.mean(gains) == pytest.approx(1.0, rel=0.05)


def test_rician_k_factor_concentrates_gain():
    rng = np.random.default_rng(9)
    sig = ComplexSignal(np.ones(16, dtype=np.complex128), 1e6)
    heavy_los = [
        np.abs(channel_augment(sig, "rician_flat", rng, k_factor=100.0).samples[0])
        for _ in range(500)
    ]
    assert np.std(heavy_los) < 0.1
    assert np.mean(heavy_los) == pytest.approx(1.0, abs=0.05)


def test_channel_augment_unknown_model():
    sig = ComplexSignal(np.ones(4, dtype=np.complex64), 1e6)
    with pytest.raises(ValueError, match="unknown channel model"):
        channel_augment(sig, "rayleigh_selective", np.random.default_rng(0))
