"""Layer-level checks: complex mixing, whitening, init law, activations, pooling."""

import numpy as np
import pytest

from iqfp.autodiff import Tensor
from iqfp.gradcheck import check_gradients
from iqfp.layers import (
    POOL_WINDOW,
    ChannelCombiner,
    ComplexBatchNorm,
    ComplexLinear,
    ComplexConv1d,
    ComplexPlanes,
    Conv1d,
    Linear,
    complex_weight_init,
    cpool1d,
    crelu,
    pool1d,
    zrelu,
)


def planes_from(z, dtype=np.float64):
    return ComplexPlanes.from_complex(z, dtype=dtype)


# ---------------------------------------------------------------------------
# complex linear / conv against complex-number arithmetic


def test_complex_linear_matches_complex_matmul():
    rng = np.random.default_rng(11)
    layer = ComplexLinear(6, 4, rng, dtype=np.float64)
    z = rng.normal(size=(5, 6)) + 1j * rng.normal(size=(5, 6))
    out = layer(planes_from(z))
    w = layer.wa.data + 1j * layer.wb.data
    b = layer.ba.data + 1j * layer.bb.data
    expected = z @ w.T + b
    np.testing.assert_allclose(out.to_complex(), expected, atol=1e-12)


def test_complex_linear_bias_optional():
    rng = np.random.default_rng(0)
    layer = ComplexLinear(3, 2, rng, bias=False, dtype=np.float64)
    assert layer.ba is None and layer.bb is None
    z = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    out = layer(planes_from(z))
    w = layer.wa.data + 1j * layer.wb.data
    np.testing.assert_allclose(out.to_complex(), z @ w.T, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 3), (3, 2)])
def test_complex_conv_matches_direct_window_sum(stride, padding):
    rng = np.random.default_rng(7)
    layer = ComplexConv1d(3, 5, 4, rng, stride=stride, padding=padding, dtype=np.float64)
    z = rng.normal(size=(2, 3, 17)) + 1j * rng.normal(size=(2, 3, 17))
    out = layer(planes_from(z)).to_complex()

    w = layer.wa.data + 1j * layer.wb.data
    b = layer.ba.data + 1j * layer.bb.data
    padded = np.pad(z, ((0, 0), (0, 0), (padding, padding)))
    positions = (17 + 2 * padding - 4) // stride + 1
    expected = np.empty((2, 5, positions), dtype=complex)
    for p in range(positions):
        patch = padded[:, :, p * stride : p * stride + 4]
        expected[:, :, p] = np.einsum("bck,ock->bo", patch, w) + b
    assert out.shape == expected.shape
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_complex_conv_rejects_channel_mismatch():
    layer = ComplexConv1d(3, 5, 4, np.random.default_rng(0))
    bad = ComplexPlanes(Tensor(np.zeros((1, 2, 16))), Tensor(np.zeros((1, 2, 16))))
    with pytest.raises(ValueError, match="input channels"):
        layer(bad)


def test_complex_linear_gradients():
    rng = np.random.default_rng(3)
    layer = ComplexLinear(4, 3, rng, dtype=np.float64)
    z = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    a0, b0 = z.real.copy(), z.imag.copy()

    def build(leaves):
        wa, wb, ba, bb, a, b = leaves
        layer.wa, layer.wb, layer.ba, layer.bb = wa, wb, ba, bb
        out = layer(ComplexPlanes(a, b))
        return (out.a * out.a + out.b * out.b).sum()

    err = check_gradients(
        build,
        [layer.wa.data, layer.wb.data, layer.ba.data, layer.bb.data, a0, b0],
    )
    assert err < 1e-6


def test_complex_conv_gradients():
    rng = np.random.default_rng(4)
    layer = ComplexConv1d(2, 3, 3, rng, stride=2, padding=1, dtype=np.float64)
    z = rng.normal(size=(2, 2, 9)) + 1j * rng.normal(size=(2, 2, 9))
    a0, b0 = z.real.copy(), z.imag.copy()

    def build(leaves):
        wa, wb, a, b = leaves
        layer.wa, layer.wb = wa, wb
        out = layer(ComplexPlanes(a, b))
        return (out.a * out.a + out.b * out.b).sum()

    err = check_gradients(build, [layer.wa.data, layer.wb.data, a0, b0])
    assert err < 1e-6


# ---------------------------------------------------------------------------
# batch norm whitening


def _whiten_oracle(a, b, eps):
    """Eigendecomposition-based whitening, independent of the layer's closed form."""
    centered = np.stack([a - a.mean(axis=0), b - b.mean(axis=0)])  # (2, B, F)
    out = np.empty_like(centered)
    for f in range(a.shape[1]):
        v = centered[:, :, f] @ centered[:, :, f].T / a.shape[0]
        v[0, 0] += eps
        v[1, 1] += eps
        vals, vecs = np.linalg.eigh(v)
        w = vecs @ np.diag(vals**-0.5) @ vecs.T
        out[:, :, f] = w @ centered[:, :, f]
    return out[0], out[1]


def test_batchnorm_whitening_matches_eigh_oracle():
    rng = np.random.default_rng(5)
    bn = ComplexBatchNorm(3, eps=1e-4, dtype=np.float64)
    # correlated planes so the off-diagonal term matters
    a = rng.normal(size=(512, 3)) * np.array([1.0, 3.0, 0.2])
    b = 0.7 * a + rng.normal(size=(512, 3))
    white = bn.normalize(ComplexPlanes(Tensor(a.copy()), Tensor(b.copy())))
    ref_a, ref_b = _whiten_oracle(a, b, bn.eps)
    np.testing.assert_allclose(white.a.data, ref_a, atol=1e-10)
    np.testing.assert_allclose(white.b.data, ref_b, atol=1e-10)


def test_batchnorm_whitened_covariance_near_identity():
    rng = np.random.default_rng(6)
    bn = ComplexBatchNorm(2, eps=1e-4, dtype=np.float64)
    a = rng.normal(size=(2048, 2)) * 2.5
    b = -0.4 * a + 0.5 * rng.normal(size=(2048, 2))
    white = bn.normalize(ComplexPlanes(Tensor(a), Tensor(b)))
    wa, wb = white.a.data, white.b.data
    for f in range(2):
        v = np.cov(np.stack([a[:, f], b[:, f]]), bias=True)
        # whitening uses V + eps*I, so the exact target is W V W, not I
        v[0, 0] += bn.eps
        v[1, 1] += bn.eps
        vals, vecs = np.linalg.eigh(v)
        w = vecs @ np.diag(vals**-0.5) @ vecs.T
        target = w @ np.cov(np.stack([a[:, f], b[:, f]]), bias=True) @ w
        got = np.cov(np.stack([wa[:, f], wb[:, f]]), bias=True)
        np.testing.assert_allclose(got, target, atol=1e-9)
        np.testing.assert_allclose(got, np.eye(2), atol=1e-3)


def test_batchnorm_channel_layout_reduces_over_batch_and_time():
    rng = np.random.default_rng(8)
    bn = ComplexBatchNorm(4, dtype=np.float64)
    a = rng.normal(size=(6, 4, 10)) * 3.0 + 1.5
    b = rng.normal(size=(6, 4, 10)) * 0.5 - 2.0
    white = bn.normalize(ComplexPlanes(Tensor(a), Tensor(b)))
    flat_a = white.a.data.transpose(1, 0, 2).reshape(4, -1)
    flat_b = white.b.data.transpose(1, 0, 2).reshape(4, -1)
    np.testing.assert_allclose(flat_a.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(flat_b.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose((flat_a * flat_a).mean(axis=1), 1.0, atol=1e-3)
    np.testing.assert_allclose((flat_b * flat_b).mean(axis=1), 1.0, atol=1e-3)
    np.testing.assert_allclose((flat_a * flat_b).mean(axis=1), 0.0, atol=1e-3)


def test_batchnorm_default_scale_gives_unit_total_power():
    rng = np.random.default_rng(9)
    bn = ComplexBatchNorm(3, dtype=np.float64)
    a = rng.normal(size=(1024, 3)) * 4.0
    b = rng.normal(size=(1024, 3))
    out = bn(ComplexPlanes(Tensor(a), Tensor(b)))
    power = (out.a.data**2 + out.b.data**2).mean(axis=0)
    np.testing.assert_allclose(power, 1.0, atol=5e-3)


def test_batchnorm_eval_uses_running_stats():
    rng = np.random.default_rng(10)
    bn = ComplexBatchNorm(2, momentum=0.5, dtype=np.float64)
    a = rng.normal(size=(256, 2)) * 2.0 + 1.0
    b = rng.normal(size=(256, 2)) - 0.5
    for _ in range(30):
        bn(ComplexPlanes(Tensor(a), Tensor(b)))
    bn.eval()
    single = ComplexPlanes(Tensor(a[:1]), Tensor(b[:1]))
    out = bn.normalize(single)  # batch of one is fine in eval mode
    ca = a[0] - bn.running_mean_a
    cb = b[0] - bn.running_mean_b
    ref = np.empty((2, 2))
    for f in range(2):
        v = np.array(
            [
                [bn.running_vrr[f] + bn.eps, bn.running_vri[f]],
                [bn.running_vri[f], bn.running_vii[f] + bn.eps],
            ]
        )
        vals, vecs = np.linalg.eigh(v)
        w = vecs @ np.diag(vals**-0.5) @ vecs.T
        ref[:, f] = w @ np.array([ca[f], cb[f]])
    np.testing.assert_allclose(out.a.data[0], ref[0], atol=1e-8)
    np.testing.assert_allclose(out.b.data[0], ref[1], atol=1e-8)


def test_batchnorm_rejects_tiny_batch_and_bad_shape():
    bn = ComplexBatchNorm(2)
    one = ComplexPlanes(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))))
    with pytest.raises(ValueError, match="batch"):
        bn(one)
    bad = ComplexPlanes(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 3))))
    with pytest.raises(ValueError, match="expected 2 features"):
        bn(bad)


def test_batchnorm_gradients():
    rng = np.random.default_rng(12)
    bn = ComplexBatchNorm(2, dtype=np.float64)
    a0 = rng.normal(size=(8, 2))
    b0 = rng.normal(size=(8, 2))

    def build(leaves):
        grr, gri, gii, ba, bb, a, b = leaves
        bn.gamma_rr, bn.gamma_ri, bn.gamma_ii = grr, gri, gii
        bn.beta_a, bn.beta_b = ba, bb
        out = bn(ComplexPlanes(a, b))
        # offsets keep the beta gradients away from the structural zero at
        # batch-mean-centered output, where FD noise would dominate
        return ((out.a + 0.3) * (out.a + 0.3) + 0.5 * (out.b - 0.2) * (out.b - 0.2)).sum()

    err = check_gradients(
        build,
        [
            bn.gamma_rr.data,
            bn.gamma_ri.data,
            bn.gamma_ii.data,
            bn.beta_a.data,
            bn.beta_b.data,
            a0,
            b0,
        ],
    )
    assert err < 1e-5


# ---------------------------------------------------------------------------
# weight init law


def test_init_magnitudes_follow_rayleigh_scale():
    rng = np.random.default_rng(13)
    fan_in, fan_out = 40, 60
    wa, wb = complex_weight_init((200, 500), fan_in, fan_out, "glorot", rng)
    sigma = 1.0 / np.sqrt(fan_in + fan_out)
    mag = np.hypot(wa, wb)
    # Rayleigh(sigma): E m = sigma sqrt(pi/2), E m^2 = 2 sigma^2
    assert abs(mag.mean() / (sigma * np.sqrt(np.pi / 2)) - 1.0) < 0.02
    assert abs((mag**2).mean() / (2 * sigma**2) - 1.0) < 0.02


def test_init_he_criterion_scale():
    rng = np.random.default_rng(14)
    wa, wb = complex_weight_init((200, 500), 50, 125, "he", rng)
    var = (wa**2 + wb**2).mean()
    assert abs(var / (2.0 / 50.0) - 1.0) < 0.05  # 2 sigma^2 with sigma^2 = 1/fan_in


def test_init_phases_uniform():
    from scipy import stats

    rng = np.random.default_rng(15)
    wa, wb = complex_weight_init((100, 1000), 30, 30, "glorot", rng)
    phases = np.arctan2(wb, wa).ravel()
    stat = stats.kstest(phases, "uniform", args=(-np.pi, 2 * np.pi)).statistic
    assert stat < 0.01


def test_init_rejects_unknown_criterion():
    with pytest.raises(ValueError, match="criterion"):
        complex_weight_init((2, 2), 2, 2, "lecun", np.random.default_rng(0))


# ---------------------------------------------------------------------------
# activations, pooling, combiners


def test_crelu_acts_per_plane():
    z = np.array([[1.0 - 2.0j, -3.0 + 4.0j, -1.0 - 1.0j, 2.0 + 2.0j]])
    out = crelu(planes_from(z)).to_complex()
    np.testing.assert_allclose(out, [[1.0, 4.0j, 0.0, 2.0 + 2.0j]])


def test_zrelu_keeps_first_quadrant_only():
    z = np.array([[1.0 + 2.0j, -1.0 + 2.0j, 1.0 - 2.0j, -1.0 - 2.0j, 0.0 + 1.0j]])
    out = zrelu(planes_from(z)).to_complex()
    np.testing.assert_allclose(out, [[1.0 + 2.0j, 0.0, 0.0, 0.0, 1.0j]])


def test_pool1d_avg_matches_reshape_mean():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(3, 2, 24))
    out = pool1d(Tensor(x), "avg", POOL_WINDOW)
    np.testing.assert_allclose(out.data, x.reshape(3, 2, 3, 8).mean(axis=-1), atol=1e-12)


def test_pool1d_max_matches_reshape_max():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(2, 3, 20))
    out = pool1d(Tensor(x), "max", 5)
    np.testing.assert_allclose(out.data, x.reshape(2, 3, 4, 5).max(axis=-1), atol=1e-12)


def test_pool1d_overlapping_stride():
    x = np.arange(8.0).reshape(1, 1, 8)
    out = pool1d(Tensor(x), "avg", 4, stride=2)
    np.testing.assert_allclose(out.data, [[[1.5, 3.5, 5.5]]])


def test_pool1d_window_exceeds_length():
    with pytest.raises(ValueError, match="exceeds"):
        pool1d(Tensor(np.zeros((1, 1, 4))), "avg", 8)


def test_cpool1d_pools_both_planes():
    rng = np.random.default_rng(18)
    z = rng.normal(size=(2, 2, 16)) + 1j * rng.normal(size=(2, 2, 16))
    out = cpool1d(planes_from(z), "avg", 4).to_complex()
    np.testing.assert_allclose(out, z.reshape(2, 2, 4, 4).mean(axis=-1), atol=1e-12)


def test_combiner_channel_a_only():
    z = np.array([[1.0 + 5.0j, 2.0 - 3.0j]])
    out = ChannelCombiner("channel_a_only")(planes_from(z))
    np.testing.assert_allclose(out.data, [[1.0, 2.0]])


def test_combiner_learned_sum_starts_as_plane_sum():
    z = np.array([[1.0 + 5.0j, 2.0 - 3.0j]])
    out = ChannelCombiner("learned_sum")(planes_from(z))
    np.testing.assert_allclose(out.data, [[6.0, -1.0]])


def test_combiner_learned_sum_gains_receive_gradient():
    comb = ChannelCombiner("learned_sum", dtype=np.float64)
    z = np.array([[2.0 + 1.0j, -1.0 + 3.0j]])
    out = comb(planes_from(z))
    out.sum().backward()
    np.testing.assert_allclose(comb.ga.grad, 1.0)  # sum of plane A
    np.testing.assert_allclose(comb.gb.grad, 4.0)  # sum of plane B


def test_combiner_conv_join_starts_as_mean():
    z = np.array([[4.0 + 2.0j]])
    out = ChannelCombiner("conv_join")(planes_from(z))
    np.testing.assert_allclose(out.data, [[3.0]])


def test_combiner_rejects_unknown_mode():
    with pytest.raises(ValueError, match="combiner"):
        ChannelCombiner("average")


# ---------------------------------------------------------------------------
# real layers


def test_real_linear_matches_numpy():
    rng = np.random.default_rng(19)
    layer = Linear(5, 3, rng, dtype=np.float64)
    x = rng.normal(size=(4, 5))
    out = layer(Tensor(x))
    np.testing.assert_allclose(out.data, x @ layer.w.data.T + layer.b.data, atol=1e-12)


def test_real_conv_matches_scipy_correlate():
    from scipy import signal as sps

    rng = np.random.default_rng(20)
    layer = Conv1d(2, 3, 5, rng, stride=1, padding=2, dtype=np.float64)
    x = rng.normal(size=(1, 2, 30))
    out = layer(Tensor(x)).data
    padded = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    for o in range(3):
        acc = np.zeros(30)
        for c in range(2):
            acc += sps.correlate(padded[0, c], layer.w.data[o, c], mode="valid")
        np.testing.assert_allclose(out[0, o], acc + layer.b.data[o], atol=1e-12)
