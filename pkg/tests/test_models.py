"""Architecture construction, analytic parameter counts, forward contracts."""

import numpy as np
import pytest

from iqfp.models import ModelSpec, build_model, decimated_spec, parameter_count


def little_spec(arch, **kw):
    defaults = {
        "rdcn": dict(input_len=48, hidden=8, sequencer_step=6),
        "cdcn": dict(input_len=48, conv_channels=4, dense=16),
        "cnn": dict(input_len=48, conv_channels=4, dense=16),
        "ann": dict(input_len=48),
    }[arch]
    defaults.update(kw)
    return ModelSpec(arch, class_count=3, **defaults)


ARCHS = ("rdcn", "cdcn", "ann", "cnn")


# ---------------------------------------------------------------------------
# parameter counting


@pytest.mark.parametrize("arch", ARCHS)
def test_parameter_count_matches_built_model(arch):
    spec = little_spec(arch)
    model = build_model(spec, seed=0)
    actual = sum(int(np.prod(p.data.shape)) for p in model.parameters())
    assert parameter_count(spec) == actual


@pytest.mark.parametrize(
    "arch,kw",
    [
        ("rdcn", dict(input_len=48, hidden=8, sequencer_step=6, bidirectional=True)),
        ("rdcn", dict(input_len=48, hidden=8, sequencer_step=6, lstm_layers=2)),
        ("cdcn", dict(input_len=48, conv_channels=4, dense=16, combiner="conv_join")),
        ("cdcn", dict(input_len=48, conv_channels=4, dense=16, combiner="channel_a_only")),
        ("cnn", dict(input_len=64, conv_channels=4, dense=16, stride=2, padding=4)),
    ],
)
def test_parameter_count_matches_variants(arch, kw):
    spec = ModelSpec(arch, class_count=4, **kw)
    model = build_model(spec, seed=1)
    actual = sum(int(np.prod(p.data.shape)) for p in model.parameters())
    assert parameter_count(spec) == actual


def test_reference_configuration_sizes():
    """Full-length recurrent model lands near 92.3M learnables; halving the
    window (factor-2 decimation, step scaled to match) lands near 30M."""
    full = ModelSpec("rdcn", class_count=100, input_len=6400, hidden=1024, sequencer_step=100)
    assert parameter_count(full) == pytest.approx(92.3e6, rel=0.15)
    halved = decimated_spec(full, 2)
    assert halved.input_len == 3200
    assert halved.sequencer_step == 50
    assert parameter_count(halved) == pytest.approx(30e6, rel=0.15)


def test_decimated_spec_validation():
    spec = ModelSpec("rdcn", class_count=10, input_len=6400, hidden=64, sequencer_step=100)
    with pytest.raises(ValueError, match="divisible"):
        decimated_spec(spec, 3)
    with pytest.raises(ValueError, match=">= 1"):
        decimated_spec(spec, 0)


# ---------------------------------------------------------------------------
# spec validation


def test_spec_validation():
    with pytest.raises(ValueError, match="arch"):
        ModelSpec("transformer", class_count=3, input_len=48)
    with pytest.raises(ValueError, match="class_count"):
        ModelSpec("ann", class_count=1, input_len=48)
    with pytest.raises(ValueError, match="too short for the convolution"):
        ModelSpec("cnn", class_count=3, input_len=16, kernel=32)
    with pytest.raises(ValueError, match="too short for the pooling"):
        ModelSpec("cnn", class_count=3, input_len=36, kernel=32)  # conv 7 < pool 8
    with pytest.raises(ValueError, match="sequencer_step"):
        ModelSpec("rdcn", class_count=3, input_len=48, sequencer_step=49)
    with pytest.raises(ValueError, match="combiner"):
        ModelSpec("cdcn", class_count=3, input_len=48, combiner="max")


# ---------------------------------------------------------------------------
# forward contracts


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_produces_logits(arch):
    rng = np.random.default_rng(2)
    model = build_model(little_spec(arch), seed=3)
    x = (rng.normal(size=(5, 48)) + 1j * rng.normal(size=(5, 48))).astype(np.complex64)
    logits = model.forward(x)
    assert logits.shape == (5, 3)
    assert np.isfinite(logits.data).all()


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_rejects_bad_input(arch):
    model = build_model(little_spec(arch), seed=0)
    with pytest.raises(ValueError, match="does not match spec input_len"):
        model.forward(np.zeros((2, 47), dtype=np.complex64))
    with pytest.raises(ValueError, match="batch, length"):
        model.forward(np.zeros(48, dtype=np.complex64))


def test_build_model_seed_determinism():
    spec = little_spec("cdcn")
    a = build_model(spec, seed=5)
    b = build_model(spec, seed=5)
    c = build_model(spec, seed=6)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert any(
        not np.array_equal(pa.data, pc.data)
        for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_recurrent_state_threads_across_calls():
    rng = np.random.default_rng(4)
    model = build_model(little_spec("rdcn"), seed=7)
    model.eval()
    x = (rng.normal(size=(2, 48)) + 1j * rng.normal(size=(2, 48))).astype(np.complex64)
    state = model.initial_state(2)
    logits1, state = model.forward_stateful(x, state)
    logits2, _ = model.forward_stateful(x, state)
    # same input, different carried context -> different logits
    assert np.abs(logits1.data - logits2.data).max() > 1e-6


def test_stateless_architectures_return_state_unchanged():
    for arch in ("cdcn", "ann", "cnn"):
        model = build_model(little_spec(arch), seed=0)
        assert model.initial_state(4) is None
        x = np.zeros((4, 48), dtype=np.complex64)
        x += 1  # batch norm needs nonzero variance across batch? keep simple constant
        x[0] *= 2
        _, state = model.forward_stateful(x, "sentinel")
        assert state == "sentinel"


def test_eval_mode_is_deterministic_for_batchnorm_models():
    rng = np.random.default_rng(8)
    x = (rng.normal(size=(6, 48)) + 1j * rng.normal(size=(6, 48))).astype(np.complex64)
    model = build_model(little_spec("cdcn"), seed=9)
    model.forward(x)  # one training-mode pass seeds the running stats
    model.eval()
    first = model.forward(x[:3]).data
    second = model.forward(x[:3]).data
    np.testing.assert_array_equal(first, second)
    # batch composition must not leak into eval-mode outputs
    subset = model.forward(x[:1]).data
    np.testing.assert_allclose(subset, first[:1], atol=1e-6)
