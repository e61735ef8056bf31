"""Complex-valued network layers on two real planes, plus real baselines.

A complex activation w = x + jy is carried as a pair of real tensors
(plane "A" holds the real/mixed-real part, plane "B" the imaginary one).
A complex weight W = A + jB then mixes planes as

    out_A = A.x - B.y        out_B = B.x + A.y

which is ordinary complex multiplication written in real arithmetic.
Linear and convolutional layers share this mixing rule; batch
normalization whitens each feature's (A, B) pair by the inverse square
root of its 2x2 covariance (Tikhonov-stabilized as V + eps*I) using the
closed form for symmetric positive-definite matrices.

Everything differentiable is composed from autodiff primitives, so
backward passes need no per-layer derivation and are validated
end-to-end by finite differences in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, concatenate, maximum, no_grad, unfold1d

__all__ = [
    "Parameter",
    "Module",
    "ComplexPlanes",
    "complex_weight_init",
    "real_weight_init",
    "ComplexLinear",
    "ComplexConv1d",
    "ComplexBatchNorm",
    "crelu",
    "zrelu",
    "pool1d",
    "cpool1d",
    "Linear",
    "Conv1d",
    "ChannelCombiner",
    "COMBINER_MODES",
    "POOL_WINDOW",
]

# Width (and stride) of the single average-pooling stage in the conv classifiers.
POOL_WINDOW = 8


class Parameter(Tensor):
    """A trainable leaf tensor. `decay=True` marks weight-decay eligibility."""

    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.decay = decay


class Module:
    """Minimal container: recursive parameter/buffer discovery and train/eval mode."""

    buffer_attrs: tuple = ()

    def __init__(self):
        self.training = True

    def modules(self):
        yield self
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_parameters(self):
        seen = set()
        for prefix, module in self._named_modules():
            for name, value in vars(module).items():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    yield f"{prefix}{name}", value

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._named_modules(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self):
        for prefix, module in self._named_modules():
            for attr in module.buffer_attrs:
                yield f"{prefix}{attr}", getattr(module, attr)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self):
        for m in self.modules():
            m.training = True
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
        return self

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


class ComplexPlanes:
    """The two real planes (A, B) of a complex-valued activation."""

    __slots__ = ("a", "b")

    def __init__(self, a: Tensor, b: Tensor):
        if a.shape != b.shape:
            raise ValueError(f"plane shapes differ: {a.shape} vs {b.shape}")
        self.a = a
        self.b = b

    @property
    def shape(self):
        return self.a.shape

    @classmethod
    def from_complex(cls, values: np.ndarray, dtype=np.float32) -> "ComplexPlanes":
        values = np.asarray(values)
        return cls(
            Tensor(np.ascontiguousarray(values.real, dtype=dtype)),
            Tensor(np.ascontiguousarray(values.imag, dtype=dtype)),
        )

    def to_complex(self) -> np.ndarray:
        return self.a.data + 1j * self.b.data

    def stacked(self) -> Tensor:
        """Single tensor with a leading plane axis of size 2."""
        flat_a = self.a.reshape((1,) + self.a.shape)
        flat_b = self.b.reshape((1,) + self.b.shape)
        return concatenate([flat_a, flat_b], axis=0)


def complex_weight_init(shape, fan_in: int, fan_out: int, criterion: str, rng) -> tuple:
    """Complex weights with Rayleigh magnitude and uniform phase.

    The magnitude scale sigma is set from the variance criterion
    Var(W) = 2*sigma^2: glorot gives Var = 2/(fan_in+fan_out), he gives
    Var = 2/fan_in. Phases are uniform on [-pi, pi).
    """
    if criterion == "glorot":
        sigma = 1.0 / math.sqrt(fan_in + fan_out)
    elif criterion == "he":
        sigma = 1.0 / math.sqrt(fan_in)
    else:
        raise ValueError(f"unknown init criterion: {criterion!r}")
    magnitude = rng.rayleigh(scale=sigma, size=shape)
    phase = rng.uniform(-math.pi, math.pi, size=shape)
    return magnitude * np.cos(phase), magnitude * np.sin(phase)


def real_weight_init(shape, fan_in: int, fan_out: int, criterion: str, rng) -> np.ndarray:
    if criterion == "glorot":
        std = math.sqrt(2.0 / (fan_in + fan_out))
    elif criterion == "he":
        std = math.sqrt(2.0 / fan_in)
    else:
        raise ValueError(f"unknown init criterion: {criterion!r}")
    return rng.normal(0.0, std, size=shape)


class ComplexLinear(Module):
    """Fully connected complex layer: out = W h + bias on plane pairs."""

    def __init__(self, in_features, out_features, rng, bias=True, criterion="glorot",
                 dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        wa, wb = complex_weight_init(
            (out_features, in_features), in_features, out_features, criterion, rng
        )
        self.wa = Parameter(wa.astype(dtype), decay=True)
        self.wb = Parameter(wb.astype(dtype), decay=True)
        self.ba = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None
        self.bb = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: ComplexPlanes) -> ComplexPlanes:
        if x.shape[-1] != self.in_features:
            raise ValueError(
                f"complex linear expects {self.in_features} input features, got {x.shape[-1]}"
            )
        out_a = x.a @ self.wa.T - x.b @ self.wb.T
        out_b = x.a @ self.wb.T + x.b @ self.wa.T
        if self.ba is not None:
            out_a = out_a + self.ba
            out_b = out_b + self.bb
        return ComplexPlanes(out_a, out_b)

    __call__ = forward


class ComplexConv1d(Module):
    """1-D complex convolution: channel mixing applied per sliding window."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0,
                 bias=True, criterion="glorot", dtype=np.float32):
        super().__init__()
        if kernel_size < 1 or stride < 1:
            raise ValueError("kernel_size and stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        wa, wb = complex_weight_init(
            (out_channels, in_channels, kernel_size), fan_in, fan_out, criterion, rng
        )
        self.wa = Parameter(wa.astype(dtype), decay=True)
        self.wb = Parameter(wb.astype(dtype), decay=True)
        self.ba = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.bb = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x: ComplexPlanes) -> ComplexPlanes:
        batch, channels, length = x.shape
        if channels != self.in_channels:
            raise ValueError(
                f"complex conv expects {self.in_channels} input channels, got {channels}"
            )
        positions = self.out_length(length)
        cols_a = unfold1d(x.a, self.kernel_size, self.stride, self.padding)
        cols_b = unfold1d(x.b, self.kernel_size, self.stride, self.padding)
        flat_a = cols_a.reshape(batch * positions, -1)
        flat_b = cols_b.reshape(batch * positions, -1)
        wa = self.wa.reshape(self.out_channels, -1).T
        wb = self.wb.reshape(self.out_channels, -1).T
        out_a = flat_a @ wa - flat_b @ wb
        out_b = flat_a @ wb + flat_b @ wa
        out_a = out_a.reshape(batch, positions, self.out_channels).transpose(0, 2, 1)
        out_b = out_b.reshape(batch, positions, self.out_channels).transpose(0, 2, 1)
        if self.ba is not None:
            out_a = out_a + self.ba.reshape(self.out_channels, 1)
            out_b = out_b + self.bb.reshape(self.out_channels, 1)
        return ComplexPlanes(out_a, out_b)

    __call__ = forward


def _inv_sqrt_2x2(vrr, vri, vii):
    """Closed-form inverse square root of the symmetric PD matrix [[vrr,vri],[vri,vii]].

    With s = sqrt(det) and t = sqrt(trace + 2 s):
    M^(-1/2) = [[vii + s, -vri], [-vri, vrr + s]] / (s t).
    Works elementwise on tensors or arrays.
    """
    delta = vrr * vii - vri * vri
    s = delta.sqrt() if isinstance(delta, Tensor) else np.sqrt(delta)
    trace = vrr + vii + 2.0 * s
    t = trace.sqrt() if isinstance(trace, Tensor) else np.sqrt(trace)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, -(vri * inv), (vrr + s) * inv


class ComplexBatchNorm(Module):
    """Whitens each feature's (A, B) pair, then applies a learned 2x2 scale and shift.

    Training mode whitens with the batch covariance plus eps*I; a running
    mean/covariance (momentum-updated) drives evaluation mode. The learned
    scale gamma is symmetric 2x2 per feature, initialized to I/sqrt(2) so the
    whitened output starts at overall unit variance; beta is a complex shift.

    Accepts feature layout (B, F) or channel layout (B, C, L); statistics
    reduce over every axis except the feature one.
    """

    buffer_attrs = (
        "running_mean_a",
        "running_mean_b",
        "running_vrr",
        "running_vri",
        "running_vii",
    )

    def __init__(self, num_features, eps=1e-4, momentum=0.1, dtype=np.float32):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        root_half = 1.0 / math.sqrt(2.0)
        self.gamma_rr = Parameter(np.full(num_features, root_half, dtype=dtype))
        self.gamma_ri = Parameter(np.zeros(num_features, dtype=dtype))
        self.gamma_ii = Parameter(np.full(num_features, root_half, dtype=dtype))
        self.beta_a = Parameter(np.zeros(num_features, dtype=dtype))
        self.beta_b = Parameter(np.zeros(num_features, dtype=dtype))
        self.running_mean_a = np.zeros(num_features, dtype=dtype)
        self.running_mean_b = np.zeros(num_features, dtype=dtype)
        self.running_vrr = np.full(num_features, root_half, dtype=dtype)
        self.running_vri = np.zeros(num_features, dtype=dtype)
        self.running_vii = np.full(num_features, root_half, dtype=dtype)

    def _layout(self, x: ComplexPlanes):
        ndim = x.a.ndim
        if ndim == 2:
            if x.shape[1] != self.num_features:
                raise ValueError(f"expected {self.num_features} features, got {x.shape[1]}")
            return (0,), (self.num_features,)
        if ndim == 3:
            if x.shape[1] != self.num_features:
                raise ValueError(f"expected {self.num_features} channels, got {x.shape[1]}")
            return (0, 2), (self.num_features, 1)
        raise ValueError(f"unsupported input rank {ndim}; expected (B, F) or (B, C, L)")

    def normalize(self, x: ComplexPlanes) -> ComplexPlanes:
        """The whitened intermediate, before the learned scale/shift."""
        axes, param_shape = self._layout(x)
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("insufficient batch for covariance (need batch >= 2)")
            mean_a = x.a.mean(axis=axes, keepdims=True)
            mean_b = x.b.mean(axis=axes, keepdims=True)
            centered_a = x.a - mean_a
            centered_b = x.b - mean_b
            vrr = (centered_a * centered_a).mean(axis=axes, keepdims=True)
            vri = (centered_a * centered_b).mean(axis=axes, keepdims=True)
            vii = (centered_b * centered_b).mean(axis=axes, keepdims=True)
            self._update_running(mean_a, mean_b, vrr, vri, vii)
            wrr, wri, wii = _inv_sqrt_2x2(vrr + self.eps, vri, vii + self.eps)
        else:
            centered_a = x.a - Tensor(self.running_mean_a.reshape(param_shape))
            centered_b = x.b - Tensor(self.running_mean_b.reshape(param_shape))
            wrr, wri, wii = _inv_sqrt_2x2(
                Tensor(self.running_vrr.reshape(param_shape)) + self.eps,
                Tensor(self.running_vri.reshape(param_shape)),
                Tensor(self.running_vii.reshape(param_shape)) + self.eps,
            )
        out_a = wrr * centered_a + wri * centered_b
        out_b = wri * centered_a + wii * centered_b
        return ComplexPlanes(out_a, out_b)

    def _update_running(self, mean_a, mean_b, vrr, vri, vii):
        with no_grad():
            m = self.momentum
            for buf, stat in (
                ("running_mean_a", mean_a),
                ("running_mean_b", mean_b),
                ("running_vrr", vrr),
                ("running_vri", vri),
                ("running_vii", vii),
            ):
                value = stat.data.reshape(self.num_features)
                current = getattr(self, buf)
                setattr(self, buf, ((1.0 - m) * current + m * value).astype(current.dtype))

    def forward(self, x: ComplexPlanes) -> ComplexPlanes:
        _, param_shape = self._layout(x)
        white = self.normalize(x)
        g_rr = self.gamma_rr.reshape(param_shape)
        g_ri = self.gamma_ri.reshape(param_shape)
        g_ii = self.gamma_ii.reshape(param_shape)
        out_a = g_rr * white.a + g_ri * white.b + self.beta_a.reshape(param_shape)
        out_b = g_ri * white.a + g_ii * white.b + self.beta_b.reshape(param_shape)
        return ComplexPlanes(out_a, out_b)

    __call__ = forward


def crelu(x: ComplexPlanes) -> ComplexPlanes:
    """ReLU applied independently to each plane."""
    return ComplexPlanes(x.a.relu(), x.b.relu())


def zrelu(x: ComplexPlanes) -> ComplexPlanes:
    """Pass z through only where both planes are >= 0 (first quadrant), else 0."""
    mask = (x.a.data >= 0) & (x.b.data >= 0)
    return ComplexPlanes(x.a * mask, x.b * mask)


def pool1d(x: Tensor, kind: str, window: int, stride: int | None = None) -> Tensor:
    """Sliding-window avg/max pooling over the last axis of (B, C, L)."""
    if stride is None:
        stride = window
    length = x.shape[-1]
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if window > length:
        raise ValueError(f"pool window {window} exceeds length {length}")
    positions = (length - window) // stride + 1
    lanes = [
        x[..., k : k + (positions - 1) * stride + 1 : stride] for k in range(window)
    ]
    if kind == "avg":
        total = lanes[0]
        for lane in lanes[1:]:
            total = total + lane
        return total * (1.0 / window)
    if kind == "max":
        best = lanes[0]
        for lane in lanes[1:]:
            best = maximum(best, lane)
        return best
    raise ValueError(f"unknown pooling kind: {kind!r}")


def cpool1d(x: ComplexPlanes, kind: str, window: int, stride: int | None = None) -> ComplexPlanes:
    return ComplexPlanes(pool1d(x.a, kind, window, stride), pool1d(x.b, kind, window, stride))


class Linear(Module):
    """Real fully connected layer."""

    def __init__(self, in_features, out_features, rng, bias=True, criterion="he",
                 dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        w = real_weight_init((out_features, in_features), in_features, out_features,
                             criterion, rng)
        self.w = Parameter(w.astype(dtype), decay=True)
        self.b = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ValueError(f"linear expects {self.in_features} features, got {x.shape[-1]}")
        out = x @ self.w.T
        if self.b is not None:
            out = out + self.b
        return out

    __call__ = forward


class Conv1d(Module):
    """Real 1-D convolution over (B, C, L)."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0,
                 bias=True, criterion="he", dtype=np.float32):
        super().__init__()
        if kernel_size < 1 or stride < 1:
            raise ValueError("kernel_size and stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        w = real_weight_init((out_channels, in_channels, kernel_size), fan_in, fan_out,
                             criterion, rng)
        self.w = Parameter(w.astype(dtype), decay=True)
        self.b = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        batch, channels, length = x.shape
        if channels != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} input channels, got {channels}")
        positions = self.out_length(length)
        cols = unfold1d(x, self.kernel_size, self.stride, self.padding)
        flat = cols.reshape(batch * positions, -1)
        out = flat @ self.w.reshape(self.out_channels, -1).T
        out = out.reshape(batch, positions, self.out_channels).transpose(0, 2, 1)
        if self.b is not None:
            out = out + self.b.reshape(self.out_channels, 1)
        return out

    __call__ = forward


COMBINER_MODES = ("channel_a_only", "learned_sum", "conv_join")


class ChannelCombiner(Module):
    """Collapses the (A, B) plane pair into one real feature tensor.

    channel_a_only: keep plane A.
    learned_sum:    G_a * A + G_b * B with learned scalars initialized to 1.
    conv_join:      1x1 convolution over the stacked pair (two learned taps
                    plus bias), shape-preserving.
    """

    def __init__(self, mode: str, dtype=np.float32):
        super().__init__()
        if mode not in COMBINER_MODES:
            raise ValueError(f"unknown combiner mode: {mode!r}")
        self.mode = mode
        if mode == "learned_sum":
            self.ga = Parameter(np.ones((), dtype=dtype))
            self.gb = Parameter(np.ones((), dtype=dtype))
        elif mode == "conv_join":
            self.w = Parameter(np.full(2, 0.5, dtype=dtype), decay=True)
            self.b = Parameter(np.zeros((), dtype=dtype))

    def forward(self, x: ComplexPlanes) -> Tensor:
        if self.mode == "channel_a_only":
            return x.a
        if self.mode == "learned_sum":
            return self.ga * x.a + self.gb * x.b
        return self.w[0] * x.a + self.w[1] * x.b + self.b

    __call__ = forward
