"""The 23-layer convolutional auto-encoder and its forward/backward pass."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor_core as tc
from .exceptions import ShapeError, StateError, ValidationError

__all__ = [
    "LayerSpec",
    "Model",
    "table1_specs",
    "build_model",
    "param_shapes",
    "spec_hash",
    "INPUT_HW",
    "OUTPUT_HW",
]

INPUT_HW = (128, 128)
OUTPUT_HW = (101, 101)

KINDS = ("conv", "maxpool", "upsample", "downsample", "output")
ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel: tuple | None = None
    target_hw: tuple | None = None
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.kind == "conv" and (not self.filters or self.kernel is None):
            raise ValidationError("conv layers need filters and kernel")
        if self.kind in ("upsample", "downsample") and self.target_hw is None:
            raise ValidationError(f"{self.kind} layers need target_hw")


def _conv(filters, activation="relu"):
    return LayerSpec("conv", filters=filters, kernel=(3, 3), activation=activation)


def table1_specs(faithful_table1: bool = False) -> list:
    """Layers 1-23 of the network, one entry per row.

    By default layer 22 emits raw logits. ``faithful_table1=True`` restores
    the ReLU listed for that row, which forces every output probability to
    be at least 0.5.
    """
    pool = LayerSpec("maxpool")
    up = lambda s: LayerSpec("upsample", target_hw=(s, s))  # noqa: E731
    return [
        _conv(8), pool, _conv(8), pool, _conv(16), pool, _conv(16), pool, _conv(8), pool,
        up(8), _conv(8), up(16), _conv(16), up(32), _conv(16), up(64), _conv(8),
        up(128), _conv(8),
        LayerSpec("downsample", target_hw=OUTPUT_HW),
        _conv(1, "relu" if faithful_table1 else "linear"),
        LayerSpec("output", activation="sigmoid"),
    ]


def spec_hash(specs, input_hw=INPUT_HW, in_channels=1) -> bytes:
    """SHA-256 over a canonical JSON rendering of the architecture."""
    doc = {
        "input": [in_channels, *input_hw],
        "layers": [
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(s).items()}
            for s in specs
        ],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


def param_shapes(specs, in_channels=1):
    """``(weight_shape, bias_shape)`` per conv layer, derived from the spec list."""
    shapes, c = [], in_channels
    for s in specs:
        if s.kind == "conv":
            shapes.append(((s.filters, c, *s.kernel), (s.filters,)))
            c = s.filters
    return shapes


class Model:
    """Instantiated layer list with one :class:`~saltseg.tensor_core.ConvKernel` per conv layer.

    ``forward(..., mode="train")`` keeps the intermediate tensors needed by
    :meth:`backward`; the cache is consumed by the backward call.
    """

    def __init__(self, specs, params, input_hw=INPUT_HW, in_channels=1):
        self.specs = list(specs)
        self.params = list(params)
        self.input_hw = tuple(input_hw)
        self.in_channels = in_channels
        self._cache = None
        expected = self.param_shapes()
        got = [(p.weights.shape, p.bias.shape) for p in self.params]
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match architecture {expected}")

    # -- structure -------------------------------------------------------
    def param_shapes(self):
        return param_shapes(self.specs, self.in_channels)

    def shape_trace(self):
        """``(layer_number, kind, (C, H, W))`` after each layer for one input."""
        c, (h, w) = self.in_channels, self.input_hw
        trace = []
        for i, s in enumerate(self.specs, start=1):
            if s.kind == "conv":
                c = s.filters
            elif s.kind == "maxpool":
                if h % 2 or w % 2:
                    raise ShapeError(f"layer {i}: cannot pool odd size {h}x{w}")
                h, w = h // 2, w // 2
            elif s.kind in ("upsample", "downsample"):
                h, w = s.target_hw
            trace.append((i, s.kind, (c, h, w)))
        return trace

    @property
    def output_hw(self):
        return self.shape_trace()[-1][2][1:]

    @property
    def spec_hash(self) -> bytes:
        return spec_hash(self.specs, self.input_hw, self.in_channels)

    def flat_params(self):
        """Weights and biases interleaved: ``[w1, b1, w2, b2, ...]``."""
        out = []
        for p in self.params:
            out.extend((p.weights, p.bias))
        return out

    def set_flat_params(self, flat):
        if len(flat) != 2 * len(self.params):
            raise ShapeError("flat parameter list has the wrong length")
        self.params = [tc.ConvKernel(flat[2 * i], flat[2 * i + 1]) for i in range(len(self.params))]

    def copy(self) -> "Model":
        return Model(self.specs, [p.copy() for p in self.params], self.input_hw, self.in_channels)

    # -- execution -------------------------------------------------------
    def _plan(self):
        """Execution steps ``(op, spec, param_index)``.

        A 2x upsample directly followed by a 3x3 conv runs as one fused
        ``upconv`` step; the arithmetic is the same, the upsampled tensor is
        never built.
        """
        steps, k = [], 0
        trace = self.shape_trace()
        i = 0
        while i < len(self.specs):
            s = self.specs[i]
            if s.kind == "conv":
                steps.append(("conv", s, k))
                k += 1
            elif s.kind == "upsample" and i + 1 < len(self.specs):
                prev_hw = trace[i - 1][2][1:] if i else self.input_hw
                nxt = self.specs[i + 1]
                if (nxt.kind == "conv" and tuple(nxt.kernel) == (3, 3)
                        and tuple(s.target_hw) == (2 * prev_hw[0], 2 * prev_hw[1])):
                    steps.append(("upconv", nxt, k))
                    k += 1
                    i += 2
                    continue
                steps.append(("resize", s, None))
            elif s.kind in ("upsample", "downsample"):
                steps.append(("resize", s, None))
            elif s.kind == "maxpool":
                steps.append(("maxpool", s, None))
            i += 1
        return steps

    def forward(self, x, mode: str = "infer"):
        """Run every layer up to, not including, the sigmoid output; returns logits."""
        if mode not in ("train", "infer"):
            raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        want = (self.in_channels, *self.input_hw)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"model expects input of shape (N, {', '.join(map(str, want))}), got {x.shape}")
        cache = []
        for op, s, k in self._plan():
            if op in ("conv", "upconv"):
                fwd = tc.conv2d_forward if op == "conv" else tc.upsample2x_conv2d_forward
                y = fwd(x, self.params[k])
                if s.activation == "relu":
                    y = tc.relu(y)
                elif s.activation == "sigmoid":
                    y = tc.sigmoid(y)
                cache.append((x, y))
            elif op == "maxpool":
                y, idx = tc.maxpool2x2_forward(x)
                cache.append(idx)
            else:
                y = tc.resize_nearest_forward(x, *s.target_hw)
                cache.append(x.shape)
            x = y
        self._cache = cache if mode == "train" else None
        return x

    def backward(self, grad_logits):
        """Reverse-mode gradients for every conv layer, in parameter order.

        Returns a list of ``(grad_weights, grad_bias)`` pairs.
        """
        if self._cache is None:
            raise StateError("backward() needs a preceding forward(..., mode='train')")
        cache, self._cache = self._cache, None
        g = np.asarray(grad_logits, dtype=np.float64)
        grads = [None] * len(self.params)
        for (op, s, k), entry in zip(reversed(self._plan()), reversed(cache)):
            if op in ("conv", "upconv"):
                x, y = entry
                if s.activation == "relu":
                    g = tc.relu_backward(y, g)
                elif s.activation == "sigmoid":
                    g = g * y * (1.0 - y)
                bwd = tc.conv2d_backward if op == "conv" else tc.upsample2x_conv2d_backward
                # nothing upstream of the first layer needs its input gradient
                g, gw, gb = bwd(x, self.params[k], g, need_input_grad=k > 0)
                grads[k] = (gw, gb)
            elif op == "maxpool":
                g = tc.maxpool2x2_backward(entry, g)
            else:
                g = tc.resize_nearest_backward(entry, g.shape, g)
        return grads


def build_model(seed: int = 0, faithful_table1: bool = False, specs=None,
                input_hw=INPUT_HW, in_channels=1) -> Model:
    """Instantiate the network with seeded Glorot-uniform weights and zero biases.

    Each conv weight is drawn from ``U(-a, a)`` with
    ``a = sqrt(6 / (fan_in + fan_out))``, ``fan_in = C*kh*kw`` and
    ``fan_out = O*kh*kw``.
    """
    specs = table1_specs(faithful_table1) if specs is None else list(specs)
    rng = np.random.default_rng(seed)
    params = []
    for wshape, bshape in param_shapes(specs, in_channels):
        o, c, kh, kw = wshape
        limit = np.sqrt(6.0 / (c * kh * kw + o * kh * kw))
        params.append(tc.ConvKernel(rng.uniform(-limit, limit, size=wshape), np.zeros(bshape)))
    return Model(specs, params, input_hw, in_channels)
