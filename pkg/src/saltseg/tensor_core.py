"""Low-level differentiable kernels on dense float64 arrays.

Tensors are plain ``numpy.ndarray`` objects in NCHW layout. Every forward
kernel has a matching ``*_backward`` that returns exact analytic gradients.
All functions are pure: inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "ConvKernel",
    "PoolIndices",
    "conv2d_ref",
    "conv2d_forward",
    "conv2d_backward",
    "upsample2x_conv2d_forward",
    "upsample2x_conv2d_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "resize_nearest_forward",
    "resize_nearest_backward",
    "nearest_source_index",
]

# Elements per im2col block; sized to stay in cache, which matters more than
# GEMM size for these narrow layers.
_COLS_BUDGET = 1 << 16

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


@dataclass
class ConvKernel:
    """Weights ``(out_channels, in_channels, k_h, k_w)`` plus a bias per output channel."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel weights must be rank 4, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.bias.copy())


@dataclass
class PoolIndices:
    """Argmax bookkeeping for one 2x2 max-pool call.

    ``source_index`` has the pooled output's shape and holds, per output
    element, the flat offset ``row * W + col`` of the winning pixel inside
    its ``H x W`` input plane.
    """

    source_index: np.ndarray
    input_shape: tuple


def _check_finite_rank(x, rank, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != rank:
        raise ShapeError(f"{name} must be rank {rank}, got shape {x.shape}")
    if 0 in x.shape:
        raise ShapeError(f"{name} has a zero-sized dimension: {x.shape}")
    return x


def conv2d_ref(f, g):
    """Direct-summation 2-D convolution (flipped kernel), cropped to ``f``'s size.

    ``full(m, n) = sum_{i,j} f(i, j) * g(m - i, n - j)`` over the zero-extended
    support of ``f``; the returned ``H x W`` window is centred on the full
    result, offset by ``(k_h // 2, k_w // 2)``. This is the slow reference
    the learned-layer kernel is tested against.
    """
    f = _check_finite_rank(f, 2, "f")
    g = _check_finite_rank(g, 2, "g")
    H, W = f.shape
    kh, kw = g.shape
    oy, ox = kh // 2, kw // 2
    out = np.zeros((H, W))
    for m in range(H):
        for n in range(W):
            acc = 0.0
            for i in range(H):
                p = m + oy - i
                if p < 0 or p >= kh:
                    continue
                for j in range(W):
                    q = n + ox - j
                    if 0 <= q < kw:
                        acc += f[i, j] * g[p, q]
            out[m, n] = acc
    return out


def _blocks(N, C, H, W, kh, kw):
    """Split ``(N, H)`` into blocks whose patch matrix stays cache-sized."""
    per_row = C * kh * kw * W
    if per_row * H >= _COLS_BUDGET:
        rows = max(1, _COLS_BUDGET // per_row)
        for n in range(N):
            for r0 in range(0, H, rows):
                yield n, n + 1, r0, min(H, r0 + rows)
    else:
        per = max(1, _COLS_BUDGET // (per_row * H))
        for n0 in range(0, N, per):
            yield n0, min(N, n0 + per), 0, H


def _pad(x, kh, kw):
    N, C, H, W = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((N, C, H + 2 * ph, W + 2 * pw))
    xp[:, :, ph : ph + H, pw : pw + W] = x
    return xp


def _patches(xp, n0, n1, r0, r1, kh, kw, W):
    """``(C*kh*kw, n*R*W)`` patch matrix for samples ``n0:n1`` and output rows ``r0:r1``."""
    C = xp.shape[1]
    cols = np.empty((C, kh, kw, n1 - n0, r1 - r0, W))
    src = xp[n0:n1].transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = src[:, :, r0 + i : r1 + i, j : j + W]
    return cols.reshape(C * kh * kw, -1)


def _correlate(x, weights):
    """Same-padded, stride-1 multi-channel cross-correlation via blocked im2col."""
    O, C, kh, kw = weights.shape
    N, _, H, W = x.shape
    wmat = weights.reshape(O, C * kh * kw)
    xp = _pad(x, kh, kw)
    out = np.empty((N, O, H, W))
    for n0, n1, r0, r1 in _blocks(N, C, H, W, kh, kw):
        y = wmat @ _patches(xp, n0, n1, r0, r1, kh, kw, W)
        out[n0:n1, :, r0:r1] = y.reshape(O, n1 - n0, r1 - r0, W).transpose(1, 0, 2, 3)
    return out


def _check_conv_args(x, kernel):
    x = _check_finite_rank(x, 4, "input")
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects {kernel.in_channels}"
        )
    kh, kw = kernel.weights.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("same-padding convolution needs odd kernel sizes")
    return x


def conv2d_forward(x, kernel: ConvKernel):
    """Stride-1, same-padded cross-correlation plus bias. No activation."""
    x = _check_conv_args(x, kernel)
    out = _correlate(x, kernel.weights)
    out += kernel.bias[None, :, None, None]
    return out


def conv2d_backward(x, kernel: ConvKernel, grad_output, need_input_grad=True):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias.

    With ``need_input_grad=False`` the first element of the result is None.
    """
    x = _check_conv_args(x, kernel)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    N, C, H, W = x.shape
    O, _, kh, kw = kernel.weights.shape
    if grad_output.shape != (N, O, H, W):
        raise ShapeError(f"grad_output shape {grad_output.shape} != {(N, O, H, W)}")

    grad_w = np.zeros((O, C * kh * kw))
    xp = _pad(x, kh, kw)
    for n0, n1, r0, r1 in _blocks(N, C, H, W, kh, kw):
        g = grad_output[n0:n1, :, r0:r1].transpose(1, 0, 2, 3).reshape(O, -1)
        grad_w += g @ _patches(xp, n0, n1, r0, r1, kh, kw, W).T
    grad_b = grad_output.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, grad_w.reshape(kernel.weights.shape), grad_b
    # the input gradient is a same-padded correlation with the flipped, transposed kernel
    flipped = kernel.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad_x = _correlate(grad_output, np.ascontiguousarray(flipped))
    return grad_x, grad_w.reshape(kernel.weights.shape), grad_b


# Row (and column) folding of a 3x3 kernel for the two output phases of a
# 2x nearest upsample: phase 0 sees low-res offsets (-1, 0, 0), phase 1 sees
# (0, 0, +1), so kernel rows merge into a zero-padded 3x3 footprint.
_PHASE_FOLD = np.array(
    [
        [[1, 0, 0], [0, 1, 1], [0, 0, 0]],
        [[0, 0, 0], [1, 1, 0], [0, 0, 1]],
    ],
    dtype=np.float64,
)


def _phase_kernels(weights):
    """``(4*O, C, 3, 3)`` stack of per-phase kernels, phase order (py, px) row-major."""
    # eff[p, q, o, c] = F[p] @ w[o, c] @ F[q].T
    eff = np.einsum("pba,ocad,qed->pqocbe", _PHASE_FOLD, weights, _PHASE_FOLD)
    O, C = weights.shape[:2]
    return eff.reshape(4 * O, C, 3, 3)


def _check_upconv(x, kernel):
    x = _check_conv_args(x, kernel)
    if kernel.weights.shape[2:] != (3, 3):
        raise ShapeError("fused upsample-conv supports 3x3 kernels only")
    return x


def upsample2x_conv2d_forward(x, kernel: ConvKernel):
    """``conv2d_forward(resize_nearest_forward(x, 2h, 2w), kernel)`` without
    materialising the upsampled tensor."""
    x = _check_upconv(x, kernel)
    N, C, h, w = x.shape
    O = kernel.out_channels
    y = _correlate(x, _phase_kernels(kernel.weights))  # (N, 4*O, h, w)
    out = y.reshape(N, 2, 2, O, h, w).transpose(0, 3, 4, 1, 5, 2).reshape(N, O, 2 * h, 2 * w)
    out += kernel.bias[None, :, None, None]
    return out


def upsample2x_conv2d_backward(x, kernel: ConvKernel, grad_output, need_input_grad=True):
    """Gradients of :func:`upsample2x_conv2d_forward`; input gradient is w.r.t. the low-res ``x``."""
    x = _check_upconv(x, kernel)
    N, C, h, w = x.shape
    O = kernel.out_channels
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (N, O, 2 * h, 2 * w):
        raise ShapeError(f"grad_output shape {grad_output.shape} != {(N, O, 2 * h, 2 * w)}")
    # (N, O, h, py, w, px) -> (N, py, px, O, h, w) -> (N, 4*O, h, w)
    g = grad_output.reshape(N, O, h, 2, w, 2).transpose(0, 3, 5, 1, 2, 4).reshape(N, 4 * O, h, w)
    phase = ConvKernel(_phase_kernels(kernel.weights), np.zeros(4 * O))
    grad_x, grad_eff, _ = conv2d_backward(x, phase, g, need_input_grad)
    grad_eff = grad_eff.reshape(2, 2, O, C, 3, 3)
    grad_w = np.einsum("pba,pqocbe,qed->ocad", _PHASE_FOLD, grad_eff, _PHASE_FOLD)
    grad_b = grad_output.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_output):
    x = np.asarray(x, dtype=np.float64)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if x.shape != grad_output.shape:
        raise ShapeError(f"relu_backward: {x.shape} vs {grad_output.shape}")
    return np.where(x > 0, grad_output, 0.0)


def sigmoid(x):
    """Logistic function, overflow-free for any finite input.

    Only ``exp`` of non-positive arguments is ever taken. The result is
    clamped to the open interval (0, 1) so saturated inputs never produce an
    exact 0 or 1.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _SIG_LO, _SIG_HI)


def maxpool2x2_forward(x):
    """Non-overlapping 2x2 max pooling with stride 2.

    Ties go to the first element in row-major window order.
    """
    x = _check_finite_rank(x, 4, "input")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max pooling needs even spatial dims, got {H}x{W}")
    h, w = H // 2, W // 2
    windows = x.reshape(N, C, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, h, w, 4)
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h)[:, None] + local // 2
    cols = 2 * np.arange(w)[None, :] + local % 2
    return out, PoolIndices(rows * W + cols, x.shape)


def maxpool2x2_backward(indices: PoolIndices, grad_output):
    grad_output = np.asarray(grad_output, dtype=np.float64)
    src = indices.source_index
    N, C, H, W = indices.input_shape
    if grad_output.shape != src.shape or src.shape != (N, C, H // 2, W // 2):
        raise ShapeError(
            f"grad_output {grad_output.shape} does not match pool indices {src.shape}"
        )
    grad_input = np.zeros((N, C, H * W))
    np.put_along_axis(
        grad_input, src.reshape(N, C, -1), grad_output.reshape(N, C, -1), axis=-1
    )
    return grad_input.reshape(N, C, H, W)


def nearest_source_index(n_in: int, n_out: int):
    """Source index per output position: ``floor(dst * n_in / n_out)``."""
    return (np.arange(n_out) * n_in) // n_out


def resize_nearest_forward(x, out_h: int, out_w: int):
    """Nearest-neighbour resize of the two trailing axes.

    At an integral upscale factor each pixel becomes an exact s x s block.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be positive, got {out_h}x{out_w}")
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape[-2:]
    if out_h % H == 0 and out_w % W == 0:
        return x.repeat(out_h // H, axis=-2).repeat(out_w // W, axis=-1)
    ys = nearest_source_index(H, out_h)
    xs = nearest_source_index(W, out_w)
    return x[..., ys[:, None], xs[None, :]]


def _scatter_matrix(n_in, n_out):
    m = np.zeros((n_in, n_out))
    m[nearest_source_index(n_in, n_out), np.arange(n_out)] = 1.0
    return m


def resize_nearest_backward(in_dims, out_dims, grad_output):
    """Accumulate ``grad_output`` back onto the source pixels of a resize.

    ``in_dims`` / ``out_dims`` may be full shapes or just ``(H, W)``; only
    the trailing two extents are used.
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    H, W = tuple(in_dims)[-2:]
    oh, ow = tuple(out_dims)[-2:]
    if grad_output.shape[-2:] != (oh, ow):
        raise ShapeError(f"grad_output {grad_output.shape} does not end in {(oh, ow)}")
    if oh % H == 0 and ow % W == 0:
        sh, sw = oh // H, ow // W
        lead = grad_output.shape[:-2]
        return grad_output.reshape(*lead, H, sh, W, sw).sum(axis=(-3, -1))
    return _scatter_matrix(H, oh) @ grad_output @ _scatter_matrix(W, ow).T
