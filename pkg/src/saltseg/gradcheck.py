"""Central finite-difference checks for every backward kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .loss_optim import loss_and_grad

__all__ = ["CheckResult", "numerical_gradient", "relative_error", "run_suite", "KINK_GAP"]

KINK_GAP = 1e-3


@dataclass
class CheckResult:
    kernel: str
    shape: tuple
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.kernel:<16} shape={self.shape} rel_err={self.rel_error:.3e} (tol {self.tol:g})"


def numerical_gradient(f, x, step=1e-5):
    """Central differences of scalar ``f`` at ``x`` (``x`` is not modified)."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)``; zero when both are zero."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


def _away_from_kinks(rng, shape):
    x = rng.standard_normal(shape)
    bad = np.abs(x) < KINK_GAP
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) < KINK_GAP
    return x


def _untied_pool_input(rng, shape):
    """Random input whose 2x2 windows have a unique maximum by a margin."""
    while True:
        x = rng.standard_normal(shape)
        N, C, H, W = shape
        win = np.sort(x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4), axis=1)
        if np.all(win[:, 3] - win[:, 2] > KINK_GAP):
            return x


def check_conv(rng, step, tol, fused=False):
    n, c, o = (int(v) for v in rng.integers(1, 4, size=3))
    h, w = (int(v) for v in rng.integers(1, 5 if fused else 7, size=2))
    k = 3 if fused else int(rng.choice([1, 3, 3, 5]))
    x = rng.standard_normal((n, c, h, w))
    kern = tc.ConvKernel(rng.standard_normal((o, c, k, k)), rng.standard_normal(o))
    fwd = tc.upsample2x_conv2d_forward if fused else tc.conv2d_forward
    bwd = tc.upsample2x_conv2d_backward if fused else tc.conv2d_backward
    name = "upsample2x_conv" if fused else "conv2d"

    def loss(x_, w_, b_):
        return 0.5 * float(np.sum(fwd(x_, tc.ConvKernel(w_, b_)) ** 2))

    gx, gw, gb = bwd(x, kern, fwd(x, kern))
    return [
        CheckResult(f"{name}.input", x.shape, relative_error(gx, numerical_gradient(lambda v: loss(v, kern.weights, kern.bias), x, step)), tol),
        CheckResult(f"{name}.weights", kern.weights.shape, relative_error(gw, numerical_gradient(lambda v: loss(x, v, kern.bias), kern.weights, step)), tol),
        CheckResult(f"{name}.bias", kern.bias.shape, relative_error(gb, numerical_gradient(lambda v: loss(x, kern.weights, v), kern.bias, step)), tol),
    ]


def check_relu(rng, step, tol):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=4))
    x = _away_from_kinks(rng, shape)
    r = rng.standard_normal(shape)
    num = numerical_gradient(lambda v: float(np.sum(r * tc.relu(v))), x, step)
    return [CheckResult("relu", shape, relative_error(tc.relu_backward(x, r), num), tol)]


def check_maxpool(rng, step, tol):
    n, c = (int(v) for v in rng.integers(1, 3, size=2))
    h, w = (2 * int(v) for v in rng.integers(1, 4, size=2))
    x = _untied_pool_input(rng, (n, c, h, w))
    out, idx = tc.maxpool2x2_forward(x)
    r = rng.standard_normal(out.shape)
    num = numerical_gradient(lambda v: float(np.sum(r * tc.maxpool2x2_forward(v)[0])), x, step)
    return [CheckResult("maxpool2x2", x.shape, relative_error(tc.maxpool2x2_backward(idx, r), num), tol)]


def check_resize(rng, step, tol):
    n, c = (int(v) for v in rng.integers(1, 3, size=2))
    h, w, oh, ow = (int(v) for v in rng.integers(1, 9, size=4))
    x = rng.standard_normal((n, c, h, w))
    r = rng.standard_normal((n, c, oh, ow))
    num = numerical_gradient(lambda v: float(np.sum(r * tc.resize_nearest_forward(v, oh, ow))), x, step)
    ana = tc.resize_nearest_backward(x.shape, r.shape, r)
    return [CheckResult("resize_nearest", (x.shape, (oh, ow)), relative_error(ana, num), tol)]


def check_loss(rng, step, tol):
    shape = (int(rng.integers(1, 4)), 1, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    x = 3.0 * rng.standard_normal(shape)
    z = (rng.random(shape) < 0.5).astype(np.float64)
    _, grad = loss_and_grad(x, z)
    num = numerical_gradient(lambda v: loss_and_grad(v, z)[0].mean_loss, x, step)
    return [CheckResult("sigmoid_xent", shape, relative_error(grad, num), tol)]


CHECKS = {
    "conv2d": check_conv,
    "upsample2x_conv": lambda rng, step, tol: check_conv(rng, step, tol, fused=True),
    "relu": check_relu,
    "maxpool2x2": check_maxpool,
    "resize_nearest": check_resize,
    "loss": check_loss,
}


def run_suite(n_shapes=20, seed=0, step=1e-5, tol=1e-4, kernels=None):
    """Run each check on ``n_shapes`` random shapes; returns every :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    for name in kernels or CHECKS:
        for _ in range(n_shapes):
            results.extend(CHECKS[name](rng, step, tol))
    return results
