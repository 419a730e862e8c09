"""Sigmoid cross-entropy loss on logits and the ADADELTA update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, ShapeError, ValidationError
from .tensor_core import sigmoid

__all__ = [
    "LossValue",
    "OptimizerState",
    "sigmoid_cross_entropy",
    "loss_and_grad",
    "adadelta_update",
    "adadelta_step",
    "REDUCTIONS",
]

#: ``"mean"`` averages over every element of the batch; ``"sample"`` sums
#: over the pixels of each sample and averages over samples only.
REDUCTIONS = ("mean", "sample")


@dataclass
class LossValue:
    mean_loss: float
    per_pixel: np.ndarray | None = None


def _check_targets(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} differ")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise ValidationError("targets must be exactly 0 or 1")
    return logits, targets


def _softplus(t):
    # log(1 + exp(t)) without overflow; exact 0 at t = -inf
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid_cross_entropy(logits, targets):
    """Elementwise ``z*-log(s(x)) + (1-z)*-log(1-s(x))`` for 0/1 targets.

    Evaluated as ``softplus((1 - 2z) x)``, which equals
    ``max(x, 0) - x z + log(1 + exp(-|x|))`` for binary ``z`` and also stays
    well defined for infinite logits.
    """
    logits, targets = _check_targets(logits, targets)
    return _softplus((1.0 - 2.0 * targets) * logits)


def loss_and_grad(logits, targets, reduction: str = "mean"):
    """Reduced loss and its gradient with respect to the logits.

    Returns ``(LossValue, grad_logits)``; with the default reduction the
    gradient is ``(sigmoid(x) - z) / (m * n)``.
    """
    logits, targets = _check_targets(logits, targets)
    if logits.ndim == 0 or logits.shape[0] == 0 or logits.size == 0:
        raise ValidationError("loss needs a non-empty batch")
    if reduction not in REDUCTIONS:
        raise ValidationError(f"unknown reduction {reduction!r}")
    per_pixel = _softplus((1.0 - 2.0 * targets) * logits)
    denom = logits.size if reduction == "mean" else logits.shape[0]
    mean_loss = float(per_pixel.sum() / denom)
    grad = (sigmoid(logits) - targets) / denom
    return LossValue(mean_loss, per_pixel), grad


@dataclass
class OptimizerState:
    """Per-parameter running averages for ADADELTA.

    ``acc_grad_sq[i]`` and ``acc_update_sq[i]`` are shaped like parameter
    ``i``. ``lr_scale`` multiplies the step applied to the parameter; the
    update accumulator always records the unscaled step.
    """

    acc_grad_sq: list = field(default_factory=list)
    acc_update_sq: list = field(default_factory=list)
    rho: float = 0.95
    eps: float = 1e-6
    lr_scale: float = 0.01

    @classmethod
    def zeros_like(cls, params, rho=0.95, eps=1e-6, lr_scale=0.01):
        if not 0.0 < rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {rho}")
        if eps <= 0 or lr_scale <= 0:
            raise ValidationError("eps and lr_scale must be positive")
        return cls(
            [np.zeros_like(p, dtype=np.float64) for p in params],
            [np.zeros_like(p, dtype=np.float64) for p in params],
            rho,
            eps,
            lr_scale,
        )

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            [a.copy() for a in self.acc_grad_sq],
            [a.copy() for a in self.acc_update_sq],
            self.rho,
            self.eps,
            self.lr_scale,
        )


def adadelta_update(param, grad, acc_grad_sq, acc_update_sq, rho=0.95, eps=1e-6, lr_scale=1.0):
    """One ADADELTA step for a single array. Pure; returns new arrays.

    Returns ``(new_param, new_acc_grad_sq, new_acc_update_sq, delta)`` where
    ``delta`` is the unscaled step.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (param.shape == grad.shape == np.shape(acc_grad_sq) == np.shape(acc_update_sq)):
        raise ShapeError("parameter, gradient and accumulators must share a shape")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; update rejected")
    acc_g = rho * acc_grad_sq + (1.0 - rho) * grad * grad
    delta = -(np.sqrt(acc_update_sq + eps) / np.sqrt(acc_g + eps)) * grad
    acc_d = rho * acc_update_sq + (1.0 - rho) * delta * delta
    return param + lr_scale * delta, acc_g, acc_d, delta


def adadelta_step(params, grads, state: OptimizerState):
    """Apply one ADADELTA step to every parameter; returns the new parameter list.

    ``state`` is updated in place. All gradients are checked before any
    parameter changes, so a rejected step leaves everything untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.acc_grad_sq):
        raise ShapeError("params, grads and optimizer state differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p, state.acc_grad_sq[i], state.acc_update_sq[i], _ = adadelta_update(
            p, g, state.acc_grad_sq[i], state.acc_update_sq[i],
            state.rho, state.eps, state.lr_scale,
        )
        new_params.append(p)
    return new_params
