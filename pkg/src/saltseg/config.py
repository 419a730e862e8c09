from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .exceptions import ValidationError
from .loss_optim import REDUCTIONS

__all__ = ["TrainConfig"]


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``lr_scale`` multiplies every ADADELTA step. ``log_every`` and
    ``checkpoint_every`` count epochs; 0 disables periodic checkpoints.
    """

    epochs: int = 1
    batch_size: int = 100
    lr_scale: float = 0.01
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0
    train_fraction: float = 0.8
    faithful_table1: bool = False
    log_every: int = 1
    checkpoint_every: int = 0
    reduction: str = "mean"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1 or self.log_every < 1 or self.checkpoint_every < 0:
            raise ValidationError("batch_size and log_every must be >= 1, checkpoint_every >= 0")
        if self.lr_scale <= 0 or self.eps <= 0 or not 0 < self.rho < 1:
            raise ValidationError("lr_scale and eps must be positive and rho in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.reduction not in REDUCTIONS:
            raise ValidationError(f"reduction must be one of {REDUCTIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    # fields that may change between a checkpoint and a resumed run
    RESUMABLE_OVERRIDES = ("epochs", "log_every", "checkpoint_every")

    def trajectory_key(self) -> dict:
        d = self.to_dict()
        for k in self.RESUMABLE_OVERRIDES:
            d.pop(k)
        return d
