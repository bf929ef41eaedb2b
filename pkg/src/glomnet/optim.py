"""RMSProp with a per-epoch linear learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .nn import NumericError, Params


@dataclass(frozen=True)
class OptimizerConfig:
    rho: float = 0.9
    epsilon: float = 1e-6
    lr0: float = 1e-4
    epochs: int = 10
    batch_size: int = 32

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon <= 0 or self.lr0 < 0:
            raise ValueError("epsilon must be > 0 and lr0 >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class OptimizerState:
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def fresh(cls, params: Params) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, 0)


def rmsprop_step(params: Params, grads: Params, state: OptimizerState, lr: float,
                 cfg: OptimizerConfig = OptimizerConfig()) -> Tuple[Params, OptimizerState]:
    """One update; returns new arrays and leaves the inputs untouched.

    E <- rho E + (1 - rho) g^2;  theta <- theta - lr g / sqrt(E + eps)
    """
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    new_params, new_acc = {}, {}
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k}")
        acc = state.accumulators.get(k)
        if acc is None:
            acc = np.zeros_like(theta)
        acc = cfg.rho * acc + (1 - cfg.rho) * g * g
        new_acc[k] = acc
        new_params[k] = theta - lr * g / np.sqrt(acc + cfg.epsilon)
    return new_params, OptimizerState(new_acc, state.step_count + 1)


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * (1 - epoch / cfg.epochs)
