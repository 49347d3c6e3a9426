"""SGD with momentum, Nesterov look-ahead and inverse-time learning-rate decay."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class SgdConfig:
    lr0: float = 0.001
    decay: float = 1e-6
    momentum: float = 0.9
    nesterov: bool = True

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not self.decay >= 0:
            raise ConfigError(f"decay must be non-negative, got {self.decay}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class OptimizerState:
    velocity: list = field(default_factory=list)
    iteration: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], 0)


def effective_lr(cfg: SgdConfig, t: int) -> float:
    """lr0 / (1 + decay * t) after ``t`` completed updates."""
    return cfg.lr0 / (1.0 + cfg.decay * t)


def sgd_step(params, grads, state: OptimizerState, cfg: SgdConfig):
    """Update ``params`` in place and advance ``state`` by one iteration.

    v <- mu * v - lr * g
    w <- w + mu * v - lr * g   (nesterov)
    w <- w + v                 (classical momentum)
    """
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.velocity)):
        raise ShapeError("sgd_step: params, grads and velocity lists differ in length")
    lr = effective_lr(cfg, state.iteration)
    mu = cfg.momentum
    for w, g, v in zip(params, grads, state.velocity):
        if w.shape != g.shape or w.shape != v.shape:
            raise ShapeError(f"sgd_step: shapes differ: param {w.shape}, grad {g.shape}, velocity {v.shape}")
        v *= mu
        v -= lr * g
        if cfg.nesterov:
            w += mu * v - lr * g
        else:
            w += v
    state.iteration += 1
    return params, state
