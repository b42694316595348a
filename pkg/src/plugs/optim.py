"""Learning-rate schedule, training presets and the SGD/Adam update rules."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import NumericError, Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    warmup_steps: int
    decay_steps: int
    decay_rate: float = 0.5

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.warmup_steps <= 0 or self.decay_steps <= 0:
            raise ConfigError("warmup_steps and decay_steps must be positive")
        if not 0.0 < self.decay_rate < 1.0:
            raise ConfigError("decay_rate must lie in (0, 1)")


def schedule_lr(cfg: ScheduleConfig, step: int) -> float:
    """Linear warmup to ``base_lr``, then exponential decay."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step <= cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    return cfg.base_lr * cfg.decay_rate ** ((step - cfg.warmup_steps) / cfg.decay_steps)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str
    schedule: ScheduleConfig
    l2_weight: float = 0.0
    batch_size: int = 32
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.l2_weight < 0:
            raise ConfigError("l2_weight must be nonnegative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


MULTI30K_LRS = (3e-4, 1e-4, 3e-5, 1e-5)
MULTI30K_DECAY = (50_000, 100_000)
CC_LRS = (0.12, 0.15, 0.18, 0.21, 0.24)
CC_DECAY = (350_000, 450_000)
CC_LARGE_LR = 0.09


def _check(value, allowed, what):
    if value not in allowed:
        raise ConfigError(f"{what} {value} not in the searched grid {allowed}")


def multi30k_config(lr: float = 3e-4, decay_steps: int = 50_000, seed: int = 0) -> TrainConfig:
    _check(lr, MULTI30K_LRS, "learning rate")
    _check(decay_steps, MULTI30K_DECAY, "decay_steps")
    return TrainConfig("adam", ScheduleConfig(lr, 16_000, decay_steps), l2_weight=5e-6,
                       batch_size=1024, dropout=0.3, seed=seed)


def cc_base_config(lr: float = 0.12, decay_steps: int = 350_000, multilingual: bool = False,
                   seed: int = 0) -> TrainConfig:
    _check(lr, CC_LRS, "learning rate")
    _check(decay_steps, CC_DECAY, "decay_steps")
    warmup = 80_000 if multilingual else 16_000
    return TrainConfig("sgd", ScheduleConfig(lr, warmup, decay_steps), l2_weight=1e-5,
                       batch_size=4096, dropout=0.3, seed=seed)


def cc_large_config(decay_steps: int = 350_000, seed: int = 0) -> TrainConfig:
    _check(decay_steps, CC_DECAY, "decay_steps")
    return TrainConfig("sgd", ScheduleConfig(CC_LARGE_LR, 80_000, decay_steps), l2_weight=1e-5,
                       batch_size=4096, dropout=0.3, seed=seed)


def desk_config(seed: int = 0) -> TrainConfig:
    # Scaled-down version of the Multi30K regime for CPU runs of a few thousand steps.
    return TrainConfig("adam", ScheduleConfig(2e-3, 150, 1500, 0.5), l2_weight=1e-5,
                       batch_size=32, dropout=0.1, seed=seed)


TRAIN_PRESETS = {
    "multi30k": multi30k_config,
    "cc_base": cc_base_config,
    "cc_large": cc_large_config,
    "desk": desk_config,
}


@dataclass
class OptimizerState:
    """Per-parameter moment estimates (Adam only) keyed by parameter name."""

    kind: str
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def init_optimizer(cfg: TrainConfig, params: dict[str, Tensor]) -> OptimizerState:
    state = OptimizerState(cfg.optimizer)
    if cfg.optimizer == "adam":
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
    return state


def optimizer_step(state: OptimizerState, params: dict[str, Tensor], grads: dict[str, np.ndarray],
                   cfg: TrainConfig, step: int) -> dict[str, Tensor]:
    """Apply one update in place and return ``params``.

    L2 is decoupled: every weight is shrunk by ``lr * l2_weight`` of itself,
    independently of the gradient-based part.  SGD has no momentum.
    """
    lr = schedule_lr(cfg.schedule, step)
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
    state.t += 1
    if cfg.optimizer == "adam":
        c1 = 1.0 - ADAM_BETA1 ** state.t
        c2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        w = p.data
        g = grads.get(name)
        if cfg.l2_weight:
            w *= w.dtype.type(1.0 - lr * cfg.l2_weight)
        if g is None:
            continue
        if cfg.optimizer == "sgd":
            w -= w.dtype.type(lr) * g
        else:
            m, v = state.m[name], state.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            w -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(w.dtype)
    return params
