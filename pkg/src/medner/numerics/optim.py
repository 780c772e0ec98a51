"""Adam with decoupled weight decay and the warmup/linear-decay schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from medner.numerics.tensor import Parameter


@dataclass
class OptimizerConfig:
    peak_lr: float = 5e-5
    batch_size: int = 32
    epochs: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    dropout_prob: float = 0.1
    warmup_fraction: float = 0.10
    epsilon: float = 1e-8
    # "warmup_linear" or "constant"
    schedule: str = "warmup_linear"
    clip_norm: float | None = None

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")
        if self.peak_lr < 0 or not math.isfinite(self.peak_lr):
            raise ValueError(f"peak_lr must be a finite non-negative number, got {self.peak_lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.schedule not in ("warmup_linear", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


def lr_schedule(step: float, total_steps: int, peak_lr: float, warmup_fraction: float = 0.10) -> float:
    """Linear ramp 0 -> peak over the first ``warmup_fraction`` of steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("lr_schedule: total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"lr_schedule: step {step} outside [0, {total_steps}]")
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return peak_lr * (step / warmup)
    return peak_lr * ((total_steps - step) / (total_steps - warmup))


def default_no_decay(name: str) -> bool:
    """Biases and layer-norm parameters are exempt from weight decay."""
    return name.rsplit(".", 1)[-1] in ("bias", "gamma", "beta")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray], state: AdamState,
              config: OptimizerConfig, step_index: int, lr: float,
              no_decay: Callable[[str], bool] = default_no_decay) -> None:
    """One Adam update in place.

    ``step_index`` is 1-based and drives bias correction.  Weight decay is
    decoupled: ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``.
    A non-finite gradient raises before any parameter or moment is touched.
    """
    if step_index < 1:
        raise ValueError(f"adam_step: step_index must be >= 1, got {step_index}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** step_index
    c2 = 1.0 - b2 ** step_index
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + config.epsilon)
        if config.weight_decay and not no_decay(name):
            update = update + config.weight_decay * p.data
        p.data = p.data - lr * update
    state.step = step_index


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


class Adam:
    """Stateful wrapper pairing :func:`adam_step` with the configured schedule."""

    def __init__(self, params: Mapping[str, Parameter], config: OptimizerConfig, total_steps: int):
        if total_steps <= 0:
            raise ValueError("Adam: total_steps must be positive")
        self.params = dict(params)
        self.config = config
        self.total_steps = total_steps
        self.state = AdamState()

    def current_lr(self, step_index: int) -> float:
        if self.config.schedule == "constant":
            return self.config.peak_lr
        return lr_schedule(step_index, self.total_steps, self.config.peak_lr, self.config.warmup_fraction)

    def step(self, grads: Mapping[str, np.ndarray]) -> float:
        index = self.state.step + 1
        if index > self.total_steps:
            raise RuntimeError(f"optimizer already consumed its {self.total_steps} scheduled steps")
        lr = self.current_lr(index)
        adam_step(self.params, grads, self.state, self.config, index, lr)
        return lr
