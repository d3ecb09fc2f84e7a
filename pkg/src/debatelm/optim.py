"""Adam with decoupled weight decay and the linear warmup/decay schedule.

The update is p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p, with
bias-corrected moments. Decay is decoupled (applied directly to the
parameter, not folded into the gradient) and exempts one-dimensional
tensors, i.e. biases and layer-norm parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from debatelm.errors import ConfigError, NumericError
from debatelm.model import Params


@dataclass
class LrSchedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def validate(self) -> None:
        if self.total_steps < 1 or self.warmup_steps < 0:
            raise ConfigError("total_steps must be >= 1 and warmup_steps >= 0")
        if self.warmup_steps >= self.total_steps:
            raise ConfigError("warmup_steps must be smaller than total_steps")


def lr_at(step: int, sched: LrSchedule) -> float:
    """Linear ramp 0 -> peak over the warmup, then linear decay to 0 at
    total_steps; steps beyond total_steps get 0."""
    if step < 0:
        raise ConfigError(f"negative step {step}")
    if step > sched.total_steps:
        return 0.0
    if sched.warmup_steps > 0 and step <= sched.warmup_steps:
        return sched.peak_lr * (step / sched.warmup_steps)
    return sched.peak_lr * ((sched.total_steps - step) / (sched.total_steps - sched.warmup_steps))


@dataclass
class OptimizerState:
    schedule: LrSchedule
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.01
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def create(cls, params: Params, schedule: LrSchedule, **kwargs) -> "OptimizerState":
        schedule.validate()
        state = cls(schedule=schedule, **kwargs)
        state.m = {name: np.zeros_like(t) for name, t in params.items()}
        state.v = {name: np.zeros_like(t) for name, t in params.items()}
        return state


def decay_exempt(name: str, tensor: np.ndarray) -> bool:
    """Biases and layer-norm parameters (all 1-D tensors) skip weight decay."""
    return tensor.ndim <= 1


def clip_global_norm(grads: Params, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm. The accumulation runs in float64 so the
    reported norm is stable regardless of parameter dtype.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(params: Params, grads: Params, state: OptimizerState) -> Params:
    """One in-place Adam update across all tensors; returns params.

    Increments state.t first, so the learning rate of the k-th call is
    lr_at(k). Raises NumericError for non-finite gradients.
    """
    state.t += 1
    lr = lr_at(state.t, state.schedule)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = lr * (m_hat / (np.sqrt(v_hat) + state.eps))
        if state.weight_decay > 0.0 and not decay_exempt(name, p):
            update = update + lr * state.weight_decay * p  # decay on the pre-update value
        p -= update
    return params
