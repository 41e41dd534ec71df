"""Update rules and linear schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ModelParams

SGD = "sgd"
ADAMW = "adamw"


class NumericFailure(FloatingPointError):
    """Raised when a gradient contains NaN or Inf."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"non-finite gradient {value!r} at coordinate {index}")


@dataclass
class LinearSchedule:
    start_factor: float = 1.0
    end_factor: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def factor(self, step: int) -> float:
        return schedule_factor(self, step)


def schedule_factor(s: LinearSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step / s.total_steps, 1.0)
    return s.start_factor + (s.end_factor - s.start_factor) * frac


@dataclass
class OptimizerState:
    """Mutable optimizer state for one training run.

    ``kind`` is ``"sgd"`` (heavy-ball momentum, L2 decay folded into the
    gradient) or ``"adamw"`` (Adam moments with decoupled weight decay).
    """

    kind: str
    lr: float
    param_count: int
    weight_decay: float = 0.0
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buf: np.ndarray = field(default=None, repr=False)
    exp_avg: np.ndarray = field(default=None, repr=False)
    exp_avg_sq: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (SGD, ADAMW):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.buf is None:
            self.buf = np.zeros(self.param_count)
        if self.exp_avg is None:
            self.exp_avg = np.zeros(self.param_count)
        if self.exp_avg_sq is None:
            self.exp_avg_sq = np.zeros(self.param_count)


def sgd(param_count: int, lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> OptimizerState:
    return OptimizerState(SGD, lr, param_count, weight_decay=weight_decay, momentum=momentum)


def adamw(param_count: int, lr: float = 1e-3, weight_decay: float = 0.01,
          beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(ADAMW, lr, param_count, weight_decay=weight_decay,
                          beta1=beta1, beta2=beta2, eps=eps)


def apply_step(state: OptimizerState, params: ModelParams, grad: np.ndarray,
               lr_factor: float = 1.0, weight_decay: float | None = None) -> ModelParams:
    """Update ``params.values`` in place and advance ``state``.

    ``lr_factor`` scales the base learning rate (schedules); ``weight_decay``
    overrides the state's decay for this step only.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape or state.param_count != params.param_count:
        raise ValueError(
            f"gradient shape {grad.shape} does not match {params.param_count} parameters"
        )
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericFailure(int(bad[0]), float(grad[bad[0]]))

    lr = state.lr * lr_factor
    wd = state.weight_decay if weight_decay is None else weight_decay
    p = params.values
    state.step_count += 1

    if state.kind == SGD:
        d = grad + wd * p if wd else grad
        if state.momentum:
            if state.step_count == 1:
                state.buf[...] = d
            else:
                state.buf *= state.momentum
                state.buf += d
            d = state.buf
        p -= lr * d
    else:
        if wd:
            p *= 1.0 - lr * wd
        b1, b2 = state.beta1, state.beta2
        state.exp_avg *= b1
        state.exp_avg += (1.0 - b1) * grad
        state.exp_avg_sq *= b2
        state.exp_avg_sq += (1.0 - b2) * grad * grad
        bc1 = 1.0 - b1 ** state.step_count
        bc2 = 1.0 - b2 ** state.step_count
        denom = np.sqrt(state.exp_avg_sq / bc2) + state.eps
        p -= lr * (state.exp_avg / bc1) / denom
    return params
