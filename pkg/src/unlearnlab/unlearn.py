"""Gated gradient-ascent unlearning.

The objective mixes a squared-hinge ascent term on the forget loss with
plain descent on the retain loss::

    L = alpha * relu(L_val - L_forget) ** 2 + (1 - alpha) * L_retain

``L_val`` is the mean validation loss, cached and treated as a constant.
While the forget loss sits below it, the forget gradient is followed
upwards with a coefficient proportional to the remaining gap; once the
forget loss exceeds it, only the retain term is left.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn, optim
from .data import DatasetBundle, PairedIterator, Split
from .optim import LinearSchedule, NumericFailure

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
ALPHA_PER_EPOCH = "epoch"
ALPHA_PER_STEP = "step"


def default_alpha(forget_fraction: float) -> float:
    """Starting alpha from the forget fraction: 5/3 of it, capped at 1."""
    if not forget_fraction > 0:
        raise ValueError("forget_fraction must be positive")
    alpha = 5.0 / 3.0 * forget_fraction
    if forget_fraction >= 0.6:
        log.warning("forget fraction %.3f >= 0.6: alpha clamped to 1", forget_fraction)
    return min(1.0, alpha)


def step_budget_for(n_retain: int, batch_size: int, equivalent_epochs: int) -> int:
    """Optimizer steps equal to ``equivalent_epochs`` passes over the retain set."""
    if n_retain <= 0 or batch_size <= 0 or equivalent_epochs < 0:
        raise ValueError("step_budget_for needs positive sizes")
    return equivalent_epochs * -(-n_retain // batch_size)


@dataclass
class LossBreakdown:
    alpha: float
    L_Dv: float
    L_Df: float
    L_Dr: float
    forget_term: float
    combined: float
    gate_active: bool


def combined_loss(alpha: float, L_Dv: float, L_Df: float, L_Dr: float) -> LossBreakdown:
    vals = (alpha, L_Dv, L_Df, L_Dr)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite input to combined_loss: {vals}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    gap = max(0.0, L_Dv - L_Df)
    forget_term = gap * gap
    return LossBreakdown(
        alpha=alpha, L_Dv=L_Dv, L_Df=L_Df, L_Dr=L_Dr,
        forget_term=forget_term,
        combined=alpha * forget_term + (1.0 - alpha) * L_Dr,
        gate_active=L_Df <= L_Dv,
    )


def combined_gradient(alpha: float, L_Dv: float, L_Df: float, L_Dr: float,
                      grad_Df: np.ndarray, grad_Dr: np.ndarray) -> np.ndarray:
    """Gradient of :func:`combined_loss` given the two mean-loss gradients.

    ``L_Dv`` is a constant. With the gate closed the result is exactly
    ``(1 - alpha) * grad_Dr``.
    """
    grad_Df = np.asarray(grad_Df)
    grad_Dr = np.asarray(grad_Dr)
    if grad_Df.shape != grad_Dr.shape:
        raise ValueError(f"gradient shapes differ: {grad_Df.shape} vs {grad_Dr.shape}")
    retain = (1.0 - alpha) * grad_Dr
    if L_Df <= L_Dv:
        return -alpha * 2.0 * (L_Dv - L_Df) * grad_Df + retain
    return retain


@dataclass
class UnlearnConfig:
    alpha0: float = 0.25
    alpha_end_factor: float = 0.0
    alpha_unit: str = ALPHA_PER_EPOCH
    refresh_period_c: int = 1
    batch_size: int = 32
    step_budget: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    lr_end_factor: float = 0.1
    decay_during_ascent: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in [0, 1], got {self.alpha0}")
        if self.refresh_period_c < 1:
            raise ValueError("refresh_period_c must be >= 1")
        if self.alpha_unit not in (ALPHA_PER_EPOCH, ALPHA_PER_STEP):
            raise ValueError(f"alpha_unit must be 'epoch' or 'step', got {self.alpha_unit!r}")
        if self.step_budget < 0:
            raise ValueError("step_budget must be >= 0")

    def optimizer(self, param_count: int) -> optim.OptimizerState:
        return optim.adamw(param_count, lr=self.lr, weight_decay=self.weight_decay)

    def paired_batch_size(self, n_forget: int, n_retain: int) -> int:
        """Batch size clamped so one forget batch fits in both sets."""
        return min(self.batch_size, n_forget, n_retain)

    def lr_schedule(self) -> LinearSchedule:
        return LinearSchedule(1.0, self.lr_end_factor, max(self.step_budget, 1))


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    alpha: float
    L_Dv: float
    mean_L_Df: float
    mean_L_Dr: float
    gate_active_fraction: float
    failure: str | None = None


@dataclass
class UnlearnResult:
    params: nn.ModelParams
    trace: list[EpochRecord]
    steps: int
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def __iter__(self):
        yield self.params
        yield self.trace


def write_trace(trace, path) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(asdict(rec) if hasattr(rec, "__dataclass_fields__") else rec,
                                sort_keys=True) + "\n")


@dataclass
class _Tally:
    L_Df: list = field(default_factory=list)
    L_Dr: list = field(default_factory=list)
    gate: int = 0


def run_nabla_tau(model: nn.ModelParams, bundle: DatasetBundle, split: Split,
                  cfg: UnlearnConfig) -> UnlearnResult:
    """Unlearn ``split.forget`` from ``model``; the input model is not modified."""
    params = model.copy()
    if cfg.step_budget == 0:
        return UnlearnResult(params, [], 0)

    d_f, d_r = split.forget, split.retain
    it = PairedIterator(len(d_f), len(d_r), cfg.paired_batch_size(len(d_f), len(d_r)), cfg.seed)
    n_epochs = -(-cfg.step_budget // it.steps_per_epoch)
    alpha_sched = LinearSchedule(
        1.0, cfg.alpha_end_factor,
        n_epochs if cfg.alpha_unit == ALPHA_PER_EPOCH else cfg.step_budget,
    )
    lr_sched = cfg.lr_schedule()
    opt = cfg.optimizer(params.param_count)

    trace: list[EpochRecord] = []
    L_Dv = float("nan")
    step = 0
    epoch = 0
    failure = None
    while step < cfg.step_budget and failure is None:
        if epoch % cfg.refresh_period_c == 0:
            L_Dv = nn.mean_loss(params, bundle.validation)
        alpha = cfg.alpha0 * alpha_sched.factor(epoch)
        tally = _Tally()
        for f_idx, r_idx in it.epoch():
            if step >= cfg.step_budget:
                break
            if cfg.alpha_unit == ALPHA_PER_STEP:
                alpha = cfg.alpha0 * alpha_sched.factor(step)
            L_Df, g_f = nn.loss_and_grad(params, d_f.subset(f_idx))
            L_Dr, g_r = nn.loss_and_grad(params, d_r.subset(r_idx))
            tally.L_Df.append(L_Df)
            tally.L_Dr.append(L_Dr)
            if not (math.isfinite(L_Df) and math.isfinite(L_Dr)) \
                    or max(L_Df, L_Dr) > DIVERGENCE_LOSS:
                failure = f"diverged at step {step}: L_Df={L_Df!r}, L_Dr={L_Dr!r}"
                break
            gate = L_Df <= L_Dv
            tally.gate += gate
            grad = combined_gradient(alpha, L_Dv, L_Df, L_Dr, g_f, g_r)
            wd = None if (cfg.decay_during_ascent or not gate) else 0.0
            try:
                optim.apply_step(opt, params, grad, lr_sched.factor(step), weight_decay=wd)
            except NumericFailure as exc:
                failure = f"step {step}: {exc}"
                break
            step += 1
        n = max(len(tally.L_Df), 1)
        trace.append(EpochRecord(
            epoch=epoch, steps=step, alpha=alpha, L_Dv=L_Dv,
            mean_L_Df=float(np.mean(tally.L_Df)) if tally.L_Df else float("nan"),
            mean_L_Dr=float(np.mean(tally.L_Dr)) if tally.L_Dr else float("nan"),
            gate_active_fraction=tally.gate / n,
            failure=failure,
        ))
        epoch += 1
    if failure:
        log.error("nabla-tau run aborted: %s", failure)
    return UnlearnResult(params, trace, opt.step_count, failure)
