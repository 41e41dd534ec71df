"""Pretraining and the comparison baselines: retrain, fine-tune, label swap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn, optim
from .data import DatasetBundle, PairedIterator, Split, shuffled_batches
from .optim import LinearSchedule, NumericFailure
from .unlearn import DIVERGENCE_LOSS, UnlearnConfig, UnlearnResult

RETRAIN = "retrain"
FINETUNE = "finetune"
LABEL_SWAP = "label_swap"


@dataclass
class TrainConfig:
    """From-scratch training hyperparameters (original model and retraining)."""

    hidden: list[int] = field(default_factory=lambda: [32])
    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_end_factor: float = 1e-3


@dataclass
class TrainResult:
    params: nn.ModelParams
    trace: list[dict]
    steps: int
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def train_from_scratch(data: nn.Batch, n_classes: int, cfg: TrainConfig, seed: int) -> TrainResult:
    """SGD with momentum and a linear LR decay over all steps, from a fresh seeded init."""
    init_ss, order_ss = np.random.SeedSequence(seed).spawn(2)
    params = nn.init_mlp(data.inputs.shape[1], cfg.hidden, n_classes,
                         int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(order_ss)
    opt = optim.sgd(params.param_count, cfg.lr, cfg.momentum, cfg.weight_decay)
    steps_per_epoch = -(-len(data) // cfg.batch_size)
    sched = LinearSchedule(1.0, cfg.lr_end_factor, max(cfg.epochs * steps_per_epoch, 1))

    trace = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in shuffled_batches(len(data), cfg.batch_size, rng):
            loss, grad = nn.loss_and_grad(params, data.subset(idx))
            if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                failure = f"diverged in epoch {epoch}: loss={loss!r}"
                trace.append({"epoch": epoch, "mean_loss": loss, "failure": failure})
                return TrainResult(params, trace, opt.step_count, failure)
            try:
                optim.apply_step(opt, params, grad, sched.factor(opt.step_count))
            except NumericFailure as exc:
                trace.append({"epoch": epoch, "failure": str(exc)})
                return TrainResult(params, trace, opt.step_count, str(exc))
            losses.append(loss)
        trace.append({"epoch": epoch, "mean_loss": float(np.mean(losses))})
    return TrainResult(params, trace, opt.step_count)


def pretrain(bundle: DatasetBundle, cfg: TrainConfig, seed: int) -> TrainResult:
    """The original model, trained on the whole train set."""
    return train_from_scratch(bundle.train, bundle.n_classes, cfg, seed)


def retrain(bundle: DatasetBundle, split: Split, cfg: TrainConfig, seed: int) -> TrainResult:
    """Golden baseline: same schedule as pretraining, retain set only."""
    return train_from_scratch(split.retain, bundle.n_classes, cfg, seed)


def _finetune_on(params: nn.ModelParams, batches, cfg: UnlearnConfig) -> UnlearnResult:
    opt = cfg.optimizer(params.param_count)
    sched = cfg.lr_schedule()
    trace = []
    epoch = 0
    while opt.step_count < cfg.step_budget:
        losses = []
        for batch in next(batches):
            if opt.step_count >= cfg.step_budget:
                break
            loss, grad = nn.loss_and_grad(params, batch)
            if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                failure = f"diverged at step {opt.step_count}: loss={loss!r}"
                trace.append({"epoch": epoch, "failure": failure})
                return UnlearnResult(params, trace, opt.step_count, failure)
            try:
                optim.apply_step(opt, params, grad, sched.factor(opt.step_count))
            except NumericFailure as exc:
                trace.append({"epoch": epoch, "failure": str(exc)})
                return UnlearnResult(params, trace, opt.step_count, str(exc))
            losses.append(loss)
        trace.append({"epoch": epoch, "steps": opt.step_count, "mean_loss": float(np.mean(losses))})
        epoch += 1
    return UnlearnResult(params, trace, opt.step_count)


def finetune(model: nn.ModelParams, bundle: DatasetBundle, split: Split,
             cfg: UnlearnConfig) -> UnlearnResult:
    """``cfg.step_budget`` AdamW steps on retain batches.

    Retain batches come from the same stream the unlearning loop would see
    with ``cfg.seed``, so the two runs differ only in the forget term.
    """
    params = model.copy()
    if cfg.step_budget == 0:
        return UnlearnResult(params, [], 0)
    d_r = split.retain
    it = PairedIterator(split.n_forget, len(d_r),
                        cfg.paired_batch_size(split.n_forget, len(d_r)), cfg.seed)
    batches = ([d_r.subset(idx) for idx in epoch] for epoch in it.retain_epochs())
    return _finetune_on(params, batches, cfg)


def swap_labels(labels: np.ndarray, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Replace every label with a uniformly drawn different class."""
    if n_classes < 2:
        raise ValueError("label swapping needs at least 2 classes")
    shift = rng.integers(1, n_classes, size=len(labels))
    return (np.asarray(labels) + shift) % n_classes


def label_swap(model: nn.ModelParams, bundle: DatasetBundle, split: Split,
               cfg: UnlearnConfig) -> UnlearnResult:
    """Relabel the forget set at random, then fine-tune on retain + relabelled forget."""
    swap_ss, order_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    d_f = split.forget
    swapped = nn.Batch(d_f.inputs, swap_labels(d_f.labels, bundle.n_classes,
                                               np.random.default_rng(swap_ss)))
    union = nn.Batch.concat(split.retain, swapped)
    rng = np.random.default_rng(order_ss)
    params = model.copy()
    if cfg.step_budget == 0:
        return UnlearnResult(params, [], 0)

    def batches():
        while True:
            yield [union.subset(idx) for idx in shuffled_batches(len(union), cfg.batch_size, rng)]

    return _finetune_on(params, batches(), cfg)


@dataclass
class BaselineSpec:
    kind: str
    train: TrainConfig = field(default_factory=TrainConfig)
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    seed: int = 0


def run_baseline(spec: BaselineSpec, model: nn.ModelParams | None, bundle: DatasetBundle,
                 split: Split):
    if spec.kind == RETRAIN:
        return retrain(bundle, split, spec.train, spec.seed)
    if spec.kind == FINETUNE:
        return finetune(model, bundle, split, spec.unlearn)
    if spec.kind == LABEL_SWAP:
        return label_swap(model, bundle, split, spec.unlearn)
    raise ValueError(f"unknown baseline {spec.kind!r}")
