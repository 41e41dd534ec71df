"""Membership inference: a 1-D logistic attacker on per-sample loss or entropy."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

LOSS = "loss"
ENTROPY = "entropy"


@dataclass
class AttackFeatures:
    feature_kind: str
    forget_values: np.ndarray
    test_values: np.ndarray

    def __post_init__(self):
        self.forget_values = np.asarray(self.forget_values, dtype=np.float64)
        self.test_values = np.asarray(self.test_values, dtype=np.float64)
        for side in (self.forget_values, self.test_values):
            if not np.all(np.isfinite(side)):
                raise ValueError("attack features must be finite")


@dataclass
class AttackResult:
    accuracy: float
    fold_accuracies: list[float]
    n_per_class: int
    degenerate: bool = False

    @property
    def gap(self) -> float:
        return abs(self.accuracy - 50.0)


@dataclass
class AttackReport:
    mia_l: float
    mia_e: float
    fold_accuracies_l: list[float] = field(default_factory=list)
    fold_accuracies_e: list[float] = field(default_factory=list)
    n_per_class: int = 0
    degenerate_l: bool = False
    degenerate_e: bool = False

    @property
    def gap_l(self) -> float:
        return abs(self.mia_l - 50.0)

    @property
    def gap_e(self) -> float:
        return abs(self.mia_e - 50.0)

    def to_json(self) -> str:
        d = asdict(self)
        d["gap_l"] = self.gap_l
        d["gap_e"] = self.gap_e
        return json.dumps(d, sort_keys=True)


def extract_features(model: nn.ModelParams, d_f: nn.Batch, d_t: nn.Batch, kind: str,
                     restrict_class: int | None = None) -> AttackFeatures:
    """Per-sample loss or entropy of ``model`` on forget and test samples.

    With ``restrict_class`` the test side keeps only samples of that class.
    """
    if kind not in (LOSS, ENTROPY):
        raise ValueError(f"unknown feature kind {kind!r}")
    if restrict_class is not None:
        d_t = d_t.subset(d_t.labels == restrict_class)
    if len(d_f) == 0 or len(d_t) == 0:
        raise ValueError("attack needs non-empty forget and test sets")
    attr = "per_sample_loss" if kind == LOSS else "per_sample_entropy"
    return AttackFeatures(kind, getattr(nn.forward(model, d_f), attr),
                          getattr(nn.forward(model, d_t), attr))


def _balanced(values: np.ndarray, n: int, seed: int) -> np.ndarray:
    # Keyed on the side's own size so swapping sides draws the same subsets.
    if len(values) == n:
        return values
    rng = np.random.default_rng([seed, len(values)])
    return values[np.sort(rng.choice(len(values), size=n, replace=False))]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic_1d(x: np.ndarray, y: np.ndarray, l2: float = 1e-4, lr: float = 1.0,
                    tol: float = 1e-8, max_iter: int = 20000) -> tuple[float, float]:
    """Gradient descent on mean log-loss + ``l2/2 * w**2``; returns (w, b).

    Stops when one iteration lowers the objective by less than ``tol``.
    """
    w = b = 0.0

    def objective(w, b):
        z = w * x + b
        # log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
        return float(np.mean(np.logaddexp(0.0, np.where(y == 1, -z, z)))) + 0.5 * l2 * w * w

    prev = objective(w, b)
    for _ in range(max_iter):
        r = _sigmoid(w * x + b) - y
        gw = float(np.mean(r * x)) + l2 * w
        gb = float(np.mean(r))
        w -= lr * gw
        b -= lr * gb
        cur = objective(w, b)
        if prev - cur < tol:
            break
        prev = cur
    return w, b


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    ids = np.empty(n, dtype=np.int64)
    ids[np.random.default_rng(seed).permutation(n)] = np.arange(n) % folds
    return ids


def train_attacker(features: AttackFeatures, folds: int = 5, seed: int = 0,
                   l2: float = 1e-4, tol: float = 1e-8, repeats: int = 10) -> AttackResult:
    """Cross-validated accuracy (percent) of a logistic forget-vs-test classifier.

    Both sides are subsampled to the smaller size; each fold holds the same
    number of samples from either side. The feature is standardised on the
    training folds and the sign of the fitted slope decides which side the
    low values belong to. With ``repeats > 1`` the subsampling and fold
    assignment are redrawn and the fold accuracies pooled.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n = min(len(features.forget_values), len(features.test_values))
    if n < 10:
        raise ValueError(f"need >= 10 samples per side, got {n}")
    if n < folds:
        raise ValueError("fewer samples than folds")

    allv = np.concatenate([features.forget_values, features.test_values])
    if np.ptp(allv) == 0.0:
        return AttackResult(50.0, [50.0] * (folds * repeats), n, degenerate=True)

    accs = []
    for r in range(repeats):
        rseed = seed if r == 0 else seed * 1_000_003 + r
        f = _balanced(features.forget_values, n, rseed)
        t = _balanced(features.test_values, n, rseed)
        # Same fold pattern for both sides keeps every fold balanced.
        fold = _fold_ids(n, folds, rseed)
        for k in range(folds):
            tr, te = fold != k, fold == k
            x_tr = np.concatenate([f[tr], t[tr]])
            y_tr = np.concatenate([np.ones(tr.sum()), np.zeros(tr.sum())])
            mu, sd = x_tr.mean(), x_tr.std()
            sd = sd if sd > 0 else 1.0
            w, b = fit_logistic_1d((x_tr - mu) / sd, y_tr, l2=l2, tol=tol)
            x_te = (np.concatenate([f[te], t[te]]) - mu) / sd
            y_te = np.concatenate([np.ones(te.sum()), np.zeros(te.sum())])
            pred = (w * x_te + b) > 0.0
            accs.append(100.0 * float(np.mean(pred == (y_te == 1))))
    return AttackResult(float(np.mean(accs)), accs, n)


def evaluate_mia(model: nn.ModelParams, d_f: nn.Batch, d_t: nn.Batch, folds: int = 5,
                 seed: int = 0, restrict_class: int | None = None, l2: float = 1e-4,
                 tol: float = 1e-8, repeats: int = 10) -> AttackReport:
    """Run the loss and the entropy attacker against ``model``."""
    res = {}
    for kind in (LOSS, ENTROPY):
        feats = extract_features(model, d_f, d_t, kind, restrict_class)
        res[kind] = train_attacker(feats, folds, seed, l2=l2, tol=tol, repeats=repeats)
    return AttackReport(
        mia_l=res[LOSS].accuracy,
        mia_e=res[ENTROPY].accuracy,
        fold_accuracies_l=res[LOSS].fold_accuracies,
        fold_accuracies_e=res[ENTROPY].fold_accuracies,
        n_per_class=res[LOSS].n_per_class,
        degenerate_l=res[LOSS].degenerate,
        degenerate_e=res[ENTROPY].degenerate,
    )
