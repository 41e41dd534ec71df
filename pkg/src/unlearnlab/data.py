"""Synthetic datasets, forget/retain splits and the paired batch stream."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .nn import Batch

RANDOM_SUBSET = "random_subset"
CLASS_REMOVAL = "class_removal"


class SplitError(ValueError):
    pass


@dataclass
class DatasetBundle:
    train: Batch
    validation: Batch
    test: Batch
    n_classes: int
    in_dim: int
    seed: int
    label_noise_fraction: float = 0.0
    # Labels before noise injection, per split; None for loaded datasets.
    clean_labels: dict | None = field(default=None, repr=False)


def _flip_labels(labels: np.ndarray, fraction: float, n_classes: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Reassign exactly round(fraction * n) labels to a different random class."""
    labels = labels.copy()
    n_flip = int(round(fraction * labels.size))
    if n_flip == 0:
        return labels
    idx = rng.choice(labels.size, size=n_flip, replace=False)
    shift = rng.integers(1, n_classes, size=n_flip)
    labels[idx] = (labels[idx] + shift) % n_classes
    return labels


def generate_synthetic(n_classes: int = 5, in_dim: int = 20, n_per_class: int = 200,
                       cluster_spread: float = 0.5, label_noise_fraction: float = 0.15,
                       seed: int = 0, *, n_val_per_class: int | None = None,
                       n_test_per_class: int | None = None,
                       noisy_eval: bool = True) -> DatasetBundle:
    """Gaussian blobs around the vertices of a regular simplex.

    Class means are ``C`` random orthonormal directions scaled so every pair
    of means sits at unit distance; ``cluster_spread`` is the per-coordinate
    standard deviation. A ``label_noise_fraction`` share of train labels is
    reassigned to a different class; with ``noisy_eval`` the validation and
    test splits receive the same noise rate so that unseen samples are
    exchangeable with held-out training samples.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 10:
        raise ValueError("n_per_class must be >= 10")
    if not cluster_spread > 0:
        raise ValueError("cluster_spread must be > 0")
    if not 0 <= label_noise_fraction < 1:
        raise ValueError("label_noise_fraction must be in [0, 1)")
    if in_dim < n_classes:
        raise ValueError("in_dim must be >= n_classes for simplex means")
    n_val_per_class = n_per_class // 2 if n_val_per_class is None else n_val_per_class
    n_test_per_class = n_per_class if n_test_per_class is None else n_test_per_class

    ss = np.random.SeedSequence(seed)
    mean_rng, train_rng, val_rng, test_rng, noise_rng = (
        np.random.default_rng(s) for s in ss.spawn(5)
    )
    q, _ = np.linalg.qr(mean_rng.standard_normal((in_dim, n_classes)))
    means = q.T / np.sqrt(2.0)

    def draw(rng, per_class):
        labels = np.repeat(np.arange(n_classes), per_class)
        x = means[labels] + cluster_spread * rng.standard_normal((labels.size, in_dim))
        order = rng.permutation(labels.size)
        return x[order], labels[order]

    xs, clean = {}, {}
    for name, rng, per_class in (("train", train_rng, n_per_class),
                                 ("validation", val_rng, n_val_per_class),
                                 ("test", test_rng, n_test_per_class)):
        xs[name], clean[name] = draw(rng, per_class)

    labels = {}
    for name in ("train", "validation", "test"):
        frac = label_noise_fraction if (name == "train" or noisy_eval) else 0.0
        labels[name] = _flip_labels(clean[name], frac, n_classes, noise_rng)

    return DatasetBundle(
        train=Batch(xs["train"], labels["train"]),
        validation=Batch(xs["validation"], labels["validation"]),
        test=Batch(xs["test"], labels["test"]),
        n_classes=n_classes,
        in_dim=in_dim,
        seed=seed,
        label_noise_fraction=label_noise_fraction,
        clean_labels=clean,
    )


def _read_csv(path) -> Batch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        rows = [r for r in reader if r]
    arr = np.array(rows, dtype=np.float64)
    return Batch(arr[:, :-1], arr[:, -1].astype(np.int64))


def load_csv_bundle(train_path, validation_path, test_path, seed: int = 0) -> DatasetBundle:
    """Build a bundle from three CSV files (header; features...; integer label last)."""
    train, val, test = (_read_csv(Path(p)) for p in (train_path, validation_path, test_path))
    n_classes = int(max(train.labels.max(), val.labels.max(), test.labels.max())) + 1
    if not (train.inputs.shape[1] == val.inputs.shape[1] == test.inputs.shape[1]):
        raise ValueError("feature counts differ between CSV files")
    return DatasetBundle(train, val, test, n_classes, train.inputs.shape[1], seed)


@dataclass
class SplitSpec:
    mode: str = RANDOM_SUBSET
    forget_fraction: float | None = 0.15
    forget_class: int | None = None
    seed: int = 0

    def label(self) -> str:
        if self.mode == CLASS_REMOVAL:
            return f"class{self.forget_class}"
        return f"{self.forget_fraction:g}"


class Split:
    """Forget/retain partition of a bundle's train set.

    Reads of the two sides go through :attr:`forget` / :attr:`retain` and are
    counted in :attr:`access_log`, so callers can audit that a procedure
    never touched the forget set.
    """

    def __init__(self, spec: SplitSpec, forget_idx: np.ndarray, retain_idx: np.ndarray,
                 forget: Batch, retain: Batch):
        self.spec = spec
        self.forget_idx = forget_idx
        self.retain_idx = retain_idx
        self._forget = forget
        self._retain = retain
        self.access_log: Counter = Counter()

    @property
    def forget(self) -> Batch:
        self.access_log["forget"] += 1
        return self._forget

    @property
    def retain(self) -> Batch:
        self.access_log["retain"] += 1
        return self._retain

    @property
    def n_forget(self) -> int:
        return len(self.forget_idx)

    @property
    def n_retain(self) -> int:
        return len(self.retain_idx)

    def __iter__(self):
        # Allows ``d_f, d_r = make_split(...)``.
        yield self.forget
        yield self.retain


def make_split(bundle: DatasetBundle, spec: SplitSpec) -> Split:
    n = len(bundle.train)
    if spec.mode == RANDOM_SUBSET:
        frac = spec.forget_fraction
        if frac is None or not 0 < frac < 1:
            raise SplitError("forget_fraction must lie in (0, 1)")
        n_forget = int(round(frac * n))
        if n_forget == 0 or n_forget == n:
            raise SplitError(f"forget_fraction {frac} gives |D_f| = {n_forget} of {n}")
        rng = np.random.default_rng(spec.seed)
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(n, size=n_forget, replace=False)] = True
    elif spec.mode == CLASS_REMOVAL:
        mask = bundle.train.labels == spec.forget_class
        if not mask.any():
            raise SplitError(f"class {spec.forget_class} absent from the train set")
        if mask.all():
            raise SplitError("forgetting the only class leaves an empty retain set")
    else:
        raise SplitError(f"unknown split mode {spec.mode!r}")
    forget_idx = np.flatnonzero(mask)
    retain_idx = np.flatnonzero(~mask)
    return Split(spec, forget_idx, retain_idx,
                 bundle.train.subset(forget_idx), bundle.train.subset(retain_idx))


class PairedIterator:
    """Stream of (forget indices, retain indices) pairs grouped into forget epochs.

    A forget epoch walks a fresh shuffle of the forget set. Retain batches are
    drawn from a cursor that survives epoch boundaries; when it runs out it
    reshuffles and continues, possibly in the middle of a batch. The retain
    stream depends only on the seed, ``n_retain`` and the requested batch
    sizes, so :meth:`retain_epochs` reproduces it without touching forget data.
    """

    def __init__(self, n_forget: int, n_retain: int, batch_size: int, seed: int):
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if batch_size > min(n_forget, n_retain):
            raise ValueError(
                f"batch_size {batch_size} exceeds min(|D_f|, |D_r|) = {min(n_forget, n_retain)}"
            )
        self.n_forget = n_forget
        self.n_retain = n_retain
        self.batch_size = batch_size
        forget_ss, retain_ss = np.random.SeedSequence(seed).spawn(2)
        self._forget_rng = np.random.default_rng(forget_ss)
        self._retain_rng = np.random.default_rng(retain_ss)
        self._retain_order = self._retain_rng.permutation(n_retain)
        self.retain_cursor = 0
        self.retain_passes = 0

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.n_forget // self.batch_size)

    def _batch_sizes(self) -> list[int]:
        full, rem = divmod(self.n_forget, self.batch_size)
        return [self.batch_size] * full + ([rem] if rem else [])

    def next_retain(self, size: int) -> np.ndarray:
        parts = []
        while size > 0:
            if self.retain_cursor == self.n_retain:
                self._retain_order = self._retain_rng.permutation(self.n_retain)
                self.retain_cursor = 0
                self.retain_passes += 1
            take = min(size, self.n_retain - self.retain_cursor)
            parts.append(self._retain_order[self.retain_cursor:self.retain_cursor + take])
            self.retain_cursor += take
            size -= take
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def epoch(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        order = self._forget_rng.permutation(self.n_forget)
        start = 0
        for size in self._batch_sizes():
            forget_idx = order[start:start + size]
            start += size
            yield forget_idx, self.next_retain(size)

    def epochs(self) -> Iterator[list[tuple[np.ndarray, np.ndarray]]]:
        while True:
            yield list(self.epoch())

    def retain_epochs(self) -> Iterator[list[np.ndarray]]:
        """Retain-only view with the same batch sizes and retain order as :meth:`epochs`."""
        sizes = self._batch_sizes()
        while True:
            yield [self.next_retain(s) for s in sizes]


def paired_epochs(d_f: Batch, d_r: Batch, batch_size: int, seed: int):
    """Yield forget epochs, each a list of ``(forget_batch, retain_batch)`` pairs."""
    it = PairedIterator(len(d_f), len(d_r), batch_size, seed)
    for epoch in it.epochs():
        yield [(d_f.subset(fi), d_r.subset(ri)) for fi, ri in epoch]


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
