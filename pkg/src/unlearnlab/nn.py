"""Small dense classifiers with hand-written backpropagation.

All parameters of a model live in one flat float64 vector so optimizers,
finite-difference checks and the unlearning update can treat them uniformly.
Each layer stores a weight matrix of shape ``(in_dim, out_dim)`` followed by
its bias vector; hidden layers use ReLU, the output layer is linear and fed
to a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Input shape does not match the model."""


class InvalidDistributionError(ValueError):
    """A probability vector is negative or does not sum to one."""


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError(
                f"{self.inputs.shape[0]} inputs but labels have shape {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])

    @staticmethod
    def concat(*batches: "Batch") -> "Batch":
        return Batch(
            np.concatenate([b.inputs for b in batches]),
            np.concatenate([b.labels for b in batches]),
        )


@dataclass
class ModelParams:
    layer_shapes: list[tuple[int, int]]
    values: np.ndarray

    def __post_init__(self):
        self.layer_shapes = [(int(i), int(o)) for i, o in self.layer_shapes]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.param_count,):
            raise ShapeError(
                f"expected {self.param_count} parameters, got {self.values.shape}"
            )

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    @property
    def in_dim(self) -> int:
        return self.layer_shapes[0][0]

    @property
    def n_classes(self) -> int:
        return self.layer_shapes[-1][1]

    def layers(self, flat: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into ``flat`` (default: ``self.values``)."""
        flat = self.values if flat is None else flat
        out = []
        offset = 0
        for i, o in self.layer_shapes:
            w = flat[offset:offset + i * o].reshape(i, o)
            offset += i * o
            b = flat[offset:offset + o]
            offset += o
            out.append((w, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(list(self.layer_shapes), self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def mlp_shapes(in_dim: int, hidden: list[int] | tuple[int, ...], n_classes: int) -> list[tuple[int, int]]:
    dims = [in_dim, *hidden, n_classes]
    return list(zip(dims[:-1], dims[1:]))


def init_params(layer_shapes, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = [(int(i), int(o)) for i, o in layer_shapes]
    chunks = []
    for fan_in, fan_out in shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(shapes, np.concatenate(chunks))


def init_mlp(in_dim: int, hidden, n_classes: int, seed: int) -> ModelParams:
    return init_params(mlp_shapes(in_dim, list(hidden), n_classes), seed)


@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    per_sample_loss: np.ndarray
    per_sample_entropy: np.ndarray
    log_probs: np.ndarray = field(repr=False)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check(params: ModelParams, batch: Batch):
    if batch.inputs.shape[1] != params.in_dim:
        raise ShapeError(
            f"batch has {batch.inputs.shape[1]} features, model expects {params.in_dim}"
        )
    if len(batch) < 1:
        raise ShapeError("empty batch")
    labels = batch.labels
    if labels.size and (labels.min() < 0 or labels.max() >= params.n_classes):
        raise ShapeError(f"labels must lie in [0, {params.n_classes})")


def _activations(params: ModelParams, x: np.ndarray):
    acts = [x]
    layers = params.layers()
    h = x
    for k, (w, b) in enumerate(layers):
        z = h @ w + b
        if k < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return acts, h


def logits_of(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.in_dim:
        raise ShapeError(f"inputs of shape {inputs.shape} do not match in_dim {params.in_dim}")
    return _activations(params, inputs)[1]


def forward(params: ModelParams, batch: Batch) -> ForwardResult:
    _check(params, batch)
    _, logits = _activations(params, batch.inputs)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    loss = -logp[np.arange(len(batch)), batch.labels]
    # p*log p with p == 0 contributes 0; exp(logp) underflow gives 0 * finite.
    entropy = -(probs * logp).sum(axis=1)
    return ForwardResult(
        logits=logits,
        probs=probs,
        per_sample_loss=loss,
        per_sample_entropy=np.maximum(entropy, 0.0),
        log_probs=logp,
    )


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``batch`` and its gradient w.r.t. the flat parameters."""
    _check(params, batch)
    n = len(batch)
    acts, logits = _activations(params, batch.inputs)
    logp = log_softmax(logits)
    mean_loss = float(-logp[np.arange(n), batch.labels].mean())

    grad = np.empty_like(params.values)
    grad_layers = params.layers(grad)
    layers = params.layers()

    delta = np.exp(logp)
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[k]
        gw[...] = acts[k].T @ delta
        gb[...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ layers[k][0].T) * (acts[k] > 0)
    return mean_loss, grad


def grad_mean_loss(params: ModelParams, batch: Batch) -> np.ndarray:
    return loss_and_grad(params, batch)[1]


def mean_loss(params: ModelParams, batch: Batch) -> float:
    return float(forward(params, batch).per_sample_loss.mean())


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    # np.argmax breaks ties towards the lowest class index.
    return np.argmax(logits_of(params, inputs), axis=1)


def entropy_of(probs_row) -> float:
    """Shannon entropy (nats) of one probability vector, with 0·log 0 = 0."""
    p = np.asarray(probs_row, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistributionError("expected a non-empty 1-D probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidDistributionError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistributionError(f"probabilities sum to {p.sum()!r}, not 1")
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return min(max(h, 0.0), float(np.log(p.size)))
