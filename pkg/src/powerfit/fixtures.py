"""Synthetic datasets and a deterministic full-batch trainer for small MLPs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, TrainingError, ValidationError
from .model import BN_EPS, BatchNorm, Dense, Model, Tensor


@dataclass
class Dataset:
    features: Tensor  # n x d
    labels: np.ndarray  # n, int64
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DimensionError("features must be n x d with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValidationError("labels", f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.features.shape[0]


def generate_dataset(
    kind: str,
    n: int,
    seed: int,
    *,
    classes: int = 3,
    dims: int = 2,
    separation: float = 4.0,
    noise: float = 0.15,
) -> Dataset:
    """Seeded synthetic classification data.

    ``blobs`` places ``classes`` unit-variance Gaussian clusters in ``dims``
    dimensions with pairwise centre distance ``separation`` (in units of the
    cluster std). ``rings`` draws two noisy concentric circles of radius 1 and 2.
    """
    if n < 10:
        raise ValidationError("n", "need at least 10 samples")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % (classes if kind == "blobs" else 2)
    if kind == "blobs":
        if not 2 <= dims <= 8:
            raise ValidationError("dims", "blobs live in 2 to 8 dimensions")
        # regular simplex vertices give equal pairwise distances
        centres = np.eye(classes, max(dims, classes))[:, :dims] if classes <= dims else None
        if centres is None:
            angles = 2 * np.pi * np.arange(classes) / classes
            centres = np.zeros((classes, dims))
            centres[:, 0], centres[:, 1] = np.cos(angles), np.sin(angles)
        centres = centres - centres.mean(axis=0)
        pair = np.linalg.norm(centres[0] - centres[1])
        centres *= separation / pair
        rotation, _ = np.linalg.qr(rng.standard_normal((dims, dims)))
        centres = centres @ rotation
        x = centres[labels] + rng.standard_normal((n, dims))
        return Dataset(x, labels, classes)
    if kind == "rings":
        theta = rng.uniform(0.0, 2 * np.pi, n)
        radius = 1.0 + labels + noise * rng.standard_normal(n)
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        return Dataset(x, labels, 2)
    raise ValidationError("kind", f"unknown dataset kind {kind!r}")


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_params(arch: list, seed: int) -> list:
    """He-normal weights and zero biases, one (W, b) per consecutive pair in ``arch``."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        params.append([w, np.zeros(fan_out)])
    return params


def _forward(params, bn, x):
    """Training-mode pass; the first hidden layer is batch-normalised with batch statistics."""
    cache = []
    h = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = h @ w.T + b
        entry = {"h": h}
        if i == 0 and bn is not None:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            entry.update(zhat=zhat, inv=inv, mu=mu, var=var)
            z = zhat * bn[0] + bn[1]
        entry["z"] = z
        cache.append(entry)
        h = z if i == last else np.maximum(z, 0.0)
    return h, cache


def _build_model(params, bn, stats, input_dim) -> Model:
    layers = []
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        act = "identity" if i == last else "relu"
        if i == 0 and bn is not None:
            layers.append(Dense(w.copy(), b.copy(), "identity"))
            layers.append(BatchNorm(bn[0].copy(), bn[1].copy(), stats[0].copy(), stats[1].copy(), act))
        else:
            layers.append(Dense(w.copy(), b.copy(), act))
    return Model(layers, (input_dim,))


def train_fixture(arch: list, dataset: Dataset, epochs: int = 500, lr: float = 0.1, seed: int = 0) -> Model:
    """Full-batch gradient descent on softmax cross-entropy.

    With at least one hidden layer the first dense layer is followed by a
    batchnorm (then ReLU); because every step sees the whole training set, the
    stored mean/var are exactly the training-set statistics of the final
    weights.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if arch[0] != dataset.features.shape[1] or arch[-1] != dataset.class_count:
        raise DimensionError(f"arch {arch} does not fit dataset ({dataset.features.shape[1]} -> {dataset.class_count})")
    params = init_params(arch, seed)
    bn = [np.ones(arch[1]), np.zeros(arch[1])] if len(arch) > 2 else None
    x = dataset.features
    n = x.shape[0]
    onehot = np.eye(dataset.class_count)[dataset.labels]
    # divergence is detected explicitly below; silence the overflow chatter on the way there
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            logits, cache = _forward(params, bn, x)
            p = _softmax(logits)
            loss = -np.mean(np.log(np.maximum(p[np.arange(n), dataset.labels], 1e-300)))
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            dz = (p - onehot) / n
            for i in range(len(params) - 1, -1, -1):
                entry = cache[i]
                if i < len(params) - 1:
                    dz = dz * (entry["z"] > 0)
                if i == 0 and bn is not None:
                    zhat = entry["zhat"]
                    dgamma = (dz * zhat).sum(axis=0)
                    dbeta = dz.sum(axis=0)
                    dzhat = dz * bn[0]
                    dz = entry["inv"] * (dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0))
                    bn[0] -= lr * dgamma
                    bn[1] -= lr * dbeta
                w, b = params[i]
                grad_w = dz.T @ entry["h"]
                grad_b = dz.sum(axis=0)
                dz = dz @ w
                w -= lr * grad_w
                b -= lr * grad_b
        stats = None
        if bn is not None:
            z = x @ params[0][0].T + params[0][1]
            stats = (z.mean(axis=0), z.var(axis=0))
    model = _build_model(params, bn, stats, arch[0])
    tensors = [t for l in model.layers for t in vars(l).values() if isinstance(t, np.ndarray)]
    if not all(np.all(np.isfinite(t)) for t in tensors):
        raise TrainingError("training produced non-finite parameters or statistics")
    return model


def accuracy(model, dataset: Dataset) -> float:
    """Top-1 accuracy; ``model`` is anything with a batch ``forward`` method.

    Ties go to the lowest class index.
    """
    logits = model.forward(dataset.features)
    if logits.shape[-1] != dataset.class_count:
        raise DimensionError(f"model emits {logits.shape[-1]} scores for {dataset.class_count} classes")
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))
