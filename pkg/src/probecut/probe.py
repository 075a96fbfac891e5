"""Per-layer probes: small MLP classifiers trained on pooled activations.

One probe is trained per transformer layer to predict a code-feature class
(CC or HD bin) from that layer's activations; per-CWE accuracy on a held-out
split gives the layer accuracy curve that drives cut-off selection.

Weights are stored as float32, but all forward/backward arithmetic runs in
float64 so analytic gradients match a central-finite-difference oracle to
better than 1e-4 relative error.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class ProbeConfig:
    hidden_layer_sizes: tuple[int, ...] = (128,)
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_layer_sizes", tuple(int(h) for h in self.hidden_layer_sizes))
        if any(h <= 0 for h in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ProbeModel:
    """Feed-forward ReLU network with softmax output, weights in float32."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    num_classes: int

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be parallel and non-empty")
        ws = tuple(np.asarray(w, dtype=np.float32) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float32) for b in self.biases)
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} incompatible")
            if i > 0 and ws[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} != previous output")
        if ws[-1].shape[1] != self.num_classes:
            raise ValueError("final layer width must equal num_classes")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def _params64(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (w.astype(np.float64), b.astype(np.float64))
            for w, b in zip(self.weights, self.biases)
        ]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits = _forward(self._params64(), np.asarray(X, dtype=np.float64))[-1]
        return _softmax(logits)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


@dataclass(frozen=True)
class TrainReport:
    """Mean training loss per epoch, in epoch order."""

    epoch_losses: tuple[float, ...]
    seed: int

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


@dataclass(frozen=True)
class LayerAccuracyCurve:
    """Held-out per-group accuracy for every probed layer.

    `rows[i][j]` is the accuracy of layer `layer_indices[i]` on group
    `groups[j]`; the layer average is the unweighted mean across groups.
    """

    dataset_id: str
    feature: str
    groups: tuple[str, ...]
    layer_indices: tuple[int, ...]
    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.rows) != len(self.layer_indices):
            raise ValueError("one row per layer required")
        for row in self.rows:
            if len(row) != len(self.groups):
                raise ValueError("row width must match group count")
            if any(not (0.0 <= a <= 1.0) for a in row):
                raise ValueError("accuracies must lie in [0,1]")
        if any(b <= a for a, b in zip(self.layer_indices, self.layer_indices[1:])):
            raise ValueError("layer_indices must be strictly increasing")
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "layer_indices", tuple(int(k) for k in self.layer_indices))
        object.__setattr__(self, "rows", tuple(tuple(float(a) for a in r) for r in self.rows))

    def avg_accuracies(self) -> np.ndarray:
        return np.array([sum(r) / len(r) for r in self.rows], dtype=np.float64)

    def per_group(self, layer_index: int) -> dict[str, float]:
        i = self.layer_indices.index(layer_index)
        return dict(zip(self.groups, self.rows[i]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward(params, X):
    """All layer activations, pre-softmax; float64 throughout."""
    acts = [X]
    h = X
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        if i < len(params) - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
        h = z
    return acts


def _loss_and_grad_params(params, X, y):
    """Mean softmax cross-entropy and analytic gradients per parameter."""
    n = X.shape[0]
    acts = _forward(params, X)
    probs = _softmax(acts[-1])
    eps = np.finfo(np.float64).tiny
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        a_in = acts[i]
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params[i][0].T) * (acts[i] > 0.0)
    return loss, grads


def loss_and_grad(model: ProbeModel, X, y, params=None):
    """Loss and exact gradients at the model's weights (or at `params`).

    `params` lets callers evaluate the same loss at perturbed float64
    parameters, which is how the finite-difference check stays exact.
    Returns (loss, [(dW, db), ...]) in layer order, float64.
    """
    if params is None:
        params = model._params64()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    return _loss_and_grad_params(params, X, y)


def _init_params(dims, rng):
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((w, np.zeros(fan_out)))
    return params


def train_probe(X, y, config: ProbeConfig) -> tuple[ProbeModel, TrainReport]:
    """Mini-batch gradient descent on softmax cross-entropy.

    Deterministic given config.seed: initialization and epoch shuffles come
    from one seeded generator and nothing else.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be [n, d] and y [n]")
    n = X.shape[0]
    if n == 0:
        raise ValueError("no training samples")
    num_classes = int(y.max()) + 1
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    present = set(np.unique(y).tolist())
    missing = sorted(set(range(num_classes)) - present)
    if missing:
        raise ValueError(f"class {missing[0]} absent from labels")
    if n < num_classes:
        raise ValueError(f"{n} samples cannot cover {num_classes} classes")

    rng = np.random.default_rng(config.seed)
    dims = [X.shape[1], *config.hidden_layer_sizes, num_classes]
    params = _init_params(dims, rng)

    if config.optimizer == "adam":
        m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        t = 0
    lr = config.learning_rate

    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start:start + config.batch_size]
            loss, grads = _loss_and_grad_params(params, X[sel], y[sel])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
            loss_sum += loss * len(sel)
            if config.optimizer == "sgd":
                params = [
                    (w - lr * dw, b - lr * db)
                    for (w, b), (dw, db) in zip(params, grads)
                ]
            else:
                t += 1
                b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
                new_params = []
                for i, ((w, b), (dw, db)) in enumerate(zip(params, grads)):
                    mw = b1 * m[i][0] + (1 - b1) * dw
                    mb = b1 * m[i][1] + (1 - b1) * db
                    vw = b2 * v[i][0] + (1 - b2) * dw * dw
                    vb = b2 * v[i][1] + (1 - b2) * db * db
                    m[i] = (mw, mb)
                    v[i] = (vw, vb)
                    corr1 = 1 - b1 ** t
                    corr2 = 1 - b2 ** t
                    w = w - lr * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
                    b = b - lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
                    new_params.append((w, b))
                params = new_params
        epoch_losses.append(loss_sum / n)

    model = ProbeModel(
        weights=tuple(w.astype(np.float32) for w, _ in params),
        biases=tuple(b.astype(np.float32) for _, b in params),
        num_classes=num_classes,
    )
    return model, TrainReport(epoch_losses=tuple(epoch_losses), seed=config.seed)


def evaluate_per_group(
    model: ProbeModel,
    X,
    y,
    groups: Sequence[str],
    expected_groups: Sequence[str] | None = None,
) -> tuple[dict[str, float], float]:
    """Accuracy within each group plus the unweighted mean across groups.

    Groups should already be equal-sized for a fair average; this function
    does not reweight. `expected_groups`, when given, makes a missing group
    an error instead of a silent omission.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    groups = np.asarray(groups)
    if X.shape[0] == 0:
        raise ValueError("no evaluation samples")
    if not (X.shape[0] == y.shape[0] == groups.shape[0]):
        raise ValueError("X, y, groups must be aligned")

    names = sorted(set(groups.tolist()))
    if expected_groups is not None:
        for g in expected_groups:
            if g not in names:
                raise ValueError(f"group {g!r} has no samples")
        names = sorted(expected_groups)

    pred = model.predict(X)
    acc = {}
    for g in names:
        sel = groups == g
        acc[g] = float(np.mean(pred[sel] == y[sel]))
    avg = sum(acc.values()) / len(acc)
    return acc, avg


def downsample_groups(groups: Sequence[str], seed: int) -> np.ndarray:
    """Indices that cut every group down to the smallest group's size.

    Each group draws from its own child generator keyed by the group name,
    so adding or removing one group never reshuffles the others.
    """
    groups = np.asarray(groups)
    if groups.shape[0] == 0:
        raise ValueError("no samples")
    names = sorted(set(groups.tolist()))
    per_group = {g: np.nonzero(groups == g)[0] for g in names}
    target = min(len(ix) for ix in per_group.values())
    keep = []
    for g in names:
        ix = per_group[g]
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(g.encode("utf-8"))])
        pick = rng.choice(len(ix), size=target, replace=False)
        keep.append(ix[np.sort(pick)])
    return np.sort(np.concatenate(keep))


def _standardize(train: np.ndarray, other: np.ndarray):
    mu = train.mean(axis=0)
    sigma = train.std(axis=0)
    sigma = np.where(sigma == 0.0, 1.0, sigma)
    return (train - mu) / sigma, (other - mu) / sigma


def probe_all_layers(
    tensor_set,
    targets: Mapping[str, int],
    groups: Mapping[str, str],
    config: ProbeConfig,
    dataset_id: str = "",
    feature: str = "",
    val_fraction: float = 0.2,
) -> LayerAccuracyCurve:
    """Train one probe per layer and evaluate each on a held-out split.

    `tensor_set` is either a manifest path or an already-loaded sequence of
    ActivationTensor (layers in any order; results depend only on each
    tensor's own layer_index, seeded as config.seed XOR layer_index).
    Targets and groups are keyed by sample id; ids absent from `targets`
    (e.g. discarded by binning) are skipped. Inputs are standardized with
    training-split statistics before both training and evaluation.
    """
    if isinstance(tensor_set, (str, Path)):
        from probecut.tensors import load_tensor_set

        _, tensors = load_tensor_set(tensor_set)
    else:
        tensors = list(tensor_set)
    if not tensors:
        raise ValueError("no tensors to probe")

    ids = tensors[0].sample_ids
    for t in tensors[1:]:
        if t.sample_ids != ids:
            raise ValueError(f"layer {t.layer_index} sample_ids differ from layer {tensors[0].layer_index}")

    keep = [i for i, sid in enumerate(ids) if sid in targets]
    if not keep:
        raise ValueError("no tensor samples carry a target class")
    for i in keep:
        if ids[i] not in groups:
            raise ValueError(f"sample {ids[i]!r} has a target but no group label")
    y = np.array([targets[ids[i]] for i in keep], dtype=np.int64)
    g = np.array([groups[ids[i]] for i in keep])
    if np.unique(y).size < 2:
        raise ValueError("need at least 2 target classes")
    group_names = tuple(sorted(set(g.tolist())))

    n = len(keep)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValueError("not enough samples for a train/validation split")

    results: dict[int, tuple[float, ...]] = {}
    for tensor in sorted(tensors, key=lambda t: t.layer_index):
        layer_seed = config.seed ^ tensor.layer_index
        split_rng = np.random.default_rng(layer_seed)
        order = split_rng.permutation(n)
        val_sel, train_sel = order[:n_val], order[n_val:]

        val_groups = set(g[val_sel].tolist())
        missing = [name for name in group_names if name not in val_groups]
        if missing:
            raise ValueError(
                f"layer {tensor.layer_index}: validation split has no samples "
                f"from group {missing[0]!r}; too few samples per group for a "
                f"{val_fraction:.0%} held-out split"
            )

        X = tensor.data[keep].astype(np.float64)
        X_train, X_val = _standardize(X[train_sel], X[val_sel])
        layer_config = ProbeConfig(
            hidden_layer_sizes=config.hidden_layer_sizes,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            batch_size=config.batch_size,
            seed=layer_seed,
            optimizer=config.optimizer,
            adam_beta1=config.adam_beta1,
            adam_beta2=config.adam_beta2,
            adam_eps=config.adam_eps,
        )
        model, _ = train_probe(X_train, y[train_sel], layer_config)
        acc, _ = evaluate_per_group(
            model, X_val, y[val_sel], g[val_sel], expected_groups=group_names
        )
        results[tensor.layer_index] = tuple(acc[name] for name in group_names)

    layer_indices = tuple(sorted(results))
    return LayerAccuracyCurve(
        dataset_id=dataset_id,
        feature=feature,
        groups=group_names,
        layer_indices=layer_indices,
        rows=tuple(results[k] for k in layer_indices),
    )
