"""Black-box watermark classifier on text vectors.

MLP (1536 -> 512 -> 256 -> 128 -> 64 -> 1, ReLU, sigmoid output) trained
with Adam + reduce-on-plateau, a logistic-regression baseline, grid search
over the training hyperparameters and k-fold evaluation. Label 1 means
watermarked.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

INPUT_DIM = 1536
HIDDEN = (512, 256, 128, 64)

GRID = {
    "learning_rate": (2e-5, 2e-4, 2e-3),
    "weight_decay": (2e-4, 2e-3, 2e-2),
    "batch_size": (50, 75, 100),
    "shuffle": (True, False),
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 2e-3
    batch_size: int = 50
    shuffle: bool = True
    epochs: int = 150
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    plateau_threshold: float = 1e-4
    hidden: tuple[int, ...] = HIDDEN


# -----------------------------------------------------------------------------
# MLP

@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def save(self, path: str | Path) -> None:
        arrays = {f"W{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "MLPParams":
        with np.load(path) as data:
            n = sum(1 for k in data.files if k.startswith("W"))
            return cls([data[f"W{i}"] for i in range(n)], [data[f"b{i}"] for i in range(n)])


def init_mlp(input_dim: int = INPUT_DIM, hidden: Sequence[int] = HIDDEN,
             seed: int = 0) -> MLPParams:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logits(params: MLPParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return z[:, 0], acts
    raise AssertionError("unreachable")


def forward(params: MLPParams, x: np.ndarray) -> np.ndarray | float:
    """Probability of the watermarked class for one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input dim {X.shape[1]} != {params.weights[0].shape[0]}")
    z, _ = _logits(params, X)
    p = sigmoid(z)
    return float(p[0]) if single else p


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, stable for large |z|
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grad(params: MLPParams, X: np.ndarray, y: np.ndarray
                  ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean binary cross-entropy and its gradients by backprop."""
    z, acts = _logits(params, X)
    loss = bce_from_logits(z, y)
    dz = ((sigmoid(z) - y) / X.shape[0])[:, None]
    gW: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.biases)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ dz
        gb[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ params.weights[i].T) * (acts[i] > 0)
    return loss, gW, gb


class Adam:
    """Adam with L2 weight decay folded into the gradient (torch ``Adam`` semantics)."""

    def __init__(self, shapes: Sequence[tuple[int, ...]], lr: float, beta1: float,
                 beta2: float, eps: float, weight_decay: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReduceLROnPlateau:
    """Mode 'min', relative threshold; cuts the LR once more than ``patience``
    consecutive epochs fail to improve on the best loss."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 50,
                 threshold: float = 1e-4):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = np.inf
        self.num_bad_epochs = 0

    def step(self, metric: float) -> None:
        if metric < self.best * (1 - self.threshold):
            self.best = metric
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
        if self.num_bad_epochs > self.patience:
            self.optimizer.lr *= self.factor
            self.num_bad_epochs = 0


@dataclass
class TrainResult:
    params: MLPParams
    losses: list[float]
    learning_rates: list[float]


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise ValueError("dataset must contain both labels")
    return y


def train(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig(),
          seed: int = 0, params: MLPParams | None = None) -> TrainResult:
    """Minibatch Adam on mean BCE; the scheduler watches the full training loss."""
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if params is None:
        params = init_mlp(X.shape[1], config.hidden, seed=seed)
    else:
        params = params.copy()
    if X.shape[1] != params.weights[0].shape[0]:
        raise ValueError("input dimension does not match the network")
    flat = params.weights + params.biases
    opt = Adam([p.shape for p in flat], config.learning_rate, config.beta1, config.beta2,
               config.eps, config.weight_decay)
    sched = ReduceLROnPlateau(opt, config.plateau_factor, config.plateau_patience,
                              config.plateau_threshold)
    rng = np.random.default_rng(seed + 1)
    n = X.shape[0]
    losses, lrs = [], []
    for _ in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, gW, gb = loss_and_grad(params, X[idx], y[idx])
            opt.step(flat, gW + gb)
        z, _ = _logits(params, X)
        epoch_loss = bce_from_logits(z, y)
        losses.append(epoch_loss)
        lrs.append(opt.lr)
        sched.step(epoch_loss)
    return TrainResult(params, losses, lrs)


# -----------------------------------------------------------------------------
# Metrics

def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both labels")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class Metrics:
    accuracy: float
    auc: float
    false_unwatermarked_rate: float
    false_watermarked_rate: float
    n: int
    folds: list[dict] = field(default_factory=list)

    def to_record(self) -> dict:
        return asdict(self)


def compute_metrics(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> Metrics:
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    pred = (probs >= threshold).astype(int)
    pos, neg = y == 1, y == 0
    fu = float(np.mean(pred[pos] == 0)) if pos.any() else float("nan")
    fw = float(np.mean(pred[neg] == 1)) if neg.any() else float("nan")
    a = auc(probs, y) if pos.any() and neg.any() else float("nan")
    return Metrics(accuracy=float(np.mean(pred == y)), auc=a,
                   false_unwatermarked_rate=fu, false_watermarked_rate=fw, n=int(y.size))


def kfold_indices(n: int, k: int = 5, seed: int = 0, shuffle: bool = True) -> list[np.ndarray]:
    """Test-index arrays that partition ``range(n)``."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [np.sort(f) for f in np.array_split(order, k)]


FitPredict = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


def cross_validate(X: np.ndarray, y: np.ndarray, fit_predict: FitPredict, k: int = 5,
                   seed: int = 0) -> Metrics:
    """Out-of-fold predictions pooled into one Metrics record."""
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    folds = kfold_indices(len(y), k, seed)
    probs = np.empty(len(y))
    per_fold = []
    for fi, test in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(y)), test)
        probs[test] = fit_predict(X[train_idx], y[train_idx], X[test], seed + 1000 * (fi + 1))
        fm = compute_metrics(probs[test], y[test])
        per_fold.append({"fold": fi, "n": int(test.size), "accuracy": fm.accuracy,
                         "auc": fm.auc})
    metrics = compute_metrics(probs, y)
    metrics.folds = per_fold
    return metrics


def mlp_fit_predict(config: TrainConfig) -> FitPredict:
    def fit_predict(X_tr, y_tr, X_te, seed):
        return forward(train(X_tr, y_tr, config, seed=seed).params, X_te)
    return fit_predict


def kfold_evaluate(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig(),
                   k: int = 5, seed: int = 0) -> Metrics:
    return cross_validate(X, y, mlp_fit_predict(config), k=k, seed=seed)


# -----------------------------------------------------------------------------
# Grid search

def expand_grid(grid: dict[str, Sequence] = GRID, base: TrainConfig = TrainConfig()
                ) -> list[TrainConfig]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty grid")
    keys = list(grid)
    return [replace(base, **dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


def stratified_split(y: np.ndarray, val_fraction: float = 0.2, seed: int = 0
                     ) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for label in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == label))
        n_val = max(1, int(round(val_fraction * idx.size)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


@dataclass
class GridResult:
    best: TrainConfig
    scores: list[tuple[TrainConfig, float]]


def select_best(scores: Sequence[tuple[TrainConfig, float]]) -> TrainConfig:
    """Highest score; ties go to lower learning rate, then lower weight decay,
    then the earlier grid position."""
    ranked = sorted(enumerate(scores),
                    key=lambda it: (-it[1][1], it[1][0].learning_rate,
                                    it[1][0].weight_decay, it[0]))
    return ranked[0][1][0]


def grid_search(X: np.ndarray, y: np.ndarray, grid: dict[str, Sequence] = GRID,
                base: TrainConfig = TrainConfig(), k: int = 5, seed: int = 0) -> GridResult:
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if len(y) < 2 * k:
        raise ValueError(f"grid search needs at least {2 * k} samples")
    configs = expand_grid(grid, base)
    tr, va = stratified_split(y, 0.2, seed)
    scores = []
    for cfg in configs:
        p = forward(train(X[tr], y[tr], cfg, seed=seed).params, X[va])
        acc = float(np.mean((p >= 0.5) == (y[va] == 1)))
        scores.append((cfg, acc))
        logger.debug("grid %s -> %.4f", cfg, acc)
    return GridResult(select_best(scores), scores)


# -----------------------------------------------------------------------------
# Logistic regression baseline

@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=np.float64) @ self.weights + self.bias)


def logistic_objective(model: LogisticModel, X: np.ndarray, y: np.ndarray, l2: float
                       ) -> tuple[float, np.ndarray]:
    """Mean BCE + (l2/2)||w||^2 and its gradient over ``[w, b]`` (bias unpenalised)."""
    z = X @ model.weights + model.bias
    r = sigmoid(z) - y
    loss = bce_from_logits(z, y) + 0.5 * l2 * float(model.weights @ model.weights)
    gw = X.T @ r / len(y) + l2 * model.weights
    gb = r.mean()
    return loss, np.concatenate([gw, [gb]])


def logistic_train(X: np.ndarray, y: np.ndarray, l2: float = 1e-2, max_iter: int = 100,
                   tol: float = 1e-10) -> LogisticModel:
    """Damped Newton iterations on the L2-regularised logistic loss."""
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if l2 <= 0:
        raise ValueError("l2 must be positive")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    model = LogisticModel(np.zeros(d), 0.0)
    loss, grad = logistic_objective(model, X, y, l2)
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            break
        p = sigmoid(Xa @ np.concatenate([model.weights, [model.bias]]))
        s = p * (1 - p) / n
        H = (Xa * s[:, None]).T @ Xa + np.diag(reg) + 1e-12 * np.eye(d + 1)
        step = np.linalg.solve(H, grad)
        t = 1.0
        theta = np.concatenate([model.weights, [model.bias]])
        while t > 1e-8:
            cand = theta - t * step
            trial = LogisticModel(cand[:-1], float(cand[-1]))
            new_loss, new_grad = logistic_objective(trial, X, y, l2)
            if new_loss <= loss:
                break
            t *= 0.5
        else:
            break
        model, loss, grad = trial, new_loss, new_grad
    return model


def logistic_evaluate(X: np.ndarray, y: np.ndarray, l2: float = 1e-2, k: int = 5,
                      seed: int = 0) -> Metrics:
    def fit_predict(X_tr, y_tr, X_te, _seed):
        return logistic_train(X_tr, y_tr, l2).predict_proba(X_te)
    return cross_validate(X, y, fit_predict, k=k, seed=seed)


def save_metrics(metrics: Metrics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics.to_record(), indent=2, sort_keys=True) + "\n")
