"""Two-hidden-layer ReLU network trained on mean squared error, in plain numpy."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from metashap.dataset import Scaler, fit_scaler
from metashap.errors import DomainError


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple = (64, 64)
    optimizer: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 0.0025
    weight_decay: float = 0.0
    epochs: int = 1000
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # feature columns passed through log10 before standardisation (E spans decades)
    log_inputs: tuple = (0,)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["log_inputs"] = list(self.log_inputs)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["hidden"] = tuple(data["hidden"])
        data["log_inputs"] = tuple(data.get("log_inputs", ()))
        return cls(**data)


# Settings reported for the phononic surrogates.
BRAGG_CUTOFF_CONFIG = MlpConfig(optimizer="adam", learning_rate=0.0025, weight_decay=0.3, epochs=10000)
BRAGG_WIDTH_CONFIG = MlpConfig(optimizer="adam", learning_rate=0.0008, weight_decay=0.5, epochs=25000)
# Sonic surrogates: cut-off on the full batch, width with SGD mini-batches of 64.
SONIC_CUTOFF_CONFIG = MlpConfig(optimizer="adam", learning_rate=0.0002, epochs=12500)
SONIC_WIDTH_CONFIG = MlpConfig(optimizer="sgd", learning_rate=0.0002, epochs=1500, batch_size=64)


def input_transform(X, log_inputs):
    X = np.array(X, dtype=float, ndmin=2)
    if log_inputs:
        cols = list(log_inputs)
        if np.any(X[:, cols] <= 0):
            raise DomainError("log-transformed features must be positive")
        X[:, cols] = np.log10(X[:, cols])
    return X


def init_params(sizes, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return params


def forward(params, X):
    """Network output and the cached activations needed for backprop."""
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        z = h @ W + b
        h = z if layer == n_layers - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return h[:, 0], acts


def loss_and_grad(params, X, y):
    """Mean squared error and its gradient with respect to every parameter."""
    out, acts = forward(params, X)
    resid = out - y
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(resid**2))
    n_layers = len(params) // 2
    grads = [None] * len(params)
    delta = (2.0 / len(y)) * resid[:, None]
    for layer in reversed(range(n_layers)):
        grads[2 * layer] = acts[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer:
            delta = (delta @ params[2 * layer].T) * (acts[layer] > 0)
    return loss, grads


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class MlpModel:
    params: tuple
    config: MlpConfig
    scaler: Scaler
    history: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return [self.params[0].shape[0]] + [W.shape[1] for W in self.params[0::2]]

    def predict(self, X):
        Z = self.scaler.transform(input_transform(X, self.config.log_inputs))
        out, _ = forward(self.params, Z)
        return out

    def to_dict(self):
        return {
            "kind": "mlp",
            "layer_sizes": self.sizes,
            "params": [p.tolist() for p in self.params],
            "config": self.config.to_dict(),
            "scaler": self.scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            tuple(np.array(p, dtype=float) for p in data["params"]),
            MlpConfig.from_dict(data["config"]),
            Scaler.from_dict(data["scaler"]),
        )


def _step_adam(params, grads, state, cfg, t):
    m, v = state
    lr = cfg.learning_rate
    for i, (p, g) in enumerate(zip(params, grads)):
        # decoupled weight decay, applied before the moment update
        if cfg.weight_decay:
            p *= 1.0 - lr * cfg.weight_decay
        m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g
        v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g
        m_hat = m[i] / (1 - cfg.beta1**t)
        v_hat = v[i] / (1 - cfg.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _step_sgd(params, grads, cfg):
    lr = cfg.learning_rate
    for p, g in zip(params, grads):
        if cfg.weight_decay:
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * g


def fit_mlp(X_train, y_train, X_val=None, y_val=None, config=MlpConfig(), scaler=None):
    """Train on raw ratios. Columns in ``config.log_inputs`` are log10-mapped,
    then all features are standardised with ``scaler`` (fitted on the training
    rows when not given). Records per-epoch train/validation MSE.
    """
    if config.learning_rate <= 0:
        raise DomainError("learning rate must be positive")
    if config.optimizer not in ("adam", "sgd"):
        raise DomainError(f"unknown optimizer {config.optimizer!r}")
    X_train = input_transform(X_train, config.log_inputs)
    y_train = np.asarray(y_train, dtype=float).ravel()
    scaler = scaler or fit_scaler(X_train)
    Z = scaler.transform(X_train)
    Zv = None if X_val is None else scaler.transform(input_transform(X_val, config.log_inputs))
    yv = None if y_val is None else np.asarray(y_val, dtype=float).ravel()

    rng = np.random.default_rng(config.seed)
    params = init_params([Z.shape[1], *config.hidden, 1], rng)
    state = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    history = {"train": [], "validation": []}
    n = len(y_train)
    batch = n if config.batch_size is None else min(config.batch_size, n)
    t = 0
    for epoch in range(config.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        sq_sum = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grad(params, Z[idx], y_train[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
            sq_sum += loss * len(idx)
            t += 1
            if config.optimizer == "adam":
                _step_adam(params, grads, state, config, t)
            else:
                _step_sgd(params, grads, config)
        history["train"].append(sq_sum / n)
        if Zv is not None:
            val_out, _ = forward(params, Zv)
            history["validation"].append(float(np.mean((val_out - yv) ** 2)))
    return MlpModel(tuple(params), config, scaler, history)


def with_epochs(config, epochs):
    return replace(config, epochs=epochs)
