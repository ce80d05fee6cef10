"""Three-hidden-layer perceptron (64, 256, 512 units) with a 2-way softmax output."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import ops
from ..optim import Adam
from ..rng import generator
from ..tensor import Tensor, backward, parameter

HIDDEN = (64, 256, 512)


class MlpDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"MLP loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = HIDDEN
    dropout: float = 0.5
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # W0, b0, W1, b1, ... ; W has shape (in, out)
    x_mean: np.ndarray
    x_scale: np.ndarray
    config: MlpConfig = field(default_factory=MlpConfig)
    loss_history: list[float] = field(default_factory=list)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[0::2])


def init_weights(n_in: int, hidden=HIDDEN, seed: int = 0) -> list[np.ndarray]:
    rng = generator(seed, "mlp-init")
    sizes = [n_in, *hidden, 2]
    out = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / a)
        out.append(rng.uniform(-bound, bound, size=(a, b)))
        out.append(np.zeros(b))
    return out


def forward(params: list[Tensor], x: Tensor, dropout: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """Logits of shape (n, 2)."""
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = ops.dense(h, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1:
            h = ops.relu(h)
            h = ops.dropout(h, dropout, rng, training=training)
    return h


def onehot(y) -> np.ndarray:
    y = np.asarray(y).astype(int)
    out = np.zeros((y.size, 2))
    out[np.arange(y.size), y] = 1.0
    return out


def mlp_train(X, y, cfg: MlpConfig | None = None) -> MlpModel:
    """Minimize softmax cross-entropy (binary, one-hot targets) with Adam."""
    cfg = cfg or MlpConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"X {X.shape} and y {y.shape} disagree")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    params = [parameter(w) for w in init_weights(X.shape[1], cfg.hidden, cfg.seed)]
    opt = Adam(params, lr=cfg.lr)
    targets = onehot(y)
    n = y.size
    history = []
    for epoch in range(cfg.epochs):
        rng = generator(cfg.seed, "mlp-epoch", epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = forward(params, Tensor(Xs[idx]), cfg.dropout, rng, training=True)
            loss = ops.softmax_cross_entropy(logits, targets[idx])
            if not np.isfinite(loss.item()):
                raise MlpDiverged(epoch)
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += loss.item() * idx.size
        history.append(total / n)
    return MlpModel([p.data.copy() for p in params], mean, scale, cfg, history)


def mlp_predict(model: MlpModel, X) -> np.ndarray:
    """Class probabilities, shape (n, 2); dropout is off."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xs = (X - model.x_mean) / model.x_scale
    logits = forward([Tensor(w) for w in model.weights], Tensor(Xs))
    return ops.softmax(logits, axis=1).data
