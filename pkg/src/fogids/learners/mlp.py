"""Multi-layer perceptron: ReLU hidden layers, softmax output, cross-entropy loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceError, SchemaError, TrainingError
from .common import check_width


@dataclass(frozen=True)
class MlpParams:
    hidden: tuple = (64,)
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    optimizer: str = "sgd"      # "sgd" or "adam"
    momentum: float = 0.0       # sgd only
    init: str = "he"            # "he" or "zeros"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("he", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("learning_rate > 0, epochs >= 0 and batch_size >= 1 are required")


@dataclass
class MlpModel:
    weights: list
    biases: list
    params: MlpParams
    schema_hash: str = ""
    loss_history: list = field(default_factory=list)

    kind = "mlp"

    @property
    def n_features(self):
        return self.weights[0].shape[0]

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self):
        return [self.n_features] + [w.shape[1] for w in self.weights]

    def _forward(self, X):
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        return acts, logits

    def predict_proba(self, X):
        X = check_width(self, X)
        _, logits = self._forward(X)
        return softmax(logits)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def loss_and_grads(self, X, y):
        """Mean cross-entropy and its gradients (dW list, db list)."""
        acts, logits = self._forward(X)
        logp = log_softmax(logits)
        n = len(X)
        loss = -logp[np.arange(n), y].mean()
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        for li in range(len(self.weights) - 1, -1, -1):
            gW[li] = acts[li].T @ delta
            gb[li] = delta.sum(axis=0)
            if li:
                delta = (delta @ self.weights[li].T) * (acts[li] > 0)
        return float(loss), gW, gb

    def parameters(self):
        return [*self.weights, *self.biases]

    def get_state(self):
        meta = {"params": asdict(self.params), "schema_hash": self.schema_hash,
                "n_layers": len(self.weights), "loss_history": [float(v) for v in self.loss_history]}
        arrays = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"], arrays[f"b{i}"] = W, b
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        n = meta["n_layers"]
        p = dict(meta["params"])
        p["hidden"] = tuple(p["hidden"])
        return cls([arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)],
                   MlpParams(**p), meta["schema_hash"], list(meta["loss_history"]))


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def init_mlp(n_inputs, n_classes, params: MlpParams = MlpParams()) -> MlpModel:
    sizes = [n_inputs, *params.hidden, n_classes]
    rng = np.random.default_rng(params.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if params.init == "zeros":
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, params)


class _Optimizer:
    def __init__(self, model: MlpModel, params: MlpParams):
        self.p = params
        self.state = [np.zeros_like(a) for a in model.parameters()]
        self.state2 = [np.zeros_like(a) for a in model.parameters()]
        self.t = 0

    def step(self, model, grads):
        self.t += 1
        lr = self.p.learning_rate
        for i, (a, g) in enumerate(zip(model.parameters(), grads)):
            if self.p.optimizer == "sgd":
                if self.p.momentum:
                    self.state[i] = self.p.momentum * self.state[i] - lr * g
                    a += self.state[i]
                else:
                    a -= lr * g
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.state[i] = b1 * self.state[i] + (1 - b1) * g
                self.state2[i] = b2 * self.state2[i] + (1 - b2) * g * g
                mhat = self.state[i] / (1 - b1 ** self.t)
                vhat = self.state2[i] / (1 - b2 ** self.t)
                a -= lr * mhat / (np.sqrt(vhat) + eps)


def fit_mlp(model: MlpModel, X, y, epochs=None, max_steps=None):
    """Mini-batch training in place. Returns the model.

    Shuffling uses a generator derived from the model seed, so a given
    (model, data, params) triple always produces the same weights.
    """
    p = model.params
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng([p.seed, 1])
    opt = _Optimizer(model, p)
    steps = 0
    for epoch in range(p.epochs if epochs is None else epochs):
        perm = rng.permutation(len(X))
        total = 0.0
        for bi, s in enumerate(range(0, len(X), p.batch_size)):
            idx = perm[s:s + p.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, bi, loss)
            opt.step(model, [*gW, *gb])
            total += loss * len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                return model
        model.loss_history.append(total / len(X))
    for a in model.parameters():
        if not np.all(np.isfinite(a)):
            raise DivergenceError(len(model.loss_history), -1, float("nan"))
    return model


def train_mlp(data, params: MlpParams = MlpParams()) -> MlpModel:
    if data.labels is None:
        raise SchemaError("training matrix has no labels")
    if data.n_rows == 0:
        raise TrainingError("cannot train an MLP on empty data")
    model = init_mlp(data.n_cols, data.n_classes, params)
    model.schema_hash = data.schema_hash
    return fit_mlp(model, data.values, data.labels)


def predict_mlp(model: MlpModel, instance) -> np.ndarray:
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise SchemaError("predict_mlp takes a single instance")
    return model.predict_proba(x)[0]
