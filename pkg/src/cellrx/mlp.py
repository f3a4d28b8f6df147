"""Three-layer MLP classifier over cell embeddings.

The head is h1 = ReLU(W1 x + b1), h2 = ReLU(W2 h1 + b2),
y_hat = Sigmoid(W3 h2 + b3), trained with binary cross-entropy. Weights are
stored row-major per layer (W1 is h1×d), and batches compute X @ W.T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import binio
from .errors import DataError, DegenerateDataError, ParameterError, ShapeError
from .optim import make_optimizer
from .rng import make_rng
from .validation import as_binary_labels, as_float_matrix

BCE_EPS = 1e-7
DECISION_THRESHOLD = 0.5


@dataclass
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"MLP parameter {name} contains non-finite values")
        h1, d = self.w1.shape
        h2 = self.w2.shape[0]
        if self.b1.shape != (h1,) or self.w2.shape != (h2, h1) or self.b2.shape != (h2,):
            raise ShapeError("hidden-layer shapes inconsistent")
        if self.w3.shape != (1, h2) or self.b3.shape != (1,):
            raise ShapeError("output-layer shapes inconsistent")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}

    def count(self) -> int:
        return sum(arr.size for arr in self.as_dict().values())


def init_mlp(input_dim: int, hidden1: int, hidden2: int, seed: int) -> MlpParams:
    if min(input_dim, hidden1, hidden2) < 1:
        raise ParameterError("all layer sizes must be >= 1")
    rng = make_rng(seed, 11)

    def draw(fan_in, *shape):
        return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)

    return MlpParams(
        w1=draw(input_dim, hidden1, input_dim),
        b1=np.zeros(hidden1),
        w2=draw(hidden1, hidden2, hidden1),
        b2=np.zeros(hidden2),
        w3=draw(hidden2, 1, hidden2),
        b3=np.zeros(1),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected (n, {params.input_dim}) inputs, got shape {X.shape}")
    a1 = np.maximum(X @ params.w1.T + params.b1, 0.0)
    a2 = np.maximum(a1 @ params.w2.T + params.b2, 0.0)
    return _sigmoid(a2 @ params.w3.T + params.b3)[:, 0]


def forward(params: MlpParams, x: np.ndarray) -> float:
    """Probability of the positive (drug-sensitive) class for one embedding."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"forward expects a vector, got shape {x.shape}")
    return float(forward_batch(params, x[None, :])[0])


def bce_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat)))


def grad_with_input(
    params: MlpParams, X: np.ndarray, y: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray, float]:
    """Mean-over-batch BCE gradients for parameters and inputs, plus the loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("grad requires a non-empty (n, d) batch")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} inputs vs {y.shape[0]} labels")
    n = X.shape[0]

    z1 = X @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    p = _sigmoid(a2 @ params.w3.T + params.b3)[:, 0]

    dz3 = (p - y)[:, None] / n
    dw3 = dz3.T @ a2
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ params.w3
    dz2 = da2 * (z2 > 0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    dz1 = da1 * (z1 > 0)
    dw1 = dz1.T @ X
    db1 = dz1.sum(axis=0)
    dX = dz1 @ params.w1
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}
    return grads, dX, bce_loss(p, y)


def grad(params: MlpParams, X: np.ndarray, y: np.ndarray) -> tuple[dict[str, np.ndarray], float]:
    """Mean-over-batch BCE gradient via exact backprop; returns (grads, loss)."""
    grads, _, loss = grad_with_input(params, X, y)
    return grads, loss


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    hidden1: int = 256
    hidden2: int = 64
    standardize: bool = True
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ParameterError(f"max_steps must be >= 0, got {self.max_steps}")


@dataclass
class TrainedHead:
    params: MlpParams
    loss_curve: list[float]
    config: TrainConfig
    scaler_mean: np.ndarray | None = None
    scaler_std: np.ndarray | None = None

    def apply_scaler(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.scaler_mean is None:
            return X
        return (X - self.scaler_mean) / self.scaler_std


def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension z-score statistics; zero-spread dimensions keep scale 1."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def _training_matrix(embeddings) -> np.ndarray:
    data = embeddings.data if hasattr(embeddings, "data") else embeddings
    return as_float_matrix(np.asarray(data, dtype=np.float64), "embeddings")


def check_both_classes(y: np.ndarray) -> None:
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateDataError(
            f"training data contains a single class ({classes.tolist()}); cannot fit"
        )


def train_frozen(embeddings, labels, config: TrainConfig | None = None) -> TrainedHead:
    """Train the head on frozen embeddings; the embeddings are never mutated."""
    config = config or TrainConfig()
    X = _training_matrix(embeddings)
    y = as_binary_labels(labels, "labels")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} embeddings vs {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise DegenerateDataError("need at least 2 training cells")
    check_both_classes(y)

    scaler_mean = scaler_std = None
    if config.standardize:
        scaler_mean, scaler_std = fit_scaler(X)
        X = (X - scaler_mean) / scaler_std

    params = init_mlp(X.shape[1], config.hidden1, config.hidden2, config.seed)
    opt = make_optimizer(config.optimizer, config.learning_rate, config.betas, config.eps)
    shuffle_rng = make_rng(config.seed, 12)
    param_dict = params.as_dict()

    steps = 0
    loss_curve: list[float] = []
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(X.shape[0])
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            if config.max_steps is not None and steps >= config.max_steps:
                break
            idx = order[lo : lo + config.batch_size]
            grads, loss = grad(params, X[idx], y[idx])
            opt.step(param_dict, grads)
            epoch_losses.append(loss)
            steps += 1
        loss_curve.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        if config.max_steps is not None and steps >= config.max_steps:
            break
    return TrainedHead(params, loss_curve, config, scaler_mean, scaler_std)


def predict(head: TrainedHead, embeddings) -> np.ndarray:
    """Rowwise sensitivity probabilities for an embedding matrix."""
    data = embeddings.data if hasattr(embeddings, "data") else embeddings
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D embedding matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return forward_batch(head.params, head.apply_scaler(X))


def save_head(head: TrainedHead, path) -> None:
    arrays = dict(head.params.as_dict())
    arrays["loss_curve"] = np.asarray(head.loss_curve, dtype=np.float64)
    meta = {
        "config": {
            **{k: getattr(head.config, k) for k in (
                "learning_rate", "epochs", "batch_size", "seed", "optimizer",
                "eps", "hidden1", "hidden2", "standardize",
            )},
            "betas": list(head.config.betas),
            "max_steps": head.config.max_steps,
        },
        "standardized": head.scaler_mean is not None,
    }
    if head.scaler_mean is not None:
        arrays["scaler_mean"] = head.scaler_mean
        arrays["scaler_std"] = head.scaler_std
    binio.save_arrays(path, "mlp_head", arrays, meta)


def load_head(path) -> TrainedHead:
    kind, arrays, meta = binio.load_arrays(path)
    if kind != "mlp_head":
        raise DataError(f"expected an mlp_head sidecar, found kind {kind!r}")
    cfg_meta = dict(meta["config"])
    cfg_meta["betas"] = tuple(cfg_meta["betas"])
    config = TrainConfig(**cfg_meta)
    params = MlpParams(*(arrays[k] for k in ("w1", "b1", "w2", "b2", "w3", "b3")))
    return TrainedHead(
        params,
        arrays["loss_curve"].tolist(),
        config,
        arrays.get("scaler_mean"),
        arrays.get("scaler_std"),
    )


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """Estimator-style wrapper: fit(X, y) / predict_proba(X) / predict(X)."""

    def __init__(
        self,
        hidden1: int = 256,
        hidden2: int = 64,
        learning_rate: float = 1e-3,
        epochs: int = 20,
        batch_size: int = 64,
        seed: int = 0,
        optimizer: str = "adam",
        standardize: bool = True,
    ):
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.optimizer = optimizer
        self.standardize = standardize

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            optimizer=self.optimizer,
            hidden1=self.hidden1,
            hidden2=self.hidden2,
            standardize=self.standardize,
        )

    def fit(self, X, y):
        X = as_float_matrix(X, "X")
        y = as_binary_labels(y, "y")
        self.head_ = train_frozen(X, y, self._config())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        X = as_float_matrix(X, "X")
        p = predict(self.head_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= DECISION_THRESHOLD).astype(np.int64)
