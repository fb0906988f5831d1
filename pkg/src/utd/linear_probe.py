"""Multinomial logistic regression probe and deterministic bootstrap.

The probe measures how much of a benchmark is solvable from train-split
correlations alone: it fits mean cross-entropy plus an L2 penalty on the
weight matrix (bias unpenalized) over unit-norm embedding features. The
optimizer is a hand-rolled L-BFGS with Armijo backtracking, full-batch and
entirely deterministic: identical inputs and config reproduce the model
bit for bit, and the loss never increases across accepted steps.

Bootstrap resampling uses numpy's PCG64 stream, which is documented and
stable across platforms, so recorded seeds fully determine the resample.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateInput,
    DimensionMismatch,
    ParseError,
    PreconditionError,
)

_MAGIC = b"UTDM"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-6  # on the gradient norm
    seed: int = 0
    optimizer: str = "lbfgs"
    history: int = 10

    def __post_init__(self):
        if self.l2 < 0:
            raise PreconditionError("l2 must be >= 0")
        if self.max_iter < 1:
            raise PreconditionError("max_iter must be >= 1")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray  # (classes, dim) float32
    bias: np.ndarray  # (classes,) float32
    config: TrainConfig
    train_accuracy: float
    iterations: int = 0
    converged: bool = True

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


def bootstrap_sample(n: int, seed: int) -> np.ndarray:
    """Length-n with-replacement index draw, fully determined by the seed."""
    if n < 1:
        raise PreconditionError("bootstrap_sample needs n >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.integers(0, n, size=n, dtype=np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    params: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy + (l2/2)*||W||_F^2 and its analytic gradient."""
    n, dim = X.shape
    W = params[: n_classes * dim].reshape(n_classes, dim)
    b = params[n_classes * dim :]
    logits = X @ W.T + b
    log_probs = _log_softmax(logits)
    loss = -float(log_probs[np.arange(n), y].sum()) / n + 0.5 * l2 * float((W * W).sum())
    probs = np.exp(log_probs)
    probs[np.arange(n), y] -= 1.0
    probs /= n
    grad_W = probs.T @ X + l2 * W
    grad_b = probs.sum(axis=0)
    return loss, np.concatenate([grad_W.ravel(), grad_b])


def _two_loop_direction(
    grad: np.ndarray,
    s_hist: list[np.ndarray],
    y_hist: list[np.ndarray],
    rho_hist: list[float],
) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        alpha = rho * float(np.dot(s, q))
        q -= alpha * y
        alphas.append(alpha)
    if s_hist:
        gamma = float(np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1]))
        q *= gamma
    for (s, y, rho), alpha in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        beta = rho * float(np.dot(y, q))
        q += (alpha - beta) * s
    return -q


def _minimize(fun, x0: np.ndarray, max_iter: int, tol: float, history: int):
    """L-BFGS with Armijo backtracking; accepted steps never raise the loss."""
    x = x0
    f, g = fun(x)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= tol:
            return x, f, iterations, True
        direction = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        descent = float(np.dot(direction, g))
        if descent >= 0.0:
            direction = -g
            descent = -float(np.dot(g, g))
        step = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + step * direction
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * descent:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return x, f, iterations, False
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        iterations += 1
    return x, f, iterations, float(np.linalg.norm(g)) <= tol


def train_softmax(
    X, y, n_classes: int, cfg: TrainConfig = TrainConfig()
) -> LinearModel:
    """Fit the regularized softmax probe; deterministic given (X, y, cfg).

    Classes absent from y are allowed: their rows stay near zero under the
    L2 pull so panel members keep a shared label space.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise PreconditionError(f"bad training shapes X{X.shape} y{y.shape}")
    if X.shape[0] < 1:
        raise PreconditionError("empty training set")
    if n_classes < 2:
        raise PreconditionError("need at least 2 declared classes")
    if not np.all(np.isfinite(X)):
        raise DegenerateInput("training features contain NaN/Inf")
    if y.min() < 0 or y.max() >= n_classes:
        raise DegenerateInput(f"labels outside [0, {n_classes})")

    dim = X.shape[1]
    x0 = np.zeros(n_classes * dim + n_classes, dtype=np.float64)
    params, _, iterations, converged = _minimize(
        lambda p: loss_and_grad(p, X, y, n_classes, cfg.l2),
        x0,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        history=cfg.history,
    )
    W = params[: n_classes * dim].reshape(n_classes, dim)
    b = params[n_classes * dim :]
    train_pred = np.argmax(X @ W.T + b, axis=1)
    return LinearModel(
        weights=W.astype(np.float32),
        bias=b.astype(np.float32),
        config=cfg,
        train_accuracy=float(np.mean(train_pred == y)),
        iterations=iterations,
        converged=converged,
    )


def predict_proba(model: LinearModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"input shape {x.shape}, model dim {model.dim}")
    logits = model.weights.astype(np.float64) @ x + model.bias.astype(np.float64)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def predict(model: LinearModel, x) -> int:
    return int(np.argmax(predict_proba(model, x)))


def predict_proba_batch(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatch(f"input shape {X.shape}, model dim {model.dim}")
    logits = X @ model.weights.astype(np.float64).T + model.bias.astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_batch(model: LinearModel, X) -> np.ndarray:
    return np.argmax(predict_proba_batch(model, X), axis=1)


def save_model(model: LinearModel, path: str | Path) -> None:
    """Binary model file: JSON header + little-endian float32 parameters."""
    header = {
        "classes": model.n_classes,
        "dim": model.dim,
        "seed": model.config.seed,
        "config": {
            "l2": model.config.l2,
            "max_iter": model.config.max_iter,
            "tol": model.config.tol,
            "optimizer": model.config.optimizer,
            "history": model.config.history,
        },
        "train_accuracy": model.train_accuracy,
        "iterations": model.iterations,
        "converged": model.converged,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.bias.astype("<f4").tobytes())


def load_model(path: str | Path) -> LinearModel:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ParseError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported model version {version}")
    (header_len,) = struct.unpack_from("<I", data, 6)
    offset = 10
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    n_classes, dim = int(header["classes"]), int(header["dim"])
    W = np.frombuffer(data, dtype="<f4", count=n_classes * dim, offset=offset).reshape(
        n_classes, dim
    )
    offset += 4 * n_classes * dim
    b = np.frombuffer(data, dtype="<f4", count=n_classes, offset=offset)
    cfg = TrainConfig(seed=int(header["seed"]), **header["config"])
    return LinearModel(
        weights=W.copy(),
        bias=b.copy(),
        config=cfg,
        train_accuracy=float(header["train_accuracy"]),
        iterations=int(header["iterations"]),
        converged=bool(header["converged"]),
    )
