"""Linear and one-hidden-layer predictors with exact analytic gradients.

Parameters live in one flat vector. Linear: ``[w (d), b]``. MLP:
``[W1 (d*h, row-major), b1 (h), W2 (h), b2]``. Outputs are scalar: a logit for
the logistic loss, a real prediction for the squared loss ``(f - y)^2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, InvalidInputError

LINEAR = "linear"
MLP = "mlp"
LOGISTIC = "logistic"
SQUARED = "squared"

_ACT = {"tanh": kernels.ACT_TANH, "relu": kernels.ACT_RELU}
_LOSS = {LOGISTIC: kernels.LOSS_LOGISTIC, SQUARED: kernels.LOSS_SQUARED}


@dataclass(frozen=True)
class ModelSpec:
    arch: str = LINEAR
    hidden: int = 16
    activation: str = "tanh"

    def __post_init__(self):
        if self.arch not in (LINEAR, MLP):
            raise InvalidInputError(f"unknown arch {self.arch!r}")
        if self.activation not in _ACT:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.arch == MLP and self.hidden < 1:
            raise InvalidInputError("hidden width must be >= 1")


@dataclass
class Predictor:
    arch: str
    input_dim: int
    theta: np.ndarray
    hidden: int = 0
    activation: str = "tanh"
    output_dim: int = 1

    def __post_init__(self):
        if self.output_dim != 1:
            raise InvalidInputError("only scalar outputs are supported")
        if self.arch == LINEAR:
            self.hidden = 0
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        expected = param_count(self.arch, self.input_dim, self.hidden)
        if self.theta.shape != (expected,):
            raise InvalidInputError(f"theta has shape {self.theta.shape}, arch needs ({expected},)")

    @property
    def spec(self):
        return ModelSpec(self.arch, self.hidden or 16, self.activation)

    def with_theta(self, theta):
        return Predictor(self.arch, self.input_dim, theta, self.hidden, self.activation)

    def to_dict(self):
        return {
            "arch": self.arch,
            "dims": {"input": self.input_dim, "hidden": self.hidden, "output": self.output_dim},
            "activation": self.activation,
            "theta": [float(t) for t in self.theta],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            dims = doc["dims"]
            return cls(
                arch=doc["arch"],
                input_dim=int(dims["input"]),
                hidden=int(dims.get("hidden", 0)),
                output_dim=int(dims.get("output", 1)),
                activation=doc.get("activation", "tanh"),
                theta=np.asarray(doc["theta"], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad checkpoint: {exc}") from None


def param_count(arch, d, hidden):
    if arch == LINEAR:
        return d + 1
    return d * hidden + 2 * hidden + 1


def init_predictor(spec, input_dim, rng):
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` per layer, biases included."""
    d = int(input_dim)
    if spec.arch == LINEAR:
        a = 1.0 / np.sqrt(d)
        theta = rng.uniform(-a, a, size=d + 1)
        return Predictor(LINEAR, d, theta)
    h = spec.hidden
    a1, a2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
    theta = np.concatenate(
        [rng.uniform(-a1, a1, size=d * h + h), rng.uniform(-a2, a2, size=h + 1)]
    )
    return Predictor(MLP, d, theta, hidden=h, activation=spec.activation)


def _check_batch(model, X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidInputError(f"X has shape {X.shape}, model expects (n, {model.input_dim})")
    if np.isnan(X).any():
        raise InvalidInputError("X contains NaN")
    if y is None:
        return X
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0] or y.shape[0] == 0:
        raise InvalidInputError(f"{X.shape[0]} rows but {y.shape[0]} targets")
    if np.isnan(y).any():
        raise InvalidInputError("y contains NaN")
    return X, y


def _unpack_mlp(model):
    d, h = model.input_dim, model.hidden
    t = model.theta
    W1 = t[: d * h].reshape(d, h)
    b1 = t[d * h : d * h + h]
    W2 = t[d * h + h : d * h + 2 * h]
    return W1, b1, W2, t[-1]


def hidden_activations(model, X):
    X = _check_batch(model, X)
    if model.arch == LINEAR:
        return X
    W1, b1, _, _ = _unpack_mlp(model)
    a = X @ W1 + b1
    return np.tanh(a) if model.activation == "tanh" else np.maximum(a, 0.0)


def forward(model, X):
    """Logits (classification) or predictions (regression), one per row."""
    X = _check_batch(model, X)
    if model.arch == LINEAR:
        return X @ model.theta[:-1] + model.theta[-1]
    _, _, W2, b2 = _unpack_mlp(model)
    return hidden_activations(model, X) @ W2 + b2


def loss_and_grad(model, X, y, loss):
    """Mean loss over the batch and its gradient w.r.t. ``model.theta``."""
    X, y = _check_batch(model, X, y)
    if loss not in _LOSS:
        raise InvalidInputError(f"unknown loss {loss!r}")
    return kernels.loss_grad(model.theta, X, y, model.hidden, _ACT[model.activation], _LOSS[loss])


def batch_loss(model, X, y, loss):
    return loss_and_grad(model, X, y, loss)[0]


def batch_grad(model, X, y, loss):
    return loss_and_grad(model, X, y, loss)[1]


def save_checkpoint(model, path, extra=None):
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    return Predictor.from_dict(doc)
