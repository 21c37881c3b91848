"""Gaze model ``G = W(F(x))``: one tanh hidden layer and an affine head.

The head emits polar gaze in radians; everything exposed to callers is in
degrees or unit vectors.  Training minimizes ``1 - cos`` of the angle between
prediction and label, which has the same minimizer as the angular loss but
a bounded gradient at zero error.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .errors import NonFiniteLoss, OutOfFrustumWarning
from .geometry import angular_error, polar_to_vector

MAX_PITCH_DEG = 89.9


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 126
    seed: int = 0
    hidden_dim: int = 64
    cosine_schedule: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.hidden_dim < 2:
            raise ValueError("hidden_dim must be >= 2")


@dataclass
class ModelParams:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (2, H), rows: pitch, yaw (radians)
    b2: np.ndarray  # (2,)

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def hidden(self, x) -> np.ndarray:
        return np.tanh(np.asarray(x, dtype=float) @ self.w1.T + self.b1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def with_flat(self, theta) -> "ModelParams":
        h, d = self.w1.shape
        sizes = np.cumsum([h * d, h, 2 * h])
        w1, b1, w2, b2 = np.split(np.asarray(theta, dtype=float), sizes)
        return ModelParams(w1.reshape(h, d), b1, w2.reshape(2, h), b2)

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.ravel().tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        h, dim = int(d["hidden_dim"]), int(d["feature_dim"])
        return cls(
            np.array(d["w1"], dtype=float).reshape(h, dim),
            np.array(d["b1"], dtype=float),
            np.array(d["w2"], dtype=float).reshape(2, h),
            np.array(d["b2"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_params(feature_dim: int, hidden_dim: int, rng: np.random.Generator) -> ModelParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
    a1 = 1.0 / math.sqrt(feature_dim)
    a2 = 1.0 / math.sqrt(hidden_dim)
    return ModelParams(
        rng.uniform(-a1, a1, (hidden_dim, feature_dim)),
        rng.uniform(-a1, a1, hidden_dim),
        rng.uniform(-a2, a2, (2, hidden_dim)),
        rng.uniform(-a2, a2, 2),
    )


def init_head(hidden_dim: int, rng: np.random.Generator) -> tuple:
    a2 = 1.0 / math.sqrt(hidden_dim)
    return rng.uniform(-a2, a2, (2, hidden_dim)), rng.uniform(-a2, a2, 2)


def _polar_vectors(out):
    """Unit vectors and their derivatives w.r.t. (pitch, yaw) in radians."""
    theta, phi = out[:, 0], out[:, 1]
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    v = np.stack([-ct * sp, -st, -ct * cp], axis=1)
    dv_dtheta = np.stack([st * sp, -ct, st * cp], axis=1)
    dv_dphi = np.stack([-ct * cp, np.zeros_like(ct), ct * sp], axis=1)
    return v, dv_dtheta, dv_dphi


def surrogate_loss(params: ModelParams, x, y) -> float:
    """Mean ``1 - cos`` between predictions and unit labels ``y``."""
    out = params.hidden(x) @ params.w2.T + params.b2
    v, _, _ = _polar_vectors(out)
    return float(np.mean(1.0 - np.sum(v * y, axis=1)))


def loss_and_grads(params: ModelParams, x, y, head_only: bool = False, h=None):
    """Surrogate loss and its gradients as a :class:`ModelParams` of grads.

    With ``head_only`` the extractor gradients are zeros and ``h`` may carry
    precomputed hidden activations.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = params.hidden(x)
    out = h @ params.w2.T + params.b2
    v, dth, dph = _polar_vectors(out)
    n = len(y)
    loss = float(np.mean(1.0 - np.sum(v * y, axis=1)))
    d_out = -np.column_stack([np.sum(dth * y, axis=1), np.sum(dph * y, axis=1)]) / n
    g_w2 = d_out.T @ h
    g_b2 = d_out.sum(axis=0)
    if head_only:
        return loss, ModelParams(np.zeros_like(params.w1), np.zeros_like(params.b1), g_w2, g_b2)
    d_pre = (d_out @ params.w2) * (1.0 - h * h)
    g_w1 = d_pre.T @ x
    g_b1 = d_pre.sum(axis=0)
    return loss, ModelParams(g_w1, g_b1, g_w2, g_b2)


def _learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_schedule or cfg.epochs <= 1:
        return cfg.learning_rate
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def _sgd(params: ModelParams, x, y, cfg: TrainConfig, head_only: bool, shuffle_rng) -> ModelParams:
    n = len(y)
    h = params.hidden(x) if head_only else None
    for epoch in range(cfg.epochs):
        lr = _learning_rate(cfg, epoch)
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_and_grads(params, x[idx], y[idx], head_only, None if h is None else h[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(b, epoch)
            params.w2 -= lr * g.w2
            params.b2 -= lr * g.b2
            if not head_only:
                params.w1 -= lr * g.w1
                params.b1 -= lr * g.b1
    return params


def train_full(x, y, cfg: TrainConfig) -> ModelParams:
    """Train extractor and head from scratch with minibatch SGD.

    Initialization and shuffling use separate streams derived from
    ``cfg.seed``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < cfg.batch_size and cfg.epochs > 0:
        raise ValueError(f"need at least batch_size={cfg.batch_size} samples, got {len(y)}")
    params = init_params(x.shape[1], cfg.hidden_dim, seeding.stream(cfg.seed, seeding.TRAIN_INIT))
    return _sgd(params, x, y, cfg, False, seeding.stream(cfg.seed, seeding.TRAIN_SHUFFLE))


def train_head(extractor: ModelParams, x, y, cfg: TrainConfig) -> ModelParams:
    """Fit a freshly initialized head on top of a frozen extractor.

    Only ``w1``/``b1`` of ``extractor`` are used; they are copied, never
    modified.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[1] != extractor.feature_dim:
        raise ValueError("feature length does not match the extractor")
    w2, b2 = init_head(extractor.hidden_dim, seeding.stream(cfg.seed, seeding.TRAIN_INIT))
    params = ModelParams(extractor.w1.copy(), extractor.b1.copy(), w2, b2)
    return _sgd(params, x, y, cfg, True, seeding.stream(cfg.seed, seeding.TRAIN_SHUFFLE))


def predict_polar(params: ModelParams, x) -> np.ndarray:
    """Predicted ``(theta, phi)`` in degrees, pitch clamped to +-89.9."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.feature_dim:
        raise ValueError("feature length does not match the model")
    out = np.degrees(np.atleast_2d(params.hidden(x) @ params.w2.T + params.b2))
    if np.any(np.abs(out[:, 0]) >= MAX_PITCH_DEG):
        warnings.warn("predicted pitch clamped to +-89.9 deg", OutOfFrustumWarning, stacklevel=2)
        out[:, 0] = np.clip(out[:, 0], -MAX_PITCH_DEG, MAX_PITCH_DEG)
    return out


def predict(params: ModelParams, x) -> np.ndarray:
    """Predicted unit gaze vectors, ``(N, 3)``."""
    return polar_to_vector(predict_polar(params, x))


def mean_error(params: ModelParams, x, y) -> float:
    """Mean angular error in degrees between predictions and ``y``."""
    return float(np.mean(angular_error(predict(params, x), y)))


def head_config(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def resample_balanced(datasets, rng: np.random.Generator) -> list:
    """Per-domain index arrays of equal size ``min(len(d))``, drawn without replacement.

    Indices are returned sorted within each domain.
    """
    sizes = [len(d) for d in datasets]
    if not sizes or min(sizes) == 0:
        raise ValueError("every dataset must be non-empty")
    m = min(sizes)
    return [np.sort(rng.choice(n, size=m, replace=False)) for n in sizes]
