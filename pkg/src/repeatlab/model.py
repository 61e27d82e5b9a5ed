"""Bias-free ReLU MLP with hand-written backpropagation.

Layer ``l`` holds a weight matrix of shape ``(m_l, m_{l-1})`` with ``m_0 = d`` and
``m_L = 1``. Hidden layers use ReLU; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from repeatlab.errors import ConfigurationError

INIT_KINDS = ("default-uniform", "gaussian", "alpha-scaled", "muP", "per-layer-constants")
LOSS_KINDS = ("mse", "correlation")


@dataclass
class MlpParams:
    layers: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ConfigurationError(f"layer shapes do not chain: {prev.shape} -> {nxt.shape}")
        if self.layers[-1].shape[0] != 1:
            raise ConfigurationError("the output layer must have a single row")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d(self) -> int:
        return self.layers[0].shape[1]

    @property
    def widths(self) -> List[int]:
        return [W.shape[0] for W in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.layers], self.activation)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(W)) for W in self.layers)


@dataclass(frozen=True)
class InitScheme:
    kind: str = "default-uniform"
    alpha: float = 1.0
    layer_scales: Optional[Sequence[float]] = field(default=None)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigurationError(f"unknown init kind {self.kind!r}; expected one of {INIT_KINDS}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.layer_scales is not None:
            scales = tuple(float(s) for s in self.layer_scales)
            if any(not s > 0 for s in scales):
                raise ConfigurationError(f"layer scales must be positive, got {scales}")
            object.__setattr__(self, "layer_scales", scales)
        elif self.kind == "per-layer-constants":
            raise ConfigurationError("per-layer-constants init needs layer_scales")


def init_mlp(d: int, widths: Sequence[int], scheme: InitScheme = InitScheme()) -> MlpParams:
    """Sample initial weights; deterministic given ``scheme.seed``."""
    widths = list(widths)
    if not widths or widths[-1] != 1:
        raise ConfigurationError(f"widths must be non-empty and end in 1, got {widths}")
    if d < 1 or any(w < 1 for w in widths):
        raise ConfigurationError(f"zero width in d={d}, widths={widths}")
    if scheme.kind == "per-layer-constants" and len(scheme.layer_scales) != len(widths):
        raise ConfigurationError(f"{len(scheme.layer_scales)} layer scales for {len(widths)} layers")

    rng = np.random.default_rng(scheme.seed)
    fans = [d] + widths[:-1]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(fans, widths)):
        if scheme.kind == "gaussian":
            W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        elif scheme.kind == "muP":
            std = 1.0 / fan_in if i == len(widths) - 1 else 1.0 / np.sqrt(fan_in)
            W = rng.standard_normal((fan_out, fan_in)) * std
        else:
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(W)

    if scheme.kind == "alpha-scaled":
        layers[0] = layers[0] / scheme.alpha
        layers[-1] = layers[-1] * scheme.alpha
    elif scheme.kind == "per-layer-constants":
        layers = [W * s for W, s in zip(layers, scheme.layer_scales)]
    return MlpParams(layers)


def forward(params: MlpParams, X: np.ndarray):
    """Return ``(preds, cache)``; the cache holds every layer input and pre-activation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ConfigurationError(f"input shape {X.shape} does not match d={params.d}")
    inputs, pre = [], []
    h = X
    for i, W in enumerate(params.layers):
        inputs.append(h)
        z = h @ W.T
        pre.append(z)
        h = np.maximum(z, 0.0) if i < params.depth - 1 else z
    return h[:, 0], (inputs, pre)


def predict(params: MlpParams, X: np.ndarray) -> np.ndarray:
    return forward(params, X)[0]


def loss_and_grad(params: MlpParams, X: np.ndarray, y: np.ndarray, loss_kind: str = "mse"):
    """Batch-mean loss and its exact gradient for every layer."""
    if loss_kind not in LOSS_KINDS:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    y = np.asarray(y, dtype=np.float64)
    preds, (inputs, pre) = forward(params, X)
    if y.shape != preds.shape:
        raise ConfigurationError(f"label shape {y.shape} does not match batch {preds.shape}")
    n = preds.shape[0]
    if loss_kind == "mse":
        resid = preds - y
        loss = float(resid @ resid) / n
        delta = (2.0 / n) * resid[:, None]
    else:
        loss = -float(y @ preds) / n
        delta = (-1.0 / n) * y[:, None]

    grads = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        grads[i] = delta.T @ inputs[i]
        if i:
            delta = (delta @ params.layers[i]) * (pre[i - 1] > 0)
    return loss, grads


def loss_value(params: MlpParams, X: np.ndarray, y: np.ndarray, loss_kind: str = "mse") -> float:
    preds = predict(params, X)
    if loss_kind == "mse":
        return float(np.mean((preds - y) ** 2))
    if loss_kind == "correlation":
        return -float(np.mean(y * preds))
    raise ConfigurationError(f"unknown loss kind {loss_kind!r}")


def layer_norms(params: MlpParams):
    """Per-layer Frobenius norms and the ratio last/first."""
    norms = [float(np.linalg.norm(W)) for W in params.layers]
    ratio = norms[-1] / norms[0] if norms[0] > 0 else float("inf")
    return norms, ratio


def signs(preds: np.ndarray) -> np.ndarray:
    # sign(0) -> +1
    return np.where(preds >= 0, 1.0, -1.0)


def accuracy(params: MlpParams, ds) -> float:
    """Fraction of rows with ``sign(f(x)) == y`` on a +-1-label dataset."""
    if ds.task.kind != "parity":
        raise ConfigurationError("accuracy is defined only for +-1-label (parity) datasets")
    return float(np.mean(signs(predict(params, ds.X)) == ds.y))
