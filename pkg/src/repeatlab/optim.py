"""(S)GD with global or per-layer learning rates, and AdamW.

Full-batch GD is plain ``sgd_step`` applied to whole-dataset gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from repeatlab.errors import ConfigurationError, NumericalError
from repeatlab.model import MlpParams


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "sgd"
    lr: float = 0.1
    layer_lrs: Optional[Sequence[float]] = None
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}; expected 'sgd' or 'adamw'")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.layer_lrs is not None:
            lrs = tuple(float(v) for v in self.layer_lrs)
            if any(v < 0 for v in lrs):
                raise ConfigurationError(f"layer learning rates must be non-negative, got {lrs}")
            object.__setattr__(self, "layer_lrs", lrs)
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.weight_decay < 0 or not self.eps > 0:
            raise ConfigurationError("weight_decay must be >= 0 and eps > 0")

    def rates(self, depth: int) -> List[float]:
        if self.layer_lrs is None:
            return [self.lr] * depth
        if len(self.layer_lrs) != depth:
            raise ConfigurationError(f"{len(self.layer_lrs)} layer learning rates for {depth} layers")
        return list(self.layer_lrs)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls([np.zeros_like(W) for W in params.layers], [np.zeros_like(W) for W in params.layers])


def _check(params: MlpParams, grads) -> None:
    if len(grads) != params.depth or any(g.shape != W.shape for g, W in zip(grads, params.layers)):
        raise ConfigurationError("gradient shapes do not match parameter shapes")


def _guard(params: MlpParams) -> None:
    if not params.is_finite():
        raise NumericalError("optimizer step produced non-finite weights")


def sgd_step(params: MlpParams, grads, cfg: OptimConfig) -> MlpParams:
    """In-place ``W_l <- W_l - eta_l * g_l``; returns ``params`` for chaining."""
    _check(params, grads)
    for W, g, lr in zip(params.layers, grads, cfg.rates(params.depth)):
        if lr:
            W -= lr * g
    _guard(params)
    return params


def adamw_step(state: AdamState, params: MlpParams, grads, cfg: OptimConfig):
    """One decoupled-weight-decay Adam step, in place. Returns ``(state, params)``."""
    _check(params, grads)
    if len(state.m) != params.depth or any(m.shape != W.shape for m, W in zip(state.m, params.layers)):
        raise ConfigurationError("Adam state shapes do not match parameter shapes")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for W, g, m, v, lr in zip(params.layers, grads, state.m, state.v, cfg.rates(params.depth)):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * W
        W -= lr * update
    _guard(params)
    return state, params
