"""SGD, RMSprop and Adam as pure update functions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NanGradientError


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "rmsprop"
    decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def make_optimizer(kind: str = "rmsprop", **hyper) -> OptimizerState:
    return OptimizerState(kind=kind, **hyper)


def step(state: OptimizerState, params, gradient, lr: float) -> tuple[np.ndarray, OptimizerState]:
    """One descent step; returns fresh arrays and leaves the inputs untouched."""
    g = np.asarray(gradient, dtype=float)
    p = np.asarray(params, dtype=float)
    if g.shape != p.shape:
        raise ValueError(f"gradient shape {g.shape} != params shape {p.shape}")
    if not np.all(np.isfinite(g)):
        raise NanGradientError("non-finite gradient")
    if state.kind == "sgd":
        return p - lr * g, replace(state, t=state.t + 1)
    if state.kind == "rmsprop":
        v = np.zeros_like(p) if state.v is None else state.v
        v = state.decay * v + (1.0 - state.decay) * g * g
        return p - lr * g / np.sqrt(v + state.eps), replace(state, v=v, t=state.t + 1)
    m = np.zeros_like(p) if state.m is None else state.m
    v = np.zeros_like(p) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    return p - lr * m_hat / (np.sqrt(v_hat) + state.eps), replace(state, m=m, v=v, t=t)
