"""Adaptive-moment (Adam) first-order updates on flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidInputError


@dataclass(frozen=True)
class AdamConfig:
    lr: object = 1e-3  # scalar or per-parameter array
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, params):
        p = np.array(params, dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0)


def optimizer_step(state: AdamState, grads, cfg: AdamConfig) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(grads, dtype=float)
    if g.shape != state.params.shape:
        raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {state.params.shape}")
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    params = state.params - np.asarray(cfg.lr, dtype=float) * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(params, m, v, t)
