from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, param) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_update(param, grad, state: AdamState, t: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step; returns ``(new_param, new_state)``.

    Inputs are not modified.
    """
    if t < 1:
        raise ValueError(f"Adam step counter must be >= 1, got {t}")
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v)
