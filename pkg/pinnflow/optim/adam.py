"""Adam with bias-corrected moment estimates over a flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pinnflow.errors import DimensionMismatchError, NonFiniteGradientError


@dataclass(frozen=True)
class AdamState:
    """Step count, moment estimates and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def check_gradient(grad: np.ndarray) -> None:
    """Raise on the first non-finite entry."""
    finite = np.isfinite(grad)
    if not finite.all():
        raise NonFiniteGradientError(int(np.argmin(finite)))


def adam_step(state: AdamState, grad: np.ndarray, params: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One Adam update; returns the new state and parameters, inputs are left untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if not (grad.shape == params.shape == state.m.shape):
        raise DimensionMismatchError(
            f"gradient {grad.shape}, parameters {params.shape} and moments {state.m.shape} disagree"
        )
    check_gradient(grad)

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params
