"""Adam with a multiplicative learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kwargs)

    def decay(self, gamma: float) -> None:
        """Scale the learning rate; called once per outer iteration."""
        self.lr *= gamma

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update of ``params`` in place; returns ``params``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and optimizer moments must have the same shape")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise FloatingPointError(
            f"non-finite gradient in {bad.size} of {grads.size} entries "
            f"(first at index {bad[0]}, step {state.step})"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    params -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype, copy=False)
    return params
