"""Adam optimizer with bias correction.

State lives in AdamState (first/second moment accumulators and the step
counter); hyperparameters are passed per call. adam_step is the functional
core; Adam is the convenience wrapper used by training loops.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .tensor import Tensor


@dataclass
class AdamState:
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on `params`.

    Fails fast on NaN gradients rather than silently corrupting parameters.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError(
            f"adam_step: {len(params)} params, {len(grads)} grads, state for {len(state.m)}"
        )
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValidationError(f"adam_step: param shape {p.shape} vs grad shape {g.shape}")
        if np.isnan(g).any():
            raise NumericError("adam_step: NaN in gradients")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Adam over a list of parameter Tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.for_params([p.data for p in self.params])

    def step(self):
        grads = []
        for p in self.params:
            if p.grad is None:
                grads.append(np.zeros_like(p.data))
            else:
                grads.append(p.grad)
        adam_step([p.data for p in self.params], grads, self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
