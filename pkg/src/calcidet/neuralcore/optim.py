"""Adam optimizer with decoupled-from-nothing, classic L2 weight decay:
the decay term coefficient * param is added to the gradient before the
moment updates."""

from __future__ import annotations

import numpy as np

from ..errors import NeuralError
from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class AdamOptimizer:
    def __init__(self, params: dict[str, Tensor], learning_rate: float = 5e-4,
                 weight_decay: float = 0.0, beta1: float = ADAM_BETA1,
                 beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.params = params
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(t.values) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.values) for k, t in params.items()}

    def step(self):
        """Apply one update from the gradients currently stored on the params.

        Parameters with no gradient (structurally disconnected this step) are
        left untouched. Raises if any gradient is non-finite, naming the
        offending parameter."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, param in self.params.items():
            if param.grad is None:
                continue
            g = param.grad
            if not np.isfinite(g).all():
                raise NeuralError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * param.values
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param.values = param.values - self.learning_rate * update

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None
