"""AdamW with decoupled weight decay.

Moments are bias-corrected explicitly (m_hat = m / (1 - beta1^t)) and the
decay term is applied to the pre-step parameter value, independent of the
gradient path, so a zero gradient with decay shrinks every parameter by
exactly lr * weight_decay per step.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class MissingGradError(RuntimeError):
    pass


class AdamW:
    def __init__(self, params, lr=2e-5, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = [p for _, p in params] if params and isinstance(params[0], tuple) else list(params)
        self.names = [n for n, _ in params] if params and isinstance(params[0], tuple) else [
            f"param{i}" for i in range(len(self.params))
        ]
        for p in self.params:
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError("AdamW expects requires_grad tensors")
        self.learning_rate = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.values) for p in self.params]
        self.second_moment = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        """Apply one update to every parameter and clear the gradients."""
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradError(f"parameter {self.names[i]!r} has no gradient")
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.values = p.values - self.learning_rate * (
                m_hat / (np.sqrt(v_hat) + self.epsilon) + self.weight_decay * p.values
            )
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None
