"""AdamW with decoupled weight decay."""

import numpy as np

from .errors import ContractError


class AdamW:
    def __init__(self, params, lr=1e-3, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ContractError("AdamW: learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"AdamW: parameter {i} {p.shape} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_adamw_step(optimizer, lr=None, weight_decay=None):
    """One update, optionally overriding the step size and decay for this call."""
    if lr is not None:
        if lr <= 0:
            raise ContractError("AdamW: learning rate must be positive")
        optimizer.lr = lr
    if weight_decay is not None:
        optimizer.weight_decay = weight_decay
    optimizer.step()
