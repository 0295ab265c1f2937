"""SGD with cosine-annealed learning rate, plus Adam for the attack decoder."""
from __future__ import annotations

import math

import numpy as np


def cosine_lr(base_lr: float, epoch: float, total_epochs: int) -> float:
    """``base_lr * (1 + cos(pi * epoch / total)) / 2``; exactly 0 at the last epoch."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    epoch = min(max(epoch, 0), total_epochs)
    if epoch == total_epochs:
        return 0.0
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


class SGD:
    def __init__(self, params, lr: float, total_epochs: int, momentum: float = 0.0):
        self.params = list(params)
        self.base_lr = lr
        self.total_epochs = total_epochs
        self.momentum = momentum
        self._velocity = [None] * len(self.params)

    def lr(self, epoch) -> float:
        return cosine_lr(self.base_lr, epoch, self.total_epochs)

    def step(self, epoch):
        """``param -= lr(epoch) * grad`` for every parameter, then clear grads."""
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if len(missing) == len(self.params):
            raise RuntimeError("sgd step with no populated gradients")
        lr = self.lr(epoch)
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.momentum:
                v = self._velocity[i]
                v = g.copy() if v is None else self.momentum * v + g
                self._velocity[i] = v
                g = v
            if lr:
                p.data -= (lr * g).astype(p.data.dtype, copy=False)
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
            p.grad = None
