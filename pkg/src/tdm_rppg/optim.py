"""Adadelta for the network, plain SGD for the shift logits."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor


def _check(params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or '<unnamed>'} has no gradient buffer")


class Adadelta:
    """Accumulated-RMS update: delta = sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1.0, rho: float = 0.9, eps: float = 1e-6):
        self.params = list(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.square_avg = [np.zeros_like(p.data) for p in self.params]
        self.acc_delta = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check(self.params)
        rho, eps = self.rho, self.eps
        for p, sq, acc in zip(self.params, self.square_avg, self.acc_delta):
            g = p.grad
            sq *= rho
            sq += (1 - rho) * g * g
            delta = np.sqrt(acc + eps) / np.sqrt(sq + eps) * g
            acc *= rho
            acc += (1 - rho) * delta * delta
            p.data -= self.lr * delta

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (sq, acc) in enumerate(zip(self.square_avg, self.acc_delta)):
            out[f"adadelta/{i}/square_avg"] = sq.copy()
            out[f"adadelta/{i}/acc_delta"] = acc.copy()
        return out


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        _check(self.params)
        for p in self.params:
            p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
