"""Lookahead wrapper: slow weights track the fast optimizer every k steps."""

from __future__ import annotations

import torch

__all__ = ["Lookahead"]


class Lookahead:
    """Wrap an inner optimizer; every ``k`` steps pull the slow weights
    alpha of the way toward the fast weights and reset the fast weights."""

    def __init__(self, inner: torch.optim.Optimizer, k: int = 6, alpha: float = 0.5):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {alpha}")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self._step = 0
        self._slow = [
            [p.detach().clone() for p in group["params"]]
            for group in inner.param_groups
        ]

    def zero_grad(self, set_to_none: bool = True):
        self.inner.zero_grad(set_to_none=set_to_none)

    @torch.no_grad()
    def step(self):
        self.inner.step()
        self._step += 1
        if self._step % self.k:
            return
        for group, slow_group in zip(self.inner.param_groups, self._slow):
            for p, slow in zip(group["params"], slow_group):
                slow += self.alpha * (p.detach() - slow)
                p.copy_(slow)
