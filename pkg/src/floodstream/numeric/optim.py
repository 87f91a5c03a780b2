from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError
from .tensor import Node


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Missing grads count as zero."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p, dtype=np.float64) if g is None else g.astype(np.float64)
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        out[name] = (p.astype(np.float64) - upd).astype(p.dtype)
    return out, state


class Adam:
    """Adam over a dict of leaf nodes, updating their values in place."""

    def __init__(self, params: dict[str, Node], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        values = {k: p.value for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        new, self.state = adam_step(values, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for k, p in self.params.items():
            p.value = new[k]

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            if k in self.state.m:
                out[f"adam.m.{k}"] = self.state.m[k]
                out[f"adam.v.{k}"] = self.state.v[k]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step: int) -> None:
        self.state.step = step
        for k in self.params:
            if f"adam.m.{k}" in tensors:
                self.state.m[k] = tensors[f"adam.m.{k}"].astype(np.float64)
                self.state.v[k] = tensors[f"adam.v.{k}"].astype(np.float64)


def grad_norm(params: dict[str, Node]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))
