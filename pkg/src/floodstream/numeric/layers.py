"""Small building blocks shared by the VAE and the denoiser."""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Node, add, gather, matmul, parameter, reshape


def init_linear(rng: Rng, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return (gain / np.sqrt(fan_in)) * rng.randn((fan_in, fan_out), dtype=np.float64)


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def causal_indices(T: int, kernel: int, stride: int) -> np.ndarray:
    """(T // stride, kernel) gather indices; output ``u`` sees inputs up to
    ``stride * u + stride - 1``. Indices before 0 replicate the first frame."""
    if T % stride:
        raise ValueError(f"length {T} not divisible by stride {stride}")
    pad = kernel - stride
    u = np.arange(T // stride)[:, None]
    j = np.arange(kernel)[None, :]
    return np.clip(stride * u + j - pad, 0, T - 1)


def causal_conv(x: Node, w: Node, b: Node, kernel: int, stride: int = 1) -> Node:
    """Causal 1-D convolution of (B, T, C_in) with weights (kernel * C_in, C_out)."""
    B, T, C = x.shape
    idx = causal_indices(T, kernel, stride)
    cols = gather(x, idx, axis=1)  # (B, T', kernel, C)
    cols = reshape(cols, (B, idx.shape[0], kernel * C))
    return add(matmul(cols, w), b)


def upsample2(x: Node, w: Node, b: Node) -> Node:
    """Sub-pixel x2 upsampling: frame ``u`` expands to frames ``2u, 2u+1``."""
    B, T, C = x.shape
    y = add(matmul(x, w), b)  # (B, T, 2 * C_out)
    return reshape(y, (B, 2 * T, y.shape[-1] // 2))


class ParamSet:
    """Named leaf nodes with FSCK1-friendly (de)serialisation."""

    def __init__(self):
        self.params: dict[str, Node] = {}

    def add(self, name: str, value) -> Node:
        node = parameter(value, name=name)
        self.params[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self.params[name]

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(tensors)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in self.params.items():
            if tensors[k].shape != p.shape:
                raise ValueError(f"parameter {k!r}: checkpoint shape {tensors[k].shape} != {p.shape}")
            p.value = np.array(tensors[k], dtype=p.value.dtype)
            p.grad = None
