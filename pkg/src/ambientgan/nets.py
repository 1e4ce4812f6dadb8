"""Dense generator and discriminator built on the tape."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _rng
from . import tape as T

INIT_STD = 0.02
INIT_SCHEMES = ("normal", "he")


@dataclass(frozen=True)
class LatentSpec:
    dim: int = 32
    family: str = "normal"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"latent dim must be >= 1, got {self.dim}")
        if self.family not in ("normal", "uniform"):
            raise ValueError(f"latent family must be 'normal' or 'uniform', got {self.family!r}")

    def sample(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "normal":
            return rng.standard_normal((batch, self.dim))
        return rng.uniform(-1.0, 1.0, (batch, self.dim))


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def names(self, prefix: str) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"{prefix}.W{i}", f"{prefix}.b{i}"]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> MlpParams:
        return cls([np.asarray(a) for a in arrays[0::2]], [np.asarray(a) for a in arrays[1::2]])

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(widths: Sequence[int], seed: int, stream_id: int = 0,
                scheme: str = "normal") -> MlpParams:
    """Zero biases and i.i.d. normal weights; deterministic in (seed, stream_id).

    ``scheme="normal"`` draws N(0, 0.02^2). ``scheme="he"`` draws N(0, 2/fan_in),
    which keeps activations at unit scale through leaky-ReLU layers when there
    is no normalization layer to do it.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"need at least two positive layer widths, got {widths}")
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    rng = _rng.stream(seed, "init", phase=stream_id)
    weights = [rng.normal(0.0, INIT_STD if scheme == "normal" else math.sqrt(2.0 / a), (a, b))
               for a, b in zip(widths[:-1], widths[1:])]
    biases = [np.zeros(b) for b in widths[1:]]
    return MlpParams(weights, biases)


def leaves(params: MlpParams) -> list[T.Tensor]:
    """Fresh tape leaves for every parameter array, in ``arrays()`` order."""
    return [T.Tensor(a, requires_grad=True) for a in params.arrays()]


def _layers(params):
    if isinstance(params, MlpParams):
        params = params.arrays()
    return list(zip(params[0::2], params[1::2]))


def _mlp(params, x) -> T.Tensor:
    layers = _layers(params)
    h = T.as_tensor(x)
    w0 = layers[0][0]
    if h.ndim != 2 or h.shape[1] != w0.shape[0]:
        raise T.ShapeError(f"network input shape {h.shape} does not match first layer {w0.shape}")
    for i, (w, b) in enumerate(layers):
        h = T.matmul(h, w) + b
        if i < len(layers) - 1:
            h = T.leaky_relu(h)
    return h


def generator_forward(params, z, head: str = "tanh") -> T.Tensor:
    """Map latent codes (batch, k) to flat samples (batch, n).

    ``head`` is ``"tanh"`` for image-like data in (-1, 1) or ``"affine"`` for
    unconstrained point data. ``params`` is an :class:`MlpParams` (constant) or
    the list returned by :func:`leaves`.
    """
    out = _mlp(params, z)
    if head == "tanh":
        return T.tanh(out)
    if head == "affine":
        return out
    raise ValueError(f"unknown generator head {head!r}")


def discriminator_forward(params, y) -> T.Tensor:
    """P(real) for each row of a (batch, m) tensor; shape (batch, 1)."""
    return T.sigmoid(_mlp(params, y))
