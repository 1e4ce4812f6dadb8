"""Stochastic measurement families, their parameter samplers and baseline inverses.

Each family is a frozen dataclass holding its parameters and the clean-sample
shape it consumes. Randomness is drawn separately (:func:`sample_theta`) so the
same draw can be replayed through :func:`apply` and :func:`apply_inverse`.

Batch axis is always first. ``x`` given to :func:`apply` has shape
``(batch, *image_shape)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _rng
from . import tape as T


class MeasurementError(ValueError):
    pass


class Uninvertible(MeasurementError):
    """No baseline inverse exists for this measurement kind."""

    def __init__(self, kind: str):
        super().__init__(f"measurement {kind!r} is not invertible; no baseline pipeline exists for it")
        self.kind = kind


@dataclass(frozen=True)
class Theta:
    """Per-sample randomness for a batch, stacked along the first axis."""

    kind: str
    values: np.ndarray | tuple

    def __len__(self):
        if self.kind == "compose":
            return len(self.values[0])
        return len(self.values)


@dataclass(frozen=True)
class MeasurementSpec:
    image_shape: tuple[int, ...]

    kind = "abstract"

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        if not self.image_shape or min(self.image_shape) < 1:
            raise MeasurementError(f"bad image_shape {self.image_shape}")

    @property
    def n_in(self) -> int:
        return math.prod(self.image_shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.image_shape

    @property
    def n_out(self) -> int:
        return math.prod(self.output_shape)

    def _require_2d(self):
        if len(self.image_shape) != 2:
            raise MeasurementError(f"{self.kind} needs a 2-D image_shape, got {self.image_shape}")

    def _draw(self, gens: Sequence[np.random.Generator]) -> Theta:
        raise NotImplementedError

    def _apply(self, theta: Theta, x: T.Tensor) -> T.Tensor:
        raise NotImplementedError

    def _inverse(self, theta: Theta | None, y: np.ndarray) -> np.ndarray:
        raise Uninvertible(self.kind)


@dataclass(frozen=True)
class BlockPixels(MeasurementSpec):
    """Each pixel zeroed independently with probability ``p``."""

    p: float = 0.5
    kind = "block_pixels"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.p <= 1.0:
            raise MeasurementError(f"block probability must be in [0, 1], got {self.p}")

    def _draw(self, gens):
        return Theta(self.kind, np.stack([g.random(self.image_shape) >= self.p for g in gens]))

    def _apply(self, theta, x):
        return x * theta.values.astype(np.float64)

    def _inverse(self, theta, y):
        missing = (theta.values == 0) if theta is not None else (y == 0)
        return fill_from_neighbors(y, missing)


@dataclass(frozen=True)
class ConvolveNoise(MeasurementSpec):
    """Fixed truncated-Gaussian blur followed by additive Gaussian noise."""

    kernel_size: int = 5
    kernel_sigma: float | None = None
    noise_mu: float = 0.0
    noise_sigma: float = 0.1
    wiener_lambda: float = 1e-3
    wiener_iterations: int = 50
    kind = "convolve_noise"

    def __post_init__(self):
        super().__post_init__()
        self._require_2d()
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise MeasurementError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.kernel_sigma is None:
            object.__setattr__(self, "kernel_sigma", self.kernel_size / 5)
        if self.kernel_sigma < 0 or self.noise_sigma < 0:
            raise MeasurementError("kernel_sigma and noise_sigma must be non-negative")

    @property
    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self.kernel_size, self.kernel_sigma)

    def _draw(self, gens):
        return Theta(self.kind, np.stack(
            [g.normal(self.noise_mu, self.noise_sigma, self.image_shape) for g in gens]))

    def _apply(self, theta, x):
        return T.correlate2d(x, self.kernel) + theta.values

    def _inverse(self, theta, y):
        return wiener_deconvolve(y - self.noise_mu, self.kernel, self.wiener_lambda,
                                 self.wiener_iterations)


@dataclass(frozen=True)
class KeepPatch(MeasurementSpec):
    """Zero everything outside a random ``k`` x ``k`` patch; location is kept."""

    k: int = 4
    kind = "keep_patch"

    def __post_init__(self):
        super().__post_init__()
        self._require_2d()
        if not 1 <= self.k <= min(self.image_shape):
            raise MeasurementError(f"patch side {self.k} does not fit {self.image_shape}")

    def _draw(self, gens):
        return Theta(self.kind, _corners(gens, self.image_shape, self.k))

    def _apply(self, theta, x):
        b = len(theta)
        mask = np.zeros((b,) + self.image_shape)
        for i, (r, c) in enumerate(theta.values):
            mask[i, r:r + self.k, c:c + self.k] = 1.0
        return x * mask


@dataclass(frozen=True)
class ExtractPatch(MeasurementSpec):
    """Return only the pixels of a random ``k`` x ``k`` patch; location is lost."""

    k: int = 4
    kind = "extract_patch"

    def __post_init__(self):
        super().__post_init__()
        self._require_2d()
        if not 1 <= self.k <= min(self.image_shape):
            raise MeasurementError(f"patch side {self.k} does not fit {self.image_shape}")

    @property
    def output_shape(self):
        return (self.k, self.k)

    def _draw(self, gens):
        return Theta(self.kind, _corners(gens, self.image_shape, self.k))

    def _apply(self, theta, x):
        h, w = self.image_shape
        k = self.k
        offs = (np.arange(k)[:, None] * w + np.arange(k)[None, :]).ravel()
        index = np.stack([r * w + c + offs for r, c in theta.values])
        flat = T.reshape(x, (x.shape[0], h * w))
        return T.reshape(T.gather(flat, index), (x.shape[0], k, k))


@dataclass(frozen=True)
class PadRotateProject(MeasurementSpec):
    """Zero-pad, rotate by a uniform random angle about the centre, sum over rows.

    With ``disclose_theta`` the angle (radians) is appended to the projection.
    """

    pad: int = 2
    disclose_theta: bool = False
    kind = "pad_rotate_project"

    def __post_init__(self):
        super().__post_init__()
        self._require_2d()
        if self.pad < 0:
            raise MeasurementError(f"pad must be non-negative, got {self.pad}")

    @property
    def output_shape(self):
        width = self.image_shape[1] + 2 * self.pad
        return (width + 1,) if self.disclose_theta else (width,)

    def _draw(self, gens):
        return Theta(self.kind, np.array([g.uniform(0.0, 2 * np.pi) for g in gens]))

    def _apply(self, theta, x):
        padded = T.pad2d(x, self.pad)
        rotated = T.grid_sample(padded, rotation_grid(padded.shape[1:], theta.values))
        projection = T.sum(rotated, axis=1)
        if self.disclose_theta:
            return T.concat([projection, theta.values[:, None]], axis=1)
        return projection


@dataclass(frozen=True)
class GaussianProjection(MeasurementSpec):
    """Project the flattened sample onto ``m_out`` random Gaussian directions.

    Matrix entries are N(0, 1/n). With ``disclose_theta`` the flattened matrix
    is appended to the projection.
    """

    m_out: int = 1
    disclose_theta: bool = False
    kind = "gaussian_projection"

    def __post_init__(self):
        super().__post_init__()
        if self.m_out < 1:
            raise MeasurementError(f"m_out must be >= 1, got {self.m_out}")

    @property
    def output_shape(self):
        if self.disclose_theta:
            return (self.m_out * (1 + self.n_in),)
        return (self.m_out,)

    def _draw(self, gens):
        n = self.n_in
        return Theta(self.kind, np.stack(
            [g.standard_normal((self.m_out, n)) / np.sqrt(n) for g in gens]))

    def _apply(self, theta, x):
        b = x.shape[0]
        y = T.reshape(T.matmul(theta.values, T.reshape(x, (b, self.n_in, 1))), (b, self.m_out))
        if self.disclose_theta:
            return T.concat([y, theta.values.reshape(b, -1)], axis=1)
        return y


@dataclass(frozen=True)
class Compose(MeasurementSpec):
    """Apply ``stages`` in order; each stage's output feeds the next."""

    image_shape: tuple[int, ...] = field(default=())
    stages: tuple[MeasurementSpec, ...] = ()
    kind = "compose"

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise MeasurementError("compose needs at least one stage")
        object.__setattr__(self, "stages", stages)
        if not self.image_shape:
            object.__setattr__(self, "image_shape", stages[0].image_shape)
        super().__post_init__()
        expected = self.image_shape
        for stage in stages:
            if stage.image_shape != expected:
                raise MeasurementError(
                    f"compose stage {stage.kind} expects {stage.image_shape}, receives {expected}")
            expected = stage.output_shape

    @property
    def output_shape(self):
        return self.stages[-1].output_shape

    def _draw(self, gens):
        # stages share each sample's stream, so a single stage draws what it would alone
        return Theta(self.kind, tuple(stage._draw(gens) for stage in self.stages))

    def _apply(self, theta, x):
        for stage, th in zip(self.stages, theta.values):
            x = apply(stage, th, x)
        return x

    def _inverse(self, theta, y):
        thetas = theta.values if theta is not None else (None,) * len(self.stages)
        for stage in self.stages:
            if type(stage)._inverse is MeasurementSpec._inverse:
                raise Uninvertible(self.kind)
        for stage, th in zip(reversed(self.stages), reversed(thetas)):
            y = stage._inverse(th, y)
        return y


def _corners(gens, image_shape, k) -> np.ndarray:
    h, w = image_shape
    return np.array([[g.integers(0, h - k + 1), g.integers(0, w - k + 1)] for g in gens],
                    dtype=np.intp).reshape(-1, 2)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Truncated 2-D Gaussian normalised to unit sum; a delta when sigma < 1e-8."""
    if sigma < 1e-8:
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    a = np.arange(size) - size // 2
    g = np.exp(-(a ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def rotation_grid(shape: tuple[int, int], angles: np.ndarray) -> np.ndarray:
    """Source (row, col) for each output pixel when rotating by ``angles`` about the centre."""
    h, w = shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    rr, cc = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    src_r = cos * rr - sin * cc + cy
    src_c = sin * rr + cos * cc + cx
    return np.stack([src_r, src_c], axis=-1)


def fill_from_neighbors(y: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Fill missing pixels with the mean of their known 8-neighbours, repeatedly.

    Works on (batch, H, W) or (batch, n) arrays (the latter as 1 x n images).
    Pixels with no known pixel anywhere in their image stay zero.
    """
    shape = y.shape
    if y.ndim == 2:
        y, missing = y[:, None, :], missing[:, None, :]
    out = np.where(missing, 0.0, y).astype(np.float64)
    known = ~missing
    while True:
        todo = ~known
        if not todo.any():
            break
        vals = np.pad(np.where(known, out, 0.0), ((0, 0), (1, 1), (1, 1)))
        cnt = np.pad(known.astype(np.float64), ((0, 0), (1, 1), (1, 1)))
        h, w = out.shape[1:]
        total = np.zeros(out.shape)
        count = np.zeros(out.shape)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                total += vals[:, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
                count += cnt[:, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        fillable = todo & (count > 0)
        if not fillable.any():
            break
        out[fillable] = total[fillable] / count[fillable]
        known = known | fillable
    return out.reshape(shape)


def wiener_deconvolve(y: np.ndarray, kernel: np.ndarray, lam: float, iterations: int = 50) -> np.ndarray:
    """Invert zero-boundary 'same' cross-correlation of (batch, H, W) images.

    Frequency-domain Wiener filter on a canvas padded by the kernel radius. The
    blurred ring outside the frame is not observed, so it is re-estimated from
    the current reconstruction on every pass.
    """
    y = np.asarray(y, dtype=np.float64)
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    _, h, w = y.shape
    ph, pw = h + 2 * rh, w + 2 * rw
    circ = np.zeros((ph, pw))
    for u in range(kh):
        for v in range(kw):
            circ[(rh - u) % ph, (rw - v) % pw] += kernel[u, v]
    kf = np.fft.fft2(circ)
    filt = np.conj(kf) / (np.abs(kf) ** 2 + lam)
    x = np.zeros_like(y)
    for _ in range(max(1, iterations)):
        canvas = np.real(np.fft.ifft2(kf * np.fft.fft2(np.pad(x, ((0, 0), (rh, rh), (rw, rw))))))
        canvas[:, rh:rh + h, rw:rw + w] = y
        x = np.real(np.fft.ifft2(filt * np.fft.fft2(canvas)))[:, rh:rh + h, rw:rw + w]
    return x


# public API ---------------------------------------------------------------

def sample_theta(spec: MeasurementSpec, batch: int, seed: int = 0, iteration: int = 0,
                 phase: int = 0, purpose: str = "theta") -> Theta:
    """Draw measurement randomness for ``batch`` samples.

    Sample ``i`` uses its own counter-based stream addressed by
    ``(seed, purpose, iteration, phase, i)``.
    """
    if batch < 1:
        raise MeasurementError(f"batch must be >= 1, got {batch}")
    return spec._draw(_rng.sample_streams(seed, purpose, iteration, phase, batch))


def apply(spec: MeasurementSpec, theta: Theta, x) -> T.Tensor:
    """Differentiable forward measurement of a batch."""
    x = T.as_tensor(x)
    if x.shape[1:] != spec.image_shape:
        raise T.ShapeError(
            f"{spec.kind}: input shape {x.shape} does not match (batch, *{spec.image_shape})")
    if theta.kind != spec.kind:
        raise MeasurementError(f"theta of kind {theta.kind!r} given to {spec.kind!r}")
    if len(theta) != x.shape[0]:
        raise T.ShapeError(f"{spec.kind}: theta batch {len(theta)} vs input batch {x.shape[0]}")
    return spec._apply(theta, x)


def apply_inverse(spec: MeasurementSpec, theta: Theta | None, y) -> T.Tensor:
    """Approximate reconstruction for the baseline pipeline (not differentiable)."""
    yv = y.values if isinstance(y, T.Tensor) else np.asarray(y, dtype=np.float64)
    if yv.shape[1:] != spec.output_shape:
        raise T.ShapeError(
            f"{spec.kind}: measurement shape {yv.shape} does not match (batch, *{spec.output_shape})")
    if theta is not None and theta.kind != spec.kind:
        raise MeasurementError(f"theta of kind {theta.kind!r} given to {spec.kind!r}")
    return T.Tensor(spec._inverse(theta, yv))


def is_invertible(spec: MeasurementSpec) -> bool:
    if isinstance(spec, Compose):
        return all(is_invertible(s) for s in spec.stages)
    return type(spec)._inverse is not MeasurementSpec._inverse


def severity(spec: MeasurementSpec) -> float:
    """Scalar corruption strength: block probability, or noise sigma for blur+noise."""
    if isinstance(spec, BlockPixels):
        return spec.p
    if isinstance(spec, ConvolveNoise):
        return spec.noise_sigma
    if isinstance(spec, Compose):
        for stage in reversed(spec.stages):
            if isinstance(stage, (BlockPixels, ConvolveNoise)):
                return severity(stage)
    return 0.0


def with_severity(spec: MeasurementSpec, value: float) -> MeasurementSpec:
    if isinstance(spec, BlockPixels):
        return replace(spec, p=value)
    if isinstance(spec, ConvolveNoise):
        return replace(spec, noise_sigma=value)
    if isinstance(spec, Compose):
        stages = list(spec.stages)
        for i in range(len(stages) - 1, -1, -1):
            if isinstance(stages[i], (BlockPixels, ConvolveNoise)):
                stages[i] = with_severity(stages[i], value)
                return replace(spec, stages=tuple(stages))
    raise MeasurementError(f"{spec.kind} has no severity parameter")


KINDS = {cls.kind: cls for cls in (BlockPixels, ConvolveNoise, KeepPatch, ExtractPatch,
                                   PadRotateProject, GaussianProjection, Compose)}
