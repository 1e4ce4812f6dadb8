"""Desk-scale clean datasets and the measurement pass that produces training data."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import _rng
from . import measurements as M
from .tape import ShapeError


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianMixture2D:
    """Mixture of 2-D Gaussians; ``components`` holds (mean, covariance, weight)."""

    components: tuple = ()
    sample_count: int = 10000
    kind = "gaussian_mixture_2d"

    def __post_init__(self):
        comps = self.components or square_mixture()
        comps = tuple((np.asarray(m, dtype=np.float64).reshape(2),
                       np.asarray(c, dtype=np.float64).reshape(2, 2), float(w)) for m, c, w in comps)
        weights = np.array([w for _, _, w in comps])
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise DataError(f"mixture weights must be non-negative and sum to 1, got {weights}")
        for _, cov, _ in comps:
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise DataError(f"covariance must be symmetric positive semi-definite: {cov.tolist()}")
        object.__setattr__(self, "components", comps)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return (2,)

    @property
    def mean(self) -> np.ndarray:
        return sum(w * m for m, _, w in self.components)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        weights = np.array([w for _, _, w in self.components])
        which = rng.choice(len(weights), size=n, p=weights)
        noise = rng.standard_normal((n, 2))
        out = np.empty((n, 2))
        for j, (mean, cov, _) in enumerate(self.components):
            vals, vecs = np.linalg.eigh(cov)
            root = vecs * np.sqrt(np.clip(vals, 0, None))
            sel = which == j
            out[sel] = mean + noise[sel] @ root.T
        return out


def square_mixture(spread: float = 2.0, std: float = 0.3) -> tuple:
    """Four equal-weight isotropic modes at (+-spread, +-spread)."""
    cov = np.eye(2) * std ** 2
    return tuple(((sx * spread, sy * spread), cov, 0.25) for sx in (1, -1) for sy in (1, -1))


SHAPE_CLASSES = ("bar", "cross", "box", "disk")


def _templates() -> dict[str, list[np.ndarray]]:
    yy, xx = np.mgrid[0:8, 0:8]
    vbar = (xx >= 3) & (xx <= 4) & (yy >= 1) & (yy <= 6)
    cross = vbar | vbar.T
    box = ((yy == 1) | (yy == 6) | (xx == 1) | (xx == 6)) & (yy >= 1) & (yy <= 6) & (xx >= 1) & (xx <= 6)
    disk = (yy - 3.5) ** 2 + (xx - 3.5) ** 2 <= 2.5 ** 2
    return {"bar": [vbar, vbar.T.copy()], "cross": [cross], "box": [box], "disk": [disk]}


@dataclass(frozen=True)
class Shapes8x8:
    """Binary 8x8 glyphs (+1 on a -1 background), randomly shifted by up to ``jitter`` pixels."""

    classes: tuple[str, ...] = SHAPE_CLASSES
    jitter: int = 1
    sample_count: int = 10000
    kind = "shapes8x8"

    def __post_init__(self):
        classes = tuple(self.classes)
        bad = set(classes) - set(SHAPE_CLASSES)
        if not classes or bad:
            raise DataError(f"shape classes must be a non-empty subset of {SHAPE_CLASSES}, got {classes}")
        if self.jitter < 0:
            raise DataError("jitter must be non-negative")
        object.__setattr__(self, "classes", classes)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return (8, 8)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        templates = _templates()
        out = -np.ones((n, 8, 8))
        which = rng.integers(0, len(self.classes), n)
        shifts = rng.integers(-self.jitter, self.jitter + 1, (n, 2))
        variant = rng.integers(0, 2, n)
        for i in range(n):
            options = templates[self.classes[which[i]]]
            glyph = options[variant[i] % len(options)]
            dr, dc = shifts[i]
            shifted = np.zeros((8, 8), dtype=bool)
            src = glyph[max(0, -dr):8 - max(0, dr), max(0, -dc):8 - max(0, dc)]
            shifted[max(0, dr):max(0, dr) + src.shape[0], max(0, dc):max(0, dc) + src.shape[1]] = src
            out[i][shifted] = 1.0
        return out.reshape(n, 64)


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file of unsigned bytes (e.g. MNIST images 0x00000803, labels 0x00000801)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataError(f"{path}: too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype != 0x08 or ndim < 1:
        raise DataError(f"{path}: bad IDX magic 0x{raw[:4].hex()}; expected unsigned-byte data")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if len(raw) - header != math.prod(dims):
        raise DataError(f"{path}: dimensions {dims} need {math.prod(dims)} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


@dataclass(frozen=True)
class IdxFile:
    """Images from an IDX file, scaled from [0, 255] to [-1, 1]."""

    path: str = ""
    sample_count: int = 10000
    kind = "idx_file"
    _shape: tuple = field(default=(), compare=False, repr=False)

    def _load(self) -> np.ndarray:
        images = read_idx(self.path)
        if images.ndim != 3:
            raise DataError(f"{self.path}: expected (count, rows, cols) images, got dims {images.shape}")
        return images

    @property
    def image_shape(self) -> tuple[int, ...]:
        if not self._shape:
            object.__setattr__(self, "_shape", tuple(self._load().shape[1:]))
        return self._shape

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        images = self._load()
        if n > len(images):
            raise DataError(f"{self.path}: asked for {n} images, file holds {len(images)}")
        pick = np.sort(rng.choice(len(images), size=n, replace=False))
        return images[pick].reshape(n, -1).astype(np.float64) / 127.5 - 1.0


DatasetSpec = GaussianMixture2D | Shapes8x8 | IdxFile


def sample_clean(spec: DatasetSpec, n: int, seed: int, purpose: str = "clean") -> np.ndarray:
    """``n`` flat clean samples, shape (n, prod(image_shape)); deterministic in ``seed``.

    ``purpose="reference"`` draws an evaluation set independent of the training corpus.
    """
    if n < 0:
        raise DataError(f"sample count must be >= 0, got {n}")
    return spec.sample(n, _rng.stream(seed, purpose))


@dataclass(frozen=True)
class MeasuredDataset:
    """Real measurements Y^r; the clean originals and per-sample theta are not kept."""

    measurements: np.ndarray
    spec: M.MeasurementSpec

    def __len__(self):
        return len(self.measurements)


def measure_corpus(clean: np.ndarray, spec: M.MeasurementSpec, seed: int,
                   per_sample: int = 1, chunk: int = 1024) -> MeasuredDataset:
    """Measure each clean sample ``per_sample`` times with fresh theta.

    Row ``i * per_sample + j`` is the j-th measurement of clean sample ``i``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    n = len(clean)
    try:
        clean = clean.reshape((n,) + spec.image_shape)
    except ValueError:
        raise ShapeError(
            f"clean corpus {clean.shape} does not fit measurement input {spec.image_shape}") from None
    if per_sample < 1:
        raise DataError("per_sample must be >= 1")
    rows = np.repeat(np.arange(n), per_sample)
    out = np.empty((n * per_sample,) + spec.output_shape)
    for start in range(0, len(rows), chunk):
        idx = np.arange(start, min(start + chunk, len(rows)))
        gens = [_rng.stream(seed, "corpus", 0, 0, int(i)) for i in idx]
        theta = spec._draw(gens)
        out[idx] = M.apply(spec, theta, clean[rows[idx]]).values
    return MeasuredDataset(out, spec)
