"""Sample-quality scoring and the severity sweep.

Scores are sliced-Wasserstein distances to clean data: lower is better, so a
score that "does not degrade quickly" with severity is one that grows slowly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _rng

CSV_COLUMNS = ("iteration", "variant", "severity", "sw_distance",
               "d_real_mean", "d_fake_mean", "wallclock_s")


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    variant: str
    severity: float
    sw_distance: float
    d_real_mean: float
    d_fake_mean: float
    wallclock_s: float = 0.0


def random_directions(dim: int, projections: int, seed: int) -> np.ndarray:
    """``projections`` unit vectors in R^dim, shape (projections, dim)."""
    v = _rng.stream(seed, "sw").standard_normal((projections, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, projections: int = 128, seed: int = 0,
                       directions: np.ndarray | None = None) -> float:
    """Mean 1-D Wasserstein-1 distance between ``a`` and ``b`` over random directions.

    The larger set is subsampled without replacement to the size of the smaller.
    Passing ``directions`` reuses a fixed projection set.
    """
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each set needs at least two samples")
    n = min(len(a), len(b))
    sub = _rng.stream(seed, "sw", phase=1)
    if len(a) > n:
        a = a[np.sort(sub.choice(len(a), n, replace=False))]
    if len(b) > n:
        b = b[np.sort(sub.choice(len(b), n, replace=False))]
    if directions is None:
        directions = random_directions(a.shape[1], projections, seed)
    pa = np.sort(a @ directions.T, axis=0)
    pb = np.sort(b @ directions.T, axis=0)
    return float(np.mean(np.abs(pa - pb)))


@dataclass
class SweepResult:
    table: list[MetricsRecord] = field(default_factory=list)
    curves: dict[tuple[float, str], list[MetricsRecord]] = field(default_factory=dict)
    absent: list[tuple[float, str]] = field(default_factory=list)
    failed: dict[tuple[float, str], str] = field(default_factory=dict)


def severity_sweep(base_cfg, severities: Sequence[float], variants: Sequence[str],
                   jobs: int = 1, on_cell=None) -> SweepResult:
    """Train every (severity, variant) cell with the base seed; keep final records.

    Cells whose measurement has no inverse under ``baseline`` are listed in
    ``absent``; other exceptions land in ``failed`` and the sweep carries on.
    ``on_cell(severity, variant, cfg)`` may return an ``on_eval`` callback.
    """
    from . import measurements as M
    from .training import train

    cells = [(float(s), v) for s in severities for v in variants]
    result = SweepResult()

    def run_cell(cell):
        sev, variant = cell
        cfg = replace(base_cfg, variant=variant,
                      measurement=M.with_severity(base_cfg.measurement, sev))
        on_eval = on_cell(sev, variant, cfg) if on_cell is not None else None
        return train(cfg, on_eval=on_eval)[1]

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [(cell, pool.submit(run_cell, cell)) for cell in cells]
        for cell, fut in futures:
            try:
                curve = fut.result()
            except M.Uninvertible:
                result.absent.append(cell)
                continue
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                result.failed[cell] = f"{type(exc).__name__}: {exc}"
                continue
            result.curves[cell] = curve
            if curve:
                result.table.append(curve[-1])
    return result
