"""Adversarial training from measurements: losses, Adam and the training loop.

Four pipeline variants share one loop and differ only in what the
discriminator sees:

``ambient``   real measurements vs. measurements of generated samples
``baseline``  approximately inverted measurements vs. generated samples
``ignore``    raw measurements treated as clean vs. generated samples
``standard``  clean data vs. generated samples (no corruption at all)
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Callable

import numpy as np

from . import _rng
from . import data as D
from . import measurements as M
from . import nets
from . import tape as T
from .metrics import MetricsRecord, sliced_wasserstein

VARIANTS = ("ambient", "baseline", "ignore", "standard")
QUALITIES = ("log", "non_saturating_log")
ADAM_EPS = 1e-8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "ambient"
    quality_function: str = "non_saturating_log"
    K: int = 1
    batch_size: int = 64
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    iterations: int = 1000
    eval_every: int = 100
    seed: int = 0
    latent: nets.LatentSpec = field(default_factory=nets.LatentSpec)
    dataset: object = field(default_factory=D.Shapes8x8)
    # None means the identity measurement (nothing blocked)
    measurement: M.MeasurementSpec | None = None
    measurements_per_sample: int = 1
    generator_hidden: tuple[int, ...] = (64, 64)
    discriminator_hidden: tuple[int, ...] = (64, 64)
    # None picks tanh for images, affine for point data
    generator_head: str | None = None
    init_scheme: str = "normal"
    eval_samples: int = 2048
    projections: int = 128
    record_wallclock: bool = False

    def __post_init__(self):
        if self.measurement is None:
            object.__setattr__(self, "measurement", M.BlockPixels(self.dataset.image_shape, p=0.0))
        if self.generator_head is None:
            head = "affine" if isinstance(self.dataset, D.GaussianMixture2D) else "tanh"
            object.__setattr__(self, "generator_head", head)
        object.__setattr__(self, "generator_hidden", tuple(self.generator_hidden))
        object.__setattr__(self, "discriminator_hidden", tuple(self.discriminator_hidden))
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.quality_function not in QUALITIES:
            problems.append(f"quality_function must be one of {QUALITIES}, got {self.quality_function!r}")
        if self.K < 1:
            problems.append("K must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            problems.append("learning_rate must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                problems.append(f"{name} must be in [0, 1)")
        if self.iterations < 0 or self.eval_every < 1:
            problems.append("iterations must be >= 0 and eval_every >= 1")
        if self.measurements_per_sample < 1:
            problems.append("measurements_per_sample must be >= 1")
        if self.init_scheme not in nets.INIT_SCHEMES:
            problems.append(f"init_scheme must be one of {nets.INIT_SCHEMES}, got {self.init_scheme!r}")
        if self.generator_head not in ("tanh", "affine"):
            problems.append(f"generator_head must be 'tanh' or 'affine', got {self.generator_head!r}")
        if self.measurement.image_shape != tuple(self.dataset.image_shape):
            problems.append(f"measurement expects {self.measurement.image_shape}, "
                            f"dataset yields {tuple(self.dataset.image_shape)}")
        elif self.variant == "ignore" and self.measurement.output_shape != self.measurement.image_shape:
            problems.append("the ignore variant needs a shape-preserving measurement")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def sample_dim(self) -> int:
        return self.measurement.n_in

    @property
    def generator_widths(self) -> list[int]:
        out = self.measurement.n_out if self.variant == "ignore" else self.sample_dim
        return [self.latent.dim, *self.generator_hidden, out]

    @property
    def discriminator_widths(self) -> list[int]:
        inp = self.measurement.n_out if self.variant in ("ambient", "ignore") else self.sample_dim
        return [inp, *self.discriminator_hidden, 1]


def _canonical(obj):
    if is_dataclass(obj):
        out = {"type": type(obj).__name__}
        out.update({f.name: _canonical(getattr(obj, f.name)) for f in fields(obj)
                    if not f.name.startswith("_")})
        return out
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_canonical(x) for x in obj]
    if isinstance(obj, (np.floating, float)):
        return repr(float(obj))
    return obj


_UNDIGESTED = {"iterations", "eval_every", "eval_samples", "projections", "record_wallclock"}


def config_digest(cfg: PipelineConfig) -> bytes:
    """SHA-256 over every field that shapes the training trajectory."""
    doc = _canonical(cfg)
    for key in _UNDIGESTED:
        doc.pop(key, None)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


# losses -------------------------------------------------------------------

def _check_prob(p: T.Tensor) -> None:
    v = p.values
    if np.any(~((v > 0) & (v < 1))):
        raise T.DomainError("discriminator outputs must lie strictly inside (0, 1)")


def _log(p: T.Tensor) -> T.Tensor:
    if p.logit is not None:
        return T.log_sigmoid(p.logit)
    _check_prob(p)
    return T.log(p)


def _log1m(p: T.Tensor) -> T.Tensor:
    if p.logit is not None:
        return T.log_sigmoid(-p.logit)
    _check_prob(p)
    return T.log(1.0 - p)


def discriminator_loss(d_real, d_fake, quality: str = "log") -> T.Tensor:
    """Negated mean of q(D(real)) + q(1 - D(fake)); minimising it is the ascent step."""
    if quality not in QUALITIES:
        raise ValueError(f"unknown quality function {quality!r}")
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    return -(T.mean(_log(d_real)) + T.mean(_log1m(d_fake)))


def generator_loss(d_fake, quality: str = "log") -> T.Tensor:
    """``log``: mean log(1 - D(fake)) (saturating); ``non_saturating_log``: -mean log D(fake)."""
    d_fake = T.as_tensor(d_fake)
    if quality == "log":
        return T.mean(_log1m(d_fake))
    if quality == "non_saturating_log":
        return -T.mean(_log(d_fake))
    raise ValueError(f"unknown quality function {quality!r}")


# optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)

    def copy(self) -> AdamState:
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.t)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = ADAM_EPS) -> tuple[list[np.ndarray], AdamState]:
    if len(params) != len(grads) or len(params) != len(state.m):
        raise T.ShapeError(f"adam: {len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    t = state.t + 1
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise T.ShapeError(f"adam: incompatible shapes {p.shape} and {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


# trainer ------------------------------------------------------------------

@dataclass
class TrainerState:
    generator: nets.MlpParams
    discriminator: nets.MlpParams
    g_opt: AdamState
    d_opt: AdamState
    iteration: int = 0

    def copy(self) -> TrainerState:
        return TrainerState(self.generator.copy(), self.discriminator.copy(),
                            self.g_opt.copy(), self.d_opt.copy(), self.iteration)


@dataclass
class StepStats:
    d_loss: float
    g_loss: float
    d_real_mean: float
    d_fake_mean: float


def init_state(cfg: PipelineConfig) -> TrainerState:
    g = nets.init_params(cfg.generator_widths, cfg.seed, stream_id=0, scheme=cfg.init_scheme)
    d = nets.init_params(cfg.discriminator_widths, cfg.seed, stream_id=1, scheme=cfg.init_scheme)
    return TrainerState(g, d, AdamState.zeros_like(g.arrays()), AdamState.zeros_like(d.arrays()))


@dataclass(frozen=True)
class TrainingData:
    """``real`` is all the learner sees; ``reference`` is clean data held out for scoring."""

    real: np.ndarray
    reference: np.ndarray | None = None


def prepare_data(cfg: PipelineConfig) -> TrainingData:
    """Build the variant's real training set plus an independent clean reference set."""
    meas = cfg.measurement
    if cfg.variant == "baseline" and not M.is_invertible(meas):
        raise M.Uninvertible(meas.kind)
    clean = D.sample_clean(cfg.dataset, cfg.dataset.sample_count, cfg.seed)
    if cfg.variant == "standard":
        real = clean
    else:
        measured = D.measure_corpus(clean, meas, cfg.seed, cfg.measurements_per_sample)
        del clean
        real = measured.measurements
        if cfg.variant == "baseline":
            real = M.apply_inverse(meas, None, real).values
    reference = D.sample_clean(cfg.dataset, cfg.eval_samples, cfg.seed, purpose="reference")
    return TrainingData(real.reshape(len(real), -1), reference)


def _fake_branch(cfg: PipelineConfig, x: T.Tensor, iteration: int, phase: int,
                 purpose: str = "theta") -> T.Tensor:
    if cfg.variant != "ambient":
        return x
    meas = cfg.measurement
    b = x.shape[0]
    theta = M.sample_theta(meas, b, cfg.seed, iteration, phase, purpose=purpose)
    y = M.apply(meas, theta, T.reshape(x, (b,) + meas.image_shape))
    return T.reshape(y, (b, meas.n_out))


def train_step(state: TrainerState, cfg: PipelineConfig, real: np.ndarray) -> StepStats:
    """K discriminator updates then one generator update; advances ``state`` in place."""
    it, m, seed = state.iteration, cfg.batch_size, cfg.seed
    q = cfg.quality_function
    for k in range(cfg.K):
        z = cfg.latent.sample(m, _rng.stream(seed, "latent", it, k))
        y_real = real[_rng.stream(seed, "batch", it, k).integers(0, len(real), m)]
        fake = _fake_branch(cfg, nets.generator_forward(state.generator, z, cfg.generator_head), it, k)
        with T.Tape():
            d_leaves = nets.leaves(state.discriminator)
            d_real = nets.discriminator_forward(d_leaves, y_real)
            d_fake = nets.discriminator_forward(d_leaves, fake.values)
            d_loss = discriminator_loss(d_real, d_fake, q)
            grads = T.grad(d_loss, d_leaves)
        new, state.d_opt = adam_step(state.discriminator.arrays(), grads, state.d_opt,
                                     cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)
        state.discriminator = nets.MlpParams.from_arrays(new)

    z = cfg.latent.sample(m, _rng.stream(seed, "latent", it, cfg.K))
    with T.Tape():
        g_leaves = nets.leaves(state.generator)
        x = nets.generator_forward(g_leaves, z, cfg.generator_head)
        d_gen = nets.discriminator_forward(state.discriminator, _fake_branch(cfg, x, it, cfg.K))
        g_loss = generator_loss(d_gen, q)
        grads = T.grad(g_loss, g_leaves)
    new, state.g_opt = adam_step(state.generator.arrays(), grads, state.g_opt,
                                 cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)
    state.generator = nets.MlpParams.from_arrays(new)
    state.iteration += 1
    return StepStats(float(d_loss.values), float(g_loss.values),
                     float(d_real.values.mean()), float(d_fake.values.mean()))


def generate(params: nets.MlpParams, cfg: PipelineConfig, n: int, seed: int,
             iteration: int = 0) -> np.ndarray:
    """``n`` flat generator samples from the evaluation latent stream."""
    z = cfg.latent.sample(n, _rng.stream(seed, "eval", iteration))
    return nets.generator_forward(params, z, cfg.generator_head).values


def evaluate(state: TrainerState, cfg: PipelineConfig, data: TrainingData,
             wallclock: float = 0.0) -> MetricsRecord:
    it = state.iteration
    samples = generate(state.generator, cfg, cfg.eval_samples, cfg.seed, it)
    sw = sliced_wasserstein(samples, data.reference, cfg.projections, cfg.seed)
    n_probe = min(len(data.real), 512)
    d_real = nets.discriminator_forward(state.discriminator, data.real[:n_probe]).values
    fake = _fake_branch(cfg, T.Tensor(samples[:n_probe]), it, 1, purpose="eval").values
    d_fake = nets.discriminator_forward(state.discriminator, fake).values
    return MetricsRecord(
        iteration=it, variant=cfg.variant, severity=M.severity(cfg.measurement),
        sw_distance=sw, d_real_mean=float(d_real.mean()), d_fake_mean=float(d_fake.mean()),
        wallclock_s=wallclock if cfg.record_wallclock else 0.0)


def run(cfg: PipelineConfig, data: TrainingData, state: TrainerState | None = None,
        on_eval: Callable[[TrainerState, MetricsRecord], None] | None = None,
        on_step: Callable[[TrainerState, StepStats], None] | None = None,
        ) -> tuple[TrainerState, list[MetricsRecord]]:
    """Train from ``state`` (fresh if None) up to ``cfg.iterations``.

    Metrics are taken at iteration 0 and every ``eval_every`` iterations when
    ``data.reference`` is set. ``on_eval`` sees each record as soon as it exists.
    """
    state = init_state(cfg) if state is None else state
    records: list[MetricsRecord] = []
    if cfg.iterations == 0:
        return state, records
    start = time.perf_counter()

    def checkpoint():
        if data.reference is None:
            return
        rec = evaluate(state, cfg, data, time.perf_counter() - start)
        records.append(rec)
        if on_eval is not None:
            on_eval(state, rec)

    if state.iteration == 0:
        checkpoint()
    while state.iteration < cfg.iterations:
        stats = train_step(state, cfg, data.real)
        if on_step is not None:
            on_step(state, stats)
        if not all(map(math.isfinite, (stats.d_loss, stats.g_loss))):
            raise FloatingPointError(f"non-finite loss at iteration {state.iteration}")
        if state.iteration % cfg.eval_every == 0:
            checkpoint()
    return state, records


def train(cfg: PipelineConfig, state: TrainerState | None = None,
          on_eval: Callable[[TrainerState, MetricsRecord], None] | None = None,
          ) -> tuple[TrainerState, list[MetricsRecord]]:
    """Build the data for ``cfg`` and run the full training loop."""
    return run(cfg, prepare_data(cfg), state, on_eval)
