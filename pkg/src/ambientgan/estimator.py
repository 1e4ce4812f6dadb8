"""scikit-learn style front end: fit on measurements, sample clean-space data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import measurements as M
from . import nets
from . import training as TR
from .metrics import sliced_wasserstein


@dataclass(frozen=True)
class _ArrayData:
    image_shape: tuple[int, ...]
    sample_count: int


class AmbientGAN(BaseEstimator):
    """Generator trained adversarially against measurements of its own samples.

    Parameters
    ----------
    measurement : MeasurementSpec or None
        The known corruption the training data went through. ``None`` means
        the data is clean and is only valid with ``variant="standard"``.
    variant : {"ambient", "baseline", "ignore", "standard"}
        What the discriminator compares against; see :mod:`ambientgan.training`.
    max_iter : int
        Generator updates; each is preceded by ``n_critic`` discriminator updates.

    Attributes
    ----------
    generator_ : MlpParams
    discriminator_ : MlpParams
    history_ : list of StepStats
    """

    def __init__(self, measurement=None, variant="ambient", quality_function="non_saturating_log",
                 latent_dim=32, latent_family="normal", generator_hidden=(64, 64),
                 discriminator_hidden=(64, 64), generator_head="tanh", init_scheme="normal",
                 n_critic=1, batch_size=64, learning_rate=2e-4, beta1=0.5, beta2=0.999, max_iter=1000,
                 random_state=0):
        self.measurement = measurement
        self.variant = variant
        self.quality_function = quality_function
        self.latent_dim = latent_dim
        self.latent_family = latent_family
        self.generator_hidden = generator_hidden
        self.discriminator_hidden = discriminator_hidden
        self.generator_head = generator_head
        self.init_scheme = init_scheme
        self.n_critic = n_critic
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.max_iter = max_iter
        self.random_state = random_state

    def _config(self, n_features: int) -> TR.PipelineConfig:
        meas = self.measurement
        if meas is None:
            if self.variant != "standard":
                raise ValueError(f"variant {self.variant!r} needs a measurement")
            meas = M.BlockPixels((n_features,), p=0.0)
        seed = self.random_state if self.random_state is not None else 0
        if not isinstance(seed, (int, np.integer)):
            raise ValueError("random_state must be an int or None")
        return TR.PipelineConfig(
            variant=self.variant, quality_function=self.quality_function, K=self.n_critic,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            adam_beta1=self.beta1, adam_beta2=self.beta2, iterations=self.max_iter,
            seed=int(seed), latent=nets.LatentSpec(self.latent_dim, self.latent_family),
            dataset=_ArrayData(meas.image_shape, 0), measurement=meas,
            generator_hidden=tuple(self.generator_hidden),
            discriminator_hidden=tuple(self.discriminator_hidden),
            generator_head=self.generator_head, init_scheme=self.init_scheme)

    def fit(self, Y, y=None):
        """Fit on measurements ``Y`` of shape (n_samples, n_measured_features).

        For ``variant="standard"`` ``Y`` is clean data. Multi-dimensional
        measurements must be flattened row-wise.
        """
        Y = check_array(Y, dtype=np.float64, ensure_min_samples=2)
        cfg = self._config(Y.shape[1])
        expected = cfg.measurement.n_in if self.variant == "standard" else cfg.measurement.n_out
        if Y.shape[1] != expected:
            raise ValueError(f"Y has {Y.shape[1]} features, the {self.variant} pipeline expects {expected}")
        real = Y
        if self.variant == "baseline":
            shaped = Y.reshape((len(Y),) + cfg.measurement.output_shape)
            real = M.apply_inverse(cfg.measurement, None, shaped).values.reshape(len(Y), -1)
        history = []
        state, _ = TR.run(cfg, TR.TrainingData(real), on_step=lambda st, s: history.append(s))
        self.config_ = cfg
        self.state_ = state
        self.generator_ = state.generator
        self.discriminator_ = state.discriminator
        self.history_ = history
        self.n_features_in_ = Y.shape[1]
        return self

    def sample(self, n_samples=1, random_state=None):
        """Draw ``n_samples`` flat samples from the generator."""
        check_is_fitted(self, "generator_")
        seed = self.config_.seed if random_state is None else int(random_state)
        return TR.generate(self.generator_, self.config_, n_samples, seed)

    def measure(self, X, random_state=0):
        """Apply the configured measurement to clean rows of ``X``; returns flat rows."""
        X = check_array(X, dtype=np.float64)
        meas = self.measurement
        theta = M.sample_theta(meas, len(X), seed=int(random_state))
        y = M.apply(meas, theta, X.reshape((len(X),) + meas.image_shape)).values
        return y.reshape(len(X), -1)

    def predict_proba(self, Y):
        """Discriminator belief that each row of ``Y`` is real, as (P(fake), P(real)) columns."""
        check_is_fitted(self, "discriminator_")
        Y = check_array(Y, dtype=np.float64)
        p = nets.discriminator_forward(self.discriminator_, Y).values[:, 0]
        return np.column_stack([1.0 - p, p])

    def score(self, X, y=None):
        """Negative sliced-Wasserstein distance between clean ``X`` and generated samples."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        return -sliced_wasserstein(self.sample(len(X)), X, seed=self.config_.seed)
