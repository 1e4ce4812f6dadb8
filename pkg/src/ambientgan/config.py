"""Flat INI experiment files: ``[dataset] [measurement] [model] [train] [eval]``.

Every key is validated before anything is computed. Keys that do not apply to
the selected dataset or measurement kind are rejected like typos. Patch sizes
are fractions of the image side.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import measurements as M
from .nets import LatentSpec
from .training import ConfigError, PipelineConfig

SECTIONS = ("dataset", "measurement", "model", "train", "eval")

_DATASET_KEYS = {
    "gaussian_mixture_2d": ("means", "std", "weights"),
    "shapes8x8": ("classes", "jitter"),
    "idx_file": ("path",),
}
_MEASUREMENT_KEYS = {
    "identity": (),
    "block_pixels": ("p",),
    "convolve_noise": ("kernel_size", "kernel_sigma", "noise_mu", "noise_sigma", "wiener_lambda"),
    "keep_patch": ("patch_fraction",),
    "extract_patch": ("patch_fraction",),
    "pad_rotate_project": ("pad", "disclose_theta"),
    "gaussian_projection": ("m_out", "disclose_theta"),
    "compose": ("stages",),
}
_FIXED_KEYS = {
    "model": ("latent_dim", "latent_family", "generator_hidden", "discriminator_hidden",
              "generator_head", "init_scheme"),
    "train": ("variant", "quality_function", "K", "batch_size", "learning_rate", "adam_beta1",
              "adam_beta2", "iterations", "eval_every", "seed"),
    "eval": ("eval_samples", "projections", "grid_rows", "grid_cols", "record_wallclock"),
}

DEFAULTS = {
    "dataset": {"kind": "shapes8x8", "sample_count": "10000",
                "means": "2,2; 2,-2; -2,2; -2,-2", "std": "0.3", "weights": "",
                "classes": ",".join(D.SHAPE_CLASSES), "jitter": "1", "path": ""},
    "measurement": {"kind": "identity", "measurements_per_sample": "1", "p": "0.5",
                    "kernel_size": "5", "kernel_sigma": "", "noise_mu": "0", "noise_sigma": "0.1",
                    "wiener_lambda": "0.001", "patch_fraction": "0.5", "pad": "",
                    "disclose_theta": "false", "m_out": "1", "stages": ""},
    "model": {"latent_dim": "", "latent_family": "normal", "generator_hidden": "64,64",
              "discriminator_hidden": "64,64", "generator_head": "",
              "init_scheme": "normal"},
    "train": {"variant": "ambient", "quality_function": "non_saturating_log", "K": "1",
              "batch_size": "64", "learning_rate": "0.0002", "adam_beta1": "0.5",
              "adam_beta2": "0.999", "iterations": "1000", "eval_every": "100", "seed": "0"},
    "eval": {"eval_samples": "2048", "projections": "128", "grid_rows": "8", "grid_cols": "8",
             "record_wallclock": "false"},
}


@dataclass(frozen=True)
class Settings:
    pipeline: PipelineConfig
    grid_rows: int
    grid_cols: int
    sections: dict[str, dict[str, str]]

    def render(self) -> str:
        return render(self.sections)


def _to_int(section, key, value) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}") from None


def _to_float(section, key, value) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"[{section}] {key}: must be finite")
    return out


def _to_bool(section, key, value) -> bool:
    low = value.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected true/false, got {value!r}")


def _int_list(section, key, value) -> tuple[int, ...]:
    return tuple(_to_int(section, key, v) for v in value.split(",") if v.strip())


def _allowed(section: str, merged: dict[str, dict[str, str]]) -> set[str]:
    if section in _FIXED_KEYS:
        return set(_FIXED_KEYS[section])
    if section == "dataset":
        kind = merged["dataset"].get("kind", DEFAULTS["dataset"]["kind"])
        if kind not in _DATASET_KEYS:
            raise ConfigError(f"[dataset] kind: unknown dataset {kind!r}; choose from {sorted(_DATASET_KEYS)}")
        return {"kind", "sample_count", *_DATASET_KEYS[kind]}
    kind = merged["measurement"].get("kind", DEFAULTS["measurement"]["kind"])
    if kind not in _MEASUREMENT_KEYS:
        raise ConfigError(f"[measurement] kind: unknown measurement {kind!r}; "
                          f"choose from {sorted(_MEASUREMENT_KEYS)}")
    keys = {"kind", "measurements_per_sample", *_MEASUREMENT_KEYS[kind]}
    if kind == "compose":
        for stage in _stages(merged["measurement"].get("stages", "")):
            keys.update(_MEASUREMENT_KEYS[stage])
    return keys


def _stages(value: str) -> list[str]:
    stages = [s.strip() for s in value.split(",") if s.strip()]
    for s in stages:
        if s not in _MEASUREMENT_KEYS or s in ("compose", "identity"):
            raise ConfigError(f"[measurement] stages: {s!r} cannot be a compose stage")
    return stages


def parse(text: str, overrides: dict[str, dict[str, str]] | None = None) -> Settings:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    given = {s: dict(parser[s]) for s in parser.sections()}
    for name in given:
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]; expected {', '.join(SECTIONS)}")
    for section, values in (overrides or {}).items():
        given.setdefault(section, {}).update(values)
    given = {s: given.get(s, {}) for s in SECTIONS}
    for section in SECTIONS:
        allowed = _allowed(section, given)
        unknown = sorted(set(given[section]) - allowed)
        if unknown:
            raise ConfigError(f"[{section}] unknown or inapplicable key(s): {', '.join(unknown)}")
    return _build(given)


def load(path: str | Path, overrides: dict[str, dict[str, str]] | None = None) -> Settings:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse(text, overrides)


def _dataset(v: dict[str, str]):
    kind = v["kind"]
    count = _to_int("dataset", "sample_count", v["sample_count"])
    if count < 2:
        raise ConfigError("[dataset] sample_count must be >= 2")
    if kind == "gaussian_mixture_2d":
        means = []
        for chunk in v["means"].split(";"):
            pair = [_to_float("dataset", "means", x) for x in chunk.split(",") if x.strip()]
            if len(pair) != 2:
                raise ConfigError(f"[dataset] means: each mean needs two coordinates, got {chunk!r}")
            means.append(pair)
        stds = [_to_float("dataset", "std", x) for x in v["std"].split(",")]
        if len(stds) == 1:
            stds *= len(means)
        weights = ([_to_float("dataset", "weights", x) for x in v["weights"].split(",")]
                   if v["weights"].strip() else [1.0 / len(means)] * len(means))
        if not len(stds) == len(weights) == len(means):
            raise ConfigError("[dataset] means, std and weights must have the same length")
        comps = tuple((m, np.eye(2) * s * s, w) for m, s, w in zip(means, stds, weights))
        return D.GaussianMixture2D(comps, sample_count=count)
    if kind == "shapes8x8":
        classes = tuple(c.strip() for c in v["classes"].split(",") if c.strip())
        return D.Shapes8x8(classes, _to_int("dataset", "jitter", v["jitter"]), sample_count=count)
    if not v["path"]:
        raise ConfigError("[dataset] path is required for idx_file")
    spec = D.IdxFile(v["path"], sample_count=count)
    try:
        spec.image_shape
    except (OSError, D.DataError) as exc:
        raise ConfigError(f"[dataset] path: {exc}") from None
    return spec


def _measurement(kind: str, v: dict[str, str], shape: tuple[int, ...]) -> M.MeasurementSpec:
    f = lambda key: _to_float("measurement", key, v[key])  # noqa: E731
    i = lambda key: _to_int("measurement", key, v[key])  # noqa: E731
    if kind == "identity":
        return M.BlockPixels(shape, p=0.0)
    if kind == "block_pixels":
        return M.BlockPixels(shape, p=f("p"))
    if kind == "convolve_noise":
        sigma = f("kernel_sigma") if v["kernel_sigma"] else None
        return M.ConvolveNoise(shape, kernel_size=i("kernel_size"), kernel_sigma=sigma,
                               noise_mu=f("noise_mu"), noise_sigma=f("noise_sigma"),
                               wiener_lambda=f("wiener_lambda"))
    if kind in ("keep_patch", "extract_patch"):
        frac = f("patch_fraction")
        if len(shape) != 2 or not 0 < frac <= 1:
            raise ConfigError("[measurement] patch_fraction must be in (0, 1] on 2-D images")
        k = max(1, round(frac * min(shape)))
        cls = M.KeepPatch if kind == "keep_patch" else M.ExtractPatch
        return cls(shape, k=k)
    disclose = _to_bool("measurement", "disclose_theta", v["disclose_theta"])
    if kind == "pad_rotate_project":
        pad = i("pad") if v["pad"] else math.ceil(max(shape) * (math.sqrt(2) - 1) / 2)
        return M.PadRotateProject(shape, pad=pad, disclose_theta=disclose)
    if kind == "gaussian_projection":
        return M.GaussianProjection(shape, m_out=i("m_out"), disclose_theta=disclose)
    stages, current = [], shape
    for name in _stages(v["stages"]):
        stage = _measurement(name, v, current)
        stages.append(stage)
        current = stage.output_shape
    if not stages:
        raise ConfigError("[measurement] stages: compose needs at least one stage")
    return M.Compose(shape, stages=tuple(stages))


def _build(given: dict[str, dict[str, str]]) -> Settings:
    merged = {s: {**DEFAULTS[s], **given[s]} for s in SECTIONS}
    try:
        dataset = _dataset(merged["dataset"])
        meas = _measurement(merged["measurement"]["kind"], merged["measurement"], dataset.image_shape)
        points = isinstance(dataset, D.GaussianMixture2D)
        mo, tr, ev = merged["model"], merged["train"], merged["eval"]
        if not mo["latent_dim"]:
            mo["latent_dim"] = "2" if points else "32"
        if not mo["generator_head"]:
            mo["generator_head"] = "affine" if points else "tanh"
        latent = LatentSpec(_to_int("model", "latent_dim", mo["latent_dim"]), mo["latent_family"])
        cfg = PipelineConfig(
            variant=tr["variant"], quality_function=tr["quality_function"],
            K=_to_int("train", "K", tr["K"]),
            batch_size=_to_int("train", "batch_size", tr["batch_size"]),
            learning_rate=_to_float("train", "learning_rate", tr["learning_rate"]),
            adam_beta1=_to_float("train", "adam_beta1", tr["adam_beta1"]),
            adam_beta2=_to_float("train", "adam_beta2", tr["adam_beta2"]),
            iterations=_to_int("train", "iterations", tr["iterations"]),
            eval_every=_to_int("train", "eval_every", tr["eval_every"]),
            seed=_to_int("train", "seed", tr["seed"]),
            latent=latent, dataset=dataset, measurement=meas,
            measurements_per_sample=_to_int("measurement", "measurements_per_sample",
                                            merged["measurement"]["measurements_per_sample"]),
            generator_hidden=_int_list("model", "generator_hidden", mo["generator_hidden"]),
            discriminator_hidden=_int_list("model", "discriminator_hidden", mo["discriminator_hidden"]),
            generator_head=mo["generator_head"], init_scheme=mo["init_scheme"],
            eval_samples=_to_int("eval", "eval_samples", ev["eval_samples"]),
            projections=_to_int("eval", "projections", ev["projections"]),
            record_wallclock=_to_bool("eval", "record_wallclock", ev["record_wallclock"]),
        )
        rows = _to_int("eval", "grid_rows", ev["grid_rows"])
        cols = _to_int("eval", "grid_cols", ev["grid_cols"])
    except (M.MeasurementError, D.DataError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if cfg.eval_samples < 2 or cfg.projections < 1 or rows < 1 or cols < 1:
        raise ConfigError("[eval] eval_samples >= 2, projections >= 1 and grid sizes >= 1 required")
    if not cfg.learning_rate > 0:
        raise ConfigError("[train] learning_rate must be > 0")
    effective = {s: {k: merged[s][k] for k in sorted(_allowed(s, merged))} for s in SECTIONS}
    return Settings(cfg, rows, cols, effective)


def render(sections: dict[str, dict[str, str]]) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for s in SECTIONS:
        parser[s] = sections.get(s, {})
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
