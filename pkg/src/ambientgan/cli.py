"""Command-line entry point.

Exit codes: 0 success, 1 a sweep cell failed, 2 bad configuration or
arguments, 3 baseline requested for a measurement with no inverse,
4 checkpoint unusable (written under another configuration, or corrupt).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import config as C
from . import data as D
from . import measurements as M
from . import persistence as P
from . import training as TR
from .metrics import severity_sweep

log = logging.getLogger("ambientgan")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_UNINVERTIBLE, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _grid_file(out: Path, stem: str, cfg: TR.PipelineConfig) -> Path:
    return out / (f"{stem}.csv" if cfg.dataset.image_shape == (2,) else f"{stem}.pgm")


def _export_samples(state: TR.TrainerState, settings: C.Settings, path: Path) -> None:
    cfg = settings.pipeline
    n = settings.grid_rows * settings.grid_cols
    samples = TR.generate(state.generator, cfg, n, cfg.seed, state.iteration)
    shape = cfg.measurement.output_shape if cfg.variant == "ignore" else cfg.dataset.image_shape
    P.export_grid(samples, settings.grid_rows, settings.grid_cols, path, shape)


def _log_record(prefix: str, rec) -> None:
    log.info("%siter %d sw=%.4f D(real)=%.3f D(fake)=%.3f", prefix, rec.iteration,
             rec.sw_distance, rec.d_real_mean, rec.d_fake_mean)


def _keep_rows_until(csv_path: Path, iteration: int) -> None:
    if not csv_path.exists():
        return
    rows = [r for r in P.read_metrics(csv_path) if r.iteration <= iteration]
    csv_path.unlink()
    for r in rows:
        P.append_metrics(r, csv_path)


def cmd_train(args) -> int:
    overrides = {"train": {"seed": str(args.seed)}} if args.seed is not None else None
    settings = C.load(args.config, overrides)
    cfg = settings.pipeline
    if cfg.variant == "baseline" and not M.is_invertible(cfg.measurement):
        raise M.Uninvertible(cfg.measurement.kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(settings.render())
    digest = TR.config_digest(cfg)
    metrics_csv = out / "metrics.csv"
    state = None
    if args.resume:
        state, _ = P.load_checkpoint(args.resume, digest)
        _keep_rows_until(metrics_csv, state.iteration)
        log.info("resuming from iteration %d", state.iteration)
    elif metrics_csv.exists():
        metrics_csv.unlink()

    def on_eval(st, rec):
        P.append_metrics(rec, metrics_csv)
        P.save_checkpoint(st, out / f"checkpoint_{st.iteration:08d}.ambg", digest)
        _log_record("", rec)

    state, _ = TR.train(cfg, state, on_eval)
    P.save_checkpoint(state, out / "final.ambg", digest)
    _export_samples(state, settings, _grid_file(out, "samples", cfg))
    return EXIT_OK


def _csv_list(text: str, cast, what: str) -> list:
    try:
        return [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise TR.ConfigError(f"cannot parse {what} list {text!r}") from None


def cmd_sweep(args) -> int:
    settings = C.load(args.config)
    severities = _csv_list(args.severities, float, "severity")
    variants = _csv_list(args.variants, str, "variant")
    bad = [v for v in variants if v not in TR.VARIANTS]
    if bad:
        raise TR.ConfigError(f"unknown variant(s) {', '.join(bad)}; choose from {', '.join(TR.VARIANTS)}")
    base = settings.pipeline
    try:
        for s in severities:
            M.with_severity(base.measurement, s)
    except M.MeasurementError as exc:
        raise TR.ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(settings.render())

    def on_cell(sev, variant, cfg):
        cell = out / f"sev{sev:g}_{variant}"
        if cfg.variant == "baseline" and not M.is_invertible(cfg.measurement):
            return None
        cell.mkdir(exist_ok=True)
        (cell / "metrics.csv").unlink(missing_ok=True)
        digest = TR.config_digest(cfg)

        def on_eval(st, rec):
            P.append_metrics(rec, cell / "metrics.csv")
            P.save_checkpoint(st, cell / "final.ambg", digest)
            _log_record(f"[{variant} {sev:g}] ", rec)

        return on_eval

    result = severity_sweep(base, severities, variants, jobs=args.jobs, on_cell=on_cell)
    sweep_csv = out / "sweep.csv"
    sweep_csv.unlink(missing_ok=True)
    for rec in result.table:
        P.append_metrics(rec, sweep_csv)
    if not sweep_csv.exists():
        sweep_csv.write_text(",".join(P.CSV_COLUMNS) + "\n")
    for sev, variant in result.absent:
        log.warning("no %s cell at severity %g: measurement has no inverse", variant, sev)
    for (sev, variant), msg in result.failed.items():
        log.error("cell %s at severity %g failed: %s", variant, sev, msg)
    return EXIT_FAILED if result.failed else EXIT_OK


def _grid_dims(n: int) -> tuple[int, int]:
    rows = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return rows, n // rows


def cmd_measure_preview(args) -> int:
    if args.n < 1:
        raise TR.ConfigError(f"--n must be >= 1, got {args.n}")
    settings = C.load(args.config)
    cfg = settings.pipeline
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clean = D.sample_clean(cfg.dataset, args.n, cfg.seed)
    measured = D.measure_corpus(clean, cfg.measurement, cfg.seed).measurements
    rows, cols = _grid_dims(args.n)
    P.export_grid(clean, rows, cols, _grid_file(out, "clean", cfg), cfg.dataset.image_shape)
    meas_path = out / ("measured.csv" if cfg.measurement.output_shape == (2,) else "measured.pgm")
    P.export_grid(measured, rows, cols, meas_path, cfg.measurement.output_shape)
    return EXIT_OK


def _load_for(args) -> tuple[C.Settings, TR.TrainerState]:
    settings = C.load(args.config)
    state, _ = P.load_checkpoint(args.checkpoint, TR.config_digest(settings.pipeline))
    expected = [settings.pipeline.generator_widths, settings.pipeline.discriminator_widths]
    if [state.generator.widths, state.discriminator.widths] != expected:
        raise P.DigestMismatch("checkpoint network shapes do not match the configuration")
    return settings, state


def cmd_eval(args) -> int:
    settings, state = _load_for(args)
    cfg = settings.pipeline
    data = TR.prepare_data(cfg)
    rec = TR.evaluate(state, cfg, data)
    print(P.format_metrics_row(rec))
    return EXIT_OK


def cmd_export(args) -> int:
    settings, state = _load_for(args)
    _export_samples(state, settings, Path(args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgParser(prog="ambientgan", description="Train generative models from corrupted measurements.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgParser)

    p = sub.add_parser("train", help="train one pipeline")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="score vs. severity for several variants")
    p.add_argument("config")
    p.add_argument("--severities", required=True, help="comma-separated, e.g. 0.5,0.8,0.9,0.95,0.98")
    p.add_argument("--variants", default="ambient,baseline,ignore")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("measure-preview", help="write clean and measured sample grids")
    p.add_argument("config")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure_preview)

    p = sub.add_parser("eval", help="score a checkpoint; prints one metrics CSV row")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a sample grid from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except TR.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except M.Uninvertible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNINVERTIBLE
    except P.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
