"""Command-line interface.

Commands
--------
train        fit a model on a delimited series and write a checkpoint
forecast     predict one horizon past the end of a series
evaluate     rolling-window metrics against reference predictors
drift-stats  per-variable unit-root statistics and their average
plot-data    predicted-vs-actual series for one evaluation window

Every configuration key doubles as a ``--key`` flag (underscores become
dashes) and flags override file values. ``TCVAE_PRECISION`` overrides the
configured float precision. Reports are written as delimited text plus
rendered figures in the same directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from tcvae.autodiff import dtype_for_tag, set_default_dtype
from tcvae.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tcvae.config import (ConfigError, _CASTERS, build_model_config,
                          effective_precision, load_run_config)
from tcvae.data import (DataError, NormalizationError, RawSeries, adf_statistic,
                        chronological_split, fit_normalize, load_csv,
                        make_windows, write_csv)
from tcvae.evaluate import rolling_baseline, rolling_evaluate
from tcvae.figures import (save_drift_chart, save_error_curve,
                           save_forecast_figure, save_loss_curve)
from tcvae.model import TCVAE, TrainingError

__all__ = ["main", "build_parser"]

CHECKPOINT_NAME = "model.tcva"


def _flag_names(key: str) -> tuple[str, ...]:
    dashed = "--" + key.replace("_", "-")
    if key == "out_dir":
        return ("--out", dashed)
    return (dashed,)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcvae",
        description="drift-adaptive multivariate time-series forecasting")
    commands = parser.add_subparsers(dest="command", required=True,
                                     metavar="command")

    train = commands.add_parser(
        "train", help="fit a model and write a checkpoint plus training report")
    train.add_argument("--config", default=None,
                       help="path to a 'key = value' configuration file")
    for key in _CASTERS:
        train.add_argument(*_flag_names(key), dest=key, default=None,
                           metavar="VALUE", help=f"override the {key} setting")
    train.set_defaults(func=_run_train)

    forecast = commands.add_parser(
        "forecast", help="predict one horizon past the end of a series")
    forecast.add_argument("--checkpoint", required=True)
    forecast.add_argument("--data", required=True)
    forecast.add_argument("--out", required=True,
                          help="path for the prediction file")
    forecast.add_argument("--seed", type=int, default=0)
    forecast.set_defaults(func=_run_forecast)

    evaluate = commands.add_parser(
        "evaluate", help="rolling-window metrics against reference predictors")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--raw-units", action="store_true",
                          help="report errors in original units")
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None,
                          help="report directory (default: checkpoint's)")
    evaluate.set_defaults(func=_run_evaluate)

    drift = commands.add_parser(
        "drift-stats", help="per-variable unit-root statistics")
    drift.add_argument("--data", required=True)
    drift.add_argument("--out", default=".", help="report directory")
    drift.set_defaults(func=_run_drift_stats)

    plot = commands.add_parser(
        "plot-data", help="predicted-vs-actual series for one window")
    plot.add_argument("--checkpoint", required=True)
    plot.add_argument("--data", required=True)
    plot.add_argument("--window-index", type=int, required=True)
    plot.add_argument("--seed", type=int, default=0)
    plot.add_argument("--out", default=".", help="report directory")
    plot.set_defaults(func=_run_plot_data)

    return parser


def _apply_checkpoint_precision(model: TCVAE) -> None:
    """Match tensor precision to the checkpoint, unless the env overrides."""
    tag = os.environ.get("TCVAE_PRECISION")
    if tag is not None:
        set_default_dtype(dtype_for_tag(tag))
        return
    for param in model.parameters():
        set_default_dtype(param.data.dtype)
        return


def _target_names(series: RawSeries, columns) -> list[str]:
    if columns is None:
        return list(series.variable_names)
    return [series.variable_names[c] for c in columns]


# -- train ---------------------------------------------------------------


def _run_train(args) -> int:
    overrides = {key: getattr(args, key) for key in _CASTERS}
    run = load_run_config(args.config, overrides)
    if not run.data:
        raise ConfigError("no data path given; set data in the config file "
                          "or pass --data")
    set_default_dtype(dtype_for_tag(effective_precision(run)))

    series = load_csv(run.data)
    train_part, _val_part, _test_part = chronological_split(
        series, run.split_fractions())
    normalized, scaler = fit_normalize(train_part)
    windows = make_windows(normalized, run.w, run.h,
                           target_variables=run.target_columns)
    cfg = build_model_config(run, d_x=series.num_variables)
    model = TCVAE(cfg)

    def report(epoch: int, loss: float) -> None:
        print(f"epoch {epoch + 1}/{cfg.epochs}  loss = {loss:.6f}")

    trace = model.fit(windows, progress=report)

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / CHECKPOINT_NAME
    save_checkpoint(model, scaler, checkpoint_path)
    with open(out_dir / "loss_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(trace, start=1):
            writer.writerow([epoch, repr(loss)])
    save_loss_curve(trace, out_dir / "loss_curve.png")
    (out_dir / "config.txt").write_text(run.as_text(), encoding="utf-8")

    print(f"final loss = {trace[-1]:.6f}")
    print(f"checkpoint written to {checkpoint_path}")
    print(f"report written to {out_dir}")
    return 0


# -- forecast ------------------------------------------------------------


def _run_forecast(args) -> int:
    model, scaler = load_checkpoint(args.checkpoint)
    _apply_checkpoint_precision(model)
    cfg = model.config
    series = load_csv(args.data)
    if series.length < cfg.w:
        raise DataError(f"need at least {cfg.w} rows to forecast, "
                        f"got {series.length}")
    window = series.slice(series.length - cfg.w, series.length)
    predicted = model.forecast(window.values, window.timestamps, scaler,
                               seed=args.seed)

    spacing = window.timestamps[1] - window.timestamps[0]
    future = [window.timestamps[-1] + (i + 1) * spacing for i in range(cfg.h)]
    names = _target_names(series, cfg.target_columns)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(RawSeries(np.asarray(predicted, dtype=np.float64), future, names),
              out_path)

    columns = (list(cfg.target_columns) if cfg.target_columns is not None
               else list(range(cfg.d_x)))
    figure_path = out_path.with_suffix(".png")
    save_forecast_figure(window.values[:, columns], None, predicted, names,
                         figure_path)
    print(f"predictions written to {out_path}")
    print(f"figure written to {figure_path}")
    return 0


# -- evaluate ------------------------------------------------------------


def _run_evaluate(args) -> int:
    model, scaler = load_checkpoint(args.checkpoint)
    _apply_checkpoint_precision(model)
    cfg = model.config
    series = load_csv(args.data)
    aggregate, per_window = rolling_evaluate(model, series, scaler,
                                             seed=args.seed,
                                             raw_units=args.raw_units)
    persistence = rolling_baseline(series, scaler, cfg.w, cfg.h,
                                   kind="persistence",
                                   raw_units=args.raw_units,
                                   target_columns=cfg.target_columns)
    mean_ref = rolling_baseline(series, scaler, cfg.w, cfg.h, kind="mean",
                                raw_units=args.raw_units,
                                target_columns=cfg.target_columns)

    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.txt").write_text(aggregate.as_text() + "\n",
                                         encoding="utf-8")
    report = {"model": aggregate.to_dict(),
              "persistence": persistence.to_dict(),
              "mean": mean_ref.to_dict()}
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=2,
                                                     sort_keys=True) + "\n",
                                          encoding="utf-8")
    with open(out_dir / "per_window.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "mae", "rmse", "mape"])
        for index, item in enumerate(per_window):
            writer.writerow([index, repr(item.mae), repr(item.rmse),
                             repr(item.mape)])
    save_error_curve([item.mae for item in per_window],
                     out_dir / "error_curve.png")

    print(aggregate.as_text())
    print(f"persistence_mae = {persistence.mae!r}")
    print(f"mean_mae = {mean_ref.mae!r}")
    print(f"report written to {out_dir}")
    return 0


# -- drift-stats ---------------------------------------------------------


def _run_drift_stats(args) -> int:
    series = load_csv(args.data)
    stats = [adf_statistic(series.values[:, j])
             for j in range(series.num_variables)]
    average = float(np.mean(stats))

    lines = [f"{name} = {stat:.6f}"
             for name, stat in zip(series.variable_names, stats)]
    lines.append(f"average = {average:.6f}")
    text = "\n".join(lines)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "drift_stats.txt").write_text(text + "\n", encoding="utf-8")
    save_drift_chart(series.variable_names, stats, average,
                     out_dir / "drift_stats.png")

    print(text)
    print(f"report written to {out_dir}")
    return 0


# -- plot-data -----------------------------------------------------------


def _run_plot_data(args) -> int:
    model, scaler = load_checkpoint(args.checkpoint)
    _apply_checkpoint_precision(model)
    cfg = model.config
    series = load_csv(args.data)
    last_start = series.length - (cfg.w + cfg.h)
    if last_start < 0:
        raise DataError(f"series too short for plotting: need at least "
                        f"{cfg.w + cfg.h} rows, got {series.length}")
    index = args.window_index
    if not 0 <= index <= last_start:
        raise DataError(f"window index {index} out of range [0, {last_start}]")

    window = series.slice(index, index + cfg.w)
    horizon = series.slice(index + cfg.w, index + cfg.w + cfg.h)
    predicted = model.forecast(window.values, window.timestamps, scaler,
                               seed=args.seed)
    columns = (list(cfg.target_columns) if cfg.target_columns is not None
               else list(range(cfg.d_x)))
    names = _target_names(series, cfg.target_columns)
    actual = horizon.values[:, columns]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"window_{index}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["timestamp"]
        for name in names:
            header += [f"{name}_actual", f"{name}_predicted"]
        writer.writerow(header)
        for row in range(cfg.h):
            cells = [horizon.timestamps[row].isoformat(sep=" ")]
            for col in range(len(names)):
                cells += [repr(float(actual[row, col])),
                          repr(float(predicted[row, col]))]
            writer.writerow(cells)
    figure_path = out_dir / f"window_{index}.png"
    save_forecast_figure(window.values[:, columns], actual, predicted, names,
                         figure_path)

    print(f"window series written to {csv_path}")
    print(f"figure written to {figure_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, NormalizationError, CheckpointError,
            TrainingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
