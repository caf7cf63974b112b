"""Command-line entry point: ``adjointnet {synth,train,evaluate,forecast}``.

Exit codes
----------
0  success
1  training diverged
2  I/O failure or unusable configuration
3  input data failed validation
4  compared reports come from different test splits
5  not enough history for a forecast
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ContractError, DomainError, TrainingError, ValidationError
from .metrics import CIConfig, compare, evaluate, predictions
from .model import AdjointForecaster
from .uncertainty import forecast_with_ci, write_forecast_csv

EXIT_OK, EXIT_DIVERGED, EXIT_IO, EXIT_DATA, EXIT_SPLIT, EXIT_HISTORY = 0, 1, 2, 3, 4, 5

logger = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Every setting a command reads. Serialized verbatim next to each output."""

    seed: int = 0
    # synth
    days: int = 160
    data_seed: int = 7
    start: str = "2014-06-02"
    # data
    data: str | None = None
    holidays: str | None = None
    lookback: int = 96
    horizon: int = 96
    train_ratio: float = 0.8
    validation_fraction: float = 0.2
    work_hours: list | None = field(default_factory=lambda: [7, 19])
    impute: bool = False
    # model
    lstm_hidden: int = 32
    lstm_layers: int = 2
    main_widths: list = field(default_factory=lambda: [128, 128, 128, 112, 112, 96])
    anc_widths: list = field(default_factory=lambda: [32, 48, 64])
    dropout: float = 0.1
    combiner: str = "per_step"
    joint_finetune: bool = False
    epochs: int = 8
    combiner_epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    combiner_learning_rate: float = 1e-2
    patience: int = 3
    max_batches_per_epoch: int | None = None
    # evaluation / forecast
    checkpoint: str | None = None
    compare: str | None = None
    mc_samples: int = 100
    forecast_samples: int = 10_000
    interval_mode: str = "predictive"

    def to_dict(self):
        return dataclasses.asdict(self)


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = RunConfig().to_dict()
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_IO) from None
        unknown = sorted(set(loaded) - FIELDS)
        if unknown:
            raise CliError(f"unknown config keys: {unknown}", EXIT_IO)
        values.update(loaded)
    for name in FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if values["work_hours"] is not None and len(values["work_hours"]) != 2:
        raise CliError("work_hours must be [start_hour, end_hour] or null", EXIT_IO)
    return RunConfig(**values)


def _out_dir(args):
    out = Path(args.out)
    if not out.is_dir():
        raise CliError(f"output directory {out} does not exist", EXIT_IO)
    return out


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(cfg, out, command):
    doc = {"command": command, "config": cfg.to_dict()}
    print(json.dumps(doc, sort_keys=True))
    _write_json(out / f"{command}_config.json", doc)


def _work_hours(cfg):
    return None if cfg.work_hours is None else tuple(cfg.work_hours)


def _load_series(cfg):
    if not cfg.data:
        raise CliError("--data is required", EXIT_IO)
    if not Path(cfg.data).is_file():
        raise CliError(f"data file {cfg.data} does not exist", EXIT_IO)
    return D.ingest_csv(cfg.data, impute=cfg.impute)


def _splits(cfg, series):
    ds = D.window(series, cfg.lookback, cfg.horizon, _work_hours(cfg))
    return D.split(ds, D.SplitSpec(cfg.train_ratio, cfg.validation_fraction))


def make_model(cfg: RunConfig, use_ancillary=True) -> AdjointForecaster:
    return AdjointForecaster(
        lookback=cfg.lookback, horizon=cfg.horizon, lstm_hidden=cfg.lstm_hidden, lstm_layers=cfg.lstm_layers,
        main_widths=tuple(cfg.main_widths), anc_widths=tuple(cfg.anc_widths), dropout=cfg.dropout,
        use_ancillary=use_ancillary, combiner=cfg.combiner, joint_finetune=cfg.joint_finetune,
        epochs=cfg.epochs, combiner_epochs=cfg.combiner_epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, combiner_learning_rate=cfg.combiner_learning_rate,
        patience=cfg.patience, max_batches_per_epoch=cfg.max_batches_per_epoch, random_state=cfg.seed,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, out: Path):
    holidays = D.read_holidays(cfg.holidays) if cfg.holidays else None
    synth = D.SynthConfig(days=cfg.days, seed=cfg.data_seed, start=cfg.start)
    if holidays is not None:
        synth = dataclasses.replace(synth, holidays=holidays)
    series = D.generate_synthetic(synth)
    D.export_csv(series, out / "synth.csv")
    D.write_holidays(synth.holidays, out / "holidays.csv")
    _echo(cfg, out, "synth")
    print(f"wrote {len(series)} rows to {out / 'synth.csv'}")


def cmd_train(cfg: RunConfig, out: Path):
    series = _load_series(cfg)
    train, val, _ = _splits(cfg, series)
    model = make_model(cfg)
    eval_set = (val.inputs, val.targets, val.ancillary) if len(val) else None
    try:
        model.fit(train.inputs, train.targets, train.ancillary, eval_set=eval_set)
    except TrainingError as exc:
        raise CliError(f"training diverged: {exc} (last finite epoch: {exc.last_finite_epoch})", EXIT_DIVERGED)
    extra = {"config": cfg.to_dict(), "role": "adjoint"}
    save_checkpoint(model, out / "checkpoint.json", extra)
    save_checkpoint(model.main_only(), out / "plain_checkpoint.json", dict(extra, role="plain"))
    report = model.training_report_.to_dict()
    _write_json(out / "training_report.json", report)
    _echo(cfg, out, "train")
    for name, stage in report["stages"].items():
        best = stage["best_epoch"]
        val_best = stage["val_rmse"][best] if best is not None else None
        print(f"{name}: epochs={len(stage['train_rmse'])} best_epoch={best} val_rmse={val_best}")
    print(f"parameters: {report['n_parameters']}")


def _checkpoint(path):
    if not path:
        raise CliError("--checkpoint is required", EXIT_IO)
    if not Path(path).is_file():
        raise CliError(f"checkpoint {path} does not exist", EXIT_IO)
    return load_checkpoint(path)


def _data_cfg(cfg, extra):
    """Windowing settings must match the ones the checkpoint was trained with."""
    trained = extra.get("config", {})
    keep = ("lookback", "horizon", "train_ratio", "validation_fraction", "work_hours")
    return dataclasses.replace(cfg, **{k: trained[k] for k in keep if k in trained})


def _tag(extra, default):
    return extra.get("role", default)


def cmd_evaluate(cfg: RunConfig, out: Path):
    model, extra = _checkpoint(cfg.checkpoint)
    series = _load_series(cfg)
    dcfg = _data_cfg(cfg, extra)
    _, _, test = _splits(dcfg, series)
    ci = CIConfig(cfg.mc_samples, cfg.seed, cfg.interval_mode)
    tag = _tag(extra, "model")
    cache = predictions(model, test, ci)
    reports = {}
    for mode in ("one_step", "multi_step"):
        reports[mode] = evaluate(model, test, mode, ci, tag, cache, cfg.to_dict())
        reports[mode].write(out, f"{tag}_{mode}")
    if cfg.compare:
        other, other_extra = _checkpoint(cfg.compare)
        ocfg = _data_cfg(cfg, other_extra)
        _, _, otest = _splits(ocfg, series)
        otag = _tag(other_extra, "other")
        if otag == tag:
            otag = f"{otag}_compare"
        ocache = predictions(other, otest, ci)
        for mode in ("one_step", "multi_step"):
            rep = evaluate(other, otest, mode, ci, otag, ocache, cfg.to_dict())
            rep.write(out, f"{otag}_{mode}")
            try:
                table = compare(reports[mode], rep)
            except ContractError as exc:
                raise CliError(str(exc), EXIT_SPLIT) from None
            table.write_csv(out / f"comparison_{mode}.csv")
            _print_comparison(table)
    _echo(cfg, out, "evaluate")
    for mode, rep in reports.items():
        o = rep.overall
        print(f"{tag} {mode}: rmse={o.rmse:.4f} mae={o.mae:.4f} mape={o.mape:.4f} "
              f"ext_rmse={o.ext_rmse} nc68={o.nc68:.4f} nc95={o.nc95:.4f}")


def _print_comparison(table):
    print(f"comparison ({table.mode}), delta = first - second")
    for scope, metric, a, p, d, imp in table.rows:
        if scope == "all":
            print(f"  {metric:9s} {a!s:>22} {p!s:>22} delta={d!s:>24} improved={imp}")


def cmd_forecast(cfg: RunConfig, out: Path):
    model, extra = _checkpoint(cfg.checkpoint)
    dcfg = _data_cfg(cfg, extra)
    series = _load_series(cfg)
    L, H = model.lookback, model.horizon
    if len(series) < L:
        raise CliError(f"need at least {L} rows of history, got {len(series)}", EXIT_HISTORY)
    window = D.main_design(series)[-L:]
    future = series.timestamps[-1] + np.arange(1, H + 1) * D.STEP
    anc = None
    if model.use_ancillary:
        holidays = D.read_holidays(cfg.holidays) if cfg.holidays else D.DEFAULT_HOLIDAYS
        anc = D.calendar_indicators(future, holidays, series.schema)
        if dcfg.work_hours is not None:
            anc = np.column_stack([anc, D.work_hours_indicator(future, tuple(dcfg.work_hours))])
    ci = forecast_with_ci(model, window, anc, n=cfg.forecast_samples, seed=cfg.seed, mode=cfg.interval_mode)
    write_forecast_csv(out / "forecast.csv", future, ci)
    _echo(cfg, out, "forecast")
    print(f"wrote {H} forecast rows to {out / 'forecast.csv'}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate, "forecast": cmd_forecast}


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    p = argparse.ArgumentParser(prog="adjointnet", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=__doc__.split("\n", 2)[2])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of RunConfig fields")
    common.add_argument("--seed", type=int, help="root seed for all randomness")
    common.add_argument("--out", required=True, help="existing output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="series CSV")
    data.add_argument("--holidays", help="holiday file, lines of YYYY-MM-DD,major|minor")
    data.add_argument("--impute", action="store_true", default=None, help="forward-fill gaps in the series")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic building dataset")
    s.add_argument("--days", type=int)
    s.add_argument("--data-seed", type=int, help="generator seed (default 7)")
    s.add_argument("--start", help="first day, YYYY-MM-DD")
    s.add_argument("--holidays", help="holiday file to use instead of the built-in list")

    t = sub.add_parser("train", parents=[common, data], help="train an adjoint model")
    t.add_argument("--lookback", type=int)
    t.add_argument("--horizon", type=int)
    t.add_argument("--train-ratio", type=float)
    t.add_argument("--validation-fraction", type=float)
    t.add_argument("--lstm-hidden", type=int)
    t.add_argument("--lstm-layers", type=int)
    t.add_argument("--main-widths", type=_int_list, help="comma separated")
    t.add_argument("--anc-widths", type=_int_list, help="comma separated")
    t.add_argument("--dropout", type=float)
    t.add_argument("--combiner", choices=("scalar", "per_step"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--combiner-epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--max-batches-per-epoch", type=int)

    e = sub.add_parser("evaluate", parents=[common, data], help="score a checkpoint on the test split")
    e.add_argument("--checkpoint")
    e.add_argument("--compare", help="second checkpoint for a side-by-side table")
    e.add_argument("--mc-samples", type=int)
    e.add_argument("--interval-mode", choices=("predictive", "mean_ci"))

    f = sub.add_parser("forecast", parents=[common, data], help="forecast the next horizon with intervals")
    f.add_argument("--checkpoint")
    f.add_argument("--forecast-samples", type=int)
    f.add_argument("--interval-mode", choices=("predictive", "mean_ci"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        out = _out_dir(args)
        COMMANDS[args.command](cfg, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: invalid input data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
