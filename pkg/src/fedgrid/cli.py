"""Command-line entry point.

    fedgrid gen-data      --config C [--out DIR]
    fedgrid train         --config C [--data FILE]
    fedgrid forecast      --config C [--model FILE] [--data FILE] [--from DAY] [--horizon DAYS]
    fedgrid grid-services --config C [--forecast FILE] [--actual FILE]
    fedgrid report        --config C [--forecast FILE]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
The log level comes from ``FEDGRID_LOG`` (default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, write_json
from .data.csvio import export_csv
from .errors import ConfigError, DataError, DivergenceError, FedGridError

log = logging.getLogger("fedgrid")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_path(args, cfg, out: Path) -> Path:
    return Path(args.data or cfg["paths"]["data"] or out / "feeder.csv")


def cmd_gen_data(args, cfg):
    out = _out_dir(args, cfg)
    series = pipeline.generate(cfg)
    path = export_csv(series, out / "feeder.csv", cfg.hash)
    _say(args, f"wrote {len(series)} node series to {path}")


def cmd_train(args, cfg):
    out = _out_dir(args, cfg)
    series = pipeline.load_series(_data_path(args, cfg, out), cfg)
    try:
        g, tlog, feds = pipeline.train_federation(cfg, series)
    except DivergenceError as exc:
        raise DivergenceError(exc.round, f"training diverged in round {exc.round}") from None
    boundary = pipeline.test_boundary(cfg, series)
    model = pipeline.save_model(out / "model.json", cfg, g, boundary)
    write_json(out / "training_log.json", pipeline.training_log_json(tlog, cfg.hash))
    _say(args, f"{len(feds)} federates, {len(tlog)} rounds ({tlog.stop_reason.value}), "
               f"final loss {tlog.losses[-1]:.6g}; model written to {model}")


def cmd_forecast(args, cfg):
    out = _out_dir(args, cfg)
    model = pipeline.load_model(args.model or out / "model.json")
    pipeline.check_hash("model", model.config_hash, cfg.hash)
    series = pipeline.load_series(_data_path(args, cfg, out), cfg)
    per_node = pipeline.forecast_fleet(cfg, model, series, getattr(args, "from"), args.horizon)
    path = pipeline.write_forecast_csv(out / "forecast.csv", per_node, model.boundary, cfg.hash)
    n = sum(len(r) for r in per_node.values())
    _say(args, f"wrote {n} forecast records for {len(per_node)} nodes to {path}")


def cmd_grid_services(args, cfg):
    out = _out_dir(args, cfg)
    fc = Path(args.forecast or out / "forecast.csv")
    per_node, _, fhash = pipeline.read_forecast_csv(fc)
    pipeline.check_hash(f"forecast {fc}", fhash, cfg.hash)
    series = pipeline.load_series(args.actual or _data_path(args, cfg, out), cfg)
    result = pipeline.run_grid_services(cfg, per_node, series)
    pipeline.write_grid_outputs(out, result, cfg.hash)
    _say(args, f"swings: {len(result.actual_events)} actual, {len(result.predicted_events)} predicted, "
               f"{len(result.curtailed_events)} after curtailment ({len(result.commands)} commands)")


def cmd_report(args, cfg):
    out = _out_dir(args, cfg)
    fc = Path(args.forecast or out / "forecast.csv")
    per_node, flags, fhash = pipeline.read_forecast_csv(fc)
    pipeline.check_hash(f"forecast {fc}", fhash, cfg.hash)
    rep = pipeline.build_report(per_node, flags, cfg.hash)
    path = write_json(out / "report.json", rep)
    _say(args, f"fleet RMSE {rep['fleet_mean']} kW over {len(rep['per_node'])} nodes; written to {path}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "grid-services": cmd_grid_services,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: paths.out)")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="fedgrid", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic feeder")
    t = sub.add_parser("train", parents=[common], help="federated training")
    t.add_argument("--data")
    f = sub.add_parser("forecast", parents=[common], help="one-step-ahead forecasts")
    f.add_argument("--model")
    f.add_argument("--data")
    f.add_argument("--from", help="first forecast day (default: first test day)")
    f.add_argument("--horizon", type=int, help="days to forecast (default: the test month)")
    g = sub.add_parser("grid-services", parents=[common], help="swings and peak shaving")
    g.add_argument("--forecast")
    g.add_argument("--actual")
    g.add_argument("--data", help=argparse.SUPPRESS)
    r = sub.add_parser("report", parents=[common], help="RMSE report")
    r.add_argument("--forecast")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("FEDGRID_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, FedGridError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
