"""End-to-end orchestration: generate -> train -> forecast -> grid services -> report.

The CLI is a thin shell over these functions; tests drive them directly.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec, grid
from .config import ExperimentConfig, write_json
from .data.csvio import HASH_PREFIX, export_csv, format_timestamp, ingest_csv, read_config_hash
from .data.features import Dataset, LagSpec, extract_samples, filter_days, next_month, split_train_test
from .data.series import DAY, STEP, TimeSeries, as_minute
from .data.synthetic import ProfileShape, default_base_profile, generate_feeder
from .errors import AlignmentError, ArtifactMismatchError, DataError, IncompatibleModelError
from .metrics import ForecastRecord, rmse_report
from .nn import LayerSpec, ModelWeights, forward_batch, init_weights
from .protocol import (
    AggregationWeights,
    Federate,
    GlobalModel,
    Standardizer,
    TrainingLog,
    train,
)

log = logging.getLogger(__name__)

MODEL_VERSION = 1


def check_hash(kind: str, found: str | None, expected: str) -> None:
    """Reject artifacts stamped with another config; unstamped inputs are external data."""
    if found is not None and found != expected:
        raise ArtifactMismatchError(f"{kind} was produced under config {found}, current config is {expected}")


# -- data ----------------------------------------------------------------------

def generate(cfg: ExperimentConfig) -> list[TimeSeries]:
    topo = cfg["topology"]
    base = default_base_profile(int(topo["days"]), cfg.seed, topo["start"],
                                ProfileShape(**topo["profile"]))
    return generate_feeder(base, int(topo["num_nodes"]), float(topo["sigma"]), cfg.seed + 1,
                           correlation=float(topo["correlation"]))


def load_series(path, cfg: ExperimentConfig) -> list[TimeSeries]:
    series, report = ingest_csv(path)
    check_hash(f"data file {path}", report.config_hash, cfg.hash)
    if report.rejects:
        log.warning("%s: %d rows rejected during ingestion", path, len(report.rejects))
    return series


def test_boundary(cfg: ExperimentConfig, series: list[TimeSeries]) -> np.datetime64:
    b = cfg["split"]["boundary"]
    if b is not None:
        return np.datetime64(b, "D")
    return next_month(min(s.start for s in series))


def local_training_set(cfg: ExperimentConfig, s: TimeSeries, boundary) -> tuple[Dataset, Dataset]:
    return split_train_test(filter_days(s, cfg.calendar()), boundary, cfg.lag_spec(),
                            int(cfg["split"]["carry_over_days"]))


def federate_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def build_federates(cfg: ExperimentConfig, series: list[TimeSeries], boundary=None) -> list[Federate]:
    boundary = test_boundary(cfg, series) if boundary is None else boundary
    spec, h = cfg.layer_spec(), cfg.hyperparams()
    feds = []
    for i, s in enumerate(series):
        train_ds, _ = local_training_set(cfg, s, boundary)
        feds.append(Federate(i, train_ds, federate_seed(cfg.seed, i), spec.activation,
                             h.learning_rate, h.mini_batch_size))
    return feds


def train_federation(cfg: ExperimentConfig, series: list[TimeSeries], workers: int | None = None):
    feds = build_federates(cfg, series)
    g = GlobalModel(init_weights(cfg.layer_spec(), cfg.seed))
    alpha = AggregationWeights.from_mode(cfg["training"]["alpha"], len(feds))
    workers = int(cfg["training"]["workers"]) if workers is None else workers
    g, log_ = train(g, feds, cfg.hyperparams(), alpha, workers=workers)
    return g, log_, feds


# -- model files ---------------------------------------------------------------

@dataclass(frozen=True)
class SavedModel:
    spec: LayerSpec
    lags: LagSpec
    boundary: np.datetime64
    weights: ModelWeights
    config_hash: str
    rounds: int


def save_model(path, cfg: ExperimentConfig, g: GlobalModel, boundary) -> Path:
    meta = {
        "v": MODEL_VERSION,
        "config_hash": cfg.hash,
        "layer_spec": cfg.layer_spec().to_dict(),
        "lags": list(cfg.lag_spec().lags),
        "boundary": str(np.datetime64(boundary, "D")),
        "rounds": g.round,
        # statistics are refit by each federate from its own data; none are stored here
        "normalization": "per_federate_standardization",
    }
    head = json.dumps(meta, sort_keys=True)
    path = Path(path)
    path.write_text(head[:-1] + ', "weights": ' + codec.layers_json(g.weights) + "}\n", encoding="utf-8")
    return path


def load_model(path) -> SavedModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    if obj.get("v") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {obj.get('v')!r}")
    weights = codec.parse_layers(obj["weights"], ModelWeights, 0)
    spec = LayerSpec.from_dict(obj["layer_spec"])
    if [w.shape for w in weights.weights] != [s for s, _ in spec.shapes]:
        raise IncompatibleModelError(f"{path}: weights do not match the stored layer spec")
    return SavedModel(spec, LagSpec(tuple(obj["lags"])), np.datetime64(obj["boundary"], "D"),
                      weights, obj["config_hash"], int(obj["rounds"]))


# -- forecasting ---------------------------------------------------------------

def forecast_node(cfg: ExperimentConfig, model: SavedModel, s: TimeSeries, start, end) -> list[ForecastRecord]:
    """One-step-ahead forecasts for every resolvable grid point in ``[start, end)``.

    The node refits its own standardiser from its training month, exactly
    as it did as a federate.
    """
    if model.lags.lags != cfg.lag_spec().lags or model.spec.input_dim != len(model.lags):
        raise IncompatibleModelError(
            f"model expects lags {model.lags.lags} ({model.spec.input_dim} inputs), "
            f"config has {cfg.lag_spec().lags}"
        )
    train_ds, _ = local_training_set(cfg, s, model.boundary)
    norm = Standardizer.fit(train_ds)
    start, end = as_minute(start), as_minute(end)
    window = s.window(start - model.lags.max_steps * STEP, end)
    try:
        ds = extract_samples(window, model.lags)
    except DataError:
        return []
    ds = ds.subset(ds.timestamps >= start)
    if len(ds) == 0:
        return []
    pred = norm.invert(forward_batch(model.weights, norm.features(ds.features), model.spec.activation))
    return [ForecastRecord(s.node_id, t, float(p), float(a))
            for t, p, a in zip(ds.timestamps, pred, ds.targets)]


def forecast_fleet(cfg, model: SavedModel, series, start=None, days: int | None = None):
    start = model.boundary if start is None else np.datetime64(start, "D")
    end = next_month(start) if days is None else np.datetime64(start, "D") + int(days) * DAY
    return {s.node_id: forecast_node(cfg, model, s, start, end) for s in series}


def write_forecast_csv(path, per_node, boundary, config_hash) -> Path:
    boundary = as_minute(np.datetime64(boundary, "D"))
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{HASH_PREFIX} {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "timestamp", "predicted", "actual", "in_sample"])
        for node, recs in per_node.items():
            for r in recs:
                w.writerow([node, format_timestamp(r.timestamp), repr(r.predicted), repr(r.actual),
                            int(r.timestamp < boundary)])
    return path


def read_forecast_csv(path):
    """Returns ``(records by node, in-sample flags by node, config hash)``."""
    per_node: dict[str, list[ForecastRecord]] = {}
    flags: dict[str, list[bool]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    for row in csv.DictReader(rows):
        try:
            rec = ForecastRecord(row["node_id"], as_minute(row["timestamp"].replace(" ", "T")),
                                 float(row["predicted"]), float(row["actual"]))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad forecast row {row} ({exc})") from None
        per_node.setdefault(rec.node_id, []).append(rec)
        flags.setdefault(rec.node_id, []).append(row.get("in_sample", "0") == "1")
    return per_node, flags, read_config_hash(path)


# -- grid services -------------------------------------------------------------

@dataclass
class GridResult:
    swing_threshold: float
    shaving_cap: float
    days: list
    actual_events: list
    predicted_events: list
    curtailed_events: list
    commands: list
    hist_actual: np.ndarray
    hist_predicted: np.ndarray
    reduction: list

    def summary(self, config_hash: str) -> dict:
        return {
            "config_hash": config_hash,
            "swing_threshold_kw": self.swing_threshold,
            "shaving_cap_kw": self.shaving_cap,
            "days": [str(d) for d in self.days],
            "counts": {
                "actual_swings": len(self.actual_events),
                "predicted_swings": len(self.predicted_events),
                "swings_after_curtailment": len(self.curtailed_events),
                "commands": len(self.commands),
            },
            "histogram": {
                "slot_minutes": 15,
                "actual": self.hist_actual.tolist(),
                "predicted": self.hist_predicted.tolist(),
            },
            "reduction_by_day": [
                {"day": str(r.day), "before": r.before, "after": r.after, "reduction": r.reduction}
                for r in self.reduction
            ],
        }


def forecast_series(records: list[ForecastRecord], actual: TimeSeries, start, end) -> TimeSeries:
    start, end = as_minute(start), as_minute(end)
    n = int((end - start) // STEP)
    values = np.full(n, np.nan)
    for r in records:
        offset = (as_minute(r.timestamp) - start).astype(np.int64)
        i, rem = divmod(int(offset), 15)
        if rem or not 0 <= i < n:
            raise AlignmentError(f"forecast timestamp {r.timestamp} for {r.node_id} is off the actual grid")
        values[i] = r.predicted
    return TimeSeries(actual.node_id, start, values)


def run_grid_services(cfg: ExperimentConfig, per_node, actual: list[TimeSeries]) -> GridResult:
    by_id = {s.node_id: s for s in actual}
    nodes = [n for n in per_node if per_node[n]]
    if not nodes:
        raise DataError("no forecast records")
    missing = [n for n in nodes if n not in by_id]
    if missing:
        raise AlignmentError(f"no actual series for forecast nodes {missing[:5]}")
    start = min(min(r.timestamp for r in per_node[n]) for n in nodes)
    end = max(max(r.timestamp for r in per_node[n]) for n in nodes) + STEP
    start_day = as_minute(np.datetime64(start, "D"))
    end = as_minute(np.datetime64(end - STEP, "D")) + DAY

    windows, forecasts = [], []
    for n in nodes:
        s = by_id[n]
        if not s.start <= start or not end <= s.end:
            raise AlignmentError(f"actual series {n} does not cover the forecast horizon")
        w = s.window(start_day, end)
        windows.append(w)
        forecasts.append(forecast_series(per_node[n], s, start_day, end))

    th = cfg["thresholds"]
    absolute = bool(th["swing"]["absolute_delta"])
    swing_policy = grid.ThresholdPolicy(float(th["swing"]["percentile"]), grid.Horizon(),
                                        th["swing"]["quantity"], absolute)
    shave_policy = grid.ThresholdPolicy(float(th["shaving"]["percentile"]), grid.Horizon(),
                                        th["shaving"]["quantity"])
    p_swing = grid.compute_threshold(windows, swing_policy)
    cap = grid.compute_threshold([by_id[n] for n in nodes], shave_policy)

    lead = np.timedelta64(int(cfg["shaving"]["lead_hours"]), "h")
    act_ev, pred_ev, after_ev, commands = [], [], [], []
    for w, f in zip(windows, forecasts):
        act_ev += grid.detect_swings(w, p_swing, absolute)
        pred_ev += grid.predict_swings(f, p_swing, absolute)
        curtailed, cmds = grid.peak_shave(w, f, cap, cfg["shaving"]["mode"], lead)
        commands += cmds
        after_ev += grid.detect_swings(curtailed, p_swing, absolute)

    days = list(np.arange(np.datetime64(start_day, "D"), np.datetime64(end, "D")))
    return GridResult(
        p_swing, cap, days, act_ev, pred_ev, after_ev, commands,
        grid.swing_histogram(act_ev, len(days)) / len(nodes),
        grid.swing_histogram(pred_ev, len(days)) / len(nodes),
        grid.swing_reduction_report(act_ev, after_ev, days),
    )


def write_events_csv(path, events) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "timestamp", "delta_p", "source"])
        for e in events:
            w.writerow([e.node_id, format_timestamp(e.timestamp), repr(e.delta_p), e.source.value])
    return Path(path)


def write_grid_outputs(out: Path, result: GridResult, config_hash: str) -> dict[str, Path]:
    out = Path(out)
    paths = {
        "swing_events": write_events_csv(out / "swing_events.csv",
                                         result.actual_events + result.predicted_events),
        "curtailed_events": write_events_csv(out / "curtailed_events.csv", result.curtailed_events),
    }
    with open(out / "curtailment_commands.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "timestamp", "issued_at", "cap_kw"])
        for c in result.commands:
            w.writerow([c.node_id, format_timestamp(c.timestamp), format_timestamp(c.issued_at), repr(c.cap)])
    paths["commands"] = out / "curtailment_commands.csv"
    paths["summary"] = write_json(out / "grid_summary.json", result.summary(config_hash))
    return paths


# -- report --------------------------------------------------------------------

def build_report(per_node, flags, config_hash) -> dict:
    out_sample = {n: [r for r, f in zip(recs, flags[n]) if not f] for n, recs in per_node.items()}
    in_sample = {n: [r for r, f in zip(recs, flags[n]) if f] for n, recs in per_node.items()}
    out_sample = {n: r for n, r in out_sample.items() if r}
    in_sample = {n: r for n, r in in_sample.items() if r}
    report = rmse_report(out_sample, config_hash) if out_sample else {
        "per_node": [], "fleet_mean": None, "config_hash": config_hash}
    if in_sample:
        ins = rmse_report(in_sample, config_hash)
        report["in_sample"] = {"per_node": ins["per_node"], "fleet_mean": ins["fleet_mean"]}
    return report


# -- whole pipeline ------------------------------------------------------------

def run_pipeline(cfg: ExperimentConfig, out, workers: int | None = None) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash
    data_path = export_csv(generate(cfg), out / "feeder.csv", h)
    series = load_series(data_path, cfg)
    g, tlog, _ = train_federation(cfg, series, workers)
    boundary = test_boundary(cfg, series)
    model_path = save_model(out / "model.json", cfg, g, boundary)
    log_path = write_json(out / "training_log.json", training_log_json(tlog, h))
    model = load_model(model_path)
    per_node = forecast_fleet(cfg, model, series)
    fc_path = write_forecast_csv(out / "forecast.csv", per_node, boundary, h)
    per_node, flags, _ = read_forecast_csv(fc_path)
    paths = write_grid_outputs(out, run_grid_services(cfg, per_node, series), h)
    rep = write_json(out / "report.json", build_report(per_node, flags, h))
    return {"data": data_path, "model": model_path, "training_log": log_path,
            "forecast": fc_path, "report": rep, **paths}


def training_log_json(tlog: TrainingLog, config_hash: str) -> dict:
    return {"config_hash": config_hash, **tlog.to_dict()}
