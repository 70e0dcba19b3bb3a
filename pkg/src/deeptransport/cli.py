"""Operator-facing command line.

Every command is a pure function of (config file, input files, seed):
rerunning reproduces outputs byte for byte, except training-log wall
times, which `suppress_wall_time: true` removes. Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import evaluation as ev
from .baselines import FnnConfig, fnn_predict
from .config import RunConfig, as_plain_dict, load_config
from .data import load_conditions, save_conditions
from .errors import ConfigError, DataError, DeepTransportError
from .graph import load_graph_csv, save_graph_csv
from .kernels import backend_name
from .metrics import nmi_by_radius
from .model import init_model_params
from .persist import load_checkpoint, save_checkpoint
from .synth import synth_generate
from .training import ProjectionThresholds, TrainConfig


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DeepTransportError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except FileNotFoundError as exc:
            click.echo(f"error: missing file: {exc}", err=True)
            sys.exit(DataError.exit_code)

    return wrapper


def _config_options(fn):
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                      help="Override a config value (repeatable).")(fn)
    fn = click.option("--config", "-c", "config_path", required=True,
                      type=click.Path(), help="Run configuration YAML.")(fn)
    return fn


def _load(config_path, overrides) -> RunConfig:
    return load_config(config_path, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _echo_config(cfg: RunConfig, out: Path):
    out.joinpath("config_resolved.yaml").write_text(
        yaml.safe_dump(as_plain_dict(cfg), sort_keys=True), encoding="utf-8"
    )


def _load_eval_data(cfg: RunConfig) -> ev.EvalData:
    if not cfg.paths.graph_edges or not cfg.paths.conditions:
        raise ConfigError("paths.graph_edges and paths.conditions are required")
    graph = load_graph_csv(cfg.paths.graph_edges, cfg.paths.graph_attrs or None,
                           strict=False)
    store = load_conditions(cfg.paths.conditions, graph,
                            timestamp_kind=cfg.data.timestamp_kind,
                            strict=cfg.data.strict)
    return ev.prepare_eval_data(
        graph, store, history_len=cfg.data.history_len, radius=cfg.data.radius,
        horizons=list(cfg.data.horizons), slot_width=cfg.data.slot_width,
        train_fraction=cfg.data.train_fraction,
    )


@click.group()
@click.version_option(package_name="deeptransport")
def main():
    """Traffic condition forecasting over road-section graphs."""


# -------------------------------------------------------------------- synth


@main.command()
@_config_options
@_fail_cleanly
def synth(config_path, overrides):
    """Generate a synthetic graph + condition series into out_dir."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    graph, store = synth_generate(cfg.synth_config())
    save_graph_csv(graph, out / "graph_edges.csv", out / "graph_attrs.csv")
    save_conditions(store, out / "conditions.csv")
    _echo_config(cfg, out)
    click.echo(f"wrote {out / 'graph_edges.csv'}, {out / 'graph_attrs.csv'}, "
               f"{out / 'conditions.csv'}")


# -------------------------------------------------------------------- train


def _train_network(cfg: RunConfig, data: ev.EvalData, out: Path):
    model_cfg = cfg.model_config()
    tcfg = cfg.train_config()
    log_path = out / "training_log.jsonl"
    ckpt_path = out / "checkpoint.ckpt"
    meta = {"model": "deeptransport", "config_hash": cfg.config_hash(),
            "horizons": list(model_cfg.horizons)}

    with open(log_path, "w", encoding="utf-8") as log_fh:
        def sink(record):
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")

        def on_improve(params, adam, step, val):
            save_checkpoint(ckpt_path, params, adam,
                            meta={**meta, "step": step, "val_loss": val})

        result = ev.train_network(
            data, model_cfg, tcfg, log_sink=sink, on_improve=on_improve,
            record_wall_time=not cfg.suppress_wall_time,
        )
    save_checkpoint(out / "checkpoint_final.ckpt", result.final_params, result.adam,
                    meta={**meta, "step": result.steps})
    if result.best_val is None:
        save_checkpoint(ckpt_path, result.params, result.adam,
                        meta={**meta, "step": result.steps})
    return result


def _train_fnn(cfg: RunConfig, data: ev.EvalData, out: Path):
    fnn_cfg = FnnConfig(history_len=cfg.data.history_len, hidden=cfg.fnn.hidden,
                        horizons=tuple(cfg.data.horizons))
    preds, result = ev.fnn_fit_and_predict(
        data, list(cfg.data.horizons), fnn_cfg, cfg.train_config(),
        record_wall_time=not cfg.suppress_wall_time,
    )
    meta = {"model": "fnn", "config_hash": cfg.config_hash()}
    save_checkpoint(out / "checkpoint.ckpt", result.final_params, result.adam, meta=meta)
    with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
        for record in result.log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return preds


def _train_saes(cfg: RunConfig, data: ev.EvalData, out: Path):
    preds, (params, log) = ev.saes_fit_and_predict(
        data, list(cfg.data.horizons), cfg.saes.layers,
        cfg.train_config(), cfg.train_config(),
        record_wall_time=not cfg.suppress_wall_time,
    )
    save_checkpoint(out / "checkpoint.ckpt", params,
                    meta={"model": "saes", "config_hash": cfg.config_hash()})
    with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return preds


@main.command()
@_config_options
@_fail_cleanly
def train(config_path, overrides):
    """Train the configured model; writes checkpoint, log, thresholds."""
    cfg = _load(config_path, overrides)
    if cfg.model not in ("deeptransport", "fnn", "saes"):
        raise ConfigError(f"model {cfg.model!r} has no training step; "
                          "use `baseline` for rw/arima")
    out = _out_dir(cfg)
    data = _load_eval_data(cfg)
    thresholds = ev.fit_thresholds(data)
    _write_json(out / "thresholds.json", {
        "q1": thresholds.q1, "q2": thresholds.q2, "q3": thresholds.q3,
    })
    if cfg.model == "deeptransport":
        result = _train_network(cfg, data, out)
        click.echo(f"trained {result.steps} steps; best validation "
                   f"{result.best_val if result.best_val is not None else 'n/a'}")
    elif cfg.model == "fnn":
        _train_fnn(cfg, data, out)
        click.echo("trained fnn baseline")
    else:
        _train_saes(cfg, data, out)
        click.echo("trained saes baseline")
    _echo_config(cfg, out)
    click.echo(f"artifacts in {out} (kernel backend: {backend_name()})")


# ------------------------------------------------------------------ predict


def _thresholds_from_file(out: Path, data: ev.EvalData) -> ProjectionThresholds:
    path = out / "thresholds.json"
    if path.exists():
        blob = json.loads(path.read_text())
        return ProjectionThresholds(blob["q1"], blob["q2"], blob["q3"])
    return ev.fit_thresholds(data)


def _network_predictions_from_checkpoint(cfg, data, checkpoint):
    params, _, meta = load_checkpoint(checkpoint)
    model_cfg = cfg.model_config()
    return ev.network_predictions(params, model_cfg, data.test_samples,
                                  batch_size=cfg.eval.batch_size)


def _predictions_for_model(cfg: RunConfig, data: ev.EvalData, model: str,
                           checkpoint):
    horizons = list(cfg.data.horizons)
    if model == "deeptransport":
        if not checkpoint:
            raise ConfigError("deeptransport predictions need --checkpoint")
        return _network_predictions_from_checkpoint(cfg, data, checkpoint)
    if model == "rw":
        return ev.rw_predictions(data, horizons, cfg.eval.rw_seed)
    if model == "arima":
        return ev.arima_predictions(
            data, horizons, max_p=cfg.arima.max_p, max_d=cfg.arima.max_d,
            max_q=cfg.arima.max_q, workers=cfg.arima.workers,
        )
    if model == "fnn":
        if not checkpoint:
            raise ConfigError("fnn predictions need --checkpoint")
        params, _, _ = load_checkpoint(checkpoint)
        batch = data.test_samples.batch(np.arange(len(data.test_samples)))
        return fnn_predict(params, batch.target_codes.astype(float))
    if model == "saes":
        raise ConfigError("saes predictions are produced by `baseline --model saes` "
                          "(the encoder stack is fit to the run)")
    raise ConfigError(f"unknown model {model!r}")


def _write_predictions_csv(path: Path, data: ev.EvalData, preds, horizons):
    sset = data.test_samples
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex", "time", "horizon_steps", "prediction"])
        batch = sset.batch(np.arange(len(sset)))
        for i in range(len(sset)):
            for k, h in enumerate(horizons):
                writer.writerow([batch.vertices[i], int(batch.times[i]), int(h),
                                 repr(float(preds[i, k]))])


@main.command()
@_config_options
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Trained model checkpoint (network and fnn).")
@_fail_cleanly
def predict(config_path, overrides, checkpoint):
    """Write continuous test-set predictions for the configured model."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    data = _load_eval_data(cfg)
    preds = _predictions_for_model(cfg, data, cfg.model, checkpoint)
    path = out / f"predictions_{cfg.model}.csv"
    _write_predictions_csv(path, data, preds, list(cfg.data.horizons))
    click.echo(f"wrote {path}")


# --------------------------------------------------------------------- eval


def _metrics_payload(model, table, reports):
    payload = {"model": model, "avg_kappa": table["avg"],
               "kappa_per_horizon": table["per_horizon"],
               "n_per_horizon": table["n"], "matrices": {}}
    for minutes, rep in reports.items():
        payload["matrices"][str(minutes)] = {
            "observed": rep.observed.tolist(),
            "expected": rep.expected.tolist(),
            "weights": rep.weights.tolist(),
            "kappa": rep.kappa,
        }
    return payload


def _evaluate_model(cfg, data, model, preds, thresholds):
    from .metrics import qw_kappa
    from .training import project_labels

    sset = data.test_samples
    batch = sset.batch(np.arange(len(sset)))
    table = ev.kappa_by_horizon(sset, preds, thresholds)
    reports = {}
    for k, h in enumerate(sset.horizons):
        released = batch.label_mask[:, k]
        if not released.any():
            continue
        classes = project_labels(preds[released, k], thresholds)
        reports[int(h) * ev.HORIZON_MINUTES] = qw_kappa(batch.labels[released, k], classes)
    return table, reports


@main.command(name="eval")
@_config_options
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint for the network (overrides eval.checkpoints).")
@_fail_cleanly
def eval_cmd(config_path, overrides, checkpoint):
    """Score models on the test split: kappa table + RMSE-by-time CSV."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    data = _load_eval_data(cfg)
    thresholds = _thresholds_from_file(out, data)
    horizons = list(cfg.data.horizons)
    models = cfg.eval_models()

    metrics = {}
    rows = []
    rmse_rows = []
    rmse_hs = list(cfg.eval.rmse_horizons) or horizons
    for model in models:
        ckpt = checkpoint if model == cfg.model else None
        ckpt = ckpt or cfg.eval.checkpoints.get(model)
        preds = _predictions_for_model(cfg, data, model, ckpt)
        table, reports = _evaluate_model(cfg, data, model, preds, thresholds)
        metrics[model] = _metrics_payload(model, table, reports)
        rows.append((model, table))
        for h in rmse_hs:
            curve = ev.rmse_curve(data.test_samples, preds, int(h),
                                  bin_minutes=cfg.eval.bin_minutes)
            for minute, value in sorted(curve.items()):
                rmse_rows.append([model, int(h) * ev.HORIZON_MINUTES, minute, repr(value)])

    _write_json(out / "metrics.json", metrics)
    with open(out / "kappa_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["model"] + [f"{int(h) * ev.HORIZON_MINUTES}-min" for h in horizons] + ["avg"]
        writer.writerow(header)
        for model, table in rows:
            per = table["per_horizon"]
            writer.writerow([model] + [
                repr(per[int(h) * ev.HORIZON_MINUTES]) if int(h) * ev.HORIZON_MINUTES in per else ""
                for h in horizons
            ] + [repr(table["avg"])])
    with open(out / "rmse_by_time.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "horizon_minutes", "minute_of_day", "rmse"])
        writer.writerows(rmse_rows)
    click.echo(f"wrote {out / 'metrics.json'}, {out / 'kappa_table.csv'}, "
               f"{out / 'rmse_by_time.csv'}")


# ---------------------------------------------------------------- attention


@main.command()
@_config_options
@click.option("--checkpoint", type=click.Path(), required=True)
@_fail_cleanly
def attention(config_path, overrides, checkpoint):
    """Dump per-sample slot attention and per-order averages."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    data = _load_eval_data(cfg)
    params, _, _ = load_checkpoint(checkpoint)
    model_cfg = cfg.model_config()
    single = model_cfg.n_horizons == 1

    sums: dict = {}
    counts: dict = {}
    dump_path = out / "attention_dump.csv"
    with open(dump_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if single:
            writer.writerow(["vertex", "time", "side", "order", "weight"])
        else:
            writer.writerow(["vertex", "time", "side", "horizon", "order", "weight"])
        for vertex, t, side, h, order, weight in ev.attention_rows(
            params, model_cfg, data.test_samples, batch_size=cfg.eval.batch_size
        ):
            if single:
                writer.writerow([vertex, t, side, order, repr(weight)])
            else:
                writer.writerow([vertex, t, side, h, order, repr(weight)])
            key = (side, h, order)
            sums[key] = sums.get(key, 0.0) + weight
            counts[key] = counts.get(key, 0) + 1

    mean_path = out / "attention_mean.csv"
    with open(mean_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["side", "horizon_minutes", "order", "mean_weight"])
        for side, h, order in sorted(sums):
            writer.writerow([side, h * ev.HORIZON_MINUTES, order,
                             repr(sums[(side, h, order)] / counts[(side, h, order)])])
    click.echo(f"wrote {dump_path}, {mean_path}")


# ---------------------------------------------------------------------- nmi


@main.command()
@_config_options
@_fail_cleanly
def nmi(config_path, overrides):
    """Correlation-by-radius report over the loaded conditions."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    graph = load_graph_csv(cfg.paths.graph_edges, cfg.paths.graph_attrs or None)
    store = load_conditions(cfg.paths.conditions, graph,
                            timestamp_kind=cfg.data.timestamp_kind,
                            strict=cfg.data.strict)
    values = nmi_by_radius(store, graph, cfg.nmi_max_radius)
    _write_json(out / "nmi.json", {str(r): v for r, v in values.items()})
    with open(out / "nmi.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "nmi"])
        for r in sorted(values):
            writer.writerow([r, repr(values[r])])
    click.echo(f"wrote {out / 'nmi.json'}, {out / 'nmi.csv'}")


# ----------------------------------------------------------------- baseline


@main.command()
@_config_options
@click.option("--model", "model", required=True,
              type=click.Choice(["rw", "arima", "fnn", "saes"]))
@_fail_cleanly
def baseline(config_path, overrides, model):
    """Run one baseline end to end: fit if needed, predict, score."""
    cfg = _load(config_path, overrides)
    out = _out_dir(cfg)
    data = _load_eval_data(cfg)
    thresholds = _thresholds_from_file(out, data)
    horizons = list(cfg.data.horizons)

    if model == "fnn":
        preds = _train_fnn(cfg, data, out)
    elif model == "saes":
        preds = _train_saes(cfg, data, out)
    else:
        preds = _predictions_for_model(cfg, data, model, None)

    path = out / f"predictions_{model}.csv"
    _write_predictions_csv(path, data, preds, horizons)
    table, reports = _evaluate_model(cfg, data, model, preds, thresholds)
    _write_json(out / f"metrics_{model}.json", _metrics_payload(model, table, reports))
    click.echo(f"{model} avg kappa {table['avg']:.4f}; wrote {path}")


if __name__ == "__main__":
    main()
