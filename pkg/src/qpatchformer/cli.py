"""Command-line interface: train, forecast, detect, classify, eval-patch,
and report. Configuration precedence is per-task defaults < JSON config
file < explicit flags."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as dataio
from . import metrics as metricsmod
from . import plots, training
from .exceptions import DataError, ParameterError, QPFError
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .patching import evaluate_patch_params
from .training import TrainConfig

# Per-task defaults for the published hyperparameter table
TASK_DEFAULTS = {
    "long_term_forecast": {"d_model": 512, "lr": 0.001, "batch_size": 32,
                           "patience": 3, "epochs": 10, "k_scales": 4},
    "short_term_forecast": {"d_model": 128, "lr": 0.001, "batch_size": 16,
                            "patience": 3, "epochs": 10, "k_scales": 4},
    "classification": {"d_model": 128, "lr": 0.001, "batch_size": 16,
                       "patience": 10, "epochs": 50, "k_scales": 3},
    "anomaly_detection": {"d_model": 128, "lr": 0.0001, "batch_size": 128,
                          "patience": 3, "epochs": 10, "k_scales": 3},
}

GLOBAL_DEFAULTS = {
    "task": "long_term_forecast", "seq_len": 96, "pred_len": 24,
    "n_heads": 4, "e_layers": 2, "num_patches": 6, "qubits": 4,
    "entanglement": 0.1, "d_ff": None, "dropout": 0.1, "num_classes": 2,
    "seed": 0, "anomaly_ratio": 1.0, "split_ratios": (0.7, 0.1, 0.2),
}

EXIT_CODES = {"data_error": 2, "config_error": 3, "training_error": 4}


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--task", choices=sorted(TASK_DEFAULTS))
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--seq-len", type=int, dest="seq_len")
    p.add_argument("--pred-len", type=int, dest="pred_len")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--n-heads", type=int, dest="n_heads")
    p.add_argument("--e-layers", type=int, dest="e_layers")
    p.add_argument("--num-patches", type=int, dest="num_patches")
    p.add_argument("--qubits", type=int, dest="qubits")
    p.add_argument("--lambda", type=float, dest="entanglement")
    p.add_argument("--d-ff", type=int, dest="d_ff")
    p.add_argument("--dropout", type=float, dest="dropout")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--patience", type=int, dest="patience")
    p.add_argument("--anomaly-ratio", type=float, dest="anomaly_ratio")
    p.add_argument("--num-classes", type=int, dest="num_classes")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir", default="out")


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge per-task defaults, the JSON config file, and CLI flags."""
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("command", "func")}
    file_cfg = {}
    if flags.get("config"):
        try:
            with open(flags["config"], encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ParameterError("config file must hold a flat JSON object")
    task = flags.get("task") or file_cfg.get("task") or GLOBAL_DEFAULTS["task"]
    if task not in TASK_DEFAULTS:
        raise ParameterError(f"unknown task {task!r}")
    merged = dict(GLOBAL_DEFAULTS)
    merged.update(TASK_DEFAULTS[task])
    merged.update(file_cfg)
    merged.update(flags)
    merged["task"] = task
    return merged


def _model_config(cfg: dict, n_vars: int) -> ModelConfig:
    return ModelConfig(
        task=cfg["task"], seq_len=cfg["seq_len"], pred_len=cfg["pred_len"],
        d_model=cfg["d_model"], n_heads=cfg["n_heads"],
        e_layers=cfg["e_layers"], d_ff=cfg.get("d_ff"),
        dropout_p=cfg["dropout"], num_patches=cfg["num_patches"],
        n_qubits=cfg["qubits"], entanglement_factor=cfg["entanglement"],
        num_classes=cfg["num_classes"], n_vars=n_vars,
        k_scales=cfg["k_scales"])


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"],
                       max_epochs=cfg["epochs"], patience=cfg["patience"],
                       seed=cfg["seed"], anomaly_ratio=cfg["anomaly_ratio"])


def _require_data(cfg: dict) -> dataio.MultivariateSeries:
    path = cfg.get("data")
    if not path or not os.path.exists(path):
        raise DataError(f"data file not found: {path!r}")
    return dataio.load_csv(path)


def _write_metrics(out_dir: str, report: metricsmod.MetricReport):
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def load_point_labels(path: str) -> np.ndarray:
    """Single-column 0/1 per-timestep truth file (header optional)."""
    vals = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row_num, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            cell = row[-1].strip()
            try:
                vals.append(int(float(cell)))
            except ValueError:
                if row_num == 0:
                    continue  # header
                raise DataError(f"{path}: bad label at row {row_num + 1}") from None
    return np.array(vals, dtype=np.int64)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    series = _require_data(cfg)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    task = cfg["task"]
    mcfg = _model_config(cfg, series.n_vars)
    tcfg = _train_config(cfg)
    model = Model(mcfg, seed=tcfg.seed)

    log_lines: list[str] = []

    def log(line: str):
        log_lines.append(line)
        print(line)

    if task in ("long_term_forecast", "short_term_forecast"):
        splits = _forecast_splits(series, cfg)
        training.train(model, splits, tcfg, log=log)
        test_x, test_y = splits.test
        preds = _predict_batched(model, test_x, tcfg.batch_size)
        mse, mae = metricsmod.regression_metrics(preds, test_y)
        report = metricsmod.MetricReport(
            task=task, metrics={"mse": mse, "mae": mae},
            counts={"test_samples": len(test_x), "horizon": mcfg.pred_len})
    elif task == "anomaly_detection":
        report = _train_anomaly(model, series, cfg, tcfg, out_dir, log)
    else:
        report = _train_classification(model, series, cfg, tcfg, log)

    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), mcfg, model.params)
    with open(os.path.join(out_dir, "history.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    _write_metrics(out_dir, report)
    return 0


def _forecast_splits(series, cfg) -> dataio.DatasetSplits:
    train_s, val_s, test_s = dataio.split_series(series, cfg["split_ratios"])
    def win(s, name):
        ds = dataio.make_windows(s, cfg["seq_len"], cfg["pred_len"],
                                 "forecast", split=name)
        return ds.inputs, ds.targets
    return dataio.DatasetSplits(win(train_s, "train"), win(val_s, "val"),
                                win(test_s, "test"))


def _predict_batched(model: Model, inputs: np.ndarray, batch_size: int) -> np.ndarray:
    outs = []
    for start in range(0, len(inputs), batch_size):
        outs.append(model.forward(inputs[start:start + batch_size]).data)
    return np.concatenate(outs, axis=0)


def _train_anomaly(model, series, cfg, tcfg, out_dir, log):
    train_s, val_s, test_s = dataio.split_series(series, cfg["split_ratios"])
    seq_len = cfg["seq_len"]
    def win(s, name):
        ds = dataio.make_windows(s, seq_len, 0, "anomaly_detection", split=name)
        return ds.inputs, ds.targets
    splits = dataio.DatasetSplits(win(train_s, "train"), win(val_s, "val"),
                                  win(test_s, "test"))
    training.train(model, splits, tcfg, log=log)

    def scores_of(inputs):
        recon = _predict_batched(model, inputs, tcfg.batch_size)
        return training.anomaly_scores(inputs, recon).reshape(-1)

    train_scores = scores_of(splits.train[0])
    test_scores = scores_of(splits.test[0])
    flags = training.detect_anomalies(train_scores, test_scores,
                                      tcfg.anomaly_ratio)

    n_train = train_s.length
    n_val = val_s.length
    covered = len(splits.test[0]) * seq_len
    test_offset = n_train + n_val
    indices = np.arange(test_offset, test_offset + covered)
    rows = np.column_stack([indices, test_scores, flags.astype(float)])
    dataio.write_csv(os.path.join(out_dir, "anomalies.csv"), rows,
                     header=["index", "score", "flag"])

    metrics = {"flag_fraction": float(np.mean(flags)),
               "threshold_percentile": 100.0 - tcfg.anomaly_ratio}
    if cfg.get("labels"):
        truth_full = load_point_labels(cfg["labels"])
        if len(truth_full) < test_offset + covered:
            raise DataError("label file shorter than the data series")
        truth = truth_full[test_offset:test_offset + covered]
        pr = metricsmod.anomaly_metrics(flags, truth, point_adjust=False)
        metrics.update({"precision": pr["precision"], "recall": pr["recall"],
                        "f1": pr["f1"]})
    return metricsmod.MetricReport(
        task="anomaly_detection", metrics=metrics,
        counts={"test_timesteps": covered, "flagged": int(flags.sum())})


def _train_classification(model, series, cfg, tcfg, log):
    if not cfg.get("labels"):
        raise DataError("classification training requires --labels")
    labels = dataio.load_labels(cfg["labels"])
    ds = dataio.make_windows(series, cfg["seq_len"], 0, "classification",
                             labels=labels)
    n = len(ds)
    tr, va, te = cfg["split_ratios"]
    n_val = int(np.floor(va * n))
    n_test = int(np.floor(te * n))
    n_train = n - n_val - n_test
    if n_train == 0 or n_val == 0 or n_test == 0:
        raise DataError("not enough labeled windows for a train/val/test split")
    splits = dataio.DatasetSplits(
        (ds.inputs[:n_train], ds.targets[:n_train]),
        (ds.inputs[n_train:n_train + n_val], ds.targets[n_train:n_train + n_val]),
        (ds.inputs[n_train + n_val:], ds.targets[n_train + n_val:]))
    training.train(model, splits, tcfg, log=log)
    logits = _predict_batched(model, splits.test[0], tcfg.batch_size)
    pred = training.classify(logits)
    acc = metricsmod.classification_metrics(pred, splits.test[1])
    return metricsmod.MetricReport(
        task="classification", metrics={"accuracy": acc},
        counts={"test_windows": int(n_test), "classes": cfg["num_classes"]})


def cmd_forecast(args) -> int:
    cfg = resolve_config(args)
    mcfg, params = load_checkpoint(args.checkpoint)
    series = dataio.load_csv(args.input)
    if series.length < mcfg.seq_len:
        raise DataError(
            f"input has {series.length} rows, model needs {mcfg.seq_len}")
    if series.n_vars != mcfg.n_vars:
        raise DataError(
            f"input has {series.n_vars} variates, model expects {mcfg.n_vars}")
    window = series.values[-mcfg.seq_len:][None, :, :]
    model = Model(mcfg, params)
    pred = model.forward(window).data[0]  # [T, M]
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    header = series.column_names or [f"var{j}" for j in range(series.n_vars)]
    dataio.write_csv(os.path.join(out_dir, "forecast.csv"), pred, header=header)
    return 0


def cmd_detect(args) -> int:
    cfg = resolve_config(args)
    mcfg, params = load_checkpoint(args.checkpoint)
    if mcfg.task != "anomaly_detection":
        raise ParameterError("checkpoint was not trained for anomaly detection")
    series = dataio.load_csv(args.input)
    model = Model(mcfg, params)
    ds = dataio.make_windows(series, mcfg.seq_len, 0, "anomaly_detection")
    recon = _predict_batched(model, ds.inputs, cfg["batch_size"])
    scores = training.anomaly_scores(ds.inputs, recon).reshape(-1)
    if args.train_data:
        train_series = dataio.load_csv(args.train_data)
        tds = dataio.make_windows(train_series, mcfg.seq_len, 0,
                                  "anomaly_detection")
        trecon = _predict_batched(model, tds.inputs, cfg["batch_size"])
        train_scores = training.anomaly_scores(tds.inputs, trecon).reshape(-1)
    else:
        train_scores = scores
    flags = training.detect_anomalies(train_scores, scores, cfg["anomaly_ratio"])

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    idx = np.arange(len(scores))
    rows = np.column_stack([idx, scores, flags.astype(float)])
    dataio.write_csv(os.path.join(out_dir, "anomalies.csv"), rows,
                     header=["index", "score", "flag"])
    metrics = {"flag_fraction": float(np.mean(flags))}
    if cfg.get("labels"):
        truth = load_point_labels(cfg["labels"])[:len(flags)]
        pr = metricsmod.anomaly_metrics(flags, truth, point_adjust=False)
        metrics.update({"precision": pr["precision"], "recall": pr["recall"],
                        "f1": pr["f1"]})
    _write_metrics(out_dir, metricsmod.MetricReport(
        task="anomaly_detection", metrics=metrics,
        counts={"timesteps": len(scores), "flagged": int(flags.sum())}))
    return 0


def cmd_classify(args) -> int:
    cfg = resolve_config(args)
    mcfg, params = load_checkpoint(args.checkpoint)
    if mcfg.task != "classification":
        raise ParameterError("checkpoint was not trained for classification")
    series = dataio.load_csv(args.input)
    model = Model(mcfg, params)
    true_labels = None
    if cfg.get("labels"):
        entries = dataio.load_labels(cfg["labels"])
        ds = dataio.make_windows(series, mcfg.seq_len, 0, "classification",
                                 labels=entries)
        true_labels = ds.targets
        inputs = ds.inputs
    else:
        count = series.length // mcfg.seq_len
        if count == 0:
            raise DataError("input shorter than one window")
        inputs = np.stack([series.values[i * mcfg.seq_len:(i + 1) * mcfg.seq_len]
                           for i in range(count)])
    logits = _predict_batched(model, inputs, cfg["batch_size"])
    pred = training.classify(logits)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    dataio.write_csv(os.path.join(out_dir, "labels.csv"),
                     pred[:, None].astype(float), header=["label"])
    if true_labels is not None:
        acc = metricsmod.classification_metrics(pred, true_labels)
        _write_metrics(out_dir, metricsmod.MetricReport(
            task="classification", metrics={"accuracy": acc},
            counts={"windows": len(pred)}))
    return 0


def cmd_eval_patch(args) -> int:
    layout = evaluate_patch_params(args.seq_len, args.num_patches)
    print(f"seq_len={layout.seq_len} patch_len={layout.patch_len} "
          f"stride={layout.stride} padding={layout.padding} "
          f"tokens={layout.token_count}")
    return 0


def cmd_report(args) -> int:
    written = plots.render_report(args.out_dir)
    if not written:
        raise DataError(f"no renderable artifacts in {args.out_dir!r}")
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpatchformer",
        description="Patch-based transformer with hybrid quantum-classical "
                    "attention for time-series forecasting, classification, "
                    "and anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write artifacts")
    _add_model_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_fc = sub.add_parser("forecast", help="forecast from a trained checkpoint")
    _add_model_flags(p_fc)
    p_fc.add_argument("--checkpoint", required=True)
    p_fc.add_argument("--input", required=True)
    p_fc.set_defaults(func=cmd_forecast)

    p_det = sub.add_parser("detect", help="flag anomalous timesteps")
    _add_model_flags(p_det)
    p_det.add_argument("--checkpoint", required=True)
    p_det.add_argument("--input", required=True)
    p_det.add_argument("--train-data", dest="train_data")
    p_det.set_defaults(func=cmd_detect)

    p_cls = sub.add_parser("classify", help="predict window labels")
    _add_model_flags(p_cls)
    p_cls.add_argument("--checkpoint", required=True)
    p_cls.add_argument("--input", required=True)
    p_cls.set_defaults(func=cmd_classify)

    p_ep = sub.add_parser("eval-patch", help="print the patch layout for a length")
    p_ep.add_argument("--seq-len", type=int, dest="seq_len", required=True)
    p_ep.add_argument("--num-patches", type=int, dest="num_patches")
    p_ep.set_defaults(func=cmd_eval_patch)

    p_rep = sub.add_parser("report", help="render figures from run artifacts")
    p_rep.add_argument("--out-dir", dest="out_dir", default="out")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QPFError as exc:
        print(f"reason={exc.reason} message={exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.reason, 1)


if __name__ == "__main__":
    sys.exit(main())
