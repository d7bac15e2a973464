"""Command-line experiment runner.

    sotmram train      --data DIR --out DIR [--config FILE] [--epochs N] [--seed N] [--nonideal on|off]
    sotmram infer      --checkpoint FILE (--index I [I ...] | --image IDXFILE)
    sotmram export-vtc [--start V --stop V --points N] --csv FILE
    sotmram sweep      --param KEY --values a,b,c
    sotmram report     [RUN_DIR]
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analog, arch, data, train
from .config import DEFAULTS, ConfigError, ExperimentConfig
from .reporting import METRICS_COLUMNS, SCHEMA_VERSION, atomic_write_text, write_csv, write_json

log = logging.getLogger("sotmram")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

SWEEP_ALIASES = {
    "read_voltage": "analog.read_voltage",
    "delta_b": "train.delta_b",
    "learning_rate": "train.learning_rate",
}


class DataError(RuntimeError):
    pass


def resolve_config(args) -> tuple[ExperimentConfig, str]:
    """Effective config plus the verbatim text of the config file (if any)."""
    echo = ""
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
        echo = Path(args.config).read_text()
    else:
        cfg = ExperimentConfig.from_mapping()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = json.loads(value) if _is_json(value) else value
    for flag, key in (("seed", "seed"), ("epochs", "train.epochs"), ("nonideal", "analog.nonideal"),
                      ("out", "output.dir"), ("data", "data.dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        cfg = cfg.override(**overrides)
    if not echo:
        echo = cfg.to_json()
    return cfg, echo


def _is_json(text: str) -> bool:
    try:
        json.loads(text)
    except ValueError:
        return False
    return True


def load_dataset(cfg: ExperimentConfig) -> data.Dataset:
    data_dir = cfg["data.dir"] or data.default_data_dir()
    if data_dir is None:
        raise DataError("no dataset directory: pass --data or set SOTMRAM_DATA_DIR")
    try:
        return data.load_mnist(data_dir)
    except (OSError, data.IdxError) as e:
        raise DataError(str(e)) from e


def build_pipeline(cfg: ExperimentConfig, nonideal: bool | None = None) -> arch.MlpPipeline:
    return arch.MlpPipeline.build(
        cfg["topology"], cfg.device_params(), cfg["analog.read_voltage"],
        cfg["analog.nonideal"] if nonideal is None else nonideal, cfg.neuron())


def _crossbar_row(pipeline: arch.MlpPipeline, dataset: data.Dataset, epoch: int):
    train_out, _ = arch.pipeline_infer(pipeline, dataset.train_x)
    test_acc, test_pred = train.crossbar_accuracy(pipeline, dataset.test_x, dataset.test_y)
    mean_loss = train.loss(train_out, data.one_hot(dataset.train_y, train_out.shape[1])) / len(dataset.train_x)
    train_acc = float(np.mean(train_out.argmax(axis=1) == dataset.train_y))
    return (epoch, train_acc, test_acc, mean_loss), test_pred


def run_training(cfg: ExperimentConfig, dataset: data.Dataset, out_dir, config_echo: str = "") -> dict:
    """Train, evaluate the binarized oracle and the crossbar each epoch, write artifacts."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    tcfg = cfg.train_config()
    sizes = cfg["topology"]
    if dataset.train_x.shape[1] != sizes[0]:
        raise ConfigError(f"topology input {sizes[0]} does not match data width {dataset.train_x.shape[1]}")
    teacher = train.init_teacher(sizes, tcfg)
    pipeline = build_pipeline(cfg)
    student_metrics, crossbar_metrics = train.Metrics(), train.Metrics()
    teacher_test_acc = []
    student_pred = crossbar_pred = None

    for epoch in range(1, tcfg.epochs + 1):
        teacher, row = train.train_epoch(teacher, tcfg, dataset, epoch)
        student_metrics.append(*row)
        student = train.student_of(teacher, tcfg)
        train.map_to_crossbar(student, pipeline)
        xrow, crossbar_pred = _crossbar_row(pipeline, dataset, epoch)
        crossbar_metrics.append(*xrow)
        teacher_test_acc.append(train.accuracy(teacher, dataset.test_x, dataset.test_y))
        student_pred = train.predict(student, dataset.test_x).argmax(axis=1)
        log.info("epoch %d: student test %.4f, crossbar test %.4f, float teacher %.4f",
                 epoch, row[2], xrow[2], teacher_test_acc[-1])

    student = train.student_of(teacher, tcfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "metrics_student.csv", METRICS_COLUMNS, student_metrics.rows())
    write_csv(out_dir / "metrics_crossbar.csv", METRICS_COLUMNS, crossbar_metrics.rows())
    train.save_checkpoint(out_dir / "checkpoint.json", teacher, student)
    atomic_write_text(out_dir / "config_echo.txt", config_echo)
    atomic_write_text(out_dir / "resolved_config.json", cfg.to_json())

    gpu_per_image = cfg["arch.gpu_cycles_per_image"]
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "train",
        "topology": sizes,
        "student_metrics": _metrics_doc(student_metrics),
        "crossbar_metrics": _metrics_doc(crossbar_metrics),
        "teacher_test_acc": teacher_test_acc,
        "confusion": {
            "student": None if student_pred is None else
            train.confusion_matrix(student_pred, dataset.test_y).tolist(),
            "crossbar": None if crossbar_pred is None else
            train.confusion_matrix(crossbar_pred, dataset.test_y).tolist(),
        },
        "cycles": {
            **pipeline.counter.snapshot(),
            "programming_cycles_per_mapping": sum(layer.out_nodes for layer in pipeline.layers),
            "inference_cycles_per_image": 1,
            "gpu_cycles_per_image": gpu_per_image,
            "speedup_per_image": arch.speedup(1, 1, gpu_per_image),
        },
        "power_area": arch.power_area_report(pipeline, cfg["arch.neuron_power"],
                                             cfg["arch.neuron_area"]).as_dict(),
        "config_echo": config_echo,
        "resolved_config": cfg.values,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    write_json(out_dir / "report.json", report)
    return report


def _metrics_doc(m: train.Metrics) -> dict:
    return {"columns": list(METRICS_COLUMNS), "rows": [list(r) for r in m.rows()]}


def cmd_train(args) -> int:
    cfg, echo = resolve_config(args)
    dataset = load_dataset(cfg)
    report = run_training(cfg, dataset, cfg["output.dir"], echo)
    summary = {"out": str(cfg["output.dir"])}
    if report["student_metrics"]["rows"]:
        summary["student_test_acc"] = report["student_metrics"]["rows"][-1][2]
        summary["crossbar_test_acc"] = report["crossbar_metrics"]["rows"][-1][2]
    print(json.dumps(summary))
    return EXIT_OK


def infer_images(cfg: ExperimentConfig, student: train.StudentView, images: np.ndarray) -> dict:
    pipeline = build_pipeline(cfg)
    train.map_to_crossbar(student, pipeline)
    out, cycles = arch.pipeline_infer(pipeline, images)
    oracle = train.predict(student, images)
    gpu = arch.gpu_cycle_estimate(len(images), cfg["arch.gpu_cycles_per_image"])
    return {
        "schema_version": SCHEMA_VERSION,
        "predicted": out.argmax(axis=1).tolist(),
        "oracle_predicted": oracle.argmax(axis=1).tolist(),
        "activations": out.tolist(),
        "cycles_crossbar": cycles,
        "cycles_gpu": gpu,
        "speedup": gpu / cycles if cycles else None,
    }


def cmd_infer(args) -> int:
    cfg, _ = resolve_config(args)
    _, student = train.load_checkpoint(args.checkpoint)
    if student.sizes != cfg["topology"]:
        cfg = cfg.override(topology=student.sizes)
    labels = None
    if args.image:
        try:
            parsed = data.parse_idx_images(data.read_bytes(args.image))
        except (OSError, data.IdxError) as e:
            raise DataError(str(e)) from e
        images = data.normalize(parsed)
    else:
        dataset = load_dataset(cfg)
        idx = np.asarray(args.index if args.index else [0])
        if idx.min() < 0 or idx.max() >= len(dataset.test_x):
            raise ConfigError(f"image index out of range 0..{len(dataset.test_x) - 1}")
        images, labels = dataset.test_x[idx], dataset.test_y[idx].tolist()
    result = infer_images(cfg, student, images)
    if labels is not None:
        result["labels"] = labels
    print(json.dumps(result))
    return EXIT_OK


def vtc_sweep(neuron: analog.NeuronCircuit, start: float, stop: float, points: int):
    if points < 2 or not stop > start:
        raise ConfigError("VTC sweep needs stop > start and at least two points")
    v_in = np.linspace(start, stop, points)
    _, v_out = analog.neuron_vtc_divider(neuron, v_in)
    return v_in, v_out


def cmd_export_vtc(args) -> int:
    cfg, _ = resolve_config(args)
    neuron = cfg.neuron()
    start = neuron.vss if args.start is None else args.start
    stop = neuron.vdd if args.stop is None else args.stop
    v_in, v_out = vtc_sweep(neuron, start, stop, args.points)
    path = Path(args.csv) if args.csv else Path(cfg["output.dir"]) / "vtc.csv"
    write_csv(path, ("v_in", "v_out"), zip(v_in.tolist(), v_out.tolist()))
    print(json.dumps({"out": str(path), "rows": len(v_in)}))
    return EXIT_OK


def run_sweep(cfg: ExperimentConfig, dataset: data.Dataset, param: str, values, out_dir) -> list[list]:
    key = SWEEP_ALIASES.get(param, param)
    if key not in DEFAULTS or key in ("output.dir", "data.dir"):
        raise ConfigError(f"cannot sweep unknown parameter {param!r}")
    out_dir = Path(out_dir)
    rows = []
    for i, value in enumerate(values):
        run_cfg = cfg.override(**{key: value, "output.dir": str(out_dir / f"{key}_{i}")})
        report = run_training(run_cfg, dataset, run_cfg["output.dir"], run_cfg.to_json())
        s_rows, x_rows = report["student_metrics"]["rows"], report["crossbar_metrics"]["rows"]
        s_acc = s_rows[-1][2] if s_rows else None
        x_acc = x_rows[-1][2] if x_rows else None
        gap = None if s_acc is None else s_acc - x_acc
        rows.append([key, run_cfg[key], s_acc, x_acc, gap])
    write_csv(out_dir / "sweep.csv",
              ("parameter", "value", "student_test_acc", "crossbar_test_acc", "gap"), rows)
    return rows


def cmd_sweep(args) -> int:
    cfg, _ = resolve_config(args)
    key = SWEEP_ALIASES.get(args.param, args.param)
    if key not in DEFAULTS:
        raise ConfigError(f"cannot sweep unknown parameter {args.param!r}")
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    dataset = load_dataset(cfg)
    rows = run_sweep(cfg, dataset, args.param, values, cfg["output.dir"])
    print(json.dumps({"out": str(Path(cfg["output.dir"]) / "sweep.csv"), "rows": len(rows)}))
    return EXIT_OK


def topology_report(cfg: ExperimentConfig) -> dict:
    """Cycle and power/area bookkeeping for the configured topology, no training."""
    pipeline = build_pipeline(cfg)
    sizes = cfg["topology"]
    arch.program_pipeline(pipeline, [np.ones((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                          [np.ones(o) for o in sizes[1:]])
    _, cycles = arch.pipeline_infer(pipeline, np.zeros(sizes[0]))
    gpu = arch.gpu_cycle_estimate(1, cfg["arch.gpu_cycles_per_image"])
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "topology",
        "topology": sizes,
        "cycles": {**pipeline.counter.snapshot(), "gpu_cycles_per_image": gpu,
                   "speedup_per_image": gpu / cycles},
        "power_area": arch.power_area_report(pipeline, cfg["arch.neuron_power"],
                                             cfg["arch.neuron_area"]).as_dict(),
    }


def cmd_report(args) -> int:
    if args.run_dir:
        path = Path(args.run_dir) / "report.json"
        try:
            doc = json.loads(path.read_text())
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read {path}: {e}") from e
        summary = {k: doc.get(k) for k in ("schema_version", "topology", "cycles", "power_area")}
        for name in ("student_metrics", "crossbar_metrics"):
            rows = doc.get(name, {}).get("rows") or []
            summary[name.replace("_metrics", "_final_test_acc")] = rows[-1][2] if rows else None
    else:
        cfg, _ = resolve_config(args)
        summary = topology_report(cfg)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of dotted config keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--nonideal", choices=("on", "off"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="directory holding the MNIST IDX files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sotmram", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and compare oracle vs crossbar")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="classify images on the programmed crossbar")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--index", type=int, nargs="+", help="test-set image indices")
    group.add_argument("--image", help="IDX image file; every image in it is classified")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-vtc", help="neuron voltage transfer curve as CSV")
    _add_common(p)
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--csv", help="output CSV path (default OUT/vtc.csv)")
    p.set_defaults(func=cmd_export_vtc)

    p = sub.add_parser("sweep", help="train once per parameter value")
    _add_common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a run, or the configured topology")
    _add_common(p)
    p.add_argument("run_dir", nargs="?")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, train.CheckpointError, data.IdxError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
