"""Command-line entry point: ``devtwin <subcommand> [flags]``.

Flags override values from ``--config FILE`` (a JSON object keyed by flag
name), which override built-in defaults. Each run that writes files also
writes ``<output>.run.json`` listing inputs and outputs with sha256 digests.
Exit codes: 0 ok, 2 usage, 3 data error, 4 model error, 5 network error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .dataprep import DataPrepError, PrepOptions, ProcessedDataset, TransformManifest, fit_transform, \
    transform_dataset
from .datagen import DatagenError, GenBudget, GenerationAborted, RawDataset, balanced_p_out, run_generation
from .evalstats import (batch_fidelity, format_table, paired_fidelity_run, recommend_shot_method,
                        write_batch_report, write_report)
from .fleet import FleetConfig, FleetLaunchError, launch_fleet
from .httpserve import DeviceHost, DeviceUnreachable
from .metalearn import (ArtifactError, TaskConfig, TaskError, TrainConfig, TrainingError, TransferError,
                        adapt_model, load_model, save_model, train_maml)
from .metalearn.artifact import file_digest
from .refdev import EmulatorBank, ReferenceDevice, ReferenceDeviceSpec
from .schema import DeviceSchema, SchemaError, bundled_schema_path, load_schema
from .twin import TwinError, build_twin

log = logging.getLogger("devtwin")

DATA_DIR_ENV = "DEVTWIN_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL, EXIT_NETWORK = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# helpers ---------------------------------------------------------------------

def resolve_schema(ref: str) -> Path:
    """A schema file path, or the name of a bundled example such as ``pillbox-v2``."""
    p = Path(ref)
    if p.exists():
        return p
    if "-" in ref and not p.suffix:
        device, version = ref.rsplit("-", 1)
        q = bundled_schema_path(device, version)
        if q.exists():
            return q
    raise FileNotFoundError(f"schema {ref!r} not found (path or bundled name like pillbox-v1)")


def _p_out(value: str | float, schema: DeviceSchema) -> float:
    if value == "auto":
        return balanced_p_out(schema)
    return float(value)


def _serials(args, schema: DeviceSchema) -> list[str]:
    if args.sn:
        return list(args.sn)
    return [f"{schema.sn_prefix}{i:05d}" for i in range(args.count)]


def _latency(text: str) -> float | tuple[float, float]:
    parts = [float(v) for v in str(text).split(",")]
    return parts[0] if len(parts) == 1 else (parts[0], parts[1])


class RunManifest:
    def __init__(self, subcommand: str, config: dict):
        self.subcommand = subcommand
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.wall_times_ms: dict[str, float] = {}
        self.results: dict[str, Any] = {}
        self.started_at = datetime.now(timezone.utc).isoformat()

    def add_input(self, path):
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = file_digest(p)

    def add_output(self, path):
        p = Path(path)
        if p.is_file():
            self.outputs[str(p)] = file_digest(p)

    def phase(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.wall_times_ms[name] = (time.perf_counter() - self.t0) * 1000.0

        return _Timer()

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, "version": __version__, "seed": self.config.get("seed"),
                "config": self.config, "inputs": self.inputs, "outputs": self.outputs,
                "wall_times_ms": self.wall_times_ms, "results": self.results, "started_at": self.started_at}

    def write(self, primary_output) -> Path:
        path = Path(str(primary_output) + ".run.json")
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str))
        return path


def _task_cfg(args, n_classes: int, adapt: bool) -> TaskConfig:
    ways = args.ways if args.ways is not None else n_classes
    size = args.task_size if args.task_size is not None else (64 if adapt else 256)
    return TaskConfig(n_ways=ways, k_shots=args.shots, m_tasks=args.tasks, task_size=size)


def _train_cfg(args, adapt: bool) -> TrainConfig:
    kw = dict(meta_lr=args.meta_lr, inner_lr=args.inner_lr, adaptation_steps=args.steps,
              min_improvement=args.min_improvement, smoothing_window=args.smoothing_window,
              hidden_dim=args.hidden, seed=args.seed, second_order=args.second_order, workers=args.workers)
    if args.iterations is not None:
        kw["max_iterations"] = args.iterations
    if args.patience is not None:
        kw["patience"] = args.patience
    return TrainConfig.for_adaptation(**kw) if adapt else TrainConfig(**kw)


# subcommands -----------------------------------------------------------------

def cmd_gen_data(args, rm: RunManifest) -> int:
    schema_path = resolve_schema(args.schema)
    schema = load_schema(schema_path)
    rm.add_input(schema_path)
    delay = args.delay_ms / 1000.0 if args.delay_ms is not None else (3.0 if args.device_url else 0.0)
    budget = GenBudget(args.requests, args.duration_s, delay, _p_out(args.p_out, schema))
    if args.device_url:
        target = args.device_url
    else:
        sn = args.sn[0] if args.sn else f"{schema.sn_prefix}00000"
        target = ReferenceDevice(ReferenceDeviceSpec(schema, sn, args.fault_rate, _latency(args.latency_ms),
                                                     args.seed, args.fault_mode))
    with rm.phase("gen-data"):
        ds = run_generation(target, schema, budget, seed=args.seed)
    if not args.record_timing:
        for r in ds.records:
            r.processing_time_ms = 0.0
    outputs = []
    if args.holdout:
        if args.holdout >= len(ds):
            raise UsageError("--holdout must be smaller than the number of records")
        train, held = ds.split(len(ds) - args.holdout)
        held_path = Path(args.out).with_name(Path(args.out).stem + ".holdout.csv")
        held.write_csv(held_path, schema.property_names)
        outputs.append(held_path)
        ds = train
    ds.write_csv(args.out, list(schema.property_names))
    outputs.insert(0, Path(args.out))
    for p in outputs:
        rm.add_output(p)
        rm.add_output(p.with_name(p.stem + ".meta.json"))
    counts: dict[int, int] = {}
    for r in ds.records:
        counts[r.status_code] = counts.get(r.status_code, 0) + 1
    rm.results = {"records": len(ds), "status_counts": {str(k): v for k, v in sorted(counts.items())}}
    print(f"wrote {len(ds)} records to {args.out} (status counts {rm.results['status_counts']})")
    rm.write(args.out)
    return EXIT_OK


def cmd_preprocess(args, rm: RunManifest) -> int:
    raw_path = Path(args.input)
    rm.add_input(raw_path)
    schema = None
    if args.schema:
        schema_path = resolve_schema(args.schema)
        schema = load_schema(schema_path)
        rm.add_input(schema_path)
    raw = RawDataset.read(raw_path, schema)
    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else out.with_name(out.stem + ".manifest.json")
    with rm.phase("preprocess"):
        if args.apply_manifest:
            rm.add_input(args.apply_manifest)
            processed = transform_dataset(TransformManifest.load(args.apply_manifest), raw)
        else:
            if schema is None:
                raise UsageError("--schema is required when fitting a new transform")
            opts = PrepOptions(args.low_threshold, args.high_threshold, args.include_timing, not args.no_domain_flags)
            processed = fit_transform(raw, schema, opts)
    processed.write_csv(out, manifest_path)
    rm.add_output(out)
    rm.add_output(manifest_path)
    m = processed.manifest
    rm.results = {"rows": len(processed), "features": m.feature_order, "dropped": m.dropped_features,
                  "label_map": {str(k): v for k, v in m.label_map.items()}}
    print(f"wrote {len(processed)} rows x {len(m.feature_order)} features to {out}")
    rm.write(out)
    return EXIT_OK


def _evaluate_holdout(model, path) -> dict:
    from .evalstats import macro_metrics
    held = ProcessedDataset.read_csv(path)
    keep = held.y >= 0
    pred = model.predict(held.X[keep])
    m = macro_metrics(held.y[keep].tolist(), pred.tolist())
    return {"rows": int(keep.sum()), "unknown_label_rows": int((~keep).sum()), "macro_f1": m.macro_f1,
            "macro_precision": m.macro_precision, "macro_recall": m.macro_recall}


def cmd_train(args, rm: RunManifest, adapt: bool = False) -> int:
    data = ProcessedDataset.read_csv(args.data)
    rm.add_input(args.data)
    task_cfg = _task_cfg(args, data.n_classes, adapt)
    train_cfg = _train_cfg(args, adapt)
    phase = "adapt" if adapt else "train"
    with rm.phase(phase):
        if adapt:
            rm.add_input(args.base)
            base, base_manifest, _ = load_model(args.base)
            model, report = adapt_model(base, data, task_cfg, train_cfg, base_manifest)
        else:
            model, report = train_maml(data, task_cfg, train_cfg)
    cfg = {**train_cfg.digest_fields(), "n_ways": task_cfg.n_ways, "k_shots": task_cfg.k_shots,
           "m_tasks": task_cfg.m_tasks, "task_size": task_cfg.task_size}
    if adapt:
        cfg["base_artifact_sha256"] = file_digest(args.base)
    save_model(args.out, model, data.manifest, cfg)
    rm.add_output(args.out)
    rm.results = {"training": report.to_dict(), "train_config": cfg}
    line = (f"{phase}: {report.iterations_run} iterations ({report.stop_reason}), "
            f"final loss {report.loss_curve[-1]:.4f}, {report.wall_time_ms / 1000:.1f}s")
    if args.holdout:
        rm.add_input(args.holdout)
        rm.results["holdout"] = _evaluate_holdout(model, args.holdout)
        line += f", held-out macro F1 {rm.results['holdout']['macro_f1']:.4f}"
    print(line)
    rm.write(args.out)
    return EXIT_OK


def cmd_build_twins(args, rm: RunManifest) -> int:
    schema_path = resolve_schema(args.schema)
    schema = load_schema(schema_path)
    rm.add_input(schema_path)
    rm.add_input(args.artifact)
    data_dir = Path(args.data_dir)
    initial = json.loads(Path(args.initial_state).read_text()) if args.initial_state else None
    registry: dict = {}
    with rm.phase("build-twins"):
        for sn in _serials(args, schema):
            build_twin(schema, sn, args.artifact, initial_state=initial, data_dir=data_dir, registry=registry)
    fleet_doc = {"port": args.port, "batch_size": args.batch_size, "data_dir": str(data_dir.resolve()),
                 "defaults": {"artifact": str(Path(args.artifact).resolve()), "schema": str(schema_path.resolve())},
                 "entries": [{"serial_number": sn} for sn in registry]}
    out = Path(args.out) if args.out else data_dir / "fleet.json"
    out.write_text(json.dumps(fleet_doc, indent=2))
    rm.add_output(out)
    for sn in registry:
        rm.add_output(data_dir / f"{sn}.json")
    rm.results = {"twins": len(registry)}
    print(f"built {len(registry)} twins in {data_dir}; fleet config {out}")
    rm.write(out)
    return EXIT_OK


def _install_stop_handlers() -> threading.Event:
    stop = threading.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: stop.set())
    return stop


def cmd_serve_fleet(args, rm: RunManifest) -> int:
    cfg = FleetConfig.load(args.config_file)
    if args.port is not None:
        cfg.port = args.port
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    if args.data_dir and not cfg.data_dir:
        cfg.data_dir = args.data_dir
    stop = _install_stop_handlers()
    fleet = launch_fleet(cfg)
    print(f"fleet of {len(fleet.twins)} twins listening on {fleet.url} (stats at {fleet.url}/fleet/stats)",
          flush=True)
    fleet.host.wait(stop)
    print(json.dumps(fleet.stats().to_dict()))
    return EXIT_OK


def cmd_serve_refdev(args, rm: RunManifest) -> int:
    schema = load_schema(resolve_schema(args.schema))
    bank = EmulatorBank(schema, args.fault_rate, _latency(args.latency_ms), args.seed, args.fault_mode)
    host = DeviceHost(args.host, args.port)
    for sn in _serials(args, schema):
        host.mount(sn, bank.add(sn), schema)
    stop = _install_stop_handlers()
    host.start()
    print(f"{len(bank.devices)} {schema.label} emulators listening on {host.url}", flush=True)
    host.wait(stop)
    return EXIT_OK


def _local_pair(args, schema: DeviceSchema):
    """In-process twin and/or emulator for endpoints not given as URLs."""
    sn = f"{schema.sn_prefix}00000"
    twin = args.twin_url
    device = args.device_url
    if device is None:
        device = ReferenceDevice(ReferenceDeviceSpec(schema, sn, args.fault_rate, 0.0, args.seed, args.fault_mode))
    if twin is None:
        if not args.artifact:
            raise UsageError("give --twin-url or --artifact")
        twin = build_twin(schema, sn, args.artifact)
    return twin, device


def cmd_evaluate(args, rm: RunManifest) -> int:
    schema_path = resolve_schema(args.schema)
    schema = load_schema(schema_path)
    rm.add_input(schema_path)
    if args.artifact:
        rm.add_input(args.artifact)
    twin, device = _local_pair(args, schema)
    with rm.phase("evaluate"):
        report = paired_fidelity_run(twin, device, schema, args.requests, args.seed,
                                     p_out=_p_out(args.p_out, schema), status_only=args.status_only,
                                     encoding=args.encoding,
                                     alternative="greater" if args.one_sided else "two-sided")
    print(format_table([report.summary()]))
    if args.out:
        for p in write_report(report, args.out):
            rm.add_output(p)
        rm.results = report.summary()
        rm.write(args.out)
    return EXIT_OK


def cmd_batch_eval(args, rm: RunManifest) -> int:
    schema_path = resolve_schema(args.schema)
    schema = load_schema(schema_path)
    rm.add_input(schema_path)
    rm.add_input(args.artifact)
    sizes = [int(v) for v in str(args.batch_sizes).split(",") if v.strip()]
    with rm.phase("batch-eval"):
        batches = batch_fidelity(args.artifact, schema_path, args.device_url, sizes, args.requests, args.seed,
                                 clients=args.clients, fault_rate=args.fault_rate,
                                 data_dir=args.data_dir or None, p_out=_p_out(args.p_out, schema),
                                 status_only=args.status_only, encoding=args.encoding)
    for b in batches:
        s = b.summary()
        print(f"batch {b.batch_size}: {b.active_twins} active, median similarity {s['median_similarity']:.2f}%, "
              f"fleet errors {b.fleet_errors}")
    if args.out:
        for p in write_batch_report(batches, args.out):
            rm.add_output(p)
        rm.results = {"batches": [b.summary() for b in batches]}
        rm.write(args.out)
    return EXIT_OK


def cmd_recommend(args, rm: RunManifest) -> int:
    k = recommend_shot_method(args.features, args.task, args.time_constrained, args.upgrade)
    print(f"{k}-shot")
    return EXIT_OK


# parser ----------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of flag defaults (flags given on the command line win)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")


def _add_schema(p, required=True):
    p.add_argument("--schema", required=required, help="schema file or bundled name, e.g. pillbox-v1")


def _add_emulator(p):
    p.add_argument("--fault-rate", type=float, default=0.05)
    p.add_argument("--fault-mode", choices=("zoned", "random"), default="zoned")


def _add_training(p, adapt: bool):
    p.add_argument("--data", required=True, help="processed CSV (manifest alongside)")
    p.add_argument("--out", required=True, help="model artifact to write")
    p.add_argument("--holdout", help="processed held-out CSV to score after training")
    p.add_argument("--ways", type=int, default=None, help="N per task (default: number of classes)")
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--tasks", type=int, default=10, help="tasks per meta-batch")
    p.add_argument("--task-size", type=int, default=None, help=f"rows per task (default {64 if adapt else 256})")
    p.add_argument("--meta-lr", type=float, default=0.001)
    p.add_argument("--inner-lr", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=1, help="inner adaptation steps")
    p.add_argument("--iters", "--iterations", dest="iterations", type=int, default=None,
                   help=f"default {1000 if adapt else 5000}")
    p.add_argument("--patience", type=int, default=None, help=f"default {20 if adapt else 100}")
    p.add_argument("--min-improvement", type=float, default=1e-4)
    p.add_argument("--smoothing-window", type=int, default=10)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--second-order", action="store_true")
    p.add_argument("--workers", type=int, default=1)


def _add_fidelity(p):
    p.add_argument("--requests", type=int, required=True)
    p.add_argument("--p-out", default="auto", help="per-property corruption probability, or 'auto'")
    p.add_argument("--status-only", action="store_true", help="compare status codes only")
    p.add_argument("--encoding", choices=("status", "length"), default="status")
    p.add_argument("--out", help="report JSON (CSV and text table written alongside)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="devtwin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"devtwin {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("gen-data", help="probe a device and record a raw dataset")
    _add_common(p)
    _add_schema(p)
    _add_emulator(p)
    p.add_argument("--endpoint", "--device-url", dest="device_url",
                   help="write-config URL; default is an in-process emulator")
    p.add_argument("--sn", action="append", help="emulator serial number")
    p.add_argument("--max-requests", "--requests", dest="requests", type=int, default=None)
    p.add_argument("--max-duration", "--duration-s", dest="duration_s", type=float, default=None,
                   help="time budget in seconds")
    p.add_argument("--delay-ms", dest="delay_ms", type=float, default=None,
                   help="pause between requests (default 3000 against a URL, 0 in-process)")
    p.add_argument("--p-out", default="0.3", help="per-property corruption probability, or 'auto'")
    p.add_argument("--latency-ms", default="0", help="emulator latency: value or 'lo,hi'")
    p.add_argument("--holdout", type=int, default=0, help="write the last N records to <out>.holdout.csv")
    p.add_argument("--record-timing", action=argparse.BooleanOptionalAction, default=True,
                   help="keep measured processing times (disable for byte-identical reruns)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="fit (or apply) the data transform")
    _add_common(p)
    _add_schema(p, required=False)
    p.add_argument("--in", "--input", dest="input", required=True, help="raw CSV or calibration log (.jsonl)")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest path (default <out stem>.manifest.json)")
    p.add_argument("--apply-manifest", help="reuse a fitted manifest instead of fitting")
    p.add_argument("--low-threshold", type=float, default=1e-9)
    p.add_argument("--high-threshold", type=float, default=None)
    p.add_argument("--include-timing", action="store_true")
    p.add_argument("--no-domain-flags", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="meta-train a twin model from scratch")
    _add_common(p)
    _add_training(p, adapt=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="few-shot adapt a model to another device or version")
    _add_common(p)
    p.add_argument("--base-model", "--base", dest="base", required=True, help="source model artifact")
    _add_training(p, adapt=True)
    p.set_defaults(func=lambda a, rm: cmd_train(a, rm, adapt=True))

    p = sub.add_parser("build-twins", help="create serial-numbered twin state and a fleet config")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--artifact", required=True)
    p.add_argument("--sn", action="append")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV, "twins"))
    p.add_argument("--initial-state", help="JSON file with the starting config")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--out", help="fleet config to write (default <data-dir>/fleet.json)")
    p.set_defaults(func=cmd_build_twins)

    p = sub.add_parser("serve-fleet", help="serve twins over HTTP until SIGTERM")
    _add_common(p)
    p.add_argument("--fleet", dest="config_file", required=True, help="fleet config JSON")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV))
    p.set_defaults(func=cmd_serve_fleet)

    p = sub.add_parser("serve-refdev", help="serve reference emulators over HTTP until SIGTERM")
    _add_common(p)
    _add_schema(p)
    _add_emulator(p)
    p.add_argument("--sn", action="append")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8081)
    p.add_argument("--latency-ms", default="0")
    p.set_defaults(func=cmd_serve_refdev)

    p = sub.add_parser("evaluate", help="paired twin/device fidelity run")
    _add_common(p)
    _add_schema(p)
    _add_emulator(p)
    _add_fidelity(p)
    p.add_argument("--twin-url", help="twin write-config URL")
    p.add_argument("--artifact", help="serve the twin in-process from this artifact")
    p.add_argument("--device-url", help="device write-config URL; default is an in-process emulator")
    p.add_argument("--one-sided", action="store_true", help="one-sided Wilcoxon (twin > device)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("batch-eval", help="fidelity across fleets of increasing size")
    _add_common(p)
    _add_schema(p)
    _add_emulator(p)
    _add_fidelity(p)
    p.add_argument("--artifact", required=True)
    p.add_argument("--batch-sizes", default="100,200,400")
    p.add_argument("--clients", type=int, default=16)
    p.add_argument("--device-url", help="base URL of a host with one device per twin serial number")
    p.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV))
    p.set_defaults(func=cmd_batch_eval)

    p = sub.add_parser("recommend", help="suggest K for K-shot training or adaptation")
    _add_common(p)
    p.add_argument("--features", choices=("low", "medium", "high"), required=True)
    p.add_argument("--task", choices=("train", "device-adapt", "version-adapt"), required=True)
    p.add_argument("--time-constrained", action="store_true")
    p.add_argument("--upgrade", choices=("minor", "major"))
    p.set_defaults(func=cmd_recommend)
    return parser


def _prescan(argv: list[str], subcommands) -> tuple[str | None, str | None]:
    """Subcommand name and --config path, found before full parsing."""
    sub = next((a for a in argv if a in subcommands), None)
    cfg = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif a.startswith("--config="):
            cfg = a.split("=", 1)[1]
    return sub, cfg


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    name, cfg_path = _prescan(argv, parser.subcommands)
    if name is not None and cfg_path is not None:
        sub = parser.subcommands[name]
        try:
            doc = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            sub.error(f"cannot read --config {cfg_path}: {exc}")
        if not isinstance(doc, dict):
            sub.error("--config must hold a JSON object")
        dests = {a.dest: a for a in sub._actions}
        keys = {k: k.replace("-", "_") for k in doc}
        unknown = [k for k, d in keys.items() if d not in dests or d in ("config", "help")]
        if unknown:
            sub.error(f"unknown keys in --config: {', '.join(unknown)}")
        sub.set_defaults(**{keys[k]: v for k, v in doc.items()})
        for d in keys.values():  # config values satisfy required flags
            dests[d].required = False
    return parser.parse_args(argv)


def run(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    config = {k: v for k, v in vars(args).items() if k != "func"}
    rm = RunManifest(args.subcommand, config)
    try:
        return args.func(args, rm)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FleetLaunchError as exc:
        cause = exc.__cause__
        code = (EXIT_MODEL if isinstance(cause, (ArtifactError, TwinError))
                else EXIT_DATA if isinstance(cause, ValueError) else EXIT_NETWORK)
        print(f"fleet launch failed: {exc}", file=sys.stderr)
        return code
    except (DeviceUnreachable, ConnectionError, GenerationAborted) as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (TrainingError, TransferError, ArtifactError, TaskError, TwinError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (SchemaError, DataPrepError, DatagenError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
