"""Paired twin-versus-device fidelity runs and fleet-wide batch sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import balanced_p_out, sample_config
from ..httpserve import DeviceHost, DeviceUnreachable, HttpDevice
from ..refdev import EmulatorBank
from ..schema import DeviceSchema, load_schema
from .metrics import ClassMetrics, macro_metrics
from .nonparam import StatResult, cliffs_delta, wilcoxon_signed_rank
from .similarity import canonical_response, hamming_similarity

log = logging.getLogger(__name__)

ENCODINGS = ("status", "length")


@dataclass
class EvalReport:
    label: str
    similarities: list[float]
    twin_status: list[int]
    device_status: list[int]
    wilcoxon: StatResult
    cliffs_delta: float
    metrics: ClassMetrics
    partial: bool = False
    wall_time_ms: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def n_requests(self) -> int:
        return len(self.similarities)

    @property
    def summary_similarity(self) -> float:
        return float(np.mean(self.similarities))

    @property
    def status_agreement(self) -> float:
        return float(np.mean(np.array(self.twin_status) == np.array(self.device_status)))

    def summary(self) -> dict:
        return {"label": self.label, "n_requests": self.n_requests, "partial": self.partial,
                "summary_similarity": self.summary_similarity, "status_agreement": self.status_agreement,
                "wilcoxon": self.wilcoxon.to_dict(), "cliffs_delta": self.cliffs_delta,
                "macro_f1": self.metrics.macro_f1}

    def to_dict(self) -> dict:
        return {**self.summary(), "metrics": self.metrics.to_dict(), "settings": self.settings,
                "wall_time_ms": self.wall_time_ms, "similarities": self.similarities,
                "twin_status": self.twin_status, "device_status": self.device_status}


def _client(endpoint, schema: DeviceSchema):
    return HttpDevice.from_url(endpoint, schema) if isinstance(endpoint, str) else endpoint


def _encode(encoding: str, statuses: list[int], strings: list[str]) -> list[float]:
    if encoding == "status":
        return [float(s) for s in statuses]
    return [float(len(s)) for s in strings]


def summarize(twin_codes: list[int], dev_codes: list[int],
              twin_strs: list[str], dev_strs: list[str], encoding: str = "status",
              alternative: str = "two-sided") -> tuple[StatResult, float, ClassMetrics]:
    a = _encode(encoding, twin_codes, twin_strs)
    b = _encode(encoding, dev_codes, dev_strs)
    return wilcoxon_signed_rank(a, b, alternative), cliffs_delta(a, b), macro_metrics(dev_codes, twin_codes)


def paired_fidelity_run(twin, device, schema: DeviceSchema, n_requests: int, seed: int = 0, *,
                        p_out: float | None = None, status_only: bool = False, encoding: str = "status",
                        alternative: str = "two-sided", reset: bool = True, label: str | None = None
                        ) -> EvalReport:
    """Send identical bodies to a twin and a device and compare the answers.

    ``twin`` and ``device`` are write-config URLs or client objects with
    ``post``/``reset``. Both are reset before every request. Bodies come
    from the data-generation sampler; ``p_out`` defaults to the balanced
    per-schema corruption rate. The Wilcoxon test and Cliff's delta run on
    the per-request status codes (``encoding="length"`` uses canonical
    response lengths instead). An unreachable endpoint ends the run early
    with ``partial=True``.
    """
    if n_requests <= 0:
        raise ValueError("n_requests must be positive")
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}")
    t_client, d_client = _client(twin, schema), _client(device, schema)
    p = balanced_p_out(schema) if p_out is None else p_out
    rng = np.random.default_rng(seed)
    sims, t_codes, d_codes, t_strs, d_strs = [], [], [], [], []
    twin_ms = dev_ms = 0.0
    partial = False
    t0 = time.perf_counter()
    for _ in range(n_requests):
        body = sample_config(schema, rng, p)
        try:
            if reset:
                t_client.reset()
                d_client.reset()
            tr = t_client.post(body)
            dr = d_client.post(body)
        except DeviceUnreachable as exc:
            log.warning("fidelity run stopped after %d requests: %s", len(sims), exc)
            partial = True
            break
        ts = canonical_response(tr.status_code, tr.body, status_only)
        ds = canonical_response(dr.status_code, dr.body, status_only)
        sims.append(hamming_similarity(ts, ds).percent)
        t_codes.append(int(tr.status_code))
        d_codes.append(int(dr.status_code))
        t_strs.append(ts)
        d_strs.append(ds)
        twin_ms += tr.processing_time_ms
        dev_ms += dr.processing_time_ms
    if not sims:
        raise DeviceUnreachable("no request pair completed")
    w, delta, metrics = summarize(t_codes, d_codes, t_strs, d_strs, encoding, alternative)
    wall = {"total": (time.perf_counter() - t0) * 1000.0, "twin_processing": twin_ms,
            "device_processing": dev_ms}
    settings = {"n_requests": n_requests, "seed": seed, "p_out": p, "status_only": status_only,
                "encoding": encoding, "alternative": alternative}
    return EvalReport(label or schema.label, sims, t_codes, d_codes, w, delta, metrics, partial, wall, settings)


@dataclass
class BatchReport:
    batch_size: int
    active_twins: int
    reports: list[EvalReport]
    fleet_errors: int
    wall_time_ms: float
    fleet_stats: dict = field(default_factory=dict)

    @property
    def similarities(self) -> list[float]:
        return [r.summary_similarity for r in self.reports]

    @property
    def median_similarity(self) -> float:
        return float(statistics.median(self.similarities))

    @property
    def partial_runs(self) -> int:
        return sum(r.partial for r in self.reports)

    def summary(self) -> dict:
        s = self.similarities
        return {"batch_size": self.batch_size, "active_twins": self.active_twins,
                "median_similarity": self.median_similarity, "min_similarity": min(s),
                "max_similarity": max(s), "fleet_errors": self.fleet_errors,
                "partial_runs": self.partial_runs, "wall_time_ms": self.wall_time_ms,
                "requests": sum(r.n_requests for r in self.reports)}

    def to_dict(self) -> dict:
        return {**self.summary(), "similarities": self.similarities, "fleet_stats": self.fleet_stats}


def emulator_host(schema: DeviceSchema, serial_numbers: list[str], fault_rate: float = 0.0,
                  seed: int = 0, port: int = 0) -> DeviceHost:
    """A started host serving one reference emulator per serial number."""
    bank = EmulatorBank(schema, fault_rate=fault_rate, seed=seed)
    host = DeviceHost(port=port)
    for sn in serial_numbers:
        host.mount(sn, bank.add(sn), schema)
    return host.start()


def batch_fidelity(artifact: str | Path, schema_path: str | Path, device_url: str | None,
                   batch_sizes: list[int], per_twin_requests: int = 20, seed: int = 0, *,
                   clients: int = 16, fault_rate: float = 0.0, data_dir: str | Path | None = None,
                   p_out: float | None = None, status_only: bool = False, encoding: str = "status",
                   wave_size: int | None = None) -> list[BatchReport]:
    """For each batch size, launch that many twins and run a paired fidelity run per twin.

    Twin ``i`` gets serial number ``<prefix>{i:05d}`` and request seed
    ``seed + i``; it is paired with the device of the same serial number on
    ``device_url`` (a host base URL). Without ``device_url`` an in-process
    emulator per serial number is started with ``fault_rate``. Runs are
    spread over ``clients`` concurrent workers.
    """
    from ..fleet import FleetConfig, launch_fleet  # fleet imports twin, which needs no evalstats

    schema = load_schema(schema_path)
    out = []
    for size in batch_sizes:
        if size < 1:
            raise ValueError("batch sizes must be >= 1")
        sns = [f"{schema.sn_prefix}{i:05d}" for i in range(size)]
        bdir = None if data_dir is None else Path(data_dir) / f"batch-{size}"
        cfg = FleetConfig.uniform(artifact, schema_path, sns, batch_size=wave_size or size,
                                  data_dir=None if bdir is None else str(bdir))
        dev_host = emulator_host(schema, sns, fault_rate, seed) if device_url is None else None
        base = device_url or dev_host.url
        t0 = time.perf_counter()
        fleet = launch_fleet(cfg)
        try:
            def run(i: int) -> EvalReport:
                sn = sns[i]
                return paired_fidelity_run(HttpDevice(fleet.url, sn, schema), HttpDevice(base, sn, schema),
                                           schema, per_twin_requests, seed + i, p_out=p_out,
                                           status_only=status_only, encoding=encoding, label=sn)
            with ThreadPoolExecutor(clients) as pool:
                reports = list(pool.map(run, range(size)))
            stats = fleet.stats()
        finally:
            fleet.stop()
            if dev_host is not None:
                dev_host.stop()
        errors = stats.routing_errors + stats.internal_errors + sum(r.partial for r in reports)
        br = BatchReport(size, stats.active_twins, reports, errors, (time.perf_counter() - t0) * 1000.0,
                         stats.to_dict())
        log.info("batch %d: median similarity %.2f%%, %d fleet errors", size, br.median_similarity, errors)
        out.append(br)
    return out


# reports ---------------------------------------------------------------------

def format_table(rows: list[dict]) -> str:
    """Plain-text table with Sim. %, p-value and Cliff δ columns."""
    header = ("Comparison", "N", "Sim. %", "p-value", "Cliff δ", "Macro F1")
    lines = [header]
    for r in rows:
        lines.append((str(r["label"]), str(r["n_requests"]), f"{r['summary_similarity']:.2f}",
                      f"{r['wilcoxon']['p_value']:.4f}", f"{r['cliffs_delta']:.4f}", f"{r['macro_f1']:.4f}"))
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths))  # noqa: E731
    return "\n".join([fmt(lines[0]), "  ".join("-" * w for w in widths), *map(fmt, lines[1:])])


def per_request_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["request", "similarity", "twin_status", "device_status"])
    for i, (s, t, d) in enumerate(zip(report.similarities, report.twin_status, report.device_status)):
        w.writerow([i, repr(s), t, d])
    return buf.getvalue()


def batch_csv(batches: list[BatchReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["batch_size", "serial_number", "similarity", "n_requests"])
    for b in batches:
        for r in b.reports:
            w.writerow([b.batch_size, r.label, repr(r.summary_similarity), r.n_requests])
    return buf.getvalue()


def write_report(report: EvalReport, out: str | Path) -> list[Path]:
    """Write ``out`` (JSON), ``out`` with ``.csv`` and ``.txt`` suffixes; return the paths."""
    out = Path(out)
    paths = [out, out.with_suffix(".csv"), out.with_suffix(".txt")]
    paths[0].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    paths[1].write_text(per_request_csv(report))
    paths[2].write_text(format_table([report.summary()]) + "\n")
    return paths


def write_batch_report(batches: list[BatchReport], out: str | Path) -> list[Path]:
    out = Path(out)
    paths = [out, out.with_suffix(".csv"), out.with_suffix(".txt")]
    paths[0].write_text(json.dumps([b.to_dict() for b in batches], indent=2, sort_keys=True))
    paths[1].write_text(batch_csv(batches))
    lines = ["Batch  Active  Median Sim. %  Min Sim. %  Fleet errors"]
    for b in batches:
        s = b.summary()
        lines.append(f"{b.batch_size:<6} {b.active_twins:<7} {s['median_similarity']:<14.2f} "
                     f"{s['min_similarity']:<11.2f} {b.fleet_errors}")
    paths[2].write_text("\n".join(lines) + "\n")
    return paths
