"""Interval sweeps, CSV results and plot-data series."""
from __future__ import annotations

import csv
import os
import statistics
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .config import PROTOCOLS, SimConfig
from .metrics import SummaryRow
from .simulation import run_config

DEFAULT_INTERVALS = (1.0, 2.0, 5.0, 10.0)
PRIORITIES = ("urgent", "normal")
METRICS = {
    "energy": "energy_per_delivered_{}_mJ",
    "delay": "avg_delay_{}_ms",
}


@dataclass(frozen=True)
class SweepSpec:
    intervals_urgent: tuple = DEFAULT_INTERVALS
    intervals_normal: Optional[tuple] = None  # None: same as the urgent list
    protocols: tuple = PROTOCOLS
    seeds: int = 10

    def __post_init__(self):
        if not self.intervals_urgent or not self.protocols:
            raise ValueError("sweep needs at least one interval and one protocol")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if self.intervals_normal is not None and len(self.intervals_normal) != len(self.intervals_urgent):
            raise ValueError("urgent and normal interval lists must have the same length")
        if any(v <= 0 for v in self.points_flat()):
            raise ValueError("intervals must be positive")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ValueError(f"unknown protocol {p!r}")

    def points(self) -> list[tuple[float, float]]:
        normal = self.intervals_normal or self.intervals_urgent
        return [(float(u), float(n)) for u, n in zip(self.intervals_urgent, normal)]

    def points_flat(self) -> list[float]:
        return [v for pt in self.points() for v in pt]

    def configs(self, base: SimConfig) -> list[SimConfig]:
        out = []
        for protocol in self.protocols:
            for u, n in self.points():
                for k in range(self.seeds):
                    out.append(base.replace(protocol=protocol, mean_interval_urgent_s=u,
                                            mean_interval_normal_s=n, seed=base.seed + k))
        return out


def _key(row: SummaryRow) -> tuple:
    return (row.protocol, row.mean_interval_urgent, row.mean_interval_normal, row.seed)


def _config_key(cfg: SimConfig) -> tuple:
    return (cfg.protocol, cfg.mean_interval_urgent_s, cfg.mean_interval_normal_s, cfg.seed)


def _sort_key(row: SummaryRow) -> tuple:
    return (PROTOCOLS.index(row.protocol) if row.protocol in PROTOCOLS else len(PROTOCOLS),
            row.protocol, row.mean_interval_urgent, row.mean_interval_normal, row.seed)


def run_one(cfg: SimConfig) -> SummaryRow:
    """Run one configuration; any exception becomes a ``failed`` row."""
    try:
        return run_config(cfg)
    except Exception as exc:  # a single broken run must not end the sweep
        return SummaryRow(cfg.protocol, cfg.mean_interval_urgent_s, cfg.mean_interval_normal_s,
                          cfg.seed, status="failed", error=f"{type(exc).__name__}: {exc}")


def read_rows(path: Union[str, Path]) -> list[SummaryRow]:
    with open(path, newline="") as fh:
        return [SummaryRow.from_csv_dict(d) for d in csv.DictReader(fh)]


def write_rows(path: Union[str, Path], rows: Iterable[SummaryRow]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SummaryRow.columns(), lineterminator="\n")
        w.writeheader()
        for row in sorted(rows, key=_sort_key):
            w.writerow(row.as_csv_dict())
    os.replace(tmp, path)


def _append_row(path: Path, row: SummaryRow) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SummaryRow.columns(), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row.as_csv_dict())


def run_sweep(spec: SweepSpec, base: SimConfig, out_csv: Union[str, Path], *,
              parallel: int = 1, resume: bool = False, progress=None) -> list[SummaryRow]:
    """Run every (protocol, interval, seed) point and write a sorted CSV.

    Rows are appended as runs finish so an interrupted sweep can be resumed;
    the file is rewritten in sorted order at the end. With ``resume`` every
    configuration already present with a non-failed row is skipped.
    """
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    done: dict = {}
    if resume and out_csv.exists():
        for row in read_rows(out_csv):
            if row.status != "failed":
                done[_key(row)] = row
    todo = [cfg for cfg in spec.configs(base) if _config_key(cfg) not in done]
    write_rows(out_csv, done.values())

    results = dict(done)

    def finish(row: SummaryRow) -> None:
        results[_key(row)] = row
        _append_row(out_csv, row)
        if progress is not None:
            progress(row)

    if parallel <= 1:
        for cfg in todo:
            finish(run_one(cfg))
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(run_one, cfg) for cfg in todo]
            for fut in as_completed(futures):
                finish(fut.result())

    wanted = {_config_key(cfg) for cfg in spec.configs(base)}
    rows = [r for k, r in results.items() if k in wanted]
    write_rows(out_csv, rows)
    return sorted(rows, key=_sort_key)


# --------------------------------------------------------------------------
# plot data


@dataclass(frozen=True)
class SeriesPoint:
    interval: float
    mean: float
    lo: float
    hi: float


def metric_value(row: SummaryRow, metric: str, priority: str) -> Optional[float]:
    return getattr(row, METRICS[metric].format(priority))


def series(rows: Sequence[SummaryRow], protocol: str, priority: str, metric: str) -> list[SeriesPoint]:
    """Seed mean and spread of ``metric`` per interval for one protocol and class.

    Failed runs and runs without a value for the metric are left out.
    """
    by_interval: dict = {}
    for r in rows:
        if r.protocol != protocol or r.status == "failed":
            continue
        v = metric_value(r, metric, priority)
        if v is None:
            continue
        x = r.mean_interval_urgent if priority == "urgent" else r.mean_interval_normal
        by_interval.setdefault(x, []).append(v)
    return [SeriesPoint(x, statistics.fmean(vs), min(vs), max(vs))
            for x, vs in sorted(by_interval.items())]


def emit_plot_data(csv_path: Union[str, Path], out_dir: Union[str, Path]) -> list[Path]:
    """Write ``<protocol>_<priority>_<metric>.tsv`` files for every series."""
    rows = read_rows(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no result rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    protocols = sorted({r.protocol for r in rows},
                       key=lambda p: PROTOCOLS.index(p) if p in PROTOCOLS else len(PROTOCOLS))
    written = []
    for protocol in protocols:
        for priority in PRIORITIES:
            for metric in METRICS:
                path = out_dir / f"{protocol}_{priority}_{metric}.tsv"
                lines = ["interval_s\tmean\tmin\tmax"]
                for pt in series(rows, protocol, priority, metric):
                    lines.append(f"{pt.interval!r}\t{pt.mean!r}\t{pt.lo!r}\t{pt.hi!r}")
                path.write_text("\n".join(lines) + "\n")
                written.append(path)
    return written
