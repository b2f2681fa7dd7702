"""Run reports and per-figure plot data."""
from __future__ import annotations

import csv
import io
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..simnet import EpochMetrics, SafetyCounters
from .config import ScenarioConfig, format_seeds

PLOT_COLUMNS = ("x", "mean", "stddev", "n_seeds")
EPOCH_COLUMNS = ("epoch", "T", "T_n", "submitted", "decided", "aborted", "displaced", "carried",
                 "cross", "duration_us", "reset_delay_us", "view_changes", "messages",
                 "ended_by_trigger", "forks", "double_spends", "migration")


class InvariantViolation(RuntimeError):
    """A safety counter was nonzero in a run that respected the fault bounds."""


@dataclass
class MetricsReport:
    decided: int
    submitted: int
    aborted: int
    duration_us: int
    throughput_tps: float
    latency_mean_us: float | None
    latency_p50_us: float | None
    latency_p95_us: float | None
    reset_delay_us: float | None
    counters: SafetyCounters
    epochs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["counters"] = asdict(self.counters)
        return out


def epoch_row(m: EpochMetrics) -> dict:
    c = m.counters
    return {"epoch": m.epoch, "T": m.T, "T_n": m.T_n, "submitted": m.submitted,
            "decided": m.decided, "aborted": m.aborted, "displaced": m.displaced,
            "carried": m.carried, "cross": m.cross, "duration_us": m.duration_us,
            "reset_delay_us": m.reset_delay_us if m.reset_delay_us is not None else "",
            "view_changes": m.view_changes, "messages": m.messages,
            "ended_by_trigger": int(m.ended_by_trigger), "forks": c.forks,
            "double_spends": c.double_spends, "migration": c.migration}


def summarize(epochs: list[EpochMetrics]) -> MetricsReport:
    """Percentiles come from the full latency sample of every epoch."""
    lat = [x for m in epochs for x in m.latencies_us]
    counters = SafetyCounters()
    for m in epochs:
        counters.merge(m.counters)
    duration = sum(m.duration_us for m in epochs)
    decided = sum(m.decided for m in epochs)
    resets = [m.reset_delay_us for m in epochs if m.reset_delay_us is not None]
    if lat:
        arr = np.asarray(lat, dtype=float)
        mean, p50, p95 = float(arr.mean()), float(np.percentile(arr, 50)), \
            float(np.percentile(arr, 95))
    else:
        mean = p50 = p95 = None
    return MetricsReport(
        decided=decided, submitted=sum(m.submitted for m in epochs),
        aborted=sum(m.aborted for m in epochs), duration_us=duration,
        throughput_tps=decided / (duration / 1e6) if duration else 0.0,
        latency_mean_us=mean, latency_p50_us=p50, latency_p95_us=p95,
        reset_delay_us=statistics.fmean(resets) if resets else None,
        counters=counters, epochs=[epoch_row(m) for m in epochs])


def check_safety(report: MetricsReport, label: str = ""):
    c = report.counters
    if c.violations:
        raise InvariantViolation(f"{label}: forks={c.forks} double_spends={c.double_spends} "
                                 f"migration={c.migration} conservation="
                                 f"{c.conservation_violations} locks={c.lock_violations}")


@dataclass
class Point:
    x: float
    values: list[float]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.values)

    @property
    def stddev(self) -> float:
        return statistics.stdev(self.values) if len(self.values) > 1 else 0.0


@dataclass
class Series:
    name: str
    points: list[Point] = field(default_factory=list)

    def means(self) -> dict:
        return {p.x: p.mean for p in self.points}


@dataclass
class Figure:
    """One experiment's output: several series over a shared x axis."""
    name: str
    x_label: str
    y_label: str
    config: ScenarioConfig
    seeds: tuple
    series: list[Series] = field(default_factory=list)

    def get(self, name: str) -> Series:
        for s in self.series:
            if s.name == name:
                return s
        raise KeyError(name)


def _num(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def plot_csv(fig: Figure, series: Series) -> str:
    buf = io.StringIO()
    buf.write(f"# figure: {fig.name}\n# series: {series.name}\n")
    buf.write(f"# x: {fig.x_label}\n# y: {fig.y_label}\n")
    buf.write(f"# seeds: {format_seeds(fig.seeds)}\n")
    for line in fig.config.to_text().splitlines():
        if not line.startswith("out ="):      # destination only; results do not depend on it
            buf.write(f"# config: {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for p in series.points:
        w.writerow((_num(p.x), repr(p.mean), repr(p.stddev), len(p.values)))
    return buf.getvalue()


def emit_plotdata(figures: list[Figure], out_dir: str | Path) -> list[Path]:
    """One CSV per figure, or per series when a figure carries several."""
    out_dir = Path(out_dir)
    paths = []
    for fig in figures:
        out_dir.mkdir(parents=True, exist_ok=True)
        for s in fig.series:
            name = fig.name if len(fig.series) == 1 else f"{fig.name}.{s.name}"
            path = out_dir / f"{name}.csv"
            path.write_text(plot_csv(fig, s))
            paths.append(path)
    return paths
