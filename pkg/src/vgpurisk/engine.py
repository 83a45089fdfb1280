"""Partitioned execution of the analysis and portfolio risk metrics.

The YET is split into contiguous, near-equal shards, one per logical device.
Shards run on a thread pool (the compiled kernel releases the GIL); every
shard writes only its own slice of the output, so the merged Year Loss Table
does not depend on shard count, worker count or completion order.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .datagen import DatasetBundle
from .risk import YearLossTable, layer_table_stack


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExecutionPlan:
    n_devices: int
    shards: tuple[tuple[int, int], ...]  # half-open trial index ranges

    def __post_init__(self):
        if self.n_devices < 1:
            raise PlanError("n_devices must be >= 1")
        if len(self.shards) != self.n_devices:
            raise PlanError("one shard per device required")

    @classmethod
    def even(cls, n_trials: int, n_devices: int) -> "ExecutionPlan":
        """Contiguous split whose shard sizes differ by at most one."""
        if n_devices < 1:
            raise PlanError("n_devices must be >= 1")
        base, extra = divmod(n_trials, n_devices)
        shards, start = [], 0
        for i in range(n_devices):
            stop = start + base + (1 if i < extra else 0)
            shards.append((start, stop))
            start = stop
        return cls(n_devices, tuple(shards))

    @property
    def n_trials(self) -> int:
        return self.shards[-1][1] if self.shards else 0

    def validate(self, n_trials: int):
        pos = 0
        for lo, hi in self.shards:
            if lo != pos or hi < lo:
                raise PlanError(f"shards must be contiguous and disjoint; got {self.shards}")
            pos = hi
        if pos != n_trials:
            raise PlanError(f"plan covers {pos} trials but the YET has {n_trials}")


def run_analysis(
    bundle: DatasetBundle,
    plan: ExecutionPlan | None = None,
    workers: int = 1,
    backend: str | None = None,
) -> YearLossTable:
    """Compute the Year Loss Table, summing layer losses over the portfolio."""
    yet = bundle.yet
    plan = plan or ExecutionPlan.even(yet.n_trials, 1)
    plan.validate(yet.n_trials)
    if workers < 1:
        raise PlanError("workers must be >= 1")

    max_id = bundle.max_event_id
    elts = bundle.elt_map
    layers = [(layer_table_stack(layer, elts, max_id), layer.terms) for layer in bundle.portfolio.layers()]
    out = np.zeros(yet.n_trials, dtype=np.float64)

    def run_shard(shard):
        lo, hi = shard
        if hi == lo:
            return
        view = out[lo:hi]
        for tables, terms in layers:
            _kernels.layer_losses(yet.offsets, yet.event_ids, lo, hi, tables, terms, view, backend)

    if workers == 1 or plan.n_devices == 1:
        for shard in plan.shards:
            run_shard(shard)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_shard, plan.shards))
    return YearLossTable(np.arange(1, yet.n_trials + 1, dtype=np.int64), out)


# -- metrics -----------------------------------------------------------------


def pml(ylt: YearLossTable, return_period: float) -> float:
    """Probable Maximum Loss: the ``ceil(n / R)``-th largest trial loss."""
    n = len(ylt)
    if not return_period >= 1:
        raise ValueError(f"return period must be >= 1, got {return_period}")
    if return_period > n:
        raise ValueError(f"return period {return_period} exceeds the number of trials {n}")
    rank = math.ceil(n / return_period)
    desc = np.sort(ylt.losses)[::-1]
    return float(desc[rank - 1])


def tvar(ylt: YearLossTable, tail_prob: float) -> float:
    """Tail Value-at-Risk: mean of the worst ``ceil(q * n)`` trial losses."""
    if not 0.0 < tail_prob < 1.0:
        raise ValueError(f"tail probability must lie in (0, 1), got {tail_prob}")
    n = len(ylt)
    k = math.ceil(tail_prob * n)
    if k < 1:
        raise ValueError("tail is empty")
    desc = np.sort(ylt.losses)[::-1]
    return float(np.mean(desc[:k]))


@dataclass(frozen=True)
class MetricsReport:
    pml_curve: tuple[tuple[float, float], ...]
    tvar: tuple[float, float]
    total_wall_time: float

    def to_dict(self) -> dict:
        return {
            "pml_curve": [{"return_period": r, "loss": loss} for r, loss in self.pml_curve],
            "tvar": {"tail_prob": self.tvar[0], "value": self.tvar[1]},
        }


DEFAULT_RETURN_PERIODS = (2, 5, 10, 25, 50, 100, 250, 500, 1000)


def metrics_report(ylt, return_periods=DEFAULT_RETURN_PERIODS, tail_prob=0.01, wall_time=0.0) -> MetricsReport:
    periods = [r for r in return_periods if r <= len(ylt)]
    curve = tuple((float(r), pml(ylt, r)) for r in sorted(periods))
    return MetricsReport(curve, (tail_prob, tvar(ylt, tail_prob)), wall_time)


def analyse(bundle, n_devices=1, workers=1, backend=None, **metric_kw):
    """Run the analysis and the metrics, timing the analysis."""
    plan = ExecutionPlan.even(bundle.yet.n_trials, n_devices)
    t0 = time.perf_counter()
    ylt = run_analysis(bundle, plan, workers, backend)
    wall = time.perf_counter() - t0
    return ylt, metrics_report(ylt, wall_time=wall, **metric_kw)


def ylt_to_csv(ylt: YearLossTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial_id", "loss"])
    for tid, loss in zip(ylt.trial_ids.tolist(), ylt.losses.tolist()):
        w.writerow([tid, repr(loss)])
    return buf.getvalue()


def ylt_from_csv(text: str) -> YearLossTable:
    rows = [line.split(",") for line in text.splitlines() if line and not line.startswith("#")]
    if not rows or rows[0] != ["trial_id", "loss"]:
        raise ValueError("YLT CSV must start with a trial_id,loss header")
    body = rows[1:]
    return YearLossTable(
        np.array([int(r[0]) for r in body], dtype=np.int64),
        np.array([float(r[1]) for r in body], dtype=np.float64),
    )
