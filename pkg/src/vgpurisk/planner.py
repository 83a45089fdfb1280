"""Exhaustive (P, v) sweep over the analytic model and optimum selection."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .model import REFERENCE_SIZES, BundleSizes, ModelParams, predict

OBJECTIVES = ("time", "energy", "energy_time_product")
CSV_COLUMNS = ("P", "v", "total_time_s", "energy_ws", "product", "regime", "feasible")


class NoFeasibleConfiguration(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanQuery:
    params: ModelParams
    p_range: tuple[int, int] = (1, 16)
    v_range: tuple[int, int] = (1, 12)
    objective: str = "time"
    apply_memory_filter: bool = False
    sizes: BundleSizes = REFERENCE_SIZES
    # predictions within this relative distance of the optimum count as ties
    tie_rtol: float = 1e-3

    def __post_init__(self):
        for name in ("p_range", "v_range"):
            lo, hi = (int(x) for x in getattr(self, name))
            if lo < 1 or lo > hi:
                raise ValueError(f"{name} must be a non-empty range of positive integers, got {(lo, hi)}")
            object.__setattr__(self, name, (lo, hi))
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.tie_rtol < 0:
            raise ValueError("tie_rtol must be >= 0")


@dataclass(frozen=True)
class PlanRow:
    P: int
    v: int
    total_time: float
    energy: float
    product: float
    regime: str
    feasible: bool

    def objective(self, name: str) -> float:
        return {"time": self.total_time, "energy": self.energy, "energy_time_product": self.product}[name]


@dataclass(frozen=True)
class PlanTable:
    rows: tuple[PlanRow, ...]
    objective: str
    best: tuple[int, int] | None

    @property
    def best_row(self) -> PlanRow | None:
        if self.best is None:
            return None
        return next(r for r in self.rows if (r.P, r.v) == self.best)


def plan(query: PlanQuery) -> PlanTable:
    """Evaluate every (P, v) in the query ranges and pick the optimum.

    The best row minimises the objective over candidate rows (feasible ones
    when the memory filter is on). Rows within ``tie_rtol`` of the minimum
    are ties, resolved towards fewer pGPUs and then fewer vGPUs.
    """
    rows = []
    for P in range(query.p_range[0], query.p_range[1] + 1):
        for v in range(query.v_range[0], query.v_range[1] + 1):
            pr = predict(P, v, query.params, query.sizes)
            rows.append(
                PlanRow(P, v, pr.total_time, pr.energy, pr.total_time * pr.energy, pr.regime, pr.feasible)
            )
    candidates = [r for r in rows if r.feasible or not query.apply_memory_filter]
    best = None
    if candidates:
        lowest = min(r.objective(query.objective) for r in candidates)
        ties = [r for r in candidates if r.objective(query.objective) <= lowest * (1 + query.tie_rtol)]
        pick = min(ties, key=lambda r: (r.P, r.v))
        best = (pick.P, pick.v)
    return PlanTable(tuple(rows), query.objective, best)


def require_best(table: PlanTable) -> PlanRow:
    if table.best is None:
        raise NoFeasibleConfiguration("no feasible configuration in the requested grid")
    return table.best_row


def export_plan(table: PlanTable, fmt: str) -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in table.rows:
            w.writerow([r.P, r.v, repr(r.total_time), repr(r.energy), repr(r.product), r.regime, str(r.feasible).lower()])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {
            "objective": table.objective,
            "best": None if table.best is None else {"P": table.best[0], "v": table.best[1]},
            "rows": [
                {
                    "P": r.P,
                    "v": r.v,
                    "total_time_s": r.total_time,
                    "energy_ws": r.energy,
                    "product": r.product,
                    "regime": r.regime,
                    "feasible": r.feasible,
                }
                for r in table.rows
            ],
        }
        return json.dumps(doc, indent=2).encode()
    raise ValueError(f"unknown export format {fmt!r}; expected csv or json")


def read_plan_csv(data: bytes) -> list[dict]:
    reader = csv.DictReader(io.StringIO(data.decode()))
    out = []
    for row in reader:
        out.append(
            {
                "P": int(row["P"]),
                "v": int(row["v"]),
                "total_time_s": float(row["total_time_s"]),
                "energy_ws": float(row["energy_ws"]),
                "product": float(row["product"]),
                "regime": row["regime"],
                "feasible": row["feasible"] == "true",
            }
        )
    return out
