"""Discrete-event simulation of a host feeding virtual GPUs over one link.

Every vGPU receives one payload (its share of the split data plus a full
copy of the replicated data), preceded by a setup latency (allocation and
tiny structures). Kernels become ready when their payload lands and run
FIFO, one at a time, on the pGPU hosting the vGPU; transfers never wait for
kernels. Link rates are piecewise constant and integrated exactly between
events, so the 35 ms cell grid is presentation only.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import GIB, ModelParams, PowerProfile

TRANSFER, COMPUTE, IDLE = "transfer", "compute", "idle"
GLYPHS = {TRANSFER: "T", COMPUTE: "C", IDLE: "·"}
MODES = ("concurrent", "sequential")

# relative slack when deciding that several transfers finish at the same instant
_SIMULTANEOUS = 1e-12


@dataclass(frozen=True)
class LinkModel:
    """Piecewise-constant bandwidth by payload size, plus a contention rule.

    ``bands`` is a sorted sequence of ``(min_payload_bytes, bytes_per_s)``;
    the first band must start at 0. With ``contention="shared"`` the profile
    describes one link split equally among the ``n`` active transfers. With
    ``"independent"`` every transfer has its own path at profile bandwidth and
    only ``aggregate_cap`` (e.g. a memory controller) is shared.
    """

    bands: tuple[tuple[float, float], ...] = ((0.0, 6.0e9),)
    contention: str = "shared"
    aggregate_cap: float | None = None

    def __post_init__(self):
        bands = tuple((float(lo), float(bw)) for lo, bw in self.bands)
        if not bands or bands[0][0] != 0.0:
            raise ValueError("bandwidth profile must start at payload size 0")
        if any(b[0] >= a[0] for a, b in zip(bands[1:], bands)):
            raise ValueError("bandwidth bands must be strictly increasing in size")
        if any(not bw > 0 for _, bw in bands):
            raise ValueError("bandwidths must be > 0")
        if self.contention not in ("shared", "independent"):
            raise ValueError(f"unknown contention rule {self.contention!r}")
        if self.aggregate_cap is not None and not self.aggregate_cap > 0:
            raise ValueError("aggregate_cap must be > 0")
        object.__setattr__(self, "bands", bands)

    @classmethod
    def constant(cls, bandwidth: float, **kw) -> "LinkModel":
        return cls(((0.0, bandwidth),), **kw)

    def profile(self, payload: float) -> float:
        i = bisect.bisect_right([lo for lo, _ in self.bands], payload) - 1
        return self.bands[i][1]

    def rate(self, payload: float, n_active: int) -> float:
        """Bandwidth of one transfer while ``n_active`` transfers are in flight."""
        bw = self.profile(payload)
        if self.contention == "shared":
            bw = bw / n_active
        if self.aggregate_cap is not None:
            bw = min(bw, self.aggregate_cap / n_active)
        return bw

    def to_dict(self) -> dict:
        return {"bands": [list(b) for b in self.bands], "contention": self.contention, "aggregate_cap": self.aggregate_cap}


@dataclass(frozen=True)
class SimScenario:
    n_pgpus: int
    vgpus_per_pgpu: int
    link: LinkModel
    compute_time_one_device: float
    split_bytes: float = 0.0
    replicated_bytes: float = 0.0
    setup_latency_per_vgpu: float = 0.0
    transfer_mode: str = "sequential"
    power: PowerProfile = field(default_factory=PowerProfile)
    cell_seconds: float = 0.035

    def __post_init__(self):
        if self.n_pgpus < 1 or self.vgpus_per_pgpu < 1:
            raise ValueError("n_pgpus and vgpus_per_pgpu must be >= 1")
        if self.split_bytes < 0 or self.replicated_bytes < 0 or self.setup_latency_per_vgpu < 0:
            raise ValueError("byte sizes and setup latency must be >= 0")
        if not self.compute_time_one_device > 0:
            raise ValueError("compute_time_one_device must be > 0")
        if not self.cell_seconds > 0:
            raise ValueError("cell_seconds must be > 0")
        if self.transfer_mode not in MODES:
            raise ValueError(f"transfer_mode must be one of {MODES}")

    @property
    def n_vgpus(self) -> int:
        return self.n_pgpus * self.vgpus_per_pgpu

    @property
    def payload_bytes(self) -> float:
        return self.split_bytes / self.n_vgpus + self.replicated_bytes

    @property
    def kernel_seconds(self) -> float:
        return self.compute_time_one_device / self.n_vgpus

    def to_dict(self) -> dict:
        return {
            "n_pgpus": self.n_pgpus,
            "vgpus_per_pgpu": self.vgpus_per_pgpu,
            "link": self.link.to_dict(),
            "compute_time_one_device": self.compute_time_one_device,
            "split_bytes": self.split_bytes,
            "replicated_bytes": self.replicated_bytes,
            "setup_latency_per_vgpu": self.setup_latency_per_vgpu,
            "transfer_mode": self.transfer_mode,
            "power": {
                "idle_or_receiving_watts": self.power.idle_or_receiving_watts,
                "computing_watts": self.power.computing_watts,
            },
            "cell_seconds": self.cell_seconds,
        }

    @classmethod
    def from_dict(cls, d) -> "SimScenario":
        d = dict(d)
        link = d.pop("link", {})
        power = d.pop("power", {})
        return cls(
            link=LinkModel(
                tuple(tuple(b) for b in link.get("bands", ((0.0, 6.0e9),))),
                link.get("contention", "shared"),
                link.get("aggregate_cap"),
            ),
            power=PowerProfile(**power),
            **d,
        )


@dataclass(frozen=True)
class Interval:
    entity: str
    activity: str
    start: float
    end: float


@dataclass(frozen=True)
class TransferRecord:
    vgpu: str
    pgpu: int
    nbytes: float
    start: float  # setup begins
    data_start: float
    end: float
    segments: tuple[tuple[float, float, float], ...]  # (t0, t1, bytes/s)

    @property
    def moved_bytes(self) -> float:
        return math.fsum(r * (t1 - t0) for t0, t1, r in self.segments)

    @property
    def average_bandwidth(self) -> float:
        dt = self.end - self.data_start
        return self.nbytes / dt if dt > 0 else math.inf


@dataclass(frozen=True)
class Timeline:
    intervals: tuple[Interval, ...]
    makespan: float
    per_pgpu_busy_compute: tuple[float, ...]
    energy: float
    utilization: tuple[float, ...]
    transfers: tuple[TransferRecord, ...] = ()

    @property
    def utilization_avg(self) -> float:
        return sum(self.utilization) / len(self.utilization) if self.utilization else 0.0

    @classmethod
    def from_intervals(cls, intervals: Iterable[Interval], power: PowerProfile = PowerProfile(), transfers=()):
        """Derive makespan, busy time, energy and utilisation from raw intervals.

        pGPU entities are those named ``pgpu<k>``; their ``compute`` intervals
        define the powered-up state.
        """
        intervals = tuple(intervals)
        makespan = max((iv.end for iv in intervals), default=0.0)
        pgpus = sorted({iv.entity for iv in intervals if iv.entity.startswith("pgpu")}, key=_entity_key)
        busy = tuple(
            math.fsum(iv.end - iv.start for iv in intervals if iv.entity == p and iv.activity == COMPUTE) for p in pgpus
        )
        energy = math.fsum(
            b * power.computing_watts + (makespan - b) * power.idle_or_receiving_watts for b in busy
        )
        util = tuple(b / makespan if makespan > 0 else 0.0 for b in busy)
        return cls(intervals, makespan, busy, energy, util, tuple(transfers))

    def entities(self) -> list[str]:
        return sorted({iv.entity for iv in self.intervals}, key=_entity_key)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["entity", "activity", "start_s", "end_s"])
        for iv in self.intervals:
            w.writerow([iv.entity, iv.activity, repr(iv.start), repr(iv.end)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "makespan_s": self.makespan,
            "energy_ws": self.energy,
            "utilization_avg": self.utilization_avg,
            "pgpus": [
                {"pgpu": i + 1, "busy_compute_s": b, "utilization": u}
                for i, (b, u) in enumerate(zip(self.per_pgpu_busy_compute, self.utilization))
            ],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def _entity_key(name: str):
    order = {"link": 0, "pgpu": 1, "vgpu": 1}
    if name == "link":
        return (0, ())
    kind = "pgpu" if name.startswith("pgpu") else "vgpu"
    nums = tuple(int(x) for x in name[4:].split("."))
    return (order[kind], nums[:1], 0 if kind == "pgpu" else 1, nums[1:])


# -- link sharing --------------------------------------------------------------


def share_link(sizes: Sequence[float], starts: Sequence[float], link: LinkModel):
    """Run transfers that may overlap on ``link`` under its contention rule.

    Returns one ``(end_time, segments)`` per transfer, where segments are
    ``(t0, t1, rate)`` pieces of constant rate. Rates are re-evaluated at
    every arrival and completion.
    """
    n = len(sizes)
    ends = [0.0] * n
    segs: list[list[tuple[float, float, float]]] = [[] for _ in range(n)]
    pending = sorted(range(n), key=lambda i: (starts[i], i))
    remaining = [float(s) for s in sizes]
    active: list[int] = []
    t = starts[pending[0]] if pending else 0.0
    p = 0
    while p < len(pending) or active:
        while p < len(pending) and starts[pending[p]] <= t:
            i = pending[p]
            p += 1
            if remaining[i] <= 0.0:
                ends[i] = starts[i]
            else:
                active.append(i)
        if not active:
            t = starts[pending[p]]
            continue
        rates = {i: link.rate(sizes[i], len(active)) for i in active}
        finish = {i: remaining[i] / rates[i] for i in active}
        dt = min(finish.values())
        next_arrival = starts[pending[p]] if p < len(pending) else math.inf
        if t + dt > next_arrival:
            dt = next_arrival - t
            done = []
        else:
            done = [i for i in active if finish[i] <= dt * (1 + _SIMULTANEOUS)]
        t1 = t + dt
        for i in active:
            if dt > 0:
                segs[i].append((t, t1, rates[i]))
            if i in done:
                remaining[i] = 0.0
                ends[i] = t1
            else:
                remaining[i] -= rates[i] * dt
        active = [i for i in active if i not in done]
        t = t1
    return [(ends[i], tuple(segs[i])) for i in range(n)]


def transfer_bandwidths(sizes: Sequence[float], link: LinkModel, start: float = 0.0) -> list[float]:
    """Average bandwidth each transfer attains when all start together."""
    out = share_link(sizes, [start] * len(sizes), link)
    return [s / (end - start) if end > start else math.inf for s, (end, _) in zip(sizes, out)]


# -- simulation ----------------------------------------------------------------


def _vgpu_name(p: int, k: int) -> str:
    return f"vgpu{p + 1}.{k + 1}"


def wave_order(P: int, v: int) -> list[tuple[int, int]]:
    """Sequential transfer order: tenant 1 of every pGPU, then tenant 2, ..."""
    return [(p, k) for k in range(v) for p in range(P)]


def _transfers(scn: SimScenario) -> dict[tuple[int, int], TransferRecord]:
    P, v = scn.n_pgpus, scn.vgpus_per_pgpu
    size = scn.payload_bytes
    setup = scn.setup_latency_per_vgpu
    out = {}
    if scn.transfer_mode == "sequential":
        t = 0.0
        for p, k in wave_order(P, v):
            data_start = t + setup
            if size > 0:
                rate = scn.link.rate(size, 1)
                end = data_start + size / rate
                segs = ((data_start, end, rate),)
            else:
                end, segs = data_start, ()
            out[(p, k)] = TransferRecord(_vgpu_name(p, k), p + 1, size, t, data_start, end, segs)
            t = end
    else:
        order = wave_order(P, v)
        shared = share_link([size] * len(order), [setup] * len(order), scn.link)
        for (p, k), (end, segs) in zip(order, shared):
            out[(p, k)] = TransferRecord(_vgpu_name(p, k), p + 1, size, 0.0, setup, end, segs)
    return out


def _union(spans):
    merged = []
    for s, e in sorted(spans):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return merged


def simulate(scn: SimScenario) -> Timeline:
    """Simulate one deployment; deterministic for a given scenario."""
    P, v = scn.n_pgpus, scn.vgpus_per_pgpu
    transfers = _transfers(scn)
    kernel = scn.kernel_seconds
    intervals: list[Interval] = []

    for s, e in _union((tr.start, tr.end) for tr in transfers.values() if tr.end > tr.start):
        intervals.append(Interval("link", TRANSFER, s, e))

    for p in range(P):
        ready = sorted(((transfers[(p, k)].end, k) for k in range(v)))
        free = 0.0
        pgpu = f"pgpu{p + 1}"
        for t_ready, k in ready:
            tr = transfers[(p, k)]
            if tr.end > tr.start:
                intervals.append(Interval(tr.vgpu, TRANSFER, tr.start, tr.end))
            start = max(free, t_ready)
            if start > free:
                intervals.append(Interval(pgpu, IDLE, free, start))
            free = start + kernel
            intervals.append(Interval(tr.vgpu, COMPUTE, start, free))
            intervals.append(Interval(pgpu, COMPUTE, start, free))

    tl = Timeline.from_intervals(intervals, scn.power, transfers=[transfers[pk] for pk in wave_order(P, v)])
    # trailing idle until the last pGPU finishes
    tail = []
    for p in range(P):
        pgpu = f"pgpu{p + 1}"
        last = max(iv.end for iv in intervals if iv.entity == pgpu)
        if last < tl.makespan:
            tail.append(Interval(pgpu, IDLE, last, tl.makespan))
    if tail:
        tl = Timeline(tl.intervals + tuple(tail), tl.makespan, tl.per_pgpu_busy_compute, tl.energy, tl.utilization, tl.transfers)
    return tl


def attained_bandwidth_report(scn: SimScenario) -> list[dict]:
    """Per-transfer average bandwidth (payload over data-moving time)."""
    rows = []
    for tr in _transfers(scn).values():
        rows.append(
            {
                "vgpu": tr.vgpu,
                "bytes": tr.nbytes,
                "data_start_s": tr.data_start,
                "end_s": tr.end,
                "avg_bandwidth": tr.average_bandwidth,
            }
        )
    rows.sort(key=lambda r: _entity_key(r["vgpu"]))
    return rows


# -- rendering -------------------------------------------------------------------


def n_cells(makespan: float, cell_seconds: float) -> int:
    # guard against 5 * 0.035 / 0.035 == 5.000000000000001
    return max(0, math.ceil(makespan / cell_seconds - 1e-9))


def cell_rows(timeline: Timeline, cell_seconds: float) -> dict[str, str]:
    """Glyph string per entity: the activity covering most of each cell."""
    if not cell_seconds > 0:
        raise ValueError("cell_seconds must be > 0")
    cols = n_cells(timeline.makespan, cell_seconds)
    by_entity: dict[str, list[Interval]] = {}
    for iv in timeline.intervals:
        by_entity.setdefault(iv.entity, []).append(iv)
    rows = {}
    for ent in timeline.entities():
        ivs = by_entity[ent]
        glyphs = []
        for c in range(cols):
            a, b = c * cell_seconds, (c + 1) * cell_seconds
            cover = {TRANSFER: 0.0, COMPUTE: 0.0, IDLE: 0.0}
            for iv in ivs:
                ov = min(iv.end, b) - max(iv.start, a)
                if ov > 0:
                    cover[iv.activity] += ov
            cover[IDLE] += max(0.0, (b - a) - cover[TRANSFER] - cover[COMPUTE] - cover[IDLE])
            best = max((TRANSFER, COMPUTE, IDLE), key=lambda act: cover[act])
            glyphs.append(GLYPHS[best])
        rows[ent] = "".join(glyphs)
    return rows


def render_cells(timeline: Timeline, cell_seconds: float) -> str:
    """Plain-text life-cycle grid, one labelled row per entity."""
    rows = cell_rows(timeline, cell_seconds)
    if not rows:
        return ""
    width = max(len(e) for e in rows)
    return "\n".join(f"{e:<{width}} {g}" for e, g in rows.items()) + "\n"


# -- scenario builders -------------------------------------------------------------


def calibrated_scenario(
    params: ModelParams,
    P: int,
    v: int,
    mode: str = "sequential",
    cell_seconds: float = 0.035,
    split_bytes: float = 4 * GIB,
) -> SimScenario:
    """Scenario whose transfer costs reproduce the calibration constants.

    Bandwidth is set so the split data takes ``t_transfer_4gb`` in total;
    the replicated data is sized to cost ``t_transfer_4mb + t_transfer_120mb``
    per vGPU at that bandwidth; allocation and tiny copies become setup.
    """
    bw = split_bytes / params.t_transfer_4gb
    return SimScenario(
        n_pgpus=P,
        vgpus_per_pgpu=v,
        link=LinkModel.constant(bw),
        compute_time_one_device=params.computation_time_1pgpu,
        split_bytes=split_bytes,
        replicated_bytes=bw * (params.t_transfer_4mb + params.t_transfer_120mb),
        setup_latency_per_vgpu=params.t_cudamalloc + params.t_small_transfers,
        transfer_mode=mode,
        power=params.power,
        cell_seconds=cell_seconds,
    )


def idealized_scenario(params: ModelParams, P: int, v: int, mode: str = "sequential", split_bytes: float = 4 * GIB):
    """Constant bandwidth, zero setup: every per-vGPU cost folded into bytes."""
    bw = split_bytes / params.t_transfer_4gb
    return SimScenario(
        n_pgpus=P,
        vgpus_per_pgpu=v,
        link=LinkModel.constant(bw),
        compute_time_one_device=params.computation_time_1pgpu,
        split_bytes=split_bytes,
        replicated_bytes=bw * params.per_vgpu_transfer_overhead,
        setup_latency_per_vgpu=0.0,
        transfer_mode=mode,
        power=params.power,
    )
