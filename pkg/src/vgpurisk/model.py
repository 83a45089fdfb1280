"""Closed-form execution time and energy of multi-tenant deployments.

``P`` physical GPUs each host ``v`` virtual GPUs, ``V = P * v`` in total.
Transfers are sequential; the last-wave transfers of a pGPU can overlap with
the kernels of earlier tenants on the same pGPU.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .datagen import load_preset

MB = 1_000_000
MIB = 1 << 20
GIB = 1 << 30


@dataclass(frozen=True)
class PowerProfile:
    """Two-level pGPU power: receiving/idle vs computing."""

    idle_or_receiving_watts: float = 47.0
    computing_watts: float = 102.0

    def __post_init__(self):
        if not 0 < self.idle_or_receiving_watts <= self.computing_watts:
            raise ValueError("need 0 < idle_or_receiving_watts <= computing_watts")


# published calibration names, as used in parameter JSON documents
_TABLE_KEYS = {
    "ComputationTime_1pGPU": "computation_time_1pgpu",
    "T_cudaMalloc": "t_cudamalloc",
    "T_small_transfers": "t_small_transfers",
    "T_transfer_4MB": "t_transfer_4mb",
    "T_transfer_120MB": "t_transfer_120mb",
    "T_transfer_4GB": "t_transfer_4gb",
}


@dataclass(frozen=True)
class ModelParams:
    computation_time_1pgpu: float
    t_cudamalloc: float
    t_small_transfers: float
    t_transfer_4mb: float
    t_transfer_120mb: float
    t_transfer_4gb: float
    device_memory_mb: float = 4799.0
    app_memory_at_4vgpus_mb: float = 4484.0
    power: PowerProfile = field(default_factory=PowerProfile)
    name: str = "custom"

    def __post_init__(self):
        for key in _TABLE_KEYS.values():
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be > 0")
        if self.device_memory_mb <= 0 or self.app_memory_at_4vgpus_mb <= 0:
            raise ValueError("memory sizes must be > 0")

    @property
    def per_vgpu_transfer_overhead(self) -> float:
        """Allocation, small structures, 4 MB and 120 MB copies: paid once per vGPU."""
        return self.t_cudamalloc + self.t_small_transfers + self.t_transfer_4mb + self.t_transfer_120mb

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base: "ModelParams | None" = None) -> "ModelParams":
        """Build from a document keyed by calibration names (or field names).

        Keys absent from ``d`` are taken from ``base``.
        """
        kw = {}
        for k, v in d.items():
            if k in _TABLE_KEYS:
                kw[_TABLE_KEYS[k]] = float(v)
            elif k in ("device_memory_mb", "app_memory_at_4vgpus_mb"):
                kw[k] = float(v)
            elif k in ("idle_or_receiving_watts", "computing_watts"):
                kw.setdefault("_power", {})[k] = float(v)
            elif k == "name":
                kw["name"] = str(v)
            elif k in _TABLE_KEYS.values():
                kw[k] = float(v)
            else:
                raise ValueError(f"unknown model parameter {k!r}")
        power = kw.pop("_power", None)
        if base is not None:
            if power is not None:
                kw["power"] = replace(base.power, **power)
            return replace(base, **kw)
        if power is not None:
            kw["power"] = PowerProfile(**power)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        for table_key, attr in _TABLE_KEYS.items():
            d[table_key] = getattr(self, attr)
        d["device_memory_mb"] = self.device_memory_mb
        d["app_memory_at_4vgpus_mb"] = self.app_memory_at_4vgpus_mb
        d.update(asdict(self.power))
        return d


def preset(name: str) -> ModelParams:
    """``QDR`` or ``FDR`` interconnect parameters."""
    if name.lower() not in ("qdr", "fdr"):
        raise ValueError(f"unknown model preset {name!r}; expected QDR or FDR")
    return ModelParams.from_dict(load_preset(name))


def load_params(path, base: ModelParams | None = None) -> ModelParams:
    return ModelParams.from_dict(json.loads(Path(path).read_text()), base)


def _check_gpus(n, what="n_gpus"):
    if n < 1 or int(n) != n:
        raise ValueError(f"{what} must be a positive integer, got {n}")


def t_computation(n_gpus: int, params: ModelParams) -> float:
    _check_gpus(n_gpus)
    return params.computation_time_1pgpu / n_gpus


def t_transfer(n_gpus: int, params: ModelParams) -> float:
    _check_gpus(n_gpus)
    return n_gpus * params.per_vgpu_transfer_overhead + params.t_transfer_4gb


@dataclass(frozen=True)
class Prediction:
    n_pgpus: int
    vgpus_per_pgpu: int
    t_transfer: float
    t_computation: float
    fully_overlapped: float
    not_fully_overlapped: float
    total_time: float
    regime: str
    energy: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "P": self.n_pgpus,
            "v": self.vgpus_per_pgpu,
            "t_transfer_s": self.t_transfer,
            "t_computation_s": self.t_computation,
            "fully_overlapped_s": self.fully_overlapped,
            "not_fully_overlapped_s": self.not_fully_overlapped,
            "total_time_s": self.total_time,
            "regime": self.regime,
            "energy_ws": self.energy,
            "feasible": self.feasible,
        }


def overlap_times(P: int, v: int, params: ModelParams) -> tuple[float, float]:
    """(fully overlapped, not fully overlapped) execution time estimates."""
    _check_gpus(P, "P")
    _check_gpus(v, "v")
    V = P * v
    tt, tc = t_transfer(V, params), t_computation(V, params)
    return tt / v + v * tc, tt + tc


def exec_time_multitenancy(P: int, v: int, params: ModelParams) -> float:
    fully, not_fully = overlap_times(P, v, params)
    return max(fully, not_fully)


def energy(P: int, v: int, params: ModelParams, total_time: float | None = None) -> float:
    """Watt-seconds over all pGPUs: compute at full power, the rest at idle power."""
    total = exec_time_multitenancy(P, v, params) if total_time is None else total_time
    busy = t_computation(P, params)
    if total < busy * (1 - 1e-12):
        raise ArithmeticError(f"execution time {total} shorter than per-pGPU compute time {busy}")
    pw = params.power
    return P * (busy * pw.computing_watts + (total - busy) * pw.idle_or_receiving_watts)


@dataclass(frozen=True)
class BundleSizes:
    split_bytes: float
    replicated_bytes: float

    def __post_init__(self):
        if self.split_bytes < 0 or self.replicated_bytes < 0:
            raise ValueError("sizes must be >= 0")


# YET 4 GiB split across vGPUs; ELTs (120 MB) and portfolio (4 MB) replicated
REFERENCE_SIZES = BundleSizes(split_bytes=4 * GIB, replicated_bytes=124 * MB)


def vgpu_footprint_mb(params: ModelParams, sizes: BundleSizes) -> float:
    """Device memory one vGPU context holds, in MB.

    Linear through the origin, calibrated on the single published footprint
    (1 pGPU, 4 vGPUs, reference-sized data) and scaled by the per-vGPU payload at
    that calibration point. The context footprint is treated as fixed once
    allocated, so adding tenants grows the pGPU footprint linearly.
    """
    ref = REFERENCE_SIZES.split_bytes / 4 + REFERENCE_SIZES.replicated_bytes
    payload = sizes.split_bytes / 4 + sizes.replicated_bytes
    return params.app_memory_at_4vgpus_mb / 4 * (payload / ref)


def pgpu_footprint_mb(P: int, v: int, params: ModelParams, sizes: BundleSizes = REFERENCE_SIZES) -> float:
    _check_gpus(P, "P")
    _check_gpus(v, "v")
    return v * vgpu_footprint_mb(params, sizes)


def memory_feasible(P: int, v: int, params: ModelParams, sizes: BundleSizes = REFERENCE_SIZES) -> bool:
    return pgpu_footprint_mb(P, v, params, sizes) <= params.device_memory_mb


def predict(P: int, v: int, params: ModelParams, sizes: BundleSizes = REFERENCE_SIZES) -> Prediction:
    V = P * v
    fully, not_fully = overlap_times(P, v, params)
    total = max(fully, not_fully)
    return Prediction(
        n_pgpus=P,
        vgpus_per_pgpu=v,
        t_transfer=t_transfer(V, params),
        t_computation=t_computation(V, params),
        fully_overlapped=fully,
        not_fully_overlapped=not_fully,
        total_time=total,
        regime="fully_overlapped" if fully >= not_fully else "not_fully_overlapped",
        energy=energy(P, v, params, total),
        feasible=memory_feasible(P, v, params, sizes),
    )
