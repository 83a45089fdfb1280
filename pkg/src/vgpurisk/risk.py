"""Domain types and the per-trial loss computation for aggregate risk analysis.

A Year Event Table (YET) holds pre-simulated trials, each an ordered sequence
of (event id, timestamp) pairs. Event Loss Tables (ELTs) map event ids to
losses. A layer covers a set of ELTs under occurrence and aggregate terms.

The YET is stored column-wise (CSR offsets + flat arrays) because desk-scale
tables hold ~10^8 events; :class:`Trial` and :class:`EventOccurrence` are
views used by the scalar reference path and by small hand-built cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

INF = math.inf


class StructureError(ValueError):
    """Raised when a dataset is internally inconsistent (bad refs, bad keys)."""


@dataclass(frozen=True)
class EventOccurrence:
    event_id: int
    timestamp: float

    def __post_init__(self):
        if self.event_id < 1:
            raise ValueError(f"event_id must be >= 1, got {self.event_id}")
        if not self.timestamp >= 0.0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass(frozen=True)
class Trial:
    trial_id: int
    events: tuple[EventOccurrence, ...] = ()

    def __post_init__(self):
        if self.trial_id < 1:
            raise ValueError(f"trial_id must be >= 1, got {self.trial_id}")
        object.__setattr__(self, "events", tuple(self.events))
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"trial {self.trial_id}: events not sorted by timestamp")

    @classmethod
    def from_pairs(cls, trial_id: int, pairs: Iterable[tuple[int, float]]) -> "Trial":
        return cls(trial_id, tuple(EventOccurrence(int(e), float(t)) for e, t in pairs))


@dataclass(frozen=True, eq=False)
class YearEventTable:
    """Trials in CSR layout; trial ``i`` (1-based id ``i + 1``) owns
    ``event_ids[offsets[i]:offsets[i + 1]]``."""

    offsets: np.ndarray  # int64, len n_trials + 1
    event_ids: np.ndarray  # uint32
    timestamps: np.ndarray  # float32, fractional year

    def __post_init__(self):
        off = np.ascontiguousarray(self.offsets, dtype=np.int64)
        ids = np.ascontiguousarray(self.event_ids, dtype=np.uint32)
        ts = np.ascontiguousarray(self.timestamps, dtype=np.float32)
        if off.ndim != 1 or off.size < 1 or off[0] != 0:
            raise StructureError("offsets must be 1-D and start at 0")
        if np.any(np.diff(off) < 0):
            raise StructureError("offsets must be non-decreasing")
        if off[-1] != ids.size or ids.size != ts.size:
            raise StructureError("offsets/event_ids/timestamps sizes disagree")
        if ids.size and ids.min() < 1:
            raise StructureError("event ids must be >= 1")
        for arr in (off, ids, ts):
            arr.flags.writeable = False
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "event_ids", ids)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_trials(self) -> int:
        return self.offsets.size - 1

    @property
    def n_events(self) -> int:
        return int(self.event_ids.size)

    @property
    def max_event_id(self) -> int:
        return int(self.event_ids.max()) if self.event_ids.size else 0

    def trial(self, trial_id: int) -> Trial:
        i = trial_id - 1
        if not 0 <= i < self.n_trials:
            raise IndexError(f"trial_id {trial_id} out of range")
        a, b = self.offsets[i], self.offsets[i + 1]
        return Trial.from_pairs(trial_id, zip(self.event_ids[a:b].tolist(), self.timestamps[a:b].tolist()))

    def trials(self) -> Iterator[Trial]:
        for tid in range(1, self.n_trials + 1):
            yield self.trial(tid)

    @classmethod
    def from_trials(cls, trials: Sequence[Trial]) -> "YearEventTable":
        ids = [t.trial_id for t in trials]
        if ids != list(range(1, len(trials) + 1)):
            raise StructureError("trial ids must be unique and contiguous from 1")
        counts = [len(t.events) for t in trials]
        offsets = np.zeros(len(trials) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        ev = [e for t in trials for e in t.events]
        return cls(
            offsets,
            np.array([e.event_id for e in ev], dtype=np.uint32),
            np.array([e.timestamp for e in ev], dtype=np.float32),
        )

    def __eq__(self, other):
        if not isinstance(other, YearEventTable):
            return NotImplemented
        return (
            np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.event_ids, other.event_ids)
            and self.timestamps.tobytes() == other.timestamps.tobytes()
        )


def _check_terms(retention: float, limit: float, what: str):
    if not retention >= 0.0:
        raise ValueError(f"{what} retention must be >= 0, got {retention}")
    if not limit > 0.0:
        raise ValueError(f"{what} limit must be > 0, got {limit}")


@dataclass(frozen=True)
class PerEltTerms:
    """Retention/limit applied to each loss looked up from one ELT.

    Defaults are the identity (no retention, unlimited).
    """

    occ_retention: float = 0.0
    occ_limit: float = INF

    def __post_init__(self):
        _check_terms(self.occ_retention, self.occ_limit, "per-ELT")


@dataclass(frozen=True)
class LayerTerms:
    occ_retention: float = 0.0
    occ_limit: float = INF
    agg_retention: float = 0.0
    agg_limit: float = INF

    def __post_init__(self):
        _check_terms(self.occ_retention, self.occ_limit, "occurrence")
        _check_terms(self.agg_retention, self.agg_limit, "aggregate")


@dataclass(frozen=True, eq=False)
class EventLossTable:
    """Sparse event -> loss map, kept as parallel arrays sorted by event id."""

    elt_id: int
    event_ids: np.ndarray
    losses: np.ndarray
    terms: PerEltTerms = field(default_factory=PerEltTerms)

    def __post_init__(self):
        if self.elt_id < 1:
            raise ValueError(f"elt_id must be >= 1, got {self.elt_id}")
        ids = np.asarray(self.event_ids, dtype=np.uint32)
        losses = np.asarray(self.losses, dtype=np.float64)
        if ids.shape != losses.shape or ids.ndim != 1:
            raise StructureError(f"ELT {self.elt_id}: event_ids/losses shape mismatch")
        order = np.argsort(ids, kind="stable")
        ids, losses = ids[order], losses[order]
        if ids.size and (ids[0] < 1 or np.any(ids[1:] == ids[:-1])):
            raise StructureError(f"ELT {self.elt_id}: event ids must be unique and >= 1")
        if np.any(~(losses >= 0.0)):
            raise StructureError(f"ELT {self.elt_id}: losses must be non-negative")
        ids.flags.writeable = False
        losses.flags.writeable = False
        object.__setattr__(self, "event_ids", ids)
        object.__setattr__(self, "losses", losses)

    @classmethod
    def from_mapping(cls, elt_id: int, losses: Mapping[int, float], terms: PerEltTerms | None = None):
        keys = sorted(losses)
        return cls(
            elt_id,
            np.array(keys, dtype=np.uint32),
            np.array([losses[k] for k in keys], dtype=np.float64),
            terms or PerEltTerms(),
        )

    def __len__(self):
        return int(self.event_ids.size)

    @property
    def max_event_id(self) -> int:
        return int(self.event_ids[-1]) if self.event_ids.size else 0

    def lookup(self, event_id: int) -> float:
        """Raw loss for ``event_id``; events absent from the table lose nothing."""
        i = int(np.searchsorted(self.event_ids, event_id))
        if i < self.event_ids.size and self.event_ids[i] == event_id:
            return float(self.losses[i])
        return 0.0

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.event_ids.tolist(), self.losses.tolist()))

    def __eq__(self, other):
        if not isinstance(other, EventLossTable):
            return NotImplemented
        return (
            self.elt_id == other.elt_id
            and self.terms == other.terms
            and np.array_equal(self.event_ids, other.event_ids)
            and self.losses.tobytes() == other.losses.tobytes()
        )


@dataclass(frozen=True)
class Layer:
    elt_refs: tuple[int, ...]
    terms: LayerTerms = field(default_factory=LayerTerms)

    def __post_init__(self):
        object.__setattr__(self, "elt_refs", tuple(int(r) for r in self.elt_refs))
        if not self.elt_refs:
            raise StructureError("a layer must cover at least one ELT")


Program = tuple[Layer, ...]


@dataclass(frozen=True)
class Portfolio:
    programs: tuple[Program, ...]

    def __post_init__(self):
        progs = tuple(tuple(p) for p in self.programs)
        if not progs or any(len(p) == 0 for p in progs):
            raise StructureError("portfolio needs at least one program, each with at least one layer")
        object.__setattr__(self, "programs", progs)

    def layers(self) -> Iterator[Layer]:
        """All layers in canonical (program, layer) order."""
        for program in self.programs:
            yield from program


@dataclass(frozen=True, eq=False)
class YearLossTable:
    """One net loss per trial, keyed by 1-based trial id."""

    trial_ids: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.trial_ids, dtype=np.int64)
        losses = np.asarray(self.losses, dtype=np.float64)
        if ids.shape != losses.shape:
            raise StructureError("trial_ids/losses shape mismatch")
        object.__setattr__(self, "trial_ids", ids)
        object.__setattr__(self, "losses", losses)

    def __len__(self):
        return int(self.losses.size)

    def __eq__(self, other):
        if not isinstance(other, YearLossTable):
            return NotImplemented
        return np.array_equal(self.trial_ids, other.trial_ids) and self.losses.tobytes() == other.losses.tobytes()


# -- financial terms ---------------------------------------------------------


def apply_occurrence_terms(loss: float, terms: LayerTerms) -> float:
    """Net a single event loss of the layer's occurrence retention and limit."""
    return min(max(loss - terms.occ_retention, 0.0), terms.occ_limit)


def apply_aggregate_terms(loss: float, terms: LayerTerms) -> float:
    """Net a trial's cumulative loss of the layer's aggregate retention and limit."""
    return min(max(loss - terms.agg_retention, 0.0), terms.agg_limit)


def apply_elt_terms(loss: float, terms: PerEltTerms) -> float:
    return min(max(loss - terms.occ_retention, 0.0), terms.occ_limit)


def resolve_layer(layer: Layer, elts: Mapping[int, EventLossTable] | Sequence[EventLossTable]):
    """Return the ELTs a layer covers, in ``elt_refs`` order.

    Raises:
        StructureError: if any reference does not resolve.
    """
    if not isinstance(elts, Mapping):
        elts = {e.elt_id: e for e in elts}
    missing = [r for r in layer.elt_refs if r not in elts]
    if missing:
        raise StructureError(f"layer references unknown ELT ids {missing}")
    return [elts[r] for r in layer.elt_refs]


def trial_loss(trial: Trial, layer: Layer, elts) -> float:
    """Scalar reference implementation of the per-trial loss for one layer.

    For each event the per-ELT-adjusted losses are summed in ``elt_refs``
    order, occurrence terms are applied, the results are summed in event
    order, and aggregate terms are applied to the total. The vectorised
    kernels reproduce this accumulation order exactly.
    """
    resolved = resolve_layer(layer, elts)
    maps = [(elt.as_dict(), elt.terms) for elt in resolved]
    terms = layer.terms
    total = 0.0
    for occ in trial.events:
        event_loss = 0.0
        for losses, elt_terms in maps:
            event_loss += apply_elt_terms(losses.get(occ.event_id, 0.0), elt_terms)
        total += apply_occurrence_terms(event_loss, terms)
    return apply_aggregate_terms(total, terms)


# -- dense lookup ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirectAccessTable:
    """Dense loss array indexed directly by event id (slot 0 unused, zero)."""

    values: np.ndarray

    @property
    def max_event_id(self) -> int:
        return self.values.size - 1

    def lookup(self, event_id: int) -> float:
        if not 1 <= event_id <= self.max_event_id:
            raise IndexError(f"event id {event_id} outside [1, {self.max_event_id}]")
        return float(self.values[event_id])


def direct_access_table(elt: EventLossTable, max_event_id: int) -> DirectAccessTable:
    if elt.max_event_id > max_event_id:
        raise StructureError(
            f"ELT {elt.elt_id} holds event id {elt.max_event_id} > max_event_id {max_event_id}"
        )
    values = np.zeros(max_event_id + 1, dtype=np.float64)
    values[elt.event_ids.astype(np.int64)] = elt.losses
    values.flags.writeable = False
    return DirectAccessTable(values)


def layer_table_stack(layer: Layer, elts, max_event_id: int) -> np.ndarray:
    """Dense ``(n_refs, max_event_id + 1)`` stack of per-ELT-term-adjusted losses.

    Adjusting the whole table up front is equivalent to adjusting at lookup
    time because a missing event reads 0 and the terms map 0 to 0.
    """
    resolved = resolve_layer(layer, elts)
    stack = np.empty((len(resolved), max_event_id + 1), dtype=np.float64)
    for row, elt in zip(stack, resolved):
        raw = direct_access_table(elt, max_event_id).values
        np.minimum(np.maximum(raw - elt.terms.occ_retention, 0.0), elt.terms.occ_limit, out=row)
    return stack
