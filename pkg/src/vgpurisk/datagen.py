"""Deterministic synthetic YET/ELT/portfolio bundles and their file format.

Randomness comes from numpy's Philox4x64 counter-based generator. Each
structure draws from its own stream keyed by ``SeedSequence([seed, stream])``
(YET=1, ELTs=2, portfolio=3), so changing e.g. the ELT count does not perturb
the trials.

Container layout (all little-endian)::

    header   "ARA1" | u32 version | u32 n_sections | u32 reserved
    table    n_sections x (16-byte NUL-padded name | u64 offset | u64 length)
    payloads back to back, in table order

Sections: ``META`` (generation spec as JSON), ``YET``, ``ELT.<i>`` per ELT,
``PF`` and, optionally, ``YLT``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .risk import (
    INF,
    EventLossTable,
    Layer,
    LayerTerms,
    PerEltTerms,
    Portfolio,
    StructureError,
    YearEventTable,
    YearLossTable,
)

MAGIC = b"ARA1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_ENTRY = struct.Struct("<16sQQ")

STREAM_YET, STREAM_ELT, STREAM_PF = 1, 2, 3
# trials per generation chunk; part of the stream definition, do not tune
_GEN_CHUNK = 2048


class ParseError(ValueError):
    """Malformed dataset file."""


# -- generation spec ---------------------------------------------------------


def _range(value, name) -> tuple[int, int]:
    lo, hi = (int(v) for v in value)
    if lo > hi:
        raise ValueError(f"{name}: empty range [{lo}, {hi}]")
    if lo < 0:
        raise ValueError(f"{name}: negative bound in [{lo}, {hi}]")
    return lo, hi


def _num(x):
    return INF if x is None else float(x)


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    n_trials: int = 1000
    events_per_trial: tuple[int, int] = (800, 1500)
    n_elts: int = 10
    losses_per_elt: tuple[int, int] = (10_000, 30_000)
    event_catalogue_size: int = 50_000
    layers_per_program: int = 1
    elts_per_layer: tuple[int, int] = (3, 30)
    loss_distribution: Mapping[str, Any] = field(
        default_factory=lambda: {"kind": "uniform", "lo": 1.0e3, "hi": 1.0e6}
    )
    n_programs: int = 1
    layer_terms: Mapping[str, Any] = field(
        default_factory=lambda: {
            "occ_retention": 5.0e4,
            "occ_limit": 1.0e6,
            "agg_retention": 1.0e6,
            "agg_limit": 1.0e9,
        }
    )
    elt_terms: Mapping[str, Any] = field(default_factory=lambda: {"occ_retention": 0.0, "occ_limit": None})

    def __post_init__(self):
        for name in ("events_per_trial", "losses_per_elt", "elts_per_layer"):
            object.__setattr__(self, name, _range(getattr(self, name), name))
        for name in ("n_trials", "n_elts", "event_catalogue_size", "layers_per_program", "n_programs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.elts_per_layer[0] < 1:
            raise ValueError("elts_per_layer must allow at least one ELT")
        if self.elts_per_layer[0] > self.n_elts:
            raise ValueError(f"elts_per_layer lower bound {self.elts_per_layer[0]} exceeds n_elts {self.n_elts}")
        if self.losses_per_elt[1] > self.event_catalogue_size:
            raise ValueError("losses_per_elt upper bound exceeds event_catalogue_size")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        dist = dict(self.loss_distribution)
        kind = dist.get("kind")
        if kind == "uniform":
            if not 0 <= float(dist["lo"]) <= float(dist["hi"]):
                raise ValueError("uniform loss distribution needs 0 <= lo <= hi")
        elif kind == "lognormal":
            if float(dist["sigma"]) < 0:
                raise ValueError("lognormal sigma must be >= 0")
        else:
            raise ValueError(f"unknown loss distribution {kind!r}")
        for name in ("layer_terms", "elt_terms"):
            norm = {k: (None if v is None or float(v) == INF else float(v)) for k, v in getattr(self, name).items()}
            object.__setattr__(self, name, norm)
        object.__setattr__(self, "loss_distribution", dist)
        self.layer_terms_obj()
        self.elt_terms_obj()

    def layer_terms_obj(self) -> LayerTerms:
        t = self.layer_terms
        return LayerTerms(
            _num(t.get("occ_retention", 0.0)),
            _num(t.get("occ_limit")),
            _num(t.get("agg_retention", 0.0)),
            _num(t.get("agg_limit")),
        )

    def elt_terms_obj(self) -> PerEltTerms:
        t = self.elt_terms
        return PerEltTerms(_num(t.get("occ_retention", 0.0)), _num(t.get("occ_limit")))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("events_per_trial", "losses_per_elt", "elts_per_layer"):
            d[k] = list(d[k])
        d["loss_distribution"] = dict(self.loss_distribution)
        d["layer_terms"] = dict(self.layer_terms)
        d["elt_terms"] = dict(self.elt_terms)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GenSpec fields: {sorted(unknown)}")
        return cls(**dict(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def load_preset(name: str) -> dict:
    """Load one of the JSON presets shipped with the package (``fdr``, ``paper-mini``...)."""
    fname = f"{name.lower()}.json"
    try:
        text = resources.files("vgpurisk.presets").joinpath(fname).read_text()
    except FileNotFoundError:
        raise ValueError(f"unknown preset {name!r}") from None
    return json.loads(text)


# -- bundle ------------------------------------------------------------------


def yet_nbytes(n_trials: int, n_events: int) -> int:
    return 16 + 4 * n_trials + 8 * n_events


def elt_nbytes(n_losses: int) -> int:
    return 24 + 12 * n_losses


def pf_nbytes(portfolio: Portfolio) -> int:
    size = 4
    for program in portfolio.programs:
        size += 4
        for layer in program:
            size += 36 + 4 * len(layer.elt_refs)
    return size


@dataclass(frozen=True)
class DatasetBundle:
    yet: YearEventTable
    elts: tuple[EventLossTable, ...]
    portfolio: Portfolio
    spec: GenSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "elts", tuple(self.elts))
        ids = [e.elt_id for e in self.elts]
        if len(set(ids)) != len(ids):
            raise StructureError("duplicate ELT ids in bundle")
        known = set(ids)
        for layer in self.portfolio.layers():
            bad = [r for r in layer.elt_refs if r not in known]
            if bad:
                raise StructureError(f"layer references unknown ELT ids {bad}")

    @property
    def elt_map(self) -> dict[int, EventLossTable]:
        return {e.elt_id: e for e in self.elts}

    @property
    def max_event_id(self) -> int:
        return max([self.yet.max_event_id, *(e.max_event_id for e in self.elts)], default=0)

    @property
    def byte_sizes(self) -> dict[str, int]:
        """Serialized payload size of each structure, in bytes."""
        return {
            "yet": yet_nbytes(self.yet.n_trials, self.yet.n_events),
            "elts": sum(elt_nbytes(len(e)) for e in self.elts),
            "pf": pf_nbytes(self.portfolio),
        }


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


def _draw_losses(rng, dist, n):
    if dist["kind"] == "uniform":
        return rng.uniform(float(dist["lo"]), float(dist["hi"]), n)
    return rng.lognormal(float(dist["mu"]), float(dist["sigma"]), n)


def _generate_yet(spec: GenSpec) -> YearEventTable:
    rng = _rng(spec.seed, STREAM_YET)
    lo, hi = spec.events_per_trial
    counts = rng.integers(lo, hi, size=spec.n_trials, endpoint=True, dtype=np.int64)
    offsets = np.zeros(spec.n_trials + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    event_ids = np.empty(total, dtype=np.uint32)
    timestamps = np.empty(total, dtype=np.float32)
    width = hi
    for a in range(0, spec.n_trials, _GEN_CHUNK):
        b = min(a + _GEN_CHUNK, spec.n_trials)
        n = b - a
        if width == 0:
            continue
        ids = rng.integers(1, spec.event_catalogue_size, size=(n, width), endpoint=True, dtype=np.uint32)
        ts = rng.random((n, width))
        mask = np.arange(width) < counts[a:b, None]
        ts[~mask] = 2.0  # pushed past the end by the sort
        ts.sort(axis=1)
        event_ids[offsets[a] : offsets[b]] = ids[mask]
        timestamps[offsets[a] : offsets[b]] = ts[mask].astype(np.float32)
    return YearEventTable(offsets, event_ids, timestamps)


def _generate_elts(spec: GenSpec) -> tuple[EventLossTable, ...]:
    rng = _rng(spec.seed, STREAM_ELT)
    terms = spec.elt_terms_obj()
    dist = dict(spec.loss_distribution)
    out = []
    for elt_id in range(1, spec.n_elts + 1):
        n = int(rng.integers(spec.losses_per_elt[0], spec.losses_per_elt[1], endpoint=True))
        ids = np.sort(rng.choice(spec.event_catalogue_size, size=n, replace=False)) + 1
        out.append(EventLossTable(elt_id, ids.astype(np.uint32), _draw_losses(rng, dist, n), terms))
    return tuple(out)


def _generate_portfolio(spec: GenSpec) -> Portfolio:
    rng = _rng(spec.seed, STREAM_PF)
    lo, hi = spec.elts_per_layer
    hi = min(hi, spec.n_elts)
    terms = spec.layer_terms_obj()
    programs = []
    for _ in range(spec.n_programs):
        layers = []
        for _ in range(spec.layers_per_program):
            k = int(rng.integers(lo, hi, endpoint=True))
            refs = np.sort(rng.choice(spec.n_elts, size=k, replace=False)) + 1
            layers.append(Layer(tuple(refs.tolist()), terms))
        programs.append(tuple(layers))
    return Portfolio(tuple(programs))


def generate(spec: GenSpec) -> DatasetBundle:
    """Build a bundle; a pure function of ``spec``."""
    return DatasetBundle(_generate_yet(spec), _generate_elts(spec), _generate_portfolio(spec), spec)


def estimate_byte_sizes(spec: GenSpec) -> dict[str, float]:
    """Expected serialized sizes for ``spec`` without materialising anything."""
    ev = sum(spec.events_per_trial) / 2
    losses = sum(spec.losses_per_elt) / 2
    lo, hi = spec.elts_per_layer
    refs = (lo + min(hi, spec.n_elts)) / 2
    return {
        "yet": 16 + 4 * spec.n_trials + 8 * spec.n_trials * ev,
        "elts": spec.n_elts * (24 + 12 * losses),
        "pf": 4 + spec.n_programs * (4 + spec.layers_per_program * (36 + 4 * refs)),
    }


# -- serialisation -----------------------------------------------------------


def _le(arr, dtype):
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def encode_yet(yet: YearEventTable) -> bytes:
    counts = np.diff(yet.offsets)
    return b"".join(
        [
            struct.pack("<QQ", yet.n_trials, yet.n_events),
            _le(counts, np.uint32),
            _le(yet.event_ids, np.uint32),
            _le(yet.timestamps, np.float32),
        ]
    )


def encode_elt(elt: EventLossTable) -> bytes:
    head = struct.pack("<IIdd", elt.elt_id, len(elt), elt.terms.occ_retention, elt.terms.occ_limit)
    return head + _le(elt.event_ids, np.uint32) + _le(elt.losses, np.float64)


def encode_pf(pf: Portfolio) -> bytes:
    parts = [struct.pack("<I", len(pf.programs))]
    for program in pf.programs:
        parts.append(struct.pack("<I", len(program)))
        for layer in program:
            t = layer.terms
            parts.append(
                struct.pack("<Idddd", len(layer.elt_refs), t.occ_retention, t.occ_limit, t.agg_retention, t.agg_limit)
            )
            parts.append(_le(layer.elt_refs, np.uint32))
    return b"".join(parts)


def encode_ylt(ylt: YearLossTable) -> bytes:
    return struct.pack("<Q", len(ylt)) + _le(ylt.trial_ids, np.int64) + _le(ylt.losses, np.float64)


class _Reader:
    def __init__(self, buf: memoryview, section: str, base: int):
        self.buf, self.section, self.base, self.pos = buf, section, base, 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.buf):
            raise ParseError(
                f"section {self.section}: truncated {what} at file offset {self.base + self.pos} "
                f"(need {n} bytes, {len(self.buf) - self.pos} left)"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count, what)
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype).newbyteorder("="))

    def done(self):
        if self.pos != len(self.buf):
            raise ParseError(
                f"section {self.section}: {len(self.buf) - self.pos} trailing bytes at file offset {self.base + self.pos}"
            )


def decode_yet(r: _Reader) -> YearEventTable:
    n_trials, n_events = r.unpack("<QQ", "header")
    counts = r.array(np.uint32, n_trials, "trial counts")
    ids = r.array(np.uint32, n_events, "event ids")
    ts = r.array(np.float32, n_events, "timestamps")
    r.done()
    offsets = np.zeros(n_trials + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    if offsets[-1] != n_events:
        raise ParseError(f"section {r.section}: trial counts sum to {offsets[-1]}, header says {n_events}")
    try:
        return YearEventTable(offsets, ids, ts)
    except StructureError as exc:
        raise ParseError(f"section {r.section}: {exc}") from None


def decode_elt(r: _Reader) -> EventLossTable:
    elt_id, n, ret, lim = r.unpack("<IIdd", "header")
    ids = r.array(np.uint32, n, "event ids")
    losses = r.array(np.float64, n, "losses")
    r.done()
    try:
        return EventLossTable(elt_id, ids, losses, PerEltTerms(ret, lim))
    except ValueError as exc:
        raise ParseError(f"section {r.section}: {exc}") from None


def decode_pf(r: _Reader) -> Portfolio:
    (n_programs,) = r.unpack("<I", "program count")
    programs = []
    for _ in range(n_programs):
        (n_layers,) = r.unpack("<I", "layer count")
        layers = []
        for _ in range(n_layers):
            k, occ_r, occ_l, agg_r, agg_l = r.unpack("<Idddd", "layer header")
            refs = r.array(np.uint32, k, "ELT refs")
            layers.append(Layer(tuple(refs.tolist()), LayerTerms(occ_r, occ_l, agg_r, agg_l)))
        programs.append(tuple(layers))
    r.done()
    try:
        return Portfolio(tuple(programs))
    except ValueError as exc:
        raise ParseError(f"section {r.section}: {exc}") from None


def decode_ylt(r: _Reader) -> YearLossTable:
    (n,) = r.unpack("<Q", "header")
    ids = r.array(np.int64, n, "trial ids")
    losses = r.array(np.float64, n, "losses")
    r.done()
    return YearLossTable(ids, losses)


def write_container(path, sections: list[tuple[str, bytes]]) -> None:
    """Write named payloads atomically (temp file + rename)."""
    path = Path(path)
    offset = _HEADER.size + _ENTRY.size * len(sections)
    table = []
    for name, payload in sections:
        raw = name.encode("ascii")
        if len(raw) > 16:
            raise ValueError(f"section name too long: {name}")
        table.append(_ENTRY.pack(raw, offset, len(payload)))
        offset += len(payload)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(sections), 0))
        fh.writelines(table)
        for _, payload in sections:
            fh.write(payload)
    tmp.replace(path)


def read_container(path) -> dict[str, _Reader]:
    data = memoryview(Path(path).read_bytes())
    if len(data) < _HEADER.size:
        raise ParseError(f"file too short for header at offset 0 ({len(data)} bytes)")
    magic, version, n_sections, _ = _HEADER.unpack(data[: _HEADER.size])
    if magic != MAGIC:
        raise ParseError(f"bad magic {bytes(magic)!r} at offset 0, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version} at offset 4")
    out = {}
    pos = _HEADER.size
    for i in range(n_sections):
        if pos + _ENTRY.size > len(data):
            raise ParseError(f"section table truncated at offset {pos} (entry {i})")
        raw, off, length = _ENTRY.unpack(data[pos : pos + _ENTRY.size])
        name = raw.rstrip(b"\0").decode("ascii", errors="replace")
        if off + length > len(data):
            raise ParseError(
                f"section {name} truncated: needs bytes [{off}, {off + length}) but file ends at offset {len(data)}"
            )
        out[name] = _Reader(data[off : off + length], name, off)
        pos += _ENTRY.size
    return out


def bundle_sections(bundle: DatasetBundle, ylt: YearLossTable | None = None) -> list[tuple[str, bytes]]:
    meta = bundle.spec.to_json() if bundle.spec is not None else "{}"
    sections = [("META", meta.encode()), ("YET", encode_yet(bundle.yet))]
    sections += [(f"ELT.{i}", encode_elt(e)) for i, e in enumerate(bundle.elts)]
    sections.append(("PF", encode_pf(bundle.portfolio)))
    if ylt is not None:
        sections.append(("YLT", encode_ylt(ylt)))
    return sections


def write_bundle(bundle: DatasetBundle, path, ylt: YearLossTable | None = None) -> None:
    write_container(path, bundle_sections(bundle, ylt))


def read_bundle(path) -> DatasetBundle:
    sec = read_container(path)
    for required in ("META", "YET", "PF"):
        if required not in sec:
            raise ParseError(f"missing section {required}")
    meta = json.loads(bytes(sec["META"].buf).decode() or "{}")
    spec = GenSpec.from_dict(meta) if meta else None
    elt_names = sorted((n for n in sec if n.startswith("ELT.")), key=lambda n: int(n.split(".", 1)[1]))
    return DatasetBundle(
        decode_yet(sec["YET"]),
        tuple(decode_elt(sec[n]) for n in elt_names),
        decode_pf(sec["PF"]),
        spec,
    )


def read_ylt(path) -> YearLossTable:
    sec = read_container(path)
    if "YLT" not in sec:
        raise ParseError("missing section YLT")
    return decode_ylt(sec["YLT"])


def write_ylt(path, ylt: YearLossTable) -> None:
    write_container(path, [("YLT", encode_ylt(ylt))])
