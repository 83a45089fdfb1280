import json

import numpy as np
import pytest

from vgpurisk import datagen
from vgpurisk.datagen import GenSpec, ParseError, estimate_byte_sizes, generate, load_preset, read_bundle, write_bundle

from conftest import toy_spec

GIB = 1 << 30


def test_range_collapse():
    b = generate(GenSpec(seed=1, n_trials=10, events_per_trial=(2, 2), n_elts=2, losses_per_elt=(5, 5),
                         event_catalogue_size=20, elts_per_layer=(1, 2)))
    assert b.yet.n_trials == 10
    for t in b.yet.trials():
        assert len(t.events) == 2
        assert t.events[0].timestamp <= t.events[1].timestamp


def test_event_ids_in_catalogue():
    b = generate(toy_spec(event_catalogue_size=57, losses_per_elt=(10, 50)))
    assert b.yet.event_ids.min() >= 1 and b.yet.event_ids.max() <= 57
    counts = np.diff(b.yet.offsets)
    assert counts.min() >= 5 and counts.max() <= 40


def test_deterministic_bytes(tmp_path):
    write_bundle(generate(toy_spec()), tmp_path / "a.ara")
    write_bundle(generate(toy_spec()), tmp_path / "b.ara")
    assert (tmp_path / "a.ara").read_bytes() == (tmp_path / "b.ara").read_bytes()


def test_seed_changes_output():
    assert generate(toy_spec(seed=1)).yet != generate(toy_spec(seed=2)).yet


def test_streams_are_independent():
    # more ELTs must not perturb the trials
    assert generate(toy_spec(n_elts=5)).yet == generate(toy_spec(n_elts=9)).yet


def test_roundtrip(tmp_path, toy_bundle):
    write_bundle(toy_bundle, tmp_path / "t.ara")
    assert read_bundle(tmp_path / "t.ara") == toy_bundle


def test_wrong_magic(tmp_path, toy_bundle):
    p = tmp_path / "t.ara"
    write_bundle(toy_bundle, p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError, match="magic.*offset 0"):
        read_bundle(p)


def test_wrong_version(tmp_path, toy_bundle):
    p = tmp_path / "t.ara"
    write_bundle(toy_bundle, p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError, match="version"):
        read_bundle(p)


def test_truncated_trial_section(tmp_path, toy_bundle):
    p = tmp_path / "t.ara"
    sections = datagen.bundle_sections(toy_bundle)
    sections = [(n, s[:-3] if n == "YET" else s) for n, s in sections]
    datagen.write_container(p, sections)
    with pytest.raises(ParseError, match="section YET"):
        read_bundle(p)


def test_truncated_file(tmp_path, toy_bundle):
    p = tmp_path / "t.ara"
    write_bundle(toy_bundle, p)
    p.write_bytes(p.read_bytes()[:200])
    with pytest.raises(ParseError, match="truncated"):
        read_bundle(p)


def test_byte_sizes_match_encoding(toy_bundle):
    sizes = toy_bundle.byte_sizes
    assert sizes["yet"] == len(datagen.encode_yet(toy_bundle.yet))
    assert sizes["elts"] == sum(len(datagen.encode_elt(e)) for e in toy_bundle.elts)
    assert sizes["pf"] == len(datagen.encode_pf(toy_bundle.portfolio))


def test_full_scale_size_accounting():
    sizes = estimate_byte_sizes(GenSpec.from_dict(load_preset("paper-scale")))
    assert sizes["yet"] == pytest.approx(4 * GIB, rel=0.01)
    assert sizes["elts"] == pytest.approx(120e6, rel=0.01)
    assert sizes["pf"] == pytest.approx(4e6, rel=0.01)


def test_estimate_matches_actual_in_expectation():
    spec = toy_spec(n_trials=4000)
    est, got = estimate_byte_sizes(spec), generate(spec).byte_sizes
    assert got["yet"] == pytest.approx(est["yet"], rel=0.02)


def test_spec_json_roundtrip():
    spec = toy_spec(layer_terms={"occ_retention": 1.0, "occ_limit": float("inf"), "agg_retention": 0.0, "agg_limit": 5.0})
    again = GenSpec.from_dict(json.loads(spec.to_json()))
    assert again == spec


@pytest.mark.parametrize(
    "bad",
    [
        {"n_trials": 0},
        {"events_per_trial": (5, 2)},
        {"elts_per_layer": (0, 2)},
        {"loss_distribution": {"kind": "pareto"}},
        {"losses_per_elt": (1, 10_000)},
    ],
)
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        toy_spec(**bad)


def test_unknown_spec_field():
    with pytest.raises(ValueError, match="unknown"):
        GenSpec.from_dict({"seed": 1, "n_trails": 3})


def test_lognormal_losses():
    b = generate(toy_spec(loss_distribution={"kind": "lognormal", "mu": 10.0, "sigma": 1.0}))
    assert all((e.losses > 0).all() for e in b.elts)


def test_presets_load():
    mini = GenSpec.from_dict(load_preset("paper-mini"))
    assert mini.n_trials == 100_000 and mini.n_elts == 10 and mini.losses_per_elt == (10_000, 10_000)
