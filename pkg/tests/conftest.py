import numpy as np
import pytest

from vgpurisk.datagen import DatasetBundle, GenSpec, generate
from vgpurisk.risk import EventLossTable, Layer, LayerTerms, Portfolio, Trial, YearEventTable

WORKED_TERMS = LayerTerms(occ_retention=30, occ_limit=150, agg_retention=50, agg_limit=200)


def worked_elts():
    return (
        EventLossTable.from_mapping(1, {1: 100.0, 3: 50.0}),
        EventLossTable.from_mapping(2, {2: 200.0}),
    )


def worked_layer():
    return Layer((1, 2), WORKED_TERMS)


def worked_trial(trial_id=1):
    return Trial.from_pairs(trial_id, [(1, 0.1), (2, 0.2), (3, 0.3)])


@pytest.fixture
def worked_bundle():
    """The hand-checked 190 trial, three times over."""
    yet = YearEventTable.from_trials([worked_trial(i) for i in (1, 2, 3)])
    return DatasetBundle(yet, worked_elts(), Portfolio(((worked_layer(),),)))


def toy_spec(**kw):
    base = dict(
        seed=1,
        n_trials=200,
        events_per_trial=(5, 40),
        n_elts=5,
        losses_per_elt=(50, 200),
        event_catalogue_size=400,
        elts_per_layer=(2, 4),
        layers_per_program=2,
        n_programs=2,
    )
    base.update(kw)
    return GenSpec(**base)


@pytest.fixture(scope="session")
def toy_bundle():
    return generate(toy_spec())


def random_bundle(seed: int) -> DatasetBundle:
    rng = np.random.default_rng(seed)
    return generate(
        toy_spec(
            seed=seed,
            n_trials=int(rng.integers(1, 60)),
            events_per_trial=(0, int(rng.integers(0, 30))),
            n_elts=int(rng.integers(1, 6)),
            losses_per_elt=(0, 80),
            event_catalogue_size=100,
            elts_per_layer=(1, 3),
            layer_terms={
                "occ_retention": float(rng.uniform(0, 3e5)),
                "occ_limit": float(rng.uniform(1e4, 2e6)),
                "agg_retention": float(rng.uniform(0, 2e6)),
                "agg_limit": float(rng.uniform(1e5, 2e7)),
            },
            elt_terms={"occ_retention": float(rng.uniform(0, 1e5)), "occ_limit": float(rng.uniform(1e5, 1e6))},
        )
    )


# -- acceptance reporting --------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def check(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
