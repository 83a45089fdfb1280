"""Acceptance criteria, one test (and one PASS/FAIL line) each."""

import json
import time

import numpy as np
import pytest

from vgpurisk import datagen, sim
from vgpurisk.cli import main
from vgpurisk.datagen import GenSpec, generate, load_preset
from vgpurisk.engine import ExecutionPlan, run_analysis
from vgpurisk.model import ModelParams, energy, exec_time_multitenancy, overlap_times, preset, t_computation
from vgpurisk.planner import PlanQuery, plan
from vgpurisk.risk import (
    EventLossTable,
    LayerTerms,
    Trial,
    apply_aggregate_terms,
    apply_occurrence_terms,
    direct_access_table,
    trial_loss,
)

from conftest import worked_elts, worked_layer, worked_trial

FDR, QDR = preset("FDR"), preset("QDR")


def test_c1_planner_optima(criterion):
    qdr = plan(PlanQuery(QDR, objective="time"))
    fdr = plan(PlanQuery(FDR, objective="time"))
    ok = qdr.best == (7, 2) and fdr.best == (9, 2)
    criterion(1, "planner time optima", ok,
              f"QDR {qdr.best} ({qdr.best_row.total_time:.4f} s), FDR {fdr.best} ({fdr.best_row.total_time:.4f} s); "
              "want (7, 2) and (9, 2)")


def test_c2_model_point_values(criterion):
    total = exec_time_multitenancy(16, 1, FDR)
    comp = t_computation(16, FDR)
    alloc = 16 * FDR.t_cudamalloc
    ok = abs(total / 1.66 - 1) <= 0.03 and abs(comp / 0.62 - 1) <= 0.05 and round(alloc, 12) == 0.0432
    criterion(2, "FDR (16, 1) point values", ok,
              f"total {total:.6f} s vs 1.66 ({100 * (total / 1.66 - 1):+.2f}%, tol 3%); "
              f"compute {comp:.6f} s vs 0.62 ({100 * (comp / 0.62 - 1):+.2f}%, tol 5%); alloc {alloc * 1e3:.1f} ms")


def test_c3_energy_model(criterion):
    measured = {1: 1145, 2: 1094, 4: 1041}
    got = {v: energy(4, v, FDR) for v in measured}
    within = all(abs(got[v] / measured[v] - 1) <= 0.05 for v in measured)
    decreasing = got[1] > got[2] > got[4]
    detail = ", ".join(f"v={v}: {got[v]:.1f} vs {measured[v]} ({100 * (got[v] / measured[v] - 1):+.1f}%)" for v in measured)
    criterion(3, "FDR P=4 energy", within and decreasing, detail + f"; strictly decreasing={decreasing}")


def test_c4_simulator_cells(criterion):
    measured = {1: 88, 2: 80, 4: 76}
    cells = {}
    for v in measured:
        scn = sim.calibrated_scenario(FDR, 4, v, cell_seconds=0.035)
        cells[v] = sim.n_cells(sim.simulate(scn).makespan, 0.035)
    within = all(abs(cells[v] - measured[v]) <= 3 for v in measured)
    decreasing = cells[1] > cells[2] > cells[4]
    criterion(4, "FDR P=4 simulated cells", within and decreasing,
              f"cells {cells[1]}/{cells[2]}/{cells[4]} vs measured 88/80/76 (tol 3); strictly decreasing={decreasing}")


def _random_params(rng) -> ModelParams:
    return ModelParams(
        computation_time_1pgpu=float(rng.uniform(0.2, 20)),
        t_cudamalloc=float(rng.uniform(1e-4, 0.05)),
        t_small_transfers=float(rng.uniform(1e-4, 0.05)),
        t_transfer_4mb=float(rng.uniform(1e-4, 0.05)),
        t_transfer_120mb=float(rng.uniform(1e-4, 0.3)),
        t_transfer_4gb=float(rng.uniform(0.05, 4)),
    )


def test_c5_simulator_model_equivalence(criterion):
    rng = np.random.default_rng(20160905)
    worst, regimes, n = 0.0, {"fully": 0, "not_fully": 0}, 300
    for _ in range(n):
        params = _random_params(rng)
        P, v = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        fully, not_fully = overlap_times(P, v, params)
        regimes["fully" if fully >= not_fully else "not_fully"] += 1
        makespan = sim.simulate(sim.idealized_scenario(params, P, v)).makespan
        model = exec_time_multitenancy(P, v, params)
        worst = max(worst, abs(makespan - model) / model)
    ok = worst <= 1e-9 and min(regimes.values()) > 0
    criterion(5, "simulator equals model (constant bandwidth, zero setup)", ok,
              f"{n} cases, max rel err {worst:.2e} (tol 1e-9), regimes {regimes}")


def test_c6_mode_equivalence_without_tenancy(criterion):
    rng = np.random.default_rng(6)
    worst_t = worst_e = 0.0
    n = 150
    for _ in range(n):
        kw = dict(
            n_pgpus=int(rng.integers(1, 17)),
            vgpus_per_pgpu=1,
            link=sim.LinkModel.constant(float(rng.uniform(1e8, 1e10))),
            compute_time_one_device=float(rng.uniform(0.1, 20)),
            split_bytes=float(rng.uniform(0, 8e9)),
            replicated_bytes=float(rng.uniform(0, 5e8)),
        )
        seq = sim.simulate(sim.SimScenario(transfer_mode="sequential", **kw))
        con = sim.simulate(sim.SimScenario(transfer_mode="concurrent", **kw))
        worst_t = max(worst_t, abs(seq.makespan - con.makespan) / seq.makespan)
        worst_e = max(worst_e, abs(seq.energy - con.energy) / seq.energy)
    ok = worst_t <= 1e-9 and worst_e <= 1e-9
    criterion(6, "v=1 concurrent == sequential", ok,
              f"{n} cases, max rel diff makespan {worst_t:.2e}, energy {worst_e:.2e} (tol 1e-9)")


@pytest.fixture(scope="module")
def paper_mini():
    return generate(GenSpec.from_dict(load_preset("paper-mini")))


def test_c7_partition_invariance(criterion, paper_mini):
    n = paper_mini.yet.n_trials
    t0 = time.perf_counter()
    ref = run_analysis(paper_mini, ExecutionPlan.even(n, 1), workers=1)
    single = time.perf_counter() - t0
    mismatches = []
    for devices in (1, 2, 4, 8, 16):
        for workers in (1, 4, 8):
            got = run_analysis(paper_mini, ExecutionPlan.even(n, devices), workers=workers)
            if got.losses.tobytes() != ref.losses.tobytes():
                mismatches.append((devices, workers))
    ok = not mismatches and single < 60 and n == 100_000
    criterion(7, "paper-mini YLT bitwise across N and workers", ok,
              f"{n} trials, 15 (N, workers) runs, mismatches {mismatches or 'none'}, single-threaded {single:.2f} s (< 60 s)")


def test_c8_financial_terms(criterion):
    occ, agg = LayerTerms(occ_retention=30, occ_limit=150), LayerTerms(agg_retention=50, agg_limit=200)
    examples = [
        apply_occurrence_terms(100, occ) == 70,
        apply_occurrence_terms(10, occ) == 0,
        apply_occurrence_terms(200, occ) == 150,
        apply_aggregate_terms(240, agg) == 190,
        apply_aggregate_terms(40, agg) == 0,
        apply_aggregate_terms(500, agg) == 200,
    ]
    examples += [
        apply_aggregate_terms(0.0, agg) == 0.0,
        trial_loss(Trial.from_pairs(1, [(99, 0.5)]), worked_layer(), worked_elts()) == 0.0,
        [direct_access_table(EventLossTable.from_mapping(1, {2: 5.0}), 3).lookup(i) for i in (1, 2, 3)] == [0, 5.0, 0],
    ]
    worked = trial_loss(worked_trial(), worked_layer(), worked_elts())

    rng = np.random.default_rng(8)
    n = 12_000
    violations = 0
    for _ in range(n):
        a, b = sorted(rng.uniform(0, 1e6, 2))
        r, lim = rng.uniform(0, 5e5), rng.uniform(1, 1e6)
        t = LayerTerms(occ_retention=r, occ_limit=lim, agg_retention=r, agg_limit=lim)
        for f in (apply_occurrence_terms, apply_aggregate_terms):
            fa, fb = f(a, t), f(b, t)
            violations += not (0 <= fa <= fb <= lim and fa <= a)
        violations += apply_occurrence_terms(a, LayerTerms()) != a or apply_aggregate_terms(a, LayerTerms()) != a
    ok = all(examples) and worked == 190.0 and violations == 0
    criterion(8, "financial-term unit suite", ok,
              f"{sum(examples)}/9 trivial examples, worked trial {worked:g} (want 190), "
              f"{n} random inputs with {violations} property violations")


def test_c9_sublinear_scaling(criterion):
    rng = np.random.default_rng(9)
    cases, bad, sample = 40, 0, None
    for i in range(cases):
        bw = float(rng.uniform(1e9, 8e9))
        base = dict(
            vgpus_per_pgpu=1,
            link=sim.LinkModel.constant(bw, contention="independent", aggregate_cap=bw * float(rng.uniform(1, 2))),
            compute_time_one_device=float(rng.uniform(1, 20)),
            split_bytes=float(rng.uniform(1e9, 8e9)),
            replicated_bytes=float(rng.uniform(1e7, 5e8)),
            transfer_mode=sim.MODES[i % 2],
        )
        times = {N: sim.simulate(sim.SimScenario(n_pgpus=N, **base)).makespan for N in (1, 2, 4)}
        offsets = [100 * (times[N] - times[1] / N) / (times[1] / N) for N in (1, 2, 4)]
        bad += not all(x <= y for x, y in zip(offsets, offsets[1:]))
        sample = sample or offsets
    criterion(9, "offset from perfect scaling non-decreasing in N", bad == 0,
              f"{cases} scenarios, {bad} violations; e.g. N=1/2/4 offsets " + "/".join(f"{x:.1f}%" for x in sample))


def _echo_of(path):
    raw = path.read_bytes()
    if raw[:4] == datagen.MAGIC:
        return json.loads(bytes(datagen.read_container(path)["CONFIG"].buf))
    text = raw.decode()
    if text.startswith("# config: "):
        return json.loads(text.split("\n", 1)[0][len("# config: "):])
    return json.loads(text)["config"]


def test_c10_determinism_from_echo(criterion, tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"seed": 11, "n_trials": 2000, "events_per_trial": [20, 60], "n_elts": 4,
                                "losses_per_elt": [500, 800], "event_catalogue_size": 2000, "elts_per_layer": [2, 4]}))
    bundle = tmp_path / "bundle.ara"
    commands = {
        "gen": ["gen", "--spec", str(spec)],
        "run-csv": ["run", "--bundle", str(bundle), "-N", "3", "-w", "2"],
        "run-json": ["run", "--bundle", str(bundle), "--format", "json"],
        "sim-json": ["sim", "--preset", "FDR", "-P", "4", "-v", "2"],
        "sim-csv": ["sim", "--preset", "QDR", "-P", "3", "-v", "3", "--mode", "concurrent", "--format", "csv"],
        "sim-text": ["sim", "--preset", "FDR", "-P", "4", "-v", "4", "--render-cells"],
        "model": ["model", "--preset", "QDR", "-P", "7", "-v", "2"],
        "plan-json": ["plan", "--preset", "FDR", "--objective", "energy", "--memory-filter"],
        "plan-csv": ["plan", "--preset", "QDR", "--format", "csv"],
        "sweep": ["sweep", "--preset", "FDR", "--p-range", "1:6", "--v-range", "1:4", "--modes", "sequential,concurrent"],
    }
    differing = []
    for name, argv in commands.items():
        first = bundle if name == "gen" else tmp_path / f"{name}.a"
        second = tmp_path / f"{name}.b"
        assert main(argv + ["-o", str(first)]) == 0, name
        cfg = tmp_path / f"{name}.cfg.json"
        cfg.write_text(json.dumps(_echo_of(first)))
        assert main([argv[0], "--config", str(cfg), "-o", str(second)]) == 0, name
        if first.read_bytes() != second.read_bytes():
            differing.append(name)
    capsys.readouterr()
    criterion(10, "artifacts regenerate byte-identically from their config echo", not differing,
              f"{len(commands)} artifacts checked, differing: {differing or 'none'}")
