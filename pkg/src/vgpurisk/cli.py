"""Command-line entry point: ``vgpurisk {gen,run,sim,model,plan,sweep}``.

Every command resolves its options as built-in defaults, overlaid by an
optional ``--config`` JSON document, overlaid by explicit flags. The resolved
options are echoed into each data artifact (``# config: {...}`` for CSV and
text, a ``config`` key for JSON, a ``CONFIG`` section for bundles), and
``--config`` accepts that echo back, so any artifact can be regenerated.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import datagen, engine, model, planner, sim
from .datagen import GenSpec

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


DEFAULTS = {
    "gen": {"preset": "paper-mini", "spec": None, "seed": None, "n_trials": None},
    "run": {
        "bundle": None,
        "devices": 1,
        "workers": 1,
        "backend": None,
        "return_periods": list(engine.DEFAULT_RETURN_PERIODS),
        "tail_prob": 0.01,
        "format": "csv",
    },
    "sim": {
        "preset": "FDR",
        "params": None,
        "P": 4,
        "v": 1,
        "mode": "sequential",
        "idealized": False,
        "scenario": None,
        "cell_seconds": 0.035,
        "render_cells": False,
        "format": "json",
    },
    "model": {"preset": "FDR", "params": None, "P": 1, "v": 1, "format": "json"},
    "plan": {
        "preset": "FDR",
        "params": None,
        "objective": "time",
        "memory_filter": False,
        "p_range": [1, 16],
        "v_range": [1, 12],
        "tie_rtol": 1e-3,
        "format": "json",
    },
    "sweep": {
        "preset": "FDR",
        "params": None,
        "p_range": [1, 16],
        "v_range": [1, 12],
        "modes": ["sequential"],
        "idealized": False,
        "workers": 1,
        "format": "csv",
    },
}


def _range_arg(text: str) -> list[int]:
    lo, _, hi = text.partition(":")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if hi else lo_i
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return [lo_i, hi_i]


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON options document (e.g. a config echo)")
    common.add_argument("--output", "-o", type=Path, help="artifact path; stdout when omitted")
    common.add_argument("--format", choices=("csv", "json", "text"), default=None)
    common.add_argument("--seed", type=int, default=None)

    p = _Parser(prog="vgpurisk", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset bundle")
    g.add_argument("--preset", default=None, help="generation preset (paper-mini, paper-scale)")
    g.add_argument("--spec", type=Path, default=None, help="GenSpec JSON file")
    g.add_argument("--n-trials", dest="n_trials", type=int, default=None)

    r = sub.add_parser("run", parents=[common], help="run the aggregate analysis on a bundle")
    r.add_argument("--bundle", type=Path, default=None)
    r.add_argument("--devices", "-N", type=int, default=None)
    r.add_argument("--workers", "-w", type=int, default=None)
    r.add_argument("--backend", choices=("numba", "numpy"), default=None)
    r.add_argument("--return-periods", dest="return_periods", type=lambda s: [float(x) for x in s.split(",")])
    r.add_argument("--tail-prob", dest="tail_prob", type=float, default=None)
    r.add_argument("--metrics", type=Path, default=None, help="also write the metrics JSON here")
    r.add_argument("--ylt-bin", dest="ylt_bin", type=Path, default=None, help="also write the YLT container here")

    s = sub.add_parser("sim", parents=[common], help="simulate one multi-tenant deployment")
    s.add_argument("--preset", default=None)
    s.add_argument("--params", type=Path, default=None)
    s.add_argument("-P", type=int, default=None)
    s.add_argument("-v", type=int, default=None)
    s.add_argument("--mode", choices=sim.MODES, default=None)
    s.add_argument("--idealized", action="store_true", default=None)
    s.add_argument("--scenario", type=Path, default=None, help="SimScenario JSON (overrides preset)")
    s.add_argument("--cell-seconds", dest="cell_seconds", type=float, default=None)
    s.add_argument("--render-cells", dest="render_cells", action="store_true", default=None)

    m = sub.add_parser("model", parents=[common], help="analytic time/energy prediction")
    m.add_argument("--preset", default=None)
    m.add_argument("--params", type=Path, default=None)
    m.add_argument("-P", type=int, default=None)
    m.add_argument("-v", type=int, default=None)

    pl = sub.add_parser("plan", parents=[common], help="find the optimal (P, v) deployment")
    pl.add_argument("--preset", default=None)
    pl.add_argument("--params", type=Path, default=None)
    pl.add_argument("--objective", choices=planner.OBJECTIVES, default=None)
    pl.add_argument("--memory-filter", dest="memory_filter", action="store_true", default=None)
    pl.add_argument("--p-range", dest="p_range", type=_range_arg, default=None)
    pl.add_argument("--v-range", dest="v_range", type=_range_arg, default=None)
    pl.add_argument("--tie-rtol", dest="tie_rtol", type=float, default=None)

    sw = sub.add_parser("sweep", parents=[common], help="simulate and model a (P, v) grid")
    sw.add_argument("--preset", default=None)
    sw.add_argument("--params", type=Path, default=None)
    sw.add_argument("--p-range", dest="p_range", type=_range_arg, default=None)
    sw.add_argument("--v-range", dest="v_range", type=_range_arg, default=None)
    sw.add_argument("--modes", type=lambda s: s.split(","), default=None)
    sw.add_argument("--idealized", action="store_true", default=None)
    sw.add_argument("--workers", "-w", type=int, default=None)
    sw.add_argument("--series-dir", dest="series_dir", type=Path, default=None, help="also write per-figure CSV series")
    return p


_NOT_ECHOED = {"command", "config", "output", "metrics", "ylt_bin", "series_dir"}


def resolve_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS[args.command])
    if args.config is not None:
        doc = json.loads(args.config.read_text())
        if doc.get("command", args.command) != args.command:
            raise UsageError(f"config is for command {doc['command']!r}, not {args.command!r}")
        given = doc.get("options", doc)
        unknown = set(given) - set(opts) - {"command"}
        if unknown:
            raise UsageError(f"unknown config options for {args.command}: {sorted(unknown)}")
        opts.update({k: v for k, v in given.items() if k != "command"})
    for k, v in vars(args).items():
        if k in _NOT_ECHOED or v is None:
            continue
        opts[k] = str(v) if isinstance(v, Path) else v
    return opts


def _echo(command: str, opts: dict) -> dict:
    return {"command": command, "options": opts}


def _params(opts) -> model.ModelParams:
    base = model.preset(opts["preset"]) if opts.get("preset") else None
    if isinstance(opts.get("params"), dict):
        return model.ModelParams.from_dict(opts["params"], base)
    if opts.get("params"):
        return model.load_params(opts["params"], base)
    if base is None:
        raise UsageError("either --preset or --params is required")
    return base


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _emit(data: bytes, output: Path | None):
    if output is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        _atomic_write(output, data)


def _with_comment(cfg: dict, body: str) -> bytes:
    return (f"# config: {json.dumps(cfg, sort_keys=True)}\n" + body).encode()


def _json(cfg: dict, payload: dict) -> bytes:
    return (json.dumps({"config": cfg, **payload}, indent=2, sort_keys=True) + "\n").encode()


# -- commands ------------------------------------------------------------------


def cmd_gen(opts: dict, args) -> int:
    if isinstance(opts.get("spec"), dict):
        spec_doc = dict(opts["spec"])
    elif opts.get("spec"):
        spec_doc = json.loads(Path(opts["spec"]).read_text())
    else:
        spec_doc = datagen.load_preset(opts["preset"])
    if opts.get("seed") is not None:
        spec_doc["seed"] = opts["seed"]
    if opts.get("n_trials") is not None:
        spec_doc["n_trials"] = opts["n_trials"]
    spec = GenSpec.from_dict(spec_doc)
    # the echo pins the fully resolved spec so presets may change later
    cfg = _echo("gen", {"preset": None, "spec": spec.to_dict(), "seed": None, "n_trials": None})
    if args.output is None:
        raise UsageError("gen needs --output (the bundle is binary)")
    bundle = datagen.generate(spec)
    sections = datagen.bundle_sections(bundle) + [("CONFIG", json.dumps(cfg, sort_keys=True).encode())]
    datagen.write_container(args.output, sections)
    print(f"wrote {args.output}: {bundle.yet.n_trials} trials, {bundle.yet.n_events} events, sizes {bundle.byte_sizes}", file=sys.stderr)
    return EXIT_OK


def cmd_run(opts: dict, args) -> int:
    if not opts.get("bundle"):
        raise UsageError("run needs --bundle")
    bundle = datagen.read_bundle(opts["bundle"])
    cfg = _echo("run", opts)
    plan = engine.ExecutionPlan.even(bundle.yet.n_trials, int(opts["devices"]))
    t0 = time.perf_counter()
    ylt = engine.run_analysis(bundle, plan, int(opts["workers"]), opts["backend"])
    wall = time.perf_counter() - t0
    report = engine.metrics_report(ylt, opts["return_periods"], opts["tail_prob"], wall)
    print(f"analysis of {len(ylt)} trials on {plan.n_devices} device(s): {wall:.3f} s", file=sys.stderr)
    metrics = _json(cfg, report.to_dict())
    if args.metrics is not None:
        _atomic_write(args.metrics, metrics)
    if args.ylt_bin is not None:
        datagen.write_container(args.ylt_bin, [("YLT", datagen.encode_ylt(ylt)), ("CONFIG", json.dumps(cfg, sort_keys=True).encode())])
    if args.output is None:
        _emit(metrics, None)
    elif opts["format"] == "json":
        _emit(metrics, args.output)
    else:
        _emit(_with_comment(cfg, engine.ylt_to_csv(ylt)), args.output)
    return EXIT_OK


def _scenario(opts) -> sim.SimScenario:
    if opts.get("scenario"):
        doc = opts["scenario"] if isinstance(opts["scenario"], dict) else json.loads(Path(opts["scenario"]).read_text())
        return sim.SimScenario.from_dict(doc)
    params = _params(opts)
    build = sim.idealized_scenario if opts.get("idealized") else sim.calibrated_scenario
    scn = build(params, int(opts["P"]), int(opts["v"]), opts["mode"])
    return dataclasses.replace(scn, cell_seconds=float(opts["cell_seconds"]))


def cmd_sim(opts: dict, args) -> int:
    if opts.get("render_cells"):
        opts["format"] = "text"
    scn = _scenario(opts)
    cfg = _echo("sim", opts)
    tl = sim.simulate(scn)
    fmt = opts["format"]
    if fmt == "text":
        data = _with_comment(cfg, sim.render_cells(tl, scn.cell_seconds))
    elif fmt == "csv":
        data = _with_comment(cfg, tl.to_csv())
    else:
        summary = tl.summary()
        summary["cells"] = sim.n_cells(tl.makespan, scn.cell_seconds)
        summary["scenario"] = scn.to_dict()
        data = _json(cfg, summary)
    _emit(data, args.output)
    return EXIT_OK


def cmd_model(opts: dict, args) -> int:
    params = _params(opts)
    cfg = _echo("model", opts)
    pred = model.predict(int(opts["P"]), int(opts["v"]), params)
    if opts["format"] == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        row = pred.to_dict()
        w.writerow(row.keys())
        w.writerow(row.values())
        data = _with_comment(cfg, buf.getvalue())
    else:
        data = _json(cfg, pred.to_dict())
    _emit(data, args.output)
    return EXIT_OK


def cmd_plan(opts: dict, args) -> int:
    params = _params(opts)
    cfg = _echo("plan", opts)
    query = planner.PlanQuery(
        params,
        tuple(opts["p_range"]),
        tuple(opts["v_range"]),
        opts["objective"],
        bool(opts["memory_filter"]),
        tie_rtol=float(opts["tie_rtol"]),
    )
    table = planner.plan(query)
    if table.best is None:
        print("no feasible configuration in the requested grid", file=sys.stderr)
    else:
        b = table.best_row
        print(f"best: P={b.P} v={b.v} time={b.total_time:.4f}s energy={b.energy:.1f}Ws", file=sys.stderr)
    if opts["format"] == "csv":
        data = _with_comment(cfg, planner.export_plan(table, "csv").decode())
    else:
        doc = json.loads(planner.export_plan(table, "json"))
        if table.best is not None:
            doc["best_P"], doc["best_v"] = table.best
            doc["best_total_time_s"] = table.best_row.total_time
        else:
            doc["best_P"] = doc["best_v"] = None
            doc["result"] = "no feasible configuration"
        data = _json(cfg, doc)
    _emit(data, args.output)
    return EXIT_OK


def _sweep_point(job):
    params_doc, P, v, mode, idealized = job
    params = model.ModelParams.from_dict(params_doc)
    build = sim.idealized_scenario if idealized else sim.calibrated_scenario
    tl = sim.simulate(build(params, P, v, mode))
    pred = model.predict(P, v, params)
    return {
        "P": P,
        "v": v,
        "mode": mode,
        "sim_makespan_s": tl.makespan,
        "sim_energy_ws": tl.energy,
        "sim_product": tl.makespan * tl.energy,
        "sim_utilization_avg": tl.utilization_avg,
        "model_total_time_s": pred.total_time,
        "model_energy_ws": pred.energy,
        "model_product": pred.total_time * pred.energy,
        "model_regime": pred.regime,
    }


def sweep_rows(params: model.ModelParams, p_range, v_range, modes, idealized=False, workers=1) -> list[dict]:
    jobs = [
        (params.to_dict(), P, v, mode, idealized)
        for mode in modes
        for P in range(p_range[0], p_range[1] + 1)
        for v in range(v_range[0], v_range[1] + 1)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, jobs, chunksize=8))
    return [_sweep_point(j) for j in jobs]


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(x) if isinstance(x, float) else x for k, x in r.items()})
    return buf.getvalue()


def _series(rows, value_key, mode) -> str:
    """Pivot to one row per P and one column per v (plot-ready)."""
    sel = [r for r in rows if r["mode"] == mode]
    vs = sorted({r["v"] for r in sel})
    table = {}
    for r in sel:
        table.setdefault(r["P"], {})[r["v"]] = r[value_key]
    out = [{"P": P, **{f"v{v}": table[P].get(v) for v in vs}} for P in sorted(table)]
    return _csv_text(out)


def cmd_sweep(opts: dict, args) -> int:
    params = _params(opts)
    cfg = _echo("sweep", opts)
    for mode in opts["modes"]:
        if mode not in sim.MODES:
            raise UsageError(f"unknown mode {mode!r}")
    rows = sweep_rows(params, opts["p_range"], opts["v_range"], opts["modes"], bool(opts["idealized"]), int(opts["workers"]))
    if opts["format"] == "json":
        data = _json(cfg, {"rows": rows})
    else:
        data = _with_comment(cfg, _csv_text(rows))
    _emit(data, args.output)
    if args.series_dir is not None:
        args.series_dir.mkdir(parents=True, exist_ok=True)
        for mode in opts["modes"]:
            for name, key in (
                ("time_vs_P", "model_total_time_s"),
                ("energy_vs_P", "model_energy_ws"),
                ("product_vs_P", "model_product"),
                ("sim_time_vs_P", "sim_makespan_s"),
                ("sim_energy_vs_P", "sim_energy_ws"),
            ):
                _atomic_write(args.series_dir / f"{name}_{mode}.csv", _with_comment(cfg, _series(rows, key, mode)))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sim": cmd_sim, "model": cmd_model, "plan": cmd_plan, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve_options(args)
        return COMMANDS[args.command](opts, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
