"""Compare the numba and numpy analysis kernels on a generated bundle.

    python benchmarks/bench_kernel.py --trials 100000 --repeat 3

Each backend gets one untimed warm-up run (numba compilation, page faults),
then ``--repeat`` timed runs; the best is reported. Both backends must
produce the same YLT bytes, which is checked on every run.
"""

import argparse
import json
import sys
import time

from vgpurisk import _kernels
from vgpurisk.datagen import GenSpec, generate, load_preset
from vgpurisk.engine import ExecutionPlan, run_analysis


def bench(bundle, backend, repeat, devices, workers):
    plan = ExecutionPlan.even(bundle.yet.n_trials, devices)
    ylt = run_analysis(bundle, plan, workers, backend)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_analysis(bundle, plan, workers, backend)
        best = min(best, time.perf_counter() - t0)
    return best, ylt.losses.tobytes()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--preset", default="paper-mini")
    ap.add_argument("--trials", type=int, default=None, help="override n_trials")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--devices", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    doc = load_preset(args.preset)
    if args.trials:
        doc["n_trials"] = args.trials
    bundle = generate(GenSpec.from_dict(doc))
    lookups = sum(len(layer.elt_refs) for layer in bundle.portfolio.layers()) * bundle.yet.n_events

    backends = [b for b in _kernels.BACKENDS if b != "numba" or _kernels.HAVE_NUMBA]
    results, outputs = {}, {}
    for backend in backends:
        secs, outputs[backend] = bench(bundle, backend, args.repeat, args.devices, args.workers)
        results[backend] = {"seconds": secs, "lookups_per_s": lookups / secs}
    identical = len(set(outputs.values())) == 1

    print(json.dumps({
        "trials": bundle.yet.n_trials,
        "events": bundle.yet.n_events,
        "lookups": lookups,
        "devices": args.devices,
        "workers": args.workers,
        "results": results,
        "bitwise_identical": identical,
    }, indent=2))
    if "numba" in results:
        print(f"numba speed-up over numpy: {results['numpy']['seconds'] / results['numba']['seconds']:.2f}x", file=sys.stderr)
    return 0 if identical else 1


if __name__ == "__main__":
    sys.exit(main())
