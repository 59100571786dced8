"""Screening-accuracy table for one or more simulation designs.

Prints one row per (model, r, m) cell with the minimum-model-size quantiles,
the coverage probability at the reporting size and the true-positive rates of
the two model-size selectors.

    python scripts/run_screening_table.py --models a b --replications 20 --jobs 4
"""
from __future__ import annotations

import argparse
import itertools
import os

from evtscreen.simulation import SimulationSpec, aggregate, run_simulation


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["a", "b", "c", "d"])
    ap.add_argument("--r", nargs="+", type=float, default=[0.2, 0.5])
    ap.add_argument("--m", nargs="+", type=float, default=[0.2, 0.5])
    ap.add_argument("--n", type=int, default=2500)
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--k", default="400")
    ap.add_argument("--h", default="0.3")
    ap.add_argument("--no-select", action="store_true", help="skip the model-size selectors")
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args(argv)

    header = ["model", "r", "m", "S_5%", "S_25%", "S_50%", "S_75%", "S_95%", "P", "TP*", "TP**", "fail"]
    print(" ".join(f"{h:>6}" for h in header))
    for model, r, m in itertools.product(args.models, args.r, args.m):
        spec = SimulationSpec.from_mapping({
            "model": model, "n": args.n, "p": args.p, "r": r, "m": m,
            "replications": args.replications, "seed": args.seed, "k": args.k, "h": args.h,
            "select": not args.no_select,
        })
        rep = aggregate(run_simulation(spec, n_jobs=args.jobs), spec.reporting_size)
        vals = [model, r, m, *rep.S_quantiles, rep.P, rep.TP_star, rep.TP_double_star, rep.failures]
        print(" ".join(f"{v:>6.3g}" if isinstance(v, float) else f"{v:>6}" for v in vals), flush=True)


if __name__ == "__main__":
    main()
