"""Multi-run solver campaign on a preset, with the budget trimmed from the command line.

    python scripts/run_campaign.py friction --method svi --runs 5 --n-g 20 --out runs/friction_svi
"""
import argparse
import csv
import logging

from symrl.experiment import PRESETS, preset_config, run_experiment, with_overrides


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("preset", choices=sorted(PRESETS))
    ap.add_argument("--method", choices=["svi", "spi", "direct"], default="svi")
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-i", type=int)
    ap.add_argument("--n-g", type=int)
    ap.add_argument("--population", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    changes = {"solver.method": args.method, "n_r": args.runs, "seed": args.seed}
    if args.n_i is not None:
        changes["solver.n_i"] = args.n_i
    if args.n_g is not None:
        changes["solver.gp.n_g"] = args.n_g
    if args.population is not None:
        changes["solver.gp.population_size"] = args.population
    cfg = with_overrides(preset_config(args.preset), changes)
    out = args.out or f"runs/{args.preset}_{args.method}"
    res = run_experiment(cfg, out, threads=args.threads)
    with open(res.out / "summary.csv", newline="") as fh:
        for k, v in next(csv.DictReader(fh)).items():
            print(f"{k:16s} {v}")
    if res.failures:
        print(f"failed runs: {sorted(res.failures)}")


if __name__ == "__main__":
    main()
