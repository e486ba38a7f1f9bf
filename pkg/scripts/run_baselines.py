"""Fuzzy V-iteration baselines for every preset, one table row each.

    python scripts/run_baselines.py --out runs/baselines
"""
import argparse
import csv
from pathlib import Path

from symrl.experiment import PRESETS, preset_config, run_baseline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/baselines")
    ap.add_argument("--presets", nargs="+", default=sorted(PRESETS), choices=sorted(PRESETS))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.presets:
        res = run_baseline(preset_config(name), out / name)
        res.pop("approximator")
        rows.append({"preset": name, **res})
        print(f"{name:9s} BE={res['BE']:.3e} R_gamma={res['R_gamma']:.4f} S={res['S']:.1f} "
              f"params={res['params']} ({res['wall_s']:.1f}s)")
    with open(out / "baselines.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
