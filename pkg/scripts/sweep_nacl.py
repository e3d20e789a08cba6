"""Sensitivity of the uniform-weight loss to its penalty weight on toy4.

    python3 scripts/sweep_nacl.py --out runs/sweep [--values 0.01,0.05,0.1,0.3,1] [--epochs 20]

Thin wrapper over ``crac sweep``; prints the resulting table.
"""

import argparse
import csv
import sys
from pathlib import Path

from crac import cli, datagen


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--values", default="0.01,0.05,0.1,0.3,1")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--loss", choices=("nacl", "crac-fixed"), default="nacl")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "toy4.crsd"
    if not data.exists():
        datagen.write_dataset(datagen.generate(datagen.PRESETS["toy4"]), data)
    cfg = out / "base.cfg"
    cfg.write_text(f"dataset = {data}\nout_dir = {out}\nseed = 0\n")
    code = cli.main(
        ["sweep", "--config", str(cfg), "--loss", args.loss, "--values", args.values, "--out", str(out), "--epochs", str(args.epochs), "--jobs", str(args.jobs)]
    )
    if code == 0:
        with open(out / "sweep.csv") as fh:
            for row in csv.DictReader(fh):
                print(f"lambda={row['lambda']:>6}  dsc={float(row['dsc']):.4f}  ece={float(row['ece']):.4f}  tace={float(row['tace']):.4f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
