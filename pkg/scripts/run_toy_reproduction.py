"""Train CE and CRaC on toy4, evaluate both, and rank them.

    python3 scripts/run_toy_reproduction.py --out runs/toy [--epochs 40] [--losses ce,crac]

Writes one directory per loss (checkpoints, log.csv, metrics CSVs) and a
rank table plus logit histograms under <out>/report.
"""

import argparse
import sys
from pathlib import Path

from crac import cli, datagen, trainer


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--losses", default="ce,crac", help="comma-separated loss kinds")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "toy4.crsd"
    if not data.exists():
        datagen.write_dataset(datagen.generate(datagen.PRESETS["toy4"]), data)
    ds = datagen.read_dataset(data)

    extra = dict(kv.split("=", 1) for kv in args.set)
    metric_files = []
    for loss in args.losses.split(","):
        text = "\n".join(
            [f"dataset = {data}", f"out_dir = {out / loss}", f"loss = {loss}", f"epochs = {args.epochs}", f"seed = {args.seed}"]
            + [f"{k} = {v}" for k, v in extra.items()]
        )
        cfg = trainer.parse_config(text)
        res = trainer.train(cfg, dataset=ds)
        rep = trainer.evaluate(res.checkpoint, ds, "test")
        cli.write_eval_outputs(out / loss, loss, "test", rep)
        metric_files.append(out / loss / "metrics.csv")
        print(loss, " ".join(f"{k}={v:.4f}" for k, v in rep.summary().items()), flush=True)
        if res.state is not None:
            print("  final lambda (class x [inner, outer]):", res.state.lam.round(4).tolist())
            print("  final rho:", res.state.rho.round(3).tolist())
    return cli.main(["report", *map(str, metric_files), "--out", str(out / "report"), "--svg"])


if __name__ == "__main__":
    sys.exit(main())
