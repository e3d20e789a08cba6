"""Command-line entry point: ``crac {gen,train,eval,sweep,report,check}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or an
invalid config). Every output lands under the directory given by ``--out``
(or the config's ``out_dir`` for ``train``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datagen, metrics, trainer, verify
from .checkpoint import CheckpointError

log = logging.getLogger("crac")

SWEEP_SCHEMA = "sweep-v1"
RANK_SCHEMA = "rank-v1"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    spec = datagen.PRESETS[args.preset]
    if args.seed is not None:
        spec = datagen.DatasetSpec(**{**spec.__dict__, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.preset}.crsd"
    datagen.write_dataset(datagen.generate(spec), path)
    print(path)
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = v
    return out


def _load_config(path, pairs, **extra):
    text = Path(path).read_text()
    # overrides go through the same parser as file lines
    lines = [text] + [f"{k} = {v}" for k, v in {**_overrides(pairs), **extra}.items()]
    return trainer.parse_config("\n".join(lines))


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set)
    if args.resume and not Path(args.resume).exists():
        raise UsageError(f"--resume {args.resume}: no such checkpoint")
    result = trainer.train(cfg, resume=args.resume)
    print(result.checkpoint)
    return 0


def write_eval_outputs(out: Path, method: str, split: str, report: metrics.MetricsReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_metrics_csv(out / "metrics.csv", method, split, report)
    metrics.write_per_class_csv(out / "per_class.csv", report)
    metrics.write_reliability_csv(out / "reliability.csv", report.reliability)
    metrics.write_histogram_csv(out / "histogram.csv", report.histogram_edges, report.histograms)


def cmd_eval(args) -> int:
    ds = datagen.read_dataset(args.data)
    report = trainer.evaluate(args.ckpt, ds, args.split, bins=args.bins, ranges=args.ranges)
    method = args.method or Path(args.ckpt).resolve().parent.name
    write_eval_outputs(Path(args.out), method, args.split, report)
    s = report.summary()
    print(" ".join(f"{k}={v:.4f}" for k, v in s.items()))
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_one(job):
    cfg_text, loss, value, run_dir = job
    extra = {"loss": loss, "out_dir": str(run_dir)}
    if loss == "nacl":
        extra["nacl_lambda"] = value
    else:
        extra["lambda_inner"] = extra["lambda_outer"] = value
    cfg = trainer.parse_config(cfg_text + "\n" + "\n".join(f"{k} = {v}" for k, v in extra.items()))
    ds = datagen.read_dataset(cfg.dataset)
    result = trainer.train(cfg, dataset=ds)
    report = trainer.evaluate(result.checkpoint, ds, "test")
    write_eval_outputs(Path(run_dir), f"{loss}@{value}", "test", report)
    return report.summary()


def parse_values(raw: str) -> list[str]:
    vals = [v.strip() for v in raw.split(",") if v.strip()]
    if not vals:
        raise UsageError("--values must list at least one value")
    for v in vals:
        try:
            if float(v) < 0:
                raise UsageError(f"negative penalty weight {v}")
        except ValueError:
            raise UsageError(f"not a number: {v!r}") from None
    return vals


def cmd_sweep(args) -> int:
    values = parse_values(args.values)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    text = Path(args.config).read_text()
    if args.epochs is not None:
        text += f"\nepochs = {args.epochs}"
    trainer.parse_config(text, loss=args.loss, out_dir=args.out)  # fail fast on a bad config
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(text, args.loss, v, out / f"{args.loss}_{v}") for v in values]
    if args.jobs == 1:
        summaries = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(args.jobs) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema", "loss", "lambda", *metrics.METRIC_COLUMNS])
        for v, s in zip(values, summaries):
            w.writerow([SWEEP_SCHEMA, args.loss, v, *(repr(float(s[c])) for c in metrics.METRIC_COLUMNS)])
    print(out / "sweep.csv")
    return 0


# ---------------------------------------------------------------------------
# report


def write_rank_csv(path, table: metrics.RankTable, result: metrics.FriedmanResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema", "method", *(f"rank_{s}" for s in table.settings), "friedman_rank", "final_rank"])
        for i, m in enumerate(result.methods):
            w.writerow(
                [RANK_SCHEMA, m, *(repr(float(r)) for r in result.per_setting[i]), repr(float(result.rank_f[i])), int(result.final[i])]
            )


def histogram_svg(edges, histograms, title: str = "") -> str:
    """Minimal step-line SVG of the logit histograms, one colour per role."""
    w, h, pad = 480, 240, 30
    peak = max(1, max(int(np.max(v)) for v in histograms.values()))
    lo, hi = float(edges[0]), float(edges[-1])
    colours = {"winner": "#1f77b4", "runner_up": "#d62728", "true_class": "#2ca02c"}

    def sx(x):
        return pad + (x - lo) / (hi - lo) * (w - 2 * pad)

    def sy(c):
        return h - pad - c / peak * (h - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<text x="{pad}" y="{pad - 10}" font-size="12">{title}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
    ]
    for row, (role, counts) in enumerate(histograms.items()):
        pts = []
        for i, c in enumerate(counts):
            pts += [f"{sx(edges[i]):.1f},{sy(c):.1f}", f"{sx(edges[i + 1]):.1f},{sy(c):.1f}"]
        parts.append(f'<polyline fill="none" stroke="{colours.get(role, "gray")}" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{w - pad - 90}" y="{pad + 14 * row}" font-size="11" fill="{colours.get(role, "gray")}">{role}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _read_histogram(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = np.array([float(r["lower"]) for r in rows] + [float(rows[-1]["upper"])])
    return edges, {role: np.array([int(r[role]) for r in rows]) for role in metrics.HIST_ROLES}


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.metrics]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise UsageError(f"no such file: {', '.join(missing)}")
    table = metrics.read_rank_csv(paths)
    result = metrics.friedman_rank(table, ties=args.ties)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rank_csv(out / "rank.csv", table, result)
    # histogram.csv sits next to each metrics.csv written by ``eval``
    methods = iter(table.methods)
    for p in paths:
        with open(p, newline="") as fh:
            names = [r.get("method") or p.stem for r in csv.DictReader(fh)]
        hist = p.parent / "histogram.csv"
        for name in names:
            next(methods)
            if not hist.exists():
                continue
            safe = "".join(ch if ch.isalnum() or ch in "-_.@" else "_" for ch in name)
            shutil.copyfile(hist, out / f"histogram_{safe}.csv")
            if args.svg:
                edges, h = _read_histogram(hist)
                (out / f"histogram_{safe}.svg").write_text(histogram_svg(edges, h, name))
    for m in result.ordering():
        i = result.methods.index(m)
        print(f"{int(result.final[i]):>3}  {result.rank_f[i]:.3f}  {m}")
    return 0


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    results = verify.run_all(args.trials, inject_noncompliant=args.inject_noncompliant)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crac", description="Class and region-adaptive calibration toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--preset", choices=sorted(datagen.PRESETS), default="toy4", help="dataset preset (default toy4)")
    g.add_argument("--seed", type=int, default=None, help="override the preset seed")
    g.add_argument("--out", required=True, help="output directory; writes <preset>.crsd")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True, help="checkpoint (.crck)")
    e.add_argument("--data", required=True, help="dataset (.crsd)")
    e.add_argument("--split", choices=datagen.SPLITS, default="test", help="split to score (default test)")
    e.add_argument("--out", required=True, help="output directory for the CSVs")
    e.add_argument("--method", default=None, help="method label (default: checkpoint directory name)")
    e.add_argument("--bins", type=int, default=10, help="ECE bins (default 10)")
    e.add_argument("--ranges", type=int, default=15, help="TACE ranges per class (default 15)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate once per penalty weight")
    s.add_argument("--config", required=True, help="base config file")
    s.add_argument("--loss", choices=("nacl", "crac-fixed"), required=True)
    s.add_argument("--values", required=True, help="comma-separated penalty weights")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--epochs", type=int, default=None, help="override the config's epochs")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="Friedman rank table and logit histograms")
    r.add_argument("metrics", nargs="+", help="metrics CSVs written by eval")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--ties", choices=("average", "min"), default="average", help="tie rule within a setting")
    r.add_argument("--svg", action="store_true", help="also render histogram SVGs")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("check", help="run penalty, gradient and toy-ALM self-checks")
    c.add_argument("--trials", type=int, default=100, help="random instances per loss (default 100)")
    c.add_argument("--inject-noncompliant", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, trainer.ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"crac {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (
        OSError,
        ValueError,
        ArithmeticError,
        RuntimeError,
        CheckpointError,
        datagen.FormatError,
    ) as exc:
        print(f"crac {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
