"""Friedman ranks of the published UNet comparison table under both tie rules.

    python3 scripts/rank_published_table.py [--csv tests/data/table1_unet.csv]
"""

import argparse
from pathlib import Path

from crac import metrics

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "data" / "table1_unet.csv"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", default=str(DEFAULT))
    args = ap.parse_args(argv)
    table = metrics.read_rank_csv([args.csv])
    for ties in ("average", "min"):
        res = metrics.friedman_rank(table, ties=ties)
        print(f"ties = {ties}")
        for m in res.ordering():
            i = res.methods.index(m)
            print(f"  {int(res.final[i]):>2}  {res.rank_f[i]:.3f}  {m}")


if __name__ == "__main__":
    main()
