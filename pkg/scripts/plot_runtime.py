"""Plot median encoder time against sequence length from a ``ctrn bench`` CSV.

    python3 scripts/plot_runtime.py runtime.csv runtime.png

Needs matplotlib (``pip install .[plot]``).
"""

import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("png")
    args = ap.parse_args()

    series = defaultdict(list)
    with open(args.csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            series[row["kind"]].append((int(row["L"]), float(row["median_ms"])))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind.upper())
    ax.set_xlabel("sequence length L")
    ax.set_ylabel("median ms (forward + backward)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.png, dpi=120)


if __name__ == "__main__":
    main()
