"""Plot CSVs written by `qsmooth estimate` and `qsmooth costs`.

    python scripts/plot.py estimate OUT_DIR [--save fig.png]
    python scripts/plot.py costs OUT_DIR [--save fig.png]
"""

import argparse
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


def read(path):
    return pd.read_csv(path, comment="#")


def estimate(out: Path, ax):
    for path in sorted(out.glob("*.csv")):
        if path.stem in ("effects",) or path.stem.startswith(("pdf_", "q5_cdj")):
            continue
        df = read(path)
        style = "k--" if path.stem == "filtered" else "-"
        ax[0].plot(df.t, df.theta, style, label=path.stem)
        ax[1].plot(df.t, df.R, style, label=path.stem)
    ax[0].set_ylabel("theta")
    ax[1].set_ylabel("R")
    ax[1].set_xlabel("t")
    ax[0].legend()


def costs(out: Path, ax):
    for i, cost in enumerate(["c1", "c2", "c8"]):
        for path in sorted(out.glob("costs_*.csv")):
            df = read(path)
            if cost in df:
                ax[i].plot(df.t, df[cost], label=path.stem.removeprefix("costs_"))
        ax[i].set_ylabel(cost)
    ax[-1].set_xlabel("t")
    ax[0].legend(ncol=3, fontsize="small")
    table = out / "jump_average_table.csv"
    if table.exists():
        print(read(table).to_string(index=False))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("kind", choices=["estimate", "costs"])
    ap.add_argument("out", type=Path)
    ap.add_argument("--save", type=Path)
    args = ap.parse_args()
    rows = 2 if args.kind == "estimate" else 3
    fig, ax = plt.subplots(rows, 1, sharex=True, figsize=(7, 2.5 * rows))
    (estimate if args.kind == "estimate" else costs)(args.out, ax)
    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
