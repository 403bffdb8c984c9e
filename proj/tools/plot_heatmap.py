#!/usr/bin/env python3
"""Render an (eta, zeta) RMSE heat map from a grid or compare-penalties CSV."""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("-o", "--output", default="heatmap.png")
    ap.add_argument("--method", help="row filter for compare-penalties output")
    args = ap.parse_args()

    df = pd.read_csv(args.csv)
    if "method" in df.columns:
        df = df[df["method"] == (args.method or df["method"].iloc[0])]
    table = df.pivot(index="eta", columns="zeta", values="rmse_mean").sort_index(ascending=False)

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(table.values, cmap="viridis")
    ax.set_xticks(range(len(table.columns)), [f"{z:g}" for z in table.columns])
    ax.set_yticks(range(len(table.index)), [f"{e:g}" for e in table.index])
    ax.set_xlabel("zeta (object attribute weight)")
    ax.set_ylabel("eta (user attribute weight)")
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            ax.text(j, i, f"{table.values[i, j]:.3f}", ha="center", va="center", color="w", fontsize=7)
    fig.colorbar(im, ax=ax, label="test RMSE")
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
