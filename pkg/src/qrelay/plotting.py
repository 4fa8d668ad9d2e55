"""Figures written next to the stats file of a scenario run."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.2),
    "savefig.dpi": 120,
}


def new():
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
    return fig, ax


def save(fig, path):
    # no timestamp metadata, so reruns produce identical files
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _col(rows, name):
    return np.array([float(r[name]) for r in rows])


def qber_by_attack(rows, ax):
    labels = [r["attack"] for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, _col(rows, "qber_ab"), 0.4, label="Alice-Bob QBER")
    ax.bar(x + 0.2, _col(rows, "trent_residual"), 0.4, label="Trent wrong, Bob right")
    for level in (0.25, 0.375, 0.0625, 0.125):
        ax.axhline(level, color="0.7", lw=0.6, ls=":")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("fraction of sifted bits")
    ax.legend(frameon=False)


def sift_vs_relays(rows, ax):
    n = _col(rows, "relays")
    ax.semilogy(n, _col(rows, "kept_fraction"), "o", label="simulated")
    grid = np.arange(n.min(), n.max() + 1)
    ax.semilogy(grid, 2.0 ** -(grid + 1), "-", color="0.4", lw=0.8, label=r"$2^{-(N+1)}$")
    ax.set_xlabel("relays N")
    ax.set_ylabel("kept fraction")
    ax.legend(frameon=False)


def vs_distance(rows, ax):
    d = np.array([float(r["label"].split("length_km=")[1].split(";")[0]) for r in rows])
    ax.semilogy(d, _col(rows, "transmission"), "-", label="expected")
    ax.semilogy(d, _col(rows, "detected_fraction"), "o", label="simulated")
    ax.set_xlabel("leg length (km)")
    ax.set_ylabel("fraction reaching every party")
    ax.legend(frameon=False)


def xor_length(rows, ax):
    n = _col(rows, "relays")
    ax.plot(n, _col(rows, "final_key_length"), "o-", label="final key")
    ax.plot(n, _col(rows, "L"), "s--", label="L")
    ax.set_xlabel("relays N")
    ax.set_ylabel("bits")
    ax.legend(frameon=False)


def by_run(rows, ax):
    x = np.arange(len(rows))
    ax.plot(x, _col(rows, "kept_fraction"), "o-", label="kept fraction")
    ax.plot(x, _col(rows, "qber_ab"), "s-", label="Alice-Bob QBER")
    ax.set_xticks(x)
    ax.set_xticklabels([r["label"] for r in rows], rotation=30, ha="right", fontsize=6)
    ax.legend(frameon=False)


FIGURES = {
    "qber-by-attack": qber_by_attack,
    "sift-vs-relays": sift_vs_relays,
    "vs-distance": vs_distance,
    "xor-length": xor_length,
    "by-run": by_run,
}


def render(kind: str, rows, path, title: str = ""):
    """Draw figure ``kind`` from stats rows (dicts of strings) into ``path``."""
    try:
        draw = FIGURES[kind]
    except KeyError:
        raise ValueError(f"unknown figure {kind!r}; expected one of {', '.join(FIGURES)}") from None
    fig, ax = new()
    draw(rows, ax)
    if title:
        ax.set_title(title, fontsize=9)
    save(fig, path)
