"""CSV and SVG artifact writers.

CSV files are UTF-8 with LF line endings and a header row. Floats are written
with ``repr`` so they round-trip exactly; missing values (nan, None) are empty
fields and arrays become ``;``-joined lists.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, np.ndarray):
        return ";".join(format_value(a) for a in v.ravel().tolist())
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0]) if rows else []
        for r in rows:
            columns += [c for c in r if c not in columns]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def to_float(s: str) -> float:
    return float(s) if s != "" else math.nan


# -- plots ----------------------------------------------------------------------------
def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "curvprobe"
    fig, ax = plt.subplots(figsize=(5, 4))
    return plt, fig, ax


def _save(plt, fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def reliability_svg(path, rows: list[dict]) -> Path:
    plt, fig, ax = _figure()
    lo = np.array([r["lo"] for r in rows], float)
    hi = np.array([r["hi"] for r in rows], float)
    acc = np.array([r["acc"] for r in rows], float)
    ax.bar(lo, acc, width=hi - lo, align="edge", edgecolor="k", color="tab:blue", alpha=0.7, label="accuracy")
    ax.plot([0, 1], [0, 1], "k--", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    return _save(plt, fig, path)


def scatter_svg(path, x, y, xlabel: str, ylabel: str, means: tuple | None = None, logy: bool = False) -> Path:
    plt, fig, ax = _figure()
    ax.scatter(x, y, s=6, alpha=0.6)
    if means is not None:
        ax.plot(means[0], means[1], "k-", lw=1.5)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(plt, fig, path)


def histogram_svg(path, groups: dict[str, np.ndarray], xlabel: str, bins: int = 30) -> Path:
    plt, fig, ax = _figure()
    for name, values in groups.items():
        v = np.asarray(values, float)
        v = v[np.isfinite(v)]
        if v.size:
            ax.hist(v, bins=bins, alpha=0.5, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if groups:
        ax.legend()
    return _save(plt, fig, path)


def heatmap_svg(path, matrix: np.ndarray, xlabel: str, ylabel: str, vlim: float | None = None) -> Path:
    plt, fig, ax = _figure()
    m = np.asarray(matrix, float)
    if m.size:
        kw = {"vmin": -vlim, "vmax": vlim} if vlim else {}
        im = ax.imshow(m, aspect="auto", interpolation="nearest", cmap="coolwarm", **kw)
        fig.colorbar(im, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(plt, fig, path)


def bar_svg(path, labels, values, xlabel: str, ylabel: str) -> Path:
    plt, fig, ax = _figure()
    ax.bar(range(len(values)), np.nan_to_num(np.asarray(values, float)))
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([str(s) for s in labels], rotation=45, fontsize=7)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(plt, fig, path)


def grid_svg(path, points: np.ndarray) -> Path:
    """Projected grid points with row and column neighbors connected."""
    plt, fig, ax = _figure()
    p = np.asarray(points, float)
    for i in range(p.shape[0]):
        ax.plot(p[i, :, 0], p[i, :, 1], "-", color="0.6", lw=0.7)
    for j in range(p.shape[1]):
        ax.plot(p[:, j, 0], p[:, j, 1], "-", color="0.6", lw=0.7)
    ax.scatter(p[..., 0].ravel(), p[..., 1].ravel(), s=8)
    c = p.shape[0] // 2
    ax.scatter([p[c, c, 0]], [p[c, c, 1]], s=30, color="red", zorder=3)
    ax.set_xlabel("px")
    ax.set_ylabel("py")
    return _save(plt, fig, path)
