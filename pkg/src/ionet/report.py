"""PNG figures rendered next to the CSV outputs of an evaluation."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .training import read_history  # noqa: E402

# no timestamps or versions in the files, so reruns are byte-identical
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_history(history_path, path) -> None:
    rows = read_history(history_path)
    if not rows:
        return
    it = np.array([r["iteration"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in rows[0]:
        if key in ("iteration", "lr"):
            continue
        vals = np.array([r[key] for r in rows])
        if np.any(vals > 0):
            ax.semilogy(it, np.maximum(vals, 1e-300), lw=0.8 if key != "total" else 1.4, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_1d(labels, pred, per, path, shown=5) -> None:
    x = labels.points[:, 0]
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for i in range(min(shown, len(pred))):
        for s in np.unique(labels.sides):
            m = labels.sides == s
            line, = top.plot(x[m], labels.values[i, m], lw=1.2, color=f"C{i}")
            top.plot(x[m], pred[i, m], "--", lw=1.0, color=line.get_color())
            bottom.semilogy(x[m], np.abs(labels.values[i, m] - pred[i, m]) + 1e-16, lw=0.8, color=f"C{i}")
    top.set_ylabel("u (solid: reference, dashed: model)")
    bottom.set_ylabel("|error|")
    bottom.set_xlabel("x")
    top.set_title(f"mean relative L2 = {np.mean(per):.3e}")
    _save(fig, path)


def plot_2d(labels, pred, path) -> None:
    n = int(round(np.sqrt(len(labels.points))))
    shape = (n, n)
    X, Y = labels.points[:, 0].reshape(shape), labels.points[:, 1].reshape(shape)
    ref, out = labels.values[0].reshape(shape), pred[0].reshape(shape)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for ax, data, title in zip(axes, (ref, out, np.abs(ref - out)), ("reference", "model", "|error|")):
        im = ax.pcolormesh(X, Y, data, shading="auto")
        ax.set_aspect("equal")
        ax.set_title(title)
        fig.colorbar(im, ax=ax)
    _save(fig, path)


def plot_scatter(labels, pred, path) -> None:
    r = np.linalg.norm(labels.points, axis=1)
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    a.scatter(labels.values[0], pred[0], s=2)
    lim = [labels.values[0].min(), labels.values[0].max()]
    a.plot(lim, lim, "k--", lw=0.8)
    a.set_xlabel("reference")
    a.set_ylabel("model")
    b.semilogy(r, np.abs(labels.values[0] - pred[0]) + 1e-16, ".", ms=2)
    b.set_xlabel("|x|")
    b.set_ylabel("|error|")
    _save(fig, path)


def render_figures(cfg, geom, fs, labels, pred, per, paths) -> list:
    out = paths["figures"]
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if paths["history"].exists():
        plot_history(paths["history"], out / "history.png")
        made.append(out / "history.png")
    target = out / "solutions.png"
    if geom.kind == "interval":
        plot_1d(labels, pred, per, target)
    elif geom.kind == "square-astroid":
        plot_2d(labels, pred, target)
    else:
        plot_scatter(labels, pred, target)
    made.append(target)
    return made
