"""Matplotlib figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _save(fig, out_dir: Path, name: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.png"
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def verdict_grid(doc: dict, out_dir: Path) -> Path:
    props = ["commutativity", "associativity", "idempotency"]
    if doc["command"] == "phase2":
        props.append("convergence")
    names = [v["strategy"] for v in doc["verdicts"]]
    grid = np.array([[1.0 if v[p] else 0.0 for p in props] for v in doc["verdicts"]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * len(props) + 2, 0.32 * len(names) + 1))
        ax.imshow(grid, cmap="RdYlGn", vmin=0, vmax=1, aspect="auto")
        ax.set_xticks(range(len(props)), [p[:5].title() + "." for p in props])
        ax.set_yticks(range(len(names)), names)
        for (i, j), val in np.ndenumerate(grid):
            ax.text(j, i, "P" if val else "F", ha="center", va="center")
        ax.set_title(f"{doc['command']}: property verdicts")
        return _save(fig, out_dir, f"{doc['command']}_verdicts")


def convergence_timings(doc: dict, out_dir: Path) -> Path:
    rows = doc["orderings"]
    x = [r["ordering"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
        a1.bar(x, [r["gossip_ms"] for r in rows], color="C0")
        a1.set_xlabel("ordering")
        a1.set_ylabel("gossip [ms]")
        a2.bar(x, [r["resolve_ms"] for r in rows], color="C1")
        a2.set_xlabel("ordering")
        a2.set_ylabel("resolve, all nodes [ms]")
        fig.suptitle(f"{doc['config']['nodes']} nodes, max diff {max((r['max_diff'] for r in rows), default=0):g}")
        return _save(fig, out_dir, "converge_timings")


def scalability(doc: dict, out_dir: Path) -> Path:
    rows = doc["rows"]
    n = np.array([r["nodes"] for r in rows], dtype=float)
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
        a1.loglog(n, [r["merges"] for r in rows], "o-", label="merge calls")
        a1.loglog(n, n * (n - 1), "k:", label="n(n-1)")
        a1.set_xlabel("nodes")
        a1.legend()
        a2.plot(n, [r["gossip_ms"] for r in rows], "o-", label="gossip")
        a2.plot(n, [r["resolve_ms"] for r in rows], "s-", label="resolve")
        a2.set_xlabel("nodes")
        a2.set_ylabel("ms")
        a2.legend()
        return _save(fig, out_dir, "bench_scalability")


def sweep(doc: dict, out_dir: Path) -> Path:
    rows = doc["strategies"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(rows) + 1))
        ax.barh([r["strategy"] for r in rows], [r["resolve_ms"] for r in rows],
                color=["C2" if r["single_hash"] else "C3" for r in rows])
        ax.invert_yaxis()
        ax.set_xlabel("resolve, all nodes [ms]")
        return _save(fig, out_dir, "sweep_resolve")


def partition(doc: dict, out_dir: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(["partition gossip", "healing"], [doc["partition_gossip_ms"], doc["healing_ms"]], color=["C0", "C1"])
        ax.set_ylabel("ms")
        ax.set_title(f"{doc['nodes']} nodes / {doc['partitions']} partitions")
        return _save(fig, out_dir, "partition_timings")


RENDERERS = {
    "phase1": verdict_grid,
    "phase2": verdict_grid,
    "converge": convergence_timings,
    "bench": scalability,
    "sweep": sweep,
    "partition": partition,
}


def render_figures(doc: dict, out_dir) -> list[Path]:
    fn = RENDERERS.get(doc["command"])
    return [fn(doc, Path(out_dir))] if fn else []
