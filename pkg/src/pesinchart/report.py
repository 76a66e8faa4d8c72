"""File exporters (CSV, JSON, DOT text) and matplotlib figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .system import torus_delta  # noqa: E402

__all__ = ["write_csv", "write_json", "write_text", "read_csv_header", "save_figure",
           "plot_exponents", "plot_manifolds", "plot_decay", "plot_cover", "plot_equivariance"]


def _cell(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(repr(float(x)) for x in np.ravel(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_csv(path: Path, header: dict, columns: list[str], rows: list) -> Path:
    """CSV with '# key: json' comment lines carrying the run header."""
    buf = io.StringIO()
    for k in sorted(header):
        buf.write(f"# {k}: {json.dumps(header[k], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    path.write_text(buf.getvalue())
    return path


def read_csv_header(path: Path) -> tuple[dict, list[dict]]:
    meta, body = {}, []
    for line in Path(path).read_text().splitlines(keepends=True):
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = json.loads(v)
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def write_json(path: Path, header: dict, body: dict) -> Path:
    doc = {"meta": header, **body}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, default=_default) + "\n")
    return path


def write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def save_figure(fig, path: Path, header: dict) -> Path:
    meta = {"Title": path.stem, "Description": json.dumps(header, sort_keys=True)}
    fig.savefig(path, dpi=100, metadata=meta)
    plt.close(fig)
    return path


def plot_exponents(rows: list[dict]):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for j in range(len(rows[0]["exponents"])):
        ax.plot([r["exponents"][j] for r in rows], "o", ms=3, label=f"exponent {j}")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("orbit")
    ax.set_ylabel("nats / iterate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def plot_manifolds(coded: list, max_points: int = 6):
    """Stable and unstable graphs of coded points in their chart coordinates."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for cp in coded[:max_points]:
        if cp.vs.repr.in_dim != 1:
            continue
        for man, style in ((cp.vs, "-"), (cp.vu, "--")):
            t = man.repr.axis
            y = man.repr.values.reshape(len(t), -1)[:, 0]
            xy = (t, y) if man.kind == "s" else (y, t)
            ax.plot(*xy, style, lw=0.8)
        ax.plot(*cp.coords[:2], "k.", ms=4)
    ax.set_xlabel("stable coordinate")
    ax.set_ylabel("unstable coordinate")
    fig.tight_layout()
    return fig


def plot_decay(rows: list[dict], rate: float):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ns = np.array([r["n"] for r in rows])
    c0 = np.array([r["c0"] for r in rows])
    ax.semilogy(ns, c0, "o-", label="measured")
    if len(ns) and c0[0] > 0:
        ax.semilogy(ns, c0[0] * rate ** (ns - ns[0]), "k:", label="bound rate")
    ax.set_xlabel("n")
    ax.set_ylabel("sup distance")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def plot_cover(cells: list, frame):
    """Cell members in the chart coordinates of the first cell."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for i, c in enumerate(cells):
        pts = np.array([m.point for m in c.members])
        coords = torus_delta(pts, frame.point) @ frame.c_inverse.T
        ax.plot(coords[:, 0], coords[:, -1], ".", ms=4, label=f"cell {i}")
    ax.set_xlabel("stable coordinate")
    ax.set_ylabel("unstable coordinate")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return fig


def plot_equivariance(defects: list[float]):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    d = np.maximum(np.asarray(defects, dtype=float), 1e-18)
    ax.semilogy(d, "o", ms=3)
    ax.set_xlabel("coded chain")
    ax.set_ylabel("shift defect")
    fig.tight_layout()
    return fig
