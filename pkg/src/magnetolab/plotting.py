"""SVG renderings of CLI results: trajectories, certificate grids, grading histograms.

Output is byte-stable for a fixed input: the SVG id salt is pinned and the
date metadata dropped.
"""

from __future__ import annotations

import csv
import io
from collections import Counter

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import ConfigError, parse_json  # noqa: E402

KINDS = ("trajectory", "certificate", "grading")

_RC = {"svg.hashsalt": "magnetolab", "svg.fonttype": "none", "font.size": 9,
       "path.simplify": False}


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _svg(fig):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "magnetolab"})
    plt.close(fig)
    return buf.getvalue()


def trajectory_svg(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    need = {"t", "chart", "q1", "q2"}
    if not rows or not need <= set(rows[0]):
        raise ConfigError("trajectory plot needs a simulate CSV (columns t,chart,q1,q2,...)")
    chart = np.array([int(r["chart"]) for r in rows])
    q = np.array([[float(r["q1"]), float(r["q2"])] for r in rows])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    # one polyline per run of constant chart
    cuts = np.flatnonzero(np.diff(chart)) + 1
    for seg_c, seg_q in zip(np.split(chart, cuts), np.split(q, cuts)):
        ax.plot(seg_q[:, 0], seg_q[:, 1], lw=0.8, color=f"C{int(seg_c[0]) % 10}")
    ax.plot(q[:1, 0], q[:1, 1], "o", ms=3, color="k")
    ax.set_xlabel("q1")
    ax.set_ylabel("q2")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title("base projection")
    return _svg(fig)


def certificate_svg(doc):
    if isinstance(doc, dict) and "certificates" in doc:
        certs = doc["certificates"]
    elif isinstance(doc, dict) and "verdict" in doc:
        certs = [doc]
    else:
        raise ConfigError("certificate plot needs a certify result")
    s = np.array([float(c["s"]) for c in certs])
    a = np.array([float(c["a"]) for c in certs])
    ok = np.array([c["verdict"] == "positive" for c in certs])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(s[ok], a[ok], marker="s", s=40, color="tab:green", label="positive")
    ax.scatter(s[~ok], a[~ok], marker="x", s=40, color="tab:red", label="not certified")
    ax.set_xlabel("s")
    ax.set_ylabel("a")
    ax.set_title("contact certificates")
    ax.legend(loc="best", frameon=False)
    return _svg(fig)


def _degrees(doc):
    if isinstance(doc, dict) and isinstance(doc.get("table"), list):
        out = []
        for row in doc["table"]:
            out += [int(row["deg_minus"]), int(row["deg_plus"])]
        return out
    tab = doc.get("table", doc) if isinstance(doc, dict) else None
    if isinstance(tab, dict) and "generators" in tab:
        return [int(g["degree"]) for g in tab["generators"]]
    if isinstance(doc, dict) and "counts" in doc:
        return [int(d) for d, c in doc["counts"].items() for _ in range(int(c))]
    raise ConfigError("grading plot needs an index table or a complex report")


def grading_svg(doc):
    cnt = Counter(_degrees(doc))
    if not cnt:
        raise ConfigError("no generators to plot")
    degs = np.arange(min(cnt), max(cnt) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(degs, [cnt.get(int(d), 0) for d in degs], color="tab:blue", width=0.8)
    ax.set_xlabel("degree")
    ax.set_ylabel("generators")
    ax.set_xticks(degs)
    ax.set_title("grading")
    return _svg(fig)


def render(path, kind):
    if kind not in KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}")
    text = _read(path)
    with plt.rc_context(_RC):
        if kind == "trajectory":
            if text.lstrip()[:1] in "[{":
                raise ConfigError("trajectory plot needs CSV, got JSON")
            return trajectory_svg(text)
        if text.lstrip()[:1] not in "[{":
            raise ConfigError(f"{kind} plot needs JSON input")
        doc = parse_json(text, str(path))
        if kind == "certificate":
            return certificate_svg(doc)
        return grading_svg(doc)

