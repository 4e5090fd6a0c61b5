"""Training-curve figures rendered with matplotlib (SVG, no display needed)."""

from __future__ import annotations

import csv
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import METRICS_HEADER  # noqa: E402

# Fixed metadata keeps the SVG bytes reproducible.
SVG_METADATA = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "lpokit"


def read_metrics(text: str) -> dict[str, list[float]]:
    """Parse a metrics CSV into columns. Raises ``ValueError`` on a bad header
    or non-numeric cells."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise ValueError(f"metrics header must be {','.join(METRICS_HEADER)}")
    cols: dict[str, list[float]] = {h: [] for h in METRICS_HEADER}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(METRICS_HEADER):
            raise ValueError(f"line {lineno}: expected {len(METRICS_HEADER)} fields")
        try:
            for h, v in zip(METRICS_HEADER, row):
                cols[h].append(float(v))
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value") from None
    return cols


def training_curves(cols: dict[str, list[float]], title: str = ""):
    """Loss on the left, held-out ranking metrics on the right."""
    fig, (ax_loss, ax_rank) = plt.subplots(1, 2, figsize=(9, 3.4))
    steps = cols["step"]
    ax_loss.plot(steps, cols["loss"], marker="o", ms=3, color="tab:blue")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("train loss")
    ax_rank.plot(steps, cols["adj_acc"], marker="o", ms=3, label="adjacent-pair acc.")
    ax_rank.plot(steps, cols["kendall_tau"], marker="s", ms=3, label="Kendall tau")
    ax_rank.axhline(0.5, color="grey", lw=0.8, ls="--")
    ax_rank.set_ylim(-1.05, 1.05)
    ax_rank.set_xlabel("step")
    ax_rank.legend(frameon=False, fontsize=8, loc="lower right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def render_svg(cols: dict[str, list[float]], title: str = "") -> bytes:
    fig = training_curves(cols, title)
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return buf.getvalue()
