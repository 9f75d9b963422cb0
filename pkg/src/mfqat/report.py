"""Delimited metric/table writers and the matplotlib figures rendered next
to them by the CLI report paths."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .codec import enumerate_values
from .formats import MinifloatFormat, ZeroEncoding
from .hwmodel import LUT_TABLE


def format_metrics_line(record: dict) -> str:
    parts = [
        f"epoch={record['epoch']}",
        f"loss={record['loss']!r}",
        f"metric={record['metric']!r}",
        f"lr={record['lr']!r}",
    ]
    for key in sorted(record.get("e0", {})):
        parts.append(f"e0.{key}={record['e0'][key]!r}")
    return " ".join(parts)


def write_metrics_file(history: list[dict], path: str) -> None:
    """One key=value record line per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(format_metrics_line(record) + "\n")


def save_training_curves(history: list[dict], path: str, metric_name: str = "metric") -> None:
    epochs = [r["epoch"] for r in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [r["loss"] for r in history], "o-", color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r["metric"] for r in history], "s-", color="tab:blue", label=metric_name)
    ax2.set_ylabel(metric_name, color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_lut_table(stream) -> None:
    """Delimited LUT reference table: format zero_encoding luts."""
    stream.write("format\tzero_encoding\tluts\n")
    for enc in (ZeroEncoding.ZERO_BINADE, ZeroEncoding.ZERO_POINT):
        for (e, m), cost in sorted(LUT_TABLE[enc].items()):
            stream.write(f"E{e}M{m}\t{enc.value}\t{cost}\n")


def save_lut_chart(path: str) -> None:
    keys = sorted(LUT_TABLE[ZeroEncoding.ZERO_BINADE])
    labels = [f"E{e}M{m}" for e, m in keys]
    zb = [LUT_TABLE[ZeroEncoding.ZERO_BINADE][k] for k in keys]
    zp = [LUT_TABLE[ZeroEncoding.ZERO_POINT][k] for k in keys]
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(x - 0.2, zb, width=0.4, label="zero binade")
    ax.bar(x + 0.2, zp, width=0.4, label="zero point")
    ax.set_xticks(x, labels, rotation=45)
    ax.set_ylabel("#LUTs")
    ax.set_title("multiplier LUT usage by format and zero encoding")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_value_grid(fmt: MinifloatFormat, e_b: int, path: str) -> None:
    values = enumerate_values(fmt, e_b)
    fig, ax = plt.subplots(figsize=(8, 2.6))
    ax.plot(values, np.zeros_like(values), "|", markersize=18)
    ax.axvline(fmt.x_max(e_b), color="tab:red", linestyle="--", linewidth=0.8)
    ax.axvline(-fmt.x_max(e_b), color="tab:red", linestyle="--", linewidth=0.8)
    ax.set_yticks([])
    ax.set_title(f"{fmt} representable values, bias {e_b}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_prediction_panel(images: np.ndarray, targets: np.ndarray,
                          pred_masks: np.ndarray, path: str, max_rows: int = 4) -> None:
    rows = min(len(images), max_rows)
    fig, axes = plt.subplots(rows, 3, figsize=(7, 2.4 * rows), squeeze=False)
    for r in range(rows):
        for c, (panel, title) in enumerate(
            ((images[r][0], "image"), (targets[r][0], "target"), (pred_masks[r][0], "prediction"))
        ):
            ax = axes[r][c]
            ax.imshow(panel, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_axis_off()
            if r == 0:
                ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
