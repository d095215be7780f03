"""Plots and text tables rendered from the numeric artifacts.

Plots carry no timestamps and use fixed styling, so identical inputs produce
identical files.  The robustness table recomputes its change row from the raw
MSE cells; change values in the input are never trusted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .attacks import RobustnessReport, robustness_change
from .errors import StructuralError
from .training import TrainingCurve


@dataclass(frozen=True)
class PlotSpec:
    x_label: str
    y_label: str
    series_labels: tuple[str, ...]
    output_path: Path
    title: str = ""


def plot_curves(curve_csvs: list[str | Path], spec: PlotSpec) -> Path:
    """Line plot of validation MSE per epoch, one series per curve file."""
    if not curve_csvs:
        raise StructuralError("plot_curves needs at least one curve file")
    if len(spec.series_labels) != len(curve_csvs):
        raise StructuralError(
            f"{len(curve_csvs)} curve files but {len(spec.series_labels)} series labels"
        )
    fig, ax = plt.subplots(figsize=(7, 5))
    for path, label in zip(curve_csvs, spec.series_labels):
        curve = TrainingCurve.from_csv(path)  # rejects NaN rows with a row number
        epochs = [e for e, _, _ in curve.entries]
        vals = [v for _, _, v in curve.entries]
        ax.plot(epochs, vals, marker="o", markersize=3, label=label)
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(spec.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return out


def plot_params_vs_mse(
    rows: list[tuple[str, int, float]], output_path: str | Path, title: str = ""
) -> Path:
    """Scatter/line of parameter count (millions) against validation MSE.

    ``rows`` are (model_name, parameter_count, val_mse); model names sharing a
    prefix before the first digit or underscore are grouped into one series.
    """
    if not rows:
        raise StructuralError("plot_params_vs_mse needs at least one row")
    families: dict[str, list[tuple[float, float]]] = {}
    for name, params, mse in rows:
        family = name.rstrip("0123456789_abcdef") or name
        families.setdefault(family, []).append((params / 1e6, mse))
    fig, ax = plt.subplots(figsize=(7, 5))
    for family, points in sorted(families.items()):
        points.sort()
        ax.plot([p for p, _ in points], [m for _, m in points], marker="o", label=family)
    ax.set_xlabel("No. of Parameters (in millions)")
    ax.set_ylabel("MSE Loss")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return out


def render_table(
    report: RobustnessReport,
    without_label: str = "w/o attention",
    with_label: str = "w attention",
) -> str:
    """Three-row comparison table: baseline MSE, attention MSE, computed change.

    Every (attack, epsilon) column must have both models' attacked MSE; the
    change row is always recomputed from them.
    """
    columns = report.columns()
    if not columns:
        raise StructuralError("report has no (attack, epsilon) columns")
    headers = ["Model"] + [f"{attack.upper()} eps={eps:g}" for attack, eps in columns]
    without_row = [without_label]
    with_row = [with_label]
    change_row = ["change"]
    for attack, eps in columns:
        base = report.lookup(without_label, attack, eps)
        attn = report.lookup(with_label, attack, eps)
        if base is None or attn is None:
            raise StructuralError(f"missing cell for attack={attack} eps={eps}")
        without_row.append(f"{base.attacked_mse:.3f}")
        with_row.append(f"{attn.attacked_mse:.3f}")
        change_row.append(f"{robustness_change(base.attacked_mse, attn.attacked_mse):.2f}%")

    table = [headers, without_row, with_row, change_row]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = []
    for row in table:
        lines.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
