"""Render a statistics document to files: JSON, CSVs, and figures.

Everything here consumes the JSON-ready document produced by
engine.stats_battery / finalize, so a report can be regenerated from a
persisted ``*.stats.json`` without recomputing any analysis. Analyses
that failed are present as ``{"error": ...}`` entries; writers skip
them so a partial document still yields a partial report.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .cohort import Cohort
from .phenotype import PhenotypeLabel

LABEL_ORDER = ("Protected", "Responder", "Refractory")
LABEL_COLORS = {
    "Protected": "#2a9d8f",
    "Responder": "#457b9d",
    "Refractory": "#e76f51",
}

DOSE_CSV_FIELDS = (
    "phenotype", "dose", "n", "mean",
    "ci95_lo", "ci95_hi", "pct_change_from_peak", "sparse",
)
MATRIX_CSV_FIELDS = ("subgroup", "measure", "r", "p_value", "n", "stars", "degenerate")


def _ok(entry: object) -> bool:
    return isinstance(entry, dict) and "error" not in entry


def dose_strata_rows(doc: dict) -> list[dict]:
    """Flatten the per-phenotype dose-response curves to CSV rows."""
    rows: list[dict] = []
    curves = doc.get("dose_response", {})
    for label in LABEL_ORDER:
        curve = curves.get(label)
        if not _ok(curve):
            continue
        for stratum in curve["strata"]:
            rows.append({"phenotype": label, **{
                k: stratum[k] for k in DOSE_CSV_FIELDS if k in stratum
            }})
    return rows


def matrix_rows(doc: dict) -> list[dict]:
    matrix = doc.get("time_vs_dose_matrix")
    if not _ok(matrix):
        return []
    rows = []
    for subgroup, cols in matrix.items():
        for measure, cell in cols.items():
            rows.append({
                "subgroup": subgroup,
                "measure": measure,
                "r": cell["r"],
                "p_value": cell["p_value"],
                "n": cell["n"],
                "stars": cell["stars"],
                "degenerate": cell["degenerate"],
            })
    return rows


def _write_csv(path: Path, fields: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def render_dose_figure(doc: dict, path: Path) -> bool:
    """One panel per phenotype: stratum means with 95% CI bands.
    Returns False when no curve in the document is usable."""
    curves = doc.get("dose_response", {})
    usable = [lab for lab in LABEL_ORDER if _ok(curves.get(lab))]
    if not usable:
        return False
    fig, axes = plt.subplots(
        1, len(usable), figsize=(4.2 * len(usable), 3.4), squeeze=False, sharey=True
    )
    for ax, label in zip(axes[0], usable):
        strata = curves[label]["strata"]
        doses = [s["dose"] for s in strata]
        means = [s["mean"] for s in strata]
        los = [s["ci95_lo"] for s in strata]
        his = [s["ci95_hi"] for s in strata]
        color = LABEL_COLORS[label]
        ax.fill_between(doses, los, his, alpha=0.2, color=color, linewidth=0)
        ax.plot(doses, means, marker="o", color=color)
        for s in strata:
            if s["sparse"]:
                ax.plot(s["dose"], s["mean"], marker="x", color="gray", markersize=9)
        ax.set_title(f"{label} (n strata={len(strata)})")
        ax.set_xlabel("cumulative vaccine doses")
        ax.grid(alpha=0.25)
    axes[0][0].set_ylabel("mean severity score")
    fig.suptitle("Severity by cumulative dose stratum")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def render_matrix_figure(doc: dict, path: Path) -> bool:
    """Heatmap of the subgroup x (time, dose) correlation matrix."""
    matrix = doc.get("time_vs_dose_matrix")
    if not _ok(matrix):
        return False
    rows = list(matrix.keys())
    cols = ["time_severity", "dose_severity"]
    values = [[matrix[r][c]["r"] for c in cols] for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    image = ax.imshow(values, cmap="RdBu_r", vmin=-1.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels(["time vs severity", "dose vs severity"])
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(rows)
    for i, row in enumerate(rows):
        for j, col in enumerate(cols):
            cell = matrix[row][col]
            note = "n/a" if cell["degenerate"] else f"{cell['r']:+.3f}{cell['stars']}"
            ax.text(j, i, note, ha="center", va="center", fontsize=9)
    fig.colorbar(image, ax=ax, label="Pearson r")
    ax.set_title("Correlation by subgroup")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def render_distribution_figure(
    cohort: Cohort, labels: dict[str, PhenotypeLabel], path: Path
) -> bool:
    """Peak severity histograms per phenotype, shared bins."""
    peaks: dict[str, list[float]] = {lab: [] for lab in LABEL_ORDER}
    for p in cohort:
        lab = labels.get(p.id)
        if lab is not None and lab.value in peaks:
            peaks[lab.value].append(max(p.pasc().values()))
    if not any(peaks.values()):
        return False
    top = max(v for vals in peaks.values() for v in vals)
    bins = [x * top / 30.0 for x in range(31)] if top > 0 else 10
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for label in LABEL_ORDER:
        if peaks[label]:
            ax.hist(
                peaks[label], bins=bins, alpha=0.55,
                label=f"{label} (n={len(peaks[label])})",
                color=LABEL_COLORS[label],
            )
    ax.set_xlabel("peak severity score")
    ax.set_ylabel("participants")
    ax.set_title("Peak severity by phenotype")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def write_report(
    cohort: Cohort,
    labels: dict[str, PhenotypeLabel],
    doc: dict,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write the document plus delimited and figure renderings.

    Returns the mapping of artifact name to written path; artifacts
    whose source analysis failed are absent from the mapping.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    stats_path = out / "stats.json"
    stats_path.write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written["stats"] = stats_path

    rows = dose_strata_rows(doc)
    if rows:
        path = out / "dose_response.csv"
        _write_csv(path, DOSE_CSV_FIELDS, rows)
        written["dose_csv"] = path

    rows = matrix_rows(doc)
    if rows:
        path = out / "time_vs_dose_matrix.csv"
        _write_csv(path, MATRIX_CSV_FIELDS, rows)
        written["matrix_csv"] = path

    path = out / "dose_response.png"
    if render_dose_figure(doc, path):
        written["dose_figure"] = path
    path = out / "correlation_matrix.png"
    if render_matrix_figure(doc, path):
        written["matrix_figure"] = path
    path = out / "severity_distributions.png"
    if render_distribution_figure(cohort, labels, path):
        written["distribution_figure"] = path
    return written
