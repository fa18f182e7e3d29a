"""Writing run reports to disk: JSON, CSV tables and static SVG figures."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import RunReport, Table, to_json  # noqa: E402

# fixed ids inside the SVG so reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "eftsim"


def write_table_csv(table: Table, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])


def write_report(report: RunReport, out: Path | str, fmt: str = "csv", svg: bool = False) -> list[Path]:
    """Write ``<out>/<scenario name>/report.json`` plus tables; returns the paths written."""
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    d = Path(out) / report.scenario.name
    d.mkdir(parents=True, exist_ok=True)
    body = {"provenance": report.provenance, **report.payload()}
    written = []
    if fmt == "json":
        body["tables"] = {t.name: {"columns": t.columns, "rows": t.rows} for t in report.tables}
    else:
        for t in report.tables:
            p = d / f"{t.name}.csv"
            write_table_csv(t, p)
            written.append(p)
    p = d / "report.json"
    p.write_text(to_json(body, indent=2) + "\n")
    written.insert(0, p)
    if svg:
        written += write_figures(report, d)
    return written


def write_figures(report: RunReport, d: Path) -> list[Path]:
    plot = _PLOTS[report.scenario.kind]
    fig = plot(report)
    p = d / f"{report.scenario.name}.svg"
    fig.savefig(p, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [p]


def _three_peak(report):
    runs = report.results["runs"]
    fig, axes = plt.subplots(1, len(runs), figsize=(2.6 * len(runs), 2.6), sharey=True, squeeze=False)
    for ax, run in zip(axes[0], runs):
        ax.bar(range(3), run["counts"], color="0.4")
        ax.set_xticks(range(3), ["dt", "dt+T", "dt+2T"])
        ax.set_title(f"{run['theta_deg']:g} deg, {run['input']}", fontsize=9)
    axes[0][0].set_ylabel("counts")
    fig.tight_layout()
    return fig


def _bfe_sweep(report):
    pts = report.results["points"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    keys = []
    for p in pts:
        if (p["fiber"], p["input"]) not in keys:
            keys.append((p["fiber"], p["input"]))
    for fiber, name in keys:
        sel = [p for p in pts if p["fiber"] == fiber and p["input"] == name]
        x = [p["bfe_rate"] for p in sel]
        ax1.plot(x, [p["error_rate"] if p["error_rate"] is not None else float("nan") for p in sel], "o-", ms=3, label=f"{name}, {fiber}")
        ax2.plot(x, [p["efficiency"] for p in sel], "o-", ms=3)
    ax1.axhline(0.1, color="k", lw=0.5, ls="--")
    ax1.set(xlabel="channel bit-flip rate", ylabel="post-selected error rate")
    ax2.set(xlabel="channel bit-flip rate", ylabel="efficiency")
    ax1.legend(fontsize=7)
    fig.tight_layout()
    return fig


def _envelope(report):
    t = report.table("envelope")
    x = [r[0] * 1e6 for r in t.rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(x, [r[2] for r in t.rows], "k-", lw=1)
    ax.set(xlabel="path difference (um)", ylabel="visibility", ylim=(0, 1.05))
    fig.tight_layout()
    return fig


def _lock(report):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for name, label in (("lock_no_eft", "no time-bin coding"), ("lock_eft_open", "loop open"), ("lock_eft_feedback", "loop closed")):
        t = report.table(name)
        ax.plot([r[0] for r in t.rows], [r[2] for r in t.rows], lw=0.8, label=label)
    ax.set(xlabel="time (s)", ylabel="error rate", ylim=(0, 1))
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def _chsh(report):
    recs = report.results["records"]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for eft, fmt, label in ((True, "o", "with time-bin coding"), (False, "s", "without")):
        sel = [r for r in recs if r["eft_enabled"] == eft and r["repetition"] == 0]
        ax.errorbar([r["time_s"] for r in sel], [r["S"] for r in sel], yerr=[r["sigma_S"] for r in sel], fmt=fmt, ms=3, label=label)
    ax.axhline(2, color="k", lw=0.5, ls="--")
    ax.set(xlabel="time (s)", ylabel="S")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


_PLOTS = {"three_peak": _three_peak, "bfe_sweep": _bfe_sweep, "envelope_scan": _envelope, "lock_run": _lock, "chsh": _chsh}
