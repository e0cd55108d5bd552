"""Figure rendering for the reporting paths.

Every report that writes delimited output also renders a companion figure so
a run can be eyeballed without loading the CSVs.  The Agg backend keeps this
usable on headless machines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt


def save_track_figure(rows, visibility_floor: float, path) -> None:
    """Box-center path and visibility series for one tracking run."""
    fig, (ax_path, ax_vis) = plt.subplots(2, 1, figsize=(9.0, 6.5), sharex=True)
    stamps = [r.timestamp for r in rows]
    ax_path.plot(stamps, [r.center_x for r in rows], label="center x (px)", color="tab:blue")
    ax_path.plot(stamps, [r.center_y for r in rows], label="center y (px)", color="tab:orange")
    ax_path.set_ylabel("box center (px)")
    ax_path.legend(loc="best", fontsize="small")
    ax_path.grid(True, alpha=0.3)

    ax_vis.plot(stamps, [r.visibility for r in rows], color="tab:green", label="visibility score")
    ax_vis.axhline(visibility_floor, color="tab:red", linestyle="--", label="floor")
    for stamp, mode in zip(stamps, (r.mode for r in rows)):
        if mode == "coasting":
            ax_vis.axvline(stamp, color="0.8", linewidth=0.5, zorder=0)
    ax_vis.set_ylabel("visibility")
    ax_vis.set_xlabel("time (UTC)")
    ax_vis.legend(loc="best", fontsize="small")
    ax_vis.grid(True, alpha=0.3)

    ax_vis.xaxis.set_major_formatter(mdates.DateFormatter("%H:%M"))
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_divergence_figure(series_by_height: dict, threshold_km: float, path) -> None:
    """Separation between tracked path and each trajectory, against time."""
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    for height in sorted(series_by_height):
        series = series_by_height[height]
        if not series:
            continue
        t0 = series[0][0]
        hours = [(t - t0).total_seconds() / 3600.0 for t, _ in series]
        ax.plot(hours, [km for _, km in series], marker="o", markersize=3, label=f"{height:.0f} m")
    ax.axhline(threshold_km, color="tab:red", linestyle="--", label=f"threshold {threshold_km:.0f} km")
    ax.set_xlabel("hours since track start")
    ax.set_ylabel("separation (km)")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
