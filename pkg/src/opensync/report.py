"""Figure rendering for benchmark output.

Kept apart from the benchmark itself: the CSVs stay the canonical output
and these renderings are a convenience layer over them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_lag_histograms(records_by_case, path, bins: int = 40) -> str:
    """One histogram of per-chunk time lag (microseconds) per case."""
    cases = sorted(records_by_case)
    ncols = min(2, len(cases))
    nrows = (len(cases) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(5.0 * ncols, 3.2 * nrows),
                             squeeze=False)
    for ax in axes.flat[len(cases):]:
        ax.set_visible(False)
    for ax, case_id in zip(axes.flat, cases):
        lags_us = [r.lag * 1e6 for r in records_by_case[case_id]]
        ax.hist(lags_us, bins=bins, color="#4878a8", edgecolor="black",
                linewidth=0.4)
        ax.set_title(f"Case {case_id} (n={len(lags_us)})", fontsize=10)
        ax.set_xlabel("time lag per sample (µs)", fontsize=9)
        ax.set_ylabel("chunks", fontsize=9)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_rms_bars(summaries, path) -> str:
    """RMS lag per case as a bar chart."""
    cases = sorted(summaries)
    rms_us = [summaries[c].rms * 1e6 for c in cases]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.bar([f"Case {c}" for c in cases], rms_us, color="#70ad70",
           edgecolor="black", linewidth=0.4)
    ax.set_ylabel("RMS time lag (µs)")
    ax.tick_params(labelsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
