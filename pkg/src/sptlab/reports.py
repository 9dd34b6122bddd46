"""Report tables and plot-ready data extracts.

Everything here is a pure transformation of stored experiment artifacts
(experiment JSON, chain CSVs, posterior artifacts) into small CSVs: the
headline summary table, the per-fold table, histogram data for the
exponent posterior, and the map credible band.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError


def _fmt_pm(mean: float, half_width: float) -> str:
    if not math.isfinite(mean):
        return "nan"
    return f"{mean:.2f}±{half_width:.2f}"


def summary_csv(experiment: dict) -> str:
    """Headline table: one row per portfolio, annualized in-sample and
    out-of-sample returns (%, mean over folds with two standard errors)
    and the out-of-sample Sharpe ratio."""
    if "aggregate" not in experiment:
        raise DataError("experiment artifact has no aggregate section")
    lines = ["portfolio,is_ret,oos_ret,oos_sr"]
    for label, agg in experiment["aggregate"].items():
        lines.append(",".join([
            label,
            _fmt_pm(agg["is_ret_mean"], agg["is_ret_2se"]),
            _fmt_pm(agg["oos_ret_mean"], agg["oos_ret_2se"]),
            _fmt_pm(agg["oos_sr_mean"], agg["oos_sr_2se"]),
        ]))
    return "\n".join(lines) + "\n"


def fold_table_csv(experiment: dict) -> str:
    """Per-fold, per-portfolio detail behind the summary table."""
    if "folds" not in experiment:
        raise DataError("experiment artifact has no folds section")
    lines = ["fold,portfolio,is_ret,oos_ret,oos_sr,is_terminal,oos_terminal,"
             "is_turnover,oos_turnover"]
    for fr in experiment["folds"]:
        for label, row in fr["strategies"].items():
            lines.append(",".join([
                str(fr["fold"]), label,
                *(repr(float(row[k])) for k in
                  ("is_ret", "oos_ret", "oos_sr", "is_terminal", "oos_terminal",
                   "is_turnover", "oos_turnover")),
            ]))
    return "\n".join(lines) + "\n"


def histogram_csv(samples: np.ndarray, bins: int = 40,
                  bounds: tuple | None = None) -> str:
    """Binned sample counts and densities (posterior histogram data)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise DataError("no samples to histogram")
    counts, edges = np.histogram(samples, bins=bins, range=bounds)
    widths = np.diff(edges)
    density = counts / (counts.sum() * widths)
    lines = ["bin_left,bin_right,count,density"]
    for i in range(counts.shape[0]):
        lines.append(f"{float(edges[i])!r},{float(edges[i + 1])!r},"
                     f"{int(counts[i])},{float(density[i])!r}")
    return "\n".join(lines) + "\n"


def chain_histogram_csv(chain_csv: str, bins: int = 40,
                        bounds: tuple | None = None) -> str:
    """Histogram data straight from a stored chain dump, burn-in excluded
    if the dump carries one (it does not, so callers pre-slice; this
    helper simply histograms every p in the file)."""
    lines = chain_csv.splitlines()
    if not lines or lines[0] != "iter,p,log_lik,accepted":
        raise DataError("not a chain CSV (expected header iter,p,log_lik,accepted)")
    try:
        samples = np.array([float(line.split(",")[1]) for line in lines[1:] if line])
    except (IndexError, ValueError) as err:
        raise DataError(f"bad chain CSV: {err}") from None
    return histogram_csv(samples, bins, bounds)
