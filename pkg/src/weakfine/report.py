"""CSV tables, allocation audit files and SVG figures for experiment results."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

from .harness import label_ratio_series

# fixed salt and no timestamp keep SVG output byte-identical across runs
SVG_RC = {"svg.hashsalt": "weakfine", "svg.fonttype": "none"}
SVG_META = {"Date": None, "Creator": None}

METRICS_HEADER = ["method", "seed", "round", "accuracy", "full_count", "weak_count",
                  "cost_spent_num", "cost_spent_den"]


def _num(x):
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_metrics(result, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(METRICS_HEADER)
        for method, reps in result.replicates.items():
            for rep in reps:
                for r in rep.reports:
                    w.writerow([method, rep.seed, r.round, _num(r.accuracy), r.full_count,
                                r.weak_count, r.cost_spent.numerator, r.cost_spent.denominator])


def write_aggregate(aggregate, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["method", "round", "mean_acc", "std_acc"])
        for method, rows in aggregate.items():
            for rnd, mean, std in rows:
                w.writerow([method, rnd, _num(mean), _num(std)])


def write_ratios(result, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["method", "seed", "round", "full_fraction", "weak_fraction"])
        for method, reps in result.replicates.items():
            for rep in reps:
                for r, (ff, wf) in zip(rep.reports, label_ratio_series(rep.reports)):
                    w.writerow([method, rep.seed, r.round, _num(ff), _num(wf)])


def write_audit(result, directory):
    """One JSONL file per (method, seed, round) listing the plan's actions."""
    directory = Path(directory)
    paths = []
    for method, reps in result.replicates.items():
        for rep in reps:
            for r in rep.reports:
                p = directory / method / f"seed{rep.seed}_round{r.round}.jsonl"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(r.plan.to_jsonl() if r.plan else "", encoding="utf-8")
                paths.append(p)
    return paths


def write_sweep(sweep, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["c_weak_num", "c_weak_den", "method", "round", "mean_acc", "std_acc",
                    "mean_weak_count"])
        for cw, res in sweep.items():
            agg = res.aggregate()
            for method, rows in agg.items():
                weak = res.mean_curve(method, "weak_count")
                for (rnd, mean, std), wc in zip(rows, weak):
                    w.writerow([cw.numerator, cw.denominator, method, rnd, _num(mean),
                                _num(std), _num(wc)])


def chart_bounds(aggregate, pad=0.05):
    """y-range covering every mean +/- std, widened by ``pad`` of the span."""
    lo = min(m - s for rows in aggregate.values() for _, m, s in rows)
    hi = max(m + s for rows in aggregate.values() for _, m, s in rows)
    span = hi - lo
    if span == 0:
        span = abs(hi) or 1.0
    return lo - pad * span, hi + pad * span


def _save_svg(fig, path):
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata=SVG_META)


def render_chart(aggregate, path, title="Test accuracy by round"):
    """Mean accuracy per round for each method, with a +/-1 std band.

    Returns the figure so callers can inspect the drawn lines.
    """
    if not aggregate or not any(aggregate.values()):
        raise ValueError("nothing to plot")
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for method, rows in aggregate.items():
        x = [r for r, _, _ in rows]
        mean = [m for _, m, _ in rows]
        std = [s for _, _, s in rows]
        (line,) = ax.plot(x, mean, marker="o", markersize=4, label=method)
        if len(x) > 1:
            ax.fill_between(x, [m - s for m, s in zip(mean, std)],
                            [m + s for m, s in zip(mean, std)],
                            color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_ylim(*chart_bounds(aggregate))
    rounds = sorted({r for rows in aggregate.values() for r, _, _ in rows})
    ax.set_xticks(rounds)
    ax.set_xlabel("round")
    ax.set_ylabel("fine accuracy")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)
    return fig


def render_ratio_chart(result, path, method):
    """Stacked full/weak share of the labeled training set, seed-averaged."""
    reps = result.replicates[method]
    series = [label_ratio_series(rep.reports) for rep in reps]
    n = len(series[0])
    full = [sum(s[t][0] for s in series) / len(series) for t in range(n)]
    weak = [sum(s[t][1] for s in series) / len(series) for t in range(n)]
    x = list(range(1, n + 1))
    fig = Figure(figsize=(5.0, 3.6))
    ax = fig.add_subplot()
    ax.bar(x, full, color="#4c72b0", label="full (human)")
    ax.bar(x, weak, bottom=full, color="#dd8452", label="weak (annotator)")
    ax.set_ylim(0, 1)
    ax.set_xticks(x)
    ax.set_xlabel("round")
    ax.set_ylabel("share of labeled training set")
    ax.set_title(method)
    ax.legend(loc="lower left", fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)
    return fig


def write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
