"""Bit-stable report serialization: CSV, JSON and an SVG log-log chart."""

from __future__ import annotations

import csv
import io
import json
import math
import os

import numpy as np

from .runner import Report

SIG = 12


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.{SIG}g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return fmt(v)
        return float(f"{v:.{SIG}g}")
    return v


def to_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(report.columns) + ["config_hash"])
    h = report.meta.get("config_hash", "")
    for row in report.rows:
        w.writerow([fmt(v) for v in row] + [h])
    return buf.getvalue()


def slopes_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["procedure", "slope", "band_low", "band_high", "points", "config_hash"])
    h = report.meta.get("config_hash", "")
    for p, s in report.slopes.items():
        w.writerow([p, fmt(s.slope), fmt(s.low), fmt(s.high), s.points, h])
    return buf.getvalue()


def to_json(report: Report) -> str:
    doc = {
        "experiment": report.experiment,
        "meta": report.meta,
        "columns": list(report.columns),
        "rows": [list(r) for r in report.rows],
        "slopes": {p: {"slope": s.slope, "band": s.band, "points": s.points} for p, s in report.slopes.items()},
        "flags": list(report.flags),
    }
    return json.dumps(_jsonable(doc), indent=2) + "\n"


def to_svg(report: Report) -> str:
    if not report.series:
        raise ValueError(f"'{report.experiment}' reports have no series to chart")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "msl", "svg.fonttype": "none", "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6.0, 4.2))
        for name, (xs, ys, ses) in report.series.items():
            xs, ys, ses = (np.asarray(a, dtype=float) for a in (xs, ys, ses))
            ok = (xs > 0) & (ys > 0) & np.isfinite(ys)
            label = name
            if name in report.slopes:
                label = f"{name} (slope {report.slopes[name].slope:.3f})"
            ax.errorbar(xs[ok], ys[ok], yerr=np.minimum(ses[ok], ys[ok] * 0.999), marker="o", ms=3, capsize=2, label=label)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(report.xlabel)
        ax.set_ylabel(report.ylabel)
        ax.set_title(report.experiment)
        ax.legend(fontsize=8)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def emit(report: Report, fmt_name: str, path: str) -> str:
    if fmt_name == "csv":
        text = to_csv(report)
    elif fmt_name == "json":
        text = to_json(report)
    elif fmt_name == "svg":
        text = to_svg(report)
    else:
        raise ValueError(f"unknown format {fmt_name}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_all(report: Report, out_dir: str, name: str, formats) -> list[str]:
    """CSV always; JSON and SVG on request; a slopes table when fitted."""
    paths = [emit(report, "csv", os.path.join(out_dir, f"{name}.csv"))]
    if report.slopes:
        p = os.path.join(out_dir, f"{name}_slopes.csv")
        os.makedirs(out_dir, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(slopes_csv(report))
        paths.append(p)
    for f in formats:
        if f == "csv":
            continue
        if f == "svg" and not report.series:
            continue
        paths.append(emit(report, f, os.path.join(out_dir, f"{name}.{f}")))
    return paths
