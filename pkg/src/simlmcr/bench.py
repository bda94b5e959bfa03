"""SNR-sweep benchmark: multi-start fits per (SNR, mode) cell, results CSV,
SVG curves and a markdown summary."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from . import metrics
from .mcr import MODES, FitOptions, Model, multi_start, save_model
from .simulate import GroundTruth, SimConfig, generate
from .tensor import augment

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
DEFAULT_SNR_GRID = (3.0, 1.0, 0.5, 0.1, 0.05, 0.025)
ID_COLUMNS = ("schema_version", "row_type", "snr", "mode", "fit_index", "seed",
              "n_fits", "attempts", "complete")
PLOT_METRICS = ("cosine_mean", "r2_mean", "var_explained")
MODE_COLORS = {"mcr": "#1f77b4", "siml": "#ff7f0e", "siml_dn": "#2ca02c"}


class SpecError(ValueError):
    """Benchmark spec or results file is unusable."""


def metric_columns(n_analytes: int) -> List[str]:
    per = lambda stem: [f"{stem}_a{r}" for r in range(n_analytes)]  # noqa: E731
    return (["iterations", "loss", "var_explained", "cosine_mean", "cosine_min"] + per("cosine")
            + ["r2_mean", "rel_bias_mean"] + per("r2") + per("bias") + per("slope") + ["pooled_rsd"])


def csv_columns(n_analytes: int) -> List[str]:
    m = metric_columns(n_analytes)
    return list(ID_COLUMNS) + m + [f"{c}_std" for c in m]


@dataclass(frozen=True)
class BenchmarkSpec:
    snr_grid: Tuple[float, ...] = DEFAULT_SNR_GRID
    modes: Tuple[str, ...] = MODES
    fits_per_cell: int = 50
    sim: SimConfig = SimConfig()
    fit: FitOptions = FitOptions(R=2)
    out_dir: Optional[str] = None
    base_seed: int = 0
    archive_models: bool = True

    def __post_init__(self):
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.snr_grid:
            raise SpecError("SNR grid is empty")
        if any(not s > 0 for s in self.snr_grid):
            raise SpecError("SNR values must be positive")
        if len(set(self.snr_grid)) != len(self.snr_grid):
            raise SpecError("SNR grid has duplicates")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise SpecError(f"modes must be a non-empty subset of {MODES}")
        if self.fits_per_cell < 1:
            raise SpecError("fits_per_cell must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        d = dict(d)
        unknown = set(d) - {"snr_grid", "modes", "fits_per_cell", "sim", "fit", "out_dir",
                            "base_seed", "archive_models"}
        if unknown:
            raise SpecError(f"unknown benchmark keys: {sorted(unknown)}")
        sim = SimConfig.from_dict(d.pop("sim", {}))
        fit = dict(d.pop("fit", {}))
        fit.setdefault("R", sim.n_analytes)
        return cls(sim=sim, fit=FitOptions.from_dict(fit), **d)

    def to_dict(self) -> dict:
        return {
            "snr_grid": list(self.snr_grid),
            "modes": list(self.modes),
            "fits_per_cell": self.fits_per_cell,
            "sim": self.sim.to_dict(),
            "fit": self.fit.to_dict(),
            "out_dir": self.out_dir,
            "base_seed": self.base_seed,
            "archive_models": self.archive_models,
        }


@dataclass
class Cell:
    snr: float
    mode: str
    models: List[Model]
    seeds: List[int]
    reports: List[metrics.FitReport]
    attempts: int
    complete: bool
    warnings: List[str] = field(default_factory=list)


def fmt(x) -> str:
    """Deterministic CSV text for a value; empty for missing."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def model_report(model: Model, X, truth: GroundTruth) -> metrics.FitReport:
    return metrics.evaluate(X, model.C, model.S, model.dims, truth.spectra, truth.concentrations)


def run_cell(X, truth: GroundTruth, snr: float, mode: str, spec: BenchmarkSpec, jobs: int = 1) -> Cell:
    opts = replace(spec.fit, mode=mode, seed=spec.base_seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ens = multi_start(X, opts, spec.fits_per_cell, jobs=jobs)
    notes = [str(w.message) for w in caught]
    for n in notes:
        log.warning("snr=%g mode=%s: %s", snr, mode, n)
    reports = [model_report(m, X, truth) for m in ens.models]
    return Cell(snr, mode, ens.models, ens.seeds, reports, ens.attempts, ens.complete, notes)


def cell_rows(cell: Cell, n_analytes: int) -> List[Dict[str, str]]:
    """Detail rows (one per fit) followed by the aggregate row."""
    mcols = metric_columns(n_analytes)
    rows, values = [], {c: [] for c in mcols}
    for idx, (model, seed, rep) in enumerate(zip(cell.models, cell.seeds, cell.reports)):
        scal = dict(rep.scalars(), iterations=model.iterations, loss=model.loss)
        row = {"schema_version": SCHEMA_VERSION, "row_type": "detail", "snr": fmt(cell.snr),
               "mode": cell.mode, "fit_index": str(idx), "seed": str(seed)}
        for c in mcols:
            v = scal.get(c)
            row[c] = fmt(v)
            if v is not None:
                values[c].append(float(v))
        rows.append(row)
    agg = {"schema_version": SCHEMA_VERSION, "row_type": "aggregate", "snr": fmt(cell.snr),
           "mode": cell.mode, "n_fits": str(len(cell.models)), "attempts": str(cell.attempts),
           "complete": fmt(cell.complete)}
    for c in mcols:
        v = values[c]
        if v:
            agg[c] = fmt(np.mean(v))
            agg[f"{c}_std"] = fmt(np.std(v, ddof=1) if len(v) > 1 else 0.0)
    rows.append(agg)
    return rows


def write_results(path, rows: Sequence[dict], n_analytes: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = csv_columns(n_analytes)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, restval="", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_results(path) -> List[Dict[str, str]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise SpecError(f"{path} is empty")
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise SpecError(f"{path} has no data rows")
    missing = {"schema_version", "row_type", "snr", "mode"} - set(rows[0])
    if missing:
        raise SpecError(f"{path} lacks columns {sorted(missing)}")
    versions = {r["schema_version"] for r in rows}
    if versions != {SCHEMA_VERSION}:
        raise SpecError(f"unsupported schema version(s) {sorted(versions)}")
    return rows


def run_benchmark(spec: BenchmarkSpec, out_dir, jobs: int = 1) -> Tuple[Path, List[Cell]]:
    """Run every (SNR, mode) cell and write ``results.csv`` under ``out_dir``.

    All modes at one SNR see the same data tensor.  The tensor for each SNR
    is drawn from ``spec.base_seed``, so spectra, concentrations and shifts
    are identical along the grid and only the noise level changes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    A = spec.sim.n_analytes
    rows, cells, notes = [], [], {}
    for snr in spec.snr_grid:
        ds, truth = generate(replace(spec.sim, snr=snr, seed=spec.base_seed))
        X = augment(ds)
        for mode in spec.modes:
            log.info("cell snr=%g mode=%s", snr, mode)
            cell = run_cell(X, truth, snr, mode, spec, jobs)
            cells.append(cell)
            rows.extend(cell_rows(cell, A))
            if cell.warnings:
                notes[f"{fmt(snr)}/{mode}"] = cell.warnings
            if spec.archive_models:
                base = out_dir / "models" / f"snr_{fmt(snr)}" / mode
                for idx, model in enumerate(cell.models):
                    save_model(model, base / f"fit_{idx:03d}")
    path = write_results(out_dir / "results.csv", rows, A)
    (out_dir / "warnings.json").write_text(json.dumps(notes, indent=1, sort_keys=True))
    return path, cells


# -- report ------------------------------------------------------------------


def aggregate_table(rows: Sequence[Dict[str, str]], metric: str) -> Dict[str, List[Tuple[float, float, float]]]:
    """mode -> sorted ``(snr, mean, std)`` triples from aggregate rows.

    Falls back to averaging detail rows when a cell has no aggregate row.
    """
    agg, detail = {}, {}
    for r in rows:
        v = r.get(metric, "")
        if v == "":
            continue
        key = (r["mode"], float(r["snr"]))
        if r["row_type"] == "aggregate":
            s = r.get(f"{metric}_std", "")
            agg[key] = (float(v), float(s) if s else 0.0)
        else:
            detail.setdefault(key, []).append(float(v))
    for key, vals in detail.items():
        if key not in agg:
            agg[key] = (float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
    out = {}
    for (mode, snr), (m, s) in agg.items():
        out.setdefault(mode, []).append((snr, m, s))
    return {mode: sorted(v) for mode, v in sorted(out.items())}


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= n:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        ticks.append(round(t, 12))
        t += step
    return ticks


def render_svg(series: Dict[str, List[Tuple[float, float, float]]], metric: str,
               width: int = 640, height: int = 400) -> str:
    """Line plot of ``metric`` against SNR (log axis), one series per mode.

    Every marker carries ``data-mode``, ``data-snr``, ``data-value`` and
    ``data-std`` so values can be read back from the file.  The root element
    records the axis ranges and plot box for the same purpose.
    """
    if not series or not any(series.values()):
        raise SpecError(f"nothing to plot for {metric}")
    left, right, top, bottom = 70, 130, 30, 50
    pw, ph = width - left - right, height - top - bottom
    pts = [p for s in series.values() for p in s]
    xs = [math.log10(p[0]) for p in pts]
    lo_v = min(p[1] - p[2] for p in pts)
    hi_v = max(p[1] + p[2] for p in pts)
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (hi_v - lo_v) if hi_v > lo_v else max(abs(hi_v) * 0.05, 0.05)
    y0, y1 = lo_v - pad, hi_v + pad

    def sx(snr):
        return left + (math.log10(snr) - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'data-metric="{escape(metric)}" data-y-min="{y0!r}" data-y-max="{y1!r}" '
        f'data-x-log-min="{x0!r}" data-x-log-max="{x1!r}" '
        f'data-plot-box="{left} {top} {pw} {ph}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="13">SNR</text>',
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(metric)}</text>',
    ]
    for t in _nice_ticks(y0, y1):
        y = sy(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')
    for snr in sorted({p[0] for p in pts}):
        x = sx(snr)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{snr:g}</text>')
    for n, (mode, pts_m) in enumerate(series.items()):
        color = MODE_COLORS.get(mode, "#555")
        out.append(f'<g class="series" data-mode="{escape(mode)}">')
        if len(pts_m) > 1:
            coords = " ".join(f"{sx(s):.2f},{sy(m):.2f}" for s, m, _ in pts_m)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for s, m, sd in pts_m:
            x = sx(s)
            if sd > 0:
                out.append(f'<line class="errorbar" x1="{x:.2f}" y1="{sy(m - sd):.2f}" x2="{x:.2f}" '
                           f'y2="{sy(m + sd):.2f}" stroke="{color}"/>')
            out.append(f'<circle class="point" cx="{x:.2f}" cy="{sy(m):.2f}" r="3.5" fill="{color}" '
                       f'data-mode="{escape(mode)}" data-snr="{s!r}" data-value="{m!r}" data-std="{sd!r}"/>')
        out.append("</g>")
        ly = top + 14 + 18 * n
        out.append(f'<rect x="{left + pw + 12}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 28}" y="{ly}" font-size="12">{escape(mode)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_markdown(rows: Sequence[Dict[str, str]], metrics_: Sequence[str]) -> str:
    lines = ["# Benchmark summary", ""]
    warn = [r for r in rows if r["row_type"] == "aggregate" and r.get("complete") == "0"]
    for m in metrics_:
        table = aggregate_table(rows, m)
        if not table:
            continue
        modes = list(table)
        snrs = sorted({s for v in table.values() for s, _, _ in v}, reverse=True)
        lines += [f"## {m}", "", "| SNR | " + " | ".join(modes) + " |",
                  "|---" * (len(modes) + 1) + "|"]
        for snr in snrs:
            cells = []
            for mode in modes:
                hit = [(mu, sd) for s, mu, sd in table[mode] if s == snr]
                cells.append(f"{hit[0][0]:.4f} ± {hit[0][1]:.4f}" if hit else "")
            lines.append(f"| {snr:g} | " + " | ".join(cells) + " |")
        lines.append("")
    if warn:
        lines += ["## Incomplete cells", ""]
        lines += [f"- SNR {r['snr']}, {r['mode']}: {r.get('n_fits', '?')} converged fits" for r in warn]
        lines.append("")
    return "\n".join(lines)


def write_report(results_csv, out_dir, metrics_: Sequence[str] = PLOT_METRICS) -> List[Path]:
    rows = read_results(results_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m in metrics_:
        series = aggregate_table(rows, m)
        if not series:
            continue
        p = out_dir / f"{m}.svg"
        p.write_text(render_svg(series, m), encoding="utf-8")
        written.append(p)
    if not written:
        raise SpecError("results contain none of the plotted metrics")
    p = out_dir / "summary.md"
    p.write_text(summary_markdown(rows, metrics_), encoding="utf-8")
    written.append(p)
    return written
