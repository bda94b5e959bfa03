"""Figures of merit for fitted models."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "var_explained",
    "cosine_similarity",
    "match_components",
    "peak_areas",
    "calibration_fit",
    "pooled_rsd",
    "extrapolation_protocol",
    "spread",
    "FitReport",
    "Calibration",
    "Match",
]


def var_explained(X, C, S) -> float:
    """Percent of the total sum of squares reproduced by ``C @ S.T``."""
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    sst = float(np.sum(X * X))
    if sst == 0.0:
        raise ValueError("total sum of squares is zero")
    resid = X - np.asarray(C) @ np.asarray(S).T
    return 100.0 * (1.0 - float(np.sum(resid * resid)) / sst)


def cosine_similarity(s_est, s_ref) -> float:
    s_est = np.asarray(s_est, dtype=np.float64).ravel()
    s_ref = np.asarray(s_ref, dtype=np.float64).ravel()
    ne, nr = np.linalg.norm(s_est), np.linalg.norm(s_ref)
    if ne == 0.0 or nr == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    return float(s_est @ s_ref / (ne * nr))


@dataclass(frozen=True)
class Match:
    est: Tuple[int, ...]    # est[r] is the estimated column matched to reference r
    cosines: Tuple[float, ...]

    @property
    def total(self) -> float:
        return float(sum(self.cosines))


def _cosine_table(S_est, S_ref) -> np.ndarray:
    S_est = np.asarray(S_est, dtype=np.float64)
    S_ref = np.asarray(S_ref, dtype=np.float64)
    ne = np.linalg.norm(S_est, axis=0)
    nr = np.linalg.norm(S_ref, axis=0)
    ne[ne == 0] = 1.0
    nr[nr == 0] = 1.0
    return (S_est / ne).T @ (S_ref / nr)


def match_components(S_est, S_ref, exhaustive_limit: int = 6) -> Match:
    """Assign each reference column to a distinct estimated column.

    Maximizes the summed cosine.  Search is exhaustive while the number of
    estimated columns is at most ``exhaustive_limit``, greedy above.  Ties go
    to the lexicographically smallest assignment.
    """
    table = _cosine_table(S_est, S_ref)
    n_est, n_ref = table.shape
    if n_est < n_ref:
        raise ValueError(f"{n_ref} references but only {n_est} estimated components")
    if n_est <= exhaustive_limit:
        best, best_score = None, -np.inf
        for perm in itertools.permutations(range(n_est), n_ref):
            score = sum(table[e, r] for r, e in enumerate(perm))
            if score > best_score + 1e-15:
                best, best_score = perm, score
    else:
        best = [-1] * n_ref
        used_e, used_r = set(), set()
        order = np.argsort(-table, axis=None, kind="stable")
        for flat in order:
            e, r = divmod(int(flat), n_ref)
            if e in used_e or r in used_r:
                continue
            best[r] = e
            used_e.add(e)
            used_r.add(r)
            if len(used_r) == n_ref:
                break
    return Match(tuple(int(e) for e in best), tuple(float(table[e, r]) for r, e in enumerate(best)))


def peak_areas(C, dims) -> np.ndarray:
    """Per-sample component volume: sum of each column of ``C`` over a sample's (i, k) block.

    Returns an ``(L, R)`` array.
    """
    I, K, L = dims[:3]
    C = np.asarray(C, dtype=np.float64)
    return C.reshape(I * K, L, C.shape[1], order="F").sum(axis=0)


@dataclass(frozen=True)
class Calibration:
    r2: float
    bias: float
    slope: float

    def predict(self, area):
        return (np.asarray(area) - self.bias) / self.slope


def calibration_fit(areas, conc) -> Calibration:
    """Least-squares line ``area = slope * conc + bias`` and its R²."""
    areas = np.asarray(areas, dtype=np.float64).ravel()
    conc = np.asarray(conc, dtype=np.float64).ravel()
    if areas.shape != conc.shape:
        raise ValueError("areas and concentrations differ in length")
    if np.unique(conc).size < 2:
        raise ValueError("calibration needs at least two distinct concentration levels")
    design = np.column_stack([conc, np.ones_like(conc)])
    (slope, bias), *_ = np.linalg.lstsq(design, areas, rcond=None)
    fitted = slope * conc + bias
    ss_res = float(np.sum((areas - fitted) ** 2))
    ss_tot = float(np.sum((areas - areas.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return Calibration(float(r2), float(bias), float(slope))


def pooled_rsd(groups: Sequence[Sequence[float]]) -> float:
    """Pooled standard deviation over groups divided by the grand mean.

    Group variances are weighted by their degrees of freedom.
    """
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if not groups or any(g.size < 2 for g in groups):
        raise ValueError("pooled RSD needs groups with at least two values each")
    dof = np.array([g.size - 1 for g in groups], dtype=float)
    var = np.array([g.var(ddof=1) for g in groups])
    pooled = np.sqrt(np.sum(dof * var) / dof.sum())
    grand = np.concatenate(groups).mean()
    if grand == 0:
        raise ValueError("grand mean is zero")
    return float(pooled / abs(grand))


def extrapolation_protocol(areas, conc, depths: Sequence[int] = (1, 2, 3, 4, 5, 6)) -> Dict[int, np.ndarray]:
    """Predict the highest calibration point from lines fitted on lower points.

    Parameters
    ----------
    areas, conc : array_like, shape (n_points,) or (n_points, n_replicates)
        Calibration points in any order; replicates share a concentration.
    depths : removal depths ``p``.  For each ``p`` the line uses the
        ``n_points - p`` lowest points and predicts every replicate of the
        highest point (``p = 0`` is the in-sample fit).

    Returns
    -------
    dict mapping ``p`` to relative errors ``(predicted - true) / true``
    (one per replicate of the held-out point).
    """
    areas = np.asarray(areas, dtype=np.float64)
    conc = np.asarray(conc, dtype=np.float64)
    if areas.ndim == 1:
        areas = areas[:, None]
    if conc.ndim == 1:
        conc = np.broadcast_to(conc[:, None], areas.shape)
    level = conc.mean(axis=1)
    order = np.argsort(level, kind="stable")
    areas, conc, level = areas[order], conc[order], level[order]
    n = level.size
    top_area, top_conc = areas[-1], conc[-1]
    out = {}
    for p in depths:
        if p < 0 or n - p < 2 or (p == 0 and n < 2):
            raise ValueError(f"removal depth {p} leaves fewer than 2 calibration points")
        keep = slice(0, n if p == 0 else n - p)
        cal = calibration_fit(areas[keep], conc[keep])
        out[p] = (cal.predict(top_area) - top_conc) / top_conc
    return out


def spread(values) -> Dict[str, float]:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "q25": float("nan"), "q75": float("nan"), "n": 0}
    q25, q75 = np.percentile(v, [25, 75])
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "q25": float(q25),
        "q75": float(q75),
        "n": int(v.size),
    }


@dataclass
class FitReport:
    var_explained: float
    matches: List[Tuple[int, int, float]] = field(default_factory=list)
    calibration: Dict[int, Calibration] = field(default_factory=dict)
    pooled_rsd: Optional[float] = None
    extrapolation: Dict[int, List[float]] = field(default_factory=dict)  # depth -> errors, analytes pooled
    spread: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def cosines(self) -> List[float]:
        return [c for _, _, c in self.matches]

    def scalars(self) -> Dict[str, float]:
        """Flat name -> value mapping used for CSV rows."""
        row = {"var_explained": self.var_explained}
        cos = self.cosines
        if cos:
            row["cosine_mean"] = float(np.mean(cos))
            row["cosine_min"] = float(np.min(cos))
        for est, ref, c in self.matches:
            row[f"cosine_a{ref}"] = c
        if self.calibration:
            row["r2_mean"] = float(np.mean([c.r2 for c in self.calibration.values()]))
            row["rel_bias_mean"] = float(np.mean([self._rel_bias(c) for c in self.calibration.values()]))
            for ref, cal in sorted(self.calibration.items()):
                row[f"r2_a{ref}"] = cal.r2
                row[f"bias_a{ref}"] = cal.bias
                row[f"slope_a{ref}"] = cal.slope
        if self.pooled_rsd is not None:
            row["pooled_rsd"] = self.pooled_rsd
        return row

    @staticmethod
    def _rel_bias(cal: Calibration) -> float:
        # bias expressed in concentration units
        return abs(cal.bias / cal.slope) if cal.slope != 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "var_explained": self.var_explained,
            "matches": [list(m) for m in self.matches],
            "calibration": {str(k): asdict(v) for k, v in self.calibration.items()},
            "pooled_rsd": self.pooled_rsd,
            "extrapolation": {str(k): list(v) for k, v in self.extrapolation.items()},
            "spread": self.spread,
        }


def _replicate_groups(values, levels):
    groups = {}
    for v, c in zip(values, levels):
        groups.setdefault(float(c), []).append(float(v))
    return [g for _, g in sorted(groups.items()) if len(g) >= 2]


def evaluate(X, C, S, dims, spectra=None, concentrations=None) -> FitReport:
    """Single-model report against optional ground truth.

    With concentrations, each matched component gets a calibration line of
    peak area on concentration.  Samples sharing a concentration count as
    replicates for the pooled RSD, and with three or more levels the
    extrapolation errors are filled in for every removal depth that leaves
    two points.
    """
    report = FitReport(var_explained(X, C, S))
    if spectra is None:
        return report
    m = match_components(S, spectra)
    report.matches = [(e, r, c) for r, (e, c) in enumerate(zip(m.est, m.cosines))]
    if concentrations is None:
        return report
    areas = peak_areas(C, dims)
    conc = np.asarray(concentrations, dtype=np.float64)
    rsds = []
    for r, e in enumerate(m.est):
        levels = np.unique(conc[:, r])
        if levels.size < 2:
            continue
        report.calibration[r] = calibration_fit(areas[:, e], conc[:, r])
        groups = _replicate_groups(areas[:, e], conc[:, r])
        if groups and np.mean(np.concatenate(groups)) != 0:
            rsds.append(pooled_rsd(groups))
        by_level = [areas[conc[:, r] == c, e] for c in levels]
        if levels.size >= 3 and len({a.size for a in by_level}) == 1:
            depths = range(1, min(6, levels.size - 2) + 1)
            grid = np.broadcast_to(levels[:, None], (levels.size, by_level[0].size))
            for p, err in extrapolation_protocol(np.array(by_level), grid, depths).items():
                report.extrapolation.setdefault(p, []).extend(err.tolist())
    if rsds:
        report.pooled_rsd = float(np.mean(rsds))
    return report
