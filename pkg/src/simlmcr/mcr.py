"""Non-negative MCR-ALS with optional shift-invariant multi-linearity.

One iteration regresses the data on the current spectra (C-step), projects
the flagged elution profiles (SIML / SIML-DN modes), regresses the data on
the profiles (S-step) and rescales so every spectrum has unit norm.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import metrics
from .denoise import DenoiseConfig
from .kernels import fcnnls
from .siml import SimlConfig, apply_siml
from .tensor import read_container, write_container

log = logging.getLogger(__name__)

MODES = ("mcr", "siml", "siml_dn")
INIT_EPS = 1e-6
# loss at this fraction of ||X||^2 is exact to working precision
EXACT_FIT = 1e-24


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    R: int
    mode: str = "mcr"
    constrain: Optional[Tuple[bool, ...]] = None
    max_iterations: int = 1000
    tol: float = 1e-8
    seed: int = 0
    init: str = "random"
    S0: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    init_candidates: int = 1
    denoise: DenoiseConfig = DenoiseConfig()

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init not in ("random", "provided"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.S0 is None:
            raise ValueError("init='provided' needs S0")
        if self.init_candidates < 1:
            raise ValueError("init_candidates must be >= 1")
        if self.constrain is not None:
            flags = tuple(bool(f) for f in self.constrain)
            if len(flags) != self.R:
                raise ValueError("constrain needs one flag per component")
            object.__setattr__(self, "constrain", flags)

    @property
    def flags(self) -> Tuple[bool, ...]:
        if self.mode == "mcr":
            return (False,) * self.R
        return self.constrain if self.constrain is not None else (True,) * self.R

    def siml_config(self) -> SimlConfig:
        return SimlConfig(denoise=self.denoise if self.mode == "siml_dn" else None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("S0")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitOptions":
        """Inverse of ``to_dict``; rejects unknown keys."""
        known = {f.name for f in fields(cls)} - {"S0"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fit option keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("denoise"), dict):
            d["denoise"] = DenoiseConfig(**d["denoise"])
        if d.get("constrain") is not None:
            d["constrain"] = tuple(d["constrain"])
        return cls(**d)


@dataclass
class Model:
    C: np.ndarray
    S: np.ndarray
    loss_trace: np.ndarray
    converged: bool
    iterations: int
    dims: Tuple[int, int, int, int]
    options: FitOptions
    concentrations: Optional[np.ndarray] = None
    degenerate: Tuple[int, ...] = ()
    reseeded: Tuple[int, ...] = ()

    @property
    def loss(self) -> float:
        return float(self.loss_trace[-1])

    def reconstruction(self) -> np.ndarray:
        return self.C @ self.S.T


def _values(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=np.float64)


def loss(X, C, S) -> float:
    """Squared Frobenius norm of ``X - C S^T``."""
    R = _values(X) - np.asarray(C) @ np.asarray(S).T
    return float(np.einsum("ij,ij->", R, R))


def candidate_starts(X, opts: FitOptions) -> List[np.ndarray]:
    """The ``S0`` candidates drawn for ``opts.seed`` (uniform on ``[1e-6, 1)``)."""
    J = _values(X).shape[1]
    if opts.init == "provided":
        S0 = np.asarray(opts.S0, dtype=np.float64)
        if S0.shape != (J, opts.R) or np.any(S0 < 0):
            raise ValueError(f"S0 must be non-negative with shape {(J, opts.R)}")
        return [S0.copy()]
    rng = np.random.default_rng(opts.seed)
    return [rng.uniform(INIT_EPS, 1.0, size=(J, opts.R)) for _ in range(opts.init_candidates)]


def sweep_loss(X, S0, opts: FitOptions) -> float:
    """Loss after one full ALS sweep from ``S0``."""
    state = _State(X, opts)
    state.S = S0.copy()
    state.sweep()
    return state.loss()


def initialize(X, opts: FitOptions) -> Tuple[np.ndarray, np.ndarray]:
    """Starting ``(C0, S0)``; with several candidates keeps the best one-sweep loss."""
    cands = candidate_starts(X, opts)
    if len(cands) == 1:
        S0 = cands[0]
    else:
        scores = [sweep_loss(X, S, opts) for S in cands]
        S0 = cands[int(np.argmin(scores))]
    # dead (all-zero) columns give zero profiles here and are re-seeded by the loop
    C0, _ = _State(X, opts)._half(S0, S0.T @ _values(X).T, None)
    return C0, S0


class _State:
    """Mutable iteration state for one fit."""

    def __init__(self, X, opts: FitOptions):
        self.X = _values(X)
        self.dims = getattr(X, "dims", None)
        self.opts = opts
        self.flags = opts.flags
        if any(self.flags) and self.dims is None:
            raise ValueError("SIML modes need an AugmentedMatrix with tensor dims")
        self.siml_cfg = opts.siml_config()
        R = opts.R
        self.C = np.zeros((self.X.shape[0], R))
        self.S = None
        self.Pc = None
        self.Ps = None
        self.conc = None
        if any(self.flags):
            self.conc = np.zeros((self.dims[2], R))
        self.reseeded = set()
        self.degenerate = set()
        self.XtC = None
        self.xnorm2 = float(np.einsum("ij,ij->", self.X, self.X))

    def _half(self, F, B, passive):
        """NNLS for every row of the free factor; ``B`` is ``F^T`` times the data."""
        R = F.shape[1]
        alive = np.flatnonzero(np.any(F, axis=0))
        rows = B.shape[1]
        out = np.zeros((rows, R))
        P = np.zeros((rows, R), dtype=bool)
        if alive.size:
            Fa = F[:, alive]
            warm = passive[:, alive].T if passive is not None else None
            res, Pa = fcnnls(Fa.T @ Fa, B[alive], warm)
            out[:, alive] = res.T
            P[:, alive] = Pa.T
        return out, P

    def update_C(self):
        self.C, self.Pc = self._half(self.S, self.S.T @ self.X.T, self.Pc)
        for r, flag in enumerate(self.flags):
            if flag and r not in self.degenerate:
                res = apply_siml(self.C[:, r], self.dims[:3], self.siml_cfg)
                self.C[:, r] = res.constrained_profile
                self.conc[:, r] = res.concentrations

    def update_S(self):
        self.XtC = self.X.T @ self.C
        self.S, self.Ps = self._half(self.C, self.XtC.T, self.Ps)

    def loss(self) -> float:
        """Loss from Gram terms; the direct residual once the fit is near exact."""
        val = (self.xnorm2 - 2.0 * float(np.sum(self.S * self.XtC))
               + float(np.sum((self.C.T @ self.C) * (self.S.T @ self.S))))
        if val <= 1e-10 * self.xnorm2:
            val = loss(self.X, self.C, self.S)
        return max(val, 0.0)

    def normalize(self):
        norms = np.linalg.norm(self.S, axis=0)
        ok = norms > 0
        self.S[:, ok] /= norms[ok]
        self.C[:, ok] *= norms[ok]
        if self.XtC is not None:
            self.XtC[:, ok] *= norms[ok]

    def reseed(self) -> bool:
        """Revive all-zero components once from the worst-fit data row."""
        dead = [r for r in range(self.opts.R)
                if (not np.any(self.C[:, r]) or not np.any(self.S[:, r])) and r not in self.degenerate]
        if not dead:
            return False
        resid = self.X - self.C @ self.S.T
        for r in dead:
            if r in self.reseeded:
                self.degenerate.add(r)
                self.C[:, r] = 0.0
                self.S[:, r] = 0.0
                log.warning("component %d collapsed again; flagged degenerate", r)
                continue
            self.reseeded.add(r)
            row = int(np.argmax(np.einsum("ij,ij->i", resid, resid)))
            s = np.maximum(resid[row], 0.0)
            if not np.any(s):
                s = np.full(self.X.shape[1], 1.0)
            self.S[:, r] = s / np.linalg.norm(s)
            self.Pc = self.Ps = None
            log.info("component %d re-seeded from residual row %d", r, row)
        return True

    def sweep(self):
        self.update_C()
        self.update_S()
        if self.reseed():
            self.update_C()
            self.update_S()
        self.normalize()


def fit(X, opts: FitOptions) -> Model:
    """Fit ``X ~ C S^T`` under non-negativity and the configured constraints."""
    Xv = _values(X)
    if not np.all(np.isfinite(Xv)):
        raise ValueError("X contains non-finite values")
    if opts.R > min(Xv.shape):
        raise ValueError(f"R={opts.R} exceeds min{Xv.shape}")
    dims = tuple(getattr(X, "dims", (Xv.shape[0], 1, 1, Xv.shape[1])))
    xnorm2 = float(np.einsum("ij,ij->", Xv, Xv))

    _, S0 = initialize(X, opts)
    state = _State(X, opts)
    state.S = S0.copy()

    trace = []
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        state.sweep()
        cur = state.loss()
        if not np.isfinite(cur):
            raise FitError(f"loss became {cur} at iteration {it} (mode={opts.mode}, seed={opts.seed})")
        trace.append(cur)
        if cur <= EXACT_FIT * xnorm2:
            converged = True
            break
        if len(trace) > 1:
            prev = trace[-2]
            if abs(prev - cur) <= opts.tol * prev:
                converged = True
                break

    C, S, conc = state.C, state.S, state.conc
    order = np.argsort(-np.linalg.norm(C, axis=0), kind="stable")
    C, S = C[:, order].copy(), S[:, order].copy()
    if conc is not None:
        conc = conc[:, order].copy()
    remap = {int(old): new for new, old in enumerate(order)}
    return Model(
        C=C,
        S=S,
        loss_trace=np.asarray(trace),
        converged=converged,
        iterations=it,
        dims=dims,
        options=opts,
        concentrations=conc,
        degenerate=tuple(sorted(remap[r] for r in state.degenerate)),
        reseeded=tuple(sorted(remap[r] for r in state.reseeded)),
    )


@dataclass
class Ensemble:
    models: List[Model]
    seeds: List[int]
    attempts: int
    complete: bool

    def __len__(self):
        return len(self.models)

    def spread(self, metric: Callable[[Model], float]) -> dict:
        return metrics.spread([metric(m) for m in self.models])

    def cosine_spread(self, S_ref) -> dict:
        """Spread of the mean matched spectral cosine across models."""
        return self.spread(lambda m: float(np.mean(metrics.match_components(m.S, S_ref).cosines)))


def _fit_seed(args):
    X, opts, seed = args
    return fit(X, replace(opts, seed=seed))


def multi_start(X, opts: FitOptions, n_fits: int, jobs: int = 1) -> Ensemble:
    """``n_fits`` converged fits from seeds ``opts.seed + 0, 1, ...``.

    Non-converged fits are replaced by fits from fresh seeds (continuing the
    sequence) until ``n_fits`` models converged or ``3 * n_fits`` retries
    were spent.
    """
    if n_fits < 1:
        raise ValueError("n_fits must be >= 1")
    budget = 3 * n_fits
    models, seeds = [], []
    next_seed = opts.seed
    attempts = 0
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while len(models) < n_fits and attempts < n_fits + budget:
            batch = min(n_fits - len(models), n_fits + budget - attempts)
            batch_seeds = list(range(next_seed, next_seed + batch))
            next_seed += batch
            attempts += batch
            tasks = [(X, opts, s) for s in batch_seeds]
            results = list(pool.map(_fit_seed, tasks)) if pool else [_fit_seed(t) for t in tasks]
            for s, m in zip(batch_seeds, results):
                if m.converged:
                    models.append(m)
                    seeds.append(s)
    finally:
        if pool:
            pool.shutdown()
    complete = len(models) == n_fits
    if not complete:
        warnings.warn(f"only {len(models)} of {n_fits} fits converged within the retry budget")
    return Ensemble(models, seeds, attempts, complete)


# -- persistence -------------------------------------------------------------


def save_model(model: Model, directory) -> Path:
    """``model.json`` plus ``C.tensor`` / ``S.tensor`` containers.

    C is stored with dims ``(I, K, L, R)``; S as ``(J, 1, 1, R)``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    I, K, L, J = model.dims
    R = model.C.shape[1]
    write_container(directory / "C.tensor", model.C, (I, K, L, R))
    write_container(directory / "S.tensor", model.S, (J, 1, 1, R))
    meta = {
        "dims": list(model.dims),
        "converged": model.converged,
        "iterations": model.iterations,
        "loss_trace": model.loss_trace.tolist(),
        "options": model.options.to_dict(),
        "concentrations": None if model.concentrations is None else model.concentrations.tolist(),
        "degenerate": list(model.degenerate),
        "reseeded": list(model.reseeded),
    }
    (directory / "model.json").write_text(json.dumps(meta, indent=1, default=_json_default))
    return directory


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o)}")


def load_model(directory) -> Model:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    C = read_container(directory / "C.tensor").values
    S = read_container(directory / "S.tensor").values
    conc = meta.get("concentrations")
    return Model(
        C=C,
        S=S,
        loss_trace=np.asarray(meta["loss_trace"]),
        converged=meta["converged"],
        iterations=meta["iterations"],
        dims=tuple(meta["dims"]),
        options=FitOptions.from_dict(meta["options"]),
        concentrations=None if conc is None else np.asarray(conc),
        degenerate=tuple(meta["degenerate"]),
        reseeded=tuple(meta["reseeded"]),
    )
