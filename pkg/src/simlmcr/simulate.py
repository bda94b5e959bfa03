"""Synthetic multi-sample GC×GC-MS tensors with known ground truth.

SNR defaults to the RMS of the clean analyte signal over the noise
standard deviation (``snr_definition="frobenius"``); ``"peak"`` uses the
largest clean value instead.  Absolute SNR values are comparable only
between runs of this generator with the same definition.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Gc2Dataset, augment, write_container

__all__ = [
    "SimConfig",
    "GroundTruth",
    "generate",
    "dilution_series",
    "stack_series",
    "make_spectra",
    "save_simulation",
    "load_truth",
]


@dataclass(frozen=True)
class SimConfig:
    """Generator settings.

    Apex positions are continuous bin coordinates, one per analyte.  The
    second-dimension apex of analyte ``a`` at modulation ``i`` is
    ``apex2[a] + shift_slope * (i - apex1[a])`` plus the sample offset, so
    the apex itself sits at ``apex2`` when the sample is unshifted.
    """

    dims: Tuple[int, int, int, int] = (20, 200, 10, 761)
    n_analytes: int = 2
    snr: float = math.inf
    snr_definition: str = "frobenius"
    width1: Tuple[float, ...] = (2.0, 2.0)
    width2: Tuple[float, ...] = (6.0, 6.0)
    apex1: Tuple[float, ...] = (9.0, 10.5)
    apex2: Tuple[float, ...] = (95.0, 105.0)
    shift_slope: float = -0.5
    shift1: float = 1.0
    shift2: float = 5.0
    fractional_shifts: bool = False
    concentration_design: str = "random"
    dilution_ratio: float = 0.8
    concentrations: Optional[Tuple[Tuple[float, ...], ...]] = None
    conc_range: Tuple[float, float] = (0.2, 1.0)
    n_fragments: int = 40
    shared_fragments: int = 10
    intensity_floor: float = 0.2
    baseline: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "conc_range", tuple(float(c) for c in self.conc_range))
        for name in ("width1", "width2", "apex1", "apex2"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (float(value),) * self.n_analytes
            object.__setattr__(self, name, tuple(float(v) for v in value))
        if self.concentrations is not None:
            object.__setattr__(
                self, "concentrations", tuple(tuple(float(c) for c in row) for row in self.concentrations)
            )
        self.validate()

    def validate(self) -> None:
        if len(self.dims) != 4 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be four positive integers, got {self.dims}")
        if self.n_analytes < 1:
            raise ValueError("n_analytes must be >= 1")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.snr_definition not in ("frobenius", "peak"):
            raise ValueError(f"unknown snr_definition {self.snr_definition!r}")
        I, K, L, J = self.dims
        for name in ("width1", "width2", "apex1", "apex2"):
            if len(getattr(self, name)) != self.n_analytes:
                raise ValueError(f"{name} needs one value per analyte")
        if min(self.width1 + self.width2) <= 0:
            raise ValueError("peak widths must be positive")
        if self.shift1 < 0 or self.shift2 < 0:
            raise ValueError("shift ranges must be non-negative")
        for a in range(self.n_analytes):
            w1, w2 = self.width1[a], self.width2[a]
            lo1 = self.apex1[a] - self.shift1 - 3 * w1
            hi1 = self.apex1[a] + self.shift1 + 3 * w1
            if lo1 < 0 or hi1 > I - 1:
                raise ValueError(f"analyte {a}: first-dimension peak leaves the window")
            drift = abs(self.shift_slope) * (self.shift1 + 3 * w1)
            lo2 = self.apex2[a] - drift - self.shift2 - 3 * w2
            hi2 = self.apex2[a] + drift + self.shift2 + 3 * w2
            if lo2 < 0 or hi2 > K - 1:
                raise ValueError(f"analyte {a}: second-dimension peak leaves the window")
        if self.concentration_design not in ("random", "dilution", "explicit"):
            raise ValueError(f"unknown concentration design {self.concentration_design!r}")
        if self.concentration_design == "explicit":
            conc = np.asarray(self.concentrations, dtype=float)
            if conc.shape != (L, self.n_analytes) or np.any(conc < 0):
                raise ValueError("explicit concentrations must be a non-negative (L, n_analytes) table")
        if self.concentration_design == "dilution" and not 0 < self.dilution_ratio <= 1:
            raise ValueError("dilution_ratio must be in (0, 1]")
        if not 0 <= self.shared_fragments <= self.n_fragments <= J:
            raise ValueError("need 0 <= shared_fragments <= n_fragments <= J")
        if not 0 <= self.intensity_floor <= 1:
            raise ValueError("intensity_floor must be in [0, 1]")
        if self.baseline < 0:
            raise ValueError("baseline must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("snr") in ("inf", "Infinity", None):
            d["snr"] = math.inf
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["snr"]):
            d["snr"] = "inf"
        return d


@dataclass
class GroundTruth:
    spectra: np.ndarray            # (J, n_analytes), unit norm
    concentrations: np.ndarray     # (L, n_analytes)
    clean: np.ndarray              # (I, K, L, J)
    noise: np.ndarray              # (I, K, L, J)
    apex1: np.ndarray              # (L, n_analytes)
    apex2: np.ndarray              # (L, n_analytes), at the unshifted modulation
    noise_sigma: float = 0.0
    baseline_spectrum: Optional[np.ndarray] = None
    profiles: Optional[np.ndarray] = None  # (IKL, n_analytes) clean elution profiles

    def sidecar(self) -> dict:
        return {
            "spectra": self.spectra.tolist(),
            "concentrations": self.concentrations.tolist(),
            "apex1": self.apex1.tolist(),
            "apex2": self.apex2.tolist(),
            "noise_sigma": self.noise_sigma,
            "baseline_spectrum": None if self.baseline_spectrum is None else self.baseline_spectrum.tolist(),
        }


def _gaussian(x, centre, width):
    return np.exp(-0.5 * ((x - centre) / width) ** 2)


def make_spectra(J: int, n_analytes: int, n_fragments: int, shared: int, rng,
                 floor: float = 0.2) -> np.ndarray:
    """Sparse non-negative unit-norm spectra with ``shared`` common channels.

    Fragment intensities are uniform on ``[floor, 1)`` before normalization.
    """
    spectra = np.zeros((J, n_analytes))
    common = rng.choice(J, size=shared, replace=False)
    rest = np.setdiff1d(np.arange(J), common)
    for a in range(n_analytes):
        own = rng.choice(rest, size=n_fragments - shared, replace=False)
        channels = np.concatenate([common, own])
        spectra[channels, a] = rng.uniform(floor, 1.0, size=channels.size)
    return spectra / np.linalg.norm(spectra, axis=0)


def noise_sigma(snr: float, definition: str, peak_max: float, signal_rms: float) -> float:
    """Noise standard deviation giving ``snr`` under ``definition``.

    ``"frobenius"``: ``||clean||_F / ||noise||_F`` (expected), analyte signal only.
    ``"peak"``: largest clean analyte value over the noise standard deviation.
    """
    if definition == "peak":
        return peak_max / snr
    return signal_rms / snr


def _concentrations(cfg: SimConfig, rng) -> np.ndarray:
    L = cfg.dims[2]
    if cfg.concentration_design == "explicit":
        return np.asarray(cfg.concentrations, dtype=float)
    if cfg.concentration_design == "dilution":
        levels = cfg.dilution_ratio ** np.arange(L)
        return np.repeat(levels[:, None], cfg.n_analytes, axis=1)
    lo, hi = cfg.conc_range
    return rng.uniform(lo, hi, size=(L, cfg.n_analytes))


def generate(cfg: SimConfig, spectra: Optional[np.ndarray] = None) -> Tuple[Gc2Dataset, GroundTruth]:
    """Simulate one data tensor.

    Random draws come from independent child streams of ``cfg.seed``
    (spectra, concentrations, shifts, noise), so changing the SNR leaves
    spectra, concentrations and shifts untouched.
    """
    cfg.validate()
    I, K, L, J = cfg.dims
    A = cfg.n_analytes
    ss = np.random.SeedSequence(cfg.seed)
    rng_spec, rng_conc, rng_shift, rng_noise = (np.random.default_rng(s) for s in ss.spawn(4))

    if spectra is None:
        spectra = make_spectra(J, A, cfg.n_fragments, cfg.shared_fragments, rng_spec, cfg.intensity_floor)
    spectra = np.asarray(spectra, dtype=float)
    conc = _concentrations(cfg, rng_conc)

    if cfg.fractional_shifts:
        d1 = rng_shift.uniform(-cfg.shift1, cfg.shift1, size=(L, A))
        d2 = rng_shift.uniform(-cfg.shift2, cfg.shift2, size=(L, A))
    else:
        d1 = rng_shift.integers(-int(cfg.shift1), int(cfg.shift1) + 1, size=(L, A)).astype(float)
        d2 = rng_shift.integers(-int(cfg.shift2), int(cfg.shift2) + 1, size=(L, A)).astype(float)
    apex1 = np.asarray(cfg.apex1)[None, :] + d1
    apex2 = np.asarray(cfg.apex2)[None, :] + d2

    i = np.arange(I, dtype=float)
    k = np.arange(K, dtype=float)
    profiles = np.zeros((I, K, L, A))
    for a in range(A):
        for l in range(L):
            g1 = _gaussian(i, apex1[l, a], cfg.width1[a])
            centre2 = apex2[l, a] + cfg.shift_slope * (i - apex1[l, a])
            g2 = _gaussian(k[None, :], centre2[:, None], cfg.width2[a])
            profiles[:, :, l, a] = conc[l, a] * g1[:, None] * g2
    clean = np.einsum("ikla,ja->iklj", profiles, spectra)
    peak_max = float(clean.max())
    signal_rms = float(np.sqrt(np.mean(clean * clean)))

    baseline_spectrum = None
    if cfg.baseline > 0:
        baseline_spectrum = np.abs(rng_spec.normal(size=J)) + 0.5
        baseline_spectrum /= np.linalg.norm(baseline_spectrum)
        clean = clean + cfg.baseline * baseline_spectrum[None, None, None, :]

    if math.isinf(cfg.snr):
        sigma = 0.0
        noise = np.zeros_like(clean)
    else:
        sigma = noise_sigma(cfg.snr, cfg.snr_definition, peak_max, signal_rms)
        noise = rng_noise.normal(0.0, sigma, size=clean.shape)
    data = clean + noise

    truth = GroundTruth(
        spectra=spectra,
        concentrations=conc,
        clean=clean,
        noise=noise,
        apex1=apex1,
        apex2=apex2,
        noise_sigma=sigma,
        baseline_spectrum=baseline_spectrum,
        profiles=profiles.reshape(I * K * L, A, order="F"),
    )
    return Gc2Dataset(data), truth


def dilution_series(cfg: SimConfig, n_points: int, ratio: float, replicates: int = 3
                    ) -> List[Tuple[Gc2Dataset, GroundTruth]]:
    """Calibration points with geometrically decreasing concentration.

    Point ``p`` holds ``replicates`` samples at ``ratio**p`` times the top
    level.  Spectra are shared across points; each point draws its own
    shifts and noise.
    """
    if n_points < 2:
        raise ValueError("a dilution series needs at least 2 points")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    I, K, _, J = cfg.dims
    spectra = make_spectra(J, cfg.n_analytes, cfg.n_fragments, cfg.shared_fragments,
                           np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0]),
                           cfg.intensity_floor)
    out = []
    for p in range(n_points):
        level = ratio ** p
        conc = tuple(tuple(level for _ in range(cfg.n_analytes)) for _ in range(replicates))
        point_cfg = replace(
            cfg,
            dims=(I, K, replicates, J),
            concentration_design="explicit",
            concentrations=conc,
            seed=cfg.seed + 1000 * (p + 1),
        )
        out.append(generate(point_cfg, spectra=spectra))
    return out


def stack_series(series: Sequence[Tuple[Gc2Dataset, GroundTruth]]) -> Tuple[Gc2Dataset, GroundTruth]:
    """Concatenate datasets along the sample mode."""
    datasets, truths = zip(*series)
    data = np.concatenate([d.data for d in datasets], axis=2)
    I, K, _, J = datasets[0].dims
    A = truths[0].spectra.shape[1]
    profiles = np.concatenate([t.profiles.reshape(I, K, -1, A, order="F") for t in truths], axis=2)
    truth = GroundTruth(
        spectra=truths[0].spectra,
        concentrations=np.concatenate([t.concentrations for t in truths]),
        clean=np.concatenate([t.clean for t in truths], axis=2),
        noise=np.concatenate([t.noise for t in truths], axis=2),
        apex1=np.concatenate([t.apex1 for t in truths]),
        apex2=np.concatenate([t.apex2 for t in truths]),
        noise_sigma=max(t.noise_sigma for t in truths),
        baseline_spectrum=truths[0].baseline_spectrum,
        profiles=profiles.reshape(-1, A, order="F"),
    )
    return Gc2Dataset(data), truth


def save_simulation(dataset: Gc2Dataset, truth: GroundTruth, out: Path, cfg: Optional[SimConfig] = None) -> dict:
    """Write ``<out>.tensor``, ``<out>.truth.json`` and ``<out>.noise.tensor``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "tensor": out.with_name(out.name + ".tensor"),
        "truth": out.with_name(out.name + ".truth.json"),
        "noise": out.with_name(out.name + ".noise.tensor"),
    }
    mat = augment(dataset)
    write_container(paths["tensor"], mat.values, mat.dims)
    noise = augment(Gc2Dataset(truth.noise))
    write_container(paths["noise"], noise.values, noise.dims)
    side = truth.sidecar()
    side["dims"] = list(dataset.dims)
    if cfg is not None:
        side["config"] = cfg.to_dict()
    paths["truth"].write_text(json.dumps(side, indent=1))
    return paths


def load_truth(path) -> dict:
    side = json.loads(Path(path).read_text())
    for key in ("spectra", "concentrations", "apex1", "apex2", "baseline_spectrum"):
        if side.get(key) is not None:
            side[key] = np.asarray(side[key], dtype=float)
    return side
