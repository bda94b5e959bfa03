"""``simlmcr`` command line: simulate, fit, benchmark, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Outputs land under ``$SIMLMCR_OUTPUT_DIR`` (default ``./simlmcr_out``)
unless a path is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench, metrics
from .mcr import MODES, FitOptions, fit, save_model
from .simulate import SimConfig, generate, load_truth, save_simulation
from .tensor import read_container, write_csv

log = logging.getLogger("simlmcr")

ENV_OUTPUT_DIR = "SIMLMCR_OUTPUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_DIR, "simlmcr_out"))


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return d


def _add_denoise_flags(p):
    p.add_argument("--denoise", action=argparse.BooleanOptionalAction, default=None,
                   help="switch wavelet denoising inside SIML (siml <-> siml_dn)")
    p.add_argument("--wavelet-levels", type=int)
    p.add_argument("--wavelet-family")


def _apply_fit_flags(opts: dict, args, denoise_selects_mode: bool = True) -> dict:
    """Merge command-line flags into a FitOptions dict; flags win.

    For a single fit ``--denoise`` picks between siml and siml_dn.  A
    benchmark compares fixed modes, so there it only switches the denoiser.
    """
    opts = dict(opts)
    for flag, key in (("components", "R"), ("mode", "mode"), ("seed", "seed"),
                      ("max_iterations", "max_iterations"), ("tol", "tol"),
                      ("init_candidates", "init_candidates")):
        v = getattr(args, flag, None)
        if v is not None:
            opts[key] = v
    dn = dict(opts.get("denoise") or {})
    if args.wavelet_levels is not None:
        dn["levels"] = args.wavelet_levels
    if args.wavelet_family is not None:
        dn["wavelet"] = args.wavelet_family
    opts["denoise"] = dn
    if args.denoise is not None and not denoise_selects_mode:
        dn["enabled"] = bool(args.denoise)
    elif args.denoise is not None:
        mode = opts.get("mode", "mcr")
        if mode == "mcr" and args.denoise:
            raise ConfigError("--denoise needs a SIML mode (denoising acts inside the SIML constraint)")
        if mode != "mcr":
            opts["mode"] = "siml_dn" if args.denoise else "siml"
    return opts


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    for flag, key in (("seed", "seed"), ("snr", "snr"), ("snr_definition", "snr_definition")):
        v = getattr(args, flag)
        if v is not None:
            cfg[key] = v
    if args.dims is not None:
        cfg["dims"] = args.dims
    try:
        sim = SimConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid simulation config: {e}") from e
    ds, truth = generate(sim)
    out = Path(args.out) if args.out else output_root() / "sim"
    paths = save_simulation(ds, truth, out, sim)
    if args.csv:
        write_csv(out.with_name(out.name + ".csv"), ds)
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_fit(args) -> int:
    opts = _load_json(args.config)
    truth_path = Path(args.truth) if args.truth else Path(str(args.tensor).removesuffix(".tensor") + ".truth.json")
    truth = load_truth(truth_path) if truth_path.exists() else None
    if args.truth and truth is None:
        raise ConfigError(f"truth file {args.truth} not found")
    if truth is not None and "R" not in opts and args.components is None:
        opts["R"] = truth["spectra"].shape[1]
    opts = _apply_fit_flags(opts, args)
    if "R" not in opts:
        raise ConfigError("number of components unknown: pass -R or a truth sidecar")
    try:
        fo = FitOptions.from_dict(opts)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid fit options: {e}") from e
    try:
        X = read_container(args.tensor)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    model = fit(X, fo)
    out = Path(args.out) if args.out else output_root() / "fit"
    save_model(model, out)
    spectra = truth["spectra"] if truth is not None else None
    conc = truth["concentrations"] if truth is not None else None
    rep = metrics.evaluate(X, model.C, model.S, model.dims, spectra, conc)
    doc = {"report": rep.to_dict(), "scalars": rep.scalars(), "converged": model.converged,
           "iterations": model.iterations, "loss": model.loss}
    (out / "report.json").write_text(json.dumps(doc, indent=1))
    if not model.converged:
        log.warning("fit stopped at max_iterations=%d without converging", fo.max_iterations)
    for k, v in doc["scalars"].items():
        print(f"{k}\t{v:.6g}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    d = _load_json(args.spec)
    if args.snr_grid is not None:
        d["snr_grid"] = args.snr_grid
    if args.modes is not None:
        d["modes"] = args.modes
    if args.fits is not None:
        d["fits_per_cell"] = args.fits
    if args.seed is not None:
        d["base_seed"] = args.seed
    if args.no_archive:
        d["archive_models"] = False
    d["fit"] = _apply_fit_flags(d.get("fit", {}), args, denoise_selects_mode=False)
    try:
        spec = bench.BenchmarkSpec.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid benchmark spec: {e}") from e
    out = Path(args.out or spec.out_dir or output_root() / "benchmark")
    path, cells = bench.run_benchmark(spec, out, jobs=args.jobs)
    partial = [c for c in cells if not c.complete]
    print(path)
    if partial:
        print(f"{len(partial)} cell(s) with fewer than {spec.fits_per_cell} converged fits", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        paths = bench.write_report(args.results, args.out or Path(args.results).parent / "report")
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simlmcr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic tensor with ground truth")
    s.add_argument("--config", help="JSON SimConfig")
    s.add_argument("--out", help="output path stem (.tensor/.truth.json/.noise.tensor appended)")
    s.add_argument("--seed", type=int)
    s.add_argument("--snr", type=float)
    s.add_argument("--snr-definition", choices=("frobenius", "peak"))
    s.add_argument("--dims", type=int, nargs=4, metavar=("I", "K", "L", "J"))
    s.add_argument("--csv", action="store_true", help="also write a CSV export")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one model to a tensor container")
    f.add_argument("tensor")
    f.add_argument("--config", help="JSON FitOptions")
    f.add_argument("--truth", help="ground-truth sidecar (default: <tensor stem>.truth.json if present)")
    f.add_argument("--out", help="model directory")
    f.add_argument("-R", "--components", type=int)
    f.add_argument("--mode", choices=MODES)
    f.add_argument("--seed", type=int)
    f.add_argument("--max-iterations", type=int)
    f.add_argument("--tol", type=float)
    f.add_argument("--init-candidates", type=int)
    _add_denoise_flags(f)
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("benchmark", help="multi-start SNR sweep")
    b.add_argument("spec", nargs="?", help="JSON benchmark spec")
    b.add_argument("--out", help="output directory")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--fits", type=int, help="fits per (SNR, mode) cell")
    b.add_argument("--snr-grid", type=float, nargs="+")
    b.add_argument("--modes", nargs="+", choices=MODES)
    b.add_argument("--seed", type=int, help="base seed")
    b.add_argument("-R", "--components", type=int)
    b.add_argument("--max-iterations", type=int)
    b.add_argument("--tol", type=float)
    b.add_argument("--init-candidates", type=int)
    b.add_argument("--no-archive", action="store_true", help="skip per-cell model archives")
    _add_denoise_flags(b)
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("report", help="SVG plots and markdown summary from results.csv")
    r.add_argument("results")
    r.add_argument("--out", help="report directory (default: <results dir>/report)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, bench.SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
