"""
Command-line front end.

    fanophase simulate CONFIG   write one spectrum per angle plus a manifest
    fanophase fit CONFIG        Fano + rational fits and the angle series
    fanophase phases CONFIG     phase retrieval, rho_eg and SVG plots
    fanophase report CONFIG     markdown summary of a finished run

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import bound_state_phase, derive_lineshape
from .config import RunConfig
from .errors import ConfigError, DataError, FanoPhaseError, FitError
from .fitting import (
    FanoFitResult,
    RationalFitResult,
    bootstrap_errors,
    extract_angle_series,
    fit_fano,
    fit_rational,
    to_epsilon,
)
from .phase import (
    reconstruct_rho_eg,
    retrieve_phase,
    rho_from_amplitude,
)
from .spectra import apply_mask, read_spectrum, synthesize, write_spectrum
from .svg import Plot

log = logging.getLogger("fanophase")


def _tag(angle):
    sign = "m" if angle < 0 else "p"
    return f"{sign}{abs(angle):g}".replace(".", "_")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def _angle_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _pmap(fn, items, jobs):
    """Ordered map; results are collected before any file is written."""
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _safe(fn):
    def wrapped(item):
        try:
            return fn(item), None
        except FanoPhaseError as exc:
            return None, exc

    return wrapped


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig, out=None):
    out = Path(out) if out else cfg.output_dir / "spectra"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    model = cfg.model()
    syn = cfg["synthesis"]
    grid = cfg.grid()
    units = cfg["grid"]["units"]
    angles = cfg.angles()

    def make(item):
        i, angle = item
        sp = synthesize(
            model, angle, grid, exposure=syn["exposure"], baseline=syn["baseline"],
            seed=_angle_seed(syn["seed"], i), noiseless=syn["noiseless"], units=units,
            instrument_fwhm=syn["instrument_fwhm"] or None,
        )
        sp.meta["run_seed"] = syn["seed"]
        return sp

    spectra = _pmap(make, list(enumerate(angles)), cfg["run"]["jobs"])
    files = []
    for sp in spectra:
        path = out / f"spectrum_{_tag(sp.angle)}.dat"
        try:
            write_spectrum(sp, path)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc.strerror}") from None
        files.append({"file": path.name, "angle_urad": sp.angle, "seed": sp.meta["seed"], "sha256": _sha256(path)})
    manifest = {"files": files, "model_hash": model.model_hash(), "config_digest": cfg.digest(), "version": __version__}
    _dump(manifest, out / "manifest.json")
    cfg.write_resolved(out)
    log.info("wrote %d spectra to %s", len(files), out)
    return out


# ---------------------------------------------------------------- fit


def _spectrum_files(spectra_dir):
    spectra_dir = Path(spectra_dir)
    if not spectra_dir.is_dir():
        raise DataError(f"spectra directory {spectra_dir} does not exist")
    manifest = spectra_dir / "manifest.json"
    if manifest.exists():
        files = [spectra_dir / f["file"] for f in json.loads(manifest.read_text())["files"]]
    else:
        files = sorted(spectra_dir.glob("*.dat"))
    if not files:
        raise DataError(f"no spectra found in {spectra_dir}")
    return files


def _fit_one(cfg, path):
    fc = cfg["fit"]
    sp = read_spectrum(path)
    if cfg["mask"]["intervals"]:
        sp = apply_mask(sp, cfg["mask"]["intervals"])
    fano = fit_fano(sp, n_starts=fc["n_starts"], seed=fc["seed"])
    report = {"source": path.name, "angle_urad": sp.angle, "units": sp.units, "fano": fano.to_dict()}
    if fc["n_rep"] > 0:
        bands = bootstrap_errors(sp, fano, n_rep=fc["n_rep"], seed=fc["seed"])
        report["bootstrap"] = {k: {"lo": b.lo, "hi": b.hi, "std": b.std, "median": b.median} for k, b in bands.items()}
    eps_sp = to_epsilon(sp, fano)
    report["rational"] = fit_rational(eps_sp).to_dict()
    return report


def cmd_fit(cfg: RunConfig, spectra_dir=None, out=None):
    spectra_dir = Path(spectra_dir) if spectra_dir else cfg.output_dir / "spectra"
    out = Path(out) if out else cfg.output_dir / "fits"
    files = _spectrum_files(spectra_dir)
    out.mkdir(parents=True, exist_ok=True)

    results = _pmap(_safe(lambda p: _fit_one(cfg, p)), files, cfg["run"]["jobs"])
    errors = []
    fano_results = []
    for path, (report, err) in zip(files, results):
        if err is not None:
            errors.append({"file": path.name, "error": str(err), "kind": type(err).__name__})
            log.error("%s: %s", path.name, err)
            continue
        report["spectra_dir"] = os.path.relpath(spectra_dir, out)
        _dump(report, out / f"fit_{_tag(report['angle_urad'])}.json")
        fano_results.append(FanoFitResult.from_dict(report["fano"]))
    _dump({"errors": errors}, out / "errors.json")
    if fano_results:
        slope = cfg.model().delta_c_slope if cfg["fit"]["slope_from_model"] else None
        series = extract_angle_series(fano_results, delta_c_slope=slope)
        _dump(series.to_dict(), out / "angle_series.json")
        (out / "angle_series.txt").write_text(series.to_text(), encoding="utf-8")
    cfg.write_resolved(out)
    if not fano_results:
        raise DataError("no spectrum could be fitted")
    return out, errors


# ---------------------------------------------------------------- phases


def _load_fits(fit_dir):
    fit_dir = Path(fit_dir)
    reports = [json.loads(p.read_text()) for p in sorted(fit_dir.glob("fit_*.json"))]
    if not reports:
        raise DataError(f"no fit reports in {fit_dir}")
    return reports


def cmd_phases(cfg: RunConfig, fit_dir=None, out=None):
    fit_dir = Path(fit_dir) if fit_dir else cfg.output_dir / "fits"
    out = Path(out) if out else cfg.output_dir / "phases"
    reports = _load_fits(fit_dir)
    pc = cfg["phase"]
    ref = pc["reference_angle"]
    curves = {float(r["angle_urad"]): RationalFitResult.from_dict(r["rational"]) for r in reports}
    if ref not in curves or -ref not in curves:
        raise DataError(
            f"phase retrieval requires fits at +-{ref:g} urad: |R(0, eps)| at theta_min is "
            f"estimated from their mean (available angles: {sorted(curves)})"
        )
    model = cfg.model()
    eps = cfg.phase_grid()
    ret = retrieve_phase(
        curves, lambda a: derive_lineshape(model, a).phi, eps, reference_angle=ref,
        weighting=pc["weighting"], n_boot=pc["n_boot"], seed=pc["seed"], conditioning=pc["conditioning"],
        continuum_margin=pc["continuum_margin"],
    )
    phase = ret.phase

    zero = [r for r in reports if float(r["angle_urad"]) == 0.0]
    if zero:
        r = zero[0]
        sp = read_spectrum(fit_dir / r["spectra_dir"] / r["source"])
        if cfg["mask"]["intervals"]:
            sp = apply_mask(sp, cfg["mask"]["intervals"])
        fano = FanoFitResult.from_dict(r["fano"])
        sp = to_epsilon(sp, fano)
        sp.meta["source_id"] = r["source"]
        rho = reconstruct_rho_eg(sp, phase, baseline=fano.baseline)
    else:
        rho = rho_from_amplitude(eps, ret.r0, phase)

    out.mkdir(parents=True, exist_ok=True)
    _dump(phase.to_dict(), out / "phase_curve.json")
    (out / "phase_curve.txt").write_text(phase.to_text(), encoding="utf-8")
    _dump(rho.to_dict(), out / "rho_eg.json")
    (out / "rho_eg.txt").write_text(rho.to_text(), encoding="utf-8")
    _dump(
        {"angles_urad": ret.angles.tolist(), "phi": ret.phis.tolist(), "epsilon": eps.tolist(),
         "r0": ret.r0.tolist(), "xi": ret.xi.tolist(), "valid": ret.xi_valid.tolist()},
        out / "xi.json",
    )
    _phase_plot(phase).save(out / "phase.svg")
    _rho_plot(rho).save(out / "rho_eg.svg")
    cfg.write_resolved(out)
    return out


def _phase_plot(phase):
    eps = phase.epsilon
    shown = np.where(phase.valid, phase.phi_n, np.nan)
    plot = Plot(title="Reconstructed nuclear phase", xlabel="epsilon", ylabel="phi_N (rad)", ylim=(-math.pi, 0.0))
    plot.band(eps, shown - phase.err_lo, shown + phase.err_hi)
    plot.line(eps, shown, label="reconstructed")
    plot.line(eps, bound_state_phase(eps), label="arg(1/(eps+i))", dashed=True)
    return plot


def _rho_plot(rho):
    eps = rho.epsilon
    plot = Plot(title="|rho_eg| (normalised)", xlabel="epsilon", ylabel="|rho_eg|", ylim=(0.0, 1.05))
    plot.line(eps, np.abs(rho.rho), label="reconstructed")
    plot.line(eps, 1.0 / np.sqrt(1.0 + eps * eps), label="1/sqrt(1+eps^2)", dashed=True)
    return plot


# ---------------------------------------------------------------- report


def cmd_report(cfg: RunConfig, out=None):
    root = cfg.output_dir
    out = Path(out) if out else root / "report.md"
    lines = ["# Run report", "", f"Configuration digest: `{cfg.digest()}`", ""]
    series_path = root / "fits" / "angle_series.json"
    if series_path.exists():
        series = json.loads(series_path.read_text())
        lines += ["## Line-shape parameters per angle", "",
                  "| dtheta (urad) | Gamma | Delta_LS | q | 1/q |", "|---:|---:|---:|---:|---:|"]
        for r in series["rows"]:
            lines.append(
                f"| {r['angle_urad']:g} | {_pm(r['gamma_total'], r['gamma_total_err'])} | "
                f"{_pm(r['delta_ls'], r['delta_ls_err'])} | {_pm(r['q_re'], r['q_re_err'])} | {_pm(r['inv_q'], r['inv_q_err'])} |"
            )
        lines.append("")
        if series.get("model"):
            m = series["model"]
            lines += ["Cavity consistency fit:", ""]
            for key in ("gamma", "gamma_sr0", "slope_ratio", "kappa", "coupling_strength"):
                if m.get(key) is not None:
                    lines.append(f"- {key} = {m[key]:.6g}")
            lines.append("")
        for w in series.get("warnings", []):
            lines.append(f"> warning: {w}")
        errs = json.loads((root / "fits" / "errors.json").read_text()).get("errors", [])
        for e in errs:
            lines.append(f"> fit error in `{e['file']}`: {e['error']}")
        lines.append("")
    phase_path = root / "phases" / "phase_curve.json"
    if phase_path.exists():
        from .phase import PhaseCurve

        pcurve = PhaseCurve.from_dict(json.loads(phase_path.read_text()))
        dev = np.abs(pcurve.phi_n - bound_state_phase(pcurve.epsilon))
        lines += ["## Phase retrieval", "", "| range | valid points | max deviation (rad) |", "|---|---:|---:|"]
        for lim in (1.0, 3.0, 5.0, math.inf):
            sel = (np.abs(pcurve.epsilon) <= lim) & pcurve.valid
            md = f"{dev[sel].max():.3g}" if sel.any() else "n/a"
            rng = "all" if math.isinf(lim) else f"abs(eps) <= {lim:g}"
            lines.append(f"| {rng} | {int(sel.sum())} / {int((np.abs(pcurve.epsilon) <= lim).sum())} | {md} |")
        lines += ["", "![phase](phases/phase.svg)", "", "![rho](phases/rho_eg.svg)", ""]
    if len(lines) <= 4:
        raise DataError(f"nothing to report in {root}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def _pm(v, e):
    v, e = float(v), float(e)
    if not math.isfinite(v):
        return f"{v}"
    return f"{v:.5g} ± {e:.2g}"


# ---------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(prog="fanophase", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "synthesise one spectrum per configured angle"),
        ("fit", "fit Fano and rational line shapes to every spectrum"),
        ("phases", "reconstruct the nuclear phase and rho_eg"),
        ("report", "write a markdown summary of the run"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override synthesis.seed")
        p.add_argument("--out", help="override output.dir")
        p.add_argument("--jobs", type=int, help="override run.jobs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--spectra", help="spectra directory (default OUT/spectra)")
        if name == "phases":
            p.add_argument("--fits", help="fit directory (default OUT/fits)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["synthesis.seed"] = args.seed
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.jobs is not None:
        overrides["run.jobs"] = args.jobs
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            _, errors = cmd_fit(cfg, args.spectra)
            if errors:
                return DataError.exit_code
        elif args.command == "phases":
            cmd_phases(cfg, args.fits)
        else:
            cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (FitError, FanoPhaseError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return FitError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
