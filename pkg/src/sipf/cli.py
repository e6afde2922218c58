"""Command-line interface: ``sipf run`` and ``sipf study <kind>``.

Every invocation writes its outputs plus ``manifest.json`` into ``--out``.
The exit code is 0 only when the run or study completed and every output
was written.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import Config, ConfigError, dump_config, load_config
from .driver import SnapshotWriter, run, write_diagnostics_csv
from .manifest import RunManifest
from .radial import RadialGrid, fdm_run, write_fdm_profile_csv, write_fdm_series_csv
from .spectral import write_field_csv

logger = logging.getLogger("sipf")

STUDY_KINDS = ("ratio", "mass-scan", "converge-dt", "converge-p", "converge-h", "fdm", "cinf-h", "variance")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--seed", type=int, help="override disc.seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel member runs (capped by SIPF_THREADS)")
    p.add_argument("--plots", action="store_true", help="also write PNG figures")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sipf", description="Particle-field simulation of 3D fully parabolic Keller-Segel.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single simulation")
    _common(p_run)
    p_run.add_argument("--snapshot-every", type=int, default=100, help="snapshot cadence in steps (0 disables)")

    p_st = sub.add_parser("study", help="diagnostics study")
    p_st.add_argument("kind", choices=STUDY_KINDS)
    _common(p_st)
    p_st.add_argument("--pair", type=int, nargs=2, default=(24, 12), metavar=("H_HI", "H_LO"))
    p_st.add_argument("--threshold", type=float, default=1.5, help="ratio threshold")
    p_st.add_argument("--threshold-fraction", type=float, help="use 1 + f (R_delta - 1) instead of --threshold")
    p_st.add_argument("--sustain", type=int, default=10)
    p_st.add_argument("--solver", choices=("sipf", "fdm"), default="sipf", help="mass-scan predicate")
    p_st.add_argument("--masses", type=float, nargs="+", help="mass grid (mass-scan grid mode, fdm)")
    p_st.add_argument("--bracket", type=float, nargs=2, help="starting bracket (mass-scan bisection mode)")
    p_st.add_argument("--width", type=float, default=0.2, help="bisection target width")
    p_st.add_argument("--values", type=float, nargs="+", help="tested dt / P / H values")
    p_st.add_argument("--modes", type=int, nargs="+", default=(8, 12, 16, 20, 24), help="H list for cinf-h")
    p_st.add_argument("--r-max", type=float, default=20.0)
    p_st.add_argument("--fdm-intervals", type=int, default=200_000)
    p_st.add_argument("--fdm-dt", type=float, default=1e-5)
    p_st.add_argument("--fdm-horizon", type=float, default=1.0)
    p_st.add_argument("--ic-radius", type=float, help="fdm ball radius (default: init.radius)")
    return parser


def _load(args) -> tuple[Config, str]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, disc=dataclasses.replace(cfg.disc, seed=int(args.seed)))
    return cfg, dump_config(cfg)


def _plan(cfg: Config) -> str:
    d = cfg.disc
    return (
        f"steps={d.n_steps} dt={d.dt!r} T={d.horizon!r} H={d.modes} P={d.particles} L={d.box_len!r} "
        f"beta={cfg.beta!r} seed={d.seed}"
    )


# ---------------------------------------------------------------- run


def cmd_run(args) -> int:
    cfg, text = _load(args)
    if args.dry_run:
        print(text, end="")
        print(_plan(cfg))
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.begin("run", text)
    manifest.notes["output_dir_created"] = True
    (out / "config.txt").write_text(text)
    callbacks = []
    if args.snapshot_every > 0:
        callbacks.append(SnapshotWriter(out / "snapshots", every=args.snapshot_every))
    logger.info("run: %s", _plan(cfg))
    result = run(cfg, callbacks)
    write_diagnostics_csv(out / "diagnostics.csv", result.series)
    write_field_csv(out / "field_final.csv", result.state.field, result.state.step, result.state.time)
    manifest.wall_time = {k: round(v, 6) for k, v in result.wall_time.items()}
    manifest.notes["steps"] = result.state.step
    manifest.notes["skipped_pairs"] = result.state.skipped_pairs
    if result.series.diverged:
        manifest.notes["diverged_step"] = result.series.diverged_step
    if args.plots:
        from . import plots

        pdir = out / "plots"
        pdir.mkdir(exist_ok=True)
        plots.plot_c_slice(result.state.field, pdir / "c_slice.png", title=f"c at z = 0, t = {result.state.time:g}")
        plots.plot_particles(result.state.positions, pdir / "particles.png", cfg.disc.box_len)
        plots.plot_series(result.series, pdir / "series.png")
    manifest.finish(out, result.series.status)
    logger.info("status %s after %d steps", result.series.status, result.state.step)
    return EXIT_OK if result.series.status == "completed" else EXIT_FAILED


# ---------------------------------------------------------------- study


def _threshold(args, cfg: Config) -> float:
    if args.threshold_fraction is not None:
        return dg.calibrated_threshold(cfg.phys, cfg.disc.box_len, args.pair[0], args.pair[1], args.threshold_fraction)
    return args.threshold


def _study_ratio(args, cfg, out, summary):
    hi, lo = args.pair
    res = dg.ratio_diagnostic(cfg, hi, lo, jobs=args.jobs)
    th = _threshold(args, cfg)
    verdict = dg.classify_blowup(res.times, res.ratio, th, args.sustain)
    dg.write_ratio_csv(out / "ratio.csv", res.times, res.ratio)
    write_diagnostics_csv(out / f"diagnostics_H{hi}.csv", res.hi)
    write_diagnostics_csv(out / f"diagnostics_H{lo}.csv", res.lo)
    finite = res.ratio[np.isfinite(res.ratio)]
    summary.update(threshold=th, sustain=args.sustain, blowup=verdict.blowup, onset=verdict.onset,
                   max_ratio=float(finite.max()) if finite.size else None, diverged=res.diverged)
    if args.plots:
        from . import plots

        plots.plot_ratio(res.times, res.ratio, out / "ratio.png", th)


def _fdm_grid(args) -> RadialGrid:
    return RadialGrid(args.r_max, args.fdm_intervals)


def _study_mass_scan(args, cfg, out, summary):
    if args.solver == "fdm":
        radius = args.ic_radius if args.ic_radius is not None else cfg.init.radius
        pred = dg.FdmInstability(cfg.phys, _fdm_grid(args), args.fdm_dt, args.fdm_horizon, radius)
    else:
        pred = dg.SipfBlowup(cfg, args.pair[0], args.pair[1], _threshold(args, cfg), args.sustain)
    if args.bracket:
        br = dg.critical_mass_scan(pred, bracket=tuple(args.bracket), mode="bisection", width=args.width, jobs=args.jobs)
    elif args.masses:
        br = dg.critical_mass_scan(pred, masses=args.masses, mode="grid", jobs=args.jobs)
    else:
        raise ValueError("mass-scan needs --masses (grid) or --bracket (bisection)")
    rows = [(m, int(v.blowup), "" if v.onset is None else v.onset) for m, v in sorted(br.scanned.items())]
    summary.update(solver=args.solver, lower=br.lower, upper=br.upper)
    return ["mass", "blowup", "onset"], rows


_AXES = {"converge-dt": ("dt", "disc.dt"), "converge-p": ("P", "disc.particles"), "converge-h": ("H", "disc.modes")}


def _study_converge(args, cfg, out, summary):
    axis, _ = _AXES[args.kind]
    if not args.values:
        raise ValueError(f"{args.kind} needs --values")
    res = dg.convergence_study(axis, args.values, cfg, jobs=args.jobs)
    summary.update(axis=axis, reference=res.reference, slope_l2=res.slope_l2, slope_c0=res.slope_c0)
    if args.plots:
        from . import plots

        plots.plot_xy(res.values, {"L2": res.l2_errors, "c0": res.c0_errors}, out / "convergence.png", axis, "error", loglog=True)
    return [axis, "l2_error", "c0_error"], list(zip(res.values, res.l2_errors, res.c0_errors))


def _study_fdm(args, cfg, out, summary):
    grid = _fdm_grid(args)
    radius = args.ic_radius if args.ic_radius is not None else cfg.init.radius
    masses = args.masses or [cfg.phys.mass]
    rows = []
    for m in masses:
        res = fdm_run(cfg.phys, m, radius, grid, args.fdm_dt, args.fdm_horizon)
        tag = f"M{m:g}"
        write_fdm_series_csv(out / f"fdm_{tag}.csv", res)
        write_fdm_profile_csv(out / f"fdm_{tag}_profile.csv", res, grid)
        rows.append((m, int(res.stable), res.sup_c_overall, float(res.times[-1]), res.reason))
    summary.update(unstable=[r[0] for r in rows if not r[1]])
    return ["mass", "stable", "sup_c", "t_end", "reason"], rows


def _study_cinf(args, cfg, out, summary):
    res = dg.cinf_vs_H_scan(cfg, args.modes, jobs=args.jobs)
    summary.update(r2_log=res.r2_log, r2_lin=res.r2_lin, slope_lin=res.slope_lin, preferred=res.preferred)
    if args.plots:
        from . import plots

        plots.plot_xy(res.modes, {"sup max|c|": res.cinf}, out / "cinf_h.png", "H", "sup_t max|c|")
    return ["H", "cinf"], list(zip(res.modes.astype(int), res.cinf))


def _study_variance(args, cfg, out, summary):
    result = run(cfg)
    s = result.series
    write_diagnostics_csv(out / "diagnostics.csv", s)
    fit = dg.variance_fit(s.time, s.variance, s.status)
    summary.update(slope=fit.slope, intercept=fit.intercept, r2=fit.r2, free_diffusion_slope=6.0 * cfg.phys.mu)
    return ["time", "variance"], list(zip(s.time, s.variance))


_STUDIES = {
    "ratio": _study_ratio,
    "mass-scan": _study_mass_scan,
    "converge-dt": _study_converge,
    "converge-p": _study_converge,
    "converge-h": _study_converge,
    "fdm": _study_fdm,
    "cinf-h": _study_cinf,
    "variance": _study_variance,
}


def cmd_study(args) -> int:
    cfg, text = _load(args)
    if args.dry_run:
        print(text, end="")
        print(f"study={args.kind} {_plan(cfg)}")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.begin(f"study {args.kind}", text)
    (out / "config.txt").write_text(text)
    summary: dict = {"kind": args.kind}
    t0 = time.perf_counter()
    status = "completed"
    try:
        table = _STUDIES[args.kind](args, cfg, out, summary)
        if table is not None:
            header, rows = table
            dg.write_study_report(out / f"{args.kind.replace('-', '_')}.csv", header, rows, summary)
        else:
            (out / f"{args.kind}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    except (dg.NoBracketError, dg.DivergedRunError, dg.UndefinedRatioError, ValueError) as exc:
        logger.error("%s study failed: %s", args.kind, exc)
        summary["error"] = str(exc)
        status = "error"
    manifest.wall_time = {"study": round(time.perf_counter() - t0, 6)}
    manifest.notes = summary
    manifest.finish(out, status)
    return EXIT_OK if status == "completed" else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_study(args)
    except (OSError, ConfigError) as exc:
        print(f"sipf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
