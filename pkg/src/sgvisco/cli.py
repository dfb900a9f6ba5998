"""Command-line entry point: ``python -m sgvisco <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 blow-up, 3 a requested check failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .diagnostics import check_energy_inequality, check_structure_inequality
from .energy import KINDS, make_model, verify_hypotheses
from .evolution import BlowUpError, run
from .io import (ConfigError, DiagnosticsWriter, SnapshotError, default_config, parse_config,
                 serialize_config, write_json, write_snapshot, write_study, write_table)

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("sgvisco")


class CheckFailed(Exception):
    pass


def _out_dir(args, cfg) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(cfg.output["out_dir"])
        if not out.is_absolute() and cfg.source:
            out = Path(cfg.source).resolve().parent / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    solver = cfg.solver_config()
    grid = solver.grid
    state = cfg.initial_state(grid)
    out = _out_dir(args, cfg)
    lr = cfg.output["lr_exponents"]
    with DiagnosticsWriter(out / "diagnostics.csv", lr) as writer:
        try:
            traj = run(solver, state, record_every=cfg.output["record_every"],
                       snapshot_every=cfg.output["snapshot_every"], lr_exponents=lr,
                       on_record=writer.write)
        except BlowUpError as exc:
            print(f"blow-up: {exc}", file=sys.stderr)
            return EXIT_BLOWUP
    for i, (t, s) in enumerate(traj.snapshots):
        write_snapshot(out / f"snap_{i:05d}.vsgv", grid, s)
    reports = [check_energy_inequality(traj.records, dt=solver.dt),
               check_structure_inequality(traj.records, dt=solver.dt)]
    min_rate = min((min(r.rates) for r in traj.records if r.rates), default=0.0)
    summary = {"config_hash": traj.metadata["config_hash"], "steps": traj.metadata["steps"],
               "flags": traj.metadata["flags"], "final_t": traj.final.t,
               "E": [traj.records[0].E, traj.records[-1].E],
               "max_curl_residual": max(r.curl_res for r in traj.records),
               "min_dissipation_rate": min_rate,
               "inequalities": {r.name: {"passed": r.passed, "worst_margin": r.worst_margin,
                                         "max_defect": r.max_defect} for r in reports}}
    write_json(out / "summary.json", summary)
    for r in reports:
        print(r.format())
    print(f"wrote {len(traj.records)} records and {len(traj.snapshots)} snapshots to {out}")
    if args.assert_inequalities or cfg.output["assert_inequalities"]:
        if not all(r.passed for r in reports) or min_rate < -1e-12:
            raise CheckFailed("dissipation inequality check failed")
    return EXIT_OK


def _limit_study(args, param: str) -> int:
    cfg = parse_config(args.config)
    s = cfg.study
    if len(s["values"]) < 2:
        raise ConfigError(f"{args.config}: [study].values needs at least two {param} values")
    solver = cfg.solver_config()
    study = ex.LimitStudy(solver, param, list(s["values"]), cfg.initial_fields(solver.grid),
                          r_list=s["r_list"], sample_times=s["sample_times"],
                          reference_value=s["reference"], roughening=s["roughening"], eps=s["eps"],
                          seed=cfg.initial["seed"])
    try:
        result = ex.run_limit_study(study, max_workers=s["max_workers"])
    except ex.StudyError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    csv_path, json_path = write_study(_out_dir(args, cfg), result)
    failures = []
    for (r, t), fit in sorted(result.fits.items()):
        errs = result.errors(r, t)
        mono = all(b < a for a, b in zip(errs, errs[1:]))
        print(f"r={r:g} t={t:g} order={fit.slope:.3f} r2={fit.r_squared:.4f} monotone={mono}")
        if not mono or fit.slope < args.min_order:
            failures.append((r, t))
    if result.calibration is not None:
        c = result.calibration
        print(f"bound C1={c.C1:.4g} C2={c.C2:.4g} dominates={c.dominates}")
    print(f"wrote {csv_path} and {json_path}")
    if args.check and failures:
        raise CheckFailed(f"rate check failed at (r, t) = {failures}")
    return EXIT_OK


def cmd_study_delta(args) -> int:
    return _limit_study(args, "delta")


def cmd_study_nu(args) -> int:
    return _limit_study(args, "nu")


def cmd_study_galerkin(args) -> int:
    cfg = parse_config(args.config)
    cutoffs = cfg.study["cutoffs"]
    if len(cutoffs) < 2:
        raise ConfigError(f"{args.config}: [study].cutoffs needs at least two values")
    solver = cfg.solver_config()
    times = tuple(t for t in cfg.study["sample_times"] if t <= solver.t_end) or (solver.t_end,)
    try:
        res = ex.galerkin_refinement_study(solver, cutoffs, cfg.initial_fields(solver.grid), times)
    except ex.StudyError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    out = _out_dir(args, cfg)
    rows = [(c, t, res.F_errors[(c, t)], res.u_errors[(c, t)]) for c in res.cutoffs for t in times]
    write_table(out / "galerkin.csv", ("cutoff", "t", "error_F", "error_u"), rows)
    bad = []
    for t in times:
        ratios = res.ratios(t)
        print(f"t={t:g} errors={[res.F_errors[(c, t)] for c in res.cutoffs[:-1]]} ratios={ratios}")
        if any(r < args.min_ratio for r in ratios):
            bad.append(t)
    if args.check and bad:
        raise CheckFailed(f"refinement ratios below {args.min_ratio} at t = {bad}")
    return EXIT_OK


def cmd_mms(args) -> int:
    cfg = parse_config(args.config)
    s = cfg.study
    solver = cfg.solver_config()
    sharp = s["sharpness"]
    case = ex.analytic_case(solver.grid.d, sharp) if sharp else ex.default_case(solver.grid.d)
    try:
        rep = ex.mms_study(case, solver, dts=s["dts"], resolutions=s["resolutions"],
                           spatial_dt=s["spatial_dt"])
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    out = _out_dir(args, cfg)
    rows = [("dt", dt, ey, eu) for dt, ey, eu in rep.temporal]
    rows += [("n", float(n), ey, eu) for n, ey, eu, _ in rep.spatial]
    write_table(out / "mms.csv", ("kind", "value", "error_y", "error_u"), rows)
    summary = {"temporal_order": None if rep.temporal_order is None else rep.temporal_order.slope,
               "flags": rep.flags}
    write_json(out / "mms.json", summary)
    if rep.temporal_order is not None:
        print(f"temporal order {rep.temporal_order.slope:.3f} (r2 {rep.temporal_order.r_squared:.4f})")
    for n, ey, eu, under in rep.spatial:
        print(f"n={n} error_y={ey:.3e} error_u={eu:.3e}{' under-resolved' if under else ''}")
    if args.check and rep.temporal_order is not None and abs(rep.temporal_order.slope - 2.0) > 0.2:
        raise CheckFailed("temporal order outside 2 +- 0.2")
    return EXIT_OK


def cmd_check_model(args) -> int:
    model = make_model(args.model, args.d)
    report = verify_hypotheses(model, sample_count=args.samples, radius=args.radius, seed=args.seed)
    print(report.format())
    if not report.passed:
        raise CheckFailed(f"hypotheses failed for {args.model}")
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = parse_config(args.config) if args.config else default_config()
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgvisco", description="Strain-gradient viscoelasticity solver")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_text):
        sp_ = sub.add_parser(name, help=help_text)
        sp_.add_argument("--config", required=True, help="INI config file")
        sp_.add_argument("--out", help="output directory (overrides [output] out_dir)")
        sp_.add_argument("--check", action="store_true", help="exit 3 if the study check fails")
        sp_.set_defaults(func=func)
        return sp_

    r = with_config("run", cmd_run, "integrate one configuration")
    r.add_argument("--assert-inequalities", action="store_true",
                   help="exit 3 if the energy or structure inequality fails")
    for name, func, what in (("study-delta", cmd_study_delta, "delta -> 0"),
                             ("study-nu", cmd_study_nu, "nu -> 0")):
        s = with_config(name, func, f"{what} limit study")
        s.add_argument("--min-order", type=float, default=0.45)
    g = with_config("study-galerkin", cmd_study_galerkin, "Galerkin cutoff refinement")
    g.add_argument("--min-ratio", type=float, default=4.0)
    with_config("mms", cmd_mms, "manufactured-solution convergence")

    c = sub.add_parser("check-model", help="sample the energy hypotheses")
    c.add_argument("--model", choices=KINDS, default="double_well")
    c.add_argument("--d", type=int, default=2)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--radius", type=float, default=3.0)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check_model)

    pc = sub.add_parser("print-config", help="print the effective config with defaults")
    pc.add_argument("--config", help="INI config file (default: built-in defaults)")
    pc.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, SnapshotError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
