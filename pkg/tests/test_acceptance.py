"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the "acceptance criteria" section of the
pytest terminal summary.
"""
import numpy as np
import pytest

from sgvisco import evolution as ev
from sgvisco import experiments as ex
from sgvisco import io
from sgvisco import spectral as sp
from sgvisco.cli import main
from sgvisco.diagnostics import check_energy_inequality, check_structure_inequality
from sgvisco.energy import double_well, eval_D2W, eval_S, eval_W, make_model, quadratic, verify_hypotheses

# the standard nonlinear run
STD = dict(n=64, nu=0.1, delta=0.01, dt=5e-4, t_end=1.0)


@pytest.fixture(scope="module")
def standard_runs():
    g = sp.SpectralGrid(2, STD["n"])
    u0, y0 = ex.initial_data(g, "two_mode", amplitude=0.5)
    s0 = ev.init_state(g, u0, y0)
    out = {}
    for scheme in ev.SCHEMES:
        cfg = ev.SolverConfig(g, double_well(2), nu=STD["nu"], delta=STD["delta"], dt=STD["dt"],
                              t_end=STD["t_end"], scheme=scheme)
        out[scheme] = (cfg, ev.run(cfg, s0, record_every=1))
    return out


def test_criterion_01_hypothesis_suite(report, capsys):
    codes = {kind: main(["check-model", "--model", kind, "--samples", "1000", "--radius", "3"])
             for kind in ("double_well", "quadratic")}
    capsys.readouterr()
    reps = {kind: verify_hypotheses(make_model(kind, 2), sample_count=1000, radius=3.0)
            for kind in codes}
    dw = reps["double_well"].model
    constants = (dw.p, dw.K, dw.hess_c) == (4.0, 1.0, 1.0) and \
        (reps["quadratic"].model.p, reps["quadratic"].model.K) == (2.0, 0.0)
    worst = min(r.worst_margin for r in reps.values())
    ok = all(c == 0 for c in codes.values()) and all(r.passed for r in reps.values()) \
        and worst >= -1e-10 and constants
    report(1, ok, f"check-model exit codes {codes}, worst margin {worst:+.2e}")
    assert ok


def test_criterion_02_derivative_oracles(report):
    rng = np.random.default_rng(2024)
    h = 1e-5
    worst = 0.0
    for model in (double_well(2), quadratic(2)):
        for F in rng.uniform(-2, 2, size=(100, 2, 2)):
            S_fd = np.zeros((2, 2))
            H_fd = np.zeros((4, 4))
            for a, idx in enumerate(np.ndindex(2, 2)):
                E = np.zeros((2, 2))
                E[idx] = h
                S_fd[idx] = (eval_W(model, F + E) - eval_W(model, F - E)) / (2 * h)
                H_fd[:, a] = ((eval_S(model, F + E) - eval_S(model, F - E)) / (2 * h)).ravel()
            worst = max(worst, np.max(np.abs(S_fd - eval_S(model, F))),
                        np.max(np.abs(H_fd - eval_D2W(model, F))))
    ok = worst <= 1e-6
    report(2, ok, f"max |analytic - central difference| = {worst:.2e} over 2 x 100 matrices")
    assert ok


def test_criterion_03_involution(report, standard_runs):
    worst = max(r.curl_res for _, traj in standard_runs.values() for r in traj.records)
    n = sum(len(traj.records) for _, traj in standard_runs.values())
    ok = worst <= 1e-12
    report(3, ok, f"max curl residual {worst:.2e} over {n} records (both schemes)")
    assert ok


def test_criterion_04_energy_inequality(report, standard_runs):
    reps = {s: check_energy_inequality(traj.records, rel_tol=1e-4, dt=cfg.dt, c_slack=10.0)
            for s, (cfg, traj) in standard_runs.items()}
    ok = all(r.passed for r in reps.values())
    detail = "; ".join(f"{s}: margin {r.worst_margin:+.2e}, defect {r.max_defect:+.2e}" for s, r in reps.items())
    report(4, ok, detail)
    assert ok


def test_criterion_05_structure_inequality(report, standard_runs):
    reps = {s: check_structure_inequality(traj.records, rel_tol=1e-4, dt=cfg.dt, c_slack=10.0)
            for s, (cfg, traj) in standard_runs.items()}
    min_rate = min(min(r.rates) for _, traj in standard_runs.values() for r in traj.records)
    ok = all(r.passed for r in reps.values()) and min_rate >= -1e-12
    detail = "; ".join(f"{s}: margin {r.worst_margin:+.2e}" for s, r in reps.items())
    report(5, ok, f"{detail}; min dissipation rate {min_rate:.2e}")
    assert ok


def test_criterion_06_linear_oracle_order(report):
    g = sp.SpectralGrid(2, 16)
    u0, y0 = ex.initial_data(g, "random_band", amplitude=1.0, band=1.0, seed=1)
    s0 = ev.init_state(g, u0, y0)
    dts = (1e-2, 5e-3, 2.5e-3)
    orders = {}
    for nu, delta in ((0.0, 0.0), (1.0, 0.01), (0.1, 1.0)):
        for scheme in ev.SCHEMES:
            errs = []
            for dt in dts:
                cfg = ev.SolverConfig(g, quadratic(2), nu=nu, delta=delta, dt=dt, t_end=1.0, scheme=scheme)
                fin = ev.run(cfg, s0, diagnostics=False).final
                ref = ev.linear_oracle(cfg, s0, 1.0)
                errs.append(np.sqrt(sp.parseval_norm2(g, fin.y_hat - ref.y_hat)
                                    + sp.parseval_norm2(g, fin.u_hat - ref.u_hat)))
            orders[(nu, delta, scheme)] = ex.fit_rate(zip(dts, errs)).slope
    ok = all(abs(o - 2.0) <= 0.2 for o in orders.values())
    detail = ", ".join(f"({nu:g},{de:g},{s.split('_')[0]}) {o:.3f}" for (nu, de, s), o in orders.items())
    report(6, ok, f"orders {detail}")
    assert ok


def test_criterion_07_manufactured_solution(report):
    base = ev.SolverConfig(sp.SpectralGrid(2, 16), double_well(2), nu=0.1, delta=0.01, dt=1e-2, t_end=1.0)
    orders = {}
    for scheme in ev.SCHEMES:
        rep = ex.mms_study(ex.default_case(2), base.with_(scheme=scheme), dts=(2e-2, 1e-2, 5e-3, 2.5e-3))
        orders[scheme] = rep.temporal_order.slope
    # non-band-limited motion so that the n = 16 truncation error is visible
    spatial = ex.mms_study(ex.analytic_case(2, 2.0), base, resolutions=(16, 32, 64), spatial_dt=1e-3).spatial
    e = {n: ey for n, ey, _, _ in spatial}
    floor = e[64]
    ratio = e[16] / e[32]
    spatial_ok = (ratio >= 10 or e[16] <= 2 * floor) and e[32] <= 2 * floor
    ok = all(abs(o - 2.0) <= 0.2 for o in orders.values()) and spatial_ok
    report(7, ok, f"temporal orders {', '.join(f'{s} {o:.3f}' for s, o in orders.items())}; "
                  f"spatial 16->32 ratio {ratio:.1f} (e32 {e[32]:.2e}, dt floor {floor:.2e})")
    assert ok


def test_criterion_08_delta_limit_rate(report):
    g = sp.SpectralGrid(2, 64)
    base = ev.SolverConfig(g, double_well(2), nu=1.0, delta=0.01, dt=1e-3, t_end=1.0)
    study = ex.LimitStudy(base, "delta", [1e-2, 5e-3, 2.5e-3, 1.25e-3],
                          ex.initial_data(g, "two_mode", amplitude=0.5), r_list=(1.5,),
                          sample_times=(0.25, 0.5, 1.0))
    res = ex.run_limit_study(study)
    parts, ok = [], True
    for t in study.sample_times:
        errs = res.errors(1.5, t)
        fit = res.fits[(1.5, t)]
        mono = all(b < a for a, b in zip(errs, errs[1:]))
        ok &= mono and fit.slope >= 0.45 and fit.r_squared >= 0.98
        parts.append(f"t={t:g} order {fit.slope:.3f} r2 {fit.r_squared:.4f}{'' if mono else ' non-monotone'}")
    cal = res.calibration
    ok &= cal is not None and cal.dominates and cal.admissible_checks > 0
    report(8, ok, "; ".join(parts) + f"; bound C1={cal.C1:.3g} C2={cal.C2:.3g} dominates={cal.dominates} "
                                     f"({cal.admissible_checks} checks)")
    assert ok


def test_criterion_09_nu_limit_rate(report):
    g = sp.SpectralGrid(2, 64)
    base = ev.SolverConfig(g, double_well(2), nu=0.1, delta=1.0, dt=1e-3, t_end=1.0,
                           scheme="exponential_midpoint")
    study = ex.LimitStudy(base, "nu", [1e-1, 5e-2, 2.5e-2, 1.25e-2],
                          ex.initial_data(g, "random_band", amplitude=0.5, band=1.0, seed=0),
                          r_list=(3.0,), sample_times=(1.0,))
    res = ex.run_limit_study(study)
    errs = res.errors(3.0, 1.0)
    fit = res.fits[(3.0, 1.0)]
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    ok = mono and fit.slope >= 0.45
    report(9, ok, f"L^3 errors at t=1 {[f'{e:.2e}' for e in errs]}, order {fit.slope:.3f}, monotone={mono}")
    assert ok


def test_criterion_10_galerkin_refinement(report):
    g = sp.SpectralGrid(2, 96)
    base = ev.SolverConfig(g, double_well(2), nu=0.1, delta=0.01, dt=5e-4, t_end=1.0)
    res = ex.galerkin_refinement_study(base, [8, 16, 32], ex.initial_data(g, "gaussian_bump"),
                                       sample_times=(1.0,))
    ratios = res.ratios(1.0)
    ok = all(r >= 4 for r in ratios)
    errs = [res.F_errors[(c, 1.0)] for c in (8, 16)]
    report(10, ok, f"errors vs cutoff 32: {errs[0]:.2e}, {errs[1]:.2e}; ratio {ratios[0]:.3g}")
    assert ok


def test_criterion_11_determinism_and_io(report, tmp_path, capsys):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("[grid]\nn = 32\n[physics]\nnu = 0.1\ndelta = 0.01\n[time]\ndt = 5e-4\nt_end = 0.1\n"
                   "[output]\nrecord_every = 10\nsnapshot_every = 50\nlr_exponents = 1.5\n")
    codes = [main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    capsys.readouterr()
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    g = sp.SpectralGrid(2, 32)
    exact = True
    for n in names:
        if n.endswith(".vsgv"):
            blob = (tmp_path / "a" / n).read_bytes()
            t, rank, arr = io.decode_snapshot(blob, g)
            exact &= io.encode_snapshot(g, arr, t, rank) == blob
    field = np.random.default_rng(7).standard_normal((2, 2) + g.shape)
    _, _, back = io.decode_snapshot(io.encode_snapshot(g, field, 0.3), g)
    exact &= back.tobytes() == field.tobytes()
    ok = codes == [0, 0] and identical and exact and len(names) >= 4
    report(11, ok, f"{len(names)} output files byte-identical across runs: {identical}; "
                   f"snapshot roundtrip bit-exact: {exact}")
    assert ok
