"""Parameter-sweep studies: delta -> 0, nu -> 0, Galerkin refinement, and
manufactured-solution verification of the solver."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import spectral as sp
from .diagnostics import lr_norm
from .energy import EnergyModel, eval_S
from .evolution import BlowUpError, SolverConfig, State, init_state, run


class StudyError(RuntimeError):
    pass


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# initial data presets

INITIAL_KINDS = ("zero", "two_mode", "gaussian_bump", "random_band")


def initial_data(grid: sp.SpectralGrid, kind: str = "two_mode", amplitude: float = 0.5,
                 width: float = 0.15, band: float = 1.0, seed: int = 0):
    """Real-space (u0, y0) for a named preset; u0 = 0 except for random_band.

    two_mode: y_i = A/(2 pi) [sin(2 pi x_{i+1}) + cos(2 pi (2 x_i + x_{i+1}))/2]
    gaussian_bump: analytic periodic bump exp((cos(2 pi (x - c)) - 1) / (2 pi w)^2) per axis
    random_band: seeded random y0 and u0 supported on |k|_2 <= band
    """
    d, x = grid.d, grid.x
    zero = np.zeros((d,) + grid.shape)
    if kind == "zero":
        return zero, zero.copy()
    if kind == "two_mode":
        y = np.empty_like(zero)
        for i in range(d):
            j = (i + 1) % d
            y[i] = amplitude / (2 * np.pi) * (np.sin(2 * np.pi * x[j])
                                               + 0.5 * np.cos(2 * np.pi * (2 * x[i] + x[j])))
        return zero, y
    if kind == "gaussian_bump":
        s = (2 * np.pi * width) ** 2
        bump = np.ones(grid.shape)
        for a in range(d):
            bump = bump * np.exp((np.cos(2 * np.pi * (x[a] - 0.5)) - 1.0) / s)
        y = np.empty_like(zero)
        for i in range(d):
            y[i] = amplitude * width * np.roll(bump, i * grid.n // 4, axis=i)
            y[i] -= y[i].mean()
        return zero, y
    if kind == "random_band":
        rng = np.random.default_rng(seed)
        shell = grid.kappa2 <= (2 * np.pi * band) ** 2 + 1e-9

        def draw():
            c = sp.forward(grid, rng.standard_normal((d,) + grid.shape))
            return amplitude * sp.inverse(grid, np.where(shell, c, 0.0))

        y = draw()
        return draw(), y
    raise ValueError(f"unknown initial data kind {kind!r}; expected one of {INITIAL_KINDS}")


def roughening_tail(grid: sp.SpectralGrid, seed: int = 0) -> np.ndarray:
    """Random motion on the upper half of the Galerkin band with ||grad F||_2 = 1."""
    rng = np.random.default_rng(seed)
    c = sp.forward(grid, rng.standard_normal((grid.d,) + grid.shape))
    band = grid.mask(grid.cutoff) & (grid.kmax > grid.cutoff // 2)
    c = np.where(band, c, 0.0)
    norm = math.sqrt(sp.parseval_norm2(grid, grid.kappa2 * c))
    return sp.inverse(grid, c / norm)


def roughen(grid: sp.SpectralGrid, y0: np.ndarray, delta: float, amplitude: float,
            eps: float = 0.1, seed: int = 0) -> np.ndarray:
    """Add a tail with ||grad F_tail||_2 = amplitude * delta^-(1/2 - eps)."""
    return y0 + amplitude * delta ** -(0.5 - eps) * roughening_tail(grid, seed)


# ---------------------------------------------------------------------------
# rate fitting and the convergence-rate bound


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    at_time: float | None = None
    excluded: int = 0


def fit_rate(points, at_time: float | None = None) -> RateFit:
    """Least-squares line through (log param, log error); zero errors are dropped."""
    pts = [(float(p), float(e)) for p, e in points]
    good = [(p, e) for p, e in pts if e > 0 and p > 0]
    if len(good) < 3:
        raise InsufficientDataError(f"need >= 3 positive points, got {len(good)}")
    lx = np.log([p for p, _ in good])
    ly = np.log([e for _, e in good])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), len(good), at_time,
                   len(pts) - len(good))


def theorem_bound(C1: float, C2: float, delta: float, r: float, t: float) -> tuple[float, bool]:
    """Bound on ||F^delta - F_bar||_r^r and whether delta is small enough for it.

    bound = (C1 delta^(r/2))^exp(-C2 t) * exp(2 - 2 exp(-C2 t)), valid when
    delta <= exp((4/r)(1 - exp(C2 t))) / C1^(2/r).
    """
    if not (C1 > 0 and C2 > 0):
        raise ValueError("C1 and C2 must be positive")
    if not 1 < r < 2:
        raise ValueError("r must lie in (1, 2)")
    if t < 0 or not delta > 0:
        raise ValueError("need t >= 0 and delta > 0")
    x = math.exp(-C2 * t)
    bound = (C1 * delta ** (r / 2)) ** x * math.exp(2 - 2 * x)
    # compare in logs: exp(C2 t) overflows long before the threshold underflows
    log_threshold = (4 / r) * (1 - math.exp(min(C2 * t, 700.0))) - (2 / r) * math.log(C1)
    return bound, math.log(delta) <= log_threshold


@dataclass
class BoundCalibration:
    C1: float
    C2: float
    dominates: bool
    rows: list  # (delta, t, measured e_r^r, bound, admissible)
    admissible_checks: int


def calibrate_bound(measured: dict, r: float, c2_grid=None) -> BoundCalibration:
    """Fit (C1, C2) at the earliest time and test dominance at later times.

    ``measured[(delta, t)] = ||F^delta - F_bar||_r^r``. For each C2 on the grid
    (ascending), C1 is the smallest value making the bound hold at the earliest
    sample time for every delta; the first C2 whose bound then holds at all
    later times for every admissible delta is returned.
    """
    if c2_grid is None:
        c2_grid = np.logspace(-2, 2, 161)
    deltas = sorted({dl for dl, _ in measured})
    times = sorted({t for _, t in measured})
    t0 = times[0]
    best = None
    for C2 in c2_grid:
        x0 = math.exp(-C2 * t0)
        C1 = max((measured[(dl, t0)] * math.exp(-(2 - 2 * x0))) ** (1 / x0) / dl ** (r / 2)
                 for dl in deltas)
        if C1 <= 0:
            continue
        C1 *= 1 + 1e-12
        rows, ok, checks = [], True, 0
        for t in times:
            for dl in deltas:
                b, adm = theorem_bound(C1, C2, dl, r, t)
                m = measured[(dl, t)]
                rows.append((dl, t, m, b, adm))
                if t > t0 and adm:
                    checks += 1
                    ok &= b >= m
        cal = BoundCalibration(C1, float(C2), ok, rows, checks)
        if ok:
            return cal
        best = best or cal
    return best


# ---------------------------------------------------------------------------
# limit studies


@dataclass
class LimitStudy:
    base: SolverConfig
    param: str  # "delta" or "nu"
    values: list
    initial: tuple  # real-space (u0, y0)
    r_list: tuple = (2.0,)
    sample_times: tuple = (0.25, 0.5, 1.0)
    reference_value: float = 0.0
    roughening: float = 0.0
    eps: float = 0.1
    seed: int = 0

    def validate(self):
        if self.param not in ("delta", "nu"):
            raise ValueError(f"swept parameter must be 'delta' or 'nu', got {self.param!r}")
        vals = list(self.values)
        if any(not v > 0 for v in vals):
            raise ValueError("swept values must be > 0")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("swept values must be strictly decreasing")
        if not self.r_list:
            raise ValueError("need at least one error exponent r")


@dataclass
class StudyResult:
    param: str
    values: list
    rows: list = field(default_factory=list)  # dicts: param, t, r, error
    u_errors: dict = field(default_factory=dict)  # (value, t) -> ||u - u_ref||_2
    fits: dict = field(default_factory=dict)  # (r, t) -> RateFit
    calibration: BoundCalibration | None = None
    trajectories: dict = field(default_factory=dict)

    def errors(self, r: float, t: float) -> list[float]:
        lookup = {(row["param"], row["t"], row["r"]): row["error"] for row in self.rows}
        return [lookup[(v, t, r)] for v in self.values]

    def summary(self) -> dict:
        out = {"param": self.param, "values": list(self.values), "fits": []}
        for (r, t), f in sorted(self.fits.items()):
            out["fits"].append({"r": r, "t": t, "slope": f.slope, "intercept": f.intercept,
                                "r_squared": f.r_squared, "n_points": f.n_points})
        if self.calibration is not None:
            c = self.calibration
            out["theorem_bound"] = {"C1": c.C1, "C2": c.C2, "dominates": c.dominates,
                                    "admissible_checks": c.admissible_checks}
        return out


def _member_initial(study: LimitStudy, grid, value):
    u0, y0 = study.initial
    if study.roughening and study.param == "delta" and value > 0:
        y0 = roughen(grid, y0, value, study.roughening, study.eps, study.seed)
    return init_state(grid, u0, y0)


def _run_member(study: LimitStudy, value: float):
    cfg = study.base.with_(**{study.param: value})
    state = _member_initial(study, cfg.grid, value)
    try:
        return run(cfg, state, sample_times=study.sample_times, diagnostics=False)
    except BlowUpError as exc:
        raise StudyError(f"{study.param} = {value:g}: {exc}") from exc


def _field_errors(grid, a: State, b: State, r_list):
    dF = sp.inverse(grid, sp.F_from_y(grid, a.y_hat - b.y_hat))
    du = sp.inverse(grid, a.u_hat - b.u_hat)
    return {r: lr_norm(grid, dF, r) for r in r_list}, lr_norm(grid, du, 2.0)


def run_limit_study(study: LimitStudy, max_workers: int = 1) -> StudyResult:
    """Run the reference and every swept member; tabulate errors and fit rates."""
    study.validate()
    grid = study.base.grid
    values = [study.reference_value] + list(study.values)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            trajs = list(pool.map(lambda v: _run_member(study, v), values))
    else:
        trajs = [_run_member(study, v) for v in values]
    ref, members = trajs[0], dict(zip(study.values, trajs[1:]))

    result = StudyResult(study.param, list(study.values))
    result.trajectories = {"reference": ref, **members}
    for v in study.values:
        for t in study.sample_times:
            errs, eu = _field_errors(grid, members[v].at(t), ref.at(t), study.r_list)
            result.u_errors[(v, t)] = eu
            for r in study.r_list:
                result.rows.append({"param": v, "t": t, "r": r, "error": errs[r]})
    if len(study.values) >= 3:
        for r in study.r_list:
            for t in study.sample_times:
                try:
                    result.fits[(r, t)] = fit_rate(zip(study.values, result.errors(r, t)), t)
                except InsufficientDataError:
                    pass
    if study.param == "delta":
        rs = [r for r in study.r_list if 1 < r < 2]
        if rs:
            r = rs[0]
            measured = {(v, t): result.errors(r, t)[i] ** r
                        for i, v in enumerate(study.values) for t in study.sample_times}
            if all(m > 0 for m in measured.values()):
                result.calibration = calibrate_bound(measured, r)
    return result


# ---------------------------------------------------------------------------
# Galerkin refinement


@dataclass
class RefinementResult:
    cutoffs: list
    sample_times: tuple
    F_errors: dict  # (cutoff, t) -> ||F^N - F^Nmax||_2
    u_errors: dict

    def ratios(self, t: float) -> list[float]:
        e = [self.F_errors[(c, t)] for c in self.cutoffs[:-1]]
        return [a / b if b > 0 else math.inf for a, b in zip(e, e[1:])]


def galerkin_refinement_study(base: SolverConfig, cutoffs, initial, sample_times=(1.0,)) -> RefinementResult:
    """Run the same data at each cutoff on a common grid and compare to the largest."""
    cutoffs = sorted(cutoffs)
    if len(cutoffs) < 2:
        raise InsufficientDataError("need at least two cutoffs")
    grid0 = base.grid
    if cutoffs[-1] > grid0.n // 2 - 1:
        raise ValueError(f"cutoff {cutoffs[-1]} does not fit a grid with n = {grid0.n}")
    u0, y0 = initial
    trajs = {}
    for c in cutoffs:
        grid = sp.SpectralGrid(grid0.d, grid0.n, c)
        cfg = base.with_(grid=grid)
        try:
            trajs[c] = run(cfg, init_state(grid, u0, y0), sample_times=sample_times, diagnostics=False)
        except BlowUpError as exc:
            raise StudyError(f"cutoff = {c}: {exc}") from exc
    top = trajs[cutoffs[-1]]
    F_err, u_err = {}, {}
    for c in cutoffs:
        for t in sample_times:
            errs, eu = _field_errors(grid0, trajs[c].at(t), top.at(t), (2.0,))
            F_err[(c, t)] = errs[2.0]
            u_err[(c, t)] = eu
    return RefinementResult(cutoffs, tuple(sample_times), F_err, u_err)


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class ManufacturedTerm:
    """amplitude * cos(omega t + theta) * g(2 pi k.x + phase) in component ``i``.

    g = cos when ``sharpness`` is 0, otherwise the analytic but not
    band-limited profile exp(sharpness * cos).
    """

    i: int
    k: tuple
    amplitude: float
    omega: float = 0.0
    theta: float = 0.0
    phase: float = 0.0
    sharpness: float = 0.0


@dataclass(frozen=True)
class ManufacturedCase:
    terms: tuple

    @property
    def bandwidth(self) -> float:
        """Largest |k_alpha| in the motion; inf if any term is not band-limited."""
        if any(term.sharpness for term in self.terms):
            return math.inf
        return max((max(abs(kk) for kk in term.k) for term in self.terms), default=0)

    def _eval(self, grid, t, deriv):
        out = np.zeros((grid.d,) + grid.shape)
        for term in self.terms:
            ph = term.omega * t + term.theta
            g = (math.cos(ph), -term.omega * math.sin(ph), -term.omega**2 * math.cos(ph))[deriv]
            arg = 2 * np.pi * np.tensordot(np.asarray(term.k, dtype=float), grid.x, axes=1) + term.phase
            profile = np.exp(term.sharpness * np.cos(arg)) if term.sharpness else np.cos(arg)
            out[term.i] += term.amplitude * g * profile
        return out

    def y(self, grid, t):
        return self._eval(grid, t, 0)

    def y_t(self, grid, t):
        return self._eval(grid, t, 1)

    def y_tt(self, grid, t):
        return self._eval(grid, t, 2)


def default_case(d: int = 2) -> ManufacturedCase:
    """A smooth two-term motion with bandwidth 2."""
    if d == 1:
        terms = (ManufacturedTerm(0, (1,), 0.08, 2.0, 0.3), ManufacturedTerm(0, (2,), 0.03, 3.0, 0.0, 0.5))
    else:
        k1 = (1,) + (0,) * (d - 1)
        k2 = (1, 2) + (0,) * (d - 2)
        terms = (ManufacturedTerm(0, k1[::-1], 0.08, 2.0, 0.3),
                 ManufacturedTerm(1, k2, 0.03, 3.0, 0.0, 0.5))
    return ManufacturedCase(terms)


def analytic_case(d: int = 2, sharpness: float = 2.0) -> ManufacturedCase:
    """Like ``default_case`` but with an exp(cos) profile, so truncation error is visible."""
    base = default_case(d)
    first = replace(base.terms[0], amplitude=0.02, sharpness=sharpness)
    return ManufacturedCase((first,) + base.terms[1:])


def manufactured_forcing(grid: sp.SpectralGrid, case: ManufacturedCase, model: EnergyModel,
                         nu: float, delta: float, t: float) -> np.ndarray:
    """f = y_tt - Div S(grad y) - nu Lap y_t + delta Lap^2 y for the prescribed motion.

    Linear terms are exact spectral operators; the stress is evaluated on a
    2x padded grid so that the result is alias-free for cubic S.
    """
    y_hat = sp.forward(grid, case.y(grid, t))
    yt_hat = sp.forward(grid, case.y_t(grid, t))
    ytt_hat = sp.forward(grid, case.y_tt(grid, t))
    F_hat = sp.F_from_y(grid, y_hat)
    S_hat = sp.padded_apply(grid, lambda F: eval_S(model, F), F_hat)
    f_hat = (ytt_hat - sp.div(grid, S_hat) - nu * sp.laplacian(grid, yt_hat)
             + delta * sp.bilaplacian(grid, y_hat))
    return sp.inverse(grid, f_hat)


@dataclass
class ConvergenceReport:
    temporal: list  # (dt, err_y, err_u)
    temporal_order: RateFit | None
    spatial: list  # (n, err_y, err_u, under_resolved)
    flags: list = field(default_factory=list)


def mms_error(case: ManufacturedCase, config: SolverConfig) -> tuple[float, float]:
    """Run the forced system from exact data; L2 errors in y and u at t_end."""
    grid, m = config.grid, config.model
    cfg = config.with_(forcing=lambda t: manufactured_forcing(grid, case, m, config.nu, config.delta, t))
    state = init_state(grid, case.y_t(grid, 0.0), case.y(grid, 0.0))
    traj = run(cfg, state, diagnostics=False)
    fin = traj.final
    ey = lr_norm(grid, sp.inverse(grid, fin.y_hat) - case.y(grid, config.t_end), 2.0)
    eu = lr_norm(grid, sp.inverse(grid, fin.u_hat) - case.y_t(grid, config.t_end), 2.0)
    return ey, eu


def mms_study(case: ManufacturedCase, base: SolverConfig, dts=(), resolutions=(),
              spatial_dt: float | None = None) -> ConvergenceReport:
    """Temporal refinement on ``base.grid`` and spatial refinement at ``spatial_dt``.

    Grids whose Galerkin cutoff cannot hold the motion are flagged as
    under-resolved: their error is bounded below by the projection of y*.
    """
    dts = list(dts)
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("dt list must be decreasing")
    res = list(resolutions)
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ValueError("resolution list must be increasing")
    report = ConvergenceReport([], None, [])
    for dt in dts:
        ey, eu = mms_error(case, base.with_(dt=dt))
        report.temporal.append((dt, ey, eu))
    if len(dts) >= 3:
        report.temporal_order = fit_rate([(dt, ey) for dt, ey, _ in report.temporal])
    for n in res:
        grid = sp.SpectralGrid(base.grid.d, n)
        under = math.isfinite(case.bandwidth) and grid.cutoff < case.bandwidth
        cfg = base.with_(grid=grid, dt=spatial_dt or base.dt)
        ey, eu = mms_error(case, cfg)
        report.spatial.append((n, ey, eu, under))
        if under:
            report.flags.append(f"n = {n}: cutoff {grid.cutoff} below motion bandwidth {case.bandwidth}")
    return report
