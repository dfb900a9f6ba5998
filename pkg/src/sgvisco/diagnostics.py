"""Energy, dissipative-structure functional, dissipation rates and norms.

Integrals are over the unit torus, so a spatial integral is a grid mean or,
for quadratic terms of band-limited fields, a Parseval sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .energy import EnergyModel, eval_W, hessian_form


def _F_hat(grid, state):
    return sp.F_from_y(grid, state.y_hat)


def mean_W(grid: sp.SpectralGrid, state, model: EnergyModel) -> float:
    F = sp.inverse(grid, _F_hat(grid, state))
    return float(np.mean(eval_W(model, F)))


def gradF_sq(grid, state) -> float:
    """int |grad F|^2 = sum_k |kappa|^2 |F_k|^2."""
    return sp.parseval_norm2(grid, np.sqrt(grid.kappa2) * _F_hat(grid, state))


def energy_functional(grid: sp.SpectralGrid, state, model: EnergyModel, delta: float) -> float:
    """int 1/2|u|^2 + W(F) + delta/2 |grad F|^2."""
    return (0.5 * sp.parseval_norm2(grid, state.u_hat) + mean_W(grid, state, model)
            + 0.5 * delta * gradF_sq(grid, state))


def energy_functional_grid(grid: sp.SpectralGrid, state, model: EnergyModel, delta: float) -> float:
    """Same functional with every term as a grid mean (cross-check path)."""
    u = sp.inverse(grid, state.u_hat)
    F_hat = _F_hat(grid, state)
    F = sp.inverse(grid, F_hat)
    grad_sq = 0.0
    for beta in range(grid.d):
        dF = sp.inverse(grid, 1j * grid.kappa[beta] * F_hat)
        grad_sq = grad_sq + np.sum(dF**2, axis=(0, 1))
    return float(np.mean(0.5 * np.sum(u**2, axis=0) + eval_W(model, F) + 0.5 * delta * grad_sq))


def structure_functional(grid: sp.SpectralGrid, state, model: EnergyModel, nu: float,
                         delta: float) -> float:
    """int 1/2|u - nu/2 Div F|^2 + nu^2/8 |Div F|^2 + W(F) + delta/2 |grad F|^2."""
    divF = sp.div(grid, _F_hat(grid, state))
    return (0.5 * sp.parseval_norm2(grid, state.u_hat - 0.5 * nu * divF)
            + nu * nu / 8.0 * sp.parseval_norm2(grid, divF)
            + mean_W(grid, state, model) + 0.5 * delta * gradF_sq(grid, state))


def hessian_term(grid: sp.SpectralGrid, state, model: EnergyModel) -> float:
    """int sum_beta D^2 W~(F)[d_beta F, d_beta F], W~ = W + K/2 |F|^2."""
    F_hat = _F_hat(grid, state)
    F = sp.inverse(grid, F_hat)
    total = np.zeros(grid.shape)
    for beta in range(grid.d):
        dF = sp.inverse(grid, 1j * grid.kappa[beta] * F_hat)
        total += hessian_form(model, F, dF, shifted=True)
    return float(np.mean(total))


def structure_dissipation_rate(grid: sp.SpectralGrid, state, model: EnergyModel, nu: float,
                               delta: float) -> tuple[float, float, float]:
    """(delta nu/2 int|Lap F|^2, nu/2 int D^2W~:(grad F, grad F), nu/2 int|grad u|^2)."""
    F_hat = _F_hat(grid, state)
    lap = delta * nu / 2.0 * sp.parseval_norm2(grid, grid.kappa2 * F_hat)
    hess = nu / 2.0 * hessian_term(grid, state, model) if nu else 0.0
    gu = nu / 2.0 * sp.parseval_norm2(grid, np.sqrt(grid.kappa2) * state.u_hat)
    return lap, hess, gu


def viscous_rate(grid: sp.SpectralGrid, state, nu: float) -> float:
    """nu int |grad u|^2."""
    return nu * sp.parseval_norm2(grid, np.sqrt(grid.kappa2) * state.u_hat)


def source_rate(grid: sp.SpectralGrid, state, K: float) -> float:
    """K/2 int |grad F|^2."""
    return 0.5 * K * gradF_sq(grid, state)


def lr_norm(grid: sp.SpectralGrid, field: np.ndarray, r: float) -> float:
    """(mean |field|^r)^(1/r) with the pointwise Frobenius norm; r = inf gives the max."""
    if not r >= 1:
        raise ValueError(f"L^r norm needs r >= 1, got {r}")
    grid.rank(field)
    mag = np.sqrt(np.sum(np.reshape(field, (-1,) + grid.shape) ** 2, axis=0))
    if np.isinf(r):
        return float(np.max(mag))
    return float(np.mean(mag**r) ** (1.0 / r))


# ---------------------------------------------------------------------------
# records along a run


@dataclass
class DiagnosticsRecord:
    t: float
    E: float
    diss_visc_cum: float
    G: float
    diss_struct_cum: float
    src_struct_cum: float
    curl_res: float
    l2_u: float
    l2_gradF: float
    l2_lapF: float
    lr_norms: dict = field(default_factory=dict)
    rates: tuple = ()


class DiagnosticsAccumulator:
    """Trapezoidal accumulation of the dissipation integrals, one call per step."""

    def __init__(self, config, lr_exponents=()):
        self.config = config
        self.grid = config.grid
        self.lr_exponents = tuple(lr_exponents)
        self.visc = self.struct = self.src = 0.0
        self._prev = None
        self._t = None

    def rates(self, state):
        c = self.config
        parts = structure_dissipation_rate(self.grid, state, c.model, c.nu, c.delta)
        return (viscous_rate(self.grid, state, c.nu), parts,
                source_rate(self.grid, state, c.model.K))

    def start(self, state):
        self.visc = self.struct = self.src = 0.0
        self._prev = self.rates(state)
        self._t = state.t

    def advance(self, state):
        # a state on its way to blow-up may overflow here; the stepper reports it next step
        with np.errstate(over="ignore", invalid="ignore"):
            new = self.rates(state)
        h = state.t - self._t
        old = self._prev
        self.visc += 0.5 * h * (old[0] + new[0])
        self.struct += 0.5 * h * (sum(old[1]) + sum(new[1]))
        self.src += 0.5 * h * (old[2] + new[2])
        self._prev, self._t = new, state.t

    def record(self, state) -> DiagnosticsRecord:
        with np.errstate(over="ignore", invalid="ignore"):
            return self._record(state)

    def _record(self, state) -> DiagnosticsRecord:
        c, g = self.config, self.grid
        F_hat = _F_hat(g, state)
        F = sp.inverse(g, F_hat)
        return DiagnosticsRecord(
            t=state.t,
            E=energy_functional(g, state, c.model, c.delta),
            diss_visc_cum=self.visc,
            G=structure_functional(g, state, c.model, c.nu, c.delta),
            diss_struct_cum=self.struct,
            src_struct_cum=self.src,
            curl_res=sp.curl_residual(g, F_hat),
            l2_u=np.sqrt(sp.parseval_norm2(g, state.u_hat)),
            l2_gradF=np.sqrt(gradF_sq(g, state)),
            l2_lapF=np.sqrt(sp.parseval_norm2(g, g.kappa2 * F_hat)),
            lr_norms={r: lr_norm(g, F, r) for r in self.lr_exponents},
            rates=self._prev[1] if self._prev is not None else (),
        )


# ---------------------------------------------------------------------------
# discrete inequality checks


@dataclass
class InequalityReport:
    name: str
    passed: bool
    worst_margin: float
    worst_time: float
    max_defect: float
    failures: list = field(default_factory=list)

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = (f"{self.name}: {status} worst margin {self.worst_margin:+.3e} at t = {self.worst_time:g}, "
               f"max defect {self.max_defect:+.3e}")
        if self.failures:
            msg += f"; first failure at t = {self.failures[0][0]:g}"
        return msg


def _check(name, records, lhs_fn, base_fn, extra_fn, rel_tol, dt, c_slack):
    if not records:
        raise ValueError("no records to check")
    base = base_fn(records[0])
    worst, worst_t, defect = np.inf, records[0].t, -np.inf
    failures = []
    t0 = records[0].t
    for rec in records:
        lhs = lhs_fn(rec)
        rhs_exact = base + extra_fn(rec)
        rhs = base * (1.0 + rel_tol) + extra_fn(rec) + c_slack * dt * dt * (rec.t - t0)
        margin = rhs - lhs
        defect = max(defect, lhs - rhs_exact)
        if margin < worst:
            worst, worst_t = margin, rec.t
        if margin < 0:
            failures.append((rec.t, margin))
    return InequalityReport(name, not failures, float(worst), float(worst_t), float(defect), failures)


def check_energy_inequality(records, rel_tol: float = 1e-4, dt: float = 0.0,
                            c_slack: float = 10.0) -> InequalityReport:
    """E(t) + nu int_0^t |grad u|^2 <= E(0)(1 + rel_tol) + c_slack dt^2 t at every record."""
    return _check("energy inequality", records, lambda r: r.E + r.diss_visc_cum, lambda r: r.E,
                  lambda r: 0.0, rel_tol, dt, c_slack)


def check_structure_inequality(records, rel_tol: float = 1e-4, dt: float = 0.0,
                               c_slack: float = 10.0) -> InequalityReport:
    """G(t) + structure dissipation <= G(0)(1 + rel_tol) + K/2 int_0^t |grad F|^2 + slack."""
    return _check("structure inequality", records, lambda r: r.G + r.diss_struct_cum, lambda r: r.G,
                  lambda r: r.src_struct_cum, rel_tol, dt, c_slack)
