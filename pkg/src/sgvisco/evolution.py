"""Time integration of the Galerkin-truncated system in (y, u) form.

Per Fourier mode, with kappa = 2 pi k and q = |kappa|^2::

    y' = u
    u' = N(y) + f - nu q u - delta q^2 y,     N(y) = Div P^N S(grad y)

The linear 2x2 block is treated implicitly (or exactly); the stress is
explicit. F is never stored: it is always grad y, so curl F = 0 holds exactly.
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg

from . import spectral as sp
from .energy import EnergyModel, eval_S, hessian_opnorm

log = logging.getLogger(__name__)

SCHEMES = ("imex_cnab2", "exponential_midpoint")


class BlowUpError(RuntimeError):
    def __init__(self, t: float, norm: float, trajectory=None):
        super().__init__(f"non-finite state at t = {t:.6g} (|y|+|u| = {norm})")
        self.t = t
        self.norm = norm
        self.trajectory = trajectory


@dataclass
class State:
    t: float
    y_hat: np.ndarray
    u_hat: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.y_hat.copy(), self.u_hat.copy())


@dataclass(frozen=True)
class SolverConfig:
    grid: sp.SpectralGrid
    model: EnergyModel
    nu: float = 1.0
    delta: float = 0.01
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "imex_cnab2"
    dealias: str = "two_thirds"
    forcing: Callable[[float], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.nu < 0 or self.delta < 0:
            raise ValueError("nu and delta must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.t_end > 0 and self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.dealias not in sp.DEALIAS_RULES:
            raise ValueError(f"unknown dealias rule {self.dealias!r}")
        if self.model.d != self.grid.d:
            raise ValueError("model and grid dimensions differ")

    @property
    def cutoff(self) -> int:
        return self.grid.cutoff

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def digest(self) -> str:
        text = repr((self.grid, self.model, self.nu, self.delta, self.dt, self.t_end,
                     self.scheme, self.dealias, self.forcing is not None))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    snapshots: list[tuple[float, State]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> State:
        return self.snapshots[-1][1]

    def at(self, t: float, tol: float = 1e-9) -> State:
        for ts, s in self.snapshots:
            if abs(ts - t) <= tol:
                return s
        raise KeyError(f"no snapshot at t = {t}")


# ---------------------------------------------------------------------------
# initial data


def init_state(grid: sp.SpectralGrid, u0: np.ndarray, data: np.ndarray, given_as: str = "y",
               tol: float = 1e-10, metadata: dict | None = None) -> State:
    """Build the t = 0 state from real-space velocity and either y0 or F0."""
    if grid.rank(u0) != 1:
        raise ValueError("u0 must be a vector field")
    u_hat = sp.forward(grid, u0)
    if given_as == "y":
        if grid.rank(data) != 1:
            raise ValueError("y0 must be a vector field")
        y_hat = sp.forward(grid, data)
    elif given_as == "F":
        if grid.rank(data) != 2:
            raise ValueError("F0 must be a matrix field")
        F_hat = sp.forward(grid, data)
        mean = np.abs(sp.mean_mode(grid, F_hat))
        if metadata is not None and np.max(mean) > tol:
            metadata["dropped_F_mean"] = float(np.max(mean))
        y_hat = sp.reconstruct_y_from_F(grid, F_hat, tol)
    else:
        raise ValueError(f"given_as must be 'y' or 'F', got {given_as!r}")
    return State(0.0, sp.project_modes(grid, y_hat), sp.project_modes(grid, u_hat))


# ---------------------------------------------------------------------------
# right-hand side


def rhs_nonlinear(grid: sp.SpectralGrid, y_hat: np.ndarray, model: EnergyModel,
                  dealias_rule: str = "two_thirds") -> np.ndarray:
    """Div P^N S(F) evaluated pseudo-spectrally, F = grad y."""
    F = sp.inverse(grid, sp.F_from_y(grid, y_hat))
    with np.errstate(over="ignore", invalid="ignore"):
        S = eval_S(model, F)
    if not np.all(np.isfinite(S)):
        raise FloatingPointError("stress overflow")
    S_hat = sp.forward(grid, S)
    S_hat = sp.project_modes(grid, sp.dealias(grid, S_hat, dealias_rule))
    return sp.div(grid, S_hat)


def _linear_coeffs(config: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode stiffness a = delta q^2 and damping b = nu q."""
    q = config.grid.kappa2
    return config.delta * q**2, config.nu * q


def block_expm(a: np.ndarray, b: np.ndarray, t: float):
    """exp(t [[0, 1], [-a, -b]]) entrywise for arrays of (a, b) >= 0.

    Uses exp(At) = exp(mt) [cosh(st) I + sinh(st)/s (A - mI)], m = -b/2,
    s^2 = b^2/4 - a, with a Taylor series where |s t| is small.
    """
    a = np.asarray(a, dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape)
    s2 = 0.25 * b * b - a
    x = s2 * t * t
    EC = np.empty(a.shape)
    ES = np.empty(a.shape)

    small = np.abs(x) < 1e-4
    if np.any(small):
        xs = x[small]
        em = np.exp(-0.5 * b[small] * t)
        EC[small] = em * (1 + xs / 2 + xs**2 / 24 + xs**3 / 720)
        ES[small] = em * t * (1 + xs / 6 + xs**2 / 120 + xs**3 / 5040)

    osc = ~small & (s2 < 0)
    if np.any(osc):
        w = np.sqrt(-s2[osc])
        em = np.exp(-0.5 * b[osc] * t)
        EC[osc] = em * np.cos(w * t)
        ES[osc] = em * np.sin(w * t) / w

    over = ~small & (s2 > 0)
    if np.any(over):
        s = np.sqrt(s2[over])
        lam_p = -a[over] / (s + 0.5 * b[over])
        lam_m = -0.5 * b[over] - s
        ep, em = np.exp(lam_p * t), np.exp(lam_m * t)
        EC[over] = 0.5 * (ep + em)
        ES[over] = (ep - em) / (2 * s)

    half_b = 0.5 * b
    return EC + half_b * ES, ES, -a * ES, EC - half_b * ES


# ---------------------------------------------------------------------------
# steppers


class Stepper:
    """Advances a State by ``config.dt``; holds the multistep history for imex_cnab2.

    imex_cnab2: Crank-Nicolson on the linear block, Adams-Bashforth 2 on the
    stress and forcing; the first step uses an IMEX Heun (RK2) predictor-corrector.
    exponential_midpoint: exact linear propagator with the explicit midpoint
    rule in the integrating-factor variables (Lawson RK2).
    """

    def __init__(self, config: SolverConfig):
        self.config = config
        self.grid = config.grid
        self.mask = config.grid.mask(config.cutoff) & ~config.grid.nyquist
        h = config.dt
        a, b = _linear_coeffs(config)
        if config.scheme == "imex_cnab2":
            det = 1.0 + 0.5 * h * b + 0.25 * h * h * a
            # (I + hA/2) and (I - hA/2)^{-1}
            self._plus = (1.0, 0.5 * h, -0.5 * h * a, 1.0 - 0.5 * h * b)
            self._minv = ((1.0 + 0.5 * h * b) / det, 0.5 * h / det, -0.5 * h * a / det, 1.0 / det)
        else:
            self._full = block_expm(a, b, h)
            self._half = block_expm(a, b, 0.5 * h)
        self._prev_g = None

    def reset(self):
        self._prev_g = None

    def forcing_hat(self, t: float):
        if self.config.forcing is None:
            return 0.0
        return sp.forward(self.grid, self.config.forcing(t))

    def accel(self, y_hat: np.ndarray, t: float) -> np.ndarray:
        """Explicit part of u': stress divergence plus forcing, projected."""
        g = rhs_nonlinear(self.grid, y_hat, self.config.model, self.config.dealias)
        g = g + self.forcing_hat(t)
        return np.where(self.mask, g, 0.0)

    @staticmethod
    def _apply(m, y, u):
        return m[0] * y + m[1] * u, m[2] * y + m[3] * u

    def step(self, state: State) -> State:
        try:
            return self._step(state)
        except FloatingPointError:
            raise BlowUpError(state.t + self.config.dt, math.inf) from None

    def _step(self, state: State) -> State:
        h = self.config.dt
        y, u, t = state.y_hat, state.u_hat, state.t
        if self.config.scheme == "imex_cnab2":
            g = self.accel(y, t)
            py, pu = self._apply(self._plus, y, u)
            if self._prev_g is None:
                y1, u1 = self._apply(self._minv, py, pu + h * g)
                g1 = self.accel(y1, t + h)
                y1, u1 = self._apply(self._minv, py, pu + 0.5 * h * (g + g1))
            else:
                y1, u1 = self._apply(self._minv, py, pu + h * (1.5 * g - 0.5 * self._prev_g))
            self._prev_g = g
        else:
            g = self.accel(y, t)
            yh, uh = self._apply(self._half, y, u + 0.5 * h * g)
            gh = self.accel(yh, t + 0.5 * h)
            ey, eu = self._apply(self._full, y, u)
            y1 = ey + h * self._half[1] * gh
            u1 = eu + h * self._half[3] * gh
        y1 = np.where(self.mask, y1, 0.0)
        u1 = np.where(self.mask, u1, 0.0)
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(u1))):
            norm = float(np.nansum(np.abs(y1)) + np.nansum(np.abs(u1)))
            raise BlowUpError(t + h, norm)
        return State(t + h, y1, u1)


def step(state: State, config: SolverConfig) -> State:
    """One step from a fresh history (imex_cnab2 therefore uses its startup step)."""
    return Stepper(config).step(state)


# ---------------------------------------------------------------------------
# exact solution of the linear (quadratic-energy) system


def linear_oracle(config: SolverConfig, initial: State, t: float) -> State:
    """Exact solution for W = |F|^2/2 via per-mode eigendecomposition.

    Each distinct |kappa|^2 gets its own 2x2 propagator; nearly defective
    blocks (critical damping) fall back to scipy's expm.
    """
    if config.model.kind != "quadratic":
        raise ValueError("linear_oracle requires the quadratic energy model")
    if config.forcing is not None:
        raise ValueError("linear_oracle does not support forcing")
    grid = config.grid
    active = grid.mask(config.cutoff) & ~grid.nyquist
    q_all = np.round(grid.kappa2, 9)
    y = np.zeros_like(initial.y_hat)
    u = np.zeros_like(initial.u_hat)
    for q in np.unique(q_all[active]):
        sel = active & (q_all == q)
        qq = float(grid.kappa2[sel][0])
        A = np.array([[0.0, 1.0], [-(qq + config.delta * qq * qq), -config.nu * qq]])
        lam, V = np.linalg.eig(A)
        if np.linalg.cond(V) < 1e6:
            P = (V @ np.diag(np.exp(lam * t)) @ np.linalg.inv(V)).real
        else:
            P = scipy.linalg.expm(A * t)
        y0, u0 = initial.y_hat[:, sel], initial.u_hat[:, sel]
        y[:, sel] = P[0, 0] * y0 + P[0, 1] * u0
        u[:, sel] = P[1, 0] * y0 + P[1, 1] * u0
    return State(initial.t + t, y, u)


# ---------------------------------------------------------------------------
# orchestration


def estimate_dt(config: SolverConfig, state: State, safety: float = 0.5) -> float:
    """Elastic-wave bound safety * 2 / (kappa_max sqrt(max |D^2W|)).

    kappa_max = 2 pi (n/2) is the largest per-axis wavevector; the implicit
    nu and delta terms do not constrain the step.
    """
    grid = config.grid
    F = sp.inverse(grid, sp.F_from_y(grid, state.y_hat))
    dmax = float(np.max(hessian_opnorm(config.model, F)))
    kmax = 2.0 * np.pi * (grid.n / 2)
    return safety * 2.0 / (kmax * math.sqrt(max(dmax, 1e-300)))


def _step_count(config: SolverConfig) -> int:
    nsteps = int(round(config.t_end / config.dt))
    if abs(nsteps * config.dt - config.t_end) > 1e-9 * max(1.0, config.t_end):
        raise ValueError(f"t_end = {config.t_end} is not a multiple of dt = {config.dt}")
    return nsteps


def run(config: SolverConfig, initial: State, record_every: int = 1, snapshot_every: int = 0,
        sample_times=(), lr_exponents=(), on_record=None, diagnostics: bool = True) -> Trajectory:
    """Integrate to ``t_end`` recording diagnostics and snapshots.

    Diagnostics are emitted every ``record_every`` steps (and at the final
    step); dissipation integrals are accumulated every step regardless.
    Snapshots are kept every ``snapshot_every`` steps (0: only initial and
    final) and at every time in ``sample_times``. On blow-up the partial
    trajectory is attached to the raised BlowUpError. ``diagnostics=False``
    skips all functional evaluation and keeps snapshots only.
    """
    from .diagnostics import DiagnosticsAccumulator

    nsteps = _step_count(config)
    sample_steps = {}
    for ts in sample_times:
        i = int(round(ts / config.dt))
        if abs(i * config.dt - ts) > 1e-9 or i > nsteps:
            raise ValueError(f"sample time {ts} is not a step time of this run")
        sample_steps[i] = ts
    traj = Trajectory(metadata={"config_hash": config.digest(), "steps": nsteps, "flags": []})
    if config.nu == 0 and config.delta == 0:
        traj.metadata["flags"].append("no_dissipation")
        log.warning("nu = delta = 0: pure elasticity run, the dissipation estimates do not apply")

    started = time.perf_counter()
    stepper = Stepper(config)
    acc = DiagnosticsAccumulator(config, lr_exponents)
    state = initial.copy()
    t0 = state.t

    def emit(s):
        if not diagnostics:
            return
        rec = acc.record(s)
        traj.records.append(rec)
        if on_record is not None:
            on_record(rec)

    if diagnostics:
        acc.start(state)
    emit(state)
    traj.snapshots.append((state.t, state.copy()))
    for i in range(1, nsteps + 1):
        try:
            new = stepper.step(state)
        except BlowUpError as exc:
            exc.trajectory = traj
            traj.metadata["wall_time"] = time.perf_counter() - started
            raise
        new.t = t0 + i * config.dt
        if diagnostics:
            acc.advance(new)
        state = new
        if i % max(record_every, 1) == 0 or i == nsteps:
            emit(state)
        if (snapshot_every and i % snapshot_every == 0) or i == nsteps or i in sample_steps:
            if not traj.snapshots or traj.snapshots[-1][0] != state.t:
                traj.snapshots.append((state.t, state.copy()))
    traj.metadata["wall_time"] = time.perf_counter() - started
    return traj
