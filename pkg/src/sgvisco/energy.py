"""Stored-energy models W(F), their stress S = DW and Hessian D^2W.

All pointwise functions accept either a single ``(d, d)`` matrix or a matrix
field of shape ``(d, d, *grid)``; the two leading axes are the tensor indices
``(i, alpha)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

KINDS = ("double_well", "quadratic")


class DomainError(ValueError):
    """Raised for non-finite inputs to an energy evaluation."""


@dataclass(frozen=True)
class EnergyModel:
    """A stored energy with the constants of its growth/convexity hypotheses.

    ``K`` is the semiconvexity shift (``W + K/2 |F|^2`` convex). The remaining
    constants are the ones the hypothesis verifier checks against:

    * ``growth_c``, ``growth_c0``, ``growth_C``:
      ``growth_c |F|^p - growth_c0 <= W <= growth_C (|F|^p + 1)``
    * ``stress_C``: ``|S| <= stress_C (1 + |F|^(p-1))``
    * ``mono_C``: ``(S1 - S2, F1 - F2) >= (mono_C (|F1|^(p-2) + |F2|^(p-2)) - K) |F1 - F2|^2``
    * ``hess_c``: ``D^2(W + K/2|F|^2) >= hess_c |F|^(p-2) I``
    * ``hess_C``: ``|D^2 W| <= hess_C (1 + |F|^(p-2))``
    """

    kind: str = "double_well"
    d: int = 2
    p: float = 4.0
    K: float = 1.0
    growth_c: float = 0.125
    growth_c0: float = 0.25
    growth_C: float = 1.0
    stress_C: float = 1.0
    mono_C: float = 0.5
    hess_c: float = 1.0
    hess_C: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown energy kind {self.kind!r}; expected one of {KINDS}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.p < 2:
            raise ValueError("growth exponent p must be >= 2")
        if self.K < 0:
            raise ValueError("semiconvexity shift K must be >= 0")

    def with_(self, **changes) -> "EnergyModel":
        return replace(self, **changes)


def double_well(d: int = 2, **overrides) -> EnergyModel:
    """W(F) = (|F|^2 - 1)^2 / 4."""
    return EnergyModel(kind="double_well", d=d, **overrides)


def quadratic(d: int = 2, **overrides) -> EnergyModel:
    """W(F) = |F|^2 / 2."""
    params = dict(p=2.0, K=0.0, growth_c=0.5, growth_c0=0.5, growth_C=0.5,
                  stress_C=1.0, mono_C=0.5, hess_c=1.0, hess_C=0.5)
    params.update(overrides)
    return EnergyModel(kind="quadratic", d=d, **params)


def make_model(kind: str, d: int = 2, **overrides) -> EnergyModel:
    if kind == "double_well":
        return double_well(d, **overrides)
    if kind == "quadratic":
        return quadratic(d, **overrides)
    raise ValueError(f"unknown energy kind {kind!r}; expected one of {KINDS}")


def _check(model: EnergyModel, F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim < 2 or F.shape[:2] != (model.d, model.d):
        raise ValueError(f"expected leading shape ({model.d}, {model.d}), got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise DomainError("non-finite deformation gradient")
    return F


def frob2(F: np.ndarray) -> np.ndarray:
    """Pointwise squared Frobenius norm over the two leading axes."""
    return np.einsum("ij...,ij...->...", F, F)


def frob_dot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,ij...->...", A, B)


def eval_W(model: EnergyModel, F) -> np.ndarray | float:
    F = _check(model, F)
    s2 = frob2(F)
    if model.kind == "double_well":
        return 0.25 * (s2 - 1.0) ** 2
    return 0.5 * s2


def eval_S(model: EnergyModel, F) -> np.ndarray:
    F = _check(model, F)
    if model.kind == "double_well":
        return (frob2(F) - 1.0) * F
    return F.copy()


def eval_D2W(model: EnergyModel, F) -> np.ndarray:
    """Dense Hessian of a single matrix, indexed by row-major ``(i alpha)`` pairs."""
    F = _check(model, F)
    if F.ndim != 2:
        raise ValueError("eval_D2W takes a single matrix; use hessian_form for fields")
    m = model.d * model.d
    if model.kind == "quadratic":
        return np.eye(m)
    f = F.reshape(m)
    return (f @ f - 1.0) * np.eye(m) + 2.0 * np.outer(f, f)


def hessian_form(model: EnergyModel, F, G, H=None, shifted: bool = False) -> np.ndarray:
    """Pointwise ``D^2W(F)[G, H]`` (``D^2 W~`` when ``shifted``) without forming the Hessian."""
    F = _check(model, F)
    H = G if H is None else H
    gh = frob_dot(G, H)
    if model.kind == "quadratic":
        out = gh
    else:
        out = (frob2(F) - 1.0) * gh + 2.0 * frob_dot(F, G) * frob_dot(F, H)
    if shifted:
        out = out + model.K * gh
    return out


def hessian_opnorm(model: EnergyModel, F) -> np.ndarray:
    """Pointwise spectral norm of D^2W(F), from its closed-form eigenvalues."""
    F = _check(model, F)
    if model.kind == "quadratic":
        return np.ones(F.shape[2:]) if F.ndim > 2 else 1.0
    s2 = frob2(F)
    return np.maximum(np.abs(s2 - 1.0), np.abs(3.0 * s2 - 1.0))


# ---------------------------------------------------------------------------
# hypothesis verification


@dataclass
class HypothesisResult:
    name: str
    passed: bool
    margin: float
    constant: float | None = None
    note: str = ""


@dataclass
class HypothesisReport:
    model: EnergyModel
    sample_count: int
    radius: float
    results: dict[str, HypothesisResult] = field(default_factory=dict)
    info: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    @property
    def worst_margin(self) -> float:
        return min(r.margin for r in self.results.values())

    def format(self) -> str:
        lines = [f"model {self.model.kind} (d={self.model.d}, p={self.model.p:g}, K={self.model.K:g}); "
                 f"{self.sample_count} samples, radius {self.radius:g}"]
        for r in self.results.values():
            const = "" if r.constant is None else f" const={r.constant:g}"
            lines.append(f"  {r.name:<4} {'PASS' if r.passed else 'FAIL'}  margin={r.margin:+.3e}{const}"
                         + (f"  ({r.note})" if r.note else ""))
        for key, val in self.info.items():
            lines.append(f"  info {key} = {val:.6g}")
        return "\n".join(lines)


def sample_ball(d: int, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in the Frobenius ball of R^{d x d}; shape (count, d, d)."""
    m = d * d
    g = rng.standard_normal((count, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / m)
    return (g * r[:, None]).reshape(count, d, d)


def verify_hypotheses(model: EnergyModel, sample_count: int = 1000, radius: float = 3.0,
                      seed: int = 0, tol: float = 1e-10) -> HypothesisReport:
    """Check (H2)-(H8) on random samples, reporting the worst margin of each.

    A margin is ``rhs_slack`` of the inequality, so ``margin >= -tol`` passes.
    F = 0 is always included in the sample set since it is where the
    nonconvexity of the double well is strongest.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    d, p, K = model.d, model.p, model.K
    Fs = sample_ball(d, sample_count, radius, rng)
    Fs[0] = 0.0
    Gs = sample_ball(d, sample_count, radius, rng)
    report = HypothesisReport(model, sample_count, radius)

    W = np.array([eval_W(model, F) for F in Fs])
    S = np.array([eval_S(model, F) for F in Fs])
    H = np.array([eval_D2W(model, F) for F in Fs])
    s = np.sqrt(np.einsum("nij,nij->n", Fs, Fs))
    eye = np.eye(d * d)

    def add(name, margins, constant=None, note=""):
        worst = float(np.min(margins))
        report.results[name] = HypothesisResult(name, worst >= -tol, worst, constant, note)

    lower = W - (model.growth_c * s**p - model.growth_c0)
    upper = model.growth_C * (s**p + 1.0) - W
    add("H2", np.minimum(lower, upper), model.growth_c,
        note=f"c|F|^p - {model.growth_c0:g} <= W <= {model.growth_C:g}(|F|^p+1)")
    literal = W - model.growth_c * (s**p - 1.0)
    report.info["H2_literal_lower_margin"] = float(np.min(literal))

    min_eig = np.linalg.eigvalsh(H)[:, 0]
    add("H3", min_eig + K, K)

    add("H4", model.stress_C * (1.0 + s ** (p - 1)) - np.sqrt(np.einsum("nij,nij->n", S, S)),
        model.stress_C)

    S2 = np.array([eval_S(model, G) for G in Gs])
    dF = Fs - Gs
    dS = S - S2
    inner = np.einsum("nij,nij->n", dS, dF)
    dF2 = np.einsum("nij,nij->n", dF, dF)
    add("H5", inner + K * dF2, K)
    sg = np.sqrt(np.einsum("nij,nij->n", Gs, Gs))
    add("H6", inner - (model.mono_C * (s ** (p - 2) + sg ** (p - 2)) - K) * dF2, model.mono_C)

    shifted_min = np.linalg.eigvalsh(H + K * eye)[:, 0]
    add("H7", shifted_min - model.hess_c * s ** (p - 2), model.hess_c)

    opnorm = np.max(np.abs(np.linalg.eigvalsh(H)), axis=1)
    add("H8", model.hess_C * (1.0 + s ** (p - 2)) - opnorm, model.hess_C)

    report.info["fitted_H2_upper_C"] = float(np.max(W / (s**p + 1.0)))
    report.info["fitted_H3_K"] = float(max(0.0, -np.min(min_eig)))
    report.info["fitted_H8_C"] = float(np.max(opnorm / (1.0 + s ** (p - 2))))
    return report
