"""Fourier discretization of the unit torus.

Real fields are numpy arrays with the component axes first and the ``d`` grid
axes last: scalar ``(*grid)``, vector ``(d, *grid)``, matrix ``(d, d, *grid)``.
Spectral fields have the same component layout with complex Fourier
coefficients normalized so that ``f(x) = sum_k f_k exp(2 pi i k.x)``. Only the
half spectrum ``k_d >= 0`` is stored (real-to-complex FFT layout); the other
half is implied by Hermitian symmetry ``f_{-k} = conj(f_k)``. The plane
``k_d = 0`` stores both members of each conjugate pair, which is where
``hermitian_defect`` looks.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

DEALIAS_RULES = ("two_thirds", "half", "none")
DIFF_OPS = ("grad", "div", "laplacian", "grad_laplacian", "bilaplacian")


class InadmissibleDataError(ValueError):
    """Deformation-gradient data that is not (numerically) a gradient."""


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform grid of ``n**d`` points on the unit torus [0, 1)^d.

    ``cutoff`` is the Galerkin truncation N, applied per component
    (``|k_alpha| <= N``). It defaults to the largest mode kept by the 2/3 rule.
    """

    d: int
    n: int
    cutoff: int | None = None

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 4, got {self.n}")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", self.n // 3)
        if not 0 <= self.cutoff <= self.n // 2 - 1:
            raise ValueError(f"cutoff must lie in [0, {self.n // 2 - 1}], got {self.cutoff}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers of the stored half spectrum, shape (d, *spectral_shape)."""
        k1 = np.fft.fftfreq(self.n, 1.0 / self.n).round().astype(int)
        kd = np.arange(self.n // 2 + 1)
        return np.array(np.meshgrid(*([k1] * (self.d - 1) + [kd]), indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full spectrum (1 or 2)."""
        kd = self.k[-1]
        return np.where((kd > 0) & (kd < self.n // 2), 2.0, 1.0)

    @cached_property
    def kappa(self) -> np.ndarray:
        return 2.0 * np.pi * self.k

    @cached_property
    def kappa2(self) -> np.ndarray:
        return np.sum(self.kappa**2, axis=0)

    @cached_property
    def kmax(self) -> np.ndarray:
        """Per-mode l-infinity norm max_alpha |k_alpha|."""
        return np.max(np.abs(self.k), axis=0)

    @cached_property
    def nyquist(self) -> np.ndarray:
        return np.any(np.abs(self.k) == self.n // 2, axis=0)

    @cached_property
    def x(self) -> np.ndarray:
        """Grid coordinates, shape (d, *grid)."""
        x1 = np.arange(self.n) / self.n
        return np.array(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def mask(self, cutoff: float) -> np.ndarray:
        return self.kmax <= cutoff

    def rank(self, field: np.ndarray) -> int:
        """0, 1 or 2 for scalar, vector or matrix fields on this grid."""
        shape = np.shape(field)
        tail = shape[len(shape) - self.d:]
        if tail != self.shape and tail != self.spectral_shape:
            raise ValueError(f"field shape {shape} does not end with grid shape {self.shape} "
                             f"or spectral shape {self.spectral_shape}")
        lead = shape[: len(shape) - self.d]
        if lead == ():
            return 0
        if lead == (self.d,):
            return 1
        if lead == (self.d, self.d):
            return 2
        raise ValueError(f"field components {lead} are not scalar/vector/matrix for d={self.d}")

    def zeros(self, rank: int, spectral: bool = False) -> np.ndarray:
        if spectral:
            return np.zeros((self.d,) * rank + self.spectral_shape, dtype=complex)
        return np.zeros((self.d,) * rank + self.shape)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))


# ---------------------------------------------------------------------------
# transforms and projections


def forward(grid: SpectralGrid, field: np.ndarray) -> np.ndarray:
    grid.rank(field)
    field = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(field)):
        raise ValueError("non-finite samples in real field")
    out = sfft.rfftn(field, axes=grid.axes, norm="forward")
    out[..., grid.nyquist] = 0.0
    return out


def inverse(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    grid.rank(coeffs)
    return sfft.irfftn(coeffs, s=grid.shape, axes=grid.axes, norm="forward")


def transform(grid: SpectralGrid, field: np.ndarray, direction: str) -> np.ndarray:
    if direction == "forward":
        return forward(grid, field)
    if direction == "inverse":
        return inverse(grid, field)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _negate_leading(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    """Reindex k -> -k along the first d-1 grid axes."""
    axes = grid.axes[:-1]
    if not axes:
        return c
    return np.roll(np.flip(c, axis=axes), 1, axis=axes)


def full_spectrum(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """Expand stored half-spectrum coefficients to the full (n,)*d array."""
    grid.rank(coeffs)
    h = grid.n // 2
    full = np.zeros(coeffs.shape[: coeffs.ndim - grid.d] + grid.shape, dtype=complex)
    full[..., : h + 1] = coeffs
    # column k_d = -j holds conj of column j at -k'
    mirrored = np.conj(_negate_leading(grid, coeffs[..., 1:h]))
    full[..., h + 1:] = mirrored[..., ::-1]
    return full


def hermitian_defect(grid: SpectralGrid, coeffs: np.ndarray) -> float:
    """max |c_{-k} - conj(c_k)| over the self-conjugate planes, relative to max |c_k|."""
    grid.rank(coeffs)
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return 0.0
    worst = 0.0
    for j in (0, grid.n // 2):
        plane = coeffs[..., j]
        worst = max(worst, float(np.max(np.abs(_negate_leading(grid, plane[..., None])[..., 0]
                                               - np.conj(plane)))))
    return worst / float(scale)


def parseval_inner(grid: SpectralGrid, a_hat: np.ndarray, b_hat: np.ndarray) -> float:
    """Unit-torus L2 inner product of two real fields from their coefficients."""
    return float(np.sum(grid.weights * (a_hat * np.conj(b_hat)).real))


def parseval_norm2(grid: SpectralGrid, c: np.ndarray) -> float:
    """Mean over the torus of the pointwise squared norm of the field with coefficients c."""
    return float(np.sum(grid.weights * (c.real**2 + c.imag**2)))


def project_modes(grid: SpectralGrid, coeffs: np.ndarray, cutoff: int | None = None) -> np.ndarray:
    """Galerkin projection P^N: keep modes with max_alpha |k_alpha| <= cutoff."""
    cutoff = grid.cutoff if cutoff is None else cutoff
    if not 0 <= cutoff <= grid.n // 2 - 1:
        raise ValueError(f"cutoff {cutoff} out of range [0, {grid.n // 2 - 1}]")
    grid.rank(coeffs)
    return np.where(grid.mask(cutoff), coeffs, 0.0)


def dealias(grid: SpectralGrid, coeffs: np.ndarray, rule: str = "two_thirds") -> np.ndarray:
    if rule == "two_thirds":
        return np.where(grid.mask(grid.n / 3.0), coeffs, 0.0)
    if rule == "half":
        return np.where(grid.mask(grid.n / 4.0), coeffs, 0.0)
    if rule == "none":
        return coeffs
    raise ValueError(f"unknown dealias rule {rule!r}; expected one of {DEALIAS_RULES}")


# ---------------------------------------------------------------------------
# differential operators (symbol multiplication)


def grad(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    """(grad u)_{i alpha} = d_alpha u_i; scalar -> vector, vector -> matrix."""
    r = grid.rank(c)
    if r == 2:
        raise ValueError("grad of a matrix field is not supported")
    ik = 1j * grid.kappa
    if r == 0:
        return ik * c
    return c[:, None] * ik[None, :]


def div(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    """(Div M)_i = d_alpha M_{i alpha}; vector -> scalar, matrix -> vector."""
    r = grid.rank(c)
    if r == 0:
        raise ValueError("div of a scalar field is not defined")
    ik = 1j * grid.kappa
    if r == 1:
        return np.sum(ik * c, axis=0)
    return np.sum(c * ik[None, :], axis=1)


def laplacian(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    grid.rank(c)
    return -grid.kappa2 * c


def grad_laplacian(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    """(grad Lap F)_i = d_alpha Lap F_{i alpha}; matrix -> vector."""
    if grid.rank(c) != 2:
        raise ValueError("grad_laplacian expects a matrix field")
    return div(grid, laplacian(grid, c))


def bilaplacian(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    if grid.rank(c) != 1:
        raise ValueError("bilaplacian expects a vector field")
    return grid.kappa2**2 * c


_OPS = {"grad": grad, "div": div, "laplacian": laplacian,
        "grad_laplacian": grad_laplacian, "bilaplacian": bilaplacian}


def apply_diff_operator(grid: SpectralGrid, c: np.ndarray, op: str) -> np.ndarray:
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown operator {op!r}; expected one of {DIFF_OPS}") from None
    return fn(grid, c)


# ---------------------------------------------------------------------------
# motion <-> deformation gradient


def F_from_y(grid: SpectralGrid, y_hat: np.ndarray) -> np.ndarray:
    """F_{i alpha}(k) = i kappa_alpha y_i(k): a gradient, hence curl-free."""
    if grid.rank(y_hat) != 1:
        raise ValueError("F_from_y expects a vector field")
    return grad(grid, y_hat)


def curl_residual(grid: SpectralGrid, F_hat: np.ndarray) -> float:
    """max over i, alpha < beta, k of |i kappa_alpha F_{i beta} - i kappa_beta F_{i alpha}|."""
    if grid.rank(F_hat) != 2:
        raise ValueError("curl_residual expects a matrix field")
    worst = 0.0
    for a in range(grid.d):
        for b in range(a + 1, grid.d):
            c = grid.kappa[a] * F_hat[:, b] - grid.kappa[b] * F_hat[:, a]
            worst = max(worst, float(np.max(np.abs(c))))
    return worst


def mean_mode(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    return coeffs[(Ellipsis,) + (0,) * grid.d]


def reconstruct_y_from_F(grid: SpectralGrid, F_hat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Invert F = grad y for curl-free, mean-zero F; the mean of y is set to zero.

    A nonzero mean of F cannot come from a periodic motion; it is dropped with
    a warning.
    """
    if grid.rank(F_hat) != 2:
        raise ValueError("reconstruct_y_from_F expects a matrix field")
    res = curl_residual(grid, F_hat)
    if res > tol:
        raise InadmissibleDataError(f"curl residual {res:.3e} exceeds tolerance {tol:.3e}")
    mean = mean_mode(grid, F_hat)
    if np.max(np.abs(mean)) > tol:
        warnings.warn(f"dropping nonzero mean of F (max |mean| = {np.max(np.abs(mean)):.3e}); "
                      "affine parts are not periodic", stacklevel=2)
    k2 = grid.kappa2.copy()
    k2[(0,) * grid.d] = 1.0
    y_hat = -1j * np.sum(F_hat * grid.kappa[None, :], axis=1) / k2
    y_hat[(Ellipsis,) + (0,) * grid.d] = 0.0
    return y_hat


# ---------------------------------------------------------------------------
# padded (alias-free) pointwise evaluation


def _pad_index(n: int, m: int) -> np.ndarray:
    p = np.arange(n)
    return np.where(p < n // 2, p, p - n + m)


def _pad_ix(grid: SpectralGrid, m: int):
    lead = [_pad_index(grid.n, m)] * (grid.d - 1)
    return np.ix_(*(lead + [np.arange(grid.n // 2 + 1)]))


def padded_apply(grid: SpectralGrid, func, *coeffs: np.ndarray, factor: int = 2) -> np.ndarray:
    """Evaluate ``func`` pointwise on a ``factor``-times finer grid and truncate back.

    Exact (within roundoff) for polynomial ``func`` whenever the padded grid
    resolves the product's bandwidth.
    """
    m = factor * grid.n
    fine = SpectralGrid(grid.d, m, cutoff=0)
    idx = _pad_ix(grid, m)
    fields = []
    for c in coeffs:
        big = np.zeros(c.shape[: c.ndim - grid.d] + fine.spectral_shape, dtype=complex)
        big[(Ellipsis,) + idx] = c
        fields.append(inverse(fine, big))
    out = sfft.rfftn(func(*fields), axes=fine.axes, norm="forward")
    small = out[(Ellipsis,) + idx]
    small[..., grid.nyquist] = 0.0
    return small
