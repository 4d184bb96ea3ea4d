"""Sine eigenbasis of the Dirichlet Laplacian on (0, pi) and spectral fields.

Fields are plain 1D numpy arrays of coefficients on the orthonormal modes
e_k(x) = sqrt(2/pi) sin(kx), k = 1..N, with eigenvalues lam_k = k^2.  All
fractional-power norms are exact diagonal sums; nonlinear terms are applied
pseudo-spectrally on a 4N collocation grid (dealiasing margin for cubics).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.fft import dst


class ModeBasis:
    """Dirichlet sine basis on (0, pi) with N retained modes.

    The collocation grid holds 4N interior points x_j = j*pi/(4N+1); the
    DST-I transform is exact for any function band-limited to 4N modes, so
    cubic products of the retained N modes transform without aliasing.
    """

    def __init__(self, n_modes: int = 32):
        if n_modes < 1:
            raise ValueError("need at least one mode")
        self.n_modes = n_modes
        self.domain_length = np.pi
        self.k = np.arange(1, n_modes + 1)
        self.eigenvalues = self.k.astype(float) ** 2
        self.n_grid = 4 * n_modes
        self.grid = np.arange(1, self.n_grid + 1) * np.pi / (self.n_grid + 1)
        # DST-I scalings for the orthonormal modes sqrt(2/pi) sin(kx)
        self._to_grid_scale = 0.5 * np.sqrt(2.0 / np.pi)
        self._to_coeff_scale = np.sqrt(2.0 * np.pi) / (2.0 * (self.n_grid + 1))
        # dense transforms beat the FFT dispatch overhead at desk scale
        self._use_matrix = n_modes <= 128
        if self._use_matrix:
            phases = np.sin(np.outer(self.grid, self.k))
            self._synth = np.sqrt(2.0 / np.pi) * phases
            self._proj = (2.0 / (self.n_grid + 1)) * np.sqrt(np.pi / 2.0) * phases.T
        self._pow_cache: dict[float, np.ndarray] = {}

    def lam_pow(self, sigma: float) -> np.ndarray:
        """Cached eigenvalue powers lam_k^sigma."""
        out = self._pow_cache.get(sigma)
        if out is None:
            out = self.eigenvalues**sigma
            self._pow_cache[sigma] = out
        return out

    def zero_field(self) -> np.ndarray:
        return np.zeros(self.n_modes)

    def unit_field(self, k: int) -> np.ndarray:
        """Coefficient vector of the single mode e_k (1-based)."""
        if not 1 <= k <= self.n_modes:
            raise ValueError(f"mode {k} outside 1..{self.n_modes}")
        c = self.zero_field()
        c[k - 1] = 1.0
        return c

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate a coefficient vector on the collocation grid."""
        if self._use_matrix:
            return self._synth @ coeffs
        padded = np.zeros(self.n_grid)
        padded[: self.n_modes] = coeffs
        return self._to_grid_scale * dst(padded, type=1)

    def to_coeffs(self, values: np.ndarray) -> np.ndarray:
        """Project grid values back onto the retained N modes."""
        if self._use_matrix:
            return self._proj @ values
        return self._to_coeff_scale * dst(values, type=1)[: self.n_modes]

    def sigma_norm(self, coeffs: np.ndarray, sigma: float) -> float:
        """Fractional Sobolev norm ||A^(sigma/2) u|| = sqrt(sum lam_k^sigma c_k^2)."""
        return float(np.sqrt(self.lam_pow(sigma) @ (coeffs * coeffs)))

    def sigma_norm2(self, coeffs: np.ndarray, sigma: float) -> float:
        return float(self.lam_pow(sigma) @ (coeffs * coeffs))

    def sigma_inner(self, a: np.ndarray, b: np.ndarray, sigma: float) -> float:
        """Weighted inner product <A^(sigma/2) a, A^(sigma/2) b>."""
        return float(self.lam_pow(sigma) @ (a * b))

    def apply_A_power(self, coeffs: np.ndarray, alpha: float) -> np.ndarray:
        """Multiply coefficient k by lam_k^alpha (the operator A^alpha)."""
        return self.lam_pow(alpha) * coeffs

    def quadrature_integral(self, values: np.ndarray) -> float:
        """Trapezoid-free collocation quadrature: exact for band-limited integrands."""
        h = np.pi / (self.n_grid + 1)
        return float(h * np.sum(values))


@dataclass
class Nonlinearity:
    """Scalar nonlinearity with derivatives and its inner/outer splitting.

    The splitting writes f = f0 + f1 where f1 is globally Lipschitz with
    f1(0) = 0 and f0 vanishes on [-1, 1] with f0' >= 0 everywhere.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    f0: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray], np.ndarray]
    df0: Callable[[np.ndarray], np.ndarray]
    df1: Callable[[np.ndarray], np.ndarray]
    growth_constant: float = field(default=0.0)

    def part(self, which: str) -> Callable[[np.ndarray], np.ndarray]:
        try:
            return {"full": self.f, "f0": self.f0, "f1": self.f1}[which]
        except KeyError:
            raise ValueError(f"unknown part {which!r}, expected full/f0/f1") from None


def cubic_nonlinearity() -> Nonlinearity:
    """The built-in defocusing cubic f(u) = u^3.

    f1 follows the cubic on [-1, 1] and continues with the saturated slope 3
    beyond (f1' = min(3u^2, 3)), so f0 = f - f1 vanishes on [-1, 1] and has
    f0' = max(3u^2 - 3, 0) >= 0.  The splitting is C^{1,1}: f0'' jumps at
    |u| = 1.
    """

    def f(u):
        return u**3

    def df(u):
        return 3.0 * u**2

    def d2f(u):
        return 6.0 * u

    def f1(u):
        return np.where(np.abs(u) <= 1.0, u**3, 3.0 * u - 2.0 * np.sign(u))

    def f0(u):
        return np.where(np.abs(u) <= 1.0, 0.0, u**3 - 3.0 * u + 2.0 * np.sign(u))

    def df1(u):
        return np.minimum(3.0 * u**2, 3.0)

    def df0(u):
        return np.maximum(3.0 * u**2 - 3.0, 0.0)

    return Nonlinearity("cubic", f, df, d2f, f0, f1, df0, df1, growth_constant=6.0)


def zero_nonlinearity() -> Nonlinearity:
    """f identically zero (linear dynamics)."""
    zero = lambda u: np.zeros_like(u)
    return Nonlinearity("zero", zero, zero, zero, zero, zero, zero, zero, 0.0)


def apply_nonlinearity(
    basis: ModeBasis, nl: Nonlinearity, part: str, coeffs: np.ndarray
) -> np.ndarray:
    """Pseudo-spectral evaluation: grid -> scalar map -> back to N modes."""
    values = nl.part(part)(basis.to_grid(coeffs))
    return basis.to_coeffs(values)


def default_forcing(basis: ModeBasis, amplitude: float = 0.5) -> np.ndarray:
    """Time-independent forcing with coefficients amplitude / k^2."""
    return amplitude / basis.k.astype(float) ** 2
