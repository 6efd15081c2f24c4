"""Second-order autoregressive spectral kernels.

Each latent oscillation is an AR(2) process with complex-conjugate roots
``M exp(-+2 pi i psi)``.  We parameterize it by the peak location ``psi``
(cycles/sample) and the log root modulus ``L = log M``.  The spectral density
divided by the process variance gives a density ``g`` that integrates to one
over ``[0, 0.5]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "DomainError",
    "Ar2Kernel",
    "Ar2Coeffs",
    "ar2_coeffs",
    "kernel_from_coeffs",
    "kernel_density",
    "kernel_autocov",
    "density_grid",
]

_TINY = 1e-300


@dataclass(frozen=True)
class Ar2Kernel:
    """One latent oscillation: peak location ``psi`` and bandwidth ``log_mod``."""

    psi: float
    log_mod: float

    def __post_init__(self):
        if not (0.0 < self.psi < 0.5):
            raise DomainError(f"psi must lie in (0, 0.5), got {self.psi!r}")
        if not (self.log_mod > 0.0) or not math.isfinite(self.log_mod):
            raise DomainError(f"log_mod must be finite and > 0, got {self.log_mod!r}")

    @property
    def modulus(self) -> float:
        return math.exp(self.log_mod)


@dataclass(frozen=True)
class Ar2Coeffs:
    phi1: float
    phi2: float

    def roots(self) -> np.ndarray:
        """Roots of ``1 - phi1 z - phi2 z**2``."""
        return np.roots([-self.phi2, -self.phi1, 1.0])


def ar2_coeffs(kernel: Ar2Kernel) -> Ar2Coeffs:
    r = math.exp(-kernel.log_mod)
    return Ar2Coeffs(2.0 * r * math.cos(2.0 * math.pi * kernel.psi), -r * r)


def kernel_from_coeffs(coeffs: Ar2Coeffs) -> Ar2Kernel:
    """Inverse of :func:`ar2_coeffs` for complex-root AR(2) coefficients."""
    phi1, phi2 = coeffs.phi1, coeffs.phi2
    if not (-1.0 < phi2 < 0.0) or phi1 * phi1 + 4.0 * phi2 >= 0.0:
        raise DomainError(f"coefficients {coeffs} do not have complex stationary roots")
    log_mod = -0.5 * math.log(-phi2)
    c = phi1 * math.exp(log_mod) / 2.0
    return Ar2Kernel(math.acos(max(-1.0, min(1.0, c))) / (2.0 * math.pi), log_mod)


def _density(psi, log_mod, omega):
    # broadcasting core shared by the scalar and grid entry points
    r2 = np.exp(-2.0 * log_mod)
    one_minus_r2 = -np.expm1(-2.0 * log_mod)
    c = np.cos(2.0 * np.pi * psi)
    phi1 = 2.0 * np.exp(-log_mod) * c
    num = 2.0 * one_minus_r2 * ((1.0 + r2) ** 2 - 4.0 * c * c * r2)
    theta = 2.0 * np.pi * omega
    re = 1.0 - phi1 * np.cos(theta) + r2 * np.cos(2.0 * theta)
    im = phi1 * np.sin(theta) - r2 * np.sin(2.0 * theta)
    den = (1.0 + r2) * (re * re + im * im)
    return num / np.maximum(den, _TINY)


def kernel_density(kernel: Ar2Kernel, omega):
    """Normalized AR(2) spectral density ``g(omega)`` on ``[0, 0.5]``.

    ``omega`` may be a scalar or an array; a scalar returns a float.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w < 0.0) or np.any(w > 0.5):
        raise DomainError("omega must lie in [0, 0.5]")
    out = _density(kernel.psi, kernel.log_mod, w)
    return float(out) if out.ndim == 0 else out


def density_grid(psi, log_mod, freqs) -> np.ndarray:
    """Densities of several kernels on a frequency grid, shape ``(K, M)``.

    No validation: this sits on the sampler's hot path.
    """
    psi = np.asarray(psi, dtype=float)[:, None]
    log_mod = np.asarray(log_mod, dtype=float)[:, None]
    return _density(psi, log_mod, np.asarray(freqs, dtype=float)[None, :])


def kernel_autocov(kernel: Ar2Kernel, lag: int) -> float:
    """Autocorrelation of the unit-variance AR(2) at ``lag`` via Yule-Walker."""
    if lag < 0:
        raise DomainError(f"lag must be nonnegative, got {lag}")
    co = ar2_coeffs(kernel)
    g_prev, g = 1.0, co.phi1 / (1.0 - co.phi2)
    if lag == 0:
        return 1.0
    for _ in range(lag - 1):
        g_prev, g = g, co.phi1 * g + co.phi2 * g_prev
    return g
