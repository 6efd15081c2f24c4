"""Scenario generators, exact spectra and the IAE harness.

Every latent is scaled to unit theoretical variance before mixing, so the
mixing rows (unit sum of squares) split each channel's variance between
latents.  Observation noise is ``noise_scale * N(0, 1)`` per channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .kernel import Ar2Kernel, ar2_coeffs, density_grid
from .whittle import FourierData, MultiChannelSeries

__all__ = [
    "LatentSpec",
    "Scenario",
    "TrueSpectrum",
    "SCENARIO1",
    "SCENARIO2",
    "scenario1",
    "scenario2",
    "gen_scenario",
    "gen_scenario1",
    "gen_scenario2",
    "load_scenario",
    "scenario_from_dict",
    "iae",
    "periodogram_baseline",
    "frequency_grid",
]

BURNIN = 1000
_VAR_GRID = 1 << 16


def frequency_grid(points: int = 512) -> np.ndarray:
    return np.linspace(0.0, 0.5, points)


@dataclass(frozen=True)
class LatentSpec:
    """ARMA latent ``phi(B) Z = theta(B) e``; ``ar``/``ma`` exclude the leading 1.

    ``ar`` holds ``phi_1..phi_p`` with ``Z(t) = sum phi_k Z(t-k) + ...``.
    """

    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()
    label: str = ""

    @classmethod
    def from_ar2(cls, psi: float, log_mod: float) -> "LatentSpec":
        co = ar2_coeffs(Ar2Kernel(psi, log_mod))
        return cls((co.phi1, co.phi2), (), f"AR(2) psi={psi} L={log_mod}")

    def check_stationary(self) -> None:
        if self.ar:
            roots = np.roots(np.r_[1.0, -np.asarray(self.ar)])
            if np.any(np.abs(roots) >= 1.0):
                raise ValueError(f"latent {self.label or self.ar} is not stationary")

    def raw_spectrum(self, freqs) -> np.ndarray:
        """Two-sided density of the unscaled process (unit innovation variance)."""
        z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float))
        num = np.abs(np.polyval(np.r_[self.ma[::-1], 1.0], z)) ** 2
        den = np.abs(np.polyval(np.r_[-np.asarray(self.ar)[::-1], 1.0], z)) ** 2
        return num / den

    def variance(self) -> float:
        # rectangle rule on a periodic grid is spectrally accurate
        w = np.arange(_VAR_GRID) / _VAR_GRID - 0.5
        return float(self.raw_spectrum(w).mean())

    def density(self, freqs) -> np.ndarray:
        """One-sided spectral density of the unit-variance latent."""
        return 2.0 * self.raw_spectrum(freqs) / self.variance()


@dataclass(frozen=True)
class Scenario:
    name: str
    latents: tuple[LatentSpec, ...]
    mixing: np.ndarray = field(repr=False)
    noise_scale: float = 0.1

    def __post_init__(self):
        mix = np.asarray(self.mixing, dtype=float)
        if mix.ndim != 2 or mix.shape[1] != len(self.latents):
            raise ValueError("mixing must be n x K with one column per latent")
        if np.any(mix < 0) or np.any(np.abs((mix**2).sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("mixing rows must be nonnegative with unit sum of squares")
        for lat in self.latents:
            lat.check_stationary()
        object.__setattr__(self, "mixing", mix)

    @property
    def n_channels(self) -> int:
        return self.mixing.shape[0]

    def truth(self) -> "TrueSpectrum":
        return TrueSpectrum(self)


@dataclass(frozen=True)
class TrueSpectrum:
    """Closed-form one-sided spectral matrix of a scenario."""

    scenario: Scenario

    @property
    def variances(self) -> np.ndarray:
        # unit-variance latents, unit-norm rows
        return np.ones(self.scenario.n_channels) + self.scenario.noise_scale**2

    def __call__(self, freqs, standardized: bool = False) -> np.ndarray:
        sc = self.scenario
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        g = np.array([lat.density(freqs) for lat in sc.latents])
        s = np.einsum("ik,km,jk->mij", sc.mixing, g, sc.mixing).astype(complex)
        s += 2.0 * sc.noise_scale**2 * np.eye(sc.n_channels)
        if standardized:
            sd = np.sqrt(self.variances)
            s /= np.outer(sd, sd)
        return s


def scenario1() -> Scenario:
    psi = (0.005, 0.03, 0.06, 0.3)
    latents = tuple(LatentSpec.from_ar2(p, 0.03) for p in psi)
    mixing = np.sqrt(np.array([
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
        [0.4, 0, 0.6, 0],
        [0, 0.7, 0, 0.3],
        [0, 0, 0.3, 0.7],
    ]))
    return Scenario("ar2mix", latents, mixing, 0.1)


def scenario2() -> Scenario:
    ar12 = np.zeros(12)
    ar12[[3, 7, 11]] = (0.9, 0.7, -0.63)
    latents = (
        LatentSpec(tuple(ar12), (), "AR(12)"),
        LatentSpec((), (0.6, -0.3, -0.6, -0.3), "MA(4)"),
        LatentSpec((0.8,), (), "AR(1) 0.8"),
        LatentSpec((-0.8,), (), "AR(1) -0.8"),
    )
    mixing = np.sqrt(np.array([
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
        [0, 0, 0.4, 0.6],
        [0, 0.6, 0.4, 0],
        [0, 0.5, 0, 0.5],
    ]))
    return Scenario("misspec", latents, mixing, 0.1)


SCENARIO1 = "ar2mix"
SCENARIO2 = "misspec"
_BUILTIN = {SCENARIO1: scenario1, SCENARIO2: scenario2}


def gen_scenario(scenario: Scenario, T: int, seed: int) -> tuple[MultiChannelSeries, TrueSpectrum]:
    """Simulate ``T`` samples; deterministic in ``seed``."""
    if T % 2 or T < 16:
        raise ValueError(f"T must be even and >= 16, got {T}")
    rng = np.random.default_rng(seed)
    K, n = len(scenario.latents), scenario.n_channels
    z = np.empty((T, K))
    for j, lat in enumerate(scenario.latents):
        e = rng.standard_normal(T + BURNIN)
        x = lfilter(np.r_[1.0, lat.ma], np.r_[1.0, -np.asarray(lat.ar)], e)
        z[:, j] = x[BURNIN:] / np.sqrt(lat.variance())
    noise = scenario.noise_scale * rng.standard_normal((T, n))
    return MultiChannelSeries(z @ scenario.mixing.T + noise), scenario.truth()


def gen_scenario1(T: int, seed: int):
    return gen_scenario(scenario1(), T, seed)


def gen_scenario2(T: int, seed: int):
    return gen_scenario(scenario2(), T, seed)


def scenario_from_dict(doc: dict) -> Scenario:
    """Scenario from a config document.

    Latents are ``{"psi": .., "log_mod": ..}`` or ``{"ar": [..], "ma": [..]}``;
    ``mixing`` holds square-root variance shares (or give ``shares``).
    """
    latents = []
    for spec in doc["latents"]:
        if "psi" in spec:
            latents.append(LatentSpec.from_ar2(float(spec["psi"]), float(spec["log_mod"])))
        else:
            latents.append(LatentSpec(tuple(spec.get("ar", ())), tuple(spec.get("ma", ())), spec.get("label", "")))
    if "shares" in doc:
        mixing = np.sqrt(np.asarray(doc["shares"], dtype=float))
    else:
        mixing = np.asarray(doc["mixing"], dtype=float)
    return Scenario(doc.get("name", "custom"), tuple(latents), mixing, float(doc.get("noise_scale", 0.1)))


def load_scenario(name_or_path: str) -> Scenario:
    if name_or_path in _BUILTIN:
        return _BUILTIN[name_or_path]()
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(f"unknown scenario {name_or_path!r} (builtins: {sorted(_BUILTIN)})")
    return scenario_from_dict(json.loads(path.read_text()))


# -- evaluation ---------------------------------------------------------------


def iae(estimate: np.ndarray, truth: np.ndarray, freqs: np.ndarray) -> float:
    """Integrated absolute error over the lower triangle, diagonal included."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    freqs = np.asarray(freqs, dtype=float)
    if estimate.shape != truth.shape or estimate.shape[0] != len(freqs):
        raise ValueError(f"grid mismatch: {estimate.shape} vs {truth.shape} on {len(freqs)} frequencies")
    if len(freqs) < 2 or freqs[0] > 1e-12 or abs(freqs[-1] - 0.5) > 1e-12:
        raise ValueError("the frequency grid must cover [0, 0.5]")
    n = estimate.shape[1]
    rows, cols = np.tril_indices(n)
    diff = np.abs(estimate[:, rows, cols] - truth[:, rows, cols])
    return float(np.trapezoid(diff, freqs, axis=0).sum())


def periodogram_baseline(data: FourierData, smoothing_halfwidth: int = 0, grid=None) -> np.ndarray:
    """Box-smoothed cross-periodogram in one-sided units, shape ``(M, n, n)``.

    With ``grid`` the result is linearly interpolated (ends held) onto it.
    """
    if smoothing_halfwidth < 0:
        raise ValueError("smoothing_halfwidth must be >= 0")
    p = 2.0 * data.periodogram()
    if smoothing_halfwidth:
        h = smoothing_halfwidth
        padded = np.concatenate([p[h:0:-1], p, p[-2 : -h - 2 : -1]])
        csum = np.concatenate([np.zeros((1,) + p.shape[1:], dtype=p.dtype), np.cumsum(padded, axis=0)])
        p = (csum[2 * h + 1 :] - csum[: -2 * h - 1]) / (2 * h + 1)
    if grid is None:
        return p
    grid = np.asarray(grid, dtype=float)
    out = np.empty((len(grid),) + p.shape[1:], dtype=complex)
    n = p.shape[1]
    for i in range(n):
        for j in range(n):
            out[:, i, j] = np.interp(grid, data.freqs, p[:, i, j].real) + 1j * np.interp(grid, data.freqs, p[:, i, j].imag)
    return out
