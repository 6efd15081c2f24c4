import math

import mpmath
import numpy as np
import pytest
from scipy import integrate
from scipy.signal import lfilter

from ar2mix.kernel import (
    Ar2Coeffs,
    Ar2Kernel,
    DomainError,
    ar2_coeffs,
    density_grid,
    kernel_autocov,
    kernel_density,
    kernel_from_coeffs,
)
from oracles import ar2_peak


def test_coeffs_quarter_frequency():
    co = ar2_coeffs(Ar2Kernel(0.25, math.log(2.0)))
    assert abs(co.phi1) < 1e-16
    assert co.phi2 == pytest.approx(-0.25, abs=1e-15)


def test_coeffs_against_high_precision():
    mpmath.mp.dps = 40
    co = ar2_coeffs(Ar2Kernel(0.125, 0.1))
    phi1 = 2 * mpmath.exp(mpmath.mpf("-0.1")) * mpmath.cos(mpmath.pi / 4)
    phi2 = -mpmath.exp(mpmath.mpf("-0.2"))
    assert co.phi1 == pytest.approx(float(phi1), rel=1e-15)
    assert co.phi2 == pytest.approx(float(phi2), rel=1e-15)


def test_coeff_map_round_trip(rng):
    for psi, L in zip(rng.uniform(0.001, 0.499, 200), np.exp(rng.uniform(-8, 1, 200))):
        co = ar2_coeffs(Ar2Kernel(psi, L))
        back = kernel_from_coeffs(co)
        assert back.log_mod == pytest.approx(L, rel=1e-12)
        assert back.psi == pytest.approx(psi, abs=1e-12 / max(L, 1e-3))
        # the explicit inverse formula
        assert -math.log(-co.phi2) / 2 == pytest.approx(L, rel=1e-12)


def test_roots_outside_unit_circle(rng):
    for psi, L in zip(rng.uniform(0.01, 0.49, 50), rng.uniform(0.001, 2.0, 50)):
        roots = ar2_coeffs(Ar2Kernel(psi, L)).roots()
        assert np.allclose(np.abs(roots), math.exp(L), rtol=1e-9)
        co = ar2_coeffs(Ar2Kernel(psi, L))
        assert co.phi1**2 + 4 * co.phi2 < 0


@pytest.mark.parametrize("psi,L", [(0.0, 0.1), (0.5, 0.1), (-0.1, 0.1), (0.2, 0.0), (0.2, -1.0), (0.2, math.inf)])
def test_kernel_domain(psi, L):
    with pytest.raises(DomainError):
        Ar2Kernel(psi, L)


def test_density_domain():
    k = Ar2Kernel(0.1, 0.1)
    for w in (-0.01, 0.51, math.nan):
        with pytest.raises(DomainError):
            kernel_density(k, w)
    with pytest.raises(DomainError):
        kernel_from_coeffs(Ar2Coeffs(0.5, 0.1))


def test_symmetry_at_quarter(rng):
    k = Ar2Kernel(0.25, 0.37)
    d = rng.uniform(0, 0.25, 50)
    assert np.allclose(kernel_density(k, 0.25 - d), kernel_density(k, 0.25 + d), rtol=1e-12)


def test_density_positive_and_normalized(rng):
    for psi, L in zip(rng.uniform(0.001, 0.499, 20), np.exp(rng.uniform(np.log(1e-3), np.log(2.0), 20))):
        k = Ar2Kernel(psi, L)
        val = integrate.quad(lambda w: kernel_density(k, w), 0, 0.5, points=[psi], limit=1000, epsabs=1e-12)[0]
        assert val == pytest.approx(1.0, abs=1e-6)
        assert np.all(kernel_density(k, np.linspace(0, 0.5, 101)) > 0)


def test_density_matches_transfer_function():
    # |1 - phi1 z - phi2 z^2|^{-2}, normalized by quadrature
    k = Ar2Kernel(0.17, 0.2)
    co = ar2_coeffs(k)
    w = np.linspace(0, 0.5, 33)
    z = np.exp(-2j * np.pi * w)
    raw = 1 / np.abs(1 - co.phi1 * z - co.phi2 * z * z) ** 2
    norm = integrate.quad(lambda x: 1 / abs(1 - co.phi1 * np.exp(-2j * np.pi * x) - co.phi2 * np.exp(-4j * np.pi * x)) ** 2,
                          0, 0.5, points=[0.17], epsabs=0, epsrel=1e-13)[0]
    assert np.allclose(kernel_density(k, w), raw / norm, rtol=1e-10)


def test_density_grid_matches_scalar(rng):
    psi, L = rng.uniform(0.01, 0.49, 4), rng.uniform(0.01, 1.0, 4)
    w = np.linspace(0, 0.5, 17)
    g = density_grid(psi, L, w)
    for j in range(4):
        assert np.allclose(g[j], kernel_density(Ar2Kernel(psi[j], L[j]), w), rtol=1e-14)


def test_peak_near_psi_for_sharp_kernel():
    w = np.linspace(0, 0.5, 10_000)
    g = kernel_density(Ar2Kernel(0.1, 0.05), w)
    assert abs(w[np.argmax(g)] - 0.1) <= 0.005


def test_peak_matches_closed_form(rng):
    w = np.linspace(0, 0.5, 10_001)
    for psi, L in zip(rng.uniform(0.0, 0.5, 100), rng.uniform(1e-3, 0.5, 100)):
        if not 0 < psi < 0.5:
            continue
        g = kernel_density(Ar2Kernel(psi, L), w)
        assert abs(w[np.argmax(g)] - ar2_peak(psi, L)) <= 5e-5 + 1e-12


def test_autocov_simple_values():
    assert kernel_autocov(Ar2Kernel(0.3, 0.4), 0) == 1.0
    assert abs(kernel_autocov(Ar2Kernel(0.25, math.log(2.0)), 1)) < 1e-16
    with pytest.raises(DomainError):
        kernel_autocov(Ar2Kernel(0.3, 0.4), -1)


def test_autocov_matches_spectrum_integral():
    # gamma(h) = integral of g(w) cos(2 pi w h) over [0, 0.5]
    k = Ar2Kernel(0.12, 0.15)
    for h in range(6):
        val = integrate.quad(lambda w: kernel_density(k, w) * math.cos(2 * math.pi * w * h), 0, 0.5,
                             points=[0.12], limit=500, epsabs=1e-13)[0]
        assert kernel_autocov(k, h) == pytest.approx(val, abs=1e-9)


def test_autocov_monte_carlo():
    k = Ar2Kernel(0.1, 0.05)
    co = ar2_coeffs(k)
    rng = np.random.default_rng(2024)
    x = lfilter([1.0], [1.0, -co.phi1, -co.phi2], rng.standard_normal(1_000_000 + 5000))[5000:]
    x = x / x.std()
    x = x - x.mean()
    for h in range(1, 21):
        emp = float(np.dot(x[:-h], x[h:]) / len(x))
        assert emp == pytest.approx(kernel_autocov(k, h), abs=0.01), h


def test_average_periodogram_matches_density():
    k = Ar2Kernel(0.1, 0.1)
    co = ar2_coeffs(k)
    T, reps = 2048, 200
    rng = np.random.default_rng(7)
    e = rng.standard_normal((reps, T + 1000))
    x = lfilter([1.0], [1.0, -co.phi1, -co.phi2], e, axis=1)[:, 1000:]
    per = np.abs(np.fft.rfft(x, axis=1)) ** 2 / T
    avg = per.mean(axis=0)
    freqs = np.arange(T // 2 + 1) / T
    avg = avg / integrate.trapezoid(avg, freqs)
    m = int(np.argmin(np.abs(freqs - 0.1)))
    assert avg[m] == pytest.approx(kernel_density(k, freqs[m]), rel=0.10)
