"""Independent reference computations.

Nothing here imports the package's numerical code beyond plain data
containers: spectral sums are written as explicit loops over modes,
roots come from mpmath, derivatives from central differences. The values
frozen in ``frozen.json`` were produced by ``make_frozen.py`` from these
functions and are checked against them again by ``test_oracles.py``.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np


def mode_list(n):
    return [k if k <= n // 2 - 1 else k - n for k in range(n)]


def lam(j1, j2, M, m):
    return (j1 / M) ** 2 + (j2 / M) ** 2 + m * m


def covariance_direct(x, M, n, m):
    """``sum_j exp(i j.x / M) / ((2 pi M)^2 lam_j)`` by explicit mode loop."""
    area = (2 * math.pi * M) ** 2
    js = np.array(mode_list(n), dtype=float)
    J1, J2 = np.meshgrid(js, js, indexing="ij")
    return float(np.sum(np.cos((J1 * x[0] + J2 * x[1]) / M) / (area * lam(J1, J2, M, m))))


def bump_sqrt_kernel(n, M, eps):
    """Normalized radial bump of radius ``eps`` on the grid; reference for ``g~``."""
    h = 2 * math.pi * M / n
    k = np.array([i if i <= n // 2 else i - n for i in range(n)]) * h
    r = np.hypot(k[:, None], k[None, :]) / eps
    g = np.zeros_like(r)
    inside = r < 1
    g[inside] = np.exp(-1 / (1 - r[inside] ** 2))
    return g / (g.sum() * h * h)


def renorm_constant_direct(eps, M, n, m):
    """``c_eps = sum_j |m_g(j)|^2 / ((2 pi M)^2 lam_j)`` with ``m_g = m_gt^2``."""
    h = 2 * math.pi * M / n
    gt = bump_sqrt_kernel(n, M, eps)
    mt = (h * h * np.fft.fft2(gt)).real
    mult = mt**2
    area = (2 * math.pi * M) ** 2
    js = np.fft.fftfreq(n, 1 / n)
    J1, J2 = np.meshgrid(js, js, indexing="ij")
    return float(np.sum(mult**2 / (area * lam(J1, J2, M, m))))


def gamma_of_r(r):
    r = mp.mpf(r)
    return 2 * (r - 1) ** 2 / (r * ((r - 1) ** 2 + 1))


def r_star_mp():
    return mp.findroot(lambda r: (r - 1) ** 3 - (r - 1) - 2, 2.5)


def gamma_max_mp():
    rs = r_star_mp()
    return gamma_of_r(rs), rs


def quadratic_r_roots(gamma, s):
    g, s = mp.mpf(gamma), mp.mpf(s)
    disc = (s - g - 2) ** 2 - 8 * g
    return ((2 + g - s - mp.sqrt(disc)) / (2 * g), (2 + g - s + mp.sqrt(disc)) / (2 * g))


def pq_system_value(gamma):
    """Smallest ``1/p + beta + theta/2`` at ``delta -> 0`` minus 1 (feasible iff < 0).

    Minimizing ``beta = gamma (q-1)/2 + 1/q`` and ``1/p + gamma (p-1)/2``
    separately gives ``2 sqrt(2 gamma) - gamma - 1`` when ``sqrt(2/gamma) > 2``.
    """
    g = mp.mpf(gamma)
    return 2 * mp.sqrt(2 * g) - g - 1


def resolvent_linear_closed_form(u_hat_conj_z_hat, lam_modes, lam_, T):
    """``sum_j c_j (1 - exp(-(lam + lam_j) T)) / (lam + lam_j)`` mode by mode."""
    out = 0.0
    for c, lj in zip(u_hat_conj_z_hat, lam_modes):
        a = lam_ + lj
        out += c * (-math.expm1(-a * T)) / a
    return out


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def log_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    A = np.vstack([xs, np.ones_like(xs)]).T
    return float(np.linalg.lstsq(A, ys, rcond=None)[0][0])
