"""Wick exponentials, the renormalized drift and the exponential nonlinearity.

All constants subtracted in an exponent are the exact pointwise variance of
the smoothed Gaussian they multiply, recomputed for each smoothing chain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e

from . import fields, gff
from .errors import WickOverflowError
from .stats import moment_report

__all__ = [
    "OVERFLOW_EXPONENT",
    "WickField",
    "wick_exp",
    "wick_exp_fejer",
    "drift_B",
    "nonlinearity_G",
    "nonlinearity_G_fejer",
    "interaction_potential",
    "hypercontractivity_check",
]

OVERFLOW_EXPONENT = 700.0


@dataclass(frozen=True)
class WickField:
    base: np.ndarray
    alpha: float
    constant_used: float
    values: np.ndarray


def _guarded_exp(expo, alpha, c):
    top = float(np.max(expo)) if expo.size else 0.0
    if top > OVERFLOW_EXPONENT or not np.isfinite(top):
        raise WickOverflowError(top, alpha, c, OVERFLOW_EXPONENT)
    return np.exp(expo)


def _wick(base, alpha, c):
    return WickField(base, alpha, c, _guarded_exp(alpha * base - 0.5 * alpha**2 * c, alpha, c))


def wick_exp(X, params):
    """``exp(alpha g*X - alpha^2 c_eps / 2)``."""
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    base = fields.apply_multiplier(X, fields.mollifier_multiplier(params.epsilon, grid), grid)
    return _wick(base, params.alpha, gff.renorm_constant(params.epsilon, params))


def wick_exp_fejer(X, params):
    """``exp(alpha Q_N g*X - alpha^2 c_{N,M,eps} / 2)``."""
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    base = fields.apply_multiplier(X, gff.smoothing_multiplier(params), grid)
    c = gff.renorm_constant_fejer(params.fejer_order, params.epsilon, params)
    return _wick(base, params.alpha, c)


def _cutoff(params, cutoff_mode, radius):
    return fields.cutoff(cutoff_mode, params.grid, radius)


def drift_B(phi, params, cutoff_mode="torus_unity", radius=None):
    """``(-Laplacian + m^2) phi + alpha f_eps :exp(alpha g*phi):`` on the grid."""
    grid = params.grid
    phi = fields.check_field(phi, grid, "phi")
    linear = fields.apply_multiplier(phi, grid.lam(params.mass), grid)
    w = wick_exp(phi, params).values
    return linear + params.alpha * _cutoff(params, cutoff_mode, radius) * w


def _check_negative(Y):
    top = float(np.max(Y))
    if top > 1e-9:
        raise ValueError(f"Y must be <= 0, max(Y) = {top:.3g}")
    if top > 0:
        warnings.warn(f"Y slightly positive (max {top:.3g}); proceeding", stacklevel=3)


def nonlinearity_G(X, Y, params, cutoff_mode="torus_unity", radius=None):
    """``alpha f_eps :exp(alpha g*X): exp(alpha g*Y)`` (no Fejer projection)."""
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    Y = fields.check_field(Y, grid, "Y")
    _check_negative(Y)
    # :e^{a gX}: e^{a gY} = :e^{a g(X+Y)}: since the constant only involves X
    vals = wick_exp(X + Y, params).values
    return params.alpha * _cutoff(params, cutoff_mode, radius) * vals


def nonlinearity_G_fejer(X, Y, params):
    """``alpha Q_N g*( :exp(alpha Q_N g*X): exp(alpha Q_N g*Y) )``.

    Depends on ``(X, Y)`` only through ``phi = X + Y`` and equals the L2
    gradient of :func:`interaction_potential`.
    """
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    Y = fields.check_field(Y, grid, "Y")
    _check_negative(Y)
    qg = gff.smoothing_multiplier(params)
    w = wick_exp_fejer(X + Y, params).values
    return params.alpha * fields.apply_multiplier(w, qg, grid)


def interaction_potential(phi, params):
    """``V(phi) = int :exp(alpha Q_N g*phi):`` (grid quadrature)."""
    w = wick_exp_fejer(phi, params).values
    return params.grid.cell_area * np.sum(w, axis=(-2, -1))


# ---------------------------------------------------------------- moments


def _hermite(z, k):
    """Probabilists' Hermite polynomial, the Wick power of a unit Gaussian."""
    coeffs = np.zeros(k + 1)
    coeffs[k] = 1.0
    return hermite_e.hermeval(z, coeffs)


def hypercontractivity_check(params, u, n_samples=10_000, seed=0, degrees=(1, 2, 3, 4), powers=(3, 4), tol=0.05):
    """Compare ``E|W_k|^r`` with ``(r-1)^{kr/2} (E W_k^2)^{r/2}`` for Wick powers.

    ``W_k = sigma^k He_k(Z / sigma)`` with ``Z = <u, g_eps * X>`` over GFF samples.
    Returns a list of dicts with both sides and the verdict.
    """
    grid = params.grid
    X = gff.sample_gff(params, seed, size=n_samples)
    gu = fields.apply_multiplier(u, fields.mollifier_multiplier(params.epsilon, grid), grid)
    z = fields.pairing(gu, X, grid)
    # exact variance of the pairing: <g u, C g u>
    uh = fields.fourier_forward(gu, grid)
    var = float(np.sum(np.abs(uh) ** 2 / grid.lam(params.mass)) * grid.side**2)
    sig = math.sqrt(var)
    out = []
    for k in degrees:
        w = sig**k * _hermite(z / sig, k)
        second = float(np.mean(w**2))
        for r in powers:
            lhs = float(np.mean(np.abs(w) ** r))
            rhs = (r - 1) ** (k * r / 2) * second ** (r / 2)
            out.append({"degree": k, "power": r, "lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1 + tol)})
    return out


def mean_one_report(params, n_samples=10_000, seed=0, point=(0, 0), fejer=False, chunk=1000):
    """Moment report for the Wick exponential at one grid point, target 1."""
    vals = []
    fn = wick_exp_fejer if fejer else wick_exp
    rng = gff.as_rng(seed)
    left = n_samples
    while left > 0:
        b = min(chunk, left)
        X = gff.sample_gff(params, rng, size=b)
        vals.append(fn(X, params).values[:, point[0], point[1]])
        left -= b
    return moment_report(f"wick_mean@{tuple(point)}", np.concatenate(vals), 1.0)
