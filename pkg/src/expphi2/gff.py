"""Gaussian free field: exact sampling, the OU flow for X, covariances and Wick constants.

Every mode ``j`` of the massive GFF is an independent complex Gaussian with
``E|Xhat_j|^2 = sigma_j^2 = (2 pi M)^-2 / lam_j``, ``lam_j = |j/M|^2 + m^2``.
With the L2 pairing of :mod:`expphi2.fields` this is covariance
``(-Laplacian + m^2)^-1``.

Random streams
--------------
``rng_for(seed, *key)`` builds ``Generator(PCG64(SeedSequence(seed, spawn_key=key)))``.
Chain ``i`` of a run uses key ``(i,)``; path ``p`` from start ``i`` uses
``(i, p)``. Streams depend only on the key, never on worker layout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import fields
from .fields import GridSpec

__all__ = [
    "ModelParams",
    "OUState",
    "rng_for",
    "as_rng",
    "mode_std",
    "sample_gff",
    "white_noise_hat",
    "ou_step",
    "covariance",
    "covariance_mollified",
    "covariance_field",
    "renorm_constant",
    "renorm_constant_fejer",
    "smoothing_multiplier",
]


@dataclass(frozen=True)
class ModelParams:
    """Coupling, mass, mollification scale, Fejer order and grid."""

    alpha: float
    mass: float
    epsilon: float
    fejer_order: int
    grid: GridSpec

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not np.isfinite(self.mass) or self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        fields.mollifier_sqrt_multiplier(self.epsilon, self.grid)
        fields.fejer_multiplier(self.fejer_order, self.grid)
        object.__setattr__(self, "fejer_order", int(self.fejer_order))
        if self.gamma >= 2:
            warnings.warn(f"gamma = {self.gamma:.3g} >= 2 is outside the admissible range", stacklevel=3)

    @property
    def gamma(self):
        return self.alpha**2 / (4.0 * np.pi)

    @classmethod
    def from_gamma(cls, gamma, *, mass=1.0, epsilon=None, eps_cells=4.0, fejer_order=None, M=1.0, n=64):
        """Convenience constructor; ``epsilon`` defaults to ``eps_cells`` grid spacings."""
        grid = GridSpec(M, n)
        if epsilon is None:
            epsilon = eps_cells * grid.spacing
        if fejer_order is None:
            fejer_order = n // 4
        return cls(np.sqrt(4.0 * np.pi * gamma), mass, epsilon, fejer_order, grid)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "mass": self.mass,
            "epsilon": self.epsilon,
            "fejer_order": self.fejer_order,
            "torus_size": self.grid.M,
            "n": self.grid.n,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], d["mass"], d["epsilon"], d["fejer_order"], GridSpec(d["torus_size"], d["n"]))


# ---------------------------------------------------------------- randomness


def rng_for(seed, *key):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return rng_for(seed)


def white_noise_hat(rng, grid, size=()):
    """Half-spectrum of real white noise scaled so ``E|zeta_j|^2 = 1``."""
    shape = grid.shape if size in ((), None) else tuple(np.atleast_1d(size)) + grid.shape
    return sfft.rfft2(rng.standard_normal(shape)) / grid.n


# ---------------------------------------------------------------- GFF


def mode_std(mass, grid):
    """``sigma_j`` for every mode (full layout)."""
    return _mode_std(grid, float(mass))


@lru_cache(maxsize=64)
def _mode_std(grid, mass):
    s = 1.0 / (grid.side * np.sqrt(grid.lam(mass)))
    s.setflags(write=False)
    return s


def sample_gff(params, seed, size=None):
    """Exact GFF sample(s): shape ``(n, n)`` or ``(size, n, n)``."""
    grid = params.grid
    rng = as_rng(seed)
    zeta = white_noise_hat(rng, grid, () if size is None else size)
    return fields.irfft(fields.half(mode_std(params.mass, grid), grid) * zeta, grid)


@dataclass
class OUState:
    """Spectral OU state (full-layout ``field``) with its own generator."""

    time: float
    field: np.ndarray
    rng: np.random.Generator = dc_field(repr=False)

    def real(self, grid):
        return fields.fourier_inverse(self.field, grid)


def ou_step(state, dt, params, noise=True):
    """Exact-in-law OU update ``dX = -A X dt + sqrt(2) dW``.

    The noise amplitude ``sigma_j sqrt(1 - exp(-2 dt lam_j))`` leaves the GFF
    invariant. ``noise=False`` gives the deterministic semigroup.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = params.grid
    lam = grid.lam(params.mass)
    decay = np.exp(-dt * lam)
    new = decay * state.field
    if noise:
        amp = mode_std(params.mass, grid) * np.sqrt(-np.expm1(-2.0 * dt * lam))
        w = state.rng.standard_normal(grid.shape)
        new = new + amp * (sfft.fft2(w) / grid.n)
    return OUState(state.time + dt, new, state.rng)


# ---------------------------------------------------------------- covariances


def smoothing_multiplier(params, fejer=True, epsilon=None, N=None):
    """``w_N * m_g`` (Fejer after mollifier) or ``m_g`` alone."""
    eps = params.epsilon if epsilon is None else epsilon
    m = fields.mollifier_multiplier(eps, params.grid)
    if fejer:
        m = m * fields.fejer_multiplier(params.fejer_order if N is None else N, params.grid)
    return m


def covariance_field(mass, grid, weights=None):
    """``x -> sum_j weights_j / lam_j (2 pi M)^-2 e^{i j.x/M}`` on the whole grid."""
    c = 1.0 / (grid.side**2 * grid.lam(mass))
    if weights is not None:
        c = c * weights
    return sfft.ifft2(c).real * grid.n**2


def _eval_at(coeff, x, grid):
    j1, j2 = grid.modes()
    x = np.asarray(x, dtype=float)
    phase = (j1 * x[0] + j2 * x[1]) / grid.M
    return float(np.sum(coeff * np.cos(phase)))


def covariance(x, mass, grid):
    """GFF covariance ``X(x) = E[X(0) X(x)]`` by direct spectral sum at point ``x``."""
    return _eval_at(1.0 / (grid.side**2 * grid.lam(mass)), x, grid)


def covariance_mollified(x, eps, mass, grid):
    """Covariance of ``g_eps * X``: weights ``|m_g|^2``."""
    m = fields.mollifier_multiplier(eps, grid)
    return _eval_at(m**2 / (grid.side**2 * grid.lam(mass)), x, grid)


def renorm_constant(eps, params):
    """``c_eps = Var (g_eps * X)(x)``."""
    grid = params.grid
    m = fields.mollifier_multiplier(eps, grid)
    return float(np.sum(m**2 / grid.lam(params.mass)) / grid.side**2)


def renorm_constant_fejer(N, eps, params):
    """``c_{N,M,eps} = Var Q_N(g_eps * X)(x)``."""
    grid = params.grid
    m = fields.mollifier_multiplier(eps, grid) * fields.fejer_multiplier(N, grid)
    return float(np.sum(m**2 / grid.lam(params.mass)) / grid.side**2)
