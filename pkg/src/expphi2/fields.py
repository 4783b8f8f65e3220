"""Torus grid, Fourier conventions and the fixed linear kernels.

Conventions
-----------
The torus of side ``2*pi*M`` is sampled at ``x_k = k*h`` (``h = 2*pi*M/n``),
with signed coordinates in ``(-pi*M, pi*M]``. A real field is stored as an
``(..., n, n)`` float array. Its Fourier coefficients follow

    f(x) = sum_j fhat_j exp(i j.x / M),   j in [-n/2, n/2)^2,

so ``fhat = fft2(f) / n**2`` (numpy ordering of ``j``). Useful identities:

=====================  ==========================================
quantity               grid formula
=====================  ==========================================
integral of f          ``h**2 * f.sum() = (2 pi M)**2 * fhat_0``
<u, f> (L2 pairing)    ``(2 pi M)**2 * sum_j conj(uhat_j) fhat_j``
kernel multiplier      ``m_g(j) = h**2 * fft2(g)_j``, ``m_g(0) = int g``
(g * f)hat             ``m_g(j) * fhat_j``
=====================  ==========================================

A multiplier is any real array indexed like ``fhat``. Multipliers used here
are even under ``j -> -j`` so they map real fields to real fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError, UnderResolvedError

__all__ = [
    "GridSpec",
    "WeightSpec",
    "make_grid",
    "check_field",
    "fourier_forward",
    "fourier_inverse",
    "apply_multiplier",
    "pairing",
    "lp_norm",
    "mollifier",
    "mollifier_sqrt",
    "mollifier_multiplier",
    "mollifier_sqrt_multiplier",
    "cutoff",
    "fejer_multiplier",
    "fejer_apply",
    "heat_multiplier",
    "heat_semigroup",
    "weight",
    "in_band",
    "dump_field",
    "load_field",
]


@dataclass(frozen=True)
class GridSpec:
    """Square torus ``(-pi M, pi M]^2`` with ``n`` points per side."""

    torus_size: float
    points_per_side: int

    def __post_init__(self):
        M, n = self.torus_size, self.points_per_side
        if not np.isfinite(M) or M <= 0:
            raise ValueError(f"torus_size must be positive, got {M!r}")
        if int(n) != n or n % 2 or n < 8:
            raise ValueError(f"points_per_side must be an even integer >= 8, got {n!r}")
        object.__setattr__(self, "torus_size", float(M))
        object.__setattr__(self, "points_per_side", int(n))

    @property
    def M(self):
        return self.torus_size

    @property
    def n(self):
        return self.points_per_side

    @property
    def side(self):
        return 2.0 * np.pi * self.torus_size

    @property
    def spacing(self):
        return self.side / self.points_per_side

    @property
    def cell_area(self):
        return self.spacing**2

    @property
    def shape(self):
        return (self.n, self.n)

    def signed_index(self):
        """Integer offsets in ``(-n/2, n/2]``; the point ``k = n/2`` sits at ``+pi M``."""
        k = np.arange(self.n)
        return np.where(k <= self.n // 2, k, k - self.n)

    def coords(self):
        return self.signed_index() * self.spacing

    def radius(self):
        """Distance of each grid point to the origin (in signed coordinates)."""
        x = self.coords()
        return np.hypot(x[:, None], x[None, :])

    def mode_index(self):
        """Integer mode numbers ``j`` in numpy FFT order, covering ``[-n/2, n/2)``."""
        return np.fft.fftfreq(self.n, 1.0 / self.n).astype(np.int64)

    def modes(self):
        j = self.mode_index()
        return j[:, None], j[None, :]

    def frequency_radius(self):
        """``|j| / M`` for every mode."""
        return _freq_radius(self)

    def laplacian_symbol(self):
        """Symbol of the Laplacian, ``-|j/M|^2``."""
        return -self.frequency_radius() ** 2

    def lam(self, mass):
        """Symbol of ``-Laplacian + m^2``."""
        return _lam(self, float(mass))


@lru_cache(maxsize=64)
def _freq_radius(grid):
    j1, j2 = grid.modes()
    out = np.hypot(j1, j2) / grid.M
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def _lam(grid, mass):
    out = grid.frequency_radius() ** 2 + mass**2
    out.setflags(write=False)
    return out


def make_grid(M, n):
    """Build a :class:`GridSpec`; rejects odd or tiny ``n`` and nonpositive ``M``."""
    return GridSpec(M, n)


@dataclass(frozen=True)
class WeightSpec:
    """Polynomial weight ``rho(x) = (1 + k |x|^2)^(-l/2)``."""

    exponent: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.exponent < 0 or self.scale <= 0:
            raise ValueError("weight needs exponent >= 0 and scale > 0")


def weight(spec, grid):
    if spec is None or spec.exponent == 0:
        return np.ones(grid.shape)
    return (1.0 + spec.scale * grid.radius() ** 2) ** (-spec.exponent / 2.0)


# ---------------------------------------------------------------- validation


def check_field(f, grid, name="field", batch=True):
    """Return ``f`` as a float64 array on ``grid``; raise on shape mismatch or NaN."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-2:] != grid.shape or (not batch and arr.ndim != 2):
        raise GridMismatchError(f"{name} has shape {arr.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_spectral(F, grid):
    arr = np.asarray(F)
    if arr.ndim < 2 or arr.shape[-2:] != grid.shape:
        raise GridMismatchError(f"spectral field has shape {arr.shape}, grid expects {grid.shape}")
    return arr.astype(np.complex128, copy=False)


# ---------------------------------------------------------------- transforms


def fourier_forward(f, grid):
    """Full-layout coefficients ``fhat`` (complex, same shape as ``f``)."""
    f = check_field(f, grid)
    return sfft.fft2(f) / grid.n**2


def fourier_inverse(F, grid):
    """Real field from coefficients; the imaginary residue of a Hermitian input is dropped."""
    F = _check_spectral(F, grid)
    return sfft.ifft2(F * grid.n**2).real


def rfft(f, grid):
    """Half-spectrum coefficients (last axis ``0..n/2``) with the same normalization."""
    return sfft.rfft2(f) / grid.n**2


def irfft(F, grid):
    return sfft.irfft2(F * grid.n**2, s=grid.shape)


def half(mult, grid):
    return mult[..., : grid.n // 2 + 1]


def rfft_pair_weights(grid):
    """Column multiplicities turning a half-spectrum sum into a full one."""
    return _pair_weights(grid)


@lru_cache(maxsize=64)
def _pair_weights(grid):
    w = np.full(grid.n // 2 + 1, 2.0)
    w[0] = w[-1] = 1.0
    w = w * grid.side**2
    w.setflags(write=False)
    return w


def pair_hat(u_hat, f_hat, grid):
    """``<u, f>`` from half-spectrum coefficients, summed over the last two axes."""
    prod = (np.conj(u_hat) * f_hat).real
    return np.sum(prod * rfft_pair_weights(grid), axis=(-2, -1))


def apply_multiplier(f, mult, grid):
    """Apply an even real Fourier multiplier to a (batch of) real field(s)."""
    f = check_field(f, grid)
    return sfft.irfft2(sfft.rfft2(f) * half(mult, grid), s=grid.shape)


def pairing(u, f, grid):
    """L2 pairing ``int u f`` by grid quadrature (broadcast over leading axes)."""
    return grid.cell_area * np.sum(np.asarray(u) * np.asarray(f), axis=(-2, -1))


def lp_norm(f, grid, p=2.0, rho=None):
    f = np.abs(np.asarray(f, dtype=np.float64))
    if rho is not None:
        f = f * rho
    if np.isinf(p):
        return f.max(axis=(-2, -1))
    return (grid.cell_area * np.sum(f**p, axis=(-2, -1))) ** (1.0 / p)


def in_band(f, grid, N, tol=1e-10):
    """True when all Fourier mass of ``f`` sits in ``max(|j1|, |j2|) < N``."""
    F = np.abs(fourier_forward(f, grid))
    j1, j2 = grid.modes()
    outside = (np.abs(j1) >= N) | (np.abs(j2) >= N)
    scale = max(F.max(), 1e-300)
    return bool(np.all(F[..., outside] <= tol * scale))


# ---------------------------------------------------------------- kernels


def _bump(r):
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _check_eps(eps, grid):
    if not np.isfinite(eps) or eps < 2.0 * grid.spacing * (1 - 1e-12):
        raise UnderResolvedError(
            f"epsilon={eps!r} is below two grid spacings ({2 * grid.spacing:.6g})"
        )
    if eps >= np.pi * grid.M / 2:
        raise UnderResolvedError(f"epsilon={eps!r} too large for compact support on this torus")


@lru_cache(maxsize=128)
def _sqrt_kernel(grid, eps):
    # g~_eps: bump of radius eps, normalized to unit grid integral
    g = _bump(grid.radius() / eps)
    g /= g.sum() * grid.cell_area
    g.setflags(write=False)
    return g


@lru_cache(maxsize=128)
def _sqrt_mult(grid, eps):
    m = (sfft.fft2(_sqrt_kernel(grid, eps)) * grid.cell_area).real
    m.setflags(write=False)
    return m


def mollifier_sqrt_multiplier(eps, grid):
    _check_eps(eps, grid)
    return _sqrt_mult(grid, float(eps))


def mollifier_multiplier(eps, grid):
    """Multiplier of ``g_eps = g~_eps * g~_eps``; nonnegative with value 1 at ``j = 0``."""
    _check_eps(eps, grid)
    return _mult_sq(grid, float(eps))


@lru_cache(maxsize=128)
def _mult_sq(grid, eps):
    m = _sqrt_mult(grid, eps) ** 2
    m.setflags(write=False)
    return m


def mollifier_sqrt(eps, grid):
    """Real-space square-root kernel ``g~_eps`` (even, nonnegative, unit integral)."""
    _check_eps(eps, grid)
    return _sqrt_kernel(grid, float(eps)).copy()


def mollifier(eps, grid):
    """Real-space mollifier ``g_eps`` (support radius ``2 eps``)."""
    m = mollifier_multiplier(eps, grid)
    return sfft.ifft2(m).real / grid.cell_area


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff(mode, grid, radius=None):
    """Spatial cutoff ``f_eps``.

    ``"torus_unity"`` is the constant 1. ``"plateau"`` equals 1 for
    ``|x| <= radius`` and decays smoothly to 0 at ``|x| = pi M``.
    """
    if mode == "torus_unity":
        return np.ones(grid.shape)
    if mode != "plateau":
        raise ValueError(f"unknown cutoff mode {mode!r}")
    if radius is None or not 0 < radius < np.pi * grid.M:
        raise ValueError(f"plateau radius must lie in (0, pi*M), got {radius!r}")
    t = (grid.radius() - radius) / (np.pi * grid.M - radius)
    return 1.0 - _smoothstep(t)


def fejer_multiplier(N, grid):
    """Triangular weights ``(1 - |j1|/N)_+ (1 - |j2|/N)_+``."""
    if int(N) != N or N < 1:
        raise ValueError(f"Fejer order must be a positive integer, got {N!r}")
    if N > grid.n // 2:
        raise ValueError(f"Fejer order {N} exceeds n/2 = {grid.n // 2}")
    return _fejer(grid, int(N))


@lru_cache(maxsize=64)
def _fejer(grid, N):
    j1, j2 = grid.modes()
    w = np.clip(1 - np.abs(j1) / N, 0, None) * np.clip(1 - np.abs(j2) / N, 0, None)
    w.setflags(write=False)
    return w


def fejer_apply(N, f, grid):
    return apply_multiplier(f, fejer_multiplier(N, grid), grid)


def heat_multiplier(t, mass, grid, k=0):
    """``(-lam_j)^k exp(-t lam_j)`` with ``lam_j = |j/M|^2 + m^2``."""
    if t < 0:
        raise ValueError("heat semigroup needs t >= 0")
    lam = grid.lam(mass)
    out = np.exp(-t * lam)
    if k:
        out = out * (-lam) ** int(k)
    return out


def heat_semigroup(t, mass, f, grid, k=0):
    """``d^k/dt^k P_t f`` for the massive heat semigroup."""
    if t == 0 and k == 0:
        return check_field(f, grid).copy()
    return apply_multiplier(f, heat_multiplier(t, mass, grid, k), grid)


# ---------------------------------------------------------------- raw dumps


def dump_field(path, values, grid, kind=None, **meta):
    """Write a one-line JSON header then little-endian float64 data, row-major.

    Complex (spectral) arrays are stored as interleaved real/imaginary pairs.
    Extra keyword arguments (for example ``seed``) go into the header.
    """
    values = np.asarray(values)
    if kind is None:
        kind = "spectral" if np.iscomplexobj(values) else "real"
    if values.shape[-2:] != grid.shape:
        raise GridMismatchError(f"cannot dump shape {values.shape} on grid {grid.shape}")
    header = {"M": grid.M, "n": grid.n, "kind": kind}
    if values.ndim > 2:
        header["batch_shape"] = list(values.shape[:-2])
    header.update(meta)
    if kind == "spectral":
        data = np.stack([values.real, values.imag], axis=-1)
    else:
        data = values
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return path


def load_field(path):
    """Inverse of :func:`dump_field`; returns ``(values, grid, header)``."""
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    grid = GridSpec(header["M"], header["n"])
    shape = tuple(header.get("batch_shape", [])) + grid.shape
    if header["kind"] == "spectral":
        pairs = raw.reshape(shape + (2,))
        values = pairs[..., 0] + 1j * pairs[..., 1]
    else:
        values = raw.reshape(shape).astype(np.float64)
    return values, grid, header
