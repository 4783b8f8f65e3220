"""Besov norms on the torus: Littlewood-Paley blocks and the heat-semigroup form.

The dyadic partition is fixed: ``chi`` is a radial smooth step equal to 1 on
``|y| <= 3/4`` and 0 for ``|y| >= 4/3``; ``phi(y) = chi(y/2) - chi(y)``,
supported in ``3/4 <= |y| <= 8/3``. Level ``-1`` is ``chi(D)``, level ``j >= 0``
is ``phi(2^-j D)``; frequencies are ``|j|/M``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from . import fields
from .errors import IndexRejectedError
from .fields import WeightSpec

__all__ = [
    "BesovIndex",
    "BlockDecomposition",
    "partition",
    "lp_blocks",
    "block_norms",
    "besov_norm",
    "besov_norm_heat",
    "heat_time_nodes",
    "regularity_slope",
    "scaling_levels",
]

CHI_INNER, CHI_OUTER = 0.75, 4.0 / 3.0


@dataclass(frozen=True)
class BesovIndex:
    s: float
    p: float = 2.0
    q: float = 2.0
    weight: WeightSpec | None = None

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise IndexRejectedError(f"Besov index needs p, q >= 1 (got p={self.p}, q={self.q})")


def _chi(r):
    return 1.0 - fields._smoothstep((r - CHI_INNER) / (CHI_OUTER - CHI_INNER))


@dataclass(frozen=True)
class BlockDecomposition:
    levels: tuple
    blocks: np.ndarray  # (L, ..., n, n)
    multipliers: np.ndarray  # (L, n, n)

    def reconstruct(self):
        return self.blocks.sum(axis=0)


_PART_CACHE = {}


def partition(grid):
    """``(levels, multipliers)`` covering every grid frequency."""
    hit = _PART_CACHE.get(grid)
    if hit is not None:
        return hit
    r = grid.frequency_radius()
    kmax = float(r.max())
    J = 0
    while CHI_INNER * 2 ** (J + 1) < kmax:
        J += 1
    mults = [_chi(r)] + [_chi(r / 2 ** (j + 1)) - _chi(r / 2**j) for j in range(J + 1)]
    mults = np.stack(mults)
    mults.setflags(write=False)
    out = (tuple(range(-1, J + 1)), mults)
    _PART_CACHE[grid] = out
    return out


def lp_blocks(f, grid):
    f = fields.check_field(f, grid)
    levels, mults = partition(grid)
    F = sfft.rfft2(f)
    blocks = np.stack([sfft.irfft2(F * fields.half(m, grid), s=grid.shape) for m in mults])
    return BlockDecomposition(levels, blocks, mults)


def block_norms(f, grid, p=2.0, weight=None):
    """``||Delta_j f||_{L^p}`` for every level; shape ``f.shape[:-2] + (L,)``."""
    f = fields.check_field(f, grid)
    levels, mults = partition(grid)
    rho = None if weight is None else fields.weight(weight, grid)
    F = sfft.rfft2(f)
    out = [fields.lp_norm(sfft.irfft2(F * fields.half(m, grid), s=grid.shape), grid, p, rho) for m in mults]
    return np.stack(out, axis=-1)


def _sum_q(terms, q):
    if math.isinf(q):
        return terms.max(axis=-1)
    return (terms**q).sum(axis=-1) ** (1.0 / q)


def besov_norm(f, grid, idx: BesovIndex):
    """``(sum_j 2^{sqj} ||Delta_j f||_p^q)^{1/q}`` with the fixed partition."""
    levels, _ = partition(grid)
    nb = block_norms(f, grid, idx.p, idx.weight)
    w = 2.0 ** (idx.s * np.asarray(levels, dtype=float))
    return _sum_q(w * nb, idx.q)


def heat_time_nodes(grid, mass, nodes_per_decade=16, t_min=None, t_max=None):
    """Geometric nodes from ``0.01 / lam_max``, where the top mode is still unrelaxed, to ``20 / m^2``."""
    t_min = 0.01 / float(grid.lam(mass).max()) if t_min is None else t_min
    t_max = 20.0 / mass**2 if t_max is None else t_max
    n = max(2, int(math.ceil(nodes_per_decade * math.log10(t_max / t_min))) + 1)
    return np.geomspace(t_min, t_max, n)


def besov_norm_heat(f, grid, idx: BesovIndex, k, mass, nodes_per_decade=16, t_min=None, t_max=None,
                    low_frequency="chi"):
    """Heat-semigroup norm ``||chi(D) f||_p + (int t^{(k-s/2)q} ||d_t^k P_t f||_p^q dt/t)^{1/q}``.

    The integral is a trapezoid rule in ``log t`` on a geometric grid.
    ``low_frequency="lp"`` replaces the first term with ``||f||_p``.
    """
    if not k > idx.s / 2:
        raise IndexRejectedError(f"heat characterization needs k > s/2 (k={k}, s={idx.s})")
    f = fields.check_field(f, grid)
    rho = None if idx.weight is None else fields.weight(idx.weight, grid)
    F = sfft.rfft2(f)
    _, mults = partition(grid)
    if low_frequency == "chi":
        low = fields.lp_norm(sfft.irfft2(F * fields.half(mults[0], grid), s=grid.shape), grid, idx.p, rho)
    elif low_frequency == "lp":
        low = fields.lp_norm(f, grid, idx.p, rho)
    else:
        raise ValueError(f"low_frequency must be 'chi' or 'lp', got {low_frequency!r}")
    ts = heat_time_nodes(grid, mass, nodes_per_decade, t_min, t_max)
    lam = fields.half(grid.lam(mass), grid)
    vals = []
    for t in ts:
        g = sfft.irfft2(F * ((-lam) ** k * np.exp(-t * lam)), s=grid.shape)
        vals.append(t ** (k - idx.s / 2) * fields.lp_norm(g, grid, idx.p, rho))
    vals = np.stack(vals, axis=-1)
    if math.isinf(idx.q):
        integral = vals.max(axis=-1)
    else:
        integral = trapezoid(vals**idx.q, np.log(ts), axis=-1) ** (1.0 / idx.q)
    return low + integral


# ---------------------------------------------------------------- regularity


def scaling_levels(grid, mass, epsilon):
    """Levels whose geometric centre ``sqrt(2) 2^j`` lies in ``[2 k_ir, 1/epsilon]``.

    ``k_ir = max(m, 1/M)`` is the infrared scale; above ``1/epsilon`` the
    mollifier flattens the spectrum. The top two grid levels are excluded.
    """
    levels, _ = partition(grid)
    kir = max(mass, 1.0 / grid.M)
    out = [j for j in levels[1:-2] if 2 * kir <= math.sqrt(2) * 2**j <= 1.0 / epsilon]
    return out


def regularity_slope(samples, grid, p=2.0, levels=None, n_jackknife=20, chunk=16):
    """Estimate regularity as minus the slope of ``log2 E||Delta_j f||_p`` against ``j``.

    Default levels drop ``j = -1`` and the top two levels. The standard error
    is a delete-one-group jackknife over samples.
    """
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[0] < 100:
        raise ValueError("regularity_slope needs at least 100 samples of shape (n, n)")
    all_levels, _ = partition(grid)
    if levels is None:
        levels = list(all_levels[1:-2])
    levels = [int(j) for j in levels]
    if len(levels) < 4:
        raise ValueError(f"too few dyadic levels for a slope: {levels}")
    cols = [all_levels.index(j) for j in levels]
    norms = np.concatenate([block_norms(samples[i : i + chunk], grid, p)[:, cols] for i in range(0, len(samples), chunk)])

    def fit(nb):
        y = np.log2(np.maximum(nb.mean(axis=0), 1e-300))
        return np.polyfit(levels, y, 1)[0]

    slope = fit(norms)
    groups = np.array_split(np.arange(len(norms)), n_jackknife)
    jk = np.array([fit(np.delete(norms, g, axis=0)) for g in groups])
    se = math.sqrt((n_jackknife - 1) / n_jackknife * np.sum((jk - jk.mean()) ** 2))
    return {
        "levels_used": levels,
        "block_means": norms.mean(axis=0).tolist(),
        "slope": float(slope),
        "stderr": float(se),
        "estimate": float(-slope),
    }
