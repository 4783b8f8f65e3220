"""Cylinder functions, the generator of the coupled flow and Monte-Carlo residuals.

A cylinder function is ``F(X, Y) = Ftilde(a_1, ..., a_d)`` with
``a_k = <u_k, Z_k>`` and ``Z_k`` one of ``X``, ``Y`` or ``phi = X + Y``.
With ``A = -Laplacian + m^2`` and noise ``sqrt(2) dW`` on ``X``, the
generator acts as

    LF = sum_{k,l in X} d_kl Ftilde <u_k, u_l>
         - sum_{k in X} d_k Ftilde <X, A u_k>
         - sum_{k in Y} d_k Ftilde (<Y, A u_k> + <G, u_k>)

where ``k in X`` means the argument sees ``X`` (split ``X`` or ``phi``).
The trace coefficient 1 is the one for which the GFF is invariant for the
``X`` flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np

from . import besov, fields, gff, params as pmod, wick
from .besov import BesovIndex
from .errors import DegenerateVarianceError, GridMismatchError, IndexRejectedError
from .stats import RunningStats, z_score

__all__ = [
    "Polynomial",
    "TanhOf",
    "Product",
    "CylinderFunction",
    "ResidualReport",
    "cylinder_eval",
    "cylinder_grad",
    "cylinder_grad_phi",
    "apply_generator",
    "fpk_terms",
    "fpk_residual",
    "fpk_symmetric_residual",
    "ibp_terms",
    "ibp_residual",
    "ibp_mismatch_terms",
    "dt_allowance",
    "lyapunov_V1",
    "lyapunov_V2",
    "lyapunov_V3",
    "lyapunov_calibration",
    "lyapunov_drift_check",
    "shipped_library",
]

SPLITS = ("X", "Y", "phi")


# ---------------------------------------------------------------- outer functions


class _Outer:
    """Smooth ``R^d -> R`` with exact derivatives on batches ``a`` of shape ``(S, d)``."""

    dim: int

    def value(self, a):
        raise NotImplementedError

    def grad(self, a):
        raise NotImplementedError

    def hess(self, a):
        raise NotImplementedError

    def __mul__(self, other):
        return Product(self, other)


class Polynomial(_Outer):
    """``sum_c coeff_c prod_k a_k^{c_k}`` with total degree at most 4.

    ``terms`` maps exponent tuples of length ``dim`` to coefficients.
    """

    MAX_DEGREE = 4

    def __init__(self, terms, dim=None):
        terms = {tuple(int(e) for e in k): float(v) for k, v in dict(terms).items()}
        dims = {len(k) for k in terms}
        if dim is None:
            if len(dims) != 1:
                raise ValueError("cannot infer dimension from polynomial terms")
            dim = dims.pop()
        elif dims - {dim}:
            raise ValueError("exponent tuples must have length dim")
        for k in terms:
            if min(k, default=0) < 0 or sum(k) > self.MAX_DEGREE:
                raise ValueError(f"polynomial term {k} outside the library (degree <= {self.MAX_DEGREE})")
        self.terms, self.dim = terms, int(dim)

    @classmethod
    def constant(cls, c, dim=1):
        return cls({(0,) * dim: c}, dim)

    @classmethod
    def coordinate(cls, k, dim, power=1):
        e = [0] * dim
        e[k] = power
        return cls({tuple(e): 1.0}, dim)

    def __repr__(self):
        return f"Polynomial({self.terms!r}, dim={self.dim})"

    @staticmethod
    def _mono(a, e):
        out = np.ones(a.shape[0])
        for k, p in enumerate(e):
            if p:
                out = out * a[:, k] ** p
        return out

    def value(self, a):
        return sum((c * self._mono(a, e) for e, c in self.terms.items()), np.zeros(a.shape[0]))

    def _deriv(self, a, idx):
        out = np.zeros(a.shape[0])
        for e, c in self.terms.items():
            e2, coef = list(e), c
            for k in idx:
                coef *= e2[k]
                e2[k] -= 1
                if coef == 0:
                    break
            if coef:
                out = out + coef * self._mono(a, e2)
        return out

    def grad(self, a):
        return np.stack([self._deriv(a, (k,)) for k in range(self.dim)], axis=1)

    def hess(self, a):
        d = self.dim
        H = np.empty((a.shape[0], d, d))
        for k, l in iproduct(range(d), range(d)):
            if l >= k:
                H[:, k, l] = H[:, l, k] = self._deriv(a, (k, l))
        return H


class TanhOf(_Outer):
    """``tanh(inner(a))``."""

    def __init__(self, inner):
        self.inner, self.dim = inner, inner.dim

    def __repr__(self):
        return f"TanhOf({self.inner!r})"

    def value(self, a):
        return np.tanh(self.inner.value(a))

    def grad(self, a):
        s2 = 1.0 / np.cosh(self.inner.value(a)) ** 2
        return s2[:, None] * self.inner.grad(a)

    def hess(self, a):
        v = self.inner.value(a)
        t, s2 = np.tanh(v), 1.0 / np.cosh(v) ** 2
        g = self.inner.grad(a)
        return s2[:, None, None] * self.inner.hess(a) - (2 * t * s2)[:, None, None] * g[:, :, None] * g[:, None, :]


class Product(_Outer):
    def __init__(self, f, g):
        if f.dim != g.dim:
            raise ValueError("product factors must share the argument dimension")
        self.f, self.g, self.dim = f, g, f.dim

    def __repr__(self):
        return f"Product({self.f!r}, {self.g!r})"

    def value(self, a):
        return self.f.value(a) * self.g.value(a)

    def grad(self, a):
        return self.f.value(a)[:, None] * self.g.grad(a) + self.g.value(a)[:, None] * self.f.grad(a)

    def hess(self, a):
        fv, gv = self.f.value(a), self.g.value(a)
        fg, gg = self.f.grad(a), self.g.grad(a)
        cross = fg[:, :, None] * gg[:, None, :]
        return (fv[:, None, None] * self.g.hess(a) + gv[:, None, None] * self.f.hess(a)
                + cross + np.swapaxes(cross, 1, 2))


# ---------------------------------------------------------------- cylinder functions


@dataclass
class CylinderFunction:
    outer: _Outer
    test_vectors: np.ndarray  # (d, n, n)
    split: tuple
    grid: fields.GridSpec

    def __post_init__(self):
        u = np.asarray(self.test_vectors, dtype=np.float64)
        if u.ndim == 2:
            u = u[None]
        if u.shape[1:] != self.grid.shape:
            raise GridMismatchError(f"test vectors have shape {u.shape[1:]}, grid is {self.grid.shape}")
        if u.shape[0] != self.outer.dim:
            raise ValueError(f"outer takes {self.outer.dim} arguments, got {u.shape[0]} test vectors")
        split = (self.split,) * u.shape[0] if isinstance(self.split, str) else tuple(self.split)
        if len(split) != u.shape[0] or any(s not in SPLITS for s in split):
            raise ValueError(f"split entries must be in {SPLITS}, got {self.split!r}")
        self.test_vectors, self.split = u, split
        self._gram = None
        self._Au = {}

    @property
    def dim(self):
        return self.test_vectors.shape[0]

    def sees(self, component):
        """Mask of arguments that depend on ``X`` or on ``Y``."""
        return np.array([s in (component, "phi") for s in self.split])

    def gram(self):
        if self._gram is None:
            u = self.test_vectors
            self._gram = self.grid.cell_area * np.einsum("kij,lij->kl", u, u)
        return self._gram

    def Au(self, mass):
        key = float(mass)
        if key not in self._Au:
            self._Au[key] = fields.apply_multiplier(self.test_vectors, self.grid.lam(mass), self.grid)
        return self._Au[key]

    def arguments(self, X, Y=None):
        """``a_k = <u_k, Z_k>`` for a batch; shape ``(S, d)``."""
        X = _batch(X, self.grid, "X")
        Y = np.zeros_like(X) if Y is None else _batch(Y, self.grid, "Y")
        if X.shape != Y.shape:
            raise GridMismatchError("X and Y batches differ in shape")
        a = np.empty((X.shape[0], self.dim))
        h2 = self.grid.cell_area
        for k, s in enumerate(self.split):
            Z = X if s == "X" else Y if s == "Y" else X + Y
            a[:, k] = h2 * np.einsum("sij,ij->s", Z, self.test_vectors[k])
        return a


def _batch(f, grid, name):
    f = fields.check_field(f, grid, name)
    return f[None] if f.ndim == 2 else f.reshape((-1,) + grid.shape)


def _squeeze(out, X):
    return out[0] if np.ndim(X) == 2 else out


def cylinder_eval(F, X, Y=None):
    return _squeeze(F.outer.value(F.arguments(X, Y)), X)


def cylinder_grad(F, X, Y=None, wrt="phi"):
    """Gradient field in ``span{u_k}`` with respect to ``X``, ``Y`` or ``phi``.

    For ``wrt="phi"`` every argument must be of split ``phi``.
    """
    if wrt == "phi":
        if any(s != "phi" for s in F.split):
            raise ValueError("gradient in phi needs a phi-cylinder function")
        mask = np.ones(F.dim, dtype=bool)
    elif wrt in ("X", "Y"):
        mask = F.sees(wrt)
    else:
        raise ValueError(f"wrt must be one of {SPLITS}")
    g = F.outer.grad(F.arguments(X, Y)) * mask
    return _squeeze(np.einsum("sk,kij->sij", g, F.test_vectors), X)


def cylinder_grad_phi(F, X, Y=None):
    return cylinder_grad(F, X, Y, "phi")


def _G_pairings(X, Y, F, params):
    """``<G_N(X, Y), u_k>`` for every argument: ``alpha <W, Qg u_k>``."""
    if params.alpha == 0:
        return np.zeros((X.shape[0], F.dim))
    w = wick.wick_exp_fejer(X + Y, params).values
    qgu = fields.apply_multiplier(F.test_vectors, gff.smoothing_multiplier(params), params.grid)
    return params.alpha * params.grid.cell_area * np.einsum("sij,kij->sk", w, qgu)


def apply_generator(Phi, X, Y, params):
    """``L Phi`` evaluated per sample (see the module docstring)."""
    grid = params.grid
    if Phi.grid != grid:
        raise GridMismatchError("cylinder function and params live on different grids")
    Xb, Yb = _batch(X, grid, "X"), _batch(Y, grid, "Y")
    a = Phi.arguments(Xb, Yb)
    g, H = Phi.outer.grad(a), Phi.outer.hess(a)
    mx, my = Phi.sees("X"), Phi.sees("Y")
    gram = Phi.gram() * np.outer(mx, mx)
    trace = np.einsum("skl,kl->s", H, gram)
    Au = Phi.Au(params.mass)
    h2 = grid.cell_area
    xa = h2 * np.einsum("sij,kij->sk", Xb, Au)
    ya = h2 * np.einsum("sij,kij->sk", Yb, Au)
    drift = mx * xa
    if my.any():
        drift = drift + my * (ya + _G_pairings(Xb, Yb, Phi, params))
    out = trace - np.sum(g * drift, axis=1)
    return _squeeze(out, X)


# ---------------------------------------------------------------- reports


@dataclass
class ResidualReport:
    """Paired Monte-Carlo comparison of two sides of an identity.

    ``stderr`` comes from the per-sample difference ``lhs_i - rhs_i``.
    ``allowance`` is a declared deterministic bias budget (time step,
    truncation) added to the statistical tolerance in :meth:`passed`.
    """

    statistic: str
    lhs: RunningStats
    rhs: RunningStats
    diff: RunningStats
    allowance: float = 0.0
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, statistic, lhs, rhs, allowance=0.0, params=None, **extra):
        lhs = np.asarray(lhs, dtype=float).ravel()
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape).ravel()
        return cls(statistic, RunningStats.from_samples(lhs), RunningStats.from_samples(rhs),
                   RunningStats.from_samples(lhs - rhs), float(allowance), dict(params or {}), extra)

    def merge(self, other):
        if other.statistic != self.statistic:
            raise ValueError("cannot merge reports of different statistics")
        return ResidualReport(
            self.statistic,
            RunningStats(self.lhs.count, self.lhs.mean, self.lhs.m2).merge(other.lhs),
            RunningStats(self.rhs.count, self.rhs.mean, self.rhs.m2).merge(other.rhs),
            RunningStats(self.diff.count, self.diff.mean, self.diff.m2).merge(other.diff),
            max(self.allowance, other.allowance), self.params, {**self.extra, **other.extra},
        )

    @property
    def n_samples(self):
        return int(self.diff.count)

    @property
    def lhs_estimate(self):
        return float(self.lhs.mean)

    @property
    def rhs_estimate(self):
        return float(self.rhs.mean)

    @property
    def residual(self):
        return float(self.diff.mean)

    @property
    def stderr(self):
        return float(self.diff.stderr)

    @property
    def z_score(self):
        return float(z_score(self.residual, 0.0, self.stderr))

    @property
    def z_with_allowance(self):
        excess = max(0.0, abs(self.residual) - self.allowance)
        return float(z_score(excess, 0.0, self.stderr)) if excess else 0.0

    def passed(self, z_max=3.0):
        if "bound" in self.extra:  # one-sided inequality report
            return bool(self.lhs_estimate <= self.extra["bound"])
        return self.z_with_allowance < z_max

    def to_dict(self, z_max=None):
        out = {
            "statistic": self.statistic,
            "lhs_estimate": self.lhs_estimate,
            "rhs_estimate": self.rhs_estimate,
            "residual": self.residual,
            "stderr": self.stderr,
            "z_score": self.z_score,
            "allowance": self.allowance,
            "z_with_allowance": self.z_with_allowance,
            "n_samples": self.n_samples,
            "params": self.params,
            **self.extra,
        }
        if z_max is not None:
            out["z_max"] = z_max
            out["passed"] = self.passed(z_max)
        return out


def _check_variance(report, exact_zero_ok=True):
    if report.n_samples < 2:
        raise DegenerateVarianceError(f"{report.statistic}: need at least 2 samples")
    if report.stderr == 0 and not (exact_zero_ok and report.residual == 0):
        raise DegenerateVarianceError(f"{report.statistic}: zero variance with nonzero residual")
    return report


def _ens_fields(ens):
    if ens.X.shape[0] == 0:
        raise ValueError("ensemble holds no fields (observer mode); use the *_terms functions")
    return ens.X, ens.Y


def _chunks(n, size):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


# ---------------------------------------------------------------- FPK


def fpk_terms(X, Y, Phi, params):
    return apply_generator(Phi, X, Y, params)


def fpk_residual(ens, Phi, params, allowance=0.0, chunk=256):
    """Mean of ``L Phi`` over the ensemble; zero at stationarity.

    ``allowance="dt"`` declares the budget of :func:`dt_allowance`.
    """
    X, Y = _ens_fields(ens)
    vals = np.concatenate([np.atleast_1d(fpk_terms(X[s], Y[s], Phi, params)) for s in _chunks(len(X), chunk)])
    rep = ResidualReport.from_pairs("fpk", vals, 0.0, _allowance(allowance, vals, ens), params.to_dict())
    return _check_variance(rep)


def _reversible(F):
    return all(s == "phi" for s in F.split) or all(s == "X" for s in F.split)


def fpk_symmetric_residual(ens, F, G, params, allowance=0.0, chunk=256):
    """Mean of ``(LF) G - F (LG)``; zero when the marginal flow is reversible.

    Accepted for phi-cylinder pairs (the phi flow is a Langevin gradient flow)
    and for X-only pairs (the X flow is the reversible OU process).
    """
    if not (_reversible(F) and _reversible(G) and set(F.split) == set(G.split)):
        raise ValueError("symmetric form needs both functions on phi only or on X only")
    X, Y = _ens_fields(ens)
    lhs, rhs = [], []
    for s in _chunks(len(X), chunk):
        lhs.append(np.atleast_1d(apply_generator(F, X[s], Y[s], params) * cylinder_eval(G, X[s], Y[s])))
        rhs.append(np.atleast_1d(cylinder_eval(F, X[s], Y[s]) * apply_generator(G, X[s], Y[s], params)))
    lhs, rhs = np.concatenate(lhs), np.concatenate(rhs)
    rep = ResidualReport.from_pairs("fpk_symmetric", lhs, rhs, _allowance(allowance, lhs - rhs, ens),
                                    params.to_dict())
    return _check_variance(rep)


# ---------------------------------------------------------------- IbP


DRIFTS = ("generator_matched", "paper_B_eps")


def _drift_pairing(phi, h, params, drift, cutoff_mode="torus_unity", radius=None):
    """``<drift(phi), h>`` per sample."""
    grid = params.grid
    Ah = fields.apply_multiplier(h, grid.lam(params.mass), grid)
    lin = fields.pairing(Ah, phi, grid)
    if params.alpha == 0:
        return lin
    if drift == "generator_matched":
        w = wick.wick_exp_fejer(phi, params).values
        qgh = fields.apply_multiplier(h, gff.smoothing_multiplier(params), grid)
        return lin + params.alpha * fields.pairing(qgh, w, grid)
    w = wick.wick_exp(phi, params).values
    return lin + params.alpha * fields.pairing(fields.cutoff(cutoff_mode, grid, radius) * h, w, grid)


def _ibp_setup(X, Y, F, h, params, drift):
    grid = params.grid
    if any(s != "phi" for s in F.split):
        raise ValueError("integration by parts needs a phi-cylinder function")
    if drift not in DRIFTS:
        raise ValueError(f"drift must be one of {DRIFTS}, got {drift!r}")
    h = fields.check_field(h, grid, "h", batch=False)
    if not fields.in_band(h, grid, params.fejer_order, tol=1e-9):
        raise ValueError(f"h must lie in the Fejer band |j| < {params.fejer_order}")
    phi = _batch(X, grid, "X") + _batch(Y, grid, "Y")
    return h, phi, F.arguments(phi)


def ibp_terms(X, Y, F, h, params, drift="generator_matched", cutoff_mode="torus_unity", radius=None):
    """Per-sample ``(<grad F, h>, F <drift(phi), h>)``."""
    h, phi, a = _ibp_setup(X, Y, F, h, params, drift)
    lhs = F.outer.grad(a) @ fields.pairing(F.test_vectors, h, params.grid)
    rhs = F.outer.value(a) * _drift_pairing(phi, h, params, drift, cutoff_mode, radius)
    return lhs, rhs


def ibp_mismatch_terms(X, Y, F, h, params, cutoff_mode="torus_unity", radius=None):
    """Per-sample ``(F <matched drift, h>, F <B_eps, h>)``.

    The matched identity has mean zero at stationarity, so the mean of the
    difference estimates the same quantity as the ``B_eps`` drift residual with
    the shared fluctuation of ``<grad F, h>`` removed.
    """
    h, phi, a = _ibp_setup(X, Y, F, h, params, "paper_B_eps")
    fv = F.outer.value(a)
    return (fv * _drift_pairing(phi, h, params, "generator_matched"),
            fv * _drift_pairing(phi, h, params, "paper_B_eps", cutoff_mode, radius))


def ibp_residual(ens, F, h, params, drift="generator_matched", allowance=0.0, chunk=256, control_variate=False,
                 **kw):
    """Paired ``<grad F, h> - F <drift, h>`` over the ensemble.

    With ``control_variate=True`` (``B_eps`` drift only) the matched identity is
    subtracted sample by sample; see :func:`ibp_mismatch_terms`.
    """
    if control_variate and drift != "paper_B_eps":
        raise ValueError("the control variate applies to the paper_B_eps drift")
    X, Y = _ens_fields(ens)
    L, R = [], []
    for s in _chunks(len(X), chunk):
        if control_variate:
            l, r = ibp_mismatch_terms(X[s], Y[s], F, h, params, **kw)
        else:
            l, r = ibp_terms(X[s], Y[s], F, h, params, drift, **kw)
        L.append(l)
        R.append(r)
    name = f"ibp[{drift}{'+cv' if control_variate else ''}]"
    L, R = np.concatenate(L), np.concatenate(R)
    rep = ResidualReport.from_pairs(name, L, R, _allowance(allowance, L - R, ens), params.to_dict())
    return _check_variance(rep)


def dt_allowance(terms, dt):
    """Declared ``O(dt)`` bias budget: ``dt`` times the RMS of the paired differences."""
    t = np.asarray(terms, dtype=float)
    return float(dt * np.sqrt(np.mean(t**2)))


def _allowance(allowance, terms, ens):
    if allowance == "dt":
        return dt_allowance(terms, ens.dt)
    return float(allowance)


# ---------------------------------------------------------------- library


def shipped_library(grid, modes=((1, 0), (0, 1), (1, 1)), split="phi"):
    """The cylinder functions used by the residual batteries.

    Test vectors are unit ``cos``/``sin`` modes, so every vector is band-limited
    for any Fejer order above the largest mode.
    """
    x = grid.coords()
    xx, yy = np.meshgrid(x, x, indexing="ij")
    M = grid.M
    (a1, b1), (a2, b2), (a3, b3) = modes
    u1 = np.cos((a1 * xx + b1 * yy) / M)
    u2 = np.sin((a2 * xx + b2 * yy) / M)
    u3 = np.cos((a3 * xx + b3 * yy) / M) + 0.5 * np.sin((a1 * xx + b1 * yy) / M)
    one = np.ones(grid.shape)
    area = grid.side**2
    # normalise so arguments are O(1)
    U = np.stack([u1, u2, u3]) / math.sqrt(area)
    lib = {
        "linear": CylinderFunction(Polynomial.coordinate(0, 1), U[:1], split, grid),
        "square": CylinderFunction(Polynomial.coordinate(0, 1, 2), U[:1], split, grid),
        "quartic_mix": CylinderFunction(
            Polynomial({(4, 0): 0.25, (1, 1): 1.0, (0, 2): -0.5, (0, 0): 2.0}), U[:2], split, grid),
        "tanh_sum": CylinderFunction(TanhOf(Polynomial({(1, 0): 1.0, (0, 1): 0.5})), U[:2], split, grid),
        "product": CylinderFunction(
            Product(TanhOf(Polynomial({(1, 0, 0): 1.0})), Polynomial({(0, 1, 0): 1.0, (0, 0, 2): 1.0})),
            U, split, grid),
        "zero_mode": CylinderFunction(Polynomial.coordinate(0, 1), one[None] / math.sqrt(area), split, grid),
    }
    return lib


# ---------------------------------------------------------------- Lyapunov


def _norm_p(f, grid, s, p, k, mass):
    return besov.besov_norm_heat(f, grid, BesovIndex(s, p, p), k, mass) ** p


def lyapunov_V1(f, s, p, k, mass, grid):
    """``||f||^p`` in the heat-semigroup ``B^s_{p,p}`` norm."""
    if not (k - s / 2) * p > 1:
        raise IndexRejectedError(f"need (k - s/2) p > 1, got k={k}, s={s}, p={p}",
                                      {"heat_index": False})
    f = fields.check_field(f, grid)
    if not np.any(f):
        return np.zeros(f.shape[:-2]) if f.ndim > 2 else 0.0
    return _norm_p(f, grid, s, p, k, mass)


def lyapunov_V2(X, Y, idx, mass, grid, sigma=0.5, C=1.0):
    """``(1-sigma) ||X||^p_{B^{-s+2/p}} + C sigma ||Y||^p_{B^{s+2/p}}``."""
    s, p, k = idx["s"], idx["p"], idx["k"]
    vx = lyapunov_V1(X, -s + 2 / p, p, k, mass, grid)
    vy = lyapunov_V1(Y, s + 2 / p, p, k, mass, grid)
    return (1 - sigma) * vx + C * sigma * vy


def lyapunov_V3(X, params, idx, sigma=0.5, C=1.0):
    """``sigma^-1 (C + ||G_N(X, 0)||^e)`` in ``B^{-gamma(r-1)-delta}_{r,r}``, ``e = (pr-r+1)/(pr^2)``."""
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    if params.alpha == 0:
        nrm = np.zeros(X.shape[:-2]) if X.ndim > 2 else 0.0
    else:
        G = wick.nonlinearity_G_fejer(X, np.zeros_like(X), params)
        r = idx["r"]
        nrm = besov.besov_norm(G, grid, BesovIndex(idx["exp_index"], r, r)) ** idx["v3_power"]
    return (C + nrm) / sigma


def _v_terms(X, Y, params, idx, sigma, C, chunk=64):
    v2, v3 = [], []
    grid = params.grid
    for s in _chunks(len(X), chunk):
        v2.append(np.atleast_1d(lyapunov_V2(X[s], Y[s], idx, params.mass, grid, sigma, C)))
        v3.append(np.atleast_1d(lyapunov_V3(X[s], params, idx, sigma, C)))
    v2, v3 = np.concatenate(v2), np.concatenate(v3)
    if not (np.all(np.isfinite(v2)) and np.all(np.isfinite(v3))):
        raise FloatingPointError("Lyapunov functional not finite on some sample")
    return v2, v3


def _rel(st):
    return float(st.stderr / abs(st.mean)) if st.mean else math.inf


def lyapunov_calibration(params, idx, n_samples=500, seed=0, sigma=0.5, C=1.0):
    """``K0 = mean V2 / mean V3`` in the free sector (exact GFF samples, ``Y = 0``)."""
    free = params.with_(alpha=0.0)
    X = gff.sample_gff(free, gff.rng_for(seed, 2**32 - 5), size=n_samples)
    v2, v3 = _v_terms(X, np.zeros_like(X), free, idx, sigma, C)
    s2, s3 = RunningStats.from_samples(v2), RunningStats.from_samples(v3)
    return {"K0": float(s2.mean / s3.mean), "rel_stderr": math.hypot(_rel(s2), _rel(s3) if s3.m2 else 0.0),
            "n_samples": n_samples, "sigma": sigma, "C": C}


def lyapunov_drift_check(ens, params, idx=None, calibration=None, sigma=0.5, C=1.0, calibration_samples=500,
                         seed=0):
    """Mean ``V2`` against calibrated mean ``V3`` on a stationary ensemble.

    Indices are validated first; a rejection raises
    :class:`expphi2.errors.IndexRejectedError` and is not a drift failure.
    """
    g = params.gamma
    if idx is None:
        idx = pmod.lyapunov_indices(g)
    else:
        pmod.validate_lyapunov_indices(g, idx["s"], idx["p"], idx["r"], idx["delta"])
    cal = calibration or lyapunov_calibration(params, idx, calibration_samples, seed, sigma, C)
    X, Y = _ens_fields(ens)
    v2, v3 = _v_terms(X, Y, params, idx, sigma, C)
    rep = ResidualReport.from_pairs("lyapunov_drift", v2, cal["K0"] * v3, 0.0, params.to_dict())
    s2, s3 = RunningStats.from_samples(v2), RunningStats.from_samples(v3)
    rel = math.sqrt(_rel(s2) ** 2 + (_rel(s3) if s3.m2 else 0.0) ** 2 + cal["rel_stderr"] ** 2)
    bound = rep.rhs_estimate * (1 + 3 * rel)
    rep.extra.update({
        "indices": idx, "calibration": cal, "mean_V2": float(s2.mean), "mean_V3": float(s3.mean),
        "combined_rel_stderr": rel, "bound": bound, "inequality_holds": bool(rep.lhs_estimate <= bound),
        "v3_exponent": idx["v3_power"],
    })
    return rep
