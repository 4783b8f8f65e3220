"""Coupled (X, Y) flow, stationary sampling and linearized flows.

X follows the exact OU update of :mod:`expphi2.gff`. Y solves

    dY/dt = -(-Laplacian + m^2) Y - G_N(X, Y)

by operator splitting. ``lie`` takes ``Y <- P_dt (Y - dt G)``; ``strang``
takes ``P_{dt/2}``, the nonlinear step at the midpoint state, then ``P_{dt/2}``
(X is advanced in two exact half steps). Because ``G_N`` lives in the Fejer
band and its kernel is nonnegative, ``Y <= 0`` is preserved exactly as a
trigonometric polynomial: the heat flow on band-limited data is the true heat
flow, and the nonlinear step subtracts a nonnegative function.

Internally fields are kept as half spectra (``rfft2 / n**2``) with a leading
batch axis, one lane per chain or path.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import fields, gff
from .errors import DynamicsInstabilityError, TrajectoryMismatchError, WickOverflowError
from .gff import ModelParams

__all__ = [
    "SCHEMES",
    "Stepper",
    "NoiseSource",
    "ChainState",
    "Ensemble",
    "Trajectory",
    "step_Y",
    "simulate_stationary",
    "run_trajectory",
    "linearized_flow_Y0",
    "linearized_flow_X0",
    "estimate_decorrelation_spacing",
    "gff_ensemble",
    "gradcheck",
]

SCHEMES = ("lie", "strang")
_EXPLODE = 1e12


class NoiseSource:
    """Half-spectrum white noise, one independent stream per batch lane.

    Each lane draws ``(block, n, n)`` normals at a time; the stream consumed
    by a lane is the same whatever the block size or the other lanes.
    """

    def __init__(self, rngs, grid, max_buffer_bytes=64 * 2**20):
        self.rngs = list(rngs)
        self.grid = grid
        per_step = len(self.rngs) * grid.n**2 * 8
        self.block = int(max(1, min(64, max_buffer_bytes // max(per_step, 1))))
        self._buf = None
        self._pos = self.block

    def __len__(self):
        return len(self.rngs)

    def __call__(self):
        if self._pos == self.block:
            shape = (self.block,) + self.grid.shape
            self._buf = np.stack([r.standard_normal(shape) for r in self.rngs], axis=1)
            self._pos = 0
        w = self._buf[self._pos]
        self._pos += 1
        return sfft.rfft2(w) / self.grid.n


class Stepper:
    """Precomputed multipliers for one ``(params, dt, scheme)`` triple."""

    def __init__(self, params: ModelParams, dt, scheme="lie"):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.params, self.dt, self.scheme = params, float(dt), scheme
        grid = params.grid
        self.grid = grid
        lam = fields.half(grid.lam(params.mass), grid)
        sub = self.dt if scheme == "lie" else 0.5 * self.dt
        self.sub = sub
        self.decay = np.exp(-sub * lam)
        self.amp = fields.half(gff.mode_std(params.mass, grid), grid) * np.sqrt(-np.expm1(-2 * sub * lam))
        self.qg = fields.half(gff.smoothing_multiplier(params), grid)
        self.alpha = params.alpha
        self.c = gff.renorm_constant_fejer(params.fejer_order, params.epsilon, params)

    # -- nonlinearity -------------------------------------------------
    def weight(self, phi_hat):
        """``exp(alpha Q g phi - alpha^2 c / 2)`` in real space."""
        u = fields.irfft(self.qg * phi_hat, self.grid)
        expo = self.alpha * u - 0.5 * self.alpha**2 * self.c
        top = float(expo.max())
        if top > 700 or not math.isfinite(top):
            raise WickOverflowError(top, self.alpha, self.c)
        return np.exp(expo)

    def G_hat(self, phi_hat):
        if self.alpha == 0:
            return np.zeros_like(phi_hat), None
        w = self.weight(phi_hat)
        return self.alpha * self.qg * fields.rfft(w, self.grid), w

    def dG_hat(self, w, psi_hat):
        """Derivative of ``G_hat`` at weight field ``w`` applied to ``psi``."""
        if self.alpha == 0:
            return np.zeros_like(psi_hat)
        inner = fields.irfft(self.qg * psi_hat, self.grid)
        return self.alpha**2 * self.qg * fields.rfft(w * inner, self.grid)

    # -- steps --------------------------------------------------------
    def y_step(self, Xh, Yh):
        """One Y step with X frozen at ``Xh``; returns ``(Y_new, eval_Y, weight)``."""
        if self.scheme == "lie":
            Gh, w = self.G_hat(Xh + Yh)
            return self.decay * (Yh - self.dt * Gh), Yh, w
        Y1 = self.decay * Yh
        Gh, w = self.G_hat(Xh + Y1)
        return self.decay * (Y1 - self.dt * Gh), Y1, w

    def x_sub(self, Xh, zeta):
        return self.decay * Xh + self.amp * zeta

    def coupled_step(self, Xh, Yh, noise):
        """Advance ``(X, Y)`` by ``dt``; returns ``(X, Y, X_eval, Y_eval, weight)``."""
        if self.scheme == "lie":
            Ynew, Ye, w = self.y_step(Xh, Yh)
            return self.x_sub(Xh, noise()), Ynew, Xh, Ye, w
        Xmid = self.x_sub(Xh, noise())
        Ynew, Ye, w = self.y_step(Xmid, Yh)
        return self.x_sub(Xmid, noise()), Ynew, Xmid, Ye, w


def _check_explosion(Yh, step, dt):
    nrm = float(np.max(np.abs(Yh))) if Yh.size else 0.0
    if not math.isfinite(nrm) or nrm > _EXPLODE:
        raise DynamicsInstabilityError(step, dt, nrm)


def step_Y(X, Y, dt, params, scheme="lie"):
    """One splitting step of the Y equation with X held fixed."""
    grid = params.grid
    X = fields.check_field(X, grid, "X")
    Y = fields.check_field(Y, grid, "Y")
    if float(np.max(Y)) > 1e-9:
        raise ValueError("step_Y needs Y <= 0")
    st = Stepper(params, dt, scheme)
    Ynew, _, _ = st.y_step(fields.rfft(X, grid), fields.rfft(Y, grid))
    _check_explosion(Ynew, 1, dt)
    return fields.irfft(Ynew, grid)


@dataclass
class ChainState:
    """State of a single chain: time, OU part, Y (real), params, dt, scheme."""

    t: float
    X: gff.OUState
    Y: np.ndarray
    params: ModelParams
    dt: float
    scheme: str = "lie"

    def step(self):
        grid = self.params.grid
        st = Stepper(self.params, self.dt, self.scheme)
        rng = self.X.rng
        noise = NoiseSource([rng], grid, max_buffer_bytes=0)
        Xh = fields.half(self.X.field, grid)[None]
        Yh = fields.rfft(self.Y, grid)[None]
        Xn, Yn, _, _, _ = st.coupled_step(Xh, Yh, noise)
        _check_explosion(Yn, 1, self.dt)
        self.X = gff.OUState(self.t + self.dt, fields.fourier_forward(fields.irfft(Xn[0], grid), grid), rng)
        self.Y = fields.irfft(Yn[0], grid)
        self.t += self.dt
        return self


# ---------------------------------------------------------------- ensembles


@dataclass
class Ensemble:
    """Stationary samples of ``(X, Y)`` with provenance."""

    X: np.ndarray
    Y: np.ndarray
    params: ModelParams
    burn_in: float
    spacing: float
    dt: float
    scheme: str
    seed: int
    chain: np.ndarray
    max_Y: float = -np.inf
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    @property
    def phi(self):
        return self.X + self.Y

    def subset(self, idx):
        idx = np.asarray(idx)
        return Ensemble(self.X[idx], self.Y[idx], self.params, self.burn_in, self.spacing, self.dt,
                        self.scheme, self.seed, self.chain[idx], self.max_Y, dict(self.meta))

    def manifest(self):
        return {
            "params": self.params.to_dict(),
            "burn_in": self.burn_in,
            "spacing": self.spacing,
            "dt": self.dt,
            "scheme": self.scheme,
            "seed": self.seed,
            "chains": sorted({int(c) for c in self.chain}),
            "n_samples": len(self),
            "max_Y": self.max_Y,
            "meta": self.meta,
        }

    def save(self, directory):
        """Directory with ``manifest.json`` and one raw dump per sample and component."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=False)
        grid = self.params.grid
        files = []
        for i in range(len(self)):
            fx = f"sample_{i:06d}_X.bin"
            fy = f"sample_{i:06d}_Y.bin"
            fields.dump_field(d / fx, self.X[i], grid, seed=self.seed, chain=int(self.chain[i]))
            fields.dump_field(d / fy, self.Y[i], grid, seed=self.seed, chain=int(self.chain[i]))
            files.append([fx, fy])
        man = self.manifest()
        man["files"] = files
        man["sample_chain"] = [int(c) for c in self.chain]
        (d / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        params = ModelParams.from_dict(man["params"])
        X = np.stack([fields.load_field(d / fx)[0] for fx, _ in man["files"]])
        Y = np.stack([fields.load_field(d / fy)[0] for _, fy in man["files"]])
        return cls(X, Y, params, man["burn_in"], man["spacing"], man["dt"], man["scheme"], man["seed"],
                   np.asarray(man["sample_chain"]), man["max_Y"], man.get("meta", {}))


def _run_chain_group(params, chain_ids, seed, dt, scheme, burn_steps, spacing_steps, per_chain,
                     track_max_Y, observer):
    grid = params.grid
    st = Stepper(params, dt, scheme)
    rngs = [gff.rng_for(seed, c) for c in chain_ids]
    sig = fields.half(gff.mode_std(params.mass, grid), grid)
    # initial X: exact GFF draw from each chain's own stream
    Xh = np.stack([sig * gff.white_noise_hat(r, grid) for r in rngs])
    Yh = np.zeros_like(Xh)
    noise = NoiseSource(rngs, grid)
    max_y = -np.inf
    Xs, Ys, obs = [], [], []
    total = burn_steps + spacing_steps * per_chain
    step = 0
    for k in range(per_chain):
        target = burn_steps + spacing_steps * (k + 1)
        while step < target:
            Xh, Yh, _, _, _ = st.coupled_step(Xh, Yh, noise)
            step += 1
            _check_explosion(Yh, step, dt)
            if track_max_Y and params.alpha != 0:
                max_y = max(max_y, float(fields.irfft(Yh, grid).max()))
        X = fields.irfft(Xh, grid)
        Y = fields.irfft(Yh, grid)
        if not track_max_Y or params.alpha == 0:
            max_y = max(max_y, float(Y.max()))
        if observer is None:
            Xs.append(X)
            Ys.append(Y)
        else:
            obs.append(observer(X, Y))
    assert step == total
    return Xs, Ys, obs, max_y


def _lane(obs, b):
    """Chain ``b`` of an observer return value (array, tuple or dict of arrays)."""
    if isinstance(obs, dict):
        return {k: _lane(v, b) for k, v in obs.items()}
    if isinstance(obs, tuple):
        return tuple(_lane(v, b) for v in obs)
    return obs[b]


def simulate_stationary(params, burn_in=None, n_samples=1000, spacing=None, seed=0, *, dt=0.01,
                        scheme="lie", n_chains=None, workers=1, track_max_Y=True, observer=None):
    """Run chains from ``(GFF draw, 0)``, discard ``burn_in``, sample every ``spacing``.

    ``n_samples`` is split evenly over ``n_chains`` (rounded up, then trimmed).
    With ``observer`` set, each sample batch ``(X, Y)`` of shape
    ``(chains, n, n)`` is passed to it and its return values (indexable by
    chain, or dicts/tuples of such) are collected per sample in
    ``Ensemble.meta["observed"]`` instead of storing fields.
    """
    m2 = params.mass**2
    if burn_in is None:
        burn_in = 10.0 / m2
    if burn_in < 1.0 / m2:
        warnings.warn("burn_in shorter than 1/m^2; samples may not be stationary", stacklevel=2)
    if spacing is None:
        spacing = estimate_decorrelation_spacing(params, dt=dt, scheme=scheme, seed=seed)
    if n_chains is None:
        n_chains = min(n_samples, 32)
    per_chain = -(-n_samples // n_chains)
    burn_steps = int(round(burn_in / dt))
    spacing_steps = max(1, int(round(spacing / dt)))
    chains = np.arange(n_chains)
    groups = [g for g in np.array_split(chains, max(1, int(workers))) if len(g)]
    args = (seed, dt, scheme, burn_steps, spacing_steps, per_chain, track_max_Y, observer)
    if len(groups) == 1:
        results = [_run_chain_group(params, groups[0], *args)]
    else:
        with ProcessPoolExecutor(max_workers=len(groups)) as ex:
            futs = [ex.submit(_run_chain_group, params, g, *args) for g in groups]
            results = [f.result() for f in futs]
    max_y = max(r[3] for r in results)
    meta = {"n_chains": int(n_chains), "per_chain": int(per_chain)}
    grid = params.grid
    if observer is not None:
        # observed[k][b] for chain b of the group at sample k
        flat = []
        for (g, res) in zip(groups, results):
            for b in range(len(g)):
                flat.extend((int(g[b]), k, _lane(res[2][k], b)) for k in range(per_chain))
        flat.sort(key=lambda t: (t[0], t[1]))
        meta["observed"] = [t[2] for t in flat][:n_samples]
        X = np.empty((0,) + grid.shape)
        return Ensemble(X, X.copy(), params, burn_in, spacing * 1.0, dt, scheme, int(seed),
                        np.asarray([t[0] for t in flat][:n_samples]), max_y, meta)
    Xs, Ys, cid = [], [], []
    for g, res in zip(groups, results):
        X = np.stack(res[0], axis=1)  # (chains, samples, n, n)
        Y = np.stack(res[1], axis=1)
        for b, c in enumerate(g):
            Xs.append(X[b])
            Ys.append(Y[b])
            cid.extend([int(c)] * per_chain)
    X = np.concatenate(Xs)[:n_samples]
    Y = np.concatenate(Ys)[:n_samples]
    spacing_eff = spacing_steps * dt
    return Ensemble(X, Y, params, burn_in, spacing_eff, dt, scheme, int(seed),
                    np.asarray(cid[:n_samples]), max_y, meta)


def _iact(x):
    """Integrated autocorrelation time with Sokal's self-consistent window (c = 5)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for w in range(1, n):
        tau = 1.0 + 2.0 * acf[1 : w + 1].sum()
        if w >= 5 * tau:
            break
    return max(tau, 1.0)


def estimate_decorrelation_spacing(params, dt=0.01, scheme="lie", seed=0, pilot_time=None, u0=None, floor=None):
    """``2 * tau_int`` of ``<phi, u0>`` from a pilot chain (``u0`` defaults to the constant field).

    The result is floored at ``1/m^2``, the slowest linear relaxation time.
    """
    m2 = params.mass**2
    if pilot_time is None:
        pilot_time = 200.0 / m2
    grid = params.grid
    u0 = np.ones(grid.shape) if u0 is None else u0
    uh = fields.rfft(u0, grid)
    st = Stepper(params, dt, scheme)
    rng = gff.rng_for(seed, 2**31 - 1)
    Xh = (fields.half(gff.mode_std(params.mass, grid), grid) * gff.white_noise_hat(rng, grid))[None]
    Yh = np.zeros_like(Xh)
    noise = NoiseSource([rng], grid)
    for _ in range(int(round(10.0 / m2 / dt))):
        Xh, Yh, _, _, _ = st.coupled_step(Xh, Yh, noise)
    series = []
    for _ in range(int(round(pilot_time / dt))):
        Xh, Yh, _, _, _ = st.coupled_step(Xh, Yh, noise)
        series.append(float(fields.pair_hat(uh, Xh[0] + Yh[0], grid)))
    tau = _iact(series) * dt
    return max(2.0 * tau, 1.0 / m2 if floor is None else floor)


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    """Recorded path: states at step times and the states where G was evaluated."""

    params: ModelParams
    dt: float
    scheme: str
    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    X_eval: np.ndarray
    Y_eval: np.ndarray

    @property
    def n_steps(self):
        return len(self.times) - 1


def run_trajectory(params, X0, Y0, t_end, dt, seed, scheme="lie", noise=True, key=()):
    """Integrate from ``(X0, Y0)`` to ``t_end`` recording every step.

    The noise stream is ``rng_for(seed, *key)``, so two calls with the same
    seed and key see identical noise (common random numbers).
    """
    grid = params.grid
    X0 = fields.check_field(X0, grid, "X0")
    Y0 = fields.check_field(Y0, grid, "Y0")
    steps = int(round(t_end / dt))
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive multiple of dt")
    st = Stepper(params, dt, scheme)
    if noise:
        src = NoiseSource([gff.rng_for(seed, *key)], grid)
    else:
        zero = np.zeros((1, grid.n, grid.n // 2 + 1), dtype=complex)
        src = lambda: zero  # noqa: E731
    Xh, Yh = fields.rfft(X0, grid)[None], fields.rfft(Y0, grid)[None]
    Xs, Ys, Xe, Ye = [X0.copy()], [Y0.copy()], [], []
    for k in range(steps):
        Xh, Yh, xe, ye, _ = st.coupled_step(Xh, Yh, src)
        _check_explosion(Yh, k + 1, dt)
        Xe.append(fields.irfft(xe[0], grid))
        Ye.append(fields.irfft(ye[0], grid))
        Xs.append(fields.irfft(Xh[0], grid))
        Ys.append(fields.irfft(Yh[0], grid))
    times = dt * np.arange(steps + 1)
    return Trajectory(params, float(dt), scheme, times, np.stack(Xs), np.stack(Ys), np.stack(Xe), np.stack(Ye))


def _check_traj(traj, params):
    if traj.params != params:
        raise TrajectoryMismatchError("trajectory was recorded with different model parameters")
    n = traj.n_steps
    if traj.X_eval.shape[0] != n or traj.Y_eval.shape[0] != n or traj.X.shape[0] != n + 1:
        raise TrajectoryMismatchError("trajectory arrays do not match its step count")


def linearized_flow_Y0(traj, h, params):
    """``psi_t = D_{Y0} Y_t [h]`` along ``traj``: exact tangent of the discrete scheme."""
    _check_traj(traj, params)
    grid = params.grid
    st = Stepper(params, traj.dt, traj.scheme)
    psi = fields.rfft(fields.check_field(h, grid, "h", batch=False), grid)
    out = [fields.irfft(psi, grid)]
    for k in range(traj.n_steps):
        w = _weight_at(st, traj, k)
        if traj.scheme == "lie":
            psi = st.decay * (psi - st.dt * st.dG_hat(w, psi))
        else:
            p1 = st.decay * psi
            psi = st.decay * (p1 - st.dt * st.dG_hat(w, p1))
        out.append(fields.irfft(psi, grid))
    return np.stack(out)


def linearized_flow_X0(traj, h, params):
    """``eta_t = D_{X0} Y_t [h]``; X responds as ``P_t h`` and forces Y through ``D G``."""
    _check_traj(traj, params)
    grid = params.grid
    st = Stepper(params, traj.dt, traj.scheme)
    hh = fields.rfft(fields.check_field(h, grid, "h", batch=False), grid)
    lam = fields.half(grid.lam(params.mass), grid)
    eta = np.zeros_like(hh)
    out = [fields.irfft(eta, grid)]
    for k in range(traj.n_steps):
        w = _weight_at(st, traj, k)
        t_eval = traj.times[k] + (0.0 if traj.scheme == "lie" else 0.5 * traj.dt)
        xi = np.exp(-t_eval * lam) * hh
        if traj.scheme == "lie":
            eta = st.decay * (eta - st.dt * st.dG_hat(w, eta + xi))
        else:
            e1 = st.decay * eta
            eta = st.decay * (e1 - st.dt * st.dG_hat(w, e1 + xi))
        out.append(fields.irfft(eta, grid))
    return np.stack(out)


def _weight_at(st, traj, k):
    if st.alpha == 0:
        return None
    grid = st.grid
    return st.weight(fields.rfft(traj.X_eval[k] + traj.Y_eval[k], grid))


def gff_ensemble(params, n_samples, seed=0, *, dt=0.01, scheme="lie"):
    """Exact stationary ensemble of the free sector (``alpha = 0``): GFF draws with ``Y = 0``.

    The X update is the exact OU transition, so these samples are stationary
    for the discrete chain at any ``dt``.
    """
    if params.alpha != 0:
        raise ValueError("gff_ensemble is exact only for alpha = 0")
    X = gff.sample_gff(params, gff.rng_for(seed, 2**32 - 3), size=n_samples)
    return Ensemble(X, np.zeros_like(X), params, 0.0, 0.0, float(dt), scheme, int(seed),
                    np.zeros(n_samples, dtype=int), 0.0, {"exact_gff": True})


def gradcheck(params, h, X0, Y0, t_end=1.0, dt=0.01, seed=0, *, wrt="Y0", step=1e-4, scheme="lie"):
    """Linearized flow against a common-random-number finite difference.

    Returns a dict with the relative L2 error at ``t_end`` and over the path.
    """
    if wrt not in ("Y0", "X0"):
        raise ValueError("wrt must be 'Y0' or 'X0'")
    grid = params.grid
    h = fields.check_field(h, grid, "h", batch=False)
    base = run_trajectory(params, X0, Y0, t_end, dt, seed, scheme)
    if wrt == "Y0":
        pert = run_trajectory(params, X0, Y0 + step * h, t_end, dt, seed, scheme)
        lin = linearized_flow_Y0(base, h, params)
    else:
        pert = run_trajectory(params, X0 + step * h, Y0, t_end, dt, seed, scheme)
        lin = linearized_flow_X0(base, h, params)
    fd = (pert.Y - base.Y) / step
    num = fields.lp_norm(fd - lin, grid)
    den = fields.lp_norm(lin, grid)
    k0 = 1 if wrt == "X0" else 0  # the X0 tangent of Y starts at zero
    rel = num[k0:] / np.maximum(den[k0:], 1e-300)
    return {
        "wrt": wrt,
        "step": step,
        "t_end": t_end,
        "dt": dt,
        "relative_error_final": float(rel[-1]),
        "relative_error_max": float(rel.max()),
        "tangent_norm_final": float(den[-1]),
    }
