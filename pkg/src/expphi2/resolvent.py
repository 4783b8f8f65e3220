"""Feynman-Kac estimates of the resolvent, the stationary identity and the contraction probe.

Along each path ``F(Z_t)`` is interpolated linearly between steps and
integrated against ``exp(-lambda t)`` exactly, so constant ``F`` gives
``c (1 - exp(-lambda T)) / lambda`` to rounding. The tail beyond ``T`` is
not estimated; it is quoted as ``sup|F| exp(-lambda T) / lambda`` with the
sup taken over the simulated values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import dynamics, fields, gff
from .dynamics import NoiseSource, Stepper
from .errors import TrajectoryMismatchError
from .functionals import ResidualReport, _batch
from .stats import RunningStats

__all__ = [
    "ResolventEstimate",
    "quadrature_weights",
    "estimate_resolvent",
    "gaussian_closed_form",
    "resolvent_identity_check",
    "contraction_probe",
]


@dataclass
class ResolventEstimate:
    value: float
    stderr: float
    lam: float
    horizon: float
    n_paths: int
    truncation_bound: float

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def quadrature_weights(lam, dt, n_steps):
    """Weights ``c_k`` with ``sum_k c_k F_k = int_0^T exp(-lam t) F_lin(t) dt``."""
    q = lam * dt
    if q < 1e-6:
        # series to avoid cancellation
        w0 = 0.5 - q / 3 + q * q / 8
        w1 = 0.5 - q / 6 + q * q / 24
    else:
        e = math.exp(-q)
        w0 = (q - 1 + e) / q**2
        w1 = (1 - e - q * e) / q**2
    disc = np.exp(-lam * dt * np.arange(n_steps + 1))
    c = np.zeros(n_steps + 1)
    c[:-1] += dt * w0 * disc[:-1]
    c[1:] += dt * w1 * disc[:-1]
    return c


class _Projector:
    """All test-vector pairings of several cylinder functions as one matmul per split.

    ``<u, Z>`` over the half spectrum is ``w * (Re u Re Z + Im u Im Z)`` summed,
    so stacking the weighted vectors turns every pairing into a single product.
    """

    def __init__(self, Fs, grid):
        w = fields.rfft_pair_weights(grid)
        rows = {"X": [], "Y": [], "phi": []}
        self.slots = []
        for F in Fs:
            uh = fields.rfft(F.test_vectors, grid)
            slot = []
            for k, s in enumerate(F.split):
                slot.append((s, len(rows[s])))
                rows[s].append(np.concatenate([(uh[k].real * w).ravel(), (uh[k].imag * w).ravel()]))
            self.slots.append(slot)
        self.mats = {s: np.array(r).T for s, r in rows.items() if r}

    def arguments(self, Xh, Yh):
        b = Xh.shape[0]
        flat = {}
        for s, W in self.mats.items():
            Z = Xh if s == "X" else Yh if s == "Y" else Xh + Yh
            Z = Z.reshape(b, -1)
            flat[s] = np.concatenate([Z.real, Z.imag], axis=1) @ W
        return [np.stack([flat[s][:, j] for s, j in slot], axis=1) for slot in self.slots]


def _path_values(Fs, lam, X0h, Y0h, params, rngs, T_max, dt, scheme):
    """Discounted integrals of each ``F`` in ``Fs`` along one batch of lanes.

    Returns ``(values, sups)`` with ``values`` of shape ``(len(Fs), lanes)``.
    """
    st = Stepper(params, dt, scheme)
    steps = int(round(T_max / dt))
    if steps < 1 or abs(steps * dt - T_max) > 1e-9 * max(1.0, T_max):
        raise ValueError("T_max must be a positive multiple of dt")
    c = quadrature_weights(lam, dt, steps)
    proj = _Projector(Fs, params.grid)
    Xh, Yh = X0h.copy(), Y0h.copy()
    noise = NoiseSource(rngs, params.grid)

    def evaluate():
        return np.stack([F.outer.value(a) for F, a in zip(Fs, proj.arguments(Xh, Yh))])

    f = evaluate()
    acc = c[0] * f
    sup = np.abs(f).max(axis=1)
    for k in range(1, steps + 1):
        Xh, Yh, _, _, _ = st.coupled_step(Xh, Yh, noise)
        dynamics._check_explosion(Yh, k, dt)
        f = evaluate()
        acc += c[k] * f
        sup = np.maximum(sup, np.abs(f).max(axis=1))
    return acc, sup


def estimate_resolvent(F, lam, X0, Y0, params, n_paths=100, T_max=10.0, seed=0, *, dt=0.01, scheme="strang",
                       key=(), lanes=2048):
    """``E int_0^T exp(-lam t) F(X_t, Y_t) dt`` from ``(X0, Y0)``.

    Path ``p`` uses the stream ``rng_for(seed, *key, p)``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    grid = params.grid
    X0 = fields.check_field(X0, grid, "X0", batch=False)
    Y0 = fields.check_field(Y0, grid, "Y0", batch=False)
    if float(Y0.max()) > 1e-9:
        raise ValueError("Y0 must be <= 0")
    X0h, Y0h = fields.rfft(X0, grid), fields.rfft(Y0, grid)
    st = RunningStats()
    sup = 0.0
    for lo in range(0, n_paths, lanes):
        ps = range(lo, min(n_paths, lo + lanes))
        rngs = [gff.rng_for(seed, *key, p) for p in ps]
        b = len(rngs)
        v, s = _path_values([F], lam, np.repeat(X0h[None], b, 0), np.repeat(Y0h[None], b, 0), params, rngs,
                            T_max, dt, scheme)
        st.update(v[0])
        sup = max(sup, float(s[0]))
    return ResolventEstimate(float(st.mean), float(st.stderr), float(lam), float(T_max), int(n_paths),
                             sup * math.exp(-lam * T_max) / lam)


def gaussian_closed_form(u, lam, X0, Y0, params, split="X", T_max=None):
    """Free-sector value for ``F = <u, Z>``: ``<u, (lam + A)^-1 (1 - e^{-(lam+A) T}) Z0>``.

    ``Z0`` is ``X0``, ``Y0`` or their sum according to ``split``. With
    ``T_max=None`` the untruncated value ``<u, (lam + A)^-1 Z0>`` is returned.
    """
    grid = params.grid
    Z0 = {"X": X0, "Y": Y0, "phi": np.asarray(X0) + np.asarray(Y0)}[split]
    lt = grid.lam(params.mass) + lam
    mult = 1.0 / lt if T_max is None else -np.expm1(-lt * T_max) / lt
    return float(fields.pairing(u, fields.apply_multiplier(Z0, mult, grid), grid))


def resolvent_identity_check(F, lam, ens, params, *, n_starts=1000, n_paths=100, T_max=10.0, seed=0, dt=None,
                             scheme=None, lanes=2048):
    """Paired ``lam * G(Z_i) - F(Z_i)`` over stationary starts ``Z_i``.

    Start ``i`` uses path streams ``rng_for(seed, i, p)``; distinct starts see
    independent noise, so the differences are iid and their sample variance
    gives an honest standard error. The truncation bound times ``lam`` is
    declared as the allowance. ``F`` may be a dict of cylinder functions,
    all evaluated along the same paths; a dict of reports is returned then.
    """
    if ens.params != params:
        raise TrajectoryMismatchError("ensemble was sampled with different model parameters")
    dt = ens.dt if dt is None else dt
    scheme = ens.scheme if scheme is None else scheme
    if dt != ens.dt or scheme != ens.scheme:
        raise TrajectoryMismatchError("resolvent paths must use the ensemble's time step and scheme")
    if len(ens) < n_starts:
        raise ValueError(f"ensemble has {len(ens)} samples, need {n_starts} starts")
    single = not isinstance(F, dict)
    Fd = {"F": F} if single else dict(F)
    names, Fs = list(Fd), list(Fd.values())
    grid = params.grid
    X, Y = ens.X[:n_starts], ens.Y[:n_starts]
    Xh, Yh = fields.rfft(X, grid), fields.rfft(Y, grid)
    Xb, Yb = _batch(X, grid, "X"), _batch(Y, grid, "Y")
    f_start = np.stack([np.atleast_1d(Fk.outer.value(Fk.arguments(Xb, Yb))) for Fk in Fs])
    per_block = max(1, lanes // n_paths)
    G = np.empty((len(Fs), n_starts))
    sup = np.abs(f_start).max(axis=1)
    for lo in range(0, n_starts, per_block):
        idx = range(lo, min(n_starts, lo + per_block))
        rngs = [gff.rng_for(seed, i, p) for i in idx for p in range(n_paths)]
        x0 = np.repeat(Xh[lo : lo + len(idx)], n_paths, axis=0)
        y0 = np.repeat(Yh[lo : lo + len(idx)], n_paths, axis=0)
        v, s = _path_values(Fs, lam, x0, y0, params, rngs, T_max, dt, scheme)
        G[:, lo : lo + len(idx)] = v.reshape(len(Fs), len(idx), n_paths).mean(axis=2)
        sup = np.maximum(sup, s)
    out = {}
    for k, name in enumerate(names):
        trunc = float(sup[k]) * math.exp(-lam * T_max) / lam
        out[name] = ResidualReport.from_pairs(
            "resolvent_identity", lam * G[k], f_start[k], lam * trunc, params.to_dict(), lam=lam, T_max=T_max,
            n_starts=n_starts, n_paths=n_paths, truncation_bound=trunc, dt=dt, scheme=scheme)
    return out["F"] if single else out


# ---------------------------------------------------------------- contraction


def _gt_norm(psi, params):
    m = fields.mollifier_sqrt_multiplier(params.epsilon, params.grid)
    return fields.lp_norm(fields.apply_multiplier(psi, m, params.grid), params.grid, 2.0)


def contraction_probe(params, h, n_trials=20, seed=0, *, t_end=4.0, dt=0.01, scheme="lie", burn_in=None,
                      transient=0.5, backgrounds=None):
    """Decay of ``||gt_eps * D_{Y0} Y_t [h]||_2`` over random stationary backgrounds.

    Per trial ``r(t)`` is the norm ratio to ``t = 0``. The envelope rate is
    ``k_env = min_t -log r(t) / t``; an envelope ``exp(-k t)`` with
    ``k`` in ``(0, m^2]`` exists iff ``k_env > 0``. ``k_hat`` is the
    least-squares slope of ``-log r`` over ``t >= transient``.
    """
    grid = params.grid
    h = fields.check_field(h, grid, "h", batch=False)
    m2 = params.mass**2
    if backgrounds is None:
        bg = dynamics.simulate_stationary(params, burn_in=burn_in, n_samples=n_trials, spacing=1.0 / m2,
                                          seed=seed, dt=dt, scheme=scheme, n_chains=n_trials)
        backgrounds = list(zip(bg.X, bg.Y))
    trials = []
    n0 = float(_gt_norm(h, params))
    for i, (X0, Y0) in enumerate(backgrounds[:n_trials]):
        traj = dynamics.run_trajectory(params, X0, np.minimum(Y0, 0.0), t_end, dt, seed, scheme, key=(i + 1,))
        psi = dynamics.linearized_flow_Y0(traj, h, params)
        r = np.asarray(_gt_norm(psi, params)) / n0
        t = traj.times
        rates = -np.log(r[1:]) / t[1:]
        k_env = float(rates.min())
        sel = t >= transient
        k_hat = float(-np.polyfit(t[sel], np.log(r[sel]), 1)[0])
        late = r[t >= transient]
        trials.append({
            "k_env": k_env,
            "k_hat": k_hat,
            "envelope": bool(k_env > 0),
            "k": min(k_env, m2) if k_env > 0 else None,
            "monotone_after_transient": bool(np.all(np.diff(late) <= 1e-12 * late[:-1])),
            "r_end": float(r[-1]),
        })
    ok = all(tr["envelope"] for tr in trials)
    return {
        "n_trials": len(trials),
        "envelope_holds": ok,
        "k": min(tr["k"] for tr in trials) if ok else None,
        "k_hat_mean": float(np.mean([tr["k_hat"] for tr in trials])),
        "k_hat_min": float(np.min([tr["k_hat"] for tr in trials])),
        "monotone_after_transient": all(tr["monotone_after_transient"] for tr in trials),
        "epsilon": params.epsilon,
        "mass": params.mass,
        "trials": trials,
    }
