"""Closed-form parameter windows and Chebyshev-style feasibility searches.

Feasibility searches maximize the smallest slack ``t`` over the constraint
list (each written as ``slack > 0``) with SLSQP from several starts. A tuple
is reported feasible only if every strict constraint re-validates exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from .errors import IndexRejectedError

__all__ = [
    "Interval",
    "FeasibleTuple",
    "gamma_of_r",
    "gamma_tilde_max",
    "gamma_max",
    "s_interval",
    "r_interval",
    "check_def26",
    "solve_system_3_20",
    "solve_system_lemma39",
    "feasibility_boundary",
    "extremal_equalities",
    "lyapunov_indices",
    "validate_lyapunov_indices",
    "region_report",
    "sweep",
]

QUOTED_Q_BAR = 1.21  # value of q given alongside the extremal equalities
DELTA_CAP = 1e-3


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def empty(self):
        return not self.hi > self.lo

    def __contains__(self, x):
        return self.lo < x < self.hi

    @property
    def midpoint(self):
        return 0.5 * (self.lo + self.hi)

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "empty": self.empty}


@dataclass
class FeasibleTuple:
    gamma: float
    feasible: bool
    slack: float
    values: dict
    satisfied_constraints: dict
    binding: str
    notes: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- extremals


def gamma_tilde_max():
    """``3 - 2 sqrt(2)``, evaluated as ``1 / (3 + 2 sqrt(2))`` to avoid cancellation."""
    return 1.0 / (3.0 + 2.0 * math.sqrt(2.0))


def gamma_of_r(r):
    u = np.asarray(r, dtype=float) - 1.0
    return 2.0 * u**2 / (np.asarray(r, dtype=float) * (u**2 + 1.0))


def _stationarity(r):
    u = r - 1.0
    return u**3 - u - 2.0


def gamma_max():
    """Maximum of ``2(r-1)^2 / (r((r-1)^2+1))`` over admissible ``r > 1``.

    Returns ``(gamma_max, r_star, details)``. ``r_star`` is the root of the
    stationarity cubic; ``details["r_golden"]`` is the independent
    golden-section maximizer.
    """
    res = minimize_scalar(lambda r: -gamma_of_r(r), bracket=(1.5, 2.5, 6.0), method="golden", tol=1e-10)
    r_star = brentq(_stationarity, 1.5, 4.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    g = float(gamma_of_r(r_star))
    if not g * r_star < 2:
        raise AssertionError("extremal point violates gamma r < 2")
    return g, float(r_star), {"r_golden": float(res.x), "gamma_golden": float(-res.fun),
                              "cubic_residual": float(_stationarity(r_star))}


def extremal_equalities():
    """The equalities at the extremal point solved as written, next to the quoted ``q``."""
    g, r, _ = gamma_max()
    q = r / (r - 1.0)
    return {"r_bar": r, "q": q, "kappa": 2.0 / q, "gamma": g, "quoted_q": QUOTED_Q_BAR,
            "q_discrepancy": abs(q - QUOTED_Q_BAR) > 0.01}


# ---------------------------------------------------------------- windows


def s_interval(gamma):
    if not 0 < gamma < 2:
        return Interval(0.0, 0.0)
    return Interval(0.0, gamma + 2.0 - math.sqrt(8.0 * gamma))


def r_interval(gamma, s):
    """Roots of ``gamma r^2 + r (s - gamma - 2) + 2 = 0``, cut at ``r < 2/gamma``."""
    if s not in s_interval(gamma):
        return Interval(0.0, 0.0)
    disc = (s - gamma - 2.0) ** 2 - 8.0 * gamma
    if disc < 0:
        return Interval(0.0, 0.0)
    root = math.sqrt(disc)
    lo = (2.0 + gamma - s - root) / (2.0 * gamma)
    hi = (2.0 + gamma - s + root) / (2.0 * gamma)
    return Interval(lo, min(hi, 2.0 / gamma))


def check_def26(s, p, r, gamma, delta):
    return {
        "holder_1/p+1/r<=1": 1.0 / p + 1.0 / r <= 1.0,
        "gap_s-gamma(r-1)-2delta>0": s - gamma * (r - 1.0) - 2.0 * delta > 0,
        "integrability_gamma*r<2": gamma * r < 2.0,
    }


# ---------------------------------------------------------------- searches


def _chebyshev(slacks, x0s, bounds):
    """Maximize ``min_i slack_i(x)``; returns ``(x, t)``."""
    dim = len(bounds)

    def neg_t(z):
        return -z[-1]

    cons = [{"type": "ineq", "fun": (lambda z, f=f: f(z[:dim]) - z[-1])} for _, f in slacks]
    zb = list(bounds) + [(-10.0, 10.0)]
    best_x, best_t = None, -np.inf
    for x0 in x0s:
        x0 = np.clip(np.asarray(x0, dtype=float), [b[0] for b in bounds], [b[1] for b in bounds])
        t0 = min(f(x0) for _, f in slacks)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(neg_t, np.append(x0, t0), method="SLSQP", bounds=zb, constraints=cons,
                           options={"ftol": 1e-14, "maxiter": 500})
        x = np.clip(res.x[:dim], [b[0] for b in bounds], [b[1] for b in bounds])
        t = min(f(x) for _, f in slacks)
        if t > best_t:
            best_x, best_t = x, t
    return best_x, best_t


def _finish(gamma, names, slacks, x, t, strict, extra=None, notes=None):
    vals = dict(zip(names, (float(v) for v in x)))
    if extra:
        vals.update(extra(vals))
    sl = {n: float(f(x)) for n, f in slacks}
    sat = {n: (v > 0 if n in strict else v >= 0) for n, v in sl.items()}
    binding = min(sl, key=sl.get)
    sat = {n: bool(v) for n, v in sat.items()}
    return FeasibleTuple(float(gamma), bool(all(sat.values()) and t > 0), float(t), vals, sat, binding, notes or {})


def solve_system_3_20(gamma, delta_max=1e-3):
    """Search ``(r, q, kappa, delta)`` for

    ``kappa - gamma(r-1) - gamma(q-1) - 2 delta > 0``, ``1/q + 1/r < 1``,
    ``kappa q / 2 < 1``, ``gamma q < 2``, ``gamma r < 2``.

    The index constraints of :func:`check_def26` are met by choosing ``p = 2r/(r-1)`` and ``s = gamma(r-1) + 2 delta + slack``.
    """
    g = float(gamma)
    names = ["r", "q", "kappa", "delta"]
    slacks = [
        ("kappa-gamma(r-1)-gamma(q-1)-2delta", lambda x: x[2] - g * (x[0] - 1) - g * (x[1] - 1) - 2 * x[3]),
        ("1-1/q-1/r", lambda x: 1 - 1 / x[1] - 1 / x[0]),
        ("1-kappa*q/2", lambda x: 1 - 0.5 * x[2] * x[1]),
        ("2-gamma*q", lambda x: 2 - g * x[1]),
        ("2-gamma*r", lambda x: 2 - g * x[0]),
    ]
    bounds = [(1.0 + 1e-6, 50.0), (1.0 + 1e-6, 50.0), (0.0, 2.0), (1e-9, delta_max)]
    eq = extremal_equalities()
    starts = [[eq["r_bar"], eq["q"], eq["kappa"] * 0.99, 1e-6]]
    for r in (1.5, 2.0, 3.0, 5.0):
        for q in (1.5, 2.0, 3.0, 5.0):
            starts.append([r, q, 1.0 / q, 1e-6])
    x, t = _chebyshev(slacks, starts, bounds)

    def extra(v):
        r, d = v["r"], v["delta"]
        p = 2 * r / (r - 1)
        s = float(g * (r - 1) + 2 * d + max(t, 0.0))
        out = {"p": p, "s": s}
        out["def26"] = check_def26(s, p, r, g, d)
        return out

    res = _finish(g, names, slacks, x, t, strict={n for n, _ in slacks}, extra=extra,
                  notes={"extremal_equalities": eq})
    if res.feasible and not all(res.values["def26"].values()):
        res.feasible = False
        res.binding = "def26"
    return res


def solve_system_lemma39(gamma, delta_max=DELTA_CAP):
    """Search ``(p, q, theta, beta, delta)`` for

    ``-gamma(q-1) + 2 beta - 2/q > 0``, ``-gamma(p-1) - delta + theta > 0``,
    ``1/p + 1/2 < 1``, ``1/p + beta - delta + theta/2 <= 1``,
    with ``theta, beta`` in ``[0, 1]`` and ``0 < delta <= delta_max``.
    """
    g = float(gamma)
    names = ["p", "q", "theta", "beta", "delta"]
    slacks = [
        ("-gamma(q-1)+2beta-2/q", lambda x: -g * (x[1] - 1) + 2 * x[3] - 2 / x[1]),
        ("-gamma(p-1)-delta+theta", lambda x: -g * (x[0] - 1) - x[4] + x[2]),
        ("1/2-1/p", lambda x: 0.5 - 1 / x[0]),
        ("1-1/p-beta+delta-theta/2", lambda x: 1 - 1 / x[0] - x[3] + x[4] - 0.5 * x[2]),
    ]
    strict = {slacks[0][0], slacks[1][0], slacks[2][0]}
    bounds = [(2.0, 200.0), (1.0 + 1e-6, 200.0), (0.0, 1.0), (0.0, 1.0), (1e-9, delta_max)]
    q0 = math.sqrt(2.0 / g)
    p0 = max(q0, 2.5)
    b0 = min(1.0, g * (q0 - 1) / 2 + 1 / q0)
    th0 = min(1.0, g * (p0 - 1))
    starts = [[p0, q0, th0, b0, delta_max]]
    for p in (2.5, 4.0, 8.0):
        for q in (1.5, 3.0, 6.0):
            starts.append([p, q, 0.5, 0.5, delta_max])
    x, t = _chebyshev(slacks, starts, bounds)
    return _finish(g, names, slacks, x, t, strict=strict)


def feasibility_boundary(solver=None, lo=0.01, hi=0.5, tol=1e-5):
    """Bisect the largest feasible gamma of ``solver`` (default :func:`solve_system_lemma39`)."""
    solver = solve_system_lemma39 if solver is None else solver
    if not solver(lo).feasible or solver(hi).feasible:
        raise ValueError("bisection bracket does not straddle the boundary")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if solver(mid).feasible:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- Lyapunov indices


def validate_lyapunov_indices(gamma, s, p, r, delta):
    """Raise :class:`IndexRejectedError` unless the drift-bound windows and :func:`check_def26` hold."""
    bad = {}
    if s not in s_interval(gamma):
        bad["s_interval"] = s_interval(gamma).to_dict()
    elif r not in r_interval(gamma, s):
        bad["r_interval"] = r_interval(gamma, s).to_dict()
    d26 = check_def26(s, p, r, gamma, delta)
    bad.update({k: False for k, v in d26.items() if not v})
    if bad:
        raise IndexRejectedError(f"indices rejected by params module: {sorted(bad)}", bad)
    return True


def lyapunov_indices(gamma, p=2.0, delta=0.01, s=None):
    """Validated ``(s, p, r, delta, k)`` for the Lyapunov functionals.

    ``s`` defaults to the midpoint of its window; ``r`` is ``p/(p-1)`` when
    admissible, otherwise the midpoint of the admissible ``r`` range.
    """
    s = s_interval(gamma).midpoint if s is None else s
    ri = r_interval(gamma, s)
    lo = max(ri.lo, p / (p - 1.0))
    hi = min(ri.hi, 1.0 + (s - 2.0 * delta) / gamma if gamma > 0 else ri.hi)
    r = p / (p - 1.0) if lo <= p / (p - 1.0) < hi and p / (p - 1.0) in ri else 0.5 * (lo + hi)
    validate_lyapunov_indices(gamma, s, p, r, delta)
    # smallest integer k with (k - sigma/2) p > 1 for every heat-norm index used
    sig = max(s + 2.0 / p, -s + 2.0 / p)
    k = 1
    while not (k - sig / 2.0) * p > 1:
        k += 1
    return {"gamma": gamma, "s": s, "p": p, "r": r, "delta": delta, "k": k,
            "exp_index": -gamma * (r - 1) - delta, "v3_power": (p * r - r + 1) / (p * r * r)}


# ---------------------------------------------------------------- reports


def region_report(gamma):
    si = s_interval(gamma)
    out = {"gamma": gamma, "s_interval": si.to_dict()}
    if not si.empty:
        out["r_interval_at_s_mid"] = r_interval(gamma, si.midpoint).to_dict()
    out["rq_system"] = solve_system_3_20(gamma).to_dict() if gamma > 0 else None
    out["pq_system"] = solve_system_lemma39(gamma).to_dict() if gamma > 0 else None
    g, r, det = gamma_max()
    out["gamma_max"] = {"gamma": g, "r_star": r, **det}
    out["gamma_tilde_max"] = gamma_tilde_max()
    return out


def sweep(gammas):
    rows = []
    for g in gammas:
        si = s_interval(g)
        ri = r_interval(g, si.midpoint) if not si.empty else Interval(0.0, 0.0)
        a = solve_system_3_20(g)
        b = solve_system_lemma39(g)
        rows.append({
            "gamma": g, "s_hi": si.hi, "r_lo": ri.lo, "r_hi": ri.hi,
            "feasible_rq": a.feasible, "slack_rq": a.slack,
            "feasible_pq": b.feasible, "slack_pq": b.slack,
        })
    return rows
