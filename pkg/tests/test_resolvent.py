import math

import numpy as np
import pytest

from expphi2 import dynamics, fields, functionals as fn, resolvent as rs
from expphi2.errors import TrajectoryMismatchError
from expphi2.functionals import CylinderFunction, Polynomial
from expphi2.gff import ModelParams


@pytest.fixture
def free16():
    return ModelParams.from_gamma(0.0, n=16, eps_cells=2)


def _corpus_fields(grid):
    x = grid.coords()
    xx, yy = np.meshgrid(x, x, indexing="ij")
    us = {"c10": np.cos(xx), "s01": np.sin(yy), "c11": np.cos(xx + yy), "mix": np.cos(xx) + 0.5 * np.sin(2 * yy)}
    starts = {"a": np.cos(xx) + 0.3 * np.sin(yy), "b": 1.0 + np.cos(xx + yy) - 0.2 * np.cos(2 * xx)}
    return us, starts


def test_quadrature_weights_exact_on_linear():
    lam, dt, n = 0.7, 0.1, 30
    c = rs.quadrature_weights(lam, dt, n)
    T = dt * n
    assert c.sum() == pytest.approx(-math.expm1(-lam * T) / lam, rel=1e-13)
    t = dt * np.arange(n + 1)
    exact = (1 - math.exp(-lam * T) * (1 + lam * T)) / lam**2  # int t e^{-lam t}
    assert c @ t == pytest.approx(exact, rel=1e-12)
    small = rs.quadrature_weights(1e-9, dt, n)
    assert small.sum() == pytest.approx(T, rel=1e-8)


def test_constant_and_scaling(free16):
    one = CylinderFunction(Polynomial.constant(2.0, 1), np.ones((1, 16, 16)), "X", free16.grid)
    X0 = np.zeros((16, 16))
    a = rs.estimate_resolvent(one, 1.0, X0, X0, free16, n_paths=4, T_max=5.0, dt=0.1)
    assert a.value == pytest.approx(2 * -math.expm1(-5.0), rel=1e-12) and a.stderr == 0
    b = rs.estimate_resolvent(one, 2.0, X0, X0, free16, n_paths=4, T_max=50.0, dt=0.1)
    c = rs.estimate_resolvent(one, 4.0, X0, X0, free16, n_paths=4, T_max=50.0, dt=0.1)
    assert b.value == pytest.approx(2 * c.value, rel=1e-12)
    assert a.truncation_bound == pytest.approx(2 * math.exp(-5.0))
    assert set(a.to_dict()) >= {"value", "stderr", "lambda", "horizon"}


def test_estimate_guards(free16):
    F = fn.shipped_library(free16.grid, split="X")["linear"]
    X0 = np.zeros((16, 16))
    with pytest.raises(ValueError):
        rs.estimate_resolvent(F, 0.0, X0, X0, free16)
    with pytest.raises(ValueError):
        rs.estimate_resolvent(F, 1.0, X0, X0 + 1, free16)


def test_corpus_against_frozen(frozen, free16):
    us, starts = _corpus_fields(free16.grid)
    Y0 = np.zeros((16, 16))
    for i, case in enumerate(frozen["resolvent_corpus"]):
        u, z = us[case["u"]], starts[case["start"]]
        closed = rs.gaussian_closed_form(u, case["lambda"], z, Y0, free16, T_max=case["T_max"])
        assert closed == pytest.approx(case["value"], rel=1e-10, abs=1e-12)
        F = CylinderFunction(Polynomial.coordinate(0, 1), u[None], "X", free16.grid)
        est = rs.estimate_resolvent(F, case["lambda"], z, Y0, free16, n_paths=2000, T_max=case["T_max"],
                                    seed=i, dt=0.025, scheme="lie")
        assert abs(est.value - case["value"]) < 3 * est.stderr + 1e-3 * abs(case["value"])


def test_untruncated_closed_form_larger_horizon(free16):
    us, starts = _corpus_fields(free16.grid)
    Y0 = np.zeros((16, 16))
    full = rs.gaussian_closed_form(us["c10"], 1.0, starts["a"], Y0, free16)
    assert rs.gaussian_closed_form(us["c10"], 1.0, starts["a"], Y0, free16, T_max=40.0) == pytest.approx(full)


def test_identity_check_small(free16):
    ens = dynamics.gff_ensemble(free16, 100, seed=3, dt=0.1)
    lib = fn.shipped_library(free16.grid, split="X")
    reps = rs.resolvent_identity_check({"square": lib["square"], "tanh": lib["tanh_sum"]}, 1.0, ens, free16,
                                       n_starts=100, n_paths=20, T_max=4.0)
    assert set(reps) == {"square", "tanh"}
    for r in reps.values():
        assert abs(r.z_with_allowance) < 4 and r.extra["n_paths"] == 20
    single = rs.resolvent_identity_check(lib["tanh_sum"], 1.0, ens, free16, n_starts=100, n_paths=20, T_max=4.0)
    assert single.residual == pytest.approx(reps["tanh"].residual)


def test_identity_check_guards(free16):
    ens = dynamics.gff_ensemble(free16, 10, dt=0.1)
    F = fn.shipped_library(free16.grid, split="X")["linear"]
    with pytest.raises(TrajectoryMismatchError):
        rs.resolvent_identity_check(F, 1.0, ens, free16.with_(mass=2.0), n_starts=10)
    with pytest.raises(TrajectoryMismatchError):
        rs.resolvent_identity_check(F, 1.0, ens, free16, n_starts=10, dt=0.05)
    with pytest.raises(ValueError):
        rs.resolvent_identity_check(F, 1.0, ens, free16, n_starts=20)


def test_contraction_free_rate(free16):
    x = free16.grid.coords()
    h = -np.cos(x)[:, None] * np.ones(16)
    rep = rs.contraction_probe(free16, h, n_trials=2, t_end=1.0, dt=0.05, burn_in=1.0)
    assert rep["envelope_holds"] and rep["monotone_after_transient"]
    assert rep["k_hat_mean"] == pytest.approx(2.0, abs=1e-9)
    assert rep["k"] == pytest.approx(1.0)
