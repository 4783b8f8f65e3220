"""The frozen numbers still follow from the oracles that produced them."""

import math

import numpy as np

import oracles as O


def test_frozen_params_values(frozen):
    g, r = O.gamma_max_mp()
    assert abs(float(g) - frozen["gamma_max"]) < 1e-15
    assert abs(float(r) - frozen["r_star"]) < 1e-15
    # the naive double expression loses ~3 bits to cancellation
    assert abs(frozen["gamma_tilde_max"] - 1 / (3 + 2 * math.sqrt(2))) <= 2 * math.ulp(0.17)
    lo, hi = O.quadratic_r_roots(0.5, 0.25)
    assert np.allclose([float(lo), float(hi)], frozen["r_roots_g05_s025"], rtol=1e-14)


def test_frozen_covariance(frozen):
    for x, v in zip(frozen["covariance_points"], frozen["covariance_n64_m1"]):
        assert abs(O.covariance_direct(x, 1.0, 64, 1.0) - v) < 1e-12


def test_frozen_renorm(frozen):
    c = O.renorm_constant_direct(0.1, 1.0, 512, 1.0)
    assert abs(c - frozen["renorm_c_n512"][1]) < 1e-12


def test_pq_system_closed_form_boundary(frozen):
    assert abs(frozen["pq_boundary"] - frozen["gamma_tilde_max"]) < 1e-14
