import numpy as np
import pytest

from expphi2 import dynamics, fields, functionals as fn, gff, wick
from expphi2.errors import DegenerateVarianceError, IndexRejectedError
from expphi2.functionals import CylinderFunction, Polynomial, Product, ResidualReport, TanhOf
from expphi2.gff import ModelParams
import oracles as O


@pytest.fixture
def p16():
    return ModelParams.from_gamma(0.25, n=16, eps_cells=2)


OUTERS = [
    Polynomial({(4, 0): 0.25, (1, 1): 1.0, (0, 2): -0.5, (0, 0): 2.0}),
    TanhOf(Polynomial({(1, 0): 1.0, (0, 1): 0.5})),
    Product(TanhOf(Polynomial({(1, 0): 1.0, (0, 0): 0.0})), Polynomial({(0, 1): 1.0, (0, 2): 1.0})),
]


@pytest.mark.parametrize("outer", OUTERS, ids=["poly", "tanh", "product"])
def test_outer_derivatives(outer, rng):
    for a in rng.normal(size=(4, 2)):
        g = outer.grad(a[None])[0]
        assert np.allclose(g, O.central_diff(lambda x: outer.value(x[None])[0], a), atol=1e-7)
        H = outer.hess(a[None])[0]
        Hfd = np.stack([O.central_diff(lambda x, k=k: outer.grad(x[None])[0, k], a) for k in range(2)])
        assert np.allclose(H, Hfd, atol=1e-6)
        assert np.allclose(H, H.T)


def test_polynomial_validation():
    with pytest.raises(ValueError):
        Polynomial({(5,): 1.0})
    with pytest.raises(ValueError):
        Polynomial({(1,): 1.0, (1, 0): 2.0})
    with pytest.raises(ValueError):
        Product(Polynomial.constant(1, 1), Polynomial.constant(1, 2))
    assert Polynomial.constant(3.0, 2).value(np.zeros((2, 2))) == pytest.approx([3, 3])


def test_cylinder_validation(grid16):
    u = np.ones((2,) + grid16.shape)
    with pytest.raises(ValueError):
        CylinderFunction(Polynomial.coordinate(0, 1), u, "phi", grid16)
    with pytest.raises(ValueError):
        CylinderFunction(Polynomial.coordinate(0, 2), u, ("X", "Z"), grid16)


def _generator_oracle(F, X, Y, p):
    """Finite-difference generator from directional derivatives only."""
    grid = p.grid
    t = 1e-4
    f = lambda Xp, Yp: float(fn.cylinder_eval(F, Xp, Yp))  # noqa: E731
    trace = 0.0
    ux = [F.test_vectors[k] for k in range(F.dim) if F.split[k] in ("X", "phi")]
    if ux:
        # orthonormal basis of span{u_k seeing X}
        B = np.stack(ux).reshape(len(ux), -1) * grid.spacing
        Q, _ = np.linalg.qr(B.T)
        for e in Q.T[: np.linalg.matrix_rank(B)]:
            e = e.reshape(grid.shape) / grid.spacing
            trace += (f(X + t * e, Y) - 2 * f(X, Y) + f(X - t * e, Y)) / t**2
    AX = fields.apply_multiplier(X, grid.lam(p.mass), grid)
    s = 1e-6
    drift_x = (f(X - s * AX, Y) - f(X + s * AX, Y)) / (2 * s)
    Yv = dynamics.step_Y(X, Y, 1e-7, p) if any(sp in ("Y", "phi") for sp in F.split) else Y
    drift_y = (f(X, Yv) - f(X, Y)) / 1e-7
    return trace + drift_x + drift_y


@pytest.mark.parametrize("split", ["X", "Y", "phi", ("X", "Y")])
@pytest.mark.parametrize("name", ["square", "quartic_mix", "tanh_sum"])
def test_generator_against_directional_derivatives(p16, split, name):
    lib = fn.shipped_library(p16.grid, split="phi")
    F0 = lib[name]
    F = CylinderFunction(F0.outer, F0.test_vectors, split if isinstance(split, str) or F0.dim == 2 else "phi",
                         p16.grid)
    X = gff.sample_gff(p16, 3)
    Y = dynamics.step_Y(X, np.zeros_like(X), 0.5, p16)
    got = fn.apply_generator(F, X, Y, p16)
    ref = _generator_oracle(F, X, Y, p16)
    assert got == pytest.approx(ref, rel=2e-4, abs=2e-4)


def test_generator_square_closed_form(p16):
    F = fn.shipped_library(p16.grid, split="X")["square"]
    X = gff.sample_gff(p16, 4, size=3)
    u = F.test_vectors[0]
    Au = fields.apply_multiplier(u, p16.grid.lam(1.0), p16.grid)
    a = fields.pairing(u, X, p16.grid)
    expect = 2 * fields.pairing(u, u, p16.grid) - 2 * a * fields.pairing(Au, X, p16.grid)
    assert np.allclose(fn.apply_generator(F, X, np.zeros_like(X), p16), expect)


def test_grad_wrt(p16):
    lib = fn.shipped_library(p16.grid)
    X = gff.sample_gff(p16, 4)
    g = fn.cylinder_grad_phi(lib["tanh_sum"], X, np.zeros_like(X))
    h = lib["tanh_sum"].test_vectors[1]
    fd = (fn.cylinder_eval(lib["tanh_sum"], X + 1e-6 * h) - fn.cylinder_eval(lib["tanh_sum"], X - 1e-6 * h)) / 2e-6
    assert fields.pairing(g, h, p16.grid) == pytest.approx(fd, rel=1e-6)
    Fy = CylinderFunction(Polynomial.coordinate(0, 2), lib["tanh_sum"].test_vectors, ("X", "Y"), p16.grid)
    assert np.allclose(fn.cylinder_grad(Fy, X, wrt="Y"), Fy.test_vectors[1] * 0)
    with pytest.raises(ValueError):
        fn.cylinder_grad_phi(Fy, X)


def test_residual_report_merge_and_verdict():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=100), rng.normal(size=100)
    whole = ResidualReport.from_pairs("t", a, b)
    part = ResidualReport.from_pairs("t", a[:30], b[:30]).merge(ResidualReport.from_pairs("t", a[30:], b[30:]))
    assert part.residual == pytest.approx(whole.residual) and part.stderr == pytest.approx(whole.stderr)
    assert part.n_samples == 100
    r = ResidualReport.from_pairs("t", a + 10, 0.0, allowance=10.0)
    assert r.z_with_allowance < abs(r.z_score) and r.passed(3)
    with pytest.raises(ValueError):
        whole.merge(ResidualReport.from_pairs("u", a, b))
    bound = ResidualReport.from_pairs("ineq", a, b)
    bound.extra["bound"] = bound.lhs_estimate - 1
    assert not bound.passed()
    d = whole.to_dict(3.0)
    assert d["passed"] == whole.passed(3.0) and d["n_samples"] == 100


def test_degenerate_variance():
    with pytest.raises(DegenerateVarianceError):
        fn._check_variance(ResidualReport.from_pairs("t", [1.0, 1.0], [0.0, 0.0]))
    fn._check_variance(ResidualReport.from_pairs("t", [0.0, 0.0], [0.0, 0.0]))


def test_dt_allowance():
    assert fn.dt_allowance([3.0, -4.0], 0.1) == pytest.approx(0.1 * np.sqrt(12.5))


def test_free_sector_identities_hold():
    p = ModelParams.from_gamma(0.0, n=16, eps_cells=2)
    ens = dynamics.gff_ensemble(p, 3000, seed=4)
    lib = fn.shipped_library(p.grid)
    h = lib["linear"].test_vectors[0]
    for F in lib.values():
        assert abs(fn.fpk_residual(ens, F, p).z_score) < 4
        assert abs(fn.ibp_residual(ens, F, h, p).z_score) < 4
    sym = fn.fpk_symmetric_residual(ens, lib["square"], lib["tanh_sum"], p)
    assert abs(sym.z_score) < 4


def test_ibp_and_symmetric_guards(p16):
    ens = dynamics.simulate_stationary(p16, burn_in=1.0, n_samples=4, spacing=0.5, dt=0.05, n_chains=2)
    lib = fn.shipped_library(p16.grid)
    rough = np.zeros(p16.grid.shape)
    rough[0, 0] = 1.0
    with pytest.raises(ValueError):
        fn.ibp_residual(ens, lib["linear"], rough, p16)
    with pytest.raises(ValueError):
        fn.ibp_residual(ens, lib["linear"], lib["linear"].test_vectors[0], p16, drift="other")
    with pytest.raises(ValueError):
        fn.ibp_residual(ens, lib["linear"], lib["linear"].test_vectors[0], p16, control_variate=True)
    Fx = fn.shipped_library(p16.grid, split="X")["square"]
    with pytest.raises(ValueError):
        fn.fpk_symmetric_residual(ens, Fx, lib["square"], p16)


def test_control_variate_matches_plain_mean(p16):
    X = gff.sample_gff(p16, 9, size=50)
    Y = np.zeros_like(X)
    F = fn.shipped_library(p16.grid)["tanh_sum"]
    h = F.test_vectors[0]
    l1, r1 = fn.ibp_terms(X, Y, F, h, p16, "paper_B_eps")
    l0, r0 = fn.ibp_terms(X, Y, F, h, p16, "generator_matched")
    m, b = fn.ibp_mismatch_terms(X, Y, F, h, p16)
    assert np.allclose((l1 - r1) - (l0 - r0), m - b)


def test_lyapunov_functionals(p16, rng):
    with pytest.raises(IndexRejectedError):
        fn.lyapunov_V1(np.ones(p16.grid.shape), 1.0, 2.0, 0.5, 1.0, p16.grid)
    assert fn.lyapunov_V1(np.zeros(p16.grid.shape), 0.5, 2.0, 2, 1.0, p16.grid) == 0
    f = rng.normal(size=p16.grid.shape)
    v = fn.lyapunov_V1(f, 0.5, 2.0, 2, 1.0, p16.grid)
    assert fn.lyapunov_V1(-3 * f, 0.5, 2.0, 2, 1.0, p16.grid) == pytest.approx(9 * v)
    idx = fn.pmod.lyapunov_indices(0.25)
    X = gff.sample_gff(p16, 1)
    assert fn.lyapunov_V3(X, p16.with_(alpha=0.0), idx) == pytest.approx(2.0)
    assert fn.lyapunov_V3(X, p16, idx) > 2.0
    bad = dict(idx, s=0.05)
    ens = dynamics.gff_ensemble(p16.with_(alpha=0.0), 5)
    with pytest.raises(IndexRejectedError):
        fn.lyapunov_drift_check(ens, p16, idx=bad)


def test_matched_drift_is_generator_drift(p16):
    X = gff.sample_gff(p16, 2)
    F = fn.shipped_library(p16.grid)["linear"]
    h = F.test_vectors[0]
    G = wick.nonlinearity_G_fejer(X, np.zeros_like(X), p16)
    Ah = fields.apply_multiplier(h, p16.grid.lam(1.0), p16.grid)
    expect = fields.pairing(Ah, X, p16.grid) + fields.pairing(G, h, p16.grid)
    assert fn._drift_pairing(X[None], h, p16, "generator_matched")[0] == pytest.approx(expect)
