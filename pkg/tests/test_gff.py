import numpy as np
import pytest

from expphi2 import fields, gff
from expphi2.gff import ModelParams
import oracles as O


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams.from_gamma(0.1, mass=0.0)
    p = ModelParams.from_gamma(0.1, n=32)
    assert p.gamma == pytest.approx(0.1)
    assert p.epsilon == pytest.approx(4 * p.grid.spacing) and p.fejer_order == 8
    assert ModelParams.from_dict(p.to_dict()) == p
    with pytest.warns(UserWarning):
        ModelParams.from_gamma(2.5, n=32)


def test_rng_streams_independent_and_reproducible():
    a = gff.rng_for(3, 1).standard_normal(4)
    assert np.array_equal(a, gff.rng_for(3, 1).standard_normal(4))
    assert not np.array_equal(a, gff.rng_for(3, 2).standard_normal(4))


def test_covariance_against_direct_sum(frozen):
    grid = fields.GridSpec(1.0, 64)
    for x, ref in zip(frozen["covariance_points"], frozen["covariance_n64_m1"]):
        assert gff.covariance(x, 1.0, grid) == pytest.approx(ref, rel=1e-12)
        assert ref == pytest.approx(O.covariance_direct(x, 1.0, 64, 1.0), rel=1e-12)
    field = gff.covariance_field(1.0, grid)
    assert field[0, 0] == pytest.approx(frozen["covariance_n64_m1"][0], rel=1e-12)


def test_renorm_constant_against_reference():
    p = ModelParams.from_gamma(0.1, n=64)
    eps = p.epsilon
    assert gff.renorm_constant(eps, p) == pytest.approx(O.renorm_constant_direct(eps, 1.0, 64, 1.0), rel=1e-10)
    assert gff.renorm_constant(eps, p) == pytest.approx(gff.covariance_mollified((0, 0), eps, 1.0, p.grid))
    # Fejer truncation only removes variance
    assert gff.renorm_constant_fejer(8, eps, p) < gff.renorm_constant(eps, p)


def test_gff_sample_variance():
    p = ModelParams.from_gamma(0.0, n=16, eps_cells=2)
    X = gff.sample_gff(p, 11, size=4000)
    target = gff.covariance((0, 0), 1.0, p.grid)
    var = X.var(axis=0).mean()
    # 4000 draws x 256 correlated points; 3 percent is several standard errors
    assert var == pytest.approx(target, rel=0.03)
    assert gff.sample_gff(p, 11).shape == (16, 16)


def test_ou_step_preserves_gff():
    p = ModelParams.from_gamma(0.0, n=16, eps_cells=2)
    X0 = gff.sample_gff(p, 1)
    st = gff.OUState(0.0, fields.fourier_forward(X0, p.grid), gff.rng_for(5))
    vals = []
    for _ in range(3000):
        st = gff.ou_step(st, 0.5, p)
        vals.append(st.real(p.grid)[0, 0])
    assert st.time == pytest.approx(1500)
    assert np.var(vals) == pytest.approx(gff.covariance((0, 0), 1.0, p.grid), rel=0.1)
    frozen_path = gff.ou_step(gff.OUState(0.0, st.field, None), 0.5, p, noise=False)
    lam = p.grid.lam(1.0)
    assert np.allclose(frozen_path.field, np.exp(-0.5 * lam) * st.field)
