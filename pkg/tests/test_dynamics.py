import numpy as np
import pytest

from expphi2 import dynamics, fields, gff
from expphi2.dynamics import ChainState, Ensemble, Stepper
from expphi2.errors import DynamicsInstabilityError, TrajectoryMismatchError
from expphi2.gff import ModelParams


@pytest.fixture
def p16():
    return ModelParams.from_gamma(0.25, n=16, eps_cells=2)


def test_stepper_validation(p16):
    with pytest.raises(ValueError):
        Stepper(p16, 0.01, "euler")
    with pytest.raises(ValueError):
        Stepper(p16, 0.0)


def test_step_Y_keeps_sign(p16):
    X = 3 * gff.sample_gff(p16, 1)
    Y = np.zeros_like(X)
    for scheme in dynamics.SCHEMES:
        Yn = dynamics.step_Y(X, Y, 0.05, p16, scheme)
        assert Yn.max() <= 1e-12 and Yn.min() < 0
    with pytest.raises(ValueError):
        dynamics.step_Y(X, Y + 0.1, 0.05, p16)


def test_explosion_guard():
    with pytest.raises(DynamicsInstabilityError):
        dynamics._check_explosion(np.array([np.inf]), 3, 0.1)


@pytest.mark.parametrize("scheme", dynamics.SCHEMES)
def test_chain_state_matches_trajectory(p16, scheme):
    X0 = gff.sample_gff(p16, 2)
    Y0 = np.zeros_like(X0)
    traj = dynamics.run_trajectory(p16, X0, Y0, 0.2, 0.02, seed=9, scheme=scheme, key=(4,))
    cs = ChainState(0.0, gff.OUState(0.0, fields.fourier_forward(X0, p16.grid), gff.rng_for(9, 4)), Y0, p16, 0.02,
                    scheme)
    for _ in range(10):
        cs.step()
    assert cs.t == pytest.approx(0.2)
    assert np.allclose(cs.Y, traj.Y[-1], atol=1e-12)
    assert np.allclose(cs.X.real(p16.grid), traj.X[-1], atol=1e-12)


def test_common_random_numbers(p16):
    X0 = gff.sample_gff(p16, 2)
    a = dynamics.run_trajectory(p16, X0, np.zeros_like(X0), 0.1, 0.01, seed=1)
    b = dynamics.run_trajectory(p16, X0, np.zeros_like(X0), 0.1, 0.01, seed=1)
    c = dynamics.run_trajectory(p16, X0, np.zeros_like(X0), 0.1, 0.01, seed=1, key=(1,))
    assert np.array_equal(a.Y, b.Y) and not np.array_equal(a.X, c.X)
    with pytest.raises(ValueError):
        dynamics.run_trajectory(p16, X0, np.zeros_like(X0), 0.105, 0.01, seed=1)


def test_free_sector_stays_gaussian():
    p = ModelParams.from_gamma(0.0, n=16, eps_cells=2)
    ens = dynamics.simulate_stationary(p, burn_in=1.0, n_samples=400, spacing=1.0, seed=3, dt=0.05, n_chains=40)
    assert np.all(ens.Y == 0)
    assert ens.X.var(axis=0).mean() == pytest.approx(gff.covariance((0, 0), 1.0, p.grid), rel=0.1)
    ex = dynamics.gff_ensemble(p, 10, dt=0.05)
    assert ex.meta["exact_gff"] and ex.dt == 0.05
    with pytest.raises(ValueError):
        dynamics.gff_ensemble(ModelParams.from_gamma(0.1, n=16, eps_cells=2), 10)


def test_simulation_reproducible_across_workers(p16):
    kw = dict(burn_in=1.0, n_samples=12, spacing=0.5, seed=5, dt=0.05, n_chains=4)
    a = dynamics.simulate_stationary(p16, **kw)
    b = dynamics.simulate_stationary(p16, **kw)
    c = dynamics.simulate_stationary(p16, workers=2, **kw)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, c.Y) and np.array_equal(a.chain, c.chain)
    assert a.max_Y <= 1e-12 and len(a) == 12


def test_observer_mode(p16):
    ens = dynamics.simulate_stationary(p16, burn_in=1.0, n_samples=6, spacing=0.5, seed=5, dt=0.05, n_chains=3,
                                       observer=lambda X, Y: {"m": Y.mean(axis=(1, 2))})
    assert len(ens) == 0 and len(ens.meta["observed"]) == 6
    full = dynamics.simulate_stationary(p16, burn_in=1.0, n_samples=6, spacing=0.5, seed=5, dt=0.05, n_chains=3)
    assert [o["m"] for o in ens.meta["observed"]] == pytest.approx(list(full.Y.mean(axis=(1, 2))))


def test_ensemble_persistence(tmp_path, p16):
    ens = dynamics.simulate_stationary(p16, burn_in=1.0, n_samples=4, spacing=0.5, seed=5, dt=0.05, n_chains=2)
    d = ens.save(tmp_path / "ens")
    assert (d / "manifest.json").exists() and len(list(d.glob("*.bin"))) == 8
    back = Ensemble.load(d)
    assert np.array_equal(back.X, ens.X) and np.array_equal(back.Y, ens.Y) and back.params == ens.params
    with pytest.raises(FileExistsError):
        ens.save(d)


def test_decorrelation_spacing_floor(p16):
    s = dynamics.estimate_decorrelation_spacing(p16, dt=0.05, pilot_time=50.0)
    assert s >= 1.0


@pytest.mark.parametrize("wrt", ["Y0", "X0"])
@pytest.mark.parametrize("scheme", dynamics.SCHEMES)
def test_gradcheck_small(p16, wrt, scheme):
    X0 = gff.sample_gff(p16, 8)
    x = p16.grid.coords()
    h = np.cos(x)[:, None] * np.cos(x)[None, :]
    rep = dynamics.gradcheck(p16, h, X0, np.zeros_like(X0), t_end=0.5, dt=0.05, seed=2, wrt=wrt, scheme=scheme)
    assert rep["relative_error_max"] < 1e-3 and rep["tangent_norm_final"] > 0


def test_linearized_flow_checks_params(p16):
    X0 = gff.sample_gff(p16, 8)
    traj = dynamics.run_trajectory(p16, X0, np.zeros_like(X0), 0.1, 0.05, seed=1)
    with pytest.raises(TrajectoryMismatchError):
        dynamics.linearized_flow_Y0(traj, X0, p16.with_(mass=2.0))
