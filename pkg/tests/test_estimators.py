import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from expphi2 import gff
from expphi2.estimators import FejerSmoother, GFFSampler, RegularityEstimator, StationarySampler, WickTransformer


def test_sampler_and_transformers():
    s = GFFSampler(n=32, seed=4)
    with pytest.raises(NotFittedError):
        s.sample(2)
    X = s.fit().sample(300)
    assert X.shape == (300, 32, 32)
    W = WickTransformer(gamma=0.1, n=32).fit_transform(X)
    assert abs(W[:, 0, 0].mean() - 1) < 4 * W[:, 0, 0].std() / np.sqrt(300)
    Wf = WickTransformer(gamma=0.1, n=32, fejer=True).fit(X)
    assert Wf.constant_ < WickTransformer(gamma=0.1, n=32).fit(X).constant_
    Q = FejerSmoother(order=4, n=32).fit_transform(X[:2])
    assert Q.shape == (2, 32, 32)
    assert clone(s).get_params()["seed"] == 4


def test_regularity_estimator():
    X = GFFSampler(n=64, seed=1).fit().sample(150)
    est = RegularityEstimator().fit(X)
    assert est.regularity_ == pytest.approx(0.0, abs=0.2) and est.stderr_ > 0
    with pytest.raises(ValueError):
        RegularityEstimator(levels="scaling").fit(X)


def test_stationary_sampler():
    ss = StationarySampler(gamma=0.25, n=16, eps_cells=2, dt=0.05, n_samples=4, n_chains=2, burn_in=1.0,
                           spacing=0.5).fit()
    X, Y = ss.sample()
    assert X.shape == (4, 16, 16) and Y.max() <= 1e-12
