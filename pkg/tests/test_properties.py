"""Property-based checks of algebraic invariants."""

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from expphi2 import besov, config, fields, functionals as fn, params as P
from expphi2.besov import BesovIndex
from expphi2.stats import RunningStats

GRID = fields.GridSpec(1.0, 16)
finite = st.floats(-10, 10, allow_nan=False)
field16 = arrays(np.float64, (16, 16), elements=finite)


@settings(max_examples=30, deadline=None)
@given(field16, st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_besov_norm_homogeneous(f, c):
    idx = BesovIndex(0.3, 2.0, 2.0)
    assert np.isclose(besov.besov_norm(c * f, GRID, idx), abs(c) * besov.besov_norm(f, GRID, idx), rtol=1e-9,
                      atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(field16, st.floats(0.1, 4))
def test_V1_homogeneous_degree_p(f, c):
    v = fn.lyapunov_V1(f, 0.5, 2.0, 2, 1.0, GRID)
    assert np.isclose(fn.lyapunov_V1(c * f, 0.5, 2.0, 2, 1.0, GRID), c**2 * v, rtol=1e-9, atol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40), st.integers(1, 39), st.integers(1, 39))
def test_running_stats_merge_associative(xs, i, j):
    i, j = sorted((min(i, len(xs) - 1), min(j, len(xs) - 1)))
    a, b, c = xs[:i], xs[i:j], xs[j:]
    left = RunningStats.from_samples(a).merge(RunningStats.from_samples(b)).merge(RunningStats.from_samples(c))
    right = RunningStats.from_samples(a).merge(RunningStats.from_samples(b).merge(RunningStats.from_samples(c)))
    whole = RunningStats.from_samples(xs)
    for s in (left, right):
        assert s.count == whole.count
        assert np.isclose(s.mean, whole.mean, atol=1e-9)
        assert np.isclose(s.m2, whole.m2, rtol=1e-7, atol=1e-6)


@given(st.floats(0.001, 1.99), st.floats(0.001, 1.99))
def test_s_window_shrinks_with_gamma(g1, g2):
    lo, hi = sorted((g1, g2))
    assert P.s_interval(hi).hi <= P.s_interval(lo).hi + 1e-15


@given(st.fixed_dictionaries({
    "model": st.fixed_dictionaries({"gamma": st.floats(0, 1.9), "n": st.sampled_from([16, 32, 64])}),
    "run": st.fixed_dictionaries({"seed": st.integers(0, 2**63), "scheme": st.sampled_from(["lie", "strang"])}),
}))
def test_config_yaml_roundtrip(raw):
    import yaml

    cfg = config.resolve(raw)
    assert config.resolve(yaml.safe_load(config.dump_yaml(cfg))) == cfg
