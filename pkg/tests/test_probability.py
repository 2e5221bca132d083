import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stochbatch.autodiff import NonFiniteError
from stochbatch.models import build_mlp, build_small_cnn
from stochbatch.probability import (
    GroupStats,
    ProbabilityConfig,
    compute_group_stats,
    compute_probabilities,
    sample_indicators,
    sigmoid,
    update_probabilities,
)

grads = arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3, allow_nan=False))


def test_sigmoid_values():
    assert sigmoid(0.0, 3.7, 0.0) == 0.5
    assert sigmoid(12.0, 0.0, 0.0) == 0.5
    assert sigmoid(800.0, 1.0, 0.0) == 1.0
    assert sigmoid(-800.0, 1.0, 0.0) == 0.0


@given(x=st.floats(-50, 50), a=st.floats(-5, 5), g=st.floats(-50, 50))
def test_sigmoid_symmetry(x, a, g):
    assert sigmoid(x, a, g) + sigmoid(-x, a, -g) == pytest.approx(1.0, abs=1e-15)


def test_stats_hand_example():
    s = compute_group_stats(np.array([-1.0, 0.0, 1.0]), [0, 0, 0])
    assert s.mean[0] == pytest.approx(2 / 3, abs=1e-15)
    assert s.std[0] == pytest.approx(math.sqrt(2 / 9), abs=1e-15)


def test_weighted_global_mean():
    s = compute_group_stats(np.array([1.0, 5.0, 5.0, 5.0]), [0, 1, 1, 1])
    assert s.global_mean == 4.0


def test_sigma_guard():
    g = np.array([2.0, 2.0, 2.0, -1.0, 3.0])
    s = compute_group_stats(g, [0, 0, 0, 1, 1])
    assert s.std[0] == 0.0
    f = compute_probabilities(s, g, [0, 0, 0, 1, 1], ProbabilityConfig("local", alpha=5.0))
    assert np.all(f.v[:3] == 0) and np.all(f.p[:3] == 0.5)


def test_zero_cross_group_spread():
    g = np.array([1.0, -1.0, 1.0, 1.0])
    f = update_probabilities(g, [0, 0, 1, 1], ProbabilityConfig("global", lam=-4.0))
    assert np.all(f.mu_tilde == 0) and np.all(f.p == 0.5)


def test_combined_example():
    # group 0 is a single parameter with mu_tilde = 1 after standardization across
    # two equally sized groups; its own v is 0 by the sigma guard
    f = update_probabilities(np.array([2.0, 0.0]), [0, 1], ProbabilityConfig("combined", 0.1, -4.0))
    assert f.mu_tilde[0] == 1.0 and f.v[0] == 0.0
    assert abs(f.p[0] - 1 / (1 + math.exp(4))) <= 1e-12
    stats = GroupStats(np.array([3.0, 1.0]), np.array([0.5, 0.0]), np.array([2, 2]), 2.0, 1.0)
    f = compute_probabilities(stats, np.array([2.5, 3.5, 1.0, 1.0]), [0, 0, 1, 1], ProbabilityConfig())
    assert f.p[0] == pytest.approx(1 / (1 + math.exp(4 + 0.1)), abs=1e-15)


def test_constant_scheme_and_p_one():
    g = np.random.default_rng(0).normal(size=42)
    f = update_probabilities(g, build_mlp(2, [8], 2), ProbabilityConfig("constant", constant_p=1.0))
    assert np.all(f.p == 1.0)
    assert sample_indicators(f, np.random.default_rng(0)).all()


def test_config_validation():
    with pytest.raises(ValueError):
        ProbabilityConfig("softmax")
    with pytest.raises(ValueError):
        ProbabilityConfig(source="hessian")
    with pytest.raises(ValueError):
        ProbabilityConfig("constant", constant_p=0.0)


def test_non_finite_stats():
    with pytest.raises(NonFiniteError):
        update_probabilities(np.array([np.nan, 1.0]), [0, 0], ProbabilityConfig())


def test_model_layout_matches_id_layout():
    model = build_small_cnn((1, 8, 8), [4], 10)
    g = np.random.default_rng(1).normal(size=model.num_params)
    cfg = ProbabilityConfig()
    a = update_probabilities(g, model, cfg)
    b = update_probabilities(g, model.group_id, cfg)
    c = update_probabilities(g, list(model.groups), cfg)
    np.testing.assert_allclose(a.p, b.p, rtol=0, atol=1e-15)
    np.testing.assert_allclose(a.p, c.p, rtol=0, atol=1e-15)


def test_unsorted_group_ids():
    gid = np.array([1, 0, 1, 0, 0])
    g = np.array([3.0, 1.0, -5.0, 2.0, 0.5])
    s = compute_group_stats(g, gid)
    np.testing.assert_allclose(s.mean, [3.5 / 3, 4.0])


@st.composite
def grouped(draw):
    g = draw(grads)
    k = draw(st.integers(1, min(4, g.size)))
    cuts = sorted(draw(st.lists(st.integers(1, g.size - 1), min_size=k - 1, max_size=k - 1, unique=True)))
    gid = np.zeros(g.size, dtype=np.int64)
    for c in cuts:
        gid[c:] += 1
    return g, gid


@settings(max_examples=80, deadline=None)
@given(grouped())
def test_local_standardization(data):
    g, gid = data
    f = update_probabilities(g, gid, ProbabilityConfig("local"))
    s = compute_group_stats(g, gid)
    for gi in np.unique(gid):
        v = f.v[gid == gi]
        if s.std[gi] > 1e-9 * max(1.0, s.mean[gi]):
            assert abs(v.mean()) < 1e-9
            assert abs(v.std() - 1) < 1e-9


@settings(max_examples=60, deadline=None)
@given(grouped())
def test_global_constant_within_group(data):
    g, gid = data
    f = update_probabilities(g, gid, ProbabilityConfig("global"))
    for gi in np.unique(gid):
        p = f.p[gid == gi]
        assert p.max() - p.min() == 0


@settings(max_examples=60, deadline=None)
@given(grouped(), st.floats(0.01, 3), st.floats(-6, 6))
def test_combined_reductions_bitwise(data, alpha, lam):
    g, gid = data
    local = update_probabilities(g, gid, ProbabilityConfig("local", alpha=alpha, lam=lam)).p
    glob = update_probabilities(g, gid, ProbabilityConfig("global", alpha=alpha, lam=lam)).p
    c0 = update_probabilities(g, gid, ProbabilityConfig("combined", alpha=alpha, lam=0.0)).p
    a0 = update_probabilities(g, gid, ProbabilityConfig("combined", alpha=0.0, lam=lam)).p
    assert np.array_equal(local, c0)
    assert np.array_equal(glob, a0)


@settings(max_examples=40, deadline=None)
@given(grouped())
def test_half_when_slopes_vanish(data):
    g, gid = data
    f = update_probabilities(g, gid, ProbabilityConfig("combined", alpha=0.0, lam=0.0))
    assert np.all(f.p == 0.5)


@settings(max_examples=60, deadline=None)
@given(grads, st.floats(0.05, 5))
def test_monotone_in_v(g, alpha):
    gid = np.zeros(g.size, dtype=np.int64)
    f = update_probabilities(g, gid, ProbabilityConfig("local", alpha=alpha))
    order = np.argsort(f.v, kind="stable")
    v, p = f.v[order], f.p[order]
    strictly = np.diff(v) > 1e-9
    assert np.all(np.diff(p)[strictly] > 0)


@settings(max_examples=60, deadline=None)
@given(grads, st.floats(1e-3, 1e3))
def test_local_scale_invariance(g, c):
    gid = np.zeros(g.size, dtype=np.int64)
    assume(np.abs(g).std() > 1e-6 * max(1.0, np.abs(g).max()))
    a = update_probabilities(g, gid, ProbabilityConfig("local"))
    b = update_probabilities(c * g, gid, ProbabilityConfig("local"))
    np.testing.assert_allclose(a.p, b.p, rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(0.0, 100.0)), st.floats(0.01, 5))
def test_symmetric_scores_average_half(half, alpha):
    # magnitudes placed symmetrically about their mean give v closed under negation
    mags = np.concatenate([100.0 + half, 100.0 - half])
    gid = np.zeros(mags.size, dtype=np.int64)
    f = update_probabilities(mags, gid, ProbabilityConfig("local", alpha=alpha))
    assert f.p.mean() == pytest.approx(0.5, abs=1e-12)


def test_bernoulli_half_frequency():
    rng = np.random.default_rng(2024)
    chi = sample_indicators(np.full(100_000, 0.5), rng)
    assert abs(chi.mean() - 0.5) <= 3 * math.sqrt(0.25 / 1e5)


def test_indicators_deterministic_per_stream():
    p = np.linspace(0.05, 0.95, 30)
    a = sample_indicators(p, np.random.default_rng(7))
    b = sample_indicators(p, np.random.default_rng(7))
    assert np.array_equal(a, b) and a.dtype == bool
