import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp

from diffintersort.score import step_grad
from diffintersort.sinkhorn import (
    SinkhornConfig,
    grad_check,
    hard_mask_from_potential,
    hungarian,
    order_mask,
    order_template,
    sinkhorn_forward,
    sinkhorn_operator,
)


def reference_sinkhorn(M, t, T):
    """Plain log-domain Sinkhorn: row then column normalisation, T times."""
    X = M / t
    for _ in range(T):
        X = X - logsumexp(X, axis=1, keepdims=True)
        X = X - logsumexp(X, axis=0, keepdims=True)
    return np.exp(X)


@pytest.mark.parametrize("d,scale,dense", [(5, 1.0, True), (12, 0.2, True), (40, 1.0, False), (40, 0.05, False)])
def test_forward_matches_reference(rng, d, scale, dense):
    M = rng.normal(0, scale, (d, d))
    cfg = SinkhornConfig(t=0.05, n_iter=60)
    got = sinkhorn_forward(M, cfg, dense=dense).soft
    np.testing.assert_allclose(got, reference_sinkhorn(M, 0.05, 60), atol=1e-12)


def test_doubly_stochastic_at_d100(rng):
    for _ in range(3):
        S = sinkhorn_operator(rng.uniform(size=(100, 100)))
        assert np.max(np.abs(S.sum(axis=0) - 1)) < 1e-6
        assert np.max(np.abs(S.sum(axis=1) - 1)) < 1e-6


def test_row_sum_error_shrinks_with_sweeps(rng):
    # N(0, 1) / 0.05 is far from converged after 500 sweeps, but it keeps improving
    M = rng.normal(size=(60, 60))
    errs = [np.abs(sinkhorn_operator(M, SinkhornConfig(n_iter=T)).sum(axis=1) - 1).max() for T in (50, 500, 5000)]
    assert errs[0] > errs[1] > errs[2]


def test_sparse_path_is_bitwise_dense(rng):
    for scale in (0.05, 0.5, 3.0):
        p = rng.normal(0, scale, 60)
        M = np.outer(p, np.arange(1, 61.0))
        cfg = SinkhornConfig()
        a = sinkhorn_forward(M, cfg, dense=True)
        b = sinkhorn_forward(M, cfg, dense=False)
        np.testing.assert_array_equal(a.log_soft, b.log_soft)
        G = rng.normal(size=(60, 60))
        np.testing.assert_array_equal(a.vjp(G), b.vjp(G))


@pytest.mark.parametrize("dense", [True, False])
def test_vjp_matches_finite_differences(rng, dense):
    d = 6
    M = rng.normal(0, 0.05, (d, d))
    G = rng.normal(size=(d, d))
    cfg = SinkhornConfig(t=0.05, n_iter=40)

    def f(m):
        res = sinkhorn_forward(m.reshape(d, d), cfg, dense=dense)
        return float(np.sum(G * res.soft)), res.vjp(G).ravel()

    assert grad_check(f, M.ravel()) < 1e-6


def test_truncated_vjp_approaches_full(rng):
    d = 8
    M = np.outer(rng.normal(0, 0.1, d), np.arange(1, d + 1.0))
    G = rng.normal(size=(d, d))
    full = sinkhorn_forward(M, SinkhornConfig()).vjp(G)
    trunc = sinkhorn_forward(M, SinkhornConfig(grad_iter=50)).vjp(G)
    assert trunc.shape == full.shape
    assert np.all(np.isfinite(trunc))


def test_config_validation():
    with pytest.raises(ValueError):
        SinkhornConfig(t=0)
    with pytest.raises(ValueError):
        SinkhornConfig(n_iter=0)
    with pytest.raises(ValueError):
        sinkhorn_forward(np.ones((2, 3)))
    with pytest.raises(ValueError):
        sinkhorn_forward(np.array([[np.nan, 0], [0, 0]]))


def test_hungarian_matches_enumeration(rng):
    import itertools

    for _ in range(20):
        M = rng.normal(size=(5, 5))
        best = max(itertools.permutations(range(5)), key=lambda s: sum(M[i, s[i]] for i in range(5)))
        P = hungarian(M)
        assert [int(np.argmax(r)) for r in P] == list(best)


def test_hungarian_beats_random_permutations(rng):
    for d in (7, 30):
        M = rng.normal(size=(d, d))
        value = np.sum(hungarian(M) * M)
        for _ in range(1000):
            assert value >= M[np.arange(d), rng.permutation(d)].sum()


def test_hungarian_with_tied_optima():
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert np.sum(hungarian(M) * M) == 2.0


def test_lower_temperature_moves_soft_towards_hard(rng):
    for _ in range(10):
        p = rng.normal(size=8)
        M = np.outer(p - p.mean(), np.arange(1, 9.0))
        hard = hungarian(M)
        dist = [np.linalg.norm(sinkhorn_operator(M, SinkhornConfig(t=t)) - hard) for t in (1.0, 0.2, 0.05)]
        assert dist[0] > dist[1] > dist[2]


def test_order_template_and_spec_example():
    np.testing.assert_array_equal(order_template(3), [[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    mask, _ = hard_mask_from_potential(np.array([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(mask, [[0, 1, 1], [0, 0, 0], [0, 1, 0]])


@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-5, 5), unique=True))
def test_hard_mask_is_step_of_potential(p):
    mask, soft = hard_mask_from_potential(p)
    np.testing.assert_array_equal(mask, step_grad(p))
    d = p.size
    assert mask.sum() == d * (d - 1) / 2
    assert np.all(soft >= 0)


def test_ties_rejected():
    with pytest.raises(ValueError, match="tied"):
        order_mask(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError, match="mode"):
        order_mask(np.array([1.0, 0.0]), mode="gumbel")


@pytest.mark.parametrize("mode", ["straight-through", "soft"])
def test_mask_backward_zero_for_zero_upstream(rng, mode):
    om = order_mask(rng.normal(size=5), mode=mode)
    np.testing.assert_array_equal(om.backward(np.zeros((5, 5))), np.zeros(5))


def test_soft_mask_gradient_matches_finite_differences(rng):
    d = 7
    G = rng.normal(size=(d, d))
    cfg = SinkhornConfig()

    def f(p):
        om = order_mask(p, cfg, "soft")
        return float(np.sum(G * om.mask)), om.backward(G)

    for _ in range(3):
        assert grad_check(f, rng.normal(0, 0.1, d)) < 1e-4


def test_straight_through_gradient_equals_all_soft_gradient(rng):
    for d in (3, 6, 12):
        p = rng.normal(0, 0.1, d)
        G = rng.normal(size=(d, d))
        st = order_mask(p, SinkhornConfig(), "straight-through")
        soft = order_mask(p, SinkhornConfig(), "soft")
        assert set(np.unique(st.mask)) <= {0.0, 1.0}
        np.testing.assert_array_equal(st.backward(G), soft.backward(G))


def test_grad_check_step_bounds():
    with pytest.raises(ValueError):
        grad_check(lambda x: (0.0, x), np.zeros(2), h=1e-9)
    assert grad_check(lambda x: (float(x @ x), 2 * x), np.array([1.0, -2.0])) < 1e-8


def test_sub_resolution_gaps_still_give_the_step_mask():
    for p in ([2.1e-69, 0.0], [1e5, 1e5 + 1e-10, 0.0], [0.0, 5e-324, -5e-324]):
        p = np.array(p)
        mask, _ = hard_mask_from_potential(p)
        np.testing.assert_array_equal(mask, step_grad(p))
