import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baryalign.barycenter import (
    BarycenterConfig,
    BarycenterState,
    compute_barycenter,
    init_support,
    update_locations,
    update_weights,
)
from baryalign.embed_io import DiscreteDistribution, squared_euclidean_cost
from baryalign.ot import Coupling, SinkhornConfig, cost_scale, exact_ot_oracle, sinkhorn

SHARP = SinkhornConfig(epsilon=1e-3)


def uniform_cloud(X):
    X = np.asarray(X, dtype=float)
    return DiscreteDistribution(X, np.full(len(X), 1.0 / len(X)))


def test_init_support_examples():
    d = init_support(4, BarycenterConfig(seed=7), s=1)
    assert d.support.shape == (1, 4) and d.mass.tolist() == [1.0]
    a = init_support(2, BarycenterConfig(seed=3, support_size=3))
    b = init_support(2, BarycenterConfig(seed=3, support_size=3))
    assert a.support.tobytes() == b.support.tobytes()
    np.testing.assert_array_equal(a.mass, np.full(3, 1 / 3))
    with pytest.raises(ValueError):
        init_support(2, BarycenterConfig())


def test_init_support_clt_bound():
    s, d = 10000, 300
    Y = init_support(d, BarycenterConfig(seed=11), s=s).support
    assert abs(Y.mean()) <= 3 / np.sqrt(s * d)


def test_config_validation():
    with pytest.raises(ValueError):
        BarycenterConfig(lam=(0.7, 0.7))
    with pytest.raises(ValueError):
        BarycenterConfig(support_size=0)
    assert BarycenterConfig().resolve_support_size([100, 300]) == 400
    assert BarycenterConfig().resolve_step(4) == 0.125


def _state(Y, b, couplings, lam=None):
    return BarycenterState(DiscreteDistribution(Y, b), couplings, 0.0, lam=lam)


def test_update_locations_single_input(rng):
    X = rng.normal(size=(5, 3))
    mu = uniform_cloud(X)
    st_ = _state(rng.normal(size=(5, 3)), mu.mass, [Coupling.diagonal(mu.mass)])
    np.testing.assert_allclose(update_locations(st_, [mu]), X, atol=1e-15)


def test_update_locations_midpoint():
    a = DiscreteDistribution([[0.0, 0.0]], [1.0])
    b = DiscreteDistribution([[2.0, 0.0]], [1.0])
    one = Coupling(np.ones((1, 1)), np.ones(1), np.ones(1))
    st_ = _state(np.zeros((1, 2)), [1.0], [one, one], lam=np.array([0.5, 0.5]))
    np.testing.assert_allclose(update_locations(st_, [a, b]), [[1.0, 0.0]])


def test_update_locations_dead_points_frozen():
    mu = DiscreteDistribution([[1.0]], [1.0])
    Y = np.array([[0.0], [5.0]])
    b = np.array([1.0 - 1e-13, 1e-13])
    P = Coupling(np.array([[1.0 - 1e-13, 1e-13]]), np.ones(1), b)
    out = update_locations(_state(Y, b, [P]), [mu])
    assert out[1, 0] == 5.0


def test_quantile_oracle_1d(rng):
    """Two-point inputs on a line: W2 barycenter averages sorted quantiles."""
    for _ in range(5):
        x1, x2 = np.sort(rng.normal(size=2)), np.sort(rng.normal(size=2) + 3)
        mus = [uniform_cloud(x1[:, None]), uniform_cloud(x2[:, None])]
        res = compute_barycenter(mus, BarycenterConfig(support_size=2, max_iters=50, location_tolerance=1e-9),
                                 SinkhornConfig(epsilon=1e-4))
        np.testing.assert_allclose(np.sort(res.support[:, 0]), (x1 + x2) / 2, atol=1e-3)


def test_update_weights_zero_gradient():
    b = np.array([0.2, 0.3, 0.5])
    P = Coupling(np.outer([1.0], b), np.ones(1), b, f=np.zeros(1), g=np.full(3, 7.0))
    out = update_weights(_state(np.zeros((3, 1)), b, [P]), BarycenterConfig(), scale=1.0)
    np.testing.assert_allclose(out, b, atol=1e-15)


def _entropic(mu, Y, b, cfg):
    C = squared_euclidean_cost(mu.support, Y)
    P = sinkhorn(mu.mass, b, C, cfg)
    nz = P.matrix[P.matrix > 0]
    return P, P.cost(C) + P.epsilon * np.sum(nz * (np.log(nz) - 1))


def test_update_weights_decreases_objective(rng):
    X = rng.normal(size=(6, 2))
    mu = DiscreteDistribution(X, np.full(6, 1 / 6))
    b = rng.dirichlet(np.ones(6))
    cfg = SinkhornConfig(epsilon=0.05, relative=False, tolerance=1e-12)
    P, before = _entropic(mu, X, b, cfg)
    # a short step: the objective is nonsmooth in b far from the input mass
    new_b = update_weights(_state(X, b, [P]), BarycenterConfig(weight_step=1e-2), scale=1.0)
    _, after = _entropic(mu, X, new_b, cfg)
    assert after <= before


def test_outside_mass_decays():
    # support points off S sit well away from it
    Y = np.array([[0, 0], [3, 3], [1, 0], [-3, 2], [2, -3], [0, 1], [-2, -3], [4, 0]], dtype=float)
    inside = [0, 2, 5]
    mus = [DiscreteDistribution(Y[inside], np.full(3, 1 / 3)),
           DiscreteDistribution(Y[inside], np.array([0.5, 0.25, 0.25]))]
    scale = np.mean([cost_scale(squared_euclidean_cost(mu.support, Y)) for mu in mus])
    b = np.full(8, 1 / 8)
    cfg = SinkhornConfig(epsilon=0.05, relative=False)
    outside = []
    for _ in range(10):
        Ps = [_entropic(mu, Y, b, cfg)[0] for mu in mus]
        b = update_weights(_state(Y, b, Ps, lam=np.array([0.5, 0.5])), BarycenterConfig(), scale=scale)
        assert abs(b.sum() - 1) <= 1e-9
        outside.append(np.delete(b, inside).sum())
    assert np.all(np.diff(outside) < 0)


def test_two_point_masses_weighted():
    mus = [DiscreteDistribution([[0.0, 0.0]], [1.0]), DiscreteDistribution([[4.0, 0.0]], [1.0])]
    res = compute_barycenter(mus, BarycenterConfig(support_size=1, lam=(0.75, 0.25)))
    np.testing.assert_allclose(res.support, [[1.0, 0.0]], atol=1e-6)


def test_identical_inputs(rng):
    X = rng.normal(size=(6, 2)) * 2
    mu = uniform_cloud(X)
    res = compute_barycenter([mu, mu], BarycenterConfig(support_size=6, max_iters=60, location_tolerance=1e-8),
                             SinkhornConfig(epsilon=1e-3))
    eps = res.couplings[0].epsilon
    slack = eps * np.log(6 * 6)
    assert res.objective <= 2 * slack
    D = np.sqrt(squared_euclidean_cost(res.support, X))
    hausdorff = max(D.min(0).max(), D[res.mass > 1e-6].min(1).max())
    assert hausdorff <= 1e-2


def _grid_oracle(x, z, grid):
    """Exact lattice search for uniform 3-point clouds and a uniform 3-point support.

    For fixed support the optimal plans are permutations, so the search splits
    into per-point lattice minimizations under each pair of matchings.
    """
    best_pair = np.empty((3, 3))
    for a, b in itertools.product(range(3), range(3)):
        c = 0.5 * ((grid - x[a]) ** 2).sum(1) + 0.5 * ((grid - z[b]) ** 2).sum(1)
        best_pair[a, b] = c.min()
    return min(best_pair[np.arange(3), list(p)].sum() / 3 for p in itertools.permutations(range(3)))


def test_grid_search_oracle(rng):
    ticks = np.linspace(-2, 2, 21)
    grid = np.array(list(itertools.product(ticks, ticks)))
    for _ in range(3):
        x = rng.uniform(-1.5, 1.5, size=(3, 2))
        z = rng.uniform(-1.5, 1.5, size=(3, 2))
        res = compute_barycenter([uniform_cloud(x), uniform_cloud(z)],
                                 BarycenterConfig(support_size=3, max_iters=50), SHARP)
        oracle = _grid_oracle(x, z, grid)
        # closed form for two uniform clouds: a quarter of the exact W2^2 between them
        closed = exact_ot_oracle(np.full(3, 1 / 3), np.full(3, 1 / 3), squared_euclidean_cost(x, z))[1] / 4
        assert closed <= oracle + 1e-12
        assert res.objective <= 1.05 * oracle


def test_objective_monotone(rng):
    for seed in range(3):
        r = np.random.default_rng(seed)
        mus = [uniform_cloud(r.normal(size=(30, 3)) + i) for i in range(3)]
        res = compute_barycenter(mus, BarycenterConfig(support_size=30, seed=seed),
                                 SinkhornConfig(epsilon=1e-2, tolerance=1e-10))
        ent = [h["entropic_objective"] for h in res.history]
        assert np.all(np.diff(ent) <= 1e-6)
        assert res.objective >= 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translation_equivariance(seed):
    r = np.random.default_rng(seed)
    mus = [uniform_cloud(r.normal(size=(8, 2))) for _ in range(2)]
    v = r.normal(size=2) * 3
    shifted = [uniform_cloud(mu.support + v) for mu in mus]
    cfg = BarycenterConfig(support_size=8, seed=seed)
    a = compute_barycenter(mus, cfg)
    b = compute_barycenter(shifted, cfg)
    np.testing.assert_allclose(b.support, a.support + v, atol=1e-6)


def test_unweighted_keeps_uniform_mass(rng):
    mus = [uniform_cloud(rng.normal(size=(10, 2))) for _ in range(3)]
    res = compute_barycenter(mus, BarycenterConfig(support_size=7, optimize_weights=False))
    assert res.mass.tolist() == [1 / 7] * 7
    weighted = compute_barycenter(mus, BarycenterConfig(support_size=7))
    assert abs(weighted.mass.sum() - 1) <= 1e-9
    for P in weighted.couplings:
        assert P.violation() <= 1e-6


def test_rejects_mixed_dimensions():
    with pytest.raises(ValueError, match="dimension"):
        compute_barycenter([uniform_cloud([[0.0]]), uniform_cloud([[0.0, 1.0]])])
    with pytest.raises(ValueError):
        compute_barycenter([])
