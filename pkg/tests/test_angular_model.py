import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kendalltau, kstest, multivariate_normal, norm

from extremesim.angular_model import (AngularModel, AngularPCA, ScoreMarginals, VineEdge,
                                      VineModel, fit_angular_model, fit_pca, fit_vine,
                                      pseudo_observations, reconstruct_theta, sample_angles,
                                      sample_vine, select_J)
from extremesim.copulas import BivariateCopula
from extremesim.errors import DataError
from extremesim.polar import cost


def _angles(n=400, T=12, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, T)
    x = 1 + 0.3 * rng.standard_normal((n, 1)) * np.sin(np.pi * t) \
        + 0.1 * rng.standard_normal((n, 1)) * np.cos(np.pi * t) + 0.01 * rng.standard_normal((n, T))
    return x / cost(x)[:, None]


def test_pca_invariants():
    a = _angles()
    p = fit_pca(a, J=3)
    V = p.eigenvectors
    np.testing.assert_allclose(V.T @ V, np.eye(a.shape[1]), atol=1e-10)
    assert np.all(np.diff(p.eigenvalues) <= 0)
    xc = a - a.mean(0)
    assert p.eigenvalues.sum() == pytest.approx((xc ** 2).sum() / a.shape[0], abs=1e-8)
    curve = p.explained_ratio()
    assert np.all(np.diff(curve) >= -1e-15) and curve[-1] == pytest.approx(1.0, abs=1e-8)
    assert p.scores.shape == (400, 3)


def test_pca_matches_numpy_svd():
    a = _angles(seed=1)
    p = fit_pca(a, J=2)
    s = np.linalg.svd(a - a.mean(0), compute_uv=False)
    np.testing.assert_allclose(p.eigenvalues, s ** 2 / a.shape[0], atol=1e-12)


def test_pca_full_reconstruction():
    a = _angles(seed=2)
    p = fit_pca(a, J=a.shape[1])
    np.testing.assert_allclose(p.reconstruct(p.scores), a, atol=1e-8)


def test_pca_rank_one():
    d = np.linspace(0, 1, 6)
    a = np.outer(np.linspace(0.5, 1.5, 30), d) + 2.0
    p = fit_pca(a, J=1)
    np.testing.assert_allclose(p.eigenvalues[1:], 0.0, atol=1e-10)
    with pytest.raises(DataError):
        fit_pca(a[:1])


def _pca_with(lam):
    lam = np.asarray(lam, dtype=float)
    T = lam.size
    return AngularPCA(np.zeros(T), np.eye(T), lam, 1, np.zeros((0, 1)))


def test_select_J_examples():
    assert select_J(_pca_with([10] + [1e-6] * 9)) == 1
    # with T equal eigenvalues the relative drop is 1 / (T - J), so the
    # criterion never triggers for T <= 5 and J falls back to the cap
    assert select_J(_pca_with([1.0] * 5)) == 5
    assert select_J(_pca_with([1.0] * 3), max_J=5) == 3
    # relative drops 2/3.35, 1/1.35, then 0.05/0.35 < 0.2
    assert select_J(_pca_with([4, 2, 1] + [0.05] * 7)) == 3


def test_score_marginals_roundtrip():
    s = np.random.default_rng(3).standard_normal((300, 2))
    m = ScoreMarginals.fit(s)
    np.testing.assert_allclose(m.from_uniform(m.to_uniform(s)), s, atol=1e-12)


def test_pseudo_observations():
    u = pseudo_observations(np.array([[3.0, 1.0], [1.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(u, [[0.75, 0.25], [0.25, 0.5], [0.5, 0.75]])


def _gaussian_vine(r12, r23, r13_2):
    e = lambda t, p, c, r: VineEdge(t, p, c, BivariateCopula("gaussian", r), 0.0, 0.0)
    return VineModel(3, ((e(1, (1, 2), (), r12), e(1, (2, 3), (), r23)),
                         (e(2, (1, 3), (2,), r13_2),)))


def _implied_corr(r12, r23, r13_2):
    r13 = r12 * r23 + r13_2 * np.sqrt((1 - r12 ** 2) * (1 - r23 ** 2))
    return np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1]])


def test_gaussian_vine_density_equals_gaussian_copula():
    vine = _gaussian_vine(0.5, -0.3, 0.4)
    R = _implied_corr(0.5, -0.3, 0.4)
    u = np.random.default_rng(4).uniform(0.02, 0.98, (200, 3))
    z = norm.ppf(u)
    oracle = multivariate_normal(np.zeros(3), R).logpdf(z) - norm.logpdf(z).sum(1)
    np.testing.assert_allclose(vine.logpdf(u), oracle, atol=1e-8)


def test_gaussian_vine_sampling_has_implied_correlation():
    vine = _gaussian_vine(0.5, -0.3, 0.4)
    u = sample_vine(vine, 20_000, np.random.default_rng(5))
    np.testing.assert_allclose(np.corrcoef(norm.ppf(u).T), _implied_corr(0.5, -0.3, 0.4), atol=0.02)


def test_independence_vine_samples_are_uniform():
    ind = lambda t, p, c: VineEdge(t, p, c, BivariateCopula(), 0.0, 0.0)
    vine = VineModel(3, ((ind(1, (1, 2), ()), ind(1, (2, 3), ())), (ind(2, (1, 3), (2,)),)))
    n = 2000
    u = sample_vine(vine, n, np.random.default_rng(6))
    for j in range(3):
        assert kstest(u[:, j], "uniform").statistic < 1.63 / np.sqrt(n)


def test_t_edge_sampled_tau():
    edge = VineEdge(1, (1, 2), (), BivariateCopula("student_t", 0.5, 4.0), 0.0, 0.0)
    u = sample_vine(VineModel(2, ((edge,),)), 5000, np.random.default_rng(7))
    assert kendalltau(u[:, 0], u[:, 1])[0] == pytest.approx(2 / np.pi * np.arcsin(0.5), abs=0.03)


def test_fit_vine_recovers_gaussian_vine():
    vine = _gaussian_vine(0.6, 0.4, -0.5)
    u = sample_vine(vine, 3000, np.random.default_rng(8))
    fit = fit_vine(u, families=("independence", "gaussian", "clayton", "frank"))
    got = [e.copula.par for e in fit.edges]
    assert [e.copula.family for e in fit.edges] == ["gaussian"] * 3
    np.testing.assert_allclose(got, [0.6, 0.4, -0.5], atol=0.05)
    assert [e.conditioning for e in fit.edges] == [(), (), (2,)]


def test_fit_vine_independent_and_errors():
    u = np.random.default_rng(9).uniform(size=(2000, 3))
    fit = fit_vine(u, families=("independence", "gaussian", "clayton"))
    assert all(e.copula.family == "independence" for e in fit.edges)
    with pytest.raises(DataError):
        fit_vine(np.c_[u[:, :2], np.ones(2000)])
    with pytest.raises(DataError):
        fit_vine(u[:20])


def test_vine_dict_roundtrip_and_consistency_check():
    vine = _gaussian_vine(0.5, -0.3, 0.4)
    d = vine.to_dict()
    back = VineModel.from_dict(d)
    assert [e.copula for e in back.edges] == [e.copula for e in vine.edges]
    d["edges"][0]["tau"] += 0.1
    with pytest.raises(DataError):
        VineModel.from_dict(d)


def test_reconstruct_theta_examples():
    a = _angles(seed=10)
    model = fit_angular_model(a, J=3, families=("independence", "gaussian"))
    u = model.marginals.to_uniform(model.pca.scores[:1])[0]
    proj = model.pca.reconstruct(model.pca.scores[0])
    np.testing.assert_allclose(reconstruct_theta(model.pca, model.marginals, u), proj / cost(proj),
                               atol=1e-10)
    med = np.full(3, 0.5)
    direct = model.pca.reconstruct(model.marginals.from_uniform(med)[0])
    np.testing.assert_allclose(reconstruct_theta(model.pca, model.marginals, med),
                               direct / cost(direct), atol=1e-12)
    with pytest.raises(DataError):
        reconstruct_theta(model.pca, model.marginals, [0.5, 0.5])


_MODEL = fit_angular_model(_angles(seed=11), J=2, families=("independence", "gaussian"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sampled_angles_have_unit_cost(seed):
    th = sample_angles(_MODEL, 50, np.random.default_rng(seed))
    np.testing.assert_allclose(cost(th), 1.0, atol=1e-10)


def test_angular_model_dict_roundtrip():
    a = _angles(seed=11)
    back = AngularModel.from_dict(_MODEL.to_dict(), a)
    np.testing.assert_allclose(back.pca.scores, _MODEL.pca.scores, atol=1e-12)
    r1 = sample_angles(_MODEL, 20, np.random.default_rng(1))
    r2 = sample_angles(back, 20, np.random.default_rng(1))
    np.testing.assert_array_equal(r1, r2)


def test_single_component_model():
    m = fit_angular_model(_angles(seed=12), J=1)
    assert m.vine.dim == 1
    assert sample_angles(m, 10, np.random.default_rng(0)).shape == (10, 12)
