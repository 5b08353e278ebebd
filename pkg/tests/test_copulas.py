import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kendalltau, multivariate_t, t as student

from extremesim.copulas import (FAMILIES, BivariateCopula, candidates, density_grid,
                                fit_family, n_params, select_copula)
from extremesim.errors import DataError

CASES = [
    BivariateCopula("gaussian", 0.6),
    BivariateCopula("gaussian", -0.4),
    BivariateCopula("student_t", 0.5, 4.0),
    BivariateCopula("student_t", -0.3, 2.5),
    BivariateCopula("frank", 5.0),
    BivariateCopula("frank", -3.0),
] + [BivariateCopula("clayton", 2.0, 0.0, r) for r in (0, 90, 180, 270)] \
  + [BivariateCopula("gumbel", 1.8, 0.0, r) for r in (0, 90, 180, 270)]


def _ids(c):
    return c.label() + f"_{c.par:g}"


def t_copula_sample(rho, nu, n, seed):
    """Independent construction: multivariate t mapped through its marginal CDF."""
    x = multivariate_t(loc=[0, 0], shape=[[1, rho], [rho, 1]], df=nu).rvs(
        size=n, random_state=np.random.default_rng(seed))
    return student.cdf(x, nu)


@pytest.mark.parametrize("cop", CASES, ids=_ids)
def test_hfunc2_is_integral_of_density(cop):
    for v in (0.2, 0.7):
        for u in (0.1, 0.5, 0.9):
            num = integrate.quad(lambda s: cop.pdf(s, v), 0, u, epsabs=1e-10, limit=200)[0]
            assert cop.hfunc2(u, v) == pytest.approx(num, abs=2e-6)


@pytest.mark.parametrize("cop", CASES, ids=_ids)
def test_hfunc1_is_integral_of_density(cop):
    for u in (0.3, 0.8):
        for v in (0.15, 0.6):
            num = integrate.quad(lambda s: cop.pdf(u, s), 0, v, epsabs=1e-10, limit=200)[0]
            assert cop.hfunc1(u, v) == pytest.approx(num, abs=2e-6)


@pytest.mark.parametrize("cop", CASES, ids=_ids)
def test_inverse_h_functions(cop):
    g = np.linspace(0.01, 0.99, 25)
    w, x = np.meshgrid(g, g)
    np.testing.assert_allclose(cop.hfunc2(cop.hinv2(w, x), x), w, atol=1e-7)
    np.testing.assert_allclose(cop.hfunc1(x, cop.hinv1(w, x)), w, atol=1e-7)


@pytest.mark.parametrize("cop", CASES, ids=_ids)
def test_density_integrates_to_one(cop):
    u, v, d = density_grid(cop, 400)
    assert d.mean() == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("cop", CASES, ids=_ids)
def test_tau_matches_simulation(cop):
    s = cop.simulate(20_000, np.random.default_rng(1))
    assert kendalltau(s[:, 0], s[:, 1])[0] == pytest.approx(cop.tau, abs=0.015)


def test_tau_closed_forms():
    assert BivariateCopula("gaussian", 0.5).tau == pytest.approx(2 / np.pi * np.arcsin(0.5))
    assert BivariateCopula("clayton", 2.0).tau == pytest.approx(0.5)
    assert BivariateCopula("gumbel", 2.0).tau == pytest.approx(0.5)
    assert BivariateCopula("gumbel", 2.0, 0.0, 90).tau == pytest.approx(-0.5)
    assert BivariateCopula("independence").tau == 0.0


def test_tail_dependence_closed_forms():
    rho, nu = 0.5, 4.0
    lam = 2 * student.cdf(-np.sqrt((nu + 1) * (1 - rho) / (1 + rho)), nu + 1)
    up, low = BivariateCopula("student_t", rho, nu).tail_dependence
    assert up == pytest.approx(lam) and low == pytest.approx(lam)
    assert BivariateCopula("clayton", 2.0).tail_dependence == pytest.approx((0.0, 2 ** -0.5))
    assert BivariateCopula("clayton", 2.0, 0.0, 180).tail_dependence == pytest.approx((2 ** -0.5, 0.0))
    assert BivariateCopula("gumbel", 2.0).tail_dependence == pytest.approx((2 - 2 ** 0.5, 0.0))
    assert BivariateCopula("gaussian", 0.9).tail_dependence == (0.0, 0.0)


def test_t_tail_dependence_against_numerical_limit():
    cop = BivariateCopula("student_t", 0.5, 4.0)
    q = 1e-5
    # lambda_lower = lim C(q, q) / q = lim h-based integral
    c_qq = integrate.quad(lambda s: cop.hfunc1(s, q), 0, q, epsabs=1e-16)[0]
    assert c_qq / q == pytest.approx(cop.tail_dependence[1], abs=0.01)


def test_invalid_parameters():
    with pytest.raises(DataError):
        BivariateCopula("gaussian", 1.5)
    with pytest.raises(DataError):
        BivariateCopula("student_t", 0.5, 1.0)
    with pytest.raises(DataError):
        BivariateCopula("frank", 0.0)
    with pytest.raises(DataError):
        BivariateCopula("gaussian", 0.5, 0.0, 90)
    with pytest.raises(DataError):
        BivariateCopula("tawn", 1.0)
    with pytest.raises(DataError):
        candidates(("tawn",))


def test_candidates_follow_tau_sign():
    assert ("clayton", 0) in candidates(tau=0.3) and ("clayton", 90) not in candidates(tau=0.3)
    assert ("gumbel", 270) in candidates(tau=-0.3)
    assert n_params("student_t") == 2 and n_params("independence") == 0


def test_t_copula_refit():
    s = t_copula_sample(0.5, 4.0, 5000, 2)
    fit = fit_family("student_t", s[:, 0], s[:, 1])
    assert fit.copula.par == pytest.approx(0.5, abs=0.05)
    assert 2.0 <= fit.copula.par2 <= 8.0
    best, failed = select_copula(s[:, 0], s[:, 1])
    assert best.copula.family == "student_t" and not failed


def test_independence_selected_on_uniforms():
    u = np.random.default_rng(3).uniform(size=(5000, 2))
    best, _ = select_copula(u[:, 0], u[:, 1])
    assert best.copula.family == "independence"
    assert best.aic == 0.0


@pytest.mark.parametrize("cop", [c for c in CASES if c.family != "student_t"], ids=_ids)
def test_refit_closure_in_tau(cop):
    s = cop.simulate(5000, np.random.default_rng(4))
    fit = fit_family(cop.family, s[:, 0], s[:, 1], cop.rotation)
    assert fit.copula.tau == pytest.approx(cop.tau, abs=0.05)
    assert fit.aic == pytest.approx(2 * fit.copula.n_par - 2 * fit.loglik)


def test_selection_picks_generating_family():
    for cop in (BivariateCopula("clayton", 3.0, 0.0, 180), BivariateCopula("frank", -6.0)):
        s = cop.simulate(3000, np.random.default_rng(5))
        best, _ = select_copula(s[:, 0], s[:, 1], FAMILIES)
        assert best.copula.label() == cop.label()
