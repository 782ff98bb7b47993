import numpy as np
import pytest
from scipy import integrate

from epr_spatial.assembly import assemble
from epr_spatial.exceptions import ConfigError, DiagnosticError
from epr_spatial.mcmc import (
    ChainOutput, MCMCConfig, _gaussian_block, adapt_scale, gelman_rubin, gelman_rubin_table,
    logistic_log_target, metropolis_logistic_step, run_mcmc,
)


def test_adapt_scale_examples():
    assert adapt_scale(22, 50, 0.44, 0.0, 1) == 0.0
    assert adapt_scale(50, 50, 0.44, 0.0, 1) == pytest.approx(0.01)
    assert adapt_scale(0, 50, 0.44, 0.0, 10_000) == pytest.approx(-0.01)
    np.testing.assert_allclose(adapt_scale(np.array([0, 50]), 50, 0.44, np.zeros(2), 40_000),
                               [-0.005, 0.005])
    with pytest.raises(ValueError):
        adapt_scale(1, 1, 0.44, 0.0, 0)


def _run_scalar_chain(z, mean, var, n, seed=0, adapt=True):
    rng = np.random.default_rng(seed)
    u = np.zeros(1)
    ls = np.zeros(1)
    out = np.empty(n)
    acc = np.zeros(1)
    total = 0
    for i in range(n):
        u, a = metropolis_logistic_step(u, z, mean, var, ls, rng)
        acc += a
        out[i] = u[0]
        if adapt and (i + 1) % 50 == 0:
            ls = adapt_scale(acc, 50, 0.44, ls, (i + 1) // 50)
            acc[:] = 0
        total += a[0]
    return out, ls


def test_metropolis_targets_logistic_conditional():
    z, mean, var = 1.0, 0.3, 2.0
    draws, ls = _run_scalar_chain(z, mean, var, 200_000)
    f = lambda u: np.exp(logistic_log_target(u, z, mean, var))
    norm = integrate.quad(f, -30, 30)[0]
    exact = integrate.quad(lambda u: u * f(u), -30, 30)[0] / norm
    kept = draws[20_000:]
    # autocorrelated chain: a generous band on the mean
    assert abs(kept.mean() - exact) < 0.05


def test_adaptation_reaches_target_band():
    draws, ls = _run_scalar_chain(0.0, 0.0, 1.0, 60_000, seed=3)
    rng = np.random.default_rng(9)
    u = np.zeros(5000)
    _, acc = metropolis_logistic_step(u + rng.standard_normal(5000), np.zeros(5000), 0.0, 1.0,
                                      np.full(5000, ls[0]), rng)
    assert 0.35 <= acc.mean() <= 0.55


def test_gaussian_block_moments():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 3))
    gram, rhs = A.T @ A, A.T @ rng.standard_normal(6)
    draws = np.stack([_gaussian_block(rng, gram, rhs, 0.5, 2.0) for _ in range(40_000)])
    P = gram / 0.5 + np.eye(3) / 2.0
    cov = np.linalg.inv(P)
    np.testing.assert_allclose(draws.mean(axis=0), cov @ rhs / 0.5, atol=4 * np.sqrt(cov.diagonal().max() / 40_000))
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.03 * np.abs(cov).max())
    assert _gaussian_block(rng, np.zeros((0, 0)), np.zeros(0), 1.0, 1.0).shape == (0,)


def test_gelman_rubin_cases():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(2000)
    assert gelman_rubin(np.stack([a, a]), None)[0] == pytest.approx(1.0, abs=1e-3)
    same = rng.standard_normal((4, 2000))
    r, up = gelman_rubin(same, None)
    assert r <= 1.1 and up >= r
    far = np.stack([rng.standard_normal(500), 10 + rng.standard_normal(500)])
    assert gelman_rubin(far, None)[0] > 5
    assert gelman_rubin(np.ones((3, 100)), None) == (1.0, 1.0)
    with pytest.raises(DiagnosticError):
        gelman_rubin(rng.standard_normal((1, 100)), None)


def test_config_validation():
    with pytest.raises(ConfigError):
        MCMCConfig(iters=10, burnin=10)
    with pytest.raises(ConfigError):
        MCMCConfig(chains=0)
    with pytest.raises(ConfigError):
        MCMCConfig(fixed_variances=(1.0, 0.0, 1.0))
    with pytest.raises(ConfigError):
        ChainOutput({"a": np.zeros((2, 5)), "b": np.zeros((2, 6))}, 1)


@pytest.fixture(scope="module")
def tiny_chain(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    model = assemble(ds, tiny_geometry.basis)
    cfg = MCMCConfig(chains=2, iters=600, burnin=300, seed=5)
    return model, ds, cfg, run_mcmc(model, ds, cfg)


def test_chain_shapes_and_frozen_scales(tiny_chain):
    model, ds, cfg, out = tiny_chain
    d = model.dims
    assert out.samples["beta"].shape == (2, 600, d.p)
    assert out.samples["eta"].shape == (2, 600, 3 * d.r)
    assert out.pooled("sigma2_xi").shape == (600,)
    s = out.proposal_scales
    assert s.shape == (2, 600, d.n1)
    assert np.all(s[:, cfg.burnin :] == s[:, cfg.burnin : cfg.burnin + 1])
    assert np.all((out.acceptance >= 0) & (out.acceptance <= 1))
    for k in ("sigma2_beta", "sigma2_eta", "sigma2_xi"):
        assert np.all(out.samples[k] > 0)
    rows = gelman_rubin_table(out)
    assert rows and all(r[1] >= 1.0 and r[2] >= r[1] for r in rows)


def test_chain_determinism_and_threads(tiny_chain):
    model, ds, cfg, out = tiny_chain
    again = run_mcmc(model, ds, MCMCConfig(**{**cfg.__dict__, "threads": 2}))
    for k in out.samples:
        assert out.samples[k].tobytes() == again.samples[k].tobytes()
    other = run_mcmc(model, ds, MCMCConfig(**{**cfg.__dict__, "seed": 6}))
    assert not np.array_equal(other.samples["beta"], out.samples["beta"])


def test_variance_draws_positive_under_other_prior(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    model = assemble(ds, tiny_geometry.basis)
    cfg = MCMCConfig(chains=1, iters=1000, burnin=500, seed=1, prior_shape=3.0, prior_scale=2.0)
    out = run_mcmc(model, ds, cfg)
    for k in ("sigma2_beta", "sigma2_eta", "sigma2_xi"):
        s2 = out.pooled(k)
        assert np.all(np.isfinite(s2)) and s2.min() > 0


def test_fixed_variances_stay_fixed(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    model = assemble(ds, tiny_geometry.basis)
    out = run_mcmc(model, ds, MCMCConfig(chains=1, iters=50, burnin=10, fixed_variances=(1.0, 2.0, 3.0)))
    assert np.all(out.samples["sigma2_eta"] == 2.0) and np.all(out.samples["sigma2_xi"] == 3.0)
