"""Metropolis-within-Gibbs baseline for the model without a discrepancy term.

The sampler works with the latent process ``u = X beta + G eta + xi``:

* ``beta | eta, u`` and ``eta | beta, u`` are Gaussian (``u`` acts as data
  with variance ``sigma2_xi``);
* Gaussian-likelihood entries of ``u`` are conjugate normal draws;
* Bernoulli-likelihood entries of ``u`` get one scalar random-walk Metropolis
  step each, with a per-entry adaptive proposal scale frozen after burn-in;
* ``sigma2_beta``, ``sigma2_eta`` and ``sigma2_xi`` have inverse-gamma
  full conditionals.

Sweep order is fixed: beta, eta, xi, variances.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats
from threadpoolctl import threadpool_limits

from .exceptions import ChainError, ConfigError, DiagnosticError

log = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.44
ADAPT_BATCH = 50
PARAMETERS = ("beta", "eta", "xi", "sigma2_beta", "sigma2_eta", "sigma2_xi")


@dataclass(frozen=True)
class MCMCConfig:
    chains: int = 2
    iters: int = 10_000
    burnin: int = 5_000
    seed: int = 0
    prior_shape: float = 2.0
    prior_scale: float = 1.0
    initial_scale: float = 1.0
    adapt_batch: int = ADAPT_BATCH
    target_rate: float = TARGET_ACCEPTANCE
    fixed_variances: tuple = None  # (sigma2_beta, sigma2_eta, sigma2_xi) to disable updates
    store_xi: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not (self.iters > self.burnin >= 0):
            raise ConfigError(f"need iters > burnin >= 0, got iters={self.iters}, burnin={self.burnin}")
        if self.adapt_batch < 1:
            raise ConfigError("adapt_batch must be >= 1")
        if not (self.prior_shape > 0 and self.prior_scale > 0 and self.initial_scale > 0):
            raise ConfigError("prior and proposal parameters must be positive")
        if self.fixed_variances is not None:
            fv = tuple(float(v) for v in self.fixed_variances)
            if len(fv) != 3 or not all(v > 0 for v in fv):
                raise ConfigError("fixed_variances needs three positive values")
            object.__setattr__(self, "fixed_variances", fv)


@dataclass(eq=False)
class ChainState:
    beta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    sigma2_beta: float
    sigma2_eta: float
    sigma2_xi: float
    log_scale: np.ndarray
    accepted: np.ndarray
    proposed: int = 0

    def check(self):
        if min(self.sigma2_beta, self.sigma2_eta, self.sigma2_xi) <= 0:
            raise ChainError("variances must stay positive")
        if not np.all(np.isfinite(self.log_scale)):
            raise ChainError("proposal scales must stay finite and positive")


@dataclass(eq=False)
class ChainOutput:
    """Samples with shape ``(chains, iters, ...)`` per parameter."""

    samples: dict
    burnin: int
    proposal_scales: np.ndarray = None  # (chains, iters, n_bernoulli)
    acceptance: np.ndarray = None       # post-burn-in acceptance per chain
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {k: v.shape[:2] for k, v in self.samples.items()}
        if len(set(shapes.values())) > 1:
            raise ConfigError(f"inconsistent sample shapes {shapes}")
        chains, iters = next(iter(shapes.values()))
        if chains < 1 or not iters > self.burnin >= 0:
            raise ConfigError("need chains >= 1 and iters > burnin >= 0")

    @property
    def chains(self):
        return next(iter(self.samples.values())).shape[0]

    @property
    def iters(self):
        return next(iter(self.samples.values())).shape[1]

    def kept(self, name):
        """Post-burn-in samples of ``name``, shape ``(chains, iters - burnin, ...)``."""
        return self.samples[name][:, self.burnin :]

    def pooled(self, name):
        x = self.kept(name)
        return x.reshape((-1,) + x.shape[2:])


def adapt_scale(accepted, proposed, target_rate, current_log_scale, batch_index):
    """Stochastic-approximation step on the log proposal scale.

    Moves by ``min(0.01, batch_index ** -0.5)`` in the direction of
    ``acceptance - target``; an on-target rate leaves the scale unchanged.
    Works elementwise on arrays.
    """
    if batch_index < 1:
        raise ValueError("batch_index must be >= 1")
    rate = np.asarray(accepted, dtype=float) / max(proposed, 1)
    step = min(0.01, batch_index ** -0.5)
    return current_log_scale + np.sign(rate - target_rate) * step


def logistic_log_target(u, z, mean, var):
    """Log full conditional of a Bernoulli-likelihood latent entry (up to a constant)."""
    return z * u - np.logaddexp(0.0, u) - 0.5 * (u - mean) ** 2 / var


def metropolis_logistic_step(u, z, mean, var, log_scale, rng):
    """One random-walk Metropolis step per entry. Returns ``(u_new, accepted_mask)``."""
    prop = u + np.exp(log_scale) * rng.standard_normal(u.shape)
    log_ratio = logistic_log_target(prop, z, mean, var) - logistic_log_target(u, z, mean, var)
    accept = np.log(rng.random(u.shape)) < log_ratio
    return np.where(accept, prop, u), accept


def _gaussian_block(rng, gram, rhs, var_data, var_prior):
    # draw from N(P^{-1} b, P^{-1}) with P = gram / var_data + I / var_prior
    k = gram.shape[0]
    if k == 0:
        return np.zeros(0)
    P = gram / var_data
    P[np.diag_indices(k)] += 1.0 / var_prior
    L = scipy.linalg.cholesky(P, lower=True, check_finite=False)
    mean = scipy.linalg.cho_solve((L, True), rhs / var_data, check_finite=False)
    z = rng.standard_normal(k)
    return mean + scipy.linalg.solve_triangular(L.T, z, lower=False, check_finite=False)


class _Problem:
    """Data and constant products shared by every chain."""

    def __init__(self, model, dataset):
        d = model.dims
        self.dims = d
        self.X = model.X
        self.G = model.G
        self.XtX = self.X.T @ self.X
        self.GtG = self.G.T @ self.G
        self.n_gauss = d.n1s + d.n2
        self.z_gauss = np.concatenate([dataset.z1, dataset.z2])
        self.s2_gauss = np.concatenate([dataset.sigma2_1, dataset.sigma2_2])
        self.z_bern = dataset.z3.astype(float)


def _init_state(prob, cfg, rng):
    d = prob.dims
    beta = rng.standard_normal(d.p)
    eta = rng.standard_normal(3 * d.r)
    u_gauss = prob.z_gauss + rng.standard_normal(prob.n_gauss)
    u_bern = (2.0 * prob.z_bern - 1.0) + rng.standard_normal(d.n1)
    u = np.concatenate([u_gauss, u_bern])
    xi = u - prob.X @ beta - prob.G @ eta
    s2 = cfg.fixed_variances or (1.0, 1.0, 1.0)
    return ChainState(beta, eta, xi, *s2,
                      log_scale=np.full(d.n1, math.log(cfg.initial_scale)),
                      accepted=np.zeros(d.n1))


def _run_chain(prob, cfg, chain_index):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(int(chain_index),)))
    d = prob.dims
    st = _init_state(prob, cfg, rng)
    u = st.xi + prob.X @ st.beta + prob.G @ st.eta
    a0, b0 = cfg.prior_shape, cfg.prior_scale
    it_total = cfg.iters
    out = {
        "beta": np.empty((it_total, d.p)),
        "eta": np.empty((it_total, 3 * d.r)),
        "xi_first": np.empty((it_total, 3)),
        "sigma2_beta": np.empty(it_total),
        "sigma2_eta": np.empty(it_total),
        "sigma2_xi": np.empty(it_total),
    }
    if cfg.store_xi:
        out["xi"] = np.empty((it_total, d.n))
    # first element of xi_1, xi_2, xi_3 (-1 marks an empty block)
    first_idx = [0 if d.n1s else -1, d.n1s if d.n2 else -1, d.n1s + d.n2 if d.n1 else -1]
    scales = np.empty((it_total, d.n1))
    acc_post = np.zeros(d.n1)
    batch_acc = np.zeros(d.n1)
    batch_count = 0
    batch_index = 0
    ng = prob.n_gauss
    for it in range(it_total):
        # beta | eta, u
        st.beta = _gaussian_block(rng, prob.XtX, prob.X.T @ (u - prob.G @ st.eta),
                                  st.sigma2_xi, st.sigma2_beta)
        xb = prob.X @ st.beta
        # eta | beta, u
        st.eta = _gaussian_block(rng, prob.GtG, prob.G.T @ (u - xb), st.sigma2_xi, st.sigma2_eta)
        m = xb + prob.G @ st.eta
        # Gaussian-likelihood latent entries
        if ng:
            prec = 1.0 / prob.s2_gauss + 1.0 / st.sigma2_xi
            mu = (prob.z_gauss / prob.s2_gauss + m[:ng] / st.sigma2_xi) / prec
            u[:ng] = mu + rng.standard_normal(ng) / np.sqrt(prec)
        # Bernoulli-likelihood latent entries
        if d.n1:
            new, acc = metropolis_logistic_step(u[ng:], prob.z_bern, m[ng:], st.sigma2_xi,
                                                st.log_scale, rng)
            u[ng:] = new
            if it < cfg.burnin:
                batch_acc += acc
                batch_count += 1
                if batch_count == cfg.adapt_batch:
                    batch_index += 1
                    st.log_scale = adapt_scale(batch_acc, batch_count, cfg.target_rate,
                                               st.log_scale, batch_index)
                    batch_acc[:] = 0.0
                    batch_count = 0
            else:
                acc_post += acc
        st.xi = u - m
        # variances
        if cfg.fixed_variances is None:
            st.sigma2_beta = (b0 + 0.5 * st.beta @ st.beta) / rng.standard_gamma(a0 + 0.5 * d.p)
            st.sigma2_eta = (b0 + 0.5 * st.eta @ st.eta) / rng.standard_gamma(a0 + 1.5 * d.r)
            st.sigma2_xi = (b0 + 0.5 * st.xi @ st.xi) / rng.standard_gamma(a0 + 0.5 * d.n)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(st.beta))
                and np.all(np.isfinite(st.eta)) and math.isfinite(st.sigma2_xi)):
            raise ChainError(f"non-finite state in chain {chain_index} at iteration {it}",
                             iteration=it, chain=chain_index)
        out["beta"][it] = st.beta
        out["eta"][it] = st.eta
        out["xi_first"][it] = [st.xi[i] if i >= 0 else np.nan for i in first_idx]
        out["sigma2_beta"][it] = st.sigma2_beta
        out["sigma2_eta"][it] = st.sigma2_eta
        out["sigma2_xi"][it] = st.sigma2_xi
        if cfg.store_xi:
            out["xi"][it] = st.xi
        scales[it] = np.exp(st.log_scale)
    kept = it_total - cfg.burnin
    return out, scales, acc_post / kept if d.n1 else acc_post


def run_mcmc(model, dataset, config):
    """Run ``config.chains`` independent chains and stack their samples."""
    cfg = config if isinstance(config, MCMCConfig) else MCMCConfig(**config)
    prob = _Problem(model, dataset)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        if cfg.threads > 1 and cfg.chains > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = list(pool.map(lambda c: _run_chain(prob, cfg, c), range(cfg.chains)))
        else:
            results = [_run_chain(prob, cfg, c) for c in range(cfg.chains)]
    wall = time.perf_counter() - t0
    samples = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    scales = np.stack([r[1] for r in results])
    acc = np.stack([r[2] for r in results])
    log.info("MCMC: %d chains x %d iterations in %.2f s", cfg.chains, cfg.iters, wall)
    return ChainOutput(samples, cfg.burnin, scales, acc,
                       {"wall_seconds": wall, "chains": cfg.chains, "iters": cfg.iters})


# ---------------------------------------------------------------------------
# convergence diagnostics


def _select(output, param):
    if callable(param):
        return np.asarray(param(output))
    name, _, idx = str(param).partition("[")
    x = output.kept(name)
    if idx:
        x = x[..., int(idx.rstrip("]"))]
    elif x.ndim > 2:
        x = x[..., 0]
    return x


def gelman_rubin(output, param, confidence=0.95):
    """Potential scale reduction factor and its upper confidence limit.

    ``param`` names a stored parameter, optionally indexed (``"beta[2]"``);
    vector parameters default to their first element. The variance-of-
    variance correction and F-based upper limit follow Brooks & Gelman.
    Both values are floored at 1; a chain set with zero within-chain
    variance reports ``(1.0, 1.0)``.
    """
    x = output if isinstance(output, np.ndarray) else _select(output, param)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DiagnosticError("the Gelman-Rubin statistic needs at least two chains")
    m, n = x.shape
    if n < 2:
        raise DiagnosticError("need at least two post-burn-in samples per chain")
    s2 = x.var(axis=1, ddof=1)
    xbar = x.mean(axis=1)
    W = s2.mean()
    if W <= 0 or not np.isfinite(W):
        return 1.0, 1.0
    B = n * xbar.var(ddof=1)
    muhat = xbar.mean()
    var_w = s2.var(ddof=1) / m
    var_b = 2.0 * B**2 / (m - 1)
    cov_wb = (n / m) * (np.cov(s2, xbar**2)[0, 1] - 2.0 * muhat * np.cov(s2, xbar)[0, 1])
    V = (n - 1) / n * W + (1 + 1 / m) * B / n
    var_V = ((n - 1) ** 2 * var_w + (1 + 1 / m) ** 2 * var_b
             + 2 * (n - 1) * (1 + 1 / m) * cov_wb) / n**2
    df_V = 2 * V**2 / var_V if var_V > 0 else math.inf
    df_adj = (df_V + 3) / (df_V + 1) if math.isfinite(df_V) else 1.0
    B_df = m - 1
    W_df = 2 * W**2 / var_w if var_w > 0 else math.inf
    r2_fixed = (n - 1) / n
    r2_random = (1 + 1 / m) * (1 / n) * (B / W)
    point = math.sqrt(df_adj * (r2_fixed + r2_random))
    if B > 0:
        fq = stats.f.ppf((1 + confidence) / 2, B_df, W_df) if math.isfinite(W_df) \
            else stats.chi2.ppf((1 + confidence) / 2, B_df) / B_df
        upper = math.sqrt(df_adj * (r2_fixed + fq * r2_random))
    else:
        upper = point
    return max(1.0, point), max(1.0, upper)


def gelman_rubin_table(output, params=None):
    """PSRF for the first element of each stored parameter."""
    params = params or ("beta[0]", "eta[0]", "xi_first[0]", "xi_first[1]", "xi_first[2]",
                        "sigma2_beta", "sigma2_eta", "sigma2_xi")
    rows = []
    for p in params:
        x = _select(output, p)
        if np.all(np.isnan(x)):
            continue
        rows.append((p, *gelman_rubin(x, None)))
    return rows
