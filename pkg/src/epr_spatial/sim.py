"""Synthetic multiscale data and the EPR-versus-MCMC comparison study."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property

import numpy as np
from threadpoolctl import threadpool_limits

from .assembly import (
    HyperPrior, HyperState, MultiTypeDataset, PriorSpec, assemble, build_alpha_kappa,
    build_H, factorize_H,
)
from .basis import (
    UNIT_SQUARE, ArealRegion, CellGrid, build_G, check_partition, default_basis,
)
from .engine import PredictionTargets, predict_from_draws, run_epr
from .exceptions import ConfigError, EPRError
from .mcmc import MCMCConfig, run_mcmc
from .scoring import ScoreReport, crps_sorted, hellinger_bernoulli, mspe

log = logging.getLogger(__name__)

# Posterior means of the fixed effects reported for the wildfire/population fit.
TRUE_BETA1 = (1.17, -0.049, 0.0008, -0.666, 0.0000048)
TRUE_BETA2 = (-1.539, 0.0000242)
TRUE_BETA3 = (-1.786,)

# (mean, sd) of the synthetic covariate fields
COVARIATE_SCALES = {
    "land_surface_temperature": (20.0, 5.0),
    "rainfall": (300.0, 150.0),
    "vegetation_index": (0.4, 0.15),
    "elevation": (1000.0, 500.0),
    "median_household_income": (60000.0, 15000.0),
}

METRICS = ("mspe_y1", "crps_y1", "mspe_y2", "crps_y2", "hd_y3", "hd_y3_mean", "mse_effects")
METHODS = ("epr", "mcmc")


@dataclass(frozen=True)
class SimConfig:
    grid_n: int = 20
    n_regions: int = 225
    cells_per_axis: int = 60
    r: int = 50
    r3: int = None
    n_replicates: int = 100
    discrepancy: bool = True
    seed: int = 2024
    beta1: tuple = TRUE_BETA1
    beta2: tuple = TRUE_BETA2
    beta3: tuple = TRUE_BETA3
    sigma2_1: float = 1.0
    sigma2_2: float = 1.0
    fine_scale_sd: float = 0.0
    alpha_xi: float = 1.0
    epr_reps: int = 1000
    epr_prior: dict = None
    mcmc_chains: int = 2
    mcmc_iters: int = 10_000
    mcmc_burnin: int = 5_000
    max_score_draws: int = 1000

    def __post_init__(self):
        if self.grid_n < 1 or self.n_regions < 1 or self.n_replicates < 1:
            raise ConfigError("grid_n, n_regions and n_replicates must be >= 1")
        if self.r < 1 or self.r > self.grid_n**2:
            raise ConfigError(f"r must lie in [1, grid size {self.grid_n ** 2}], got {self.r}")
        if self.cells_per_axis**2 < self.n_regions:
            raise ConfigError("fewer fine cells than regions")
        if len(self.beta3) != 1:
            raise ConfigError("response 3 takes an intercept only")
        if len(self.beta1) != 5 or len(self.beta2) != 2:
            raise ConfigError("beta1 needs 5 entries and beta2 needs 2")
        for name in ("beta1", "beta2", "beta3"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.epr_prior is not None:
            HyperPrior.from_dict(self.epr_prior)

    @classmethod
    def tiny(cls, **kw):
        base = dict(grid_n=5, n_regions=9, cells_per_axis=15, r=4, n_replicates=1,
                    epr_reps=200, mcmc_iters=400, mcmc_burnin=200)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown simulation keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @property
    def hyper(self):
        prior = HyperPrior.from_dict(self.epr_prior) if self.epr_prior else SIM_PRIOR
        return HyperState(alpha_xi=self.alpha_xi, prior=prior)

    @property
    def mcmc(self):
        return MCMCConfig(chains=self.mcmc_chains, iters=self.mcmc_iters,
                          burnin=self.mcmc_burnin)


# Narrower than the library default so prior draws of theta stay on the scale
# of the generating process.
SIM_PRIOR = HyperPrior(
    PriorSpec("log-uniform", (0.5, 2.0)),
    PriorSpec("log-uniform", (0.5, 2.0)),
    PriorSpec("log-uniform", (0.5, 2.0)),
)


def greedy_regions(grid, n_regions, rng):
    """Partition the cells of ``grid`` into ``n_regions`` contiguous groups.

    Seeds are drawn at random; each step grows a uniformly chosen region that
    still borders unassigned cells by one of those cells.
    """
    n = grid.n_cells
    if not 1 <= n_regions <= n:
        raise ConfigError(f"cannot make {n_regions} regions from {n} cells")
    owner = np.full(n, -1)
    seeds = rng.choice(n, size=n_regions, replace=False)
    members = [[int(s)] for s in seeds]
    owner[seeds] = np.arange(n_regions)
    frontier = [set() for _ in range(n_regions)]
    for k, s in enumerate(seeds):
        frontier[k].update(c for c in grid.neighbours(s) if owner[c] < 0)
    active = [k for k in range(n_regions) if frontier[k]]
    remaining = n - n_regions
    while remaining:
        k = active[int(rng.integers(len(active)))]
        cand = sorted(c for c in frontier[k] if owner[c] < 0)
        if not cand:
            frontier[k].clear()
            active.remove(k)
            continue
        c = cand[int(rng.integers(len(cand)))]
        owner[c] = k
        members[k].append(c)
        remaining -= 1
        frontier[k].update(nb for nb in grid.neighbours(c) if owner[nb] < 0)
        frontier[k].discard(c)
        for j in active:
            frontier[j].discard(c)
        active = [j for j in active if frontier[j]]
    regions = tuple(
        ArealRegion(f"A{k:03d}", tuple(sorted(m)), grid.cell_area) for k, m in enumerate(members)
    )
    check_partition(regions, n)
    return regions


def _smooth_field(coords, rng, n_bumps=6):
    # low-order polynomial plus a mixture of Gaussian bumps, standardized
    x, y = coords[:, 0], coords[:, 1]
    c = rng.standard_normal(5)
    f = c[0] * x + c[1] * y + c[2] * x * y + c[3] * x**2 + c[4] * y**2
    centers = rng.random((n_bumps, 2))
    weights = rng.standard_normal(n_bumps)
    for (cx, cy), w in zip(centers, weights):
        f = f + w * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * 0.15**2))
    sd = f.std()
    return (f - f.mean()) / (sd if sd > 0 else 1.0)


@dataclass(frozen=True, eq=False)
class Geometry:
    """Fixed spatial layout and covariates shared by every replicate."""

    points: np.ndarray
    grid: CellGrid
    regions: tuple
    basis: object
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray

    @property
    def cell_centers(self):
        return self.grid.centers()

    @cached_property
    def full_design(self):
        """``X`` and ``G`` with every point treated as a fire location."""
        from scipy.linalg import block_diag

        X = block_diag(self.x1, self.x2, self.x3)
        G = build_G(self.points, self.regions, self.points, self.basis)
        return X, G

    @cached_property
    def full_Q(self):
        X, G = self.full_design
        return factorize_H(build_H(X, G)).Q


def make_geometry(config):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2**31 - 1,)))
    k = config.grid_n
    ticks = (np.arange(k) + 0.5) / k
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    grid = CellGrid(config.cells_per_axis, config.cells_per_axis, UNIT_SQUARE)
    regions = greedy_regions(grid, config.n_regions, rng)
    centers = grid.centers()
    basis = default_basis(UNIT_SQUARE, config.r, centers, r3=config.r3)
    cols = []
    for name in ("land_surface_temperature", "rainfall", "vegetation_index", "elevation"):
        mean, sd = COVARIATE_SCALES[name]
        cols.append(mean + sd * _smooth_field(points, rng))
    x1 = np.column_stack([np.ones(len(points))] + cols)
    mean, sd = COVARIATE_SCALES["median_household_income"]
    income_cells = mean + sd * _smooth_field(centers, rng)
    income = np.array([income_cells[list(reg.cells)].mean() for reg in regions])
    x2 = np.column_stack([np.ones(len(regions)), income])
    x3 = np.ones((len(points), 1))
    return Geometry(points, grid, regions, basis, x1, x2, x3)


@dataclass(eq=False)
class SimTruth:
    y1: np.ndarray      # every point
    y2: np.ndarray
    y3: np.ndarray
    prob3: np.ndarray
    z1_full: np.ndarray  # NaN where z3 == 0
    z2: np.ndarray
    z3: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    delta_y: np.ndarray  # stacked (points, regions, points); zeros when discrepancy is off

    @property
    def fire_index(self):
        return np.flatnonzero(self.z3 == 1)


def generate_dataset(config, rng, geometry=None, beta=None, eta=None):
    """One synthetic dataset and the latent truth behind it.

    ``beta``/``eta`` override the configured effects and the random effects
    draw (used to force degenerate fields).
    """
    geo = geometry or make_geometry(config)
    n1, n2 = len(geo.points), len(geo.regions)
    r = geo.basis.r
    beta = np.concatenate([config.beta1, config.beta2, config.beta3]) if beta is None \
        else np.asarray(beta, dtype=float)
    eta_draw = rng.standard_normal(3 * r)
    eta = eta_draw if eta is None else np.asarray(eta, dtype=float)
    n_full = 2 * n1 + n2
    xi = config.fine_scale_sd * rng.standard_normal(n_full)
    X, G = geo.full_design
    if config.discrepancy:
        Q = geo.full_Q
        q = rng.standard_normal(Q.shape[1])
        delta_y = -(Q[:n_full] @ q)
    else:
        delta_y = np.zeros(n_full)
    y = X @ beta + G @ eta + xi - delta_y
    y1, y2, y3 = y[:n1], y[n1 : n1 + n2], y[n1 + n2 :]
    prob3 = 0.5 * (1.0 + np.tanh(0.5 * y3))
    z3 = (rng.random(n1) < prob3).astype(np.int8)
    fire = np.flatnonzero(z3 == 1)
    z1 = y1[fire] + math.sqrt(config.sigma2_1) * rng.standard_normal(fire.size)
    z2 = y2 + math.sqrt(config.sigma2_2) * rng.standard_normal(n2)
    z1_full = np.full(n1, np.nan)
    z1_full[fire] = z1
    ds = MultiTypeDataset(
        points=geo.points, z3=z3, z1=z1, regions=geo.regions, z2=z2,
        x1=geo.x1, x2=geo.x2, x3=geo.x3, cell_centers=geo.cell_centers,
        sigma2_1=np.full(fire.size, config.sigma2_1), sigma2_2=np.full(n2, config.sigma2_2),
    )
    truth = SimTruth(y1, y2, y3, prob3, z1_full, z2, z3, beta, eta, xi, delta_y)
    return ds, truth


# ---------------------------------------------------------------------------
# fitting and scoring one replicate


def _thin(draws, k):
    if draws.shape[0] <= k:
        return draws
    idx = np.linspace(0, draws.shape[0] - 1, k).round().astype(int)
    return draws[idx]


def score_fit(beta_draws, eta_draws, model, dataset, truth, max_draws=1000):
    """Metric dictionary for one fit given posterior draws of ``(beta, eta)``."""
    targets = PredictionTargets.from_dataset(dataset)
    b = _thin(beta_draws, max_draws)
    e = _thin(eta_draws, max_draws)
    surf = predict_from_draws(b, e, model.basis, model.dims, targets, keep_draws=True)
    fire = truth.fire_index
    out = {}
    if fire.size:
        out["mspe_y1"] = mspe(truth.y1[fire], surf.y1.mean[fire])
        out["crps_y1"] = float(np.mean(crps_sorted(surf.y1.draws[:, fire], truth.y1[fire])))
    else:
        out["mspe_y1"] = out["crps_y1"] = 0.0
    out["mspe_y2"] = mspe(truth.y2, surf.y2.mean)
    out["crps_y2"] = float(np.mean(crps_sorted(surf.y2.draws, truth.y2)))
    hd_sum, hd_mean = hellinger_bernoulli(truth.prob3, surf.prob3.mean)
    out["hd_y3"] = hd_sum
    out["hd_y3_mean"] = hd_mean
    est = np.concatenate([beta_draws.mean(axis=0), eta_draws.mean(axis=0)])
    true = np.concatenate([truth.beta, truth.eta])
    out["mse_effects"] = float(np.mean((est - true) ** 2))
    return out


def fit_epr(dataset, basis, hyper, n_reps, seed):
    model = assemble(dataset, basis)
    dyvec = build_alpha_kappa(dataset, hyper, model.dims)
    reps = run_epr(model, dyvec, hyper, n_reps, seed)
    return model, reps


def fit_mcmc(dataset, basis, config):
    model = assemble(dataset, basis)
    out = run_mcmc(model, dataset, config)
    return model, out


def _fit_seed(seed, replicate, method):
    return int(np.random.SeedSequence(seed, spawn_key=(int(replicate), method)).generate_state(1)[0])


def run_replicate(config, index, geometry=None):
    """Generate replicate ``index``, fit both methods and score them."""
    geo = geometry or make_geometry(config)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(int(index),)))
    with threadpool_limits(limits=1):
        ds, truth = generate_dataset(config, rng, geo)
        row = {"replicate": index, "n1_star": int(ds.z3.sum())}
        timing = {}

        t_cpu, t_wall = time.process_time(), time.perf_counter()
        model, reps = fit_epr(ds, geo.basis, config.hyper, config.epr_reps,
                              _fit_seed(config.seed, index, 1))
        scores = score_fit(reps.beta, reps.eta, model, ds, truth, config.max_score_draws)
        timing["epr"] = (time.process_time() - t_cpu, time.perf_counter() - t_wall)
        row.update({("epr", k): v for k, v in scores.items()})

        t_cpu, t_wall = time.process_time(), time.perf_counter()
        mcfg = replace(config.mcmc, seed=_fit_seed(config.seed, index, 2))
        model, chains = fit_mcmc(ds, geo.basis, mcfg)
        scores = score_fit(chains.pooled("beta"), chains.pooled("eta"), model, ds, truth,
                           config.max_score_draws)
        timing["mcmc"] = (time.process_time() - t_cpu, time.perf_counter() - t_wall)
        row.update({("mcmc", k): v for k, v in scores.items()})
    return row, timing


@dataclass
class ComparisonResult:
    config: SimConfig
    rows: list
    timings: list
    failures: list = field(default_factory=list)

    @property
    def report(self):
        rep = ScoreReport()
        for row in self.rows:
            for method in METHODS:
                for metric in METRICS:
                    rep.add(method, metric, row[(method, metric)])
        return rep

    @property
    def timing_report(self):
        rep = ScoreReport()
        for t in self.timings:
            for method in METHODS:
                rep.add(method, "cpu_seconds", t[method][0])
                rep.add(method, "wall_seconds", t[method][1])
        return rep

    @property
    def partial(self):
        return bool(self.failures) or len(self.rows) < self.config.n_replicates


def _replicate_job(args):
    config, index = args
    try:
        return index, run_replicate(config, index), None
    except EPRError as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def run_comparison(config, threads=1, progress=None):
    """Run the full study; replicate ``i`` is seeded independently of the others."""
    jobs = [(config, i) for i in range(config.n_replicates)]
    results = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_replicate_job, jobs):
                results.append(res)
                if progress:
                    progress(res[0])
    else:
        geo = make_geometry(config)
        for cfg, i in jobs:
            try:
                results.append((i, run_replicate(cfg, i, geo), None))
            except EPRError as exc:
                results.append((i, None, f"{type(exc).__name__}: {exc}"))
            if progress:
                progress(i)
    results.sort(key=lambda t: t[0])
    rows = [r[1][0] for r in results if r[1] is not None]
    timings = [r[1][1] for r in results if r[1] is not None]
    failures = [(r[0], r[2]) for r in results if r[2] is not None]
    for i, msg in failures:
        log.error("replicate %d failed: %s", i, msg)
    return ComparisonResult(config, rows, timings, failures)
