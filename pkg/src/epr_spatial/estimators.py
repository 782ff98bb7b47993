"""Estimator wrappers with the scikit-learn parameter protocol.

``fit`` takes a :class:`MultiTypeDataset` (the multi-type response does not
fit the ``(X, y)`` convention); ``predict`` takes :class:`PredictionTargets`
or a dataset and returns a :class:`PredictionSurface`.
"""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assembly import HyperPrior, HyperState, MultiTypeDataset, assemble, build_alpha_kappa
from .basis import UNIT_SQUARE, default_basis
from .engine import PredictionTargets, predict_from_draws, run_epr
from .exceptions import ConfigError, DataError
from .mcmc import MCMCConfig, gelman_rubin_table, run_mcmc


def _check_dataset(dataset):
    if not isinstance(dataset, MultiTypeDataset):
        raise DataError(f"expected a MultiTypeDataset, got {type(dataset).__name__}")
    return dataset


def _check_targets(targets, dataset):
    if targets is None:
        return PredictionTargets.from_dataset(dataset)
    if isinstance(targets, MultiTypeDataset):
        return PredictionTargets.from_dataset(targets)
    if not isinstance(targets, PredictionTargets):
        raise DataError(f"expected PredictionTargets, got {type(targets).__name__}")
    return targets


class _SpatialBase(BaseEstimator):
    def _basis(self, dataset):
        if self.r is None or self.r < 1:
            raise ConfigError(f"r must be a positive integer, got {self.r}")
        return default_basis(UNIT_SQUARE, self.r, dataset.cell_centers, r3=self.r3)

    def predict(self, targets=None, keep_draws=False):
        """Filtered predictions at ``targets`` (default: the training supports)."""
        check_is_fitted(self, "model_")
        t = _check_targets(targets, self.dataset_)
        beta, eta = self._draws()
        return predict_from_draws(beta, eta, self.model_.basis, self.model_.dims, t,
                                  level=self.level, keep_draws=keep_draws)


class EPRRegressor(_SpatialBase):
    """Exact posterior replicates of the multiscale multi-type model.

    ``prior`` is a hyperprior dictionary (see :meth:`HyperPrior.from_dict`);
    ``None`` uses the package default.
    """

    def __init__(self, r=50, r3=None, n_reps=1000, alpha_xi=1.0, prior=None, seed=0,
                 threads=1, level=0.95):
        self.r = r
        self.r3 = r3
        self.n_reps = n_reps
        self.alpha_xi = alpha_xi
        self.prior = prior
        self.seed = seed
        self.threads = threads
        self.level = level

    def fit(self, dataset, y=None):
        ds = _check_dataset(dataset)
        prior = HyperPrior.from_dict(self.prior) if self.prior is not None else HyperPrior()
        hyper = HyperState(alpha_xi=self.alpha_xi, prior=prior)
        self.model_ = assemble(ds, self._basis(ds))
        dyvec = build_alpha_kappa(ds, hyper, self.model_.dims)
        self.replicates_ = run_epr(self.model_, dyvec, hyper, self.n_reps, self.seed,
                                   threads=self.threads)
        self.dataset_ = ds
        return self

    def _draws(self):
        return self.replicates_.beta, self.replicates_.eta


class MCMCRegressor(_SpatialBase):
    """Metropolis-within-Gibbs fit of the model without a discrepancy term."""

    def __init__(self, r=50, r3=None, chains=2, iters=10_000, burnin=5_000, seed=0,
                 threads=1, level=0.95):
        self.r = r
        self.r3 = r3
        self.chains = chains
        self.iters = iters
        self.burnin = burnin
        self.seed = seed
        self.threads = threads
        self.level = level

    def fit(self, dataset, y=None):
        ds = _check_dataset(dataset)
        cfg = MCMCConfig(chains=self.chains, iters=self.iters, burnin=self.burnin,
                         seed=self.seed, threads=self.threads)
        self.model_ = assemble(ds, self._basis(ds))
        self.chains_ = run_mcmc(self.model_, ds, cfg)
        self.dataset_ = ds
        return self

    def _draws(self):
        return self.chains_.pooled("beta"), self.chains_.pooled("eta")

    def diagnostics(self):
        check_is_fitted(self, "chains_")
        return gelman_rubin_table(self.chains_)
