"""Exact posterior regression for multiscale multi-type spatial models."""

from .assembly import (
    Dims, HyperPrior, HyperState, ModelMatrices, MultiTypeDataset, PriorSpec, assemble,
    build_alpha_kappa, build_D, build_H, build_Q, build_X,
)
from .basis import ArealRegion, CellGrid, KnotSet, SpatialBasis, build_G, cos_average, \
    default_basis, eval_rbf, select_knots
from .dy import DYSpec, DYVectorSpec, PartitionTag, dy_moments, sample_dy, sample_w
from .engine import (
    PosteriorReplicates, PredictionSurface, PredictionTargets, discrepancy, predict, run_epr,
    signal_noise_cov,
)
from .estimators import EPRRegressor, MCMCRegressor
from .exceptions import (
    AssemblyError, ChainError, ConfigError, DataError, DiagnosticError, EPRError,
    NumericalError, ParameterDomainError,
)
from .mcmc import ChainOutput, MCMCConfig, gelman_rubin, run_mcmc
from .scoring import (
    ScoreReport, crps_sample, hellinger_bernoulli, interval_score, mspe, roc_auc,
)
from .sim import SimConfig, SimTruth, generate_dataset, run_comparison

__version__ = "0.1.0"
