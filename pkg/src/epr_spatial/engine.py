"""Exact posterior replicates by the linear map ``(zeta, q) = V D(theta) w``.

Each replicate draws ``theta`` from its prior and ``w`` from independent DY
components, scales by ``D(theta)`` and applies

    zeta = (H'H)^{-1} H' D w,     q = Q' D w.

``H`` is factorized once per model; replicates are processed in fixed-size
chunks so the arithmetic (and therefore every output bit) does not depend on
how many worker threads share the chunks.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .assembly import DScaling, HyperState, Theta, d_diagonal, draw_theta
from .dy import sample_w
from .exceptions import AssemblyError, EPRError, NumericalError

log = logging.getLogger(__name__)

CHUNK_SIZE = 256


def replicate_rng(seed, index):
    """Independent stream for replicate ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(index),)))


@dataclass(eq=False)
class PosteriorReplicates:
    """Stacked replicates: rows of ``zeta = (xi, beta, eta)``, ``q`` and ``theta``."""

    zeta: np.ndarray
    q: np.ndarray
    theta_draws: np.ndarray
    seed: int
    dims: object
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.zeta.shape[0]
        if self.q.shape[0] != n or self.theta_draws.shape[0] != n:
            raise AssemblyError("replicate arrays disagree on the number of rows")
        d = self.dims
        if self.zeta.shape[1] != d.n_cols or self.q.shape[1] != d.n:
            raise AssemblyError(
                f"zeta/q widths {self.zeta.shape[1]}/{self.q.shape[1]} do not match "
                f"(n+p+3r, n) = ({d.n_cols}, {d.n})"
            )

    @property
    def n_reps(self):
        return self.zeta.shape[0]

    @property
    def xi(self):
        return self.zeta[:, : self.dims.n]

    @property
    def beta(self):
        d = self.dims
        return self.zeta[:, d.n : d.n + d.p]

    @property
    def eta(self):
        d = self.dims
        return self.zeta[:, d.n + d.p :]

    def signal(self, model):
        """``y* = xi + X beta + G eta`` per replicate, shape ``(n_reps, n)``."""
        return self.zeta @ model.H[: self.dims.n].T


def _transform(factor, scaled_w):
    # scaled_w: (m, B) columns D(theta_b) w_b
    zeta = factor.lstsq(scaled_w)
    q = factor.Q.T @ scaled_w
    return zeta.T, q.T


def sample_replicate(model, dyvec, hyper, rng, w_override=None):
    """One replicate ``(zeta, q, theta)``.

    ``w_override`` replaces the DY draw (after ``theta`` is drawn) and exists
    for degenerate-input checks.
    """
    if len(dyvec) != model.dims.n_rows:
        raise AssemblyError(f"DY vector length {len(dyvec)} != {model.dims.n_rows} rows of H")
    theta = draw_theta(hyper, rng)
    w = sample_w(dyvec, rng) if w_override is None else np.asarray(w_override, dtype=float)
    Dw = DScaling(theta, model.dims).apply(w)
    zeta, q = _transform(model.factor, Dw[:, None])
    return zeta[0], q[0], theta


def _draw_chunk(dyvec, hyper, seed, start, stop):
    m = len(dyvec)
    W = np.empty((stop - start, m))
    T = np.empty((stop - start, 3))
    for j, idx in enumerate(range(start, stop)):
        rng = replicate_rng(seed, idx)
        T[j] = draw_theta(hyper, rng)
        W[j] = sample_w(dyvec, rng)
    return W, T


def _run_chunk(model, dyvec, hyper, seed, start, stop):
    try:
        W, T = _draw_chunk(dyvec, hyper, seed, start, stop)
    except EPRError as exc:
        raise type(exc)(f"replicate block {start}..{stop - 1}: {exc}") from exc
    scaled = (d_diagonal(T, model.dims) * W).T
    zeta, q = _transform(model.factor, scaled)
    if not (np.all(np.isfinite(zeta)) and np.all(np.isfinite(q))):
        bad = start + int(np.flatnonzero(~np.all(np.isfinite(zeta), axis=1))[0]) \
            if not np.all(np.isfinite(zeta)) else start
        raise NumericalError(f"non-finite replicate at index {bad}")
    return zeta, q, T


def run_epr(model, dyvec, hyper, n_reps, seed, threads=1, chunk_size=CHUNK_SIZE):
    """Draw ``n_reps`` independent posterior replicates.

    Replicate ``i`` uses the stream ``SeedSequence(seed, spawn_key=(i,))`` so
    results are identical for any ``threads``.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    if len(dyvec) != model.dims.n_rows:
        raise AssemblyError(f"DY vector length {len(dyvec)} != {model.dims.n_rows} rows of H")
    bounds = [(s, min(s + chunk_size, n_reps)) for s in range(0, n_reps, chunk_size)]
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        if threads > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(
                    lambda b: _run_chunk(model, dyvec, hyper, seed, *b), bounds))
        else:
            parts = [_run_chunk(model, dyvec, hyper, seed, *b) for b in bounds]
    wall = time.perf_counter() - t0
    zeta = np.vstack([p[0] for p in parts])
    q = np.vstack([p[1] for p in parts])
    theta = np.vstack([p[2] for p in parts])
    timing = {"wall_seconds": wall, "per_replicate_seconds": wall / n_reps, "n_reps": n_reps}
    log.info("EPR: %d replicates in %.3f s", n_reps, wall)
    return PosteriorReplicates(zeta, q, theta, int(seed), model.dims, timing)


def discrepancy(replicates, model):
    """``delta = -D(theta)^{-1} Q q`` for every replicate; first ``n`` entries are ``delta_y``."""
    Qq = replicates.q @ model.Q.T
    return -Qq / d_diagonal(replicates.theta_draws, model.dims)


def det_log_weights(replicates):
    """Normalized log importance weights proportional to ``1 / det D(theta_t)``.

    Replicates are drawn with theta from its prior; these weights reweight
    them toward a target carrying the extra ``1 / det D(theta)`` factor.
    With a point-mass prior every weight equals ``1 / n_reps``.
    """
    d = replicates.dims
    t = np.log(replicates.theta_draws)
    lw = -(d.p * t[:, 0] + d.n_basis * t[:, 1] + d.n * t[:, 2])
    lw -= lw.max()
    return lw - np.log(np.exp(lw).sum())


def _as_theta(theta):
    return theta.theta if isinstance(theta, HyperState) else Theta(*theta)


def signal_noise_cov(model, theta, dyvec):
    """Closed-form ``cov(y*, delta_y | z)`` at a fixed ``theta``.

    With ``P = H (H'H)^{-1} H'`` and ``C = cov(w)`` diagonal this is
    ``-J P D C D (I - P) J'``; the leading minus comes from
    ``delta = -D^{-1} Q q`` (``D^{-1}`` is the identity on the first block).
    """
    th = _as_theta(theta)
    n = model.dims.n
    _, var = dyvec.moments()
    d = DScaling(th, model.dims).diag
    middle = d * var * d
    Q1, Q = model.factor.Q1, model.factor.Q
    JP = Q1[:n] @ Q1.T
    JIP = Q[:n] @ Q.T
    return -(JP * middle) @ JIP.T


def signal_noise_cov_dense(model, theta, dyvec):
    """Same quantity evaluated literally from ``H``; O(m^3), for cross-checks."""
    th = _as_theta(theta)
    H = model.H
    m, n = H.shape[0], model.dims.n
    P = H @ np.linalg.solve(H.T @ H, H.T)
    D = np.diag(DScaling(th, model.dims).diag)
    C = np.diag(dyvec.moments()[1])
    J = np.zeros((n, m))
    J[:, :n] = np.eye(n)
    return -(J @ P @ D @ C @ D @ (np.eye(m) - P) @ J.T)


# ---------------------------------------------------------------------------
# prediction


@dataclass(frozen=True, eq=False)
class PredictionTargets:
    """Locations to predict at, with their covariates.

    Any response may be omitted by leaving its support empty.
    """

    points1: np.ndarray = None
    x1: np.ndarray = None
    regions: tuple = ()
    x2: np.ndarray = None
    points3: np.ndarray = None
    x3: np.ndarray = None

    @classmethod
    def from_dataset(cls, dataset, fire_only=False):
        """Every point and region of ``dataset`` (or only fire points for response 1)."""
        idx = dataset.fire_index if fire_only else np.arange(dataset.points.shape[0])
        return cls(dataset.points[idx], dataset.x1[idx], tuple(dataset.regions), dataset.x2,
                   dataset.points, dataset.x3)


@dataclass(eq=False)
class ResponseSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray = field(default=None, repr=False)


@dataclass(eq=False)
class PredictionSurface:
    """Posterior summaries of the filtered process ``x'beta + g*'eta``.

    ``y1``/``y2``/``y3`` summarize the latent scale; ``prob3`` summarizes
    ``logistic(y3)``. Intervals are central ``level`` empirical quantiles.
    """

    y1: ResponseSummary
    y2: ResponseSummary
    y3: ResponseSummary
    prob3: ResponseSummary
    level: float = 0.95


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _summarize(draws, level, keep_draws):
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    if draws.shape[1] == 0:
        e = np.zeros(0)
        return ResponseSummary(e, e, e, draws if keep_draws else None)
    mean = draws.mean(axis=0)
    lower = np.quantile(draws, lo_q, axis=0, method="inverted_cdf")
    upper = np.quantile(draws, hi_q, axis=0, method="inverted_cdf")
    # snap rounding-level excursions (e.g. identical draws) back into the band
    tol = 1e-12 * np.maximum(1.0, np.abs(mean))
    mean = np.where((mean < lower) & (lower - mean <= tol), lower, mean)
    mean = np.where((mean > upper) & (mean - upper <= tol), upper, mean)
    return ResponseSummary(mean, lower, upper, draws if keep_draws else None)


def _cov_block(x, rows, p, name):
    if rows == 0:
        return np.zeros((0, p))
    x = np.asarray(x, dtype=float).reshape(rows, -1)
    if x.shape[1] != p:
        raise AssemblyError(f"{name} has {x.shape[1]} covariates, model expects {p}", block=name)
    return x


def filtered_draws(beta, eta, basis, dims, targets):
    """Draw matrices ``(n_draws, n_targets)`` of ``x'beta_m + g*'eta`` per response."""
    beta = np.atleast_2d(beta)
    eta = np.atleast_2d(eta)
    p1, p2 = dims.p1, dims.p2
    b1, b2, b3 = beta[:, :p1], beta[:, p1 : p1 + p2], beta[:, p1 + p2 :]
    out = []
    pts1 = np.zeros((0, 2)) if targets.points1 is None else np.asarray(targets.points1, float).reshape(-1, 2)
    pts3 = np.zeros((0, 2)) if targets.points3 is None else np.asarray(targets.points3, float).reshape(-1, 2)
    regs = tuple(targets.regions or ())
    x1 = _cov_block(targets.x1, len(pts1), dims.p1, "x1")
    x2 = _cov_block(targets.x2, len(regs), dims.p2, "x2")
    x3 = _cov_block(targets.x3, len(pts3), dims.p3, "x3")
    for resp, support, x, b in ((1, pts1, x1, b1), (2, regs, x2, b2), (3, pts3, x3, b3)):
        if len(support) == 0:
            out.append(np.zeros((beta.shape[0], 0)))
            continue
        gstar = basis.g_star(resp, support)
        out.append(b @ x.T + eta @ gstar.T)
    return out


def predict_from_draws(beta, eta, basis, dims, targets, level=0.95, keep_draws=False):
    d1, d2, d3 = filtered_draws(beta, eta, basis, dims, targets)
    return PredictionSurface(
        _summarize(d1, level, keep_draws),
        _summarize(d2, level, keep_draws),
        _summarize(d3, level, keep_draws),
        _summarize(_logistic(d3), level, keep_draws),
        level,
    )


def predict(replicates, model, targets, level=0.95, keep_draws=False):
    """Filtered predictions (fine-scale and discrepancy terms excluded)."""
    if model.basis is None:
        raise AssemblyError("model carries no spatial basis; cannot evaluate g* at targets")
    return predict_from_draws(replicates.beta, replicates.eta, model.basis, model.dims,
                              targets, level, keep_draws)
