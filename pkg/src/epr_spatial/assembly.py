"""Deterministic model objects: design matrices, ``H``, ``Q``, DY vectors, ``D(theta)``."""

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .basis import SpatialBasis, build_G
from .dy import DYVectorSpec
from .exceptions import AssemblyError, ConfigError, DataError, NumericalError, ParameterDomainError


class Dims(NamedTuple):
    n1s: int
    n2: int
    n1: int
    p1: int
    p2: int
    p3: int
    r: int

    @property
    def n(self):
        return self.n1s + self.n2 + self.n1

    @property
    def p(self):
        return self.p1 + self.p2 + self.p3

    @property
    def n_basis(self):
        return 3 * self.r

    @property
    def n_rows(self):
        """Row count of ``H``: ``2n + p + 3r``."""
        return 2 * self.n + self.p + 3 * self.r

    @property
    def n_cols(self):
        """Column count of ``H``: ``n + p + 3r``."""
        return self.n + self.p + 3 * self.r


def _as_matrix(a, rows, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(rows, -1) if rows else a.reshape(0, 0)
    if a.ndim != 2 or a.shape[0] != rows:
        raise DataError(f"{name} must have {rows} rows, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class MultiTypeDataset:
    """Observed zero-inflated point response, areal response and point indicator.

    ``z1`` and ``sigma2_1`` are aligned with the points where ``z3 == 1``
    (in point order); ``x1`` and ``x3`` hold covariates for every point.
    """

    points: np.ndarray
    z3: np.ndarray
    z1: np.ndarray
    regions: tuple
    z2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    cell_centers: np.ndarray = field(repr=False)
    sigma2_1: np.ndarray = None
    sigma2_2: np.ndarray = None
    point_ids: tuple = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        n1 = pts.shape[0]
        z3 = np.asarray(self.z3)
        if z3.shape != (n1,):
            raise DataError(f"z3 must have one entry per point ({n1}), got {z3.shape}")
        if not np.all((z3 == 0) | (z3 == 1)):
            k = int(np.flatnonzero((z3 != 0) & (z3 != 1))[0])
            raise DataError(f"z3 must be binary; point {k} has {z3[k]}", row_id=k)
        z3 = z3.astype(np.int8)
        n1s = int(z3.sum())
        z1 = np.asarray(self.z1, dtype=float).reshape(-1)
        if z1.shape != (n1s,):
            raise DataError(
                f"z1 must have one value per point with z3 == 1 ({n1s}), got {z1.shape[0]}"
            )
        regions = tuple(self.regions)
        n2 = len(regions)
        z2 = np.asarray(self.z2, dtype=float).reshape(-1)
        if z2.shape != (n2,):
            raise DataError(f"z2 must have one value per region ({n2}), got {z2.shape[0]}")
        s1 = np.ones(n1s) if self.sigma2_1 is None else np.asarray(self.sigma2_1, float).reshape(-1)
        s2 = np.ones(n2) if self.sigma2_2 is None else np.asarray(self.sigma2_2, float).reshape(-1)
        if s1.shape != (n1s,) or s2.shape != (n2,):
            raise DataError("measurement variances must match z1 and z2")
        if np.any(~(s1 > 0)) or np.any(~(s2 > 0)):
            raise DataError("measurement variances must be positive")
        if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
            raise DataError("observations must be finite")
        x1 = _as_matrix(self.x1, n1, "x1")
        x2 = _as_matrix(self.x2, n2, "x2")
        x3 = _as_matrix(self.x3, n1, "x3")
        ids = tuple(range(n1)) if self.point_ids is None else tuple(self.point_ids)
        if len(ids) != n1:
            raise DataError("point_ids must have one entry per point")
        for name, val in (
            ("points", pts), ("z3", z3), ("z1", z1), ("regions", regions), ("z2", z2),
            ("x1", x1), ("x2", x2), ("x3", x3), ("sigma2_1", s1), ("sigma2_2", s2),
            ("point_ids", ids),
            ("cell_centers", np.asarray(self.cell_centers, dtype=float).reshape(-1, 2)),
        ):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def fire_index(self):
        return np.flatnonzero(self.z3 == 1)

    @property
    def points1(self):
        return self.points[self.fire_index]

    @property
    def dims_without_basis(self):
        return (len(self.fire_index), len(self.regions), self.points.shape[0],
                self.x1.shape[1], self.x2.shape[1], self.x3.shape[1])

    def dims(self, r):
        n1s, n2, n1, p1, p2, p3 = self.dims_without_basis
        return Dims(n1s, n2, n1, p1, p2, p3, r)

    def z1_full(self):
        """``z1`` expanded to every point, NaN where ``z3 == 0``."""
        out = np.full(self.points.shape[0], np.nan)
        out[self.fire_index] = self.z1
        return out

    def permuted(self, order):
        """Same data with the points reordered by ``order``."""
        order = np.asarray(order)
        z1 = self.z1_full()[order]
        s1 = np.full(self.points.shape[0], np.nan)
        s1[self.fire_index] = self.sigma2_1
        s1 = s1[order]
        keep = self.z3[order] == 1
        return replace(
            self, points=self.points[order], z3=self.z3[order], z1=z1[keep],
            sigma2_1=s1[keep], x1=self.x1[order], x3=self.x3[order],
            point_ids=tuple(self.point_ids[i] for i in order),
        )

    def __eq__(self, other):
        if not isinstance(other, MultiTypeDataset):
            return NotImplemented
        arrays = ("points", "z3", "z1", "z2", "x1", "x2", "x3", "cell_centers",
                  "sigma2_1", "sigma2_2")
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.regions == other.regions
            and tuple(map(str, self.point_ids)) == tuple(map(str, other.point_ids))
        )


def build_X(dataset):
    """Block-diagonal covariate matrix with blocks X1 (fire points), X2, X3."""
    x1 = dataset.x1[dataset.fire_index]
    blocks = (x1, dataset.x2, dataset.x3)
    for name, blk, rows in zip(("X1", "X2", "X3"), blocks, dataset.dims_without_basis[:3]):
        if blk.shape[0] != rows:
            raise AssemblyError(f"{name} has {blk.shape[0]} rows, expected {rows}", block=name)
    return scipy.linalg.block_diag(*blocks) if any(b.size for b in blocks) else np.zeros(
        (sum(b.shape[0] for b in blocks), sum(b.shape[1] for b in blocks))
    )


def build_H(X, G):
    """Stack ``[I X G; 0 I 0; 0 0 I; I 0 0]``, shape ``(2n+p+k, n+p+k)``."""
    X = np.asarray(X, dtype=float)
    G = np.asarray(G, dtype=float)
    if X.ndim != 2 or G.ndim != 2 or X.shape[0] != G.shape[0]:
        raise AssemblyError(f"X {X.shape} and G {G.shape} must share a row count", block="H")
    n, p = X.shape
    k = G.shape[1]
    H = np.zeros((2 * n + p + k, n + p + k))
    H[:n, :n] = np.eye(n)
    H[:n, n : n + p] = X
    H[:n, n + p :] = G
    H[n : n + p, n : n + p] = np.eye(p)
    H[n + p : n + p + k, n + p :] = np.eye(k)
    H[n + p + k :, :n] = np.eye(n)
    return H


def _sign_normalize(M, rtol=1e-10):
    M = np.array(M, copy=True)
    for j in range(M.shape[1]):
        col = M[:, j]
        big = np.abs(col) > rtol * np.max(np.abs(col))
        if np.any(big) and col[np.argmax(big)] < 0:
            M[:, j] = -col
    return M


@dataclass(frozen=True, eq=False)
class HFactor:
    """Complete orthogonal factorization ``H = [Q1 Q] [R; 0]``.

    ``Q1`` spans the columns of ``H`` and ``Q`` their orthogonal complement.
    """

    Q1: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    rcond: float

    def lstsq(self, Y):
        """``(H'H)^{-1} H' Y`` for a vector or a matrix of right-hand sides."""
        return scipy.linalg.solve_triangular(self.R, self.Q1.T @ Y, check_finite=False)


def factorize_H(H, rcond_min=1e-13):
    H = np.asarray(H, dtype=float)
    m, k = H.shape
    if k > m:
        raise AssemblyError(f"H has more columns ({k}) than rows ({m})", block="H")
    Qf, R = scipy.linalg.qr(H, mode="full", check_finite=False)
    R = R[:k]
    if k:
        rcond, info = lapack.dtrcon(R, norm="1", uplo="U")
    else:
        rcond, info = 1.0, 0
    if info != 0 or not rcond > rcond_min:
        cond = math.inf if not rcond > 0 else 1.0 / rcond
        raise NumericalError(f"H is rank deficient or ill-conditioned (condition ~ {cond:.3g})",
                             condition=cond)
    Q1, Q = Qf[:, :k], Qf[:, k:]
    if k and Q.size:
        # one refinement step against H'Q; matters when covariates are large
        Q = Q - Q1 @ scipy.linalg.solve_triangular(R, H.T @ Q, trans="T", check_finite=False)
    return HFactor(Q1, R, _sign_normalize(Q), float(rcond))


def build_Q(H):
    """Orthonormal basis of the null space of ``H'``, sign-normalized so that
    the first nonzero entry of each column is positive."""
    return factorize_H(H).Q


@dataclass(frozen=True, eq=False)
class ModelMatrices:
    X: np.ndarray
    G: np.ndarray
    H: np.ndarray
    factor: HFactor
    dims: Dims
    basis: SpatialBasis = None

    @property
    def Q(self):
        return self.factor.Q

    def check_identities(self):
        """Return ``(max|H'Q|, max|QQ' - (I - H(H'H)^{-1}H')|)``."""
        H, Q = self.H, self.Q
        a = np.max(np.abs(H.T @ Q)) if Q.size else 0.0
        P = H @ np.linalg.solve(H.T @ H, H.T)
        b = np.max(np.abs(Q @ Q.T - (np.eye(H.shape[0]) - P)))
        return float(a), float(b)


def assemble(dataset, basis):
    """Build X, G, H and the factorization of H for ``dataset``."""
    X = build_X(dataset)
    G = build_G(dataset.points1, dataset.regions, dataset.points, basis)
    H = build_H(X, G)
    dims = dataset.dims(basis.r)
    return ModelMatrices(X, G, H, factorize_H(H), dims, basis)


def model_from_matrices(X, G, dims=None):
    """ModelMatrices for arbitrary ``X`` and ``G`` (used by tests and toys)."""
    X = np.asarray(X, dtype=float)
    G = np.asarray(G, dtype=float)
    H = build_H(X, G)
    if dims is None:
        n, p = X.shape
        if G.shape[1] % 3:
            raise AssemblyError("G must have 3r columns when dims are not given", block="G")
        dims = Dims(n, 0, 0, p, 0, 0, G.shape[1] // 3)
    return ModelMatrices(X, G, H, factorize_H(H), dims)


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class PriorSpec:
    """Prior on one scale parameter ``sigma``.

    Families: ``point`` (``value``), ``log-uniform`` (``low``, ``high``),
    ``inverse-gamma`` (``shape``, ``scale``; placed on ``sigma**2``).
    """

    family: str
    params: tuple = ()

    FAMILIES = {"point": 1, "log-uniform": 2, "inverse-gamma": 2}

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ConfigError(f"unknown prior family {self.family!r}")
        params = tuple(float(v) for v in self.params)
        if len(params) != self.FAMILIES[self.family]:
            raise ConfigError(f"{self.family} prior takes {self.FAMILIES[self.family]} parameters")
        if not all(math.isfinite(v) and v > 0 for v in params):
            raise ConfigError(f"{self.family} prior parameters must be positive, got {params}")
        if self.family == "log-uniform" and not params[1] > params[0]:
            raise ConfigError("log-uniform prior needs high > low")
        object.__setattr__(self, "params", params)

    def draw(self, rng):
        if self.family == "point":
            return self.params[0]
        if self.family == "log-uniform":
            lo, hi = np.log(self.params)
            return float(np.exp(rng.uniform(lo, hi)))
        shape, scale = self.params
        return float(np.sqrt(scale / rng.standard_gamma(shape)))

    def to_dict(self):
        return {"family": self.family, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, PriorSpec):
            return d
        try:
            return cls(d["family"], tuple(d.get("params", ())))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed prior spec {d!r}") from exc


DEFAULT_PRIOR = PriorSpec("log-uniform", (1e-2, 1e2))


@dataclass(frozen=True)
class HyperPrior:
    sigma_beta: PriorSpec = DEFAULT_PRIOR
    sigma_eta: PriorSpec = DEFAULT_PRIOR
    sigma_xi: PriorSpec = DEFAULT_PRIOR

    @classmethod
    def point_mass(cls, sigma_beta=1.0, sigma_eta=1.0, sigma_xi=1.0):
        return cls(PriorSpec("point", (sigma_beta,)), PriorSpec("point", (sigma_eta,)),
                   PriorSpec("point", (sigma_xi,)))

    @property
    def is_point_mass(self):
        return all(s.family == "point" for s in (self.sigma_beta, self.sigma_eta, self.sigma_xi))

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in ("sigma_beta", "sigma_eta", "sigma_xi")}

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        unknown = set(d) - {"sigma_beta", "sigma_eta", "sigma_xi"}
        if unknown:
            raise ConfigError(f"unknown hyperprior keys {sorted(unknown)}")
        return cls(**{k: PriorSpec.from_dict(v) for k, v in d.items()})


class Theta(NamedTuple):
    sigma_beta: float
    sigma_eta: float
    sigma_xi: float


@dataclass(frozen=True)
class HyperState:
    """Current scales, the Bernoulli fine-scale shape ``alpha_xi`` and the prior."""

    sigma_beta: float = 1.0
    sigma_eta: float = 1.0
    sigma_xi: float = 1.0
    alpha_xi: float = 1.0
    prior: HyperPrior = field(default_factory=HyperPrior)

    def __post_init__(self):
        for name in ("sigma_beta", "sigma_eta", "sigma_xi", "alpha_xi"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be positive, got {v}", field=name)

    @classmethod
    def point_mass(cls, sigma_beta=1.0, sigma_eta=1.0, sigma_xi=1.0, alpha_xi=1.0):
        return cls(sigma_beta, sigma_eta, sigma_xi, alpha_xi,
                   HyperPrior.point_mass(sigma_beta, sigma_eta, sigma_xi))

    @property
    def theta(self):
        return Theta(self.sigma_beta, self.sigma_eta, self.sigma_xi)


def draw_theta(hyper, rng):
    """Independent prior draws of ``(sigma_beta, sigma_eta, sigma_xi)``."""
    pr = hyper.prior
    return Theta(pr.sigma_beta.draw(rng), pr.sigma_eta.draw(rng), pr.sigma_xi.draw(rng))


class DScaling:
    """Diagonal operator ``D(theta) = blkdiag(I_n, sb I_p, se I_3r, sx I_n)``."""

    def __init__(self, theta, dims):
        sb, se, sx = theta
        for name, v in zip(Theta._fields, theta):
            if not (math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be positive, got {v}", field=name)
        n, p, k = dims.n, dims.p, dims.n_basis
        self.diag = np.concatenate([np.ones(n), np.full(p, sb), np.full(k, se), np.full(n, sx)])

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        return self.diag.reshape((-1,) + (1,) * (v.ndim - 1)) * v

    def inverse(self, v):
        v = np.asarray(v, dtype=float)
        return v / self.diag.reshape((-1,) + (1,) * (v.ndim - 1))

    def matrix(self):
        return np.diag(self.diag)


def build_D(hyper_or_theta, dims):
    theta = hyper_or_theta.theta if isinstance(hyper_or_theta, HyperState) else hyper_or_theta
    return DScaling(theta, dims)


def d_diagonal(thetas, dims):
    """Diagonals of ``D(theta)`` for a stack of draws, shape ``(len(thetas), 2n+p+3r)``."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 3)
    n, p, k = dims.n, dims.p, dims.n_basis
    out = np.ones((thetas.shape[0], dims.n_rows))
    out[:, n : n + p] = thetas[:, :1]
    out[:, n + p : n + p + k] = thetas[:, 1:2]
    out[:, n + p + k :] = thetas[:, 2:3]
    return out


def build_alpha_kappa(dataset, hyper, dims=None):
    """Shapes and rates of the augmented DY vector ``w``.

    Blocks, in order: Gaussian ``(z1/s1, 1/(2 s1))``, Gaussian
    ``(z2/s2, 1/(2 s2))``, Bernoulli ``(z3 + a, 1 + 2a)`` and
    ``n + p + 3r`` standard components ``(0, 1/2)``.
    """
    a = hyper.alpha_xi
    if not a > 0:
        raise ParameterDomainError(f"alpha_xi must be positive, got {a}", field="alpha_xi")
    if dims is None:
        raise AssemblyError("dims (or the knot count r) are required to size the prior block")
    if isinstance(dims, (int, np.integer)):
        dims = dataset.dims(int(dims))
    alpha = np.concatenate([
        dataset.z1 / dataset.sigma2_1,
        dataset.z2 / dataset.sigma2_2,
        dataset.z3.astype(float) + a,
        np.zeros(dims.n_cols),
    ])
    kappa = np.concatenate([
        0.5 / dataset.sigma2_1,
        0.5 / dataset.sigma2_2,
        np.full(dims.n1, 1.0 + 2.0 * a),
        np.full(dims.n_cols, 0.5),
    ])
    bern = np.zeros(alpha.shape, dtype=bool)
    bern[dims.n1s + dims.n2 : dims.n] = True
    vec = DYVectorSpec(alpha, kappa, bern)
    if len(vec) != dims.n_rows:
        raise AssemblyError(f"DY vector has length {len(vec)}, H has {dims.n_rows} rows")
    return vec


def block_offsets(dims):
    """Start offsets of the z1, z2, z3, prior blocks and the total length."""
    return (0, dims.n1s, dims.n1s + dims.n2, dims.n, dims.n_rows)
