"""Diaconis-Ylvisaker random variables with Gaussian and Bernoulli log-partitions.

A DY variable has density proportional to ``exp(alpha * w - kappa * psi(w))``.
With ``psi(w) = w**2`` this is a normal law with mean ``alpha / (2 kappa)``
and variance ``1 / (2 kappa)``. With ``psi(w) = log(1 + exp(w))`` it is the
logit of a ``Beta(alpha, kappa - alpha)`` variable.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterDomainError
from .special import digamma, trigamma


class PartitionTag(enum.Enum):
    """Unit log-partition function of a DY component."""

    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"

    def psi(self, w):
        w = np.asarray(w, dtype=float)
        if self is PartitionTag.GAUSSIAN:
            return w * w
        return np.logaddexp(0.0, w)


@dataclass(frozen=True)
class DYSpec:
    """Shape, rate and log-partition of one DY component."""

    alpha: float
    kappa: float
    tag: PartitionTag = PartitionTag.GAUSSIAN

    def __post_init__(self):
        _check_domain(
            np.array([self.alpha], dtype=float),
            np.array([self.kappa], dtype=float),
            np.array([self.tag is PartitionTag.BERNOULLI]),
        )

    def log_density(self, w):
        """Unnormalized log density at ``w``."""
        w = np.asarray(w, dtype=float)
        return self.alpha * w - self.kappa * self.tag.psi(w)


def _check_domain(alpha, kappa, bernoulli, offset=0):
    bad = ~np.isfinite(alpha)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ParameterDomainError(
            f"alpha[{i + offset}] must be finite, got {alpha[i]}", field="alpha", index=i + offset
        )
    bad = ~np.isfinite(kappa) | ~(kappa > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ParameterDomainError(
            f"kappa[{i + offset}] must be positive, got {kappa[i]}", field="kappa", index=i + offset
        )
    bad = bernoulli & ~(alpha > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ParameterDomainError(
            f"alpha[{i + offset}] must be positive for a Bernoulli component, got {alpha[i]}",
            field="alpha",
            index=i + offset,
        )
    bad = bernoulli & ~(kappa > alpha)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ParameterDomainError(
            f"kappa[{i + offset}] must exceed alpha for a Bernoulli component, "
            f"got kappa={kappa[i]}, alpha={alpha[i]}",
            field="kappa",
            index=i + offset,
        )


class DYVectorSpec:
    """Ordered collection of independent DY components.

    Stored column-wise (``alpha``, ``kappa``, boolean ``bernoulli`` mask) so
    that sampling and moment evaluation vectorize.
    """

    def __init__(self, alpha, kappa, bernoulli=None):
        alpha = np.array(alpha, dtype=float).reshape(-1)
        kappa = np.array(kappa, dtype=float).reshape(-1)
        if bernoulli is None:
            bernoulli = np.zeros(alpha.shape, dtype=bool)
        bernoulli = np.array(bernoulli, dtype=bool).reshape(-1)
        if not (alpha.shape == kappa.shape == bernoulli.shape):
            raise ParameterDomainError("alpha, kappa and tags must have equal length")
        _check_domain(alpha, kappa, bernoulli)
        for arr in (alpha, kappa, bernoulli):
            arr.setflags(write=False)
        self.alpha = alpha
        self.kappa = kappa
        self.bernoulli = bernoulli

    @classmethod
    def from_specs(cls, specs):
        specs = list(specs)
        return cls(
            [s.alpha for s in specs],
            [s.kappa for s in specs],
            [s.tag is PartitionTag.BERNOULLI for s in specs],
        )

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls([], [], [])
        return cls(
            np.concatenate([p.alpha for p in parts]),
            np.concatenate([p.kappa for p in parts]),
            np.concatenate([p.bernoulli for p in parts]),
        )

    def __len__(self):
        return self.alpha.shape[0]

    def __getitem__(self, i):
        tag = PartitionTag.BERNOULLI if self.bernoulli[i] else PartitionTag.GAUSSIAN
        return DYSpec(float(self.alpha[i]), float(self.kappa[i]), tag)

    @property
    def specs(self):
        return [self[i] for i in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, DYVectorSpec):
            return NotImplemented
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.kappa, other.kappa)
            and np.array_equal(self.bernoulli, other.bernoulli)
        )

    def __repr__(self):
        return f"DYVectorSpec(length={len(self)}, bernoulli={int(self.bernoulli.sum())})"

    def moments(self):
        """Componentwise ``(mean, variance)`` arrays."""
        mean = np.empty(len(self))
        var = np.empty(len(self))
        g = ~self.bernoulli
        mean[g] = self.alpha[g] / (2.0 * self.kappa[g])
        var[g] = 1.0 / (2.0 * self.kappa[g])
        b = self.bernoulli
        if np.any(b):
            a1 = self.alpha[b]
            a2 = self.kappa[b] - self.alpha[b]
            mean[b] = digamma(a1) - digamma(a2)
            var[b] = trigamma(a1) + trigamma(a2)
        return mean, var


def dy_moments(spec):
    """Mean and variance of a single DY component.

    >>> dy_moments(DYSpec(3.0, 0.5))
    (3.0, 1.0)
    """
    mean, var = DYVectorSpec.from_specs([spec]).moments()
    return float(mean[0]), float(var[0])


def _log_gamma_variates(shape, rng):
    # log of Gamma(shape, 1) draws; for shape < 1 use G(a) = G(a+1) * U**(1/a)
    # so that the log never underflows to -inf.
    boost = shape < 1.0
    g = rng.standard_gamma(np.where(boost, shape + 1.0, shape))
    u = rng.random(shape.shape)
    out = np.log(g)
    out[boost] += np.log1p(-u[boost]) / shape[boost]
    return out


def _sample_bernoulli(alpha, kappa, rng):
    return _log_gamma_variates(alpha, rng) - _log_gamma_variates(kappa - alpha, rng)


def sample_w(vec, rng):
    """Draw one realization of every component of ``vec``, order preserved.

    Random numbers are consumed in a fixed order (Gaussian block first, then
    the two Gamma blocks of the Bernoulli components), so a seeded generator
    reproduces the vector bit for bit.
    """
    out = np.empty(len(vec))
    g = ~vec.bernoulli
    ng = int(np.count_nonzero(g))
    if ng:
        a, k = vec.alpha[g], vec.kappa[g]
        out[g] = a / (2.0 * k) + rng.standard_normal(ng) / np.sqrt(2.0 * k)
    b = vec.bernoulli
    if np.any(b):
        out[b] = _sample_bernoulli(vec.alpha[b], vec.kappa[b], rng)
    return out


def sample_dy(spec, rng):
    """Single draw from ``DY(alpha, kappa; psi)``."""
    return float(sample_w(DYVectorSpec.from_specs([spec]), rng)[0])


def sample_dy_many(spec, size, rng):
    """``size`` independent draws from one DY component."""
    vec = DYVectorSpec(
        np.full(size, spec.alpha), np.full(size, spec.kappa),
        np.full(size, spec.tag is PartitionTag.BERNOULLI),
    )
    return sample_w(vec, rng)
