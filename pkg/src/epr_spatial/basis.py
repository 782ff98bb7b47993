"""Gaussian radial basis functions, knot layouts and point-to-area averaging.

Areal supports are sets of cells of a fine rectangular grid; the areal
average of a basis function is the midpoint rule over those cells.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AssemblyError, ConfigError

BANDWIDTH_FACTOR = 1.5


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""

    xmin: float = 0.0
    xmax: float = 1.0
    ymin: float = 0.0
    ymax: float = 1.0

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError(f"degenerate domain {self}")

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin


UNIT_SQUARE = Domain()


@dataclass(frozen=True)
class KnotSet:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 2)
        if centers.shape[0] < 1:
            raise ConfigError("a knot set needs at least one center")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def r(self):
        return self.centers.shape[0]

    def with_bandwidth(self, bandwidth):
        return KnotSet(self.centers, bandwidth)


def lattice_spacing(domain, r):
    k = math.ceil(math.sqrt(r))
    return domain.width / k, domain.height / k


def select_knots(domain, r, bandwidth=None):
    """Space-filling knots: the first ``r`` points of a ``k x k`` cell-centred
    lattice (``k = ceil(sqrt(r))``) in row-major order.

    The default bandwidth is ``BANDWIDTH_FACTOR`` times the lattice spacing.
    """
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ConfigError(f"number of knots must be a positive integer, got {r!r}")
    k = math.ceil(math.sqrt(r))
    xs = domain.xmin + (np.arange(k) + 0.5) * domain.width / k
    ys = domain.ymin + (np.arange(k) + 0.5) * domain.height / k
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])[:r]
    if bandwidth is None:
        bandwidth = BANDWIDTH_FACTOR * min(lattice_spacing(domain, r))
    return KnotSet(centers, bandwidth)


def eval_rbf(points, knots):
    """Gaussian basis ``exp(-|s - c_j|^2 / (2 b^2))``.

    Accepts a single 2-vector (returns shape ``(r,)``) or an ``(m, 2)`` array
    (returns ``(m, r)``).
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    d2 = (
        (pts[:, 0, None] - knots.centers[None, :, 0]) ** 2
        + (pts[:, 1, None] - knots.centers[None, :, 1]) ** 2
    )
    out = np.exp(-d2 / (2.0 * knots.bandwidth**2))
    return out[0] if single else out


@dataclass(frozen=True)
class CellGrid:
    """Fine ``nx x ny`` grid of equal cells covering a domain.

    Cell ids run row-major over ``(ix, iy)``: ``id = ix * ny + iy``.
    """

    nx: int
    ny: int
    domain: Domain = UNIT_SQUARE

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("cell grid needs at least one cell per axis")

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return (self.domain.width / self.nx) * (self.domain.height / self.ny)

    def centers(self):
        ix, iy = np.divmod(np.arange(self.n_cells), self.ny)
        cx = self.domain.xmin + (ix + 0.5) * self.domain.width / self.nx
        cy = self.domain.ymin + (iy + 0.5) * self.domain.height / self.ny
        return np.column_stack([cx, cy])

    def neighbours(self, cell):
        ix, iy = divmod(int(cell), self.ny)
        out = []
        for dx, dy in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < self.nx and 0 <= jy < self.ny:
                out.append(jx * self.ny + jy)
        return out


@dataclass(frozen=True)
class ArealRegion:
    id: str
    cells: tuple
    cell_area: float

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if not cells:
            raise ConfigError(f"region {self.id!r} has no cells")
        if len(set(cells)) != len(cells):
            raise ConfigError(f"region {self.id!r} lists a cell twice")
        if not self.cell_area > 0:
            raise ConfigError(f"region {self.id!r}: cell_area must be positive")
        object.__setattr__(self, "cells", cells)

    @property
    def area(self):
        return len(self.cells) * self.cell_area


def check_partition(regions, n_cells=None):
    """Raise ``ConfigError`` unless the regions are pairwise disjoint (and,
    when ``n_cells`` is given, cover every cell)."""
    seen = {}
    for reg in regions:
        for c in reg.cells:
            if c in seen:
                raise ConfigError(f"cell {c} belongs to regions {seen[c]!r} and {reg.id!r}")
            seen[c] = reg.id
    if n_cells is not None and len(seen) != n_cells:
        raise ConfigError(f"regions cover {len(seen)} of {n_cells} cells")


def cos_average(region, knots, cell_centers):
    """Areal average of every basis function over ``region``.

    ``cell_centers`` maps a cell id to its centre; any indexable ``(N, 2)``
    array works. The result is the midpoint-rule estimate of
    ``(1/|A|) * integral_A g(s) ds``.
    """
    if not region.cells:
        raise ConfigError(f"region {region.id!r} is empty")
    centers = np.asarray(cell_centers, dtype=float)
    try:
        pts = centers[np.asarray(region.cells)]
    except IndexError as exc:
        raise ConfigError(f"region {region.id!r} references an unknown cell") from exc
    return eval_rbf(pts, knots).mean(axis=0)


def rbf_padded(points, knots, width):
    """``eval_rbf`` zero-padded on the right to ``width`` columns."""
    vals = eval_rbf(np.asarray(points, dtype=float).reshape(-1, 2), knots)
    if vals.shape[1] > width:
        raise AssemblyError(
            f"knot set has {vals.shape[1]} centers but the block holds {width}", block="G3"
        )
    out = np.zeros((vals.shape[0], width))
    out[:, : vals.shape[1]] = vals
    return out


def areal_matrix(regions, knots, cell_centers):
    if not regions:
        return np.zeros((0, knots.r))
    return np.vstack([cos_average(reg, knots, cell_centers) for reg in regions])


@dataclass(frozen=True)
class SpatialBasis:
    """Knots for the three responses plus the cell grid used for areal averages.

    ``knots12`` defines g1 and g2 (shared centres); ``knots3`` may be coarser
    and is zero-padded to ``r = knots12.r`` columns.
    """

    knots12: KnotSet
    knots3: KnotSet
    cell_centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.knots3.r > self.knots12.r:
            raise ConfigError(
                f"response 3 uses {self.knots3.r} knots, more than r={self.knots12.r}"
            )
        cc = np.array(self.cell_centers, dtype=float).reshape(-1, 2)
        cc.setflags(write=False)
        object.__setattr__(self, "cell_centers", cc)

    @property
    def r(self):
        return self.knots12.r

    def g1(self, points):
        return eval_rbf(np.asarray(points, dtype=float).reshape(-1, 2), self.knots12)

    def g2(self, regions):
        return areal_matrix(regions, self.knots12, self.cell_centers)

    def g3(self, points):
        return rbf_padded(points, self.knots3, self.r)

    def g_star(self, response, support):
        """Filtered basis rows ``g*`` for prediction on ``support``.

        Response 1 uses ``(g1, g1, 0)``, response 2 ``(g2, 0, g2)`` and
        response 3 ``(g3, 0, 0)``.
        """
        r = self.r
        if response == 1:
            g = self.g1(support)
            z = np.zeros_like(g)
            return np.hstack([g, g, z])
        if response == 2:
            g = self.g2(support)
            z = np.zeros_like(g)
            return np.hstack([g, z, g])
        if response == 3:
            g = self.g3(support)
            z = np.zeros((g.shape[0], r))
            return np.hstack([g, z, z])
        raise ConfigError(f"response must be 1, 2 or 3, got {response!r}")


def default_basis(domain, r, cell_centers, r3=None, bandwidth=None, bandwidth3=None):
    """Shared lattice for g1/g2 and a coarser one (``r3 = max(1, r // 3)``) for g3."""
    if r3 is None:
        r3 = max(1, r // 3)
    return SpatialBasis(
        select_knots(domain, r, bandwidth),
        select_knots(domain, r3, bandwidth3),
        cell_centers,
    )


def build_G(points1, regions, points3, basis):
    """Basis matrix ``G`` of shape ``(n1* + n2 + n1, 3r)``.

    Row blocks follow the process-model layout::

        [G1 G1 0 ]
        [G2 0  G2]
        [G3 0  0 ]
    """
    r = basis.r
    p1 = np.asarray(points1, dtype=float).reshape(-1, 2)
    p3 = np.asarray(points3, dtype=float).reshape(-1, 2)
    g1 = basis.g1(p1)
    g2 = basis.g2(list(regions))
    g3 = basis.g3(p3)
    for name, blk, rows in (("G1", g1, len(p1)), ("G2", g2, len(regions)), ("G3", g3, len(p3))):
        if blk.shape != (rows, r):
            raise AssemblyError(f"block {name} has shape {blk.shape}, expected {(rows, r)}", block=name)
    n1s, n2, n1 = g1.shape[0], g2.shape[0], g3.shape[0]
    G = np.zeros((n1s + n2 + n1, 3 * r))
    G[:n1s, :r] = g1
    G[:n1s, r : 2 * r] = g1
    G[n1s : n1s + n2, :r] = g2
    G[n1s : n1s + n2, 2 * r :] = g2
    G[n1s + n2 :, :r] = g3
    return G
