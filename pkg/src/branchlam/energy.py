"""Exact and quadrature energy evaluators for piecewise affine maps."""

import math

import numpy as np

from .errors import (AlignmentError, DomainError, GeometryError,
                     ParameterError, UnsupportedError)
from .geometry import (EvalCtx, dist_to_wells, explicit_elastic,
                       explicit_surface_2d, frobenius, nearest_well)


class EnergyBreakdown:
    """Elastic + surface energy split.

    Attributes:
        elastic: elastic term (volume integral).
        surface: surface term (total variation, unweighted by epsilon).
        total: elastic + epsilon * surface, exactly.
        p: growth exponent of the elastic term.
        epsilon: interfacial parameter.
        includesBoundaryFacets: whether domain-boundary facets were counted.
        mode: "exact", "quadrature", or "chi".
    """

    def __init__(self, elastic, surface, p, epsilon,
                 includesBoundaryFacets=False, mode="exact"):
        if elastic < 0 or surface < 0:
            raise DomainError("energy terms must be nonnegative")
        self.elastic = float(elastic)
        self.surface = float(surface)
        self.p = float(p)
        self.epsilon = float(epsilon)
        self.total = self.elastic + self.epsilon * self.surface
        self.includesBoundaryFacets = bool(includesBoundaryFacets)
        self.mode = mode

    def to_json_dict(self):
        return {"epsilon": self.epsilon, "p": self.p,
                "elastic": self.elastic, "surface": self.surface,
                "total": self.total, "mode": self.mode,
                "includesBoundaryFacets": self.includesBoundaryFacets}

    def csv_row(self):
        return [self.epsilon, self.p, self.elastic, self.surface,
                self.total, self.mode]

    def __repr__(self):
        return ("EnergyBreakdown(elastic=%g, surface=%g, total=%g, "
                "p=%g, epsilon=%g, mode=%r)"
                % (self.elastic, self.surface, self.total, self.p,
                   self.epsilon, self.mode))


class PhaseField:
    """Phase indicator chi attached to a construction.

    Exact mode stores one well index per cell of the source map (1-based,
    aligned with the map's cell list).  Raster mode stores a grid of well
    indices.  Either way the field can be sampled at points through the
    source map's gradient field.

    Attributes:
        wellSet: the WellSet the indices refer to.
        source: the PiecewiseAffineMap the field is aligned with (optional).
        gridResolution: per-axis resolution in raster mode, else None.
    """

    def __init__(self, wellSet, cells=None, grid=None, gridResolution=None,
                 source=None):
        self.wellSet = wellSet
        self._cells = None if cells is None else np.asarray(cells, dtype=int)
        self.grid = None if grid is None else np.asarray(grid, dtype=int)
        self.gridResolution = gridResolution
        self.source = source
        nw = len(wellSet)
        for arr in (self._cells, self.grid):
            if arr is not None and arr.size and (
                    arr.min() < 1 or arr.max() > nw):
                raise DomainError("phase entries must be well indices 1..%d"
                                  % nw)

    @property
    def cells(self):
        """Per-cell well indices (1-based), materialized on first use."""
        if self._cells is None:
            if self.source is None:
                raise UnsupportedError("phase field has no cell alignment")
            mats = self.wellSet.matrices()
            grads = np.array([c.gradient for c in self.source.cells])
            self._cells = nearest_well(grads, mats) + 1
        return self._cells

    def sample(self, pts):
        """Well indices (1-based) at the given points."""
        if self.source is None:
            raise UnsupportedError("phase field has no source map to sample")
        G = self.source.gradient_at(np.asarray(pts, dtype=float))
        return nearest_well(G, self.wellSet.matrices()) + 1

    def counts(self):
        """Number of cells (or grid samples) per phase, index 1..len(wells)."""
        arr = self.grid if self.grid is not None else self.cells
        return np.bincount(arr.ravel(), minlength=len(self.wellSet) + 1)[1:]


def projectGradientToWells(m, ws):
    """Nearest-well phase projection of a construction.

    Each cell is labeled by the well closest to its gradient in Frobenius
    distance; ties go to the lowest well index.

    Args:
        m: PiecewiseAffineMap.
        ws: WellSet.

    Returns:
        PhaseField aligned with the map's cells (materialized lazily for
        template-backed maps).
    """
    return PhaseField(ws, source=m)


def _ctx_wells(m, ws=None):
    if ws is not None:
        return ws.matrices()
    if getattr(m, "wells", None) is not None:
        return np.asarray(m.wells, dtype=float)
    return np.asarray(m.F, dtype=float)[None]


def elasticEnergyExact(m, ws, p):
    """Exact elastic energy sum(dist^p(G_cell, wells) * volume) of a map."""
    ctx = EvalCtx(np.asarray(ws.matrices(), dtype=float), p)
    if m.root is not None:
        return float(m.root.elastic(ctx))
    if m.is_template:
        raise UnsupportedError(
            "map has no exact cell data; use energyQuadratureOracle")
    return float(explicit_elastic(m.cells, ctx))


def surfaceEnergyExact(m, includeBoundaryFacets=False):
    """Exact interfacial energy: sum of |jump| x measure over facets.

    Interior facets are always counted once.  With includeBoundaryFacets,
    facets on the domain boundary are matched against the boundary datum
    gradient F.
    """
    ctx = EvalCtx(_ctx_wells(m), 2.0)
    if m.root is not None:
        total = float(m.root.surface(ctx))
        if includeBoundaryFacets:
            total += float(m.root.boundary_surface(ctx))
        return total
    if m.is_template:
        raise UnsupportedError(
            "map has no exact cell data; use energyQuadratureOracle")
    total, _ = explicit_surface_2d(
        m.cells, ctx, domain=m.domain, F=m.F,
        include_boundary=includeBoundaryFacets)
    return float(total)


def totalEnergy(m, ws, p, eps, includeBoundaryFacets=False):
    """Exact EnergyBreakdown: elastic + eps * surface."""
    return EnergyBreakdown(
        elasticEnergyExact(m, ws, p),
        surfaceEnergyExact(m, includeBoundaryFacets=includeBoundaryFacets),
        p, eps, includesBoundaryFacets=includeBoundaryFacets, mode="exact")


def chiEnergy(m, phase, ws, eps):
    """Phase-indicator energy: |grad u - chi|^2 volume term plus the summed
    total variations of the phase indicators.

    A facet separating phases i != j contributes its measure to both
    TV(chi_i) and TV(chi_j), hence twice to the surface term.  The phase
    field must be the nearest-well projection aligned with the map.
    """
    if phase.wellSet is not ws and not np.array_equal(
            np.asarray(phase.wellSet.matrices()), np.asarray(ws.matrices())):
        raise AlignmentError("phase field refers to a different well set")
    mats = np.asarray(ws.matrices(), dtype=float)
    ctx = EvalCtx(mats, 2.0, surface_mode="chi")
    if phase.source is m and m.root is not None:
        elastic = float(m.root.elastic(EvalCtx(mats, 2.0)))
        surface = float(m.root.surface(ctx))
        return EnergyBreakdown(elastic, surface, 2.0, eps, mode="chi")
    cells = m.cells
    chi = phase.cells
    if len(chi) != len(cells):
        raise AlignmentError(
            "phase field has %d entries for %d cells"
            % (len(chi), len(cells)))
    grads = np.array([c.gradient for c in cells])
    vols = np.array([c.volume() for c in cells])
    diff = grads - mats[chi - 1]
    elastic = float(np.einsum("kij,kij,k->", diff, diff, vols))
    nearest = nearest_well(grads, mats) + 1
    if not np.array_equal(chi, nearest):
        raise AlignmentError(
            "surface term requires the nearest-well projection")
    surface, _ = explicit_surface_2d(cells, ctx)
    return EnergyBreakdown(elastic, float(surface), 2.0, eps, mode="chi")


def energyQuadratureOracle(m, ws, p, eps, gridRes):
    """Independent grid-quadrature estimate of the energies.

    Samples the gradient at the centers of a uniform grid; the elastic term
    is the midpoint rule, the surface term sums Frobenius gradient
    differences across grid faces (a first-order total-variation estimate).

    Args:
        m: PiecewiseAffineMap.
        ws: WellSet.
        p: growth exponent.
        eps: interfacial parameter for the returned breakdown.
        gridRes: samples per axis (>= 16).

    Returns:
        EnergyBreakdown with mode "quadrature".
    """
    if gridRes < 16:
        raise ParameterError("gridRes must be >= 16, got %r" % gridRes)
    g = int(gridRes)
    n = m.dimension
    mats = np.asarray(ws.matrices(), dtype=float)
    lo = np.array([iv[0] for iv in m.domain])
    hi = np.array([iv[1] for iv in m.domain])
    d = (hi - lo) / g
    cellvol = float(np.prod(d))
    axes = [lo[i] + (np.arange(g) + 0.5) * d[i] for i in range(n)]
    elastic = 0.0
    surface = 0.0
    prev = None
    # Slab-by-slab along axis 0 to bound memory in 3D.
    cross = np.meshgrid(*axes[1:], indexing="ij") if n > 1 else []
    flat_cross = [c.ravel() for c in cross]
    for i0 in range(g):
        pts = np.empty((g ** (n - 1), n))
        pts[:, 0] = axes[0][i0]
        for k, fc in enumerate(flat_cross):
            pts[:, k + 1] = fc
        G = m.gradient_at(pts)
        elastic += float(dist_to_wells(G, mats, p).sum()) * cellvol
        if prev is not None:
            # faces orthogonal to axis 0: measure = cellvol / d[0]
            surface += float(frobenius(G - prev).sum()) * cellvol / d[0]
        prev = G
        slab = G.reshape((g,) * (n - 1) + (n, n))
        for ax in range(n - 1):
            dg = np.diff(slab, axis=ax)
            surface += float(frobenius(dg).sum()) * cellvol / d[ax + 1]
    return EnergyBreakdown(elastic, surface, p, eps, mode="quadrature")


def verifyBoundaryData(m, F=None, b=None, tol=1e-9, samplesPerSide=512):
    """Check that the boundary trace equals F x + b.

    Samples every face of the domain box on a uniform lattice (corners
    included) plus the lattice midpoints and compares the map's values with
    the affine datum.

    Returns:
        (ok, maxDeviation).
    """
    F = np.asarray(m.F if F is None else F, dtype=float)
    b = np.asarray(m.b if b is None else b, dtype=float)
    n = m.dimension
    lo = np.array([iv[0] for iv in m.domain])
    hi = np.array([iv[1] for iv in m.domain])
    ts = np.linspace(0.0, 1.0, samplesPerSide + 1)
    ts = np.sort(np.concatenate([ts, 0.5 * (ts[:-1] + ts[1:])]))
    worst = 0.0
    for ax in range(n):
        others = [k for k in range(n) if k != ax]
        grids = np.meshgrid(*[lo[k] + ts * (hi[k] - lo[k]) for k in others],
                            indexing="ij")
        face = np.empty((grids[0].size if grids else 1, n))
        for k, gr in zip(others, grids):
            face[:, k] = gr.ravel()
        for end in (lo[ax], hi[ax]):
            face[:, ax] = end
            V = m.value_at(face)
            dev = np.abs(V - face @ F.T - b).max()
            worst = max(worst, float(dev))
    return worst <= tol, worst
