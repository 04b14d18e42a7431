"""Piecewise affine map container and construction parameters."""

import math

import numpy as np

from .errors import (DomainError, GeometryError, ParameterError,
                     UnsupportedError)
from .geometry import Cell

DEFAULT_CELL_CAP = 1_200_000


def default_theta(p):
    """Default branching ratio: midpoint of the admissible interval."""
    if p > 1:
        return (2.0 ** (-p / (p - 1.0)) + 0.5) / 2.0
    return 0.4


class BranchParams:
    """Parameters of a branched construction.

    Attributes:
        p: growth exponent of the elastic energy, p >= 1.
        theta: branching ratio in (0, 1/2); for p > 1 additionally
            theta > 2^(-p/(p-1)).
        radii: decreasing list of per-order length scales r_1 > ... > r_k.
        N: coarsest oscillation count (positive integer).
        lam: volume fraction in (0, 1).
    """

    def __init__(self, p, theta, radii, N, lam):
        p = float(p)
        if p < 1:
            raise ParameterError("p must be >= 1, got %r" % p)
        theta = float(theta)
        if not (0.0 < theta < 0.5):
            raise ParameterError("theta must lie in (0, 1/2), got %r" % theta)
        if p > 1 and theta <= 2.0 ** (-p / (p - 1.0)):
            raise ParameterError(
                "theta must exceed 2^(-p/(p-1)) = %r for p = %r"
                % (2.0 ** (-p / (p - 1.0)), p))
        radii = [float(r) for r in radii]
        if any(r <= 0 for r in radii):
            raise ParameterError("radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise ParameterError("radii must be strictly decreasing")
        if int(N) != N or N < 1:
            raise ParameterError("N must be a positive integer, got %r" % N)
        lam = float(lam)
        if not (0.0 < lam < 1.0):
            raise DomainError("lambda must lie in (0, 1), got %r" % lam)
        self.p = p
        self.theta = theta
        self.radii = radii
        self.N = int(N)
        self.lam = lam

    def with_lam(self, lam):
        return BranchParams(self.p, self.theta, self.radii, self.N, lam)

    def to_json_dict(self):
        return {"p": self.p, "theta": self.theta, "radii": self.radii,
                "N": self.N, "lambda": self.lam}

    @staticmethod
    def from_json_dict(d):
        return BranchParams(d["p"], d["theta"], d["radii"], d["N"],
                            d["lambda"])

    def __repr__(self):
        return ("BranchParams(p=%r, theta=%r, radii=%r, N=%r, lam=%r)"
                % (self.p, self.theta, self.radii, self.N, self.lam))


def optimalParameters(p, order, eps, theta=None, lam=0.5):
    """Energy-optimal parameters for a given order and transition scale.

    Sets r = eps^(1/(order+p)), r_i = r^i, N = ceil(4/r).

    Args:
        p: growth exponent.
        order: lamination order m >= 1.
        eps: interfacial parameter in (0, 1).
        theta: branching ratio; defaults per default_theta.
        lam: volume fraction stored in the result.

    Returns:
        BranchParams.
    """
    if not (0.0 < eps < 1.0):
        raise DomainError("eps must lie in (0, 1), got %r" % eps)
    if order < 1:
        raise ParameterError("order must be >= 1, got %r" % order)
    r = eps ** (1.0 / (order + p))
    radii = [r ** i for i in range(1, order + 1)]
    N = int(math.ceil(4.0 / r))
    if theta is None:
        theta = default_theta(p)
    return BranchParams(p, theta, radii, N, lam)


class PiecewiseAffineMap:
    """A piecewise affine u: domain -> R^n with boundary trace Fx + b.

    Backed either by a hierarchical construction tree (`root`) or by an
    explicit cell list.  The `cells` property materializes the explicit
    complex (subject to a cell-count cap).
    """

    def __init__(self, dimension, domain, F, b=None, root=None,
                 explicit_cells=None, wells=None, cell_cap=DEFAULT_CELL_CAP):
        self.dimension = int(dimension)
        self.domain = [(float(lo), float(hi)) for lo, hi in domain]
        self.F = np.asarray(F, dtype=float)
        self.b = (np.zeros(self.dimension) if b is None
                  else np.asarray(b, dtype=float))
        self.root = root
        self._explicit = explicit_cells
        self.wells = None if wells is None else np.asarray(wells, dtype=float)
        self.cell_cap = int(cell_cap)
        self._cells_cache = None

    @property
    def origin(self):
        return np.array([lo for lo, _ in self.domain])

    @property
    def volume(self):
        v = 1.0
        for lo, hi in self.domain:
            v *= hi - lo
        return v

    def is_template(self):
        return self.root is not None

    def count_cells(self):
        if self._explicit is not None:
            return len(self._explicit)
        return self.root.count_cells()

    @property
    def cells(self):
        if self._cells_cache is not None:
            return self._cells_cache
        if self._explicit is not None:
            self._cells_cache = self._explicit
            return self._cells_cache
        ncells = self.root.count_cells()
        if ncells > self.cell_cap:
            raise GeometryError(
                "explicit complex would have %d cells (cap %d); use the "
                "template-backed evaluators instead" % (ncells, self.cell_cap))
        geoms = self.root.collect_geoms()
        x0 = self.origin
        cents = np.array([np.mean(v, axis=0) for v, _ in geoms])
        G, V = self.root.eval_points(cents)
        cells = []
        for i, (verts, kind) in enumerate(geoms):
            vv = np.asarray(verts, dtype=float) + x0
            off = (V[i] + self.F @ x0 + self.b) - G[i] @ (cents[i] + x0)
            hint = None
            if self.wells is not None:
                from .geometry import nearest_well
                hint = int(nearest_well(G[i], self.wells)) + 1
            cells.append(Cell(kind, vv, G[i], off, hint))
        self._cells_cache = cells
        return cells

    def gradient_at(self, pts):
        """Gradients of u at interior points (N, n) -> (N, n, n)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.root is not None:
            G, _ = self.root.eval_points(pts - self.origin)
            return G
        return self._explicit_eval(pts)[0]

    def value_at(self, pts):
        """Values of u at points (N, n) -> (N, n)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.root is not None:
            _, V = self.root.eval_points(pts - self.origin)
            return V + self.F @ self.origin + self.b
        return self._explicit_eval(pts)[1]

    def _explicit_eval(self, pts):
        if self.dimension != 2:
            raise UnsupportedError(
                "explicit point evaluation supported in 2D only")
        from matplotlib.path import Path
        n = len(pts)
        G = np.zeros((n, self.dimension, self.dimension))
        V = np.zeros((n, self.dimension))
        found = np.zeros(n, dtype=bool)
        for cell in self._explicit:
            todo = ~found
            if not todo.any():
                break
            path = Path(cell.vertices[:, :2])
            inside = np.zeros(n, dtype=bool)
            inside[todo] = path.contains_points(pts[todo, :2], radius=1e-12)
            inside &= todo
            G[inside] = cell.gradient
            V[inside] = pts[inside] @ cell.gradient.T + cell.offset
            found |= inside
        if not found.all():
            # Retry stragglers with a fattened boundary.
            for cell in self._explicit:
                todo = ~found
                if not todo.any():
                    break
                path = Path(cell.vertices[:, :2])
                inside = np.zeros(n, dtype=bool)
                inside[todo] = path.contains_points(pts[todo, :2],
                                                    radius=1e-7)
                inside &= todo
                G[inside] = cell.gradient
                V[inside] = pts[inside] @ cell.gradient.T + cell.offset
                found |= inside
        if not found.all():
            raise GeometryError(
                "%d points not located in any cell" % int((~found).sum()))
        return G, V

    def to_json_dict(self):
        return {
            "dimension": self.dimension,
            "domain": [list(d) for d in self.domain],
            "F": self.F.tolist(),
            "b": self.b.tolist(),
            "cells": [c.to_json_dict() for c in self.cells],
        }

    @staticmethod
    def from_json_dict(d):
        cells = [Cell.from_json_dict(c) for c in d["cells"]]
        return PiecewiseAffineMap(d["dimension"], d["domain"], d["F"],
                                  d.get("b"), explicit_cells=cells)
