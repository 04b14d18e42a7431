"""Generators of 3D slab constructions of first and second order."""

import math

import numpy as np

from .builders2d import SEGMENT_TOL, _as_matrix, _oscillation_axis
from .errors import DomainError, GeometryError, ParameterError
from .maps import PiecewiseAffineMap, default_theta
from .pyramid3d import PyramidNode3D
from .slab3d import SlabNode3D

# Axis triples (oscillation, branching, passive) for the two slab modes
# m = 1 (oscillation along x1, branching along x3, extrusion along x2) and
# m = 2 (oscillation along x2, branching along x1, extrusion along x3).
_SLAB_AXES = {1: (0, 2, 1), 2: (1, 0, 2)}


def _box_to_intervals(box):
    """Normalize a box to a list of three (lo, hi) intervals."""
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != 3:
        raise GeometryError("a 3D box needs three intervals")
    for lo, hi in box:
        if hi <= lo:
            raise GeometryError("box sides must be positive")
    return box


def branchSlab3D(box, A, B, m, rho, F, eps=None, theta=None, p=2):
    """First-order slab: an extruded 2D branching with a clamp layer.

    The plane branching between A and B (oscillation axis e_m, refinement
    towards the branching axis) is extruded along the remaining passive
    axis; linear clamp layers of width rho * (passive length) next to the
    two passive faces bring the oscillation to zero there, so the map
    attains the trace F x on all six faces.

    Args:
        box: box as ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi)).
        A, B: the two gradients, with A - B = c e_m x e_m.
        m: oscillation axis, 1 or 2 (one-based); m = 1 branches along x3
            and extrudes along x2, m = 2 branches along x1 and extrudes
            along x3.
        rho: clamp fraction; must satisfy rho < (branch length)/4.
        F: boundary datum, F = lam*A + (1-lam)*B with lam in (0,1).
        eps: interfacial parameter (unused by the geometry; accepted so
            callers can keep energy parameters together).
        theta: branching ratio; defaults per default_theta(p).
        p: growth exponent used for the default theta.

    Returns:
        PiecewiseAffineMap with boundary trace F x.
    """
    box = _box_to_intervals(box)
    A = _as_matrix(A)
    B = _as_matrix(B)
    F = _as_matrix(F)
    if m not in _SLAB_AXES:
        raise ParameterError("oscillation axis m must be 1 or 2, got %r" % m)
    a, b, q = _SLAB_AXES[m]
    ax, c = _oscillation_axis(A - B, 3)
    if ax != a:
        raise ParameterError(
            "A - B oscillates along axis %d, expected axis %d for m=%d"
            % (ax + 1, a + 1, m))
    lam = (F - B)[a, a] / c
    if not (SEGMENT_TOL < lam < 1.0 - SEGMENT_TOL):
        raise DomainError(
            "F must be a nondegenerate convex combination of A and B")
    if np.max(np.abs(F - (lam * A + (1.0 - lam) * B))) > SEGMENT_TOL:
        raise DomainError("F does not lie on the segment [A, B]")
    L = box[a][1] - box[a][0]
    H = box[b][1] - box[b][0]
    Lq = box[q][1] - box[q][0]
    rho = float(rho)
    if not (0.0 < rho < H / 4.0):
        raise ParameterError(
            "rho must lie in (0, H/4) with H the branch length, got %r" % rho)
    if theta is None:
        theta = default_theta(p)
    N = max(int(math.ceil(L / rho)), int(math.floor(4.0 * L / H)) + 1)
    node = SlabNode3D(a, b, q, L, H, Lq, A, B, lam, theta, N, rho)
    return PiecewiseAffineMap(3, box, F, root=node, wells=[A, B])


def secondOrderWells3D():
    """The three 3x3 wells A_1, A_2, A_3 of the second-order slab chain."""
    return np.array([np.diag([1.0, 0.0, 0.0]),
                     np.diag([-1.0, -1.0, 0.0]),
                     np.diag([-1.0, 1.0, 0.0])])


def branchSecondOrder3D(box, rho1, rho2, eps=None, theta=None, p=2):
    """Second-order slab construction with zero boundary trace.

    The outer slab oscillates between A_1 = diag(1,0,0) and
    J_1 = diag(-1,0,0) along x1, branching along x3 and extruding along
    x2 with clamp fraction rho1.  Every refined J_1-strip of generation j
    hosts an inner A_2/A_3 slab oscillating along x2 with period and clamp
    width scaled by 2^-(j+3) relative to rho2 (sheared copies inside the
    interpolation strips).

    Args:
        box: box as ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi)).
        rho1: outer scale; clamp width rho1 * L2, coarsest period about
            rho1.
        rho2: inner scale, 0 < rho2 < rho1 < L3/4.
        eps: interfacial parameter (unused by the geometry).
        theta: branching ratio; defaults per default_theta(p).
        p: growth exponent used for the default theta.

    Returns:
        PiecewiseAffineMap with zero boundary trace.
    """
    box = _box_to_intervals(box)
    rho1 = float(rho1)
    rho2 = float(rho2)
    L1 = box[0][1] - box[0][0]
    L2 = box[1][1] - box[1][0]
    L3 = box[2][1] - box[2][0]
    if not (0.0 < rho2 < rho1 < L3 / 4.0):
        raise ParameterError(
            "need 0 < rho2 < rho1 < L3/4, got rho1=%r, rho2=%r" % (rho1, rho2))
    if theta is None:
        theta = default_theta(p)
    wells = secondOrderWells3D()
    A1, A2, A3 = wells
    J1 = np.diag([-1.0, 0.0, 0.0])
    N = max(int(math.ceil(L1 / rho1)), int(math.floor(4.0 * L1 / L3)) + 1)
    node = SlabNode3D(0, 2, 1, L1, L3, L2, J1, A1, 0.5, theta, N,
                      rho1 / L2, chain_rest=[(A2, A3, 0.5)],
                      scales_rest=[rho2], rho_rest=[rho2])
    return PiecewiseAffineMap(3, box, np.zeros((3, 3)), root=node,
                              wells=wells)

def thirdOrderWells3D():
    """The four 3x3 wells A_1, ..., A_4 of the pyramidal construction."""
    return np.array([np.diag([1.0, 0.0, 0.0]),
                     np.diag([-1.0, -1.0, 0.0]),
                     np.diag([-1.0, 1.0, 0.0]),
                     np.diag([0.0, 0.0, 1.0])])


def branchThirdOrder3D(lam, r, r2, r3, eps=None, theta=None, p=2, N=None):
    """Third-order pyramidal construction on the unit cube.

    The boundary trace is lam * A4 x with A4 = diag(0,0,1); the outer
    stage oscillates between 0 and A4 along x3, branching radially in the
    max-norm pyramid profile, and its zero strips host second-order slab
    inserts at the scales r2 (oscillation/clamp) and r3 (inner stage and
    margins), rescaled by 2^-(j+3) in generation j.

    Args:
        lam: volume fraction of the A4 phase, in (0, 1).
        r, r2, r3: strictly decreasing length scales in (0, 1); the outer
            period is about r, e.g. (r, r2, r3) = (t, t^2, t^3).
        eps: interfacial parameter (unused by the geometry).
        theta: branching ratio, in (1/4, 1/2); defaults per
            default_theta(p) when admissible.
        p: growth exponent used for the default theta.
        N: coarsest oscillation count override.

    Returns:
        PiecewiseAffineMap with boundary trace lam * A4 x.
    """
    if not (SEGMENT_TOL < lam < 1.0 - SEGMENT_TOL):
        raise DomainError("lam must lie in (0, 1), got %r" % lam)
    if not (0.0 < r3 < r2 < r < 1.0):
        raise ParameterError(
            "need 0 < r3 < r2 < r < 1, got r=%r, r2=%r, r3=%r" % (r, r2, r3))
    if theta is None:
        theta = min(max(default_theta(p), 0.27), 0.45)
    node = PyramidNode3D(lam, r, r2, r3, float(theta), N=N)
    return PiecewiseAffineMap(3, [(0.0, 1.0)] * 3, node.F, root=node,
                              wells=thirdOrderWells3D())
