"""Generators of 2D branched constructions of arbitrary lamination order."""

import numpy as np

from .branch2d import BranchNode2D
from .errors import (DomainError, GeometryError, ParameterError,
                     StructureError)
from .maps import BranchParams, PiecewiseAffineMap, default_theta
from .wells import WellSet, classifyBoundaryDatum, staircase2D

SEGMENT_TOL = 1e-10


def _as_matrix(M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return np.diag(M)
    return M


def _rect_to_intervals(rect):
    """Normalize a rectangle to a list of (lo, hi) per axis."""
    rect = [(float(lo), float(hi)) for lo, hi in rect]
    for lo, hi in rect:
        if hi <= lo:
            raise GeometryError("rectangle sides must be positive")
    return rect


def _oscillation_axis(diff, n):
    """Axis a with diff = c e_a x e_a, or raise StructureError."""
    diag = np.diag(diff)
    a = int(np.argmax(np.abs(diag)))
    c = diag[a]
    ea = np.zeros(n)
    ea[a] = 1.0
    if c == 0.0 or not np.allclose(diff, c * np.outer(ea, ea), atol=1e-12):
        raise StructureError(
            "phase difference must be a rank-one diagonal matrix c e_a x e_a")
    return a, c


def branchFirstOrder2D(rect, A, B, F, params):
    """First-order branched laminate between two gradients A and B.

    Builds the self-similar refinement towers on the rectangle, mirrored
    about mid-height, with interpolation cut-off cells next to the top and
    bottom faces, so that the map attains the trace F x on the whole
    boundary.

    Args:
        rect: rectangle as ((x_lo, x_hi), (y_lo, y_hi)).
        A, B: the two gradients, with A - B = c e_a x e_a.
        F: boundary datum, F = lam*A + (1-lam)*B with lam in (0,1).
        params: BranchParams; uses theta and N (N > 4L/H where L is the
            side along the oscillation axis a).

    Returns:
        PiecewiseAffineMap with boundary trace F x.
    """
    rect = _rect_to_intervals(rect)
    A = _as_matrix(A)
    B = _as_matrix(B)
    F = _as_matrix(F)
    a, c = _oscillation_axis(A - B, 2)
    b = 1 - a
    lam = (F - B)[a, a] / c
    if not (SEGMENT_TOL < lam < 1.0 - SEGMENT_TOL):
        raise DomainError(
            "F must be a nondegenerate convex combination of A and B")
    if np.max(np.abs(F - (lam * A + (1.0 - lam) * B))) > SEGMENT_TOL:
        raise DomainError("F does not lie on the segment [A, B]")
    L = rect[a][1] - rect[a][0]
    H = rect[b][1] - rect[b][0]
    node = BranchNode2D(a, b, L, H, A, B, lam, params.theta, params.N)
    return PiecewiseAffineMap(2, rect, F, root=node, wells=[A, B])


def branchKOrder2D(ws, F, k, params, rect=((0.0, 1.0), (0.0, 1.0))):
    """Order-k branched construction for a staircase boundary datum.

    The datum is classified against the lamination hull of the well set;
    its split chain F = lam_1 A_1 + (1-lam_1) J_1, J_{i-1} = lam_i A_i +
    (1-lam_i) J_i drives a recursion: each level is a first-order branching
    between A_i and J_i whose J-strips host the next level's oscillation
    (straight translates in the laminar strips, sheared copies in the
    interpolation strips).

    Args:
        ws: WellSet whose hull contains F.
        F: diagonal boundary datum (vector or matrix) of lamination order k.
        k: expected order (must match the classification).
        params: BranchParams with len(radii) >= k; radii[i] sets the
            oscillation scale of level i+1.
        rect: rectangle as ((x_lo, x_hi), (y_lo, y_hi)).

    Returns:
        PiecewiseAffineMap with boundary trace F x.
    """
    rect = _rect_to_intervals(rect)
    F = _as_matrix(F)
    cls = classifyBoundaryDatum(ws, F)
    if cls.order != k:
        raise StructureError(
            "datum has lamination order %d, expected %d" % (cls.order, k))
    if len(params.radii) < k:
        raise ParameterError(
            "need %d radii for an order-%d construction, got %d"
            % (k, k, len(params.radii)))
    chain = cls.splitChain
    J1, A1, frac1 = chain[0]
    if k == 1:
        return branchFirstOrder2D(rect, A1, J1, F, params)
    a, _ = _oscillation_axis(A1 - J1, 2)
    b = 1 - a
    L = rect[a][1] - rect[a][0]
    H = rect[b][1] - rect[b][0]
    node = BranchNode2D(a, b, L, H, J1, A1, 1.0 - frac1, params.theta,
                        params.N, chain_rest=chain[1:],
                        scales_rest=params.radii[1:k])
    return PiecewiseAffineMap(2, rect, F, root=node, wells=ws.matrices())


def branchSecondOrder2D(F, r, r2, theta=None, eps=None, p=2):
    """Second-order construction for a datum between A_1 and J_1.

    Outer branching between A_1 = diag(1,0) and J_1 = diag(-1,0), with
    inner A_2/A_3 branchings of scale r2 inside every refined strip
    (sheared copies in the interpolation strips).

    Args:
        F: datum F = lam*A_1 + (1-lam)*J_1, i.e. diag(2*lam - 1, 0).
        r: outer oscillation scale; the coarsest period is about lam*r.
        r2: inner oscillation scale, 0 < r2 < r/4.
        theta: branching ratio; defaults per default_theta(p).
        eps: interfacial parameter, recorded with the phase field.
        p: growth exponent used for the default theta.

    Returns:
        (PiecewiseAffineMap, PhaseField).
    """
    from .energy import projectGradientToWells

    if not (0.0 < r2 < r / 4.0 < 1.0):
        raise ParameterError(
            "need 0 < r2 < r/4 < 1, got r=%r, r2=%r" % (r, r2))
    F = _as_matrix(F)
    if abs(F[1, 1]) > SEGMENT_TOL or abs(F[0, 1]) > SEGMENT_TOL \
            or abs(F[1, 0]) > SEGMENT_TOL or not -1.0 < F[0, 0] < 1.0:
        raise DomainError("F must equal diag(f, 0) with |f| < 1")
    lam = (F[0, 0] + 1.0) / 2.0
    if not (SEGMENT_TOL < lam < 1.0 - SEGMENT_TOL):
        raise DomainError("F must be a nondegenerate combination")
    ws, _, _ = staircase2D(2, topFraction=lam)
    if theta is None:
        theta = default_theta(p)
    params = BranchParams(p, theta, [r, r2], int(np.ceil(4.0 / r)), lam)
    m = branchKOrder2D(ws, F, 2, params)
    return m, projectGradientToWells(m, ws)
