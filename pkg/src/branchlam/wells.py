"""Staircase well sets, lamination hulls, and boundary-datum classification.

Wells are diagonal n x n matrices stored as length-n vectors of diagonal
entries.  For the staircase families treated here the lamination convex hull
is a finite union of line segments in diagonal-matrix space; each lamination
step adds (at most) one new segment, obtained as the rank-one convex hull of
one well with a contact point on the previous segment.
"""

from fractions import Fraction

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    NotRepresentableError,
    UnsupportedStructureError,
)

MEMBERSHIP_TOL = 1e-10


class WellSet:
    """A finite set of diagonal matrices defining a multi-well problem.

    Attributes:
        dimension: ambient dimension n.
        wells: array of shape (m, n); row j holds the diagonal of well j.
        staircaseParams: list of nu parameters (Kn preset only) or None.
        preset: name of the generating preset, or None for custom sets.
    """

    def __init__(self, dimension, wells, staircaseParams=None, preset=None):
        wells = np.asarray(wells, dtype=float)
        if wells.ndim != 2 or wells.shape[1] != dimension:
            raise ConfigurationError("wells must be an (m, n) array of diagonals")
        for i in range(len(wells)):
            for j in range(i + 1, len(wells)):
                if np.max(np.abs(wells[i] - wells[j])) <= MEMBERSHIP_TOL:
                    raise ConfigurationError("wells must be pairwise distinct")
        self.dimension = int(dimension)
        self.wells = wells
        self.wells.setflags(write=False)
        self.staircaseParams = list(staircaseParams) if staircaseParams else None
        self.preset = preset

    def __len__(self):
        return len(self.wells)

    def well(self, index):
        """Return the diagonal vector of the 1-based well index."""
        return self.wells[index - 1]

    def well_matrix(self, index):
        """Return the full n x n matrix of the 1-based well index."""
        return np.diag(self.wells[index - 1])

    def matrices(self):
        """Return all wells as a (m, n, n) array of diagonal matrices."""
        m, n = self.wells.shape
        out = np.zeros((m, n, n))
        for j in range(m):
            out[j] = np.diag(self.wells[j])
        return out

    def to_json_dict(self, F=None):
        out = {"n": self.dimension, "wells": self.wells.tolist()}
        if F is not None:
            out["F"] = np.asarray(F, dtype=float).tolist()
        return out

    @staticmethod
    def from_json_dict(data):
        return WellSet(data["n"], data["wells"])


class HullSegment:
    """One segment of a lamination hull decomposition.

    Attributes:
        endpointLow / endpointHigh: diagonal vectors; Low has the smaller
            entry on the segment's rank-one axis.
        order: lamination order of the segment's interior points.
        openEndpoints: pair of booleans; True when the endpoint belongs to a
            lower-order stratum and is excluded from this one.
        axis: 0-based coordinate along which the endpoints differ.
        wellVertex: diagonal vector of the generating well endpoint.
        contact: diagonal vector of the other generating endpoint (a point of
            the previous hull layer; for order-1 segments, another well).
    """

    def __init__(self, endpointLow, endpointHigh, order, openEndpoints,
                 axis, wellVertex, contact):
        self.endpointLow = np.asarray(endpointLow, dtype=float)
        self.endpointHigh = np.asarray(endpointHigh, dtype=float)
        self.order = int(order)
        self.openEndpoints = tuple(openEndpoints)
        self.axis = int(axis)
        self.wellVertex = np.asarray(wellVertex, dtype=float)
        self.contact = np.asarray(contact, dtype=float)

    def contains(self, point, tol=MEMBERSHIP_TOL):
        """Return the parameter t with point = Low + t (High - Low), or None."""
        d = self.endpointHigh - self.endpointLow
        a = self.axis
        t = (point[a] - self.endpointLow[a]) / d[a]
        if t < -tol or t > 1.0 + tol:
            return None
        recon = self.endpointLow + t * d
        if np.max(np.abs(recon - np.asarray(point, dtype=float))) > tol:
            return None
        return min(max(t, 0.0), 1.0)

    def to_json_dict(self):
        return {
            "endpointLow": self.endpointLow.tolist(),
            "endpointHigh": self.endpointHigh.tolist(),
            "order": self.order,
            "openEndpoints": list(self.openEndpoints),
            "axis": self.axis,
        }


class LaminateClass:
    """Classification of an affine boundary datum by lamination order.

    Attributes:
        order: lamination order m (0 when F is a well).
        volumeFraction: fraction of the well phase in the top split.
        splitChain: list of (J, A, fraction) triples from coarsest to finest;
            each level satisfies level = fraction * A + (1 - fraction) * J and
            A - J is rank one.  J of the last triple is a well.
        wellIndex: 1-based index of the matching well when order is 0.
    """

    def __init__(self, order, volumeFraction, splitChain, wellIndex=None):
        self.order = int(order)
        self.volumeFraction = volumeFraction
        self.splitChain = splitChain
        self.wellIndex = wellIndex

    def reconstruct(self):
        """Rebuild F from the split chain by nested convex combinations."""
        if self.order == 0:
            raise DomainError("order-0 classification has no split chain")
        J, A, lam = self.splitChain[0]
        return lam * A + (1.0 - lam) * J


def makeWellSet(preset, n, nuParams=None):
    """Construct one of the staircase well-set presets.

    Args:
        preset: one of "K2", "K3", "K4", "Kn".
        n: ambient dimension (K2/K3 need n=2, K4 needs n=3, Kn needs n>=4).
        nuParams: for Kn, the n-3 parameters nu_5..nu_{n+1}, each in (0,1).

    Returns:
        WellSet with the preset's diagonal wells.
    """
    if preset == "K2":
        if n != 2:
            raise ConfigurationError("K2 requires n=2")
        return WellSet(2, [[1.0, 0.0], [-1.0, 0.0]], preset="K2")
    if preset == "K3":
        if n != 2:
            raise ConfigurationError("K3 requires n=2")
        return WellSet(2, [[1.0, 0.0], [-1.0, -1.0], [-1.0, 1.0]], preset="K3")
    if preset == "K4":
        if n != 3:
            raise ConfigurationError("K4 requires n=3")
        wells = [[1.0, 0.0, 0.0], [-1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
                 [0.0, 0.0, 1.0]]
        return WellSet(3, wells, preset="K4")
    if preset == "Kn":
        if n < 4:
            raise ConfigurationError("Kn requires n>=4")
        if nuParams is None or len(nuParams) != n - 3:
            raise ConfigurationError(
                "Kn in dimension n requires exactly n-3 nu parameters")
        nus = [float(v) for v in nuParams]
        for v in nus:
            if not 0.0 < v < 1.0:
                raise DomainError("nu parameters must lie in (0,1)")
        wells = np.zeros((n + 1, n))
        wells[0, 0] = 1.0
        wells[1, 0] = -1.0
        wells[1, 1] = -1.0
        wells[2, 0] = -1.0
        wells[2, 1] = 1.0
        # Well A_{j+1} for j = 3..n: nu_5..nu_{j+1} at slots 3..j-1 (1-based),
        # a 1 at slot j, zeros elsewhere.
        for j in range(3, n + 1):
            row = j  # 0-based row of A_{j+1}
            # nu indices 5..j+1 fill 1-based slots 3..j-1 in order.
            for idx, slot in enumerate(range(3, j)):
                wells[row, slot - 1] = nus[idx]
            wells[row, j - 1] = 1.0
        return WellSet(n, wells, staircaseParams=nus, preset="Kn")
    raise ConfigurationError("unknown preset %r" % (preset,))


def staircase2D(order, topFraction=0.4):
    """Build a 2D staircase chain of the given lamination order.

    Orders 1 and 2 use the K2 / K3 presets.  Higher orders append wells by
    offsetting the midpoint of the latest segment along the alternating axis,
    which extends the staircase by one split level per well.  For order >= 3
    the full lamination hull of the well set is no longer one-dimensional, so
    the split chain is built directly rather than through laminationHull.

    Args:
        order: lamination order k of the returned datum (>= 1).
        topFraction: fraction of the outermost well in the datum's top split.

    Returns:
        (WellSet, F, chain): the wells, an order-k diagonal datum (length-2
        vector), and the split chain as (J, A, fraction) matrix triples from
        coarsest to finest.
    """
    if order < 1:
        raise DomainError("order must be >= 1")
    if not 0.0 < topFraction < 1.0:
        raise DomainError("topFraction must lie in (0,1)")
    if order == 1:
        ws = makeWellSet("K2", 2)
        A, B = ws.wells[0], ws.wells[1]
        F = topFraction * A + (1 - topFraction) * B
        return ws, F, [(np.diag(B), np.diag(A), topFraction)]
    wells = [np.array([1.0, 0.0]), np.array([-1.0, -1.0]),
             np.array([-1.0, 1.0])]
    contacts = [np.array([-1.0, 0.0]), np.array([0.0, 0.0])]
    axis = 0  # axis of the latest segment
    off = 0.9
    for _ in range(3, order + 1):
        axis = 1 - axis
        e = np.zeros(2)
        e[axis] = off
        wells.append(contacts[-1] + e)
        contacts.append(contacts[-1] + 0.5 * e)
        off *= 0.8
    ws = WellSet(2, wells)
    k = order
    if k == 2:
        F = topFraction * wells[0] + (1 - topFraction) * contacts[0]
        chain = [(np.diag(contacts[0]), np.diag(wells[0]), topFraction)]
    else:
        F = topFraction * wells[k] + (1 - topFraction) * contacts[k - 2]
        chain = [(np.diag(contacts[k - 2]), np.diag(wells[k]), topFraction)]
        for i in range(2, k - 1):
            # Level i splits c_{k-i+1} = 0.5 A_{k+2-i} + 0.5 c_{k-i}.
            chain.append((np.diag(contacts[k - i - 1]),
                          np.diag(wells[k + 1 - i]), 0.5))
        # Second-to-last level: c_2 = 0.5 A_1 + 0.5 c_1.
        chain.append((np.diag(contacts[0]), np.diag(wells[0]), 0.5))
    chain.append((np.diag(wells[2]), np.diag(wells[1]), 0.5))
    return ws, F, chain


def _rank_one_axis(diff, tol=MEMBERSHIP_TOL):
    """Return the axis of a rank-one diagonal difference, or None."""
    nz = np.flatnonzero(np.abs(diff) > tol)
    if len(nz) == 1:
        return int(nz[0])
    return None


def rankOnePairs(ws):
    """List rank-one connected well pairs.

    Args:
        ws: WellSet.

    Returns:
        List of (i, j, direction) with 1-based well indices i < j and the unit
        coordinate vector along which the two wells differ.
    """
    out = []
    n = ws.dimension
    for i in range(len(ws.wells)):
        for j in range(i + 1, len(ws.wells)):
            axis = _rank_one_axis(ws.wells[i] - ws.wells[j])
            if axis is not None:
                e = np.zeros(n)
                e[axis] = 1.0
                out.append((i + 1, j + 1, e))
    return out


def _well_segment_contact(well, seg, tol=MEMBERSHIP_TOL):
    """Find a point on seg rank-one connected to the well.

    Returns (contact point, axis of the connection) or None.  Points of seg
    whose difference with the well is rank one must have all coordinates equal
    to the well's except one; since seg varies along a single axis, at most
    one parameter value qualifies per candidate axis.
    """
    lo, hi = seg.endpointLow, seg.endpointHigh
    d = hi - lo
    a = seg.axis
    diff0 = well - lo
    off_axis = [i for i in range(len(lo)) if i != a]
    # Off the segment axis the difference is constant; the connection axis
    # must absorb every nonzero constant entry.
    nz = [i for i in off_axis if abs(diff0[i]) > tol]
    if len(nz) > 1:
        return None
    if len(nz) == 1:
        # Connection along the off-segment axis nz[0]: need the on-axis
        # difference to vanish: t with lo[a] + t d[a] = well[a].
        t = (well[a] - lo[a]) / d[a]
        if -tol <= t <= 1.0 + tol:
            contact = lo + min(max(t, 0.0), 1.0) * d
            return contact, nz[0]
        return None
    # All off-axis entries match: the well differs from every segment point
    # only along the segment axis, i.e. the well is collinear with seg.
    return "collinear", a


def _segment_congruent(candidate_lo, candidate_hi, segments, tol=MEMBERSHIP_TOL):
    """True when [lo, hi] is contained in one of the existing segments."""
    for seg in segments:
        t0 = seg.contains(candidate_lo, tol)
        t1 = seg.contains(candidate_hi, tol)
        if t0 is not None and t1 is not None:
            return True
    return False


def _segments_rank_one_linked(s1, s2, tol=MEMBERSHIP_TOL):
    """True when interior points of s1 and s2 are rank-one connected."""
    n = len(s1.endpointLow)
    for axis in range(n):
        # Solve for (t, u) making all entries except `axis` vanish:
        # s1(t) - s2(u) = (lo1 - lo2) + t d1 - u d2.
        rows = [i for i in range(n) if i != axis]
        A = np.zeros((len(rows), 2))
        b = np.zeros(len(rows))
        d1 = s1.endpointHigh - s1.endpointLow
        d2 = s2.endpointHigh - s2.endpointLow
        for r, i in enumerate(rows):
            A[r, 0] = d1[i]
            A[r, 1] = -d2[i]
            b[r] = s2.endpointLow[i] - s1.endpointLow[i]
        sol, residual, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        fit = A @ sol - b
        if np.max(np.abs(fit)) > tol:
            continue
        if rank < 2:
            # A line of solutions sol + alpha*v; take the point closest to
            # the box center, which is interior iff any solution is.
            _, _, vt = np.linalg.svd(A, full_matrices=True)
            v = vt[-1]
            alpha = float(v @ (np.array([0.5, 0.5]) - sol))
            sol = sol + alpha * v
            if np.max(np.abs(A @ sol - b)) > tol:
                continue
        t, u = sol
        if tol < t < 1 - tol and tol < u < 1 - tol:
            p1 = s1.endpointLow + t * d1
            p2 = s2.endpointLow + u * d2
            if abs(p1[axis] - p2[axis]) > tol:
                return True
    return False


def _oriented(p, q, axis):
    """Order two points so the smaller value on `axis` comes first."""
    if p[axis] <= q[axis]:
        return p, q
    return q, p


def laminationHull(ws, maxOrder=None):
    """Compute the lamination hull decomposition of a staircase well set.

    Iterates hull steps, each adding segments spanned by rank-one convex
    combinations of the current hull with itself; for staircase sets every
    step contributes at most one new segment.  Stops at maxOrder or at a
    fixed point.

    Args:
        ws: WellSet (staircase structure required).
        maxOrder: maximal lamination order to compute; default: run to the
            fixed point.

    Returns:
        List of HullSegment ordered by increasing order.
    """
    if maxOrder is None:
        maxOrder = len(ws.wells) + 1
    if maxOrder < 1:
        raise DomainError("maxOrder must be >= 1")
    segments = []
    wells = ws.wells
    for step in range(1, maxOrder + 1):
        new = []
        if step == 1:
            for i in range(len(wells)):
                for j in range(i + 1, len(wells)):
                    axis = _rank_one_axis(wells[i] - wells[j])
                    if axis is None:
                        continue
                    lo, hi = _oriented(wells[i], wells[j], axis)
                    new.append(HullSegment(lo, hi, 1, (True, True), axis,
                                           wells[i], wells[j]))
        else:
            prev = [s for s in segments if s.order == step - 1]
            for seg in prev:
                for w in wells:
                    hit = _well_segment_contact(w, seg)
                    if hit is None or hit[0] is None:
                        continue
                    if isinstance(hit[0], str):  # collinear: already covered
                        continue
                    contact, axis = hit
                    if np.max(np.abs(contact - w)) <= MEMBERSHIP_TOL:
                        continue
                    if _segment_congruent(*_oriented(w, contact, axis),
                                          segments):
                        continue
                    lo, hi = _oriented(w, contact, axis)
                    new.append(HullSegment(lo, hi, step, (True, True), axis,
                                           w, contact))
        # Deduplicate identical candidates.
        unique = []
        for s in new:
            dup = any(np.max(np.abs(s.endpointLow - u.endpointLow)) < 1e-12
                      and np.max(np.abs(s.endpointHigh - u.endpointHigh)) < 1e-12
                      for u in unique)
            if not dup:
                unique.append(s)
        if len(unique) >= 2:
            for i in range(len(unique)):
                for j in range(i + 1, len(unique)):
                    if _segments_rank_one_linked(unique[i], unique[j]):
                        raise UnsupportedStructureError(
                            "hull step %d produces a two-dimensional region; "
                            "only staircase (segment-union) hulls are "
                            "supported" % step)
        if not unique:
            break
        segments.extend(unique)
    return segments


def classifyBoundaryDatum(ws, F):
    """Classify a diagonal boundary datum by lamination order.

    Args:
        ws: WellSet.
        F: diagonal vector or diagonal matrix.

    Returns:
        LaminateClass with the order, top volume fraction, and the full split
        chain down to wells.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim == 2:
        if np.max(np.abs(F - np.diag(np.diag(F)))) > MEMBERSHIP_TOL:
            raise NotRepresentableError("boundary datum must be diagonal")
        F = np.diag(F).copy()
    for idx in range(len(ws.wells)):
        if np.max(np.abs(F - ws.wells[idx])) <= MEMBERSHIP_TOL:
            return LaminateClass(0, None, [], wellIndex=idx + 1)
    segments = laminationHull(ws)
    segments = sorted(segments, key=lambda s: s.order)
    for seg in segments:
        t = seg.contains(F)
        if t is None:
            continue
        return _build_chain(ws, segments, seg, F)
    raise NotRepresentableError(
        "datum does not lie on the lamination hull (tol %g)" % MEMBERSHIP_TOL)


def _build_chain(ws, segments, seg, F):
    """Assemble the split chain for F on segment seg."""
    chain = []
    current = F
    current_seg = seg
    order = seg.order
    top_fraction = None
    while True:
        A = current_seg.wellVertex
        J = current_seg.contact
        # current = lam * A + (1 - lam) * J along the segment axis.
        a = current_seg.axis
        denom = A[a] - J[a]
        lam = (current[a] - J[a]) / denom
        lam = min(max(lam, 0.0), 1.0)
        if top_fraction is None:
            top_fraction = lam
        chain.append((np.diag(J), np.diag(A), lam))
        if current_seg.order == 1:
            break
        current = J
        nxt = None
        for s in segments:
            if s.order == current_seg.order - 1 and s.contains(J) is not None:
                nxt = s
                break
        if nxt is None:
            raise NotRepresentableError("split chain hit a gap in the hull")
        current_seg = nxt
    return LaminateClass(order, top_fraction, chain)


def predictedExponent(p, order):
    """Predicted energy-scaling exponent p/(m+p) as an exact rational.

    Args:
        p: growth exponent of the elastic energy (>= 1).
        order: lamination order m of the boundary datum (>= 1).

    Returns:
        fractions.Fraction equal to p/(order+p).
    """
    if order < 1:
        raise DomainError("order must be >= 1")
    pf = Fraction(p).limit_denominator(10**9) if isinstance(p, float) \
        else Fraction(p)
    if pf < 1:
        raise DomainError("p must be >= 1")
    return pf / (order + pf)
