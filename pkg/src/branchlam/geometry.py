"""Geometric primitives: affine transforms, cells, and facet profiles.

Constructions are stored hierarchically (per-generation block templates with
multiplicities), so surface energies are computed from one-dimensional
"profiles": piecewise-constant gradient patterns along a facet line.  Exact
facet sums reduce to overlays of two profiles, with periodic patterns kept
compressed whenever the opposite side is constant.
"""

import numpy as np

from .errors import InconsistencyError

# Hard cap on explicit profile pieces; beyond this the caller must use the
# bounded bookkeeping fallback.
EXPAND_CAP = 4_000_000


class Transform:
    """Affine conjugation applied to an embedded construction.

    Gradients map as G -> G @ M + Q (precomposition with the inverse shear
    plus the affine correction); facet geometry maps forward with D, so a
    facet segment of direction tau scales by |D tau| / |tau|.  Volumes scale
    by |det D| (1 for shears).
    """

    def __init__(self, M, Q, D):
        self.M = np.asarray(M, dtype=float)
        self.Q = np.asarray(Q, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self._key = (self.M.tobytes(), self.Q.tobytes(), self.D.tobytes())

    @staticmethod
    def identity(n):
        z = np.zeros((n, n))
        return Transform(np.eye(n), z, np.eye(n))

    @property
    def key(self):
        return self._key

    def is_identity(self):
        n = len(self.M)
        return (np.array_equal(self.M, np.eye(n))
                and not self.Q.any()
                and np.array_equal(self.D, np.eye(n)))

    def grad(self, G):
        """Transform a single gradient or an array of gradients (..., n, n)."""
        return np.asarray(G) @ self.M + self.Q

    def length_factor(self, tau):
        """Length scale factor for a facet segment of direction tau."""
        tau = np.asarray(tau, dtype=float)
        return float(np.linalg.norm(self.D @ tau) / np.linalg.norm(tau))

    def volume_factor(self):
        return abs(float(np.linalg.det(self.D)))

    def area_factor(self, t1, t2):
        """Area scale of a facet plane spanned by tangents t1, t2 (3D),
        per unit of the (unnormalized) parameter pair."""
        return float(np.linalg.norm(np.cross(self.D @ np.asarray(t1, float),
                                             self.D @ np.asarray(t2, float))))

    def normal_area_factor(self, nhat):
        """Area scale of a facet plane with unit normal nhat."""
        nhat = np.asarray(nhat, dtype=float)
        return self.volume_factor() * float(np.linalg.norm(
            np.linalg.solve(self.D.T, nhat)))

    def compose_inner(self, inner):
        """Return self o inner (inner applied first to raw gradients)."""
        M = inner.M @ self.M
        Q = inner.Q @ self.M + self.Q
        D = self.D @ inner.D
        return Transform(M, Q, D)


def shear_transform(n, axis_a, axis_b, s, GB):
    """Transform for a construction sheared along axis_a as a function of
    axis_b coordinate with slope s, embedded against outer B-phase GB.

    Gradients map as G -> G (I - s e_a x e_b) + s (GB e_a) x e_b, which keeps
    the host's A-phase datum continuous with the surrounding cells.
    """
    M = np.eye(n)
    M[axis_a, axis_b] -= s
    Q = np.zeros((n, n))
    Q[:, axis_b] = s * GB[:, axis_a]
    D = np.eye(n)
    D[axis_a, axis_b] = s
    return Transform(M, Q, D)


def frobenius(mats):
    """Frobenius norms of an array of matrices (..., n, n)."""
    m = np.asarray(mats)
    return np.sqrt(np.einsum("...ij,...ij->...", m, m))


def nearest_well(grads, wells):
    """Indices (0-based) of the nearest well for gradients (..., n, n).

    Ties break to the lowest index (argmin convention).
    """
    g = np.asarray(grads)
    d = g[..., None, :, :] - wells[None, ...] if g.ndim == 3 \
        else g[None, ...] - wells
    if g.ndim == 3:
        dist = np.einsum("kwij,kwij->kw", d, d)
        return np.argmin(np.round(dist, 12), axis=1)
    dist = np.einsum("wij,wij->w", d, d)
    return int(np.argmin(np.round(dist, 12)))


def dist_to_wells(grads, wells, p):
    """min_w |G - w|_F^p for gradients (..., n, n)."""
    g = np.asarray(grads)
    if g.ndim == 2:
        d = g[None, ...] - wells
        dist = np.sqrt(np.einsum("wij,wij->w", d, d))
        return float(np.min(dist) ** p)
    d = g[:, None, :, :] - wells[None, ...]
    dist = np.sqrt(np.einsum("kwij,kwij->kw", d, d))
    return np.min(dist, axis=1) ** p


class EvalCtx:
    """Evaluation context: wells, growth exponent, and surface mode.

    surface_mode "tv" sums |gradient jump|_F x measure over facets;
    "chi" sums 2 x measure over facets separating different nearest-well
    phases (each phase indicator's TV counts the facet once).
    """

    def __init__(self, wells_mats, p=2.0, surface_mode="tv"):
        self.wells = np.asarray(wells_mats, dtype=float)
        self.p = float(p)
        self.surface_mode = surface_mode
        self.key = (self.wells.tobytes(), self.p, surface_mode)

    def elastic_density(self, grads):
        return dist_to_wells(grads, self.wells, self.p)

    def facet_weight(self, Gplus, Gminus):
        """Per-unit-measure facet weight for arrays of side gradients."""
        gp = np.asarray(Gplus)
        gm = np.asarray(Gminus)
        if self.surface_mode == "tv":
            return frobenius(gp - gm)
        ip = nearest_well(gp.reshape(-1, *gp.shape[-2:]), self.wells)
        im = nearest_well(gm.reshape(-1, *gm.shape[-2:]), self.wells)
        return 2.0 * (ip != im).astype(float).reshape(gp.shape[:-2] or ())


class Profile:
    """Piecewise-constant matrix-valued pattern on [0, length].

    Attributes:
        breaks: array (m+1,) of increasing breakpoints starting at 0.
        grads: array (m, n, n) of per-piece gradients.
    """

    __slots__ = ("breaks", "grads")

    def __init__(self, breaks, grads):
        self.breaks = np.asarray(breaks, dtype=float)
        self.grads = np.asarray(grads, dtype=float)

    @property
    def length(self):
        return float(self.breaks[-1] - self.breaks[0])

    @property
    def npieces(self):
        return len(self.grads)

    @staticmethod
    def constant(length, G):
        G = np.asarray(G, dtype=float)
        return Profile(np.array([0.0, length]), G[None, :, :])

    def shifted_to_zero(self):
        if self.breaks[0] == 0.0:
            return self
        return Profile(self.breaks - self.breaks[0], self.grads)

    def tile(self, count):
        if count == 1:
            return self
        m = self.npieces
        if m * count > EXPAND_CAP:
            raise InconsistencyError("profile expansion exceeds cap")
        L = self.length
        offs = np.repeat(np.arange(count) * L, m)
        breaks = np.concatenate(
            [np.tile(self.breaks[:-1], count) + offs, [count * L]])
        grads = np.tile(self.grads, (count, 1, 1))
        return Profile(breaks, grads)

    @staticmethod
    def concat(profiles):
        parts_b = []
        parts_g = []
        off = 0.0
        for p in profiles:
            p = p.shifted_to_zero()
            parts_b.append(p.breaks[:-1] + off)
            parts_g.append(p.grads)
            off += p.length
        breaks = np.concatenate(parts_b + [[off]])
        grads = np.concatenate(parts_g)
        return Profile(breaks, grads)

    def map_grads(self, fn):
        return Profile(self.breaks, fn(self.grads))


class Section:
    """One section of a face profile: a pattern repeated `count` times.

    A constant stretch is a 1-piece pattern with count 1.  `gmap` is an
    optional gradient transform (applied lazily, e.g. a shear conjugation).
    """

    __slots__ = ("pattern", "count", "gmap")

    def __init__(self, pattern, count=1, gmap=None):
        self.pattern = pattern
        self.count = count
        self.gmap = gmap

    @property
    def length(self):
        return self.pattern.length * self.count

    @property
    def npieces(self):
        return self.pattern.npieces * self.count

    def expanded_pattern(self):
        pat = self.pattern if self.gmap is None \
            else self.pattern.map_grads(self.gmap)
        return pat.tile(self.count)


class FaceProfile:
    """A face's gradient pattern: an ordered list of Sections."""

    def __init__(self, sections):
        self.sections = sections

    @property
    def length(self):
        return sum(s.length for s in self.sections)

    @property
    def npieces(self):
        return sum(s.npieces for s in self.sections)

    @staticmethod
    def constant(length, G):
        return FaceProfile([Section(Profile.constant(length, G))])

    def map_grads(self, fn):
        out = []
        for s in self.sections:
            if s.gmap is None:
                out.append(Section(s.pattern, s.count, fn))
            else:
                g = s.gmap
                out.append(Section(s.pattern, s.count,
                                   lambda a, g=g, fn=fn: fn(g(a))))
        return FaceProfile(out)

    def expand(self):
        if self.npieces > EXPAND_CAP:
            raise InconsistencyError("face profile expansion exceeds cap")
        return Profile.concat([s.expanded_pattern() for s in self.sections])

    def overlay_const(self, G_other, ctx, gmap_self=None, gmap_other=None):
        """Exact facet sum against a constant opposite gradient.

        Periodic sections are evaluated on one period and multiplied by their
        repeat count, so the cost is independent of the repeat counts.
        """
        G_other = np.asarray(G_other, dtype=float)
        if gmap_other is not None:
            G_other = gmap_other(G_other)
        total = 0.0
        for s in self.sections:
            pat = s.pattern if s.gmap is None else s.pattern.map_grads(s.gmap)
            if gmap_self is not None:
                pat = pat.map_grads(gmap_self)
            lens = np.diff(pat.breaks)
            w = ctx.facet_weight(pat.grads,
                                 np.broadcast_to(G_other, pat.grads.shape))
            total += float(np.dot(w, lens)) * s.count
        return total


def overlay_tv(profile_a, profile_b, ctx, gmap_a=None, gmap_b=None):
    """Exact facet sum between two piecewise patterns of equal length.

    Args:
        profile_a, profile_b: Profile or FaceProfile of the same length.
        ctx: EvalCtx supplying the facet weight.
        gmap_a, gmap_b: optional gradient transforms per side.

    Returns:
        Sum over the merged subdivision of weight(Ga, Gb) x piece length.
    """
    pa = profile_a.expand() if isinstance(profile_a, FaceProfile) else profile_a
    pb = profile_b.expand() if isinstance(profile_b, FaceProfile) else profile_b
    if abs(pa.length - pb.length) > 1e-9 * max(pa.length, pb.length, 1.0):
        raise InconsistencyError(
            "overlay length mismatch: %r vs %r" % (pa.length, pb.length))
    ga = pa.grads if gmap_a is None else gmap_a(pa.grads)
    gb = pb.grads if gmap_b is None else gmap_b(pb.grads)
    a = pa.shifted_to_zero()
    b = pb.shifted_to_zero()
    breaks = np.unique(np.concatenate([a.breaks, b.breaks]))
    mids = 0.5 * (breaks[1:] + breaks[:-1])
    ia = np.clip(np.searchsorted(a.breaks, mids) - 1, 0, a.npieces - 1)
    ib = np.clip(np.searchsorted(b.breaks, mids) - 1, 0, b.npieces - 1)
    lens = np.diff(breaks)
    w = ctx.facet_weight(ga[ia], gb[ib])
    return float(np.dot(w, lens))


def _interval_weight(breaks, wlen, wcum, u, v):
    """Weighted length of [u, v] against per-piece weights.

    Args:
        breaks: piece breakpoints (m+1,) starting at 0.
        wlen: per-piece weight (m,).
        wcum: cumulative of wlen * piece length, with leading 0 (m+1,).
        u, v: interval inside [0, breaks[-1]].

    Returns:
        Integral of the piecewise-constant weight over [u, v].
    """
    if v <= u:
        return 0.0
    iu = min(max(int(np.searchsorted(breaks, u, side="right")) - 1, 0),
             len(wlen) - 1)
    iv = min(max(int(np.searchsorted(breaks, v, side="right")) - 1, 0),
             len(wlen) - 1)
    if iu == iv:
        return float(wlen[iu]) * (v - u)
    total = float(wlen[iu]) * (breaks[iu + 1] - u)
    total += float(wcum[iv] - wcum[iu + 1])
    total += float(wlen[iv]) * (v - breaks[iv])
    return total


def _pattern_vs_const(section, lo, hi, G_other, ctx, gmap_self, gmap_other):
    """Facet sum of a periodic section restricted to [lo, hi] against a
    constant gradient, in time independent of the repeat count."""
    pat = section.pattern if section.gmap is None \
        else section.pattern.map_grads(section.gmap)
    if gmap_self is not None:
        pat = pat.map_grads(gmap_self)
    G_other = np.asarray(G_other, dtype=float)
    if gmap_other is not None:
        G_other = gmap_other(G_other)
    b = pat.breaks - pat.breaks[0]
    P = b[-1]
    w = ctx.facet_weight(pat.grads, np.broadcast_to(G_other, pat.grads.shape))
    per_period = float(np.dot(w, np.diff(b)))
    wcum = np.concatenate([[0.0], np.cumsum(w * np.diff(b))])
    k0 = int(np.floor(lo / P + 1e-12))
    k1 = int(np.floor((hi - 1e-12 * max(P, 1.0)) / P))
    k0 = max(k0, 0)
    k1 = min(k1, section.count - 1)
    if k0 == k1:
        return _interval_weight(b, w, wcum, lo - k0 * P, hi - k0 * P)
    total = _interval_weight(b, w, wcum, lo - k0 * P, P)
    total += per_period * (k1 - k0 - 1)
    total += _interval_weight(b, w, wcum, 0.0, hi - k1 * P)
    return total


def _restrict_section(section, lo, hi):
    """Explicit Profile of a section restricted to [lo, hi]."""
    pat = section.expanded_pattern()
    b = pat.breaks - pat.breaks[0]
    i0 = min(max(int(np.searchsorted(b, lo, side="right")) - 1, 0),
             pat.npieces - 1)
    i1 = min(max(int(np.searchsorted(b, hi, side="left")) - 1, 0),
             pat.npieces - 1)
    breaks = np.concatenate([[lo], b[i0 + 1:i1 + 1], [hi]])
    return Profile(breaks - lo, pat.grads[i0:i1 + 2][:i1 - i0 + 1])


def _section_boundaries(face):
    offs = [0.0]
    for s in face.sections:
        offs.append(offs[-1] + s.length)
    return np.array(offs)


def overlay_faces(fa, fb, ctx, gmap_a=None, gmap_b=None):
    """Exact facet sum between two FaceProfiles of equal length.

    Streams over merged section boundaries; a periodic section facing a
    constant section costs O(pieces per period), independent of the repeat
    count.  Only stretches where both sides are non-constant are expanded.
    """
    if isinstance(fa, Profile):
        fa = FaceProfile([Section(fa)])
    if isinstance(fb, Profile):
        fb = FaceProfile([Section(fb)])
    La, Lb = fa.length, fb.length
    if abs(La - Lb) > 1e-9 * max(La, Lb, 1.0):
        raise InconsistencyError(
            "overlay length mismatch: %r vs %r" % (La, Lb))
    oa = _section_boundaries(fa)
    ob = _section_boundaries(fb)
    bounds = np.unique(np.concatenate([oa, ob]))
    total = 0.0
    for u, v in zip(bounds[:-1], bounds[1:]):
        if v - u <= 1e-15 * max(La, 1.0):
            continue
        ia = min(max(int(np.searchsorted(oa, u, side="right")) - 1, 0),
                 len(fa.sections) - 1)
        ib = min(max(int(np.searchsorted(ob, u, side="right")) - 1, 0),
                 len(fb.sections) - 1)
        sa, sb = fa.sections[ia], fb.sections[ib]
        la, ha = u - oa[ia], v - oa[ia]
        lb, hb = u - ob[ib], v - ob[ib]
        a_const = sa.npieces == 1
        b_const = sb.npieces == 1
        if a_const and b_const:
            Ga = sa.pattern.grads[0]
            if sa.gmap is not None:
                Ga = sa.gmap(Ga)
            if gmap_a is not None:
                Ga = gmap_a(Ga)
            Gb = sb.pattern.grads[0]
            if sb.gmap is not None:
                Gb = sb.gmap(Gb)
            if gmap_b is not None:
                Gb = gmap_b(Gb)
            total += float(ctx.facet_weight(Ga[None], Gb[None])[0]) * (v - u)
        elif b_const:
            Gb = sb.pattern.grads[0]
            if sb.gmap is not None:
                Gb = sb.gmap(Gb)
            total += _pattern_vs_const(sa, la, ha, Gb, ctx, gmap_a, gmap_b)
        elif a_const:
            Ga = sa.pattern.grads[0]
            if sa.gmap is not None:
                Ga = sa.gmap(Ga)
            total += _pattern_vs_const(sb, lb, hb, Ga, ctx, gmap_b, gmap_a)
        else:
            pa = _restrict_section(sa, la, ha)
            pb = _restrict_section(sb, lb, hb)
            total += overlay_tv(pa, pb, ctx, gmap_a, gmap_b)
    return total


def polygon_area(vertices):
    """Shoelace area of a 2D polygon given as an (m, 2) array."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


class Cell:
    """A convex polytopal cell carrying an affine map.

    Attributes:
        kind: "box", "shearbox", or "sector" (box cut by diagonal planes /
            simplex pieces).
        vertices: (m, n) array of the cell's vertices (2D: ordered polygon).
        gradient: (n, n) matrix.
        offset: n-vector, u(x) = gradient @ x + offset on the cell.
        phaseHint: optional 1-based well index.
    """

    __slots__ = ("kind", "vertices", "gradient", "offset", "phaseHint")

    def __init__(self, kind, vertices, gradient, offset, phaseHint=None):
        self.kind = kind
        self.vertices = np.asarray(vertices, dtype=float)
        self.gradient = np.asarray(gradient, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.phaseHint = phaseHint

    @property
    def dimension(self):
        return self.vertices.shape[1]

    def volume(self):
        if self.dimension == 2:
            return polygon_area(self.vertices)
        from scipy.spatial import ConvexHull
        return float(ConvexHull(self.vertices, qhull_options="QJ").volume)

    def centroid(self):
        return self.vertices.mean(axis=0)

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "vertices": self.vertices.tolist(),
            "gradient": self.gradient.tolist(),
            "offset": self.offset.tolist(),
            "phaseHint": self.phaseHint,
        }

    @staticmethod
    def from_json_dict(d):
        return Cell(d["kind"], d["vertices"], d["gradient"], d["offset"],
                    d.get("phaseHint"))


def _segment_overlap_1d(a0, a1, b0, b1):
    lo = max(a0, b0)
    hi = min(a1, b1)
    # Guard against corner-touching edges: require the overlap to be a
    # non-negligible fraction of the shorter edge.
    tol = max(1e-7 * min(a1 - a0, b1 - b0), 1e-14)
    return (lo, hi) if hi > lo + tol else None


def explicit_surface_2d(cells, ctx, domain=None, F=None,
                        include_boundary=False, tol=1e-9):
    """Exact facet-sum surface energy of an explicit 2D cell complex.

    Groups cell edges by their supporting line, overlays collinear edges from
    different cells, and sums weight x overlap length.  With
    include_boundary, edges on the domain boundary are matched against the
    boundary datum gradient F.

    Returns:
        (surface sum, max non-rank-one deviation observed).
    """
    edges = []  # (line key, t0, t1, cell index, direction, normal)
    for ci, cell in enumerate(cells):
        v = cell.vertices
        m = len(v)
        for i in range(m):
            p, q = v[i], v[(i + 1) % m]
            d = q - p
            L = np.hypot(d[0], d[1])
            if L < 1e-14:
                continue
            tau = d / L
            # Canonical line key: normal direction (nx, ny) with a sign
            # convention, and signed distance c with nx*x + ny*y = c.
            nrm = np.array([-tau[1], tau[0]])
            if nrm[0] < -1e-12 or (abs(nrm[0]) <= 1e-12 and nrm[1] < 0):
                nrm = -nrm
            c = float(nrm @ p)
            key = (round(nrm[0], 9), round(nrm[1], 9), round(c, 9))
            tdir = np.array([nrm[1], -nrm[0]])
            t0, t1 = float(tdir @ p), float(tdir @ q)
            if t0 > t1:
                t0, t1 = t1, t0
            edges.append((key, t0, t1, ci, nrm))
    groups = {}
    for e in edges:
        groups.setdefault(e[0], []).append(e)
    total = 0.0
    worst = 0.0
    for key, group in groups.items():
        for i in range(len(group)):
            _, a0, a1, ca, nrm = group[i]
            matched = np.zeros(0)
            for j in range(len(group)):
                if i >= j:
                    continue
                _, b0, b1, cb, _ = group[j]
                if ca == cb:
                    continue
                ov = _segment_overlap_1d(a0, a1, b0, b1)
                if ov is None:
                    continue
                # Distinguish true interfaces from cells merely touching the
                # same line from the same side: midpoints must be on opposite
                # sides (centroid test).
                mid = None
                Ga = cells[ca].gradient
                Gb = cells[cb].gradient
                sa = float(nrm @ (cells[ca].centroid())) - key[2]
                sb = float(nrm @ (cells[cb].centroid())) - key[2]
                if sa * sb >= 0:
                    continue
                length = ov[1] - ov[0]
                jump = Ga - Gb
                # rank-one check: jump must be a x nrm.
                proj = np.outer(jump @ nrm, nrm)
                dev = float(np.abs(jump - proj).max())
                worst = max(worst, dev)
                if dev > tol * max(1.0, float(np.abs(jump).max())):
                    raise InconsistencyError(
                        "non-rank-one gradient jump across facet: "
                        "deviation %g" % dev)
                total += float(ctx.facet_weight(Ga[None], Gb[None])[0]) * length
    if include_boundary:
        if domain is None or F is None:
            raise InconsistencyError("boundary facets need domain and F")
        F = np.asarray(F, dtype=float)
        (x0, x1), (y0, y1) = domain
        for key, group in groups.items():
            nx, ny, c = key
            on_boundary = (
                (abs(nx - 1) < 1e-9 and abs(ny) < 1e-9
                 and (abs(c - x0) < tol or abs(c - x1) < tol))
                or (abs(nx) < 1e-9 and abs(abs(ny) - 1) < 1e-9
                    and (abs(abs(c) - abs(y0)) < tol or
                         abs(abs(c) - abs(y1)) < tol
                         or abs(c - y0) < tol or abs(c - y1) < tol)))
            if not on_boundary:
                continue
            for _, a0, a1, ca, nrm in group:
                G = cells[ca].gradient
                total += float(ctx.facet_weight(G[None], F[None])[0]) * (a1 - a0)
    return total, worst


def _clip_convex_2d(subject, clipper):
    """Sutherland-Hodgman clip of convex polygon `subject` by convex
    polygon `clipper` (both counterclockwise (m, 2) arrays)."""
    out = [p for p in subject]
    m = len(clipper)
    for i in range(m):
        if not out:
            return []
        a = clipper[i]
        b = clipper[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        inp = out
        out = []
        prev = inp[-1]
        dprev = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0])
        for cur in inp:
            dcur = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0])
            if dcur >= 0:
                if dprev < 0:
                    t = dprev / (dprev - dcur)
                    out.append(prev + t * (cur - prev))
                out.append(cur)
            elif dprev >= 0:
                t = dprev / (dprev - dcur)
                out.append(prev + t * (cur - prev))
            prev, dprev = cur, dcur
    return out


def _ccw_area_2d(poly):
    if len(poly) < 3:
        return 0.0
    v = np.asarray(poly)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cell_faces_3d(cell, decimals=9):
    """Coplanar faces of a convex 3D cell as (plane key, side, triangles).

    The plane key is the rounded canonical (unit normal, offset); side is
    the sign of the canonical normal against the cell's outward direction;
    triangles are (3, 3) vertex arrays on the plane.
    """
    from scipy.spatial import ConvexHull, QhullError
    verts = np.unique(np.round(cell.vertices, 12), axis=0)
    try:
        hull = ConvexHull(verts)
    except QhullError:
        hull = ConvexHull(verts, qhull_options="QJ")
    faces = {}
    for simp, eq in zip(hull.simplices, hull.equations):
        n = eq[:3]
        d = -eq[3]
        sgn = 1.0
        for comp in n:
            if comp > 1e-9:
                break
            if comp < -1e-9:
                n, d, sgn = -n, -d, -1.0
                break
        key = (round(n[0], decimals), round(n[1], decimals),
               round(n[2], decimals), round(d, decimals))
        faces.setdefault(key, [sgn, []])[1].append(verts[simp])
    return [(key, side, tris) for key, (side, tris) in faces.items()]


def _merge_plane_groups(groups, gap=4e-9):
    """Merge face groups whose plane keys agree within gap componentwise.

    Plane keys come from rounded hull fits, so two faces on the same
    physical plane can straddle a rounding boundary and land in different
    groups; unpaired faces would then be dropped from the facet sum. Keys
    closer than gap are unioned and each merged group keeps one
    representative key.
    """
    keys = list(groups)
    if len(keys) < 2:
        return groups
    K = np.array(keys)
    parent = list(range(len(keys)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    order = np.lexsort(K.T[::-1])
    Ks = K[order]
    for a in range(len(order) - 1):
        b = a + 1
        while b < len(order) and Ks[b, 0] - Ks[a, 0] <= gap:
            if np.abs(Ks[b] - Ks[a]).max() <= gap:
                ra, rb = find(order[a]), find(order[b])
                if ra != rb:
                    parent[rb] = ra
            b += 1
    merged = {}
    for i, key in enumerate(keys):
        merged.setdefault(keys[find(i)], []).extend(groups[key])
    return merged


def explicit_surface_3d(cells, ctx, domain=None, F=None,
                        include_boundary=False, tol=1e-9, per_plane=None):
    """Exact facet-sum surface energy of an explicit 3D cell complex.

    Groups cell faces by their supporting plane and sums weight x area of
    the pairwise overlaps between faces of cells lying on opposite sides.
    With include_boundary, faces on the domain box are matched against the
    boundary datum gradient F.

    Returns:
        (surface sum, max non-rank-one deviation observed).
    """
    groups = {}
    for ci, cell in enumerate(cells):
        for key, side, tris in _cell_faces_3d(cell):
            groups.setdefault(key, []).append((ci, side, tris))
    groups = _merge_plane_groups(groups)
    total = 0.0
    worst = 0.0
    for key, group in groups.items():
        n = np.array(key[:3])
        n /= np.linalg.norm(n)
        # In-plane orthonormal frame for 2D clipping.
        t1 = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(t1) < 0.5:
            t1 = np.cross(n, [0.0, 1.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        proj = []
        for ci, side, tris in group:
            t2d = []
            for tri in tris:
                q = np.column_stack([tri @ t1, tri @ t2])
                if _ccw_area_2d(q) < 0:
                    q = q[::-1]
                t2d.append(q)
            lo = np.min([t.min(axis=0) for t in t2d], axis=0)
            hi = np.max([t.max(axis=0) for t in t2d], axis=0)
            proj.append((ci, side, t2d, lo, hi))
        for i in range(len(proj)):
            ca, sa, ta, loa, hia = proj[i]
            for j in range(i + 1, len(proj)):
                cb, sb, tb, lob, hib = proj[j]
                if ca == cb or sa == sb:
                    continue
                if (loa[0] >= hib[0] - 1e-12 or lob[0] >= hia[0] - 1e-12
                        or loa[1] >= hib[1] - 1e-12
                        or lob[1] >= hia[1] - 1e-12):
                    continue
                area = 0.0
                for qa in ta:
                    for qb in tb:
                        area += _ccw_area_2d(_clip_convex_2d(qa, qb))
                if area <= 1e-12:
                    continue
                Ga = cells[ca].gradient
                Gb = cells[cb].gradient
                jump = Ga - Gb
                dev = float(np.abs(jump - np.outer(jump @ n, n)).max())
                worst = max(worst, dev)
                if dev > tol * max(1.0, float(np.abs(jump).max())):
                    raise InconsistencyError(
                        "non-rank-one gradient jump across facet: "
                        "deviation %g" % dev)
                part = float(ctx.facet_weight(Ga[None], Gb[None])[0]) * area
                if per_plane is not None:
                    per_plane[key] = per_plane.get(key, 0.0) + part
                total += part
    if include_boundary:
        if domain is None or F is None:
            raise InconsistencyError("boundary facets need domain and F")
        F = np.asarray(F, dtype=float)
        for key, group in groups.items():
            n = np.array(key[:3])
            ax = int(np.argmax(np.abs(n)))
            if abs(abs(n[ax]) - 1.0) > 1e-9:
                continue
            d = key[3] / n[ax]
            lo, hi = domain[ax]
            if abs(d - lo) > tol and abs(d - hi) > tol:
                continue
            for ci, side, tris in group:
                area = sum(
                    0.5 * float(np.linalg.norm(np.cross(t[1] - t[0],
                                                        t[2] - t[0])))
                    for t in tris)
                G = cells[ci].gradient
                total += float(ctx.facet_weight(G[None], F[None])[0]) * area
    return total, worst


def explicit_elastic(cells, ctx):
    """Exact elastic energy of an explicit cell complex."""
    total = 0.0
    for cell in cells:
        total += float(ctx.elastic_density(cell.gradient)) * cell.volume()
    return total
