"""Third-order pyramidal construction on the unit cube.

The outer stage oscillates along x3 between the zero matrix and
A4 = diag(0, 0, 1) and branches in the pyramidal profile

    rho(x1, x2) = max(|x1 - 1/2|, |x2 - 1/2|) + 1/2,

so a single plane branching in the (x3, rho) variables sweeps around the
four sectors of the cube; its level sets are square rings.  Every exact
integral of a quadrant-symmetric field reduces, by the coarea formula for
the max norm, to a ring-weighted plane integral with weight 8 (rho - 1/2)
(the perimeter of the ring at radius rho), and facets of the plane pattern
sweep out surfaces whose areas carry the same weight.  The four diagonal
planes |x1 - 1/2| = |x2 - 1/2| carry the extra gradient jumps between
neighboring sectors.

The zero-gradient strips of the outer pattern host second-order slab
branchings (wells A1, A2, A3 around the datum 0).  Each ring cross-section
is tiled, sector by sector, with axis-aligned boxes: a central rectangle
plus dyadic staircases of squares filling the two corner triangles between
the central rectangle and the diagonals.  Every box is shrunk by a small
margin on all sides, so each insert is an independent zero-trace slab
surrounded by unrefined host material: its interface bookkeeping reduces
to its own boundary facet sum against a constant exterior.  Boxes in the
sheared strips are composed with the single shear of their sector.
"""

import math

import numpy as np

from .branch2d import BranchNode2D
from .errors import ParameterError, UnsupportedError
from .geometry import Transform, overlay_faces, shear_transform
from .slab3d import SlabNode3D


def _diag(*d):
    return np.diag(np.asarray(d, dtype=float))


A1 = _diag(1, 0, 0)
A2 = _diag(-1, -1, 0)
A3 = _diag(-1, 1, 0)
A4 = _diag(0, 0, 1)
J1 = _diag(-1, 0, 0)

# Cross-section staircase squares stop at this multiple of the insert's
# coarse clamp scale rho1; smaller corner slivers stay unrefined (their
# volume is of the order of the r2 term in the energy bound).
_WMIN_FACTOR = 8.0

# Sector index conventions: 0 right (+x1), 1 left (-x1), 2 top (+x2),
# 3 bottom (-x2).  Sectors 0, 1 form Omega_1, sectors 2, 3 form Omega_2.
_QUADS = (0, 1, 2, 3)


def _quad_rect(q, rect):
    """Map a right-sector cross-section rectangle to sector q.

    Args:
        q: sector index.
        rect: (x1lo, x1hi, x2lo, x2hi) in the right sector.

    Returns:
        (x1lo, x1hi, x2lo, x2hi) of the image rectangle.
    """
    a1, b1, a2, b2 = rect
    if q == 0:
        return (a1, b1, a2, b2)
    if q == 1:
        return (1.0 - b1, 1.0 - a1, a2, b2)
    if q == 2:
        return (a2, b2, a1, b1)
    return (a2, b2, 1.0 - b1, 1.0 - a1)


def _quad_xy(q, a, b):
    """Map a right-sector cross-section point (a, b) to sector q."""
    if q == 0:
        return (a, b)
    if q == 1:
        return (1.0 - a, b)
    if q == 2:
        return (b, a)
    return (b, 1.0 - a)


def _quad_fan_point(q, t, side, xi):
    """3D point of the sector fan: radius t, transverse corner side +-1."""
    w = t - 0.5
    if q == 0:
        return (t, 0.5 + side * w, xi)
    if q == 1:
        return (1.0 - t, 0.5 + side * w, xi)
    if q == 2:
        return (0.5 + side * w, t, xi)
    return (0.5 + side * w, 1.0 - t, xi)


class _Piece:
    """One cross-section box of a ring tiling (right-sector coordinates).

    Stores the full rectangle and the two slab templates for the two box
    orientations: `tpl_r` for the right/left sectors (oscillation extent
    along x1 equals the radial extent) and `tpl_t` for the top/bottom
    sectors (the two cross-section extents swap roles).
    """

    def __init__(self, rect, margin, tpl_r, tpl_t):
        self.rect = rect
        self.margin = float(margin)
        self.tpl_r = tpl_r
        self.tpl_t = tpl_t

    def shrunk(self, q):
        a1, b1, a2, b2 = _quad_rect(q, self.rect)
        m = self.margin
        return (a1 + m, b1 - m, a2 + m, b2 - m)

    def template(self, q):
        return self.tpl_r if q in (0, 1) else self.tpl_t

    def box_volume(self, H):
        a1, b1, a2, b2 = self.rect
        m = self.margin
        return (b1 - a1 - 2.0 * m) * (b2 - a2 - 2.0 * m) * H


class _Ring:
    """Per-ring tiling data: pieces, slivers, scales and shear transforms."""

    def __init__(self, j, y, h, ell, K, s, strip_w, margin, rho1, rho2,
                 H_ins):
        self.j = j
        self.y = y
        self.h = h
        self.ell = ell
        self.K = K
        self.s = s
        self.strip_w = strip_w
        self.margin = margin
        self.rho1 = rho1
        self.rho2 = rho2
        self.H_ins = H_ins
        self.pieces = []
        self.sliver_polys = []
        self.sliver_area = 0.0
        # Shear transforms of the sheared-strip inserts per sector.
        self.T_shear = tuple(
            shear_transform(3, 2, 0 if q in (0, 1) else 1,
                            s if q in (0, 2) else -s, A4)
            for q in _QUADS)


class PyramidNode3D:
    """Third-order construction tree rooted at the pyramidal outer stage.

    Local coordinates are the unit cube; the boundary trace is
    F x with F = lam * A4.

    Args:
        lam: volume fraction of the A4 phase, in (0, 1).
        r, r2, r3: strictly decreasing length scales in (0, 1).
        theta: branching ratio in (1/4, 1/2).
        N: coarsest oscillation count; defaults to max(ceil(1/r), 5).
        inserts: install the second-order slab inserts (disabling them
            leaves the plain outer stage, used by diagnostics).
    """

    def __init__(self, lam, r, r2, r3, theta, N=None, inserts=True):
        if not (0.0 < r3 < r2 < r < 1.0):
            raise ParameterError(
                "need 0 < r3 < r2 < r < 1, got r=%r, r2=%r, r3=%r"
                % (r, r2, r3))
        if not (0.25 < theta < 0.5):
            raise ParameterError(
                "theta must lie in (1/4, 1/2), got %r" % theta)
        self.n = 3
        self.lam = float(lam)
        self.mu = 1.0 - self.lam
        self.r, self.r2, self.r3 = float(r), float(r2), float(r3)
        self.theta = float(theta)
        if N is None:
            N = max(int(math.ceil(1.0 / r)), 5)
        self.N = int(N)
        # Plane node in the (x3, rho) variables: oscillation along axis 2,
        # branching "axis" 0 standing in for the radial coordinate.  Only
        # the upper half t in [1/2, 1] of the node is swept around the cube.
        self.node = BranchNode2D(2, 0, 1.0, 1.0, np.zeros((3, 3)), A4,
                                 self.mu, self.theta, self.N)
        self.F = self.lam * A4
        self.wells = np.stack([A1, A2, A3, A4])
        self._tpl_cache = {}
        self._cache = {}
        self.rings = []
        nd = self.node
        for j in range(nd.j0 + 1):
            y, h, ell, K, s = nd.y[j], nd.h[j], nd.ell[j], nd.K[j], nd.s[j]
            strip_w = self.mu * ell / 2.0
            rho1 = self.mu * self.r2 / 2.0 ** (j + 3)
            rho2 = self.mu * self.r3 / 2.0 ** (j + 3)
            margin = rho2
            ring = _Ring(j, y, h, ell, K, s, strip_w, margin, rho1, rho2,
                         strip_w - 2.0 * margin)
            if inserts:
                self._tile_ring(ring)
            else:
                ring.sliver_polys.append(np.array(
                    [(y, 1.0 - y), (y + h, 1.0 - y - h),
                     (y + h, y + h), (y, y)]))
                ring.sliver_area = self._ring_area(ring) / 8.0
            self.rings.append(ring)

    # ------------------------------------------------------------------
    # tiling

    @staticmethod
    def _ring_area(ring):
        """Cartesian cross-section area of the square ring."""
        return 4.0 * ((ring.y + ring.h - 0.5) ** 2 - (ring.y - 0.5) ** 2)

    def _slab_template(self, L, H, Lq, rho1, rho2):
        key = (round(L, 14), round(H, 14), round(Lq, 14),
               round(rho1, 16), round(rho2, 16))
        tpl = self._tpl_cache.get(key)
        if tpl is None:
            N = max(int(math.ceil(L / rho1)),
                    int(math.floor(4.0 * L / H)) + 1)
            tpl = SlabNode3D(0, 2, 1, L, H, Lq, J1, A1, 0.5, self.theta,
                             N, rho1 / Lq, chain_rest=[(A2, A3, 0.5)],
                             scales_rest=[rho2], rho_rest=[rho2])
            self._tpl_cache[key] = tpl
        return tpl

    def _add_piece(self, ring, rect):
        a1, b1, a2, b2 = rect
        m = ring.margin
        Lr = b1 - a1 - 2.0 * m
        Lt = b2 - a2 - 2.0 * m
        tpl_r = self._slab_template(Lr, ring.H_ins, Lt, ring.rho1, ring.rho2)
        tpl_t = self._slab_template(Lt, ring.H_ins, Lr, ring.rho1, ring.rho2)
        ring.pieces.append(_Piece(rect, m, tpl_r, tpl_t))

    def _tile_triangle(self, ring, px, py, d, wmin, upper):
        """Tile the corner triangle {px<=u<=px+d, py<=v<=py+(u-px)} with
        dyadic squares; `upper=False` mirrors v across 1/2."""

        def mirror(rect):
            a1, b1, a2, b2 = rect
            return (a1, b1, 1.0 - b2, 1.0 - a2) if not upper else rect

        if d < wmin:
            tri = [(px, py), (px + d, py), (px + d, py + d)]
            if not upper:
                tri = [(u, 1.0 - v) for u, v in tri]
            ring.sliver_polys.append(np.array(tri))
            ring.sliver_area += d * d / 2.0
            return
        sz = d / 2.0
        self._add_piece(ring, mirror((px + sz, px + d, py, py + sz)))
        self._tile_triangle(ring, px, py, sz, wmin, upper)
        self._tile_triangle(ring, px + sz, py + sz, sz, wmin, upper)

    def _tile_ring(self, ring):
        y, h = ring.y, ring.h
        wmin = max(2.0 * _WMIN_FACTOR * ring.rho1, 6.0 * ring.margin)
        cwidth = 2.0 * y - 1.0
        if cwidth >= wmin:
            self._add_piece(ring, (y, y + h, 1.0 - y, y))
        elif cwidth > 0.0:
            ring.sliver_polys.append(np.array(
                [(y, 1.0 - y), (y + h, 1.0 - y), (y + h, y), (y, y)]))
            ring.sliver_area += h * cwidth
        self._tile_triangle(ring, y, y, h, wmin, True)
        self._tile_triangle(ring, y, y, h, wmin, False)

    # ------------------------------------------------------------------
    # outer-stage gradients (right-sector representatives)

    def _rep(self, g1, g2):
        G = np.zeros((3, 3))
        G[2, 2] = g1
        G[2, 0] = g2
        return G

    @staticmethod
    def _to_top(G):
        """Move the radial column of a right-sector representative to x2."""
        H = G.copy()
        H[:, 1] = H[:, 0]
        H[:, 0] = 0.0
        return H

    def _w(self, ctx, Gp, Gq):
        return float(ctx.facet_weight(np.asarray(Gp)[None],
                                      np.asarray(Gq)[None])[0])

    # ------------------------------------------------------------------
    # insert enumeration

    def _insert_terms(self, ring, fn, cache_key=None):
        """Sum fn(template, transform) over the insert instances of one
        block of the ring (all sectors, both strips).

        With cache_key, per-(template, transform) values are memoized, so
        pieces sharing a template are evaluated once.
        """
        total = 0.0
        Tid = Transform.identity(3)
        memo = self._cache.setdefault(("terms", cache_key), {}) \
            if cache_key is not None else None
        for p in ring.pieces:
            for q in _QUADS:
                tpl = p.template(q)
                for T in (Tid, ring.T_shear[q]):
                    if memo is None:
                        total += fn(tpl, T)
                        continue
                    k = (id(tpl), T.key)
                    if k not in memo:
                        memo[k] = fn(tpl, T)
                    total += memo[k]
        return total

    def _check_T(self, T):
        if T is not None and not T.is_identity():
            raise UnsupportedError(
                "the pyramidal construction only supports the identity "
                "embedding")

    # ------------------------------------------------------------------
    # energies

    def elastic(self, ctx, T=None):
        """Exact elastic energy over the unit cube."""
        self._check_T(T)
        key = ("el", ctx.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        d2 = lambda G: float(ctx.elastic_density(G))
        total = 0.0
        for ring in self.rings:
            area = self._ring_area(ring)
            G3 = self._rep(0.0, ring.s)
            # B-phase cells fill the fraction 1 - mu of each block.
            total += area * (1.0 - self.mu) * d2(nd.GB)
            # Hosting strips: inserts plus unrefined background.
            boxes = 4.0 * sum(p.box_volume(ring.H_ins) for p in ring.pieces)
            bg = area * self.mu / 2.0 - ring.K * boxes
            total += bg * (d2(nd.GA) + d2(G3))
            total += ring.K * self._insert_terms(
                ring, lambda tpl, Tb: float(tpl.elastic(ctx, Tb)),
                cache_key=("el", ctx.key, ring.j))
        total += self._cutoff_sum(lambda G, vol: vol * d2(G))
        self._cache[key] = total
        return total

    def _cutoff_sum(self, fn):
        """Sum fn(G, Cartesian volume) over the cut-off band cells."""
        nd = self.node
        lc, hc, Kc = nd.ellc, nd.hc, nd.Kc
        yc = nd.y[nd.j0 + 1]
        x1 = self.mu * lc
        w1g = nd.c * nd.w1s / nd.hc
        T11 = nd.GA
        T21 = nd.F - w1g * nd.Eab
        T12 = nd.GB - w1g * nd.Eab
        T22 = nd.F

        def tri_lo(base):
            # integral of 8 (t - 1/2) over the triangle of width
            # base * (1 - eta / hc) at depth eta above yc
            return 8.0 * base * ((yc - 0.5) * hc / 2.0 + hc * hc / 6.0)

        def tri_hi(base):
            return 8.0 * base * ((yc - 0.5) * hc / 2.0 + hc * hc / 3.0)

        return (fn(T11, Kc * tri_lo(x1)) + fn(T21, Kc * tri_hi(x1))
                + fn(T12, Kc * tri_lo(lc - x1))
                + fn(T22, Kc * tri_hi(lc - x1)))

    def phase_volumes(self, ctx, T=None):
        """Volume of the nearest-well phase regions, indexed by well."""
        from .geometry import nearest_well
        self._check_T(T)
        key = ("pv", ctx.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        vols = np.zeros(len(ctx.wells))

        def add(G, vol):
            vols[nearest_well(np.asarray(G), ctx.wells)] += vol

        for ring in self.rings:
            area = self._ring_area(ring)
            G3 = self._rep(0.0, ring.s)
            add(nd.GB, area * (1.0 - self.mu))
            boxes = 4.0 * sum(p.box_volume(ring.H_ins) for p in ring.pieces)
            bg = area * self.mu / 2.0 - ring.K * boxes
            add(nd.GA, bg)
            add(G3, bg)
            acc = np.zeros(len(ctx.wells))

            def accum(tpl, Tb):
                acc[:] += tpl.phase_volumes(ctx, Tb)
                return 0.0

            self._insert_terms(ring, accum, cache_key=None)
            vols += ring.K * acc
        self._cutoff_sum(lambda G, vol: add(G, vol) or 0.0)
        self._cache[key] = vols
        return vols

    def surface(self, ctx, T=None):
        """Exact interior facet sum (jump weight x area)."""
        self._check_T(T)
        key = ("sv", ctx.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        total = 0.0
        sq2 = math.sqrt(2.0)
        for ring in self.rings:
            j, y, h, l, s, K = (ring.j, ring.y, ring.h, ring.ell, ring.s,
                                ring.K)
            Wmid = 8.0 * (y + h / 2.0 - 0.5)
            G3 = self._rep(0.0, s)
            # Vertical facet between the straight strip and the B-cell.
            total += K * Wmid * h * self._w(ctx, nd.GA, nd.GB)
            # Block seams.
            total += (K - 1) * Wmid * h * self._w(ctx, nd.GB, nd.GA)
            # The two sloped facets bounding the sheared strip.
            total += 2.0 * K * Wmid * h * math.hypot(s * h, h) / h \
                * self._w(ctx, G3, nd.GB)
            # Ring boundary toward the next ring (or the cut-off band).
            top = nd._row_top(j, 1.0)
            if j < nd.j0:
                bot = nd._row_bottom(j + 1, 1.0, copies=2)
            else:
                bot = nd._cutoff_bottom_face(1.0, copies=2)
            total += K * 8.0 * (y + h - 0.5) * overlay_faces(top, bot, ctx)
            # Diagonal jumps of the sheared strips between sectors.
            total += 4.0 * sq2 * K * (self.mu * l / 2.0) * h \
                * self._w(ctx, G3, self._to_top(G3))
            # Inserts: interior facets plus their boundary facets against
            # the constant host gradient (their datum).
            total += ring.K * self._insert_terms(
                ring, lambda tpl, Tb: float(tpl.surface(ctx, Tb))
                + float(tpl.boundary_surface(ctx, Tb)),
                cache_key=("su", ctx.key, ring.j))
        # Cut-off band internals.
        lc, hc, Kc = nd.ellc, nd.hc, nd.Kc
        yc = nd.y[nd.j0 + 1]
        x1 = self.mu * lc
        w1g = nd.c * nd.w1s / nd.hc
        T11 = nd.GA
        T21 = nd.F - w1g * nd.Eab
        T12 = nd.GB - w1g * nd.Eab
        T22 = nd.F
        Wc = 8.0 * (yc + hc / 2.0 - 0.5)
        total += Kc * Wc * math.hypot(x1, hc) * self._w(ctx, T11, T21)
        total += Kc * Wc * math.hypot(lc - x1, hc) * self._w(ctx, T12, T22)
        total += Kc * Wc * hc * self._w(ctx, T21, T12)
        total += (Kc - 1) * Wc * hc * self._w(ctx, T22, T11)
        # Diagonal jumps of the cut-off ramp cells.
        total += 4.0 * sq2 * Kc * (x1 * hc / 2.0) \
            * self._w(ctx, T21, self._to_top(T21))
        total += 4.0 * sq2 * Kc * ((lc - x1) * hc / 2.0) \
            * self._w(ctx, T12, self._to_top(T12))
        self._cache[key] = total
        return total

    def boundary_surface(self, ctx, T=None):
        """Facet sum on the cube boundary against the datum F."""
        self._check_T(T)
        nd = self.node
        total = 4.0 * nd.face_br("hi").overlay_const(self.F, ctx)
        total += self._w(ctx, nd.GA, self.F)
        total += self._w(ctx, nd.GB, self.F) * (1.0 - 2.0 * nd.hc) ** 2
        return total

    def sector_outer_surface(self, ctx):
        """Outer-stage facet sums attributed to the two sectors Omega_1
        (|x1-1/2| > |x2-1/2|) and Omega_2, as a pair.

        Only the outer oscillation pattern is attributed (the insert
        hierarchies break the x1 <-> x2 symmetry by construction, since
        their wells single out fixed axes); each diagonal facet is split
        evenly between its two sectors.
        """
        halves = [0.0, 0.0]
        nd = self.node
        sq2 = math.sqrt(2.0)
        for sector in (0, 1):
            total = 0.0
            for ring in self.rings:
                j, y, h, l, s, K = (ring.j, ring.y, ring.h, ring.ell,
                                    ring.s, ring.K)
                Wmid = 4.0 * (y + h / 2.0 - 0.5)
                if sector == 1:
                    G3 = self._to_top(self._rep(0.0, s))
                    GA, GB = self._to_top(nd.GA), self._to_top(nd.GB)
                else:
                    G3 = self._rep(0.0, s)
                    GA, GB = nd.GA, nd.GB
                total += K * Wmid * h * self._w(ctx, GA, GB)
                total += (K - 1) * Wmid * h * self._w(ctx, GB, GA)
                total += 2.0 * K * Wmid * math.hypot(s * h, h) \
                    * self._w(ctx, G3, GB)
                top = nd._row_top(j, 1.0)
                if j < nd.j0:
                    bot = nd._row_bottom(j + 1, 1.0, copies=2)
                else:
                    bot = nd._cutoff_bottom_face(1.0, copies=2)
                total += K * 4.0 * (y + h - 0.5) \
                    * overlay_faces(top, bot, ctx)
                total += 2.0 * sq2 * K * (self.mu * l / 2.0) * h \
                    * self._w(ctx, G3, self._to_top(self._rep(0.0, s))
                              if sector == 0 else self._rep(0.0, s))
            halves[sector] = total
        return tuple(halves)

    # ------------------------------------------------------------------
    # pointwise evaluation

    def eval_points(self, pts):
        """Evaluate gradient and value of the construction.

        Args:
            pts: (N, 3) points in the unit cube.

        Returns:
            (grads (N, 3, 3), values (N, 3)) with u = F x on the boundary.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        npts = len(pts)
        nd = self.node
        dx1 = pts[:, 0] - 0.5
        dx2 = pts[:, 1] - 0.5
        rho = np.maximum(np.abs(dx1), np.abs(dx2)) + 0.5
        node_pts = np.zeros((npts, 3))
        node_pts[:, 0] = rho
        node_pts[:, 2] = pts[:, 2]
        G2, V = nd.eval_points(node_pts)
        # Remap the radial column to the sector's radial axis.
        x1side = np.abs(dx1) >= np.abs(dx2)
        rsign = np.where(np.where(x1side, dx1, dx2) >= 0.0, 1.0, -1.0)
        g2 = rsign * G2[:, 2, 0]
        G = G2.copy()
        G[:, 2, 0] = np.where(x1side, g2, 0.0)
        G[:, 2, 1] = np.where(x1side, 0.0, g2)
        # Insert overrides inside the shrunken boxes.
        q = np.clip(2.0 * (1.0 - rho), 1e-300, 1.0)
        jarr = np.floor(np.log(q) / np.log(self.theta) + 1e-9).astype(int)
        quad = np.where(x1side, np.where(dx1 >= 0.0, 0, 1),
                        np.where(dx2 >= 0.0, 2, 3))
        for ring in self.rings:
            if not ring.pieces:
                continue
            sel0 = np.where(jarr == ring.j)[0]
            if len(sel0) == 0:
                continue
            x3 = pts[sel0, 2]
            k = np.clip(np.floor(x3 / ring.ell).astype(int), 0, ring.K - 1)
            xib = x3 - k * ring.ell
            eta = np.clip(rho[sel0] - ring.y, 0.0, ring.h)
            m = ring.margin
            lo = self.mu * ring.ell / 2.0
            raw_str = xib - m
            raw_shr = xib - lo - ring.s * eta - m
            in_str = (raw_str >= 0.0) & (raw_str <= ring.H_ins)
            in_shr = (raw_shr >= 0.0) & (raw_shr <= ring.H_ins)
            cand = in_str | in_shr
            if not cand.any():
                continue
            open_pts = cand.copy()
            for p in ring.pieces:
                if not open_pts.any():
                    break
                for qd in _QUADS:
                    if not open_pts.any():
                        break
                    a1, b1, a2, b2 = p.shrunk(qd)
                    hit = (open_pts & (quad[sel0] == qd)
                           & (pts[sel0, 0] >= a1) & (pts[sel0, 0] <= b1)
                           & (pts[sel0, 1] >= a2) & (pts[sel0, 1] <= b2))
                    if not hit.any():
                        continue
                    tpl = p.template(qd)
                    for shear, raw3, mask in ((False, raw_str, in_str),
                                              (True, raw_shr, in_shr)):
                        sub = hit & mask
                        if not sub.any():
                            continue
                        idx = sel0[sub]
                        raw = np.empty((len(idx), 3))
                        raw[:, 0] = pts[idx, 0] - a1
                        raw[:, 1] = pts[idx, 1] - a2
                        raw[:, 2] = raw3[sub]
                        Graw, Vraw = tpl.eval_points(raw)
                        if shear:
                            Tq = ring.T_shear[qd]
                            G[idx] = Graw @ Tq.M + Tq.Q
                        else:
                            G[idx] = Graw
                        V[idx] += Vraw
                    open_pts &= ~hit
        return G, V

    # ------------------------------------------------------------------
    # explicit cells

    def count_cells(self):
        nd = self.node
        total = nd.Kc * 4 * 4
        for ring in self.rings:
            per_block = 4 * 2  # B wedge and B quad per sector
            per_block += 4 * 2 * len(ring.sliver_polys)
            for p in ring.pieces:
                tpl = p.tpl_r.count_cells() + p.tpl_t.count_cells()
                per_block += 2 * (4 * 6 + 2 * tpl)
            total += ring.K * per_block
        return total

    def _strip_ranges(self, ring, shear):
        """x3 extent of a strip within a block as (start, slope) so that
        the strip is [start + slope * eta, start + slope * eta + strip_w]."""
        if shear:
            return self.mu * ring.ell / 2.0, ring.s
        return 0.0, 0.0

    def collect_geoms(self):
        """Explicit cell decomposition: list of (vertices, kind)."""
        geoms = []
        nd = self.node

        def fan_cells(poly_xi_t, kind):
            # one convex cell per sector from a polygon in the
            # (x3, radius) plane
            for q in _QUADS:
                verts = []
                for xi, t in poly_xi_t:
                    verts.append(_quad_fan_point(q, t, -1.0, xi))
                    verts.append(_quad_fan_point(q, t, 1.0, xi))
                geoms.append((np.array(verts), kind))

        def prism_cells(poly_xy, x3lo, x3hi, ring, shear, kind):
            # cross-section polygon (right-sector coords) x strip interval
            for q in _QUADS:
                verts = []
                for a, b in poly_xy:
                    x1, x2 = _quad_xy(q, a, b)
                    eta = max(a - ring.y, 0.0) if shear else 0.0
                    off = ring.s * eta if shear else 0.0
                    verts.append((x1, x2, x3lo + off))
                    verts.append((x1, x2, x3hi + off))
                geoms.append((np.array(verts), kind))

        for ring in self.rings:
            j, y, h, l, s = ring.j, ring.y, ring.h, ring.ell, ring.s
            lo = self.mu * l / 2.0
            for k in range(ring.K):
                x0 = k * l
                # B-phase cells (wedge between the strips, block tail).
                fan_cells([(x0 + lo, y), (x0 + lo + s * h, y + h),
                           (x0 + lo, y + h)], "sector")
                fan_cells([(x0 + self.mu * l, y), (x0 + l, y),
                           (x0 + l, y + h), (x0 + self.mu * l + s * h,
                                             y + h)], "sector")
                for shear in (False, True):
                    start, _ = self._strip_ranges(ring, shear)
                    kind = "shearbox" if shear else "box"
                    s3lo = x0 + start
                    s3hi = s3lo + ring.strip_w
                    for poly in ring.sliver_polys:
                        prism_cells(poly, s3lo, s3hi, ring, shear, "sector")
                    m = ring.margin
                    for p in ring.pieces:
                        a1, b1, a2, b2 = p.rect
                        frame = [
                            ((a1, a1 + m), (a2, b2)),
                            ((b1 - m, b1), (a2, b2)),
                            ((a1 + m, b1 - m), (a2, a2 + m)),
                            ((a1 + m, b1 - m), (b2 - m, b2)),
                        ]
                        for (u0, u1), (v0, v1) in frame:
                            prism_cells([(u0, v0), (u1, v0), (u1, v1),
                                         (u0, v1)], s3lo, s3hi, ring,
                                        shear, kind)
                        inner = [(a1 + m, a2 + m), (b1 - m, a2 + m),
                                 (b1 - m, b2 - m), (a1 + m, b2 - m)]
                        prism_cells(inner, s3lo, s3lo + m, ring, shear,
                                    kind)
                        prism_cells(inner, s3hi - m, s3hi, ring, shear,
                                    kind)
                        for q in _QUADS:
                            sa1, sb1, sa2, sb2 = p.shrunk(q)
                            tpl = p.template(q)
                            for verts, tkind in tpl.collect_geoms():
                                vv = verts.copy()
                                vv[:, 0] += sa1
                                vv[:, 1] += sa2
                                radial = vv[:, 0] if q in (0, 1) \
                                    else vv[:, 1]
                                eta = np.abs(radial - 0.5) + 0.5 - ring.y
                                off = s * eta if shear else 0.0
                                vv[:, 2] += s3lo + m + off
                                if shear and tkind == "box":
                                    tkind = "shearbox"
                                geoms.append((vv, tkind))
        # Cut-off band.
        lc, hc = nd.ellc, nd.hc
        yc = nd.y[nd.j0 + 1]
        x1 = self.mu * lc
        tris = [[(0.0, 0.0), (x1, 0.0), (0.0, hc)],
                [(x1, 0.0), (x1, hc), (0.0, hc)],
                [(x1, 0.0), (lc, 0.0), (x1, hc)],
                [(lc, 0.0), (lc, hc), (x1, hc)]]
        for k in range(nd.Kc):
            x0 = k * lc
            for poly in tris:
                fan_cells([(x0 + u, yc + e) for u, e in poly], "sector")
        return geoms
