"""Hierarchical two-dimensional branched laminate constructions.

A BranchNode2D describes one lamination level on a rectangle [0,L] x [0,H]
(in the plane spanned by its oscillation axis `a` and branching axis `b`):
rows of self-similar building blocks refine dyadically from mid-height toward
both horizontal boundaries, ending in an interpolation cut-off row, and the
two strips of each block that carry the refined phase host the next level's
construction (one straight copy, one sheared copy).

The tree stores one child template per row; multiplicities (blocks per row,
mirror halves) are pure bookkeeping, so exact energies of complexes with
billions of cells cost only the template size.
"""

import math

import numpy as np

from .errors import (DomainError, GeometryError, ParameterError,
                     StructureError, UnsupportedError)
from .geometry import (FaceProfile, Profile, Section, Transform,
                       overlay_faces, shear_transform)
from .maps import PiecewiseAffineMap

MAX_ROWS = 64


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


class BranchNode2D:
    """One lamination level of a branched construction.

    Local coordinates: oscillation coordinate xi in [0, L] along axis `a`,
    branching coordinate t in [0, H] along axis `b`.  The map equals
    u(x) = F x + c w(x) e_a plus nested corrections, with w = 0 on the whole
    boundary, F = lam*GA + (1-lam)*GB and GA - GB = c e_a x e_a.

    The A-slot (gradient GA, fraction lam of each block) hosts the children.
    """

    def __init__(self, axis_a, axis_b, L, H, GA, GB, lam, theta, N,
                 chain_rest=(), scales_rest=()):
        GA = np.asarray(GA, dtype=float)
        GB = np.asarray(GB, dtype=float)
        self.n = GA.shape[0]
        self.a = int(axis_a)
        self.b = int(axis_b)
        if self.a == self.b:
            raise ParameterError("oscillation and branching axes coincide")
        self.L = float(L)
        self.H = float(H)
        if self.L <= 0 or self.H <= 0:
            raise GeometryError("rectangle sides must be positive")
        if not (0.0 < lam < 1.0):
            raise DomainError("lambda must lie in (0, 1), got %r" % lam)
        self.lam = float(lam)
        diff = GA - GB
        c = float(diff[self.a, self.a])
        ea = _unit(self.n, self.a)
        eb = _unit(self.n, self.b)
        if c == 0.0 or not np.allclose(diff, c * np.outer(ea, ea),
                                       atol=1e-12):
            raise StructureError(
                "GA - GB must be a nonzero multiple of e_a x e_a")
        self.GA, self.GB, self.c = GA, GB, c
        self.ea, self.eb = ea, eb
        self.Eab = np.outer(ea, eb)
        self.F = self.lam * GA + (1.0 - self.lam) * GB
        if not (0.0 < theta < 0.5):
            raise ParameterError("theta must lie in (0, 1/2), got %r" % theta)
        self.theta = float(theta)
        if int(N) != N or N < 1:
            raise ParameterError("N must be a positive integer")
        self.N = int(N)
        if self.N * self.H <= 4.0 * self.L:
            raise ParameterError(
                "need N > 4L/H (got N=%d, L=%r, H=%r)" % (self.N, L, H))

        # Row geometry: y_j = H - (H/2) theta^j, heights h_j, periods ell_j.
        j0 = -1
        j = 0
        while j < MAX_ROWS:
            ell = self.L / (self.N * 2 ** j)
            h = (self.H / 2.0) * self.theta ** j * (1.0 - self.theta)
            if ell < h:
                j0 = j
                j += 1
            else:
                break
        if j0 < 0:
            raise ParameterError("no admissible rows; increase N")
        self.j0 = j0
        self.y = [self.H - (self.H / 2.0) * self.theta ** jj
                  for jj in range(j0 + 2)]
        self.h = [(self.H / 2.0) * self.theta ** jj * (1.0 - self.theta)
                  for jj in range(j0 + 1)]
        self.ell = [self.L / (self.N * 2 ** jj) for jj in range(j0 + 1)]
        self.K = [self.N * 2 ** jj for jj in range(j0 + 1)]
        self.s = [(1.0 - self.lam) * self.ell[jj] / (2.0 * self.h[jj])
                  for jj in range(j0 + 1)]
        # Cut-off row on [y_{j0+1}, H] (and its mirror image).
        self.hc = (self.H / 2.0) * self.theta ** (j0 + 1)
        self.ellc = self.L / (self.N * 2 ** (j0 + 1))
        self.Kc = self.N * 2 ** (j0 + 1)
        self.w1s = (1.0 - self.lam) * self.lam * self.ellc

        # Children: one template per row, hosted by both A-strips.
        self.children = None
        if chain_rest:
            Jc, Ac, frac = chain_rest[0]
            Jc = np.asarray(Jc, dtype=float)
            Ac = np.asarray(Ac, dtype=float)
            lam_c = 1.0 - float(frac)
            if not np.allclose(lam_c * Jc + (1.0 - lam_c) * Ac, GA,
                               atol=1e-10):
                raise StructureError(
                    "chain level does not split the refined phase")
            dc = Jc - Ac
            cc = float(dc[self.b, self.b])
            if cc == 0.0 or not np.allclose(
                    dc, cc * np.outer(eb, eb), atol=1e-12):
                raise StructureError(
                    "child oscillation must use the branching axis")
            if not scales_rest:
                raise ParameterError("missing length scale for nested level")
            r_next = float(scales_rest[0])
            self.children = []
            for jj in range(j0 + 1):
                Lc = self.h[jj]
                Hc = self.lam * self.ell[jj] / 2.0
                Nc = max(
                    int(math.ceil(Lc * 2 ** (jj + 2) / (self.lam * r_next))),
                    int(math.floor(4.0 * Lc / Hc)) + 1,
                    1)
                self.children.append(BranchNode2D(
                    self.b, self.a, Lc, Hc, Jc, Ac, lam_c, self.theta, Nc,
                    chain_rest[1:], scales_rest[1:]))
        self._cache = {}

    # ------------------------------------------------------------------
    # transforms

    def _identity(self):
        return Transform.identity(self.n)

    def _shearT(self, T, s):
        return T.compose_inner(
            shear_transform(self.n, self.a, self.b, s, self.GB))

    # ------------------------------------------------------------------
    # face profiles (cached, untransformed, in node-local terms)

    def _cutoff_pattern(self, sign):
        """Outer-face pattern of the cut-off row facing t = H (sign=+1)
        or t = 0 (sign=-1): a ramp gradient over the A-fraction of each
        period and the exact datum F over the rest."""
        ramp = self.F - sign * self.c * (self.w1s / self.hc) * self.Eab
        return Profile(
            np.array([0.0, self.lam * self.ellc, self.ellc]),
            np.stack([ramp, self.F]))

    def face_br(self, end):
        """Profile of the face t=0 ('lo') or t=H ('hi'), along the
        oscillation axis over [0, L]."""
        key = ("br", end)
        if key not in self._cache:
            sign = 1.0 if end == "hi" else -1.0
            self._cache[key] = FaceProfile(
                [Section(self._cutoff_pattern(sign), self.Kc)])
        return self._cache[key]

    def face_osc(self, end):
        """Profile of the face xi=0 ('lo') or xi=L ('hi'), along the
        branching axis over [0, H]."""
        key = ("osc", end)
        if key in self._cache:
            return self._cache[key]
        secs = []
        if end == "lo":
            secs.append(Section(Profile.constant(self.hc, self.GA)))
            order = list(range(self.j0, -1, -1)) + list(range(self.j0 + 1))
            for jj in order:
                if self.children is None:
                    secs.append(Section(
                        Profile.constant(self.h[jj], self.GA)))
                else:
                    secs.extend(self.children[jj].face_br("lo").sections)
            secs.append(Section(Profile.constant(self.hc, self.GA)))
        else:
            secs.append(Section(Profile.constant(self.hc, self.F)))
            secs.append(Section(Profile.constant(
                2.0 * (self.H / 2.0 - self.hc), self.GB)))
            secs.append(Section(Profile.constant(self.hc, self.F)))
        fp = FaceProfile(secs)
        self._cache[key] = fp
        return fp

    def _child_face(self, jj, end):
        if self.children is None:
            return None
        return self.children[jj].face_osc(end)

    def _row_top(self, jj, sign):
        """Gradient pattern on the top edge (|t - H/2| increasing side) of
        row jj's block, over one period [0, ell_j].  sign=+1 for the upper
        half, -1 for the mirrored half."""
        l, s = self.ell[jj], self.s[jj]
        gapL = (1.0 - self.lam) * l / 2.0
        if self.children is None:
            GA3 = self.GA - sign * self.c * s * self.Eab
            secs = [Section(Profile.constant(self.lam * l / 2.0, self.GA)),
                    Section(Profile.constant(gapL, self.GB)),
                    Section(Profile.constant(self.lam * l / 2.0, GA3)),
                    Section(Profile.constant(gapL, self.GB))]
            return FaceProfile(secs)
        face = self._child_face(jj, "hi" if sign > 0 else "lo")
        th = shear_transform(self.n, self.a, self.b, sign * s, self.GB)
        sheared = face.map_grads(th.grad)
        secs = (list(face.sections)
                + [Section(Profile.constant(gapL, self.GB))]
                + list(sheared.sections)
                + [Section(Profile.constant(gapL, self.GB))])
        return FaceProfile(secs)

    def _row_bottom(self, jj, sign, copies=1):
        """Gradient pattern on the bottom edge (mid-height side) of row jj's
        block over `copies` periods."""
        l, s = self.ell[jj], self.s[jj]
        if self.children is None:
            GA3 = self.GA - sign * self.c * s * self.Eab
            secs = [Section(Profile.constant(self.lam * l / 2.0, self.GA)),
                    Section(Profile.constant(self.lam * l / 2.0, GA3)),
                    Section(Profile.constant((1.0 - self.lam) * l, self.GB))]
        else:
            face = self._child_face(jj, "lo" if sign > 0 else "hi")
            th = shear_transform(self.n, self.a, self.b, sign * s, self.GB)
            sheared = face.map_grads(th.grad)
            secs = (list(face.sections) + list(sheared.sections)
                    + [Section(Profile.constant((1.0 - self.lam) * l,
                                                self.GB))])
        if copies > 1:
            secs = [s_ for _ in range(copies) for s_ in secs]
        return FaceProfile(secs)

    def _cutoff_bottom_face(self, sign, copies=2):
        """Bottom pattern of the cut-off row, `copies` periods."""
        ramp = self.GB - sign * self.c * (self.w1s / self.hc) * self.Eab
        pat = Profile(np.array([0.0, self.lam * self.ellc, self.ellc]),
                      np.stack([self.GA, ramp]))
        return FaceProfile([Section(pat, copies)])

    # ------------------------------------------------------------------
    # energies

    def elastic(self, ctx, T=None):
        """Exact elastic energy (both mirror halves) under transform T."""
        T = T or self._identity()
        key = ("el", ctx.key, T.key)
        if key in self._cache:
            return self._cache[key]
        vf = T.volume_factor()
        local = 0.0
        nested = 0.0
        for jj in range(self.j0 + 1):
            l, h, s, K = self.ell[jj], self.h[jj], self.s[jj], self.K[jj]
            eB = ctx.elastic_density(T.grad(self.GB))
            local += 2.0 * K * (1.0 - self.lam) * l * h * eB
            if self.children is None:
                eA = ctx.elastic_density(T.grad(self.GA))
                local += 2.0 * K * (self.lam * l * h / 2.0) * eA
                for sign in (1.0, -1.0):
                    G3 = self.GA - sign * self.c * s * self.Eab
                    local += K * (self.lam * l * h / 2.0) \
                        * ctx.elastic_density(T.grad(G3))
            else:
                child = self.children[jj]
                nested += K * (2.0 * child.elastic(ctx, T)
                               + child.elastic(ctx, self._shearT(T, s))
                               + child.elastic(ctx, self._shearT(T, -s)))
        w1g = self.c * self.w1s / self.hc
        aA = self.lam * self.ellc * self.hc / 2.0
        aB = (1.0 - self.lam) * self.ellc * self.hc / 2.0
        for sign in (1.0, -1.0):
            for G, area in (
                    (self.GA, aA),
                    (self.F - sign * w1g * self.Eab, aA),
                    (self.GB - sign * w1g * self.Eab, aB),
                    (self.F, aB)):
                local += self.Kc * area * ctx.elastic_density(T.grad(G))
        total = local * vf + nested
        self._cache[key] = total
        return total

    def phase_volumes(self, ctx, T=None):
        """Volume of the nearest-well phase regions, indexed by well."""
        from .geometry import nearest_well
        T = T or self._identity()
        key = ("pv", ctx.key, T.key)
        if key in self._cache:
            return self._cache[key]
        vf = T.volume_factor()
        vols = np.zeros(len(ctx.wells))

        def add(G, area):
            vols[nearest_well(T.grad(G), ctx.wells)] += area * vf

        nested = np.zeros(len(ctx.wells))
        for jj in range(self.j0 + 1):
            l, h, s, K = self.ell[jj], self.h[jj], self.s[jj], self.K[jj]
            add(self.GB, 2.0 * K * (1.0 - self.lam) * l * h)
            if self.children is None:
                add(self.GA, 2.0 * K * self.lam * l * h / 2.0)
                for sign in (1.0, -1.0):
                    add(self.GA - sign * self.c * s * self.Eab,
                        K * self.lam * l * h / 2.0)
            else:
                child = self.children[jj]
                nested += K * (2.0 * child.phase_volumes(ctx, T)
                               + child.phase_volumes(ctx, self._shearT(T, s))
                               + child.phase_volumes(ctx, self._shearT(T, -s)))
        w1g = self.c * self.w1s / self.hc
        aA = self.lam * self.ellc * self.hc / 2.0
        aB = (1.0 - self.lam) * self.ellc * self.hc / 2.0
        for sign in (1.0, -1.0):
            add(self.GA, self.Kc * aA)
            add(self.F - sign * w1g * self.Eab, self.Kc * aA)
            add(self.GB - sign * w1g * self.Eab, self.Kc * aB)
            add(self.F, self.Kc * aB)
        total = vols + nested
        self._cache[key] = total
        return total

    def _w(self, ctx, Gp, Gq, T):
        return float(ctx.facet_weight(T.grad(Gp)[None], T.grad(Gq)[None])[0])

    def surface(self, ctx, T=None, mf=None, mkey=""):
        """Exact interior facet sum (jump magnitude x measure) under T.

        `mf` replaces the default tangent measure |T.D tau| by a custom
        functional of the (untransformed, unnormalized) facet tangent; it is
        used to extrude the facet lines of this plane construction into
        higher-dimensional facet planes.  `mkey` must identify `mf` in the
        cache.
        """
        T = T or self._identity()
        if mf is not None and self.children is not None:
            raise UnsupportedError(
                "custom facet measures only apply to single-level nodes")
        key = ("sv", ctx.key, T.key, mkey)
        if key in self._cache:
            return self._cache[key]
        Tg = T.grad
        if mf is None:
            mf = lambda tau: float(np.linalg.norm(T.D @ tau))
        fa = mf(self.ea)
        fb = mf(self.eb)
        total = 0.0
        for jj in range(self.j0 + 1):
            l, h, s, K = self.ell[jj], self.h[jj], self.s[jj], self.K[jj]
            if self.children is None:
                br_lo = FaceProfile.constant(h, self.GA)
                br_hi = br_lo
            else:
                br_lo = self.children[jj].face_br("lo")
                br_hi = self.children[jj].face_br("hi")
            # Vertical facet between the straight A-strip and the adjacent
            # B-cell, per block, both halves.
            total += 2.0 * K * fb * br_hi.overlay_const(
                self.GB, ctx, gmap_self=Tg, gmap_other=Tg)
            # Vertical facets between neighboring blocks.
            total += 2.0 * (K - 1) * fb * br_lo.overlay_const(
                self.GB, ctx, gmap_self=Tg, gmap_other=Tg)
            # Sloped facets bounding the sheared A-strip.
            for sign in (1.0, -1.0):
                Th = self._shearT(T, sign * s)
                fs = mf(sign * s * self.ea + self.eb)
                total += K * fs * br_lo.overlay_const(
                    self.GB, ctx, gmap_self=Th.grad, gmap_other=Tg)
                total += K * fs * br_hi.overlay_const(
                    self.GB, ctx, gmap_self=Th.grad, gmap_other=Tg)
            # Horizontal facets between consecutive rows.
            for sign in (1.0, -1.0):
                top = self._row_top(jj, sign)
                if jj < self.j0:
                    bot = self._row_bottom(jj + 1, sign, copies=2)
                else:
                    bot = self._cutoff_bottom_face(sign, copies=2)
                total += K * fa * overlay_faces(top, bot, ctx,
                                                gmap_a=Tg, gmap_b=Tg)
            if self.children is not None:
                child = self.children[jj]
                total += K * (2.0 * child.surface(ctx, T)
                              + child.surface(ctx, self._shearT(T, s))
                              + child.surface(ctx, self._shearT(T, -s)))
        # Mid-height line between the two mirror halves.
        total += self.N * fa * overlay_faces(
            self._row_bottom(0, 1.0), self._row_bottom(0, -1.0), ctx,
            gmap_a=Tg, gmap_b=Tg)
        # Cut-off row internals.
        w1g = self.c * self.w1s / self.hc
        for sign in (1.0, -1.0):
            T11 = self.GA
            T21 = self.F - sign * w1g * self.Eab
            T12 = self.GB - sign * w1g * self.Eab
            T22 = self.F
            for Gp, Gq, dx in ((T11, T21, self.lam * self.ellc),
                               (T12, T22, (1.0 - self.lam) * self.ellc)):
                tau = -dx * self.ea + sign * self.hc * self.eb
                total += self.Kc * mf(tau) * self._w(ctx, Gp, Gq, T)
            total += self.Kc * self.hc * fb * self._w(ctx, T21, T12, T)
            total += (self.Kc - 1) * self.hc * fb * self._w(ctx, T22, T11, T)
        self._cache[key] = total
        return total

    def boundary_surface(self, ctx, T=None, mf=None):
        """Facet sum on the rectangle boundary against the datum F."""
        T = T or self._identity()
        Tg = T.grad
        if mf is None:
            mf = lambda tau: float(np.linalg.norm(T.D @ tau))
        fa = mf(self.ea)
        fb = mf(self.eb)
        total = 0.0
        for end in ("hi", "lo"):
            total += fa * self.face_br(end).overlay_const(
                self.F, ctx, gmap_self=Tg, gmap_other=Tg)
        for end in ("lo", "hi"):
            total += fb * self.face_osc(end).overlay_const(
                self.F, ctx, gmap_self=Tg, gmap_other=Tg)
        return total

    # ------------------------------------------------------------------
    # oscillation-profile statistics (single-level nodes)
    #
    # The node-local map is u = F x + c w(xi, t) e_a with w >= 0 and w = 0
    # on the whole rectangle boundary.  Extruding the construction into a
    # slab and clamping the profile w near the extra boundary faces needs
    # exact integrals of w over the gradient regions and w-weighted facet
    # sums, all closed-form for a single-level node.

    def _require_leaf(self):
        if self.children is not None:
            raise UnsupportedError(
                "profile statistics only apply to single-level nodes")

    def w_peak(self):
        """Maximum of the oscillation profile w over the rectangle."""
        return self.lam * (1.0 - self.lam) * self.ell[0]

    def w_regions(self):
        """Gradient regions with their profile data, multiplicities folded.

        Returns:
            List of (G, gradw, area, Iw): node-local gradient, the gradient
            of w as a 2-vector (d/dxi, d/dt), total area of the region and
            the integral of w over it (summed over all copies).
        """
        self._require_leaf()
        if "wreg" in self._cache:
            return self._cache["wreg"]
        out = []
        for jj in range(self.j0 + 1):
            l, h, s, K = self.ell[jj], self.h[jj], self.s[jj], self.K[jj]
            lo = self.lam * l / 2.0
            p = (1.0 - self.lam) * lo
            W0 = (1.0 - self.lam) * l
            Iw1 = p * lo * h / 2.0
            Iw2 = p * s * h * h / 2.0 - self.lam * s * s * h ** 3 / 6.0
            Iw3 = h * lo * 1.5 * p - self.lam * s * lo * h * h / 2.0
            Iw4 = (self.lam / (6.0 * s)) * (W0 ** 3 - (W0 - s * h) ** 3)
            for sign in (1.0, -1.0):
                G3 = self.GA - sign * self.c * s * self.Eab
                out.append((self.GA, np.array([1.0 - self.lam, 0.0]),
                            K * lo * h, K * Iw1))
                out.append((self.GB, np.array([-self.lam, 0.0]),
                            K * s * h * h / 2.0, K * Iw2))
                out.append((G3, np.array([1.0 - self.lam, -sign * s]),
                            K * lo * h, K * Iw3))
                out.append((self.GB, np.array([-self.lam, 0.0]),
                            K * (W0 * h - s * h * h / 2.0), K * Iw4))
        lc, hc = self.ellc, self.hc
        x1 = self.lam * lc
        Wc = (1.0 - self.lam) * lc
        w1g = self.c * self.w1s / self.hc
        for sign in (1.0, -1.0):
            out.append((self.GA, np.array([1.0 - self.lam, 0.0]),
                        self.Kc * x1 * hc / 2.0,
                        self.Kc * (1.0 - self.lam) * hc * x1 * x1 / 6.0))
            out.append((self.F - sign * w1g * self.Eab,
                        np.array([0.0, -sign * self.w1s / hc]),
                        self.Kc * x1 * hc / 2.0,
                        self.Kc * self.w1s * hc * x1 / 6.0))
            out.append((self.GB - sign * w1g * self.Eab,
                        np.array([-self.lam, -sign * self.w1s / hc]),
                        self.Kc * Wc * hc / 2.0,
                        self.Kc * hc * self.lam * Wc * Wc / 6.0))
            out.append((self.F, np.zeros(2),
                        self.Kc * Wc * hc / 2.0, 0.0))
        self._cache["wreg"] = out
        return out

    def w_total(self):
        """Integral of the oscillation profile w over the rectangle."""
        return sum(r[3] for r in self.w_regions())

    def _row_trace(self, period, copies):
        """Piecewise-linear trace of w on a block's bottom edge."""
        peak = self.lam * (1.0 - self.lam) * period
        breaks = [0.0]
        vals = [0.0]
        for k in range(copies):
            breaks.extend([k * period + self.lam * period,
                           (k + 1) * period])
            vals.extend([peak, 0.0])
        return np.array(breaks), np.array(vals)

    @staticmethod
    def _wsum_pair(pa, pb, wbreaks, wvals, ctx, Tg):
        """Sum of |jump| * integral(w) over a merged piecewise facet line."""
        brk = np.unique(np.concatenate([pa.breaks, pb.breaks, wbreaks]))
        mids = 0.5 * (brk[:-1] + brk[1:])
        ia = np.clip(np.searchsorted(pa.breaks, mids) - 1, 0,
                     pa.npieces - 1)
        ib = np.clip(np.searchsorted(pb.breaks, mids) - 1, 0,
                     pb.npieces - 1)
        wt = ctx.facet_weight(Tg(pa.grads[ia]), Tg(pb.grads[ib]))
        wl = np.interp(brk[:-1], wbreaks, wvals)
        wr = np.interp(brk[1:], wbreaks, wvals)
        return float(np.sum(wt * 0.5 * (wl + wr) * np.diff(brk)))

    def w_facet_sum(self, ctx, T=None, mf=None):
        """Sum of |jump| * integral(w) over all interior facets.

        Facets on which w vanishes identically (block seams, period seams)
        contribute nothing and are skipped.
        """
        self._require_leaf()
        T = T or self._identity()
        if mf is None:
            mf = lambda tau: float(np.linalg.norm(T.D @ tau))
        Tg = T.grad
        total = 0.0
        for jj in range(self.j0 + 1):
            l, h, s, K = self.ell[jj], self.h[jj], self.s[jj], self.K[jj]
            lo = self.lam * l / 2.0
            p = (1.0 - self.lam) * lo
            # Straight-strip vertical facet: w = p along the whole edge.
            total += 2.0 * K * mf(self.eb) * p * h \
                * self._w(ctx, self.GA, self.GB, T)
            # Sloped facets bounding the sheared strip.
            for sign in (1.0, -1.0):
                G3 = self.GA - sign * self.c * s * self.Eab
                wgt = self._w(ctx, G3, self.GB, T)
                iw = (p * h - self.lam * s * h * h / 2.0) \
                    + (2.0 * p * h - self.lam * s * h * h / 2.0)
                total += K * mf(sign * s * self.ea + self.eb) * wgt * iw
            # Row-boundary facets: w is the next row's sawtooth trace.
            for sign in (1.0, -1.0):
                top = self._row_top(jj, sign).expand()
                if jj < self.j0:
                    bot = self._row_bottom(jj + 1, sign, copies=2).expand()
                    wb, wv = self._row_trace(self.ell[jj + 1], 2)
                else:
                    bot = self._cutoff_bottom_face(sign, copies=2).expand()
                    wb, wv = self._row_trace(self.ellc, 2)
                total += K * mf(self.ea) * self._wsum_pair(
                    top, bot, wb, wv, ctx, Tg)
        # Mid-height line between the two mirror halves.
        wb, wv = self._row_trace(self.ell[0], 1)
        total += self.N * mf(self.ea) * self._wsum_pair(
            self._row_bottom(0, 1.0).expand(),
            self._row_bottom(0, -1.0).expand(), wb, wv, ctx, Tg)
        # Cut-off row internals (the second diagonal and the period seams
        # carry w = 0).
        w1g = self.c * self.w1s / self.hc
        x1 = self.lam * self.ellc
        for sign in (1.0, -1.0):
            T11 = self.GA
            T21 = self.F - sign * w1g * self.Eab
            T12 = self.GB - sign * w1g * self.Eab
            total += self.Kc * mf(self.eb) * self.w1s * self.hc / 2.0 \
                * self._w(ctx, T21, T12, T)
            tau = -x1 * self.ea + sign * self.hc * self.eb
            total += self.Kc * mf(tau) * self.w1s / 2.0 \
                * self._w(ctx, T11, T21, T)
        return total

    # ------------------------------------------------------------------
    # pointwise evaluation

    def eval_points(self, pts):
        """Evaluate gradient and value of the node-local map.

        Args:
            pts: (N, n) points with pts[:, a] in [0, L], pts[:, b] in [0, H].

        Returns:
            (grads (N, n, n), values (N, n)) with values relative to the
            affine trace, i.e. u(x) = values with u = F x on the boundary.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        npts = len(pts)
        G = np.empty((npts, self.n, self.n))
        V = np.empty((npts, self.n))
        xi = pts[:, self.a]
        t = pts[:, self.b]
        lower = t < self.H / 2.0
        sgn = np.where(lower, -1.0, 1.0)
        ym = np.where(lower, self.H - t, t)
        q = np.clip(2.0 * (self.H - ym) / self.H, 1e-300, 1.0)
        jarr = np.floor(np.log(q) / np.log(self.theta) + 1e-9).astype(int)
        jarr = np.clip(jarr, 0, self.j0 + 1)
        for jj in range(self.j0 + 2):
            idx = np.where(jarr == jj)[0]
            if len(idx) == 0:
                continue
            if jj <= self.j0:
                self._eval_row(jj, idx, xi, ym, sgn, pts, G, V)
            else:
                self._eval_cutoff(idx, xi, ym, sgn, pts, G, V)
        return G, V

    def _skel_fill(self, idx, wv, wxi, weta, sgn, pts, G, V):
        Gm = np.broadcast_to(self.F, (len(idx), self.n, self.n)).copy()
        Gm[:, self.a, self.a] += self.c * wxi
        Gm[:, self.a, self.b] += self.c * weta * sgn[idx]
        G[idx] = Gm
        V[idx] = pts[idx] @ self.F.T
        V[idx, self.a] += self.c * wv

    def _eval_row(self, jj, idx, xi, ym, sgn, pts, G, V):
        l, h, s = self.ell[jj], self.h[jj], self.s[jj]
        yj = self.y[jj]
        k = np.clip(np.floor(xi[idx] / l).astype(int), 0, self.K[jj] - 1)
        xib = xi[idx] - k * l
        eta = np.clip(ym[idx] - yj, 0.0, h)
        lo = self.lam * l / 2.0
        r1 = xib <= lo
        r2 = (~r1) & (xib <= lo + s * eta)
        r3 = (~r1) & (~r2) & (xib <= self.lam * l + s * eta)
        r4 = (~r1) & (~r2) & (~r3)
        m = len(idx)
        wv = np.empty(m)
        wxi = np.empty(m)
        weta = np.empty(m)
        wv[r1] = (1.0 - self.lam) * xib[r1]
        wxi[r1], weta[r1] = 1.0 - self.lam, 0.0
        wv[r2] = (1.0 - self.lam) * lo - self.lam * (xib[r2] - lo)
        wxi[r2], weta[r2] = -self.lam, 0.0
        wv[r3] = (1.0 - self.lam) * xib[r3] - s * eta[r3]
        wxi[r3], weta[r3] = 1.0 - self.lam, -s
        wv[r4] = self.lam * (l - xib[r4])
        wxi[r4], weta[r4] = -self.lam, 0.0
        self._skel_fill(idx, wv, wxi, weta, sgn, pts, G, V)
        if self.children is None:
            return
        child = self.children[jj]
        up = sgn[idx] > 0
        z = np.where(up, eta, h - eta)
        # Straight copy in the left A-strip.
        if r1.any():
            sel = idx[r1]
            pc = np.zeros((len(sel), self.n))
            pc[:, self.a] = xib[r1]
            pc[:, self.b] = z[r1]
            Gc, Vc = child.eval_points(pc)
            G[sel] += Gc - self.GA
            V[sel] += Vc - pc @ self.GA.T
        # Sheared copy in the right A-strip.
        if r3.any():
            sel = idx[r3]
            pc = np.zeros((len(sel), self.n))
            pc[:, self.a] = xib[r3] - s * eta[r3] - lo
            pc[:, self.b] = z[r3]
            Gc, Vc = child.eval_points(pc)
            dG = Gc - self.GA
            # dG @ (I - sgn*s*Eab): column b picks up -sgn*s times column a.
            corr = dG.copy()
            corr[:, :, self.b] -= (sgn[sel] * s)[:, None] * dG[:, :, self.a]
            G[sel] += corr
            V[sel] += Vc - pc @ self.GA.T

    def _eval_cutoff(self, idx, xi, ym, sgn, pts, G, V):
        lc, hc = self.ellc, self.hc
        yc = self.y[self.j0 + 1]
        k = np.clip(np.floor(xi[idx] / lc).astype(int), 0, self.Kc - 1)
        xib = xi[idx] - k * lc
        eta = np.clip(ym[idx] - yc, 0.0, hc)
        x1 = self.lam * lc
        w1 = self.w1s
        p1 = xib <= x1
        t1 = p1 & (xib / x1 + eta / hc <= 1.0)
        t2 = p1 & ~t1
        u1 = (~p1) & ((xib - x1) / (lc - x1) + eta / hc <= 1.0)
        u2 = (~p1) & ~u1
        m = len(idx)
        wv = np.empty(m)
        wxi = np.empty(m)
        weta = np.empty(m)
        wv[t1] = (1.0 - self.lam) * xib[t1]
        wxi[t1], weta[t1] = 1.0 - self.lam, 0.0
        wv[t2] = w1 * (1.0 - eta[t2] / hc)
        wxi[t2], weta[t2] = 0.0, -w1 / hc
        wv[u1] = w1 - self.lam * (xib[u1] - x1) - (w1 / hc) * eta[u1]
        wxi[u1], weta[u1] = -self.lam, -w1 / hc
        wv[u2] = 0.0
        wxi[u2], weta[u2] = 0.0, 0.0
        self._skel_fill(idx, wv, wxi, weta, sgn, pts, G, V)

    # ------------------------------------------------------------------
    # explicit cells

    def count_cells(self):
        total = 2 * self.Kc * 4
        for jj in range(self.j0 + 1):
            if self.children is None:
                total += 2 * self.K[jj] * 4
            else:
                total += 2 * self.K[jj] * (
                    2 + 2 * self.children[jj].count_cells())
        return total

    def collect_geoms(self):
        """Explicit cell decomposition: list of (vertices, kind) in
        node-local coordinates."""
        geoms = []

        def emb(pt2):
            x = np.zeros(self.n)
            x[self.a] = pt2[0]
            x[self.b] = pt2[1]
            return x

        for jj in range(self.j0 + 1):
            l, h, s = self.ell[jj], self.h[jj], self.s[jj]
            yj = self.y[jj]
            yj1 = self.y[jj + 1]
            lo = self.lam * l / 2.0
            omega2 = [(lo, 0.0), (lo + s * h, h), (lo, h)]
            omega4 = [(self.lam * l, 0.0), (l, 0.0), (l, h),
                      (self.lam * l + s * h, h)]
            skel = [(omega2, "sector"), (omega4, "sector")]
            if self.children is None:
                skel.append(([(0.0, 0.0), (lo, 0.0), (lo, h), (0.0, h)],
                             "box"))
                skel.append(([(lo, 0.0), (2 * lo, 0.0),
                              (2 * lo + s * h, h), (lo + s * h, h)],
                             "shearbox"))
            child_geoms = (None if self.children is None
                           else self.children[jj].collect_geoms())
            for k in range(self.K[jj]):
                x0 = k * l
                for half in (1, -1):
                    def blk(pt2):
                        if half > 0:
                            return emb((x0 + pt2[0], yj + pt2[1]))
                        return emb((x0 + pt2[0], self.H - yj - pt2[1]))
                    for poly, kind in skel:
                        geoms.append((np.array([blk(p) for p in poly]), kind))
                    if child_geoms is None:
                        continue
                    band_lo = yj if half > 0 else self.H - yj1
                    for verts, kind in child_geoms:
                        # straight copy: child (branch, osc) -> (xi, t)
                        vv = verts.copy()
                        tc = verts[:, self.a]
                        z = verts[:, self.b]
                        vv[:, self.a] = x0 + tc
                        vv[:, self.b] = band_lo + z
                        geoms.append((vv, kind))
                        # sheared copy
                        vv = verts.copy()
                        eta = z if half > 0 else h - z
                        vv[:, self.a] = x0 + lo + tc + s * eta
                        vv[:, self.b] = band_lo + z
                        kk = "shearbox" if kind == "box" else kind
                        geoms.append((vv, kk))
        # cut-off rows
        lc, hc = self.ellc, self.hc
        yc = self.y[self.j0 + 1]
        x1 = self.lam * lc
        tris = [([(0.0, 0.0), (x1, 0.0), (0.0, hc)], "sector"),
                ([(x1, 0.0), (x1, hc), (0.0, hc)], "sector"),
                ([(x1, 0.0), (lc, 0.0), (x1, hc)], "sector"),
                ([(lc, 0.0), (lc, hc), (x1, hc)], "sector")]
        for k in range(self.Kc):
            x0 = k * lc
            for half in (1, -1):
                for poly, kind in tris:
                    pts = []
                    for p in poly:
                        if half > 0:
                            pts.append(emb((x0 + p[0], yc + p[1])))
                        else:
                            pts.append(emb((x0 + p[0], self.H - yc - p[1])))
                    geoms.append((np.array(pts), kind))
        return geoms


def buildingBlock(ell, h, lam, orientation=(0, 1)):
    """Single branching building block on [0, ell] x [0, h].

    The block carries the normalized two-well structure A = diag(1-lam, 0),
    B = diag(-lam, 0) (so the boundary datum is F = lam A + (1-lam) B = 0):
    gradient A on the two A-strips (the sheared strip carries the extra
    off-diagonal entry -(1-lam) ell/(2h)), gradient B elsewhere; the
    deformation is u = (v, 0) with v = 0 on the lateral boundary and the
    half-period refinement identity v(x1/2, h) = v(ell/2 + x1/2, h)
    = v(x1, 0)/2.

    Args:
        ell: block width (oscillation direction), 0 < ell < h.
        h: block height.
        lam: volume fraction of phase A, in (0, 1).
        orientation: (oscillation axis, branching axis), 0-based.

    Returns:
        PiecewiseAffineMap with four explicit cells.
    """
    if not (0.0 < lam < 1.0):
        raise DomainError("lambda must lie in (0, 1), got %r" % lam)
    if not (0.0 < ell < h):
        raise GeometryError("need 0 < ell < h, got ell=%r, h=%r" % (ell, h))
    a, b = orientation
    n = 2
    ea, eb = _unit(n, a), _unit(n, b)
    A = (1.0 - lam) * np.outer(ea, ea)
    B = -lam * np.outer(ea, ea)
    s = (1.0 - lam) * ell / (2.0 * h)
    G3 = A - s * np.outer(ea, eb)
    lo = lam * ell / 2.0

    def emb(p):
        x = np.zeros(n)
        x[a] = p[0]
        x[b] = p[1]
        return x

    def poly(ps):
        return np.array([emb(p) for p in ps])

    from .geometry import Cell
    cells = [
        Cell("box", poly([(0, 0), (lo, 0), (lo, h), (0, h)]), A,
             np.zeros(n), 1),
        Cell("sector", poly([(lo, 0), (lo + s * h, h), (lo, h)]), B,
             lo * ea , 2),
        Cell("shearbox", poly([(lo, 0), (2 * lo, 0), (2 * lo + s * h, h),
                               (lo + s * h, h)]), G3, np.zeros(n), 1),
        Cell("sector", poly([(lam * ell, 0), (ell, 0), (ell, h),
                             (lam * ell + s * h, h)]), B, lam * ell * ea, 2),
    ]
    dom = [(0.0, ell), (0.0, h)] if (a, b) == (0, 1) else [(0.0, h),
                                                           (0.0, ell)]
    F = np.zeros((n, n))
    return PiecewiseAffineMap(n, dom, F, explicit_cells=cells,
                              wells=np.stack([A, B]))
