"""Three-dimensional slab constructions: extruded branched laminates.

A SlabNode3D extrudes a single-level plane branching (oscillation axis `a`,
branching axis `b`) along the remaining axis `q` of a box and clamps the
oscillation profile w within layers of width delta = rho * Lq next to the
two q-faces:

    u = F x + c min(w(x_a, x_b), M d(x_q)) e_a,    M = (max w) / delta,

with d the distance to the nearest q-face.  The clamped map attains the
affine datum on all six faces, the clip regions {M d < w} carry the single
gradient F +/- c M e_a x e_q, and every energy contribution stays in closed
form via the plane node's profile statistics.

The refined-phase strips of the plane construction may host child slabs
oscillating along the outer passive axis q (the inner levels of higher-order
laminates).  Children are shortened by the clamp layer width at both q-ends,
so they never meet the outer clamp wedges: the exact bookkeeping of the two
levels decouples, at the price of an unrefined strip margin whose energy is
of the same order as the clamp itself.
"""

import math

import numpy as np

from .branch2d import BranchNode2D
from .errors import ParameterError, StructureError, UnsupportedError
from .geometry import (FaceProfile, Profile, Section, Transform,
                       overlay_faces, shear_transform)


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _int_pos_affine(c0, c1, alo, ahi):
    """Integral of max(0, c0 + c1 a) over [alo, ahi]."""
    if ahi <= alo:
        return 0.0
    vlo = c0 + c1 * alo
    vhi = c0 + c1 * ahi
    if vlo <= 0.0 and vhi <= 0.0:
        return 0.0
    if vlo >= 0.0 and vhi >= 0.0:
        return 0.5 * (vlo + vhi) * (ahi - alo)
    az = -c0 / c1
    if vlo < 0.0:
        return 0.5 * vhi * (ahi - az)
    return 0.5 * vlo * (az - alo)


class _HoleBand:
    """Band of profile-free triangles on a clamp face of a nested slab.

    Over a in [a0, a1] the face shows `Ghole` instead of the clamp pattern
    value `Gpat` on the q-intervals [p*per + u(a), (p+1)*per], p < count,
    with u(a) = per - (per - x1) * t(a) and t affine from 1 at the hosting
    strip's edge down to 0 at depth hc.
    """

    def __init__(self, a0, a1, edge, per, count, x1, Ghole, Gpat):
        self.a0 = float(a0)
        self.a1 = float(a1)
        self.per = float(per)
        self.count = int(count)
        self.x1 = float(x1)
        self.Ghole = Ghole
        self.Gpat = Gpat
        h = self.a1 - self.a0
        # t(a) = t0 + t1 * a
        if edge == "lo":
            self.t1 = -1.0 / h
            self.t0 = 1.0 - self.t1 * self.a0
        else:
            self.t1 = 1.0 / h
            self.t0 = -self.t1 * self.a0

    def width_coeffs(self):
        """Total hole width in q as (c0, c1) with W(a) = c0 + c1 a."""
        scale = self.count * (self.per - self.x1)
        return scale * self.t0, scale * self.t1

    def lower_coeffs(self, p):
        """Interval lower endpoint p*per + u(a) as (c0, c1)."""
        d = self.per - self.x1
        return (p * self.per + self.per - d * self.t0, -d * self.t1)


def _int_pos_affine_arr(c0, c1, lo, hi):
    """Vectorized integral of max(0, c0 + c1 a) over [lo, hi]."""
    span = hi - lo
    vlo = c0 + c1 * lo
    vhi = c0 + c1 * hi
    with np.errstate(divide="ignore", invalid="ignore"):
        az = np.where(c1 != 0.0, -c0 / np.where(c1 != 0.0, c1, 1.0), np.inf)
    both_pos = (vlo >= 0.0) & (vhi >= 0.0)
    trapz = 0.5 * (vlo + vhi) * span
    lo_neg = (vlo < 0.0) & (vhi > 0.0)
    hi_neg = (vhi < 0.0) & (vlo > 0.0)
    out = np.where(both_pos, trapz, 0.0)
    out = np.where(lo_neg, 0.5 * vhi * (hi - az), out)
    out = np.where(hi_neg, 0.5 * vlo * (az - lo), out)
    return np.where(span > 0.0, out, 0.0)


def _bands_pair_integral(ba, bb, ddw, alo, ahi):
    """Integral over a in [alo, ahi] of ddw x |holes(ba) and holes(bb)|."""
    if ddw == 0.0 or ahi <= alo:
        return 0.0
    da = ba.per - ba.x1
    db = bb.per - bb.x1
    la1 = -da * ba.t1
    lb1 = -db * bb.t1
    pa = np.arange(ba.count)
    ea = (pa + 1.0) * ba.per
    pmin = np.maximum(0, np.floor(pa * ba.per / bb.per).astype(int) - 1)
    pmax = np.minimum(bb.count - 1, np.ceil(ea / bb.per).astype(int))
    counts = np.maximum(pmax - pmin + 1, 0)
    total_pairs = int(counts.sum())
    if total_pairs == 0:
        return 0.0
    rep = np.repeat(pa, counts)
    offs = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pb = np.arange(total_pairs) - np.repeat(offs, counts) \
        + np.repeat(pmin, counts)
    la0 = rep * ba.per + ba.per - da * ba.t0
    lb0 = pb * bb.per + bb.per - db * bb.t0
    e = np.minimum((rep + 1.0) * ba.per, (pb + 1.0) * bb.per)
    # m(a) = e - max(la(a), lb(a)); integrate max(0, m) piecewise with the
    # crossing of the two affine lower envelopes at ax.
    dslope = la1 - lb1
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = np.where(dslope != 0.0,
                      (lb0 - la0) / np.where(dslope != 0.0, dslope, 1.0),
                      np.inf)
    axc = np.clip(ax, alo, ahi)
    mid_l = 0.5 * (alo + axc)
    mid_r = 0.5 * (axc + ahi)
    a_on_l = la0 + la1 * mid_l >= lb0 + lb1 * mid_l
    a_on_r = la0 + la1 * mid_r >= lb0 + lb1 * mid_r
    c0_l = e - np.where(a_on_l, la0, lb0)
    c1_l = -np.where(a_on_l, la1, lb1)
    c0_r = e - np.where(a_on_r, la0, lb0)
    c1_r = -np.where(a_on_r, la1, lb1)
    total = _int_pos_affine_arr(c0_l, c1_l, alo, axc) \
        + _int_pos_affine_arr(c0_r, c1_r, axc, ahi)
    return float(total.sum()) * ddw


def _overlay_fields(patA, bandsA, patB, bandsB, mid, ctx, gmap):
    """Exact integral of the facet weight between two clamp-face fields.

    Each field is a 1D gradient pattern along the in-plane axis (constant
    over the q-extent `mid`) plus profile-free hole bands.
    """
    total = mid * overlay_faces(patA, patB, ctx, gmap_a=gmap, gmap_b=gmap)

    def wgt(G1, G2):
        return float(ctx.facet_weight(gmap(G1)[None], gmap(G2)[None])[0])

    for bands, other in ((bandsA, patB), (bandsB, patA)):
        prof = other.expand()
        for b in bands:
            w0, w1 = b.width_coeffs()
            cuts = [b.a0] + [float(x) for x in prof.breaks
                             if b.a0 < x < b.a1] + [b.a1]
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                amid = 0.5 * (lo + hi)
                i = int(np.searchsorted(prof.breaks, amid) - 1)
                i = min(max(i, 0), len(prof.grads) - 1)
                Go = prof.grads[i]
                dw = wgt(b.Ghole, Go) - wgt(b.Gpat, Go)
                if dw:
                    total += dw * (w0 * (hi - lo)
                                   + 0.5 * w1 * (hi * hi - lo * lo))
    for ba in bandsA:
        for bb in bandsB:
            alo = max(ba.a0, bb.a0)
            ahi = min(ba.a1, bb.a1)
            if ahi <= alo:
                continue
            ddw = (wgt(ba.Ghole, bb.Ghole) - wgt(ba.Ghole, bb.Gpat)
                   - wgt(ba.Gpat, bb.Ghole) + wgt(ba.Gpat, bb.Gpat))
            total += _bands_pair_integral(ba, bb, ddw, alo, ahi)
    return total


class SlabNode3D:
    """One slab level: extruded plane branching with clamped profile.

    Local coordinates: the box [0, L] x [0, H] x [0, Lq] along the axes
    (a, b, q) respectively.  The plane node oscillates between GA and GB
    along `a`, branching along `b`; GA hosts the children.
    """

    def __init__(self, axis_a, axis_b, axis_q, L, H, Lq, GA, GB, lam, theta,
                 N, rho, chain_rest=(), scales_rest=(), rho_rest=()):
        GA = np.asarray(GA, dtype=float)
        GB = np.asarray(GB, dtype=float)
        if GA.shape != (3, 3):
            raise StructureError("slab constructions need 3x3 gradients")
        if len({int(axis_a), int(axis_b), int(axis_q)}) != 3:
            raise ParameterError("slab axes must be distinct")
        self.a, self.b, self.q = int(axis_a), int(axis_b), int(axis_q)
        self.n = 3
        self.node = BranchNode2D(self.a, self.b, L, H, GA, GB, lam, theta, N)
        self.Lq = float(Lq)
        if self.Lq <= 0:
            raise ParameterError("passive length must be positive")
        rho = float(rho)
        if not (0.0 < rho < 0.5):
            raise ParameterError("rho must lie in (0, 1/2), got %r" % rho)
        self.rho = rho
        self.delta = rho * self.Lq
        self.c = self.node.c
        self.F = self.node.F
        self.ea = _unit(3, self.a)
        self.eb = _unit(3, self.b)
        self.eq = _unit(3, self.q)
        self.Eaq = np.outer(self.ea, self.eq)
        self.wmax = self.node.w_peak()
        self.M = self.wmax / self.delta
        self._mkey = "ext%d" % self.q

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
            cc = float(dc[self.q, self.q])
            if cc == 0.0 or not np.allclose(
                    dc, cc * np.outer(self.eq, self.eq), atol=1e-12):
                raise StructureError(
                    "child oscillation must use the passive axis")
            if not scales_rest:
                raise ParameterError("missing length scale for nested level")
            if not rho_rest:
                raise ParameterError("missing clamp fraction for nested level")
            r_next = float(scales_rest[0])
            rho2 = float(rho_rest[0])
            Lc = self.Lq - 2.0 * self.delta
            if Lc <= 0:
                raise ParameterError("clamp layers leave no room for children")
            nd = self.node
            self.children = []
            for jj in range(nd.j0 + 1):
                Hc = nd.lam * nd.ell[jj] / 2.0
                # Both the child's coarsest period and its clamp width
                # shrink like 2^-(jj+3) with the hosting strip width.
                Nc = max(
                    int(math.ceil(Lc * 2 ** (jj + 3) / r_next)),
                    int(math.floor(4.0 * Lc / Hc)) + 1,
                    1)
                rho_c = rho2 / (2.0 ** (jj + 3) * nd.h[jj])
                self.children.append(SlabNode3D(
                    self.q, self.a, self.b, Lc, Hc, nd.h[jj], Jc, Ac, lam_c,
                    theta, Nc, rho_c, chain_rest[1:], scales_rest[1:],
                    rho_rest[1:]))
        self._cache = {}

    # ------------------------------------------------------------------
    # helpers

    def _identity(self):
        return Transform.identity(3)

    def clip_grad(self, sigma):
        """Gradient inside the clamp wedge adjacent to the q-face at
        q = 0 (sigma = +1) or q = Lq (sigma = -1)."""
        return self.F + sigma * self.c * self.M * self.Eaq

    def _mf(self, T):
        eq = self.eq
        return lambda tau: T.area_factor(tau, eq)

    def _w(self, ctx, Gp, Gq_, T):
        return float(ctx.facet_weight(T.grad(Gp)[None],
                                      T.grad(Gq_)[None])[0])

    def _shearT(self, T, s):
        return T.compose_inner(
            shear_transform(3, self.a, self.b, s, self.node.GB))

    def _clamp_face_sigma(self, sign, outward):
        """Clip-gradient sign shown by a child on its row's outward
        (away from mid-height) or inward face, for the given mirror half."""
        return -1.0 if ((sign > 0) == outward) else 1.0

    def _row_top_child(self, jj, sign):
        nd = self.node
        l, s = nd.ell[jj], nd.s[jj]
        gapL = (1.0 - nd.lam) * l / 2.0
        Gc = self.children[jj].clip_grad(self._clamp_face_sigma(sign, True))
        th = shear_transform(3, self.a, self.b, sign * s, nd.GB)
        return FaceProfile([
            Section(Profile.constant(nd.lam * l / 2.0, Gc)),
            Section(Profile.constant(gapL, nd.GB)),
            Section(Profile.constant(nd.lam * l / 2.0, th.grad(Gc))),
            Section(Profile.constant(gapL, nd.GB))])

    def _row_bottom_child(self, jj, sign, copies=1):
        nd = self.node
        l, s = nd.ell[jj], nd.s[jj]
        Gc = self.children[jj].clip_grad(self._clamp_face_sigma(sign, False))
        th = shear_transform(3, self.a, self.b, sign * s, nd.GB)
        secs = [Section(Profile.constant(nd.lam * l / 2.0, Gc)),
                Section(Profile.constant(nd.lam * l / 2.0, th.grad(Gc))),
                Section(Profile.constant((1.0 - nd.lam) * l, nd.GB))]
        if copies > 1:
            secs = [s_ for _ in range(copies) for s_ in secs]
        return FaceProfile(secs)

    def _face_bands(self, jj, sign, face, copies=1):
        """Hole bands of the row-jj children's clamp faces.

        A child's q-faces carry its clip gradient wherever its profile is
        positive; over the profile-free cut-off triangles they show the
        child datum instead.  The triangles sit in bands of depth hc next
        to both strip edges, with q-width shrinking linearly to zero away
        from the edge.
        """
        nd = self.node
        child = self.children[jj]
        cn = child.node
        l, s = nd.ell[jj], nd.s[jj]
        lo = nd.lam * l / 2.0
        gapL = (1.0 - nd.lam) * l / 2.0
        sigma = self._clamp_face_sigma(sign, face == "top")
        th = shear_transform(3, self.a, self.b, sign * s, nd.GB)
        Gh0 = child.F
        Gp0 = child.clip_grad(sigma)
        if face == "top":
            slots = [(0.0, lo, None), (lo + gapL, 2.0 * lo + gapL, th.grad)]
        else:
            slots = [(0.0, lo, None), (lo, 2.0 * lo, th.grad)]
        bands = []
        for cpy in range(copies):
            for s0, s1, gmap in slots:
                Gh = Gh0 if gmap is None else gmap(Gh0)
                Gp = Gp0 if gmap is None else gmap(Gp0)
                a0 = cpy * l + s0
                a1 = cpy * l + s1
                bands.append(_HoleBand(a0, a0 + cn.hc, "lo", cn.ellc,
                                       cn.Kc, cn.lam * cn.ellc, Gh, Gp))
                bands.append(_HoleBand(a1 - cn.hc, a1, "hi", cn.ellc,
                                       cn.Kc, cn.lam * cn.ellc, Gh, Gp))
        return bands

    # ------------------------------------------------------------------
    # energies

    def elastic(self, ctx, T=None):
        """Exact elastic energy of the slab under transform T."""
        T = T or self._identity()
        key = ("el", ctx.key, T.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        vf = T.volume_factor()
        total = self.Lq * nd.elastic(ctx, T)
        corr = 0.0
        wtot = nd.w_total()
        for sigma in (1.0, -1.0):
            corr += (wtot / self.M) * float(
                ctx.elastic_density(T.grad(self.clip_grad(sigma))))
        for Gr, _, _, Iw in nd.w_regions():
            if Iw:
                corr -= (2.0 / self.M) * Iw * float(
                    ctx.elastic_density(T.grad(Gr)))
        total += vf * corr
        if self.children is not None:
            mid = self.Lq - 2.0 * self.delta
            for jj in range(nd.j0 + 1):
                child = self.children[jj]
                K, s = nd.K[jj], nd.s[jj]
                strip = nd.lam * nd.ell[jj] / 2.0 * nd.h[jj]
                total -= vf * 2.0 * K * strip * mid * float(
                    ctx.elastic_density(T.grad(nd.GA)))
                for sign in (1.0, -1.0):
                    G3 = nd.GA - sign * nd.c * s * nd.Eab
                    total -= vf * K * strip * mid * float(
                        ctx.elastic_density(T.grad(G3)))
                total += K * (2.0 * child.elastic(ctx, T)
                              + child.elastic(ctx, self._shearT(T, s))
                              + child.elastic(ctx, self._shearT(T, -s)))
        self._cache[key] = total
        return total

    def phase_volumes(self, ctx, T=None):
        """Volume of the nearest-well phase regions, indexed by well."""
        from .geometry import nearest_well
        T = T or self._identity()
        key = ("pv", ctx.key, T.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        vf = T.volume_factor()
        vols = self.Lq * nd.phase_volumes(ctx, T)

        def add(G, vol):
            vols[nearest_well(T.grad(G), ctx.wells)] += vol * vf

        wtot = nd.w_total()
        for sigma in (1.0, -1.0):
            add(self.clip_grad(sigma), wtot / self.M)
        for Gr, _, _, Iw in nd.w_regions():
            if Iw:
                add(Gr, -2.0 * Iw / self.M)
        if self.children is not None:
            mid = self.Lq - 2.0 * self.delta
            for jj in range(nd.j0 + 1):
                child = self.children[jj]
                K, s = nd.K[jj], nd.s[jj]
                strip = nd.lam * nd.ell[jj] / 2.0 * nd.h[jj]
                add(nd.GA, -2.0 * K * strip * mid)
                for sign in (1.0, -1.0):
                    add(nd.GA - sign * nd.c * s * nd.Eab, -K * strip * mid)
                vols = vols + K * (
                    2.0 * child.phase_volumes(ctx, T)
                    + child.phase_volumes(ctx, self._shearT(T, s))
                    + child.phase_volumes(ctx, self._shearT(T, -s)))
        self._cache[key] = vols
        return vols

    def surface(self, ctx, T=None):
        """Exact interior facet area sum (jump magnitude x area) under T."""
        T = T or self._identity()
        key = ("sv", ctx.key, T.key)
        if key in self._cache:
            return self._cache[key]
        nd = self.node
        mf = self._mf(T)
        # Extruded plane facets, truncated where the clamp wedge swallows
        # them (the wedge region carries a single gradient on both sides).
        total = self.Lq * nd.surface(ctx, T, mf=mf, mkey=self._mkey)
        total -= (2.0 / self.M) * nd.w_facet_sum(ctx, T, mf=mf)
        # Ridge facets: the graph q = w / M over each gradient region,
        # between the extruded gradient and the wedge gradient.
        for Gr, gw, area, Iw in nd.w_regions():
            if Iw == 0.0 and not gw.any():
                continue
            v = gw[0] * self.ea + gw[1] * self.eb
            for sigma in (1.0, -1.0):
                nvec = v - sigma * self.M * self.eq
                nn = float(np.linalg.norm(nvec))
                af = T.normal_area_factor(nvec / nn)
                wgt = self._w(ctx, Gr, self.clip_grad(sigma), T)
                total += wgt * area * (nn / self.M) * af
        if self.children is not None:
            total += self._children_surface(ctx, T, mf)
        self._cache[key] = total
        return total

    def _children_surface(self, ctx, T, mf):
        """Surface corrections replacing the unrefined strip gradients by
        the children's faces on the strip middles, plus the children's own
        facets and their oscillation-end interfaces."""
        nd = self.node
        Tg = T.grad
        mid = self.Lq - 2.0 * self.delta
        fab = T.area_factor(self.ea, self.eb)
        total = 0.0
        for jj in range(nd.j0 + 1):
            child = self.children[jj]
            K, s, h = nd.K[jj], nd.s[jj], nd.h[jj]
            wAB = self._w(ctx, nd.GA, nd.GB, T)
            # Strip-edge facets: the child's branch-end faces replace the
            # constant GA edge on the strip middles.  The face profiles vary
            # along q (length mid) and are constant over the edge height h.
            ov_hi = child.node.face_br("hi").overlay_const(
                nd.GB, ctx, gmap_self=Tg, gmap_other=Tg)
            ov_lo = child.node.face_br("lo").overlay_const(
                nd.GB, ctx, gmap_self=Tg, gmap_other=Tg)
            total += 2.0 * K * mf(self.eb) * h * (ov_hi - wAB * mid)
            total += 2.0 * (K - 1) * mf(self.eb) * h * (ov_lo - wAB * mid)
            for sign in (1.0, -1.0):
                Th = self._shearT(T, sign * s)
                G3 = nd.GA - sign * nd.c * s * nd.Eab
                w3B = self._w(ctx, G3, nd.GB, T)
                fs = mf(sign * s * self.ea + self.eb)
                ov_lo_s = child.node.face_br("lo").overlay_const(
                    nd.GB, ctx, gmap_self=Th.grad, gmap_other=Tg)
                ov_hi_s = child.node.face_br("hi").overlay_const(
                    nd.GB, ctx, gmap_self=Th.grad, gmap_other=Tg)
                total += K * fs * h * (ov_lo_s - w3B * mid)
                total += K * fs * h * (ov_hi_s - w3B * mid)
            # Row-boundary facets: clip gradients replace GA on the middles.
            for sign in (1.0, -1.0):
                topL = nd._row_top(jj, sign)
                topC = self._row_top_child(jj, sign)
                topB = self._face_bands(jj, sign, "top")
                if jj < nd.j0:
                    botL = nd._row_bottom(jj + 1, sign, copies=2)
                    botC = self._row_bottom_child(jj + 1, sign, copies=2)
                    botB = self._face_bands(jj + 1, sign, "bottom", copies=2)
                else:
                    botL = nd._cutoff_bottom_face(sign, copies=2)
                    botC = botL
                    botB = []
                dlt = (_overlay_fields(topC, topB, botC, botB, mid, ctx, Tg)
                       - mid * overlay_faces(topL, botL, ctx, gmap_a=Tg,
                                             gmap_b=Tg))
                total += K * mf(self.ea) * dlt
            # Oscillation-end interfaces of the child at q = delta and
            # q = Lq - delta, against the unrefined strip margins.
            for end in ("lo", "hi"):
                prof = child.node.face_osc(end)
                ov_str = prof.overlay_const(nd.GA, ctx, gmap_self=Tg,
                                            gmap_other=Tg)
                ov_sh = 0.0
                for sign in (1.0, -1.0):
                    Th = self._shearT(T, sign * s)
                    ov_sh += prof.overlay_const(
                        nd.GA, ctx, gmap_self=Th.grad, gmap_other=Th.grad)
                total += K * h * fab * (2.0 * ov_str + ov_sh)
            # The children's own facets.
            total += K * (2.0 * child.surface(ctx, T)
                          + child.surface(ctx, self._shearT(T, s))
                          + child.surface(ctx, self._shearT(T, -s)))
        # Mid-height plane between the two mirror halves.
        dlt = (_overlay_fields(self._row_bottom_child(0, 1.0),
                               self._face_bands(0, 1.0, "bottom"),
                               self._row_bottom_child(0, -1.0),
                               self._face_bands(0, -1.0, "bottom"),
                               mid, ctx, Tg)
               - mid * overlay_faces(nd._row_bottom(0, 1.0),
                                     nd._row_bottom(0, -1.0), ctx,
                                     gmap_a=Tg, gmap_b=Tg))
        total += nd.N * mf(self.ea) * dlt
        return total

    def boundary_surface(self, ctx, T=None):
        """Facet area sum on the box boundary against the datum F."""
        T = T or self._identity()
        nd = self.node
        mf = self._mf(T)
        total = self.Lq * nd.boundary_surface(ctx, T, mf=mf)
        # q-faces: the clamp wedge gradient meets the datum wherever the
        # profile is active; the profile-free cut-off triangles already
        # carry the datum gradient.
        fab = T.area_factor(self.ea, self.eb)
        active = nd.L * nd.H - sum(
            area for _, gw, area, Iw in nd.w_regions()
            if Iw == 0.0 and not gw.any())
        for sigma in (1.0, -1.0):
            total += self._w(ctx, self.clip_grad(sigma), self.F, T) \
                * active * fab
        if self.children is not None:
            # The xi = 0 box face shows the children's branch-end faces on
            # the strip middles instead of the constant GA (two mirror
            # halves per row; only the first, straight strip touches it).
            Tg = T.grad
            mid = self.Lq - 2.0 * self.delta
            wAF = self._w(ctx, nd.GA, self.F, T)
            for jj in range(nd.j0 + 1):
                child = self.children[jj]
                ov = child.node.face_br("lo").overlay_const(
                    self.F, ctx, gmap_self=Tg, gmap_other=Tg)
                total += 2.0 * mf(self.eb) * nd.h[jj] * (ov - wAF * mid)
        return total

    # ------------------------------------------------------------------
    # pointwise evaluation

    def eval_points(self, pts):
        """Evaluate gradient and value of the node-local map.

        Args:
            pts: (N, 3) points inside the local box.

        Returns:
            (grads (N, 3, 3), values (N, 3)) with u = F x on the boundary.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        nd = self.node
        G, V = nd.eval_points(pts)
        base = pts @ self.F.T
        w = (V - base)[:, self.a] / self.c
        xq = pts[:, self.q]
        d = np.minimum(xq, self.Lq - xq)
        clamp = self.M * d < w
        if clamp.any():
            sigma = np.where(xq[clamp] < self.Lq / 2.0, 1.0, -1.0)
            Gm = np.broadcast_to(self.F, (int(clamp.sum()), 3, 3)).copy()
            Gm[:, self.a, self.q] += sigma * self.c * self.M
            G[clamp] = Gm
            V[clamp] = base[clamp]
            V[clamp, self.a] += self.c * self.M * d[clamp]
        if self.children is not None:
            inside = (~clamp) & (xq >= self.delta) \
                & (xq <= self.Lq - self.delta)
            if inside.any():
                self._eval_children(pts, np.where(inside)[0], G, V)
        return G, V

    def _eval_children(self, pts, idx, G, V):
        nd = self.node
        xi = pts[idx, self.a]
        t = pts[idx, self.b]
        xq = pts[idx, self.q]
        lower = t < nd.H / 2.0
        sgn = np.where(lower, -1.0, 1.0)
        ym = np.where(lower, nd.H - t, t)
        qq = np.clip(2.0 * (nd.H - ym) / nd.H, 1e-300, 1.0)
        jarr = np.floor(np.log(qq) / np.log(nd.theta) + 1e-9).astype(int)
        for jj in range(nd.j0 + 1):
            rsel = jarr == jj
            if not rsel.any():
                continue
            child = self.children[jj]
            l, h, s = nd.ell[jj], nd.h[jj], nd.s[jj]
            yj = nd.y[jj]
            k = np.clip(np.floor(xi[rsel] / l).astype(int), 0, nd.K[jj] - 1)
            xib = xi[rsel] - k * l
            eta = np.clip(ym[rsel] - yj, 0.0, h)
            lo = nd.lam * l / 2.0
            r1 = xib <= lo
            r2 = (~r1) & (xib <= lo + s * eta)
            r3 = (~r1) & (~r2) & (xib <= nd.lam * l + s * eta)
            sub = idx[rsel]
            up = sgn[rsel] > 0
            z = np.where(up, eta, h - eta)
            if r1.any():
                sel = sub[r1]
                pc = np.zeros((len(sel), 3))
                pc[:, self.q] = xq[rsel][r1] - self.delta
                pc[:, self.a] = xib[r1]
                pc[:, self.b] = z[r1]
                Gc, Vc = child.eval_points(pc)
                G[sel] += Gc - nd.GA
                V[sel] += Vc - pc @ nd.GA.T
            if r3.any():
                sel = sub[r3]
                pc = np.zeros((len(sel), 3))
                pc[:, self.q] = xq[rsel][r3] - self.delta
                pc[:, self.a] = xib[r3] - s * eta[r3] - lo
                pc[:, self.b] = z[r3]
                Gc, Vc = child.eval_points(pc)
                dG = Gc - nd.GA
                corr = dG.copy()
                corr[:, :, self.b] -= (sgn[rsel][r3] * s)[:, None] \
                    * dG[:, :, self.a]
                G[sel] += corr
                V[sel] += Vc - pc @ nd.GA.T

    # ------------------------------------------------------------------
    # explicit cells

    def count_cells(self):
        nd = self.node
        # Upper bound: each plane cell yields a middle prism and up to two
        # clamp wedges; hosting strips yield wedges, margins, and the
        # children's own cells.
        if self.children is None:
            return 3 * nd.count_cells()
        total = 3 * 2 * nd.Kc * 4
        for jj in range(nd.j0 + 1):
            total += 2 * nd.K[jj] * (
                2 * 3 + 2 * (8 + self.children[jj].count_cells()))
        return total

    def _extrude(self, verts2, kind, out):
        """Emit the middle prism and, where the oscillation profile is
        active, the two clamp wedges over a plane cell."""
        nd = self.node
        _, Vv = nd.eval_points(verts2)
        wv = (Vv - verts2 @ self.F.T)[:, self.a] / self.c
        hv = np.maximum(wv, 0.0) / self.M
        bot = verts2.copy()
        top = verts2.copy()
        bot[:, self.q] = hv
        top[:, self.q] = self.Lq - hv
        out.append((np.vstack([bot, top]), kind))
        if hv.max() > 1e-9 * self.delta:
            for face_q, ridge in ((0.0, hv), (self.Lq, self.Lq - hv)):
                base = verts2.copy()
                base[:, self.q] = face_q
                peak = verts2.copy()
                peak[:, self.q] = ridge
                out.append((np.vstack([base, peak]), "sector"))

    def collect_geoms(self):
        """Explicit cell decomposition: list of (vertices, kind) in local
        coordinates.  Each plane cell becomes a middle prism and, where the
        oscillation profile is active, two clamp wedges; hosting strips
        contribute wedges, clamp-layer margins, and embedded child cells."""
        out = []
        if self.children is None:
            for verts2, kind in self.node.collect_geoms():
                self._extrude(verts2, kind, out)
            return out
        nd = self.node
        for jj in range(nd.j0 + 1):
            l, h, s = nd.ell[jj], nd.h[jj], nd.s[jj]
            yj = nd.y[jj]
            yj1 = nd.y[jj + 1]
            lo = nd.lam * l / 2.0
            omega2 = [(lo, 0.0), (lo + s * h, h), (lo, h)]
            omega4 = [(nd.lam * l, 0.0), (l, 0.0), (l, h),
                      (nd.lam * l + s * h, h)]
            strips = [([(0.0, 0.0), (lo, 0.0), (lo, h), (0.0, h)], "box"),
                      ([(lo, 0.0), (2 * lo, 0.0), (2 * lo + s * h, h),
                        (lo + s * h, h)], "shearbox")]
            child_geoms = self.children[jj].collect_geoms()
            for k in range(nd.K[jj]):
                x0 = k * l
                for half in (1, -1):
                    def blk(pt2):
                        x = np.zeros(3)
                        x[self.a] = x0 + pt2[0]
                        x[self.b] = (yj + pt2[1] if half > 0
                                     else nd.H - yj - pt2[1])
                        return x
                    for poly, kind in ((omega2, "sector"),
                                       (omega4, "sector")):
                        self._extrude(np.array([blk(p) for p in poly]),
                                      kind, out)
                    for poly, kind in strips:
                        verts2 = np.array([blk(p) for p in poly])
                        _, Vv = nd.eval_points(verts2)
                        wv = (Vv - verts2 @ self.F.T)[:, self.a] / self.c
                        hv = np.maximum(wv, 0.0) / self.M
                        for face_q, ridge, marg in (
                                (0.0, hv, self.delta),
                                (self.Lq, self.Lq - hv,
                                 self.Lq - self.delta)):
                            base = verts2.copy()
                            base[:, self.q] = face_q
                            peak = verts2.copy()
                            peak[:, self.q] = ridge
                            out.append((np.vstack([base, peak]), "sector"))
                            flat = verts2.copy()
                            flat[:, self.q] = marg
                            out.append((np.vstack([peak, flat]), kind))
                    band_lo = yj if half > 0 else nd.H - yj1
                    for verts, kind in child_geoms:
                        tc = verts[:, self.q]
                        va = verts[:, self.a]
                        z = verts[:, self.b]
                        vv = verts.copy()
                        vv[:, self.q] = self.delta + tc
                        vv[:, self.a] = x0 + va
                        vv[:, self.b] = band_lo + z
                        out.append((vv, kind))
                        vv = verts.copy()
                        eta = z if half > 0 else h - z
                        vv[:, self.q] = self.delta + tc
                        vv[:, self.a] = x0 + lo + va + s * eta
                        vv[:, self.b] = band_lo + z
                        kk = "shearbox" if kind == "box" else kind
                        out.append((vv, kk))
        # cut-off rows
        lc, hc = nd.ellc, nd.hc
        yc = nd.y[nd.j0 + 1]
        x1 = nd.lam * lc
        tris = [[(0.0, 0.0), (x1, 0.0), (0.0, hc)],
                [(x1, 0.0), (x1, hc), (0.0, hc)],
                [(x1, 0.0), (lc, 0.0), (x1, hc)],
                [(lc, 0.0), (lc, hc), (x1, hc)]]
        for k in range(nd.Kc):
            x0 = k * lc
            for half in (1, -1):
                for poly in tris:
                    pts = []
                    for p in poly:
                        x = np.zeros(3)
                        x[self.a] = x0 + p[0]
                        x[self.b] = (yc + p[1] if half > 0
                                     else nd.H - yc - p[1])
                        pts.append(x)
                    self._extrude(np.array(pts), "sector", out)
        return out
