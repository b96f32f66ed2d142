"""Extension of small near-core annulus embeddings to controlled global maps.

The working chart is the annulus S^1 x [-2, 2].  The inner sub-annulus is
|y| <= 1; its boundary circles sit at y = +1 and y = -1.  ``smooth_extend``
interpolates a small embedding defined near the inner sub-annulus to a
homeomorphism of the whole chart that is the identity near |y| = 2, without
trying to preserve area.  ``extend_annulus`` then repairs the area
distortion, which the interpolation confines to two thin horizontal bands,
by a per-square mass correction followed by a band-to-strip spread on each
half of the annulus, and finally cancels the leftover flux with a shear
whose flux is exactly the shearing amplitude.  ``extend_disk`` and
``extend_rectangle`` transport the annulus pipeline to a disk collar and to
a rectangle with identity ends.

Every stage keeps its displacement proportional to the input's
displacement; the returned reports carry the measured norms and ratios so
callers can regress the linear scaling directly.

Throughout, maps are extended by blending toward the identity across the
bands y in [1 - m*delta, 1 + m*delta] and the mirror band, where delta is
the input's C0 norm and m is the configurable ``inner_margin``.  The blend
interpolates between the input's image curves and horizontal circles, so it
is well defined exactly when those image curves are graphs over the base
circle; non-graph inputs are rejected rather than mishandled.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import (
    AreaConditionFailed,
    EndConditionFailed,
    GraphRestrictionViolated,
    TooLarge,
)
from .geometry_core import (
    Annulus,
    AnnulusRegion,
    Band,
    Curve,
    Disk,
    DiskRegion,
    RectRegion,
    SamplingPlan,
    c0_norm,
    horizontal_circle,
    signed_area_between,
)
from .maps import (
    AreaMap,
    Exactness,
    InverseStrategy,
    KinkLine,
    compose,
    identity_map,
    shear_psi_epsilon,
)
from .moser import (Density, SkeletonLine, pullback_density, skeleton_adjust,
                    square_area_adjust, strip_adjust)
from .obstructions import annulus_flux
from .profiles import DropProfile, PlateauBump, StepProfile

__all__ = [
    "smooth_extend",
    "extend_annulus",
    "extend_disk",
    "extend_rectangle",
]

#: Refuse inputs that move points farther than this many chart units.
DELTA_MAX = 0.05

#: Halfwidth of each blend band, in units of the input's C0 norm.
INNER_MARGIN = 6.0

#: The blend profile ramps over this fraction of the band, leaving flat
#: collars at both band edges so the glue is twice differentiable.
BLEND_FRACTION = 0.8


def _wrap_delta(dx, period):
    return dx - period * np.round(dx / period)


def _periodic_spline(xs, ts, vals, period):
    """Bicubic interpolant in (x, t) with ghost columns closing the x-seam.

    ``xs`` must be the uniform grid arange(n)/n * period; callers wrap
    evaluation abscissae into [0, period) so the ghost width of four
    columns always covers the stencil.
    """
    g = 4
    xs_ext = np.concatenate([xs[-g:] - period, xs, xs[:g] + period])
    vals_ext = np.concatenate([vals[-g:], vals, vals[:g]], axis=0)
    return RectBivariateSpline(xs_ext, ts, vals_ext, kx=3, ky=3, s=0)


class _BandTables:
    """Sampled description of the input's image curves over one band.

    For each height t in [center - b, center + b] the circle S^1 x {t}
    maps to a curve that must be a graph over the base circle.  The tables
    store the horizontal displacement u(x, t) of the image point and the
    graph height g(X, t) of the image curve over the image abscissa X,
    both as periodic splines, plus the blend profile running from 1 on the
    inner side of the band to 0 on the outer side.
    """

    def __init__(self, phi, chart, center, halfwidth, blend_fraction, n_x, n_t):
        period = chart.periods[0]
        b = halfwidth
        ts = np.linspace(center - b, center + b, n_t)
        xs = np.arange(n_x) * (period / n_x)
        gx, gt = np.meshgrid(xs, ts, indexing="ij")
        pts = np.column_stack([gx.ravel(), gt.ravel()])
        img = phi.evaluate(pts)
        X = (pts[:, 0] + _wrap_delta(img[:, 0] - pts[:, 0], period)).reshape(n_x, n_t)
        Y = img[:, 1].reshape(n_x, n_t)

        ok = np.all(np.diff(X, axis=0) > 0.0, axis=0) & (X[0] + period - X[-1] > 0.0)
        if not np.all(ok):
            t_bad = ts[int(np.argmin(ok))]
            raise GraphRestrictionViolated(
                f"image of the circle y = {t_bad:.6f} under {phi.name!r} is "
                "not a graph over the base circle"
            )

        du = X - gx
        dv = Y - gt
        self.center = float(center)
        self.t_lo = float(ts[0])
        self.t_hi = float(ts[-1])
        self.disp_max = float(np.max(np.hypot(du, dv)))
        self.column_disp = np.maximum(np.max(np.abs(du), axis=1),
                                      np.max(np.abs(dv), axis=1))
        self.xs = xs
        if center > 0:
            self.blend = DropProfile(center - blend_fraction * b,
                                     center + blend_fraction * b,
                                     kind="quintic")
        else:
            self.blend = StepProfile(center - blend_fraction * b,
                                     center + blend_fraction * b,
                                     kind="quintic")

        self.u_spline = _periodic_spline(xs, ts, du, period)

        # reindex each image curve by its own abscissa to get the graph
        # height over X; the curves are closed so a periodic cubic fit per
        # height keeps the resampling error far below the band scale
        G = np.empty_like(Y)
        for j in range(n_t):
            xr = np.append(X[:, j], X[0, j] + period)
            yr = np.append(Y[:, j], Y[0, j])
            cs = CubicSpline(xr, yr, bc_type="periodic")
            q = xr[0] + np.mod(xs - xr[0], period)
            G[:, j] = cs(q)
        self.g_spline = _periodic_spline(xs, ts, G, period)

        # the blended height map y -> y + blend(y) * (g(X, y) - y) is what
        # both the forward formula and the inverse solve foliate the band
        # with; it must be monotone in y for every X
        yq = np.linspace(self.t_lo, self.t_hi, 4 * n_t)
        beta = self.blend.value(yq)
        gq = self.g_spline(xs, yq, grid=True)
        vq = yq[None, :] + beta[None, :] * (gq - yq[None, :])
        if not np.all(np.diff(vq, axis=1) > 0.0):
            raise GraphRestrictionViolated(
                "the blended image curves do not foliate the band around "
                f"y = {center:g}; reduce the displacement or widen the "
                "blend band"
            )
        self.blended_disp = float(
            np.max(np.hypot(beta[None, :] * self.u_spline(xs, yq, grid=True),
                            vq - yq[None, :]))
        )

    def forward(self, pts, period):
        x = pts[:, 0]
        y = pts[:, 1]
        beta = self.blend.value(y)
        u = x + beta * self.u_spline.ev(np.mod(x, period), y)
        v = y + beta * (self.g_spline.ev(np.mod(u, period), y) - y)
        return np.column_stack([u, v])

    def edge_height(self, xw):
        """Graph height of the innermost band circle's image over x."""
        t_in = self.t_lo if self.center > 0 else self.t_hi
        return self.g_spline.ev(xw, np.full_like(xw, t_in))

    def inverse(self, pts, period):
        U = pts[:, 0]
        V = pts[:, 1]
        Uw = np.mod(U, period)
        lo = np.full_like(V, self.t_lo)
        hi = np.full_like(V, self.t_hi)
        for _ in range(55):
            mid = 0.5 * (lo + hi)
            beta = self.blend.value(mid)
            val = mid + beta * (self.g_spline.ev(Uw, mid) - mid)
            low = val < V
            lo = np.where(low, mid, lo)
            hi = np.where(low, hi, mid)
        y = 0.5 * (lo + hi)
        beta = self.blend.value(y)
        pad = self.disp_max + 1e-9
        xlo = U - pad
        xhi = U + pad
        for _ in range(55):
            xm = 0.5 * (xlo + xhi)
            g = xm + beta * self.u_spline.ev(np.mod(xm, period), y) - U
            neg = g < 0
            xlo = np.where(neg, xm, xlo)
            xhi = np.where(neg, xhi, xm)
        x = 0.5 * (xlo + xhi)
        return np.column_stack([x, y])


def _require_working_annulus(chart, op):
    if not isinstance(chart, Annulus) or chart.halfwidth < 2.0 - 1e-9:
        raise ValueError(
            f"{op} works on an annulus chart of halfwidth at least 2; "
            f"got {chart!r}"
        )
    return chart.periods[0]


def _check_identity_arc(phi, chart, tabs, arc, inner_hi, tol=1e-12):
    """Verify the input is the identity outside the declared x-arc."""
    period = chart.periods[0]
    x_lo, x_hi = float(arc[0]), float(arc[1])
    if not (0.0 <= x_lo < x_hi <= period):
        raise ValueError(f"identity arc {arc} must sit inside [0, {period:g}]")
    for tab in tabs:
        out = (tab.xs < x_lo) | (tab.xs > x_hi)
        if np.any(out):
            worst = float(np.max(tab.column_disp[out]))
            if worst > tol:
                raise ValueError(
                    f"input moves band points by {worst:.2e} outside the "
                    f"declared identity arc [{x_lo:g}, {x_hi:g}]"
                )
    xs_out = np.linspace(0.0, period, 257)
    xs_out = xs_out[(xs_out < x_lo) | (xs_out > x_hi)]
    if len(xs_out):
        ys = np.linspace(-inner_hi, inner_hi, 65)
        gx, gy = np.meshgrid(xs_out, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        disp = float(np.max(np.abs(phi.evaluate(pts) - pts)))
        if disp > tol:
            raise ValueError(
                f"input moves inner points by {disp:.2e} outside the "
                f"declared identity arc [{x_lo:g}, {x_hi:g}]"
            )


def smooth_extend(phi: AreaMap, delta: float, *,
                  inner_margin: float = INNER_MARGIN,
                  delta_max: float = DELTA_MAX,
                  blend_fraction: float = BLEND_FRACTION,
                  samples: tuple[int, int] = (1024, 65),
                  identity_arc: tuple[float, float] | None = None,
                  name: str | None = None) -> AreaMap:
    """Interpolate a small near-core embedding to the whole annulus.

    ``phi`` must be evaluable on a neighborhood of |y| <= 1 and move
    points by at most ``delta``.  The result agrees with ``phi`` exactly
    on |y| <= 1 - inner_margin*delta, is exactly the identity outside
    |y| <= 1 + inner_margin*delta, and displaces band points no farther
    than the blended image curves do; it does not preserve area.

    Inside each band the image circles of ``phi`` are interpolated with
    horizontal circles through the blended graph foliation; the
    construction therefore requires every image circle of the band to
    stay a graph over the base circle and raises
    ``GraphRestrictionViolated`` otherwise.  Displacements above
    ``delta_max`` raise ``TooLarge``.

    With ``identity_arc = (x_lo, x_hi)`` the input is checked to be the
    identity outside the arc and the result is pinned to the identity
    there, so maps supported in a quadrilateral extend to maps supported
    in the taller quadrilateral over the same arc.
    """
    period = _require_working_annulus(phi.chart, "smooth_extend")
    chart = phi.chart
    delta = float(delta)
    if delta < 0.0:
        raise ValueError("delta must be non-negative")
    if delta > delta_max:
        raise TooLarge(
            f"displacement {delta:.4g} exceeds the extension threshold "
            f"{delta_max:g}"
        )
    if delta < 1e-14:
        return identity_map(chart).with_report(
            {"delta": delta, "c0_norm": 0.0, "trivial": True})

    b = inner_margin * delta
    if 1.0 + b > chart.halfwidth - 1e-9 or b >= 0.5:
        raise TooLarge(
            f"blend bands of halfwidth {b:.4g} do not fit between the "
            "inner sub-annulus and the chart boundary"
        )

    n_x, n_t = samples
    tabs = (
        _BandTables(phi, chart, +1.0, b, blend_fraction, n_x, n_t),
        _BandTables(phi, chart, -1.0, b, blend_fraction, n_x, n_t),
    )
    disp = max(tab.disp_max for tab in tabs)
    if disp > delta * (1.0 + 1e-6) + 1e-12:
        raise ValueError(
            f"declared delta {delta:g} is below the sampled band "
            f"displacement {disp:.4g}"
        )

    inner_hi = 1.0 - b
    outer_hi = 1.0 + b

    def fwd(pts):
        y = pts[:, 1].copy()
        m_in = np.abs(y) <= inner_hi
        if np.any(m_in):
            pts[m_in] = phi.evaluate(pts[m_in])
        for tab in tabs:
            m = (y > tab.t_lo) & (y < tab.t_hi)
            if np.any(m):
                pts[m] = tab.forward(pts[m], period)
        return pts

    def inv(pts):
        y = pts[:, 1].copy()
        xw = np.mod(pts[:, 0], period)
        e_up = tabs[0].edge_height(xw)
        e_dn = tabs[1].edge_height(xw)
        m_in = (y <= e_up) & (y >= e_dn)
        if np.any(m_in):
            pts[m_in] = phi.inverse(pts[m_in])
        m_up = (y > e_up) & (y < outer_hi)
        if np.any(m_up):
            pts[m_up] = tabs[0].inverse(pts[m_up], period)
        m_dn = (y < e_dn) & (y > -outer_hi)
        if np.any(m_dn):
            pts[m_dn] = tabs[1].inverse(pts[m_dn], period)
        return pts

    band_disp = max(tab.blended_disp for tab in tabs)
    report = {
        "delta": delta,
        "band_halfwidth": b,
        "inner_margin": inner_margin,
        "band_displacement": band_disp,
        "c0_bound": max(delta, band_disp),
        "ratio": max(delta, band_disp) / delta,
        "trivial": False,
    }
    f = AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name or f"smooth_extend({phi.name})",
        support=Band(-outer_hi, outer_hi, "y", chart),
        provenance={"kind": "smooth_extend", "delta": delta,
                    "band_halfwidth": b},
        exactness=Exactness("numeric", 1e-10),
        inverse_strategy=InverseStrategy("analytic"),
        children=(phi,),
        report=report,
    )
    if identity_arc is not None:
        _check_identity_arc(phi, chart, tabs, identity_arc, inner_hi)
        region = RectRegion(float(identity_arc[0]), float(identity_arc[1]),
                            -outer_hi, outer_hi, chart)
        f = f.restricted_to(region, name=f.name).with_report(report)
    return f


# ---------------------------------------------------------------------------
# area repair on the full annulus


def _area_condition_residual(phi, chart, n):
    base = horizontal_circle(chart, 0.0, n)
    img = Curve(phi.evaluate(base.vertices), closed=True,
                period_class=(1, 0), chart=chart)
    return signed_area_between(base, img, chart)


def _strip_lattice_total(fn, period, delta, n_grid):
    """Total mass of ``fn`` in the exact band quadrature the spread uses."""
    xs = np.linspace(0.0, period, n_grid)
    zs = np.linspace(0.0, delta, n_grid)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    vals = np.asarray(fn(np.column_stack([gx.ravel(), gz.ravel()])),
                      dtype=float).reshape(n_grid, n_grid)
    cum = cumulative_trapezoid(vals, zs, axis=1, initial=0.0)
    return float(np.trapezoid(cum[:, -1], xs))


def _conjugated_strip_map(strip, chart, sign, y_edge, side, spread_top):
    """Relocate a strip map from the half-plane z >= 0 into a band.

    sign +1 reads z = y - y_edge (the correction spreads upward), sign -1
    reads z = y_edge - y (it spreads downward).  Points outside the
    active band pass through untouched, so the agreement and support
    guarantees of the surrounding pipeline stay exact.
    """
    lo, hi = ((y_edge, y_edge + spread_top) if sign > 0
              else (y_edge - spread_top, y_edge))
    active = Band(lo, hi, "y", chart)

    def conjugate(apply):
        def run(pts):
            m = active.contains(pts)
            if np.any(m):
                q = pts[m]
                q[:, 1] = sign * (q[:, 1] - y_edge)
                q = apply(q)
                q[:, 1] = y_edge + sign * q[:, 1]
                pts[m] = q
            return pts
        return run

    return AreaMap(
        chart=chart,
        fwd=conjugate(strip.evaluate),
        inv=conjugate(strip.inverse),
        name=f"band_spread({'+' if sign > 0 else '-'})",
        support=active,
        provenance={"kind": "band_spread", "edge": y_edge,
                    "orientation": sign},
        exactness=strip.exactness,
        inverse_strategy=InverseStrategy("analytic"),
        kinks=tuple(KinkLine("y", y_edge + sign * z)
                    for z in (0.0, side, 0.5)),
        children=(strip,),
    )


def _half_band_correction(f, chart, sign, side, nx_sq, band_halfwidth, *,
                          omega_shape, square_target, square_flow_steps,
                          strip_target, strip_grid, strip_flow_steps,
                          strip_equalize_shape, spread_top, skip_ratio):
    """Correction maps killing the pullback-density defect on one half.

    Returns (maps, report).  The defect of the smooth extension lives in
    the band of the given sign; a single row of squares recaptures the
    per-square masses, then a strip spread flattens the leftover
    plateau-bump density away from the band.  The composed maps pull the
    extension's density back to the reference on this half and are the
    identity outside the band-plus-spread region.
    """
    period = chart.periods[0]
    y0 = sign * 1.0 - 0.5 * side
    y1 = sign * 1.0 + 0.5 * side
    band_box = (0.0, period, y0, y1)
    fd_h = min(3e-5, band_halfwidth / 50.0)
    reference = Density.constant(chart, band_box, shape=(9, 9))
    omega = pullback_density(f, reference, box=band_box, shape=omega_shape,
                             h=fd_h, name="extension_pullback")
    defect = float(np.max(np.abs(omega.values - 1.0)))
    report = {
        "band": (y0, y1),
        "side": side,
        "squares": nx_sq,
        "density_defect": defect,
    }
    if defect < skip_ratio:
        report["skipped"] = True
        return [], report
    report["skipped"] = False

    # straighten the density on the vertical tiling lines first: the
    # per-square flows shut off on square edges only when the densities
    # already agree there, and otherwise the glued correction would slide
    # tangentially along the lattice
    lines = [SkeletonLine("v", i * side, y0, y1) for i in range(nx_sq)]
    h_sk = skeleton_adjust(omega, lines, bound=0.5 * side)
    omega = pullback_density(h_sk, omega, box=band_box, shape=omega_shape,
                             h=fd_h, name="straightened_pullback")
    report["skeleton"] = dict(h_sk.report or {})

    rho, h2 = square_area_adjust(omega, (y0, y1), side, target=square_target,
                                 flow_steps=square_flow_steps)
    sq = h2.report or {}
    report["square"] = {k: sq[k] for k in
                        ("A", "E2", "residual", "c0_norm", "sweeps")
                        if k in sq}

    sup_chi = float(sq.get("A", 0.0)) * float(sq.get("E2", 1.0))
    if side * (1.0 + sup_chi) >= spread_top * 0.999:
        raise TooLarge(
            f"the correction band of height {side:.4g} cannot spread "
            f"inside a strip of height {spread_top:g}"
        )

    y_edge = y0 if sign > 0 else y1

    def chi_raw(pts):
        z = pts[:, 1]
        inside = (z > 0.0) & (z < side)
        out = np.zeros(len(z))
        if np.any(inside):
            ys = y_edge + sign * z[inside]
            out[inside] = rho(np.column_stack([pts[inside, 0], ys])) - 1.0
        return out

    # the spread stage insists on mass neutrality in its own band
    # quadrature, while the square masses close against the tiling
    # lattice; cancel the (tiny) disagreement between the two quadratures
    # with an interior bump before handing chi over
    shape_z = PlateauBump(0.2 * side, 0.8 * side, ramp=0.15 * side,
                          kind="quintic")

    def bump(pts):
        return shape_z.value(pts[:, 1])

    total_raw = _strip_lattice_total(chi_raw, period, side, strip_grid)
    total_bump = _strip_lattice_total(bump, period, side, strip_grid)
    balance = total_raw / total_bump

    def chi(pts):
        return chi_raw(pts) - balance * bump(pts)

    report["mass_balance"] = {"raw": total_raw, "amplitude": balance}

    strip = strip_adjust(chi, side, chart, spread_top=spread_top,
                         residual_target=strip_target, n_grid=strip_grid,
                         flow_steps=strip_flow_steps,
                         equalize_shape=strip_equalize_shape)
    report["strip"] = dict(strip.report or {})
    spread = _conjugated_strip_map(strip, chart, sign, y_edge, side,
                                   spread_top)
    return [h_sk, h2, spread], report


def extend_annulus(phi: AreaMap, delta: float | None = None, *,
                   area_condition_check: bool = True,
                   area_tol: float = 1e-6,
                   flux_tol: float = 1e-8,
                   inner_margin: float = INNER_MARGIN,
                   delta_max: float = DELTA_MAX,
                   blend_fraction: float = BLEND_FRACTION,
                   samples: tuple[int, int] = (1024, 65),
                   row_factor: float = 2.2,
                   omega_shape: tuple[int, int] = (257, 129),
                   square_target: float = 5e-5,
                   square_flow_steps: int = 48,
                   strip_target: float = 5e-5,
                   strip_grid: int = 513,
                   strip_flow_steps: int = 48,
                   strip_equalize_shape: tuple[int, int] = (97, 97),
                   spread_top: float = 0.75,
                   skip_ratio: float = 1e-9,
                   shear_ramp: tuple[float, float] = (1.05, 1.95),
                   identity_arc: tuple[float, float] | None = None,
                   norm_plan: SamplingPlan | None = None,
                   name: str | None = None) -> AreaMap:
    """Extend a small area-preserving near-core embedding area-preservingly.

    The pipeline interpolates ``phi`` to the whole annulus, measures the
    pullback density of the interpolation (supported in the two blend
    bands), repairs it per half-annulus with a square row followed by a
    strip spread, and cancels the leftover flux with a shear supported in
    ``shear_ramp``.  The result agrees with ``phi`` on the reported inner
    region, is exactly the identity outside the reported support band,
    preserves area to the stage targets, and has C0 norm proportional to
    ``delta``; the report carries the measured ratio.

    When ``area_condition_check`` is set, the signed area between the
    central circle y = 0 and its image must vanish within ``area_tol``;
    otherwise no area-preserving extension exists and
    ``AreaConditionFailed`` is raised.  ``delta`` defaults to the sampled
    C0 norm of ``phi``.  With ``identity_arc`` the whole construction is
    confined to the arc (no shear is applied; arc-supported inputs fix
    the reference arc, so their flux vanishes identically) and
    quadrilateral-supported inputs stay quadrilateral.
    """
    period = _require_working_annulus(phi.chart, "extend_annulus")
    chart = phi.chart
    if delta is None:
        delta = c0_norm(phi, plan=norm_plan or SamplingPlan(256, 256))
    delta = float(delta)
    if delta < 1e-14:
        return identity_map(chart).with_report({
            "delta": delta, "c0_norm": 0.0, "ratio": 0.0, "flux": 0.0,
            "trivial": True,
        })
    if delta > delta_max:
        raise TooLarge(
            f"displacement {delta:.4g} exceeds the extension threshold "
            f"{delta_max:g}"
        )

    area_report = None
    if area_condition_check:
        a1 = _area_condition_residual(phi, chart, 2048)
        a2 = _area_condition_residual(phi, chart, 4096)
        area_report = {"residual": a2, "quadrature_gap": abs(a2 - a1)}
        if abs(a2) > area_tol:
            raise AreaConditionFailed(
                f"signed area between the central circle and its image is "
                f"{a2:.3e} (tolerance {area_tol:g}); the input admits no "
                "area-preserving extension"
            )

    f = smooth_extend(phi, delta, inner_margin=inner_margin,
                      delta_max=delta_max, blend_fraction=blend_fraction,
                      samples=samples, identity_arc=identity_arc)

    b = inner_margin * delta
    nx_sq = int(math.floor(period / (row_factor * b)))
    if nx_sq < 3:
        raise TooLarge(
            f"blend bands of halfwidth {b:.4g} leave no room for the "
            "square correction row; the pipeline needs a smaller input"
        )
    side = period / nx_sq

    corrections = []
    halves = {}
    for label, sign in (("upper", 1.0), ("lower", -1.0)):
        maps_half, rep_half = _half_band_correction(
            f, chart, sign, side, nx_sq, b,
            omega_shape=omega_shape, square_target=square_target,
            square_flow_steps=square_flow_steps, strip_target=strip_target,
            strip_grid=strip_grid, strip_flow_steps=strip_flow_steps,
            strip_equalize_shape=strip_equalize_shape,
            spread_top=spread_top, skip_ratio=skip_ratio)
        corrections.extend(maps_half)
        halves[label] = rep_half

    psi0 = compose([f] + corrections) if corrections else f
    flux_raw = annulus_flux(psi0, chart, tol=1e-10)

    shear = None
    if identity_arc is None:
        if abs(flux_raw) > 1e-13:
            profile = StepProfile(shear_ramp[0], shear_ramp[1],
                                  kind="quintic")
            shear = shear_psi_epsilon(-flux_raw, profile, chart)
    elif abs(flux_raw) > 10.0 * flux_tol:
        raise ValueError(
            f"arc-supported input produced flux {flux_raw:.3e}; expected "
            "zero without a correction"
        )

    pieces = ([shear] if shear is not None else []) + [f] + corrections
    psi_raw = compose(pieces) if len(pieces) > 1 else f

    y_corr = 1.0 - 0.5 * side + spread_top
    hi_support = max(1.0 + b, y_corr)
    if shear is not None:
        hi_support = max(hi_support, shear_ramp[1])
    hi_support = min(hi_support + 1e-9, chart.halfwidth - 1e-6)
    if identity_arc is not None:
        region = RectRegion(float(identity_arc[0]), float(identity_arc[1]),
                            -hi_support, hi_support, chart)
    else:
        region = Band(-hi_support, hi_support, "y", chart)
    psi = psi_raw.restricted_to(
        region, name=name or f"extend_annulus({phi.name})")

    flux_post = annulus_flux(psi, chart, tol=1e-10) if shear is not None \
        else flux_raw

    # audits: agreement on the pristine inner region, leakage of the
    # unrestricted composition outside the declared support (the
    # restriction then makes the support exact), measured norm ratio
    agree_hw = (1.0 - 0.5 * side) - 1e-9
    gx, gy = np.meshgrid(np.arange(144) * (period / 144.0),
                         np.linspace(-agree_hw, agree_hw, 72), indexing="ij")
    agree_pts = np.column_stack([gx.ravel(), gy.ravel()])
    agree_max = float(np.max(chart.distance(psi.evaluate(agree_pts),
                                            phi.evaluate(agree_pts))))

    ys_out = np.concatenate([
        np.linspace(hi_support + 1e-6, chart.halfwidth, 4),
        -np.linspace(hi_support + 1e-6, chart.halfwidth, 4),
    ])
    gx, gy = np.meshgrid(np.arange(256) * (period / 256.0), ys_out,
                         indexing="ij")
    out_pts = np.column_stack([gx.ravel(), gy.ravel()])
    support_max = float(np.max(np.abs(psi.evaluate(out_pts) - out_pts)))
    support_leak = float(np.max(np.abs(psi_raw.evaluate(out_pts) - out_pts)))

    cn = c0_norm(psi, plan=norm_plan or SamplingPlan(256, 256))
    report = {
        "delta": delta,
        "c0_norm": cn,
        "ratio": cn / delta,
        "flux_raw": flux_raw,
        "flux": flux_post,
        "shear_eps": -flux_raw if shear is not None else 0.0,
        "area_condition": area_report,
        "agreement": {"max": agree_max, "halfwidth": agree_hw,
                      "shrink_margin": (1.0 - agree_hw) / delta,
                      "samples": len(agree_pts)},
        "support": {"max": support_max, "leak": support_leak,
                    "halfwidth": hi_support, "samples": len(out_pts)},
        "band_halfwidth": b,
        "side": side,
        "squares_per_row": nx_sq,
        "halves": halves,
        "trivial": False,
    }
    return psi.with_report(report)


# ---------------------------------------------------------------------------
# disk corollary


def _disk_radius(pts):
    return np.hypot(pts[:, 0], pts[:, 1])


def extend_disk(phi: AreaMap, radii: tuple[float, float, float], *,
                delta: float | None = None,
                collar_fraction: float = 0.5,
                norm_plan: SamplingPlan | None = None,
                name: str | None = None,
                **annulus_options) -> AreaMap:
    """Extend an embedding of the middle disk to an area-preserving map.

    ``radii = (r1, r2, r3)`` are the radii of three concentric disks
    around the origin of the chart.  A collar around the middle circle is
    identified with the working annulus by an area-scaling change of
    coordinates, the annulus pipeline extends the conjugated map to a map
    supported in the collar, and the result is that map's inverse
    composed with ``phi`` on the middle disk, glued with the identity
    outside.  It agrees with ``phi`` on the inner disk, is supported
    inside the outer disk, and preserves area; the report carries the
    plane-to-collar norm scale and the measured norm ratio.
    """
    chart = phi.chart
    if not isinstance(chart, Disk):
        raise ValueError("extend_disk works on a disk chart")
    r1, r2, r3 = (float(r) for r in radii)
    if not (0.0 < r1 < r2 < r3 <= chart.radius + 1e-12):
        raise ValueError(f"radii {radii} must be ordered inside the chart")

    if delta is None:
        delta = c0_norm(phi, plan=norm_plan or SamplingPlan(256, 256))
    delta = float(delta)
    if delta < 1e-14:
        return identity_map(chart).with_report(
            {"delta": delta, "c0_norm": 0.0, "ratio": 0.0, "trivial": True})

    # collar rho in [r_in, r_out] around the middle circle; the
    # coordinate y = (rho^2 - r2^2) / w2 sends it to [-2, 2] and scales
    # area by the constant 1 / (pi * w2)
    dr = collar_fraction * min(r2 - r1, r3 - r2)
    w2 = 0.5 * dr * (2.0 * r2 + dr)
    if 2.0 * w2 >= r2 * r2:
        raise ValueError("collar too wide: the inner collar circle would "
                         "collapse; reduce collar_fraction")
    r_in = math.sqrt(r2 * r2 - 2.0 * w2)
    r_out = math.sqrt(r2 * r2 + 2.0 * w2)
    if r_in <= r1 + delta + 0.05 * dr:
        raise ValueError(
            f"collar inner radius {r_in:.4g} touches the image of the "
            f"inner disk (r1 + delta = {r1 + delta:.4g})"
        )

    ann_chart = Annulus(halfwidth=2.0, period_x=1.0)
    two_pi = 2.0 * math.pi

    def to_collar(pts):
        x = np.arctan2(pts[:, 1], pts[:, 0]) / two_pi
        y = (pts[:, 0] ** 2 + pts[:, 1] ** 2 - r2 * r2) / w2
        return np.column_stack([np.mod(x, 1.0), y])

    def from_collar(pts):
        rho = np.sqrt(r2 * r2 + w2 * pts[:, 1])
        ang = two_pi * pts[:, 0]
        return np.column_stack([rho * np.cos(ang), rho * np.sin(ang)])

    def conjugate(apply):
        def run(pts):
            q = to_collar(apply(from_collar(pts)))
            q[:, 0] = pts[:, 0] + _wrap_delta(q[:, 0] - pts[:, 0], 1.0)
            return q
        return run

    phi_a = AreaMap(
        chart=ann_chart,
        fwd=conjugate(phi.evaluate),
        inv=conjugate(phi.inverse),
        name=f"collar({phi.name})",
        provenance={"kind": "collar_conjugate", "w2": w2, "r2": r2},
        exactness=Exactness("numeric"),
        inverse_strategy=InverseStrategy("analytic"),
        children=(phi,),
    )
    delta_a = c0_norm(phi_a, plan=norm_plan or SamplingPlan(256, 256))
    psi_a = extend_annulus(phi_a, delta_a, norm_plan=norm_plan,
                           **annulus_options)

    sup_hw = (psi_a.report or {}).get("support", {}).get("halfwidth", 2.0)
    ring = AnnulusRegion(0.0, 0.0, math.sqrt(r2 * r2 - w2 * sup_hw),
                         math.sqrt(r2 * r2 + w2 * sup_hw), chart)

    def collar_apply(apply):
        def run(pts):
            m = ring.contains(pts)
            if np.any(m):
                pts[m] = from_collar(apply(to_collar(pts[m])))
            return pts
        return run

    h = AreaMap(
        chart=chart,
        fwd=collar_apply(psi_a.evaluate),
        inv=collar_apply(psi_a.inverse),
        name="collar_extension",
        support=ring,
        provenance={"kind": "collar_extension"},
        exactness=psi_a.exactness,
        inverse_strategy=InverseStrategy("analytic"),
        children=(psi_a,),
    )

    def fwd(pts):
        m = _disk_radius(pts) <= r2
        if np.any(m):
            pts[m] = h.inverse(phi.evaluate(pts[m]))
        return pts

    def inv(pts):
        cand = phi.inverse(h.evaluate(pts))
        m = _disk_radius(cand) <= r2
        return np.where(m[:, None], cand, pts)

    psi = AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name or f"extend_disk({phi.name})",
        support=DiskRegion(0.0, 0.0, r_out, chart),
        provenance={"kind": "extend_disk", "radii": (r1, r2, r3)},
        exactness=Exactness("numeric"),
        inverse_strategy=InverseStrategy("analytic"),
        children=(phi, h),
    )

    # audits
    gq = np.linspace(-r1, r1, 104)
    gx, gy = np.meshgrid(gq, gq, indexing="ij")
    inner = np.column_stack([gx.ravel(), gy.ravel()])
    inner = inner[_disk_radius(inner) <= r1]
    agree_max = float(np.max(np.abs(psi.evaluate(inner)
                                    - phi.evaluate(inner))))

    thetas = np.linspace(0.0, two_pi, 257)[:-1]
    rads = np.linspace(r_out + 1e-9, r3, 5)
    gt, gr = np.meshgrid(thetas, rads, indexing="ij")
    outer = np.column_stack([(gr * np.cos(gt)).ravel(),
                             (gr * np.sin(gt)).ravel()])
    support_max = float(np.max(np.abs(psi.evaluate(outer) - outer)))

    cn = c0_norm(psi, plan=norm_plan or SamplingPlan(256, 256))
    report = {
        "delta": delta,
        "delta_collar": delta_a,
        "norm_scale": delta_a / delta,
        "collar": {"r_in": r_in, "r2": r2, "r_out": r_out, "w2": w2},
        "c0_norm": cn,
        "ratio": cn / delta,
        "agreement": {"max": agree_max, "radius": r1, "samples": len(inner)},
        "support": {"max": support_max, "radius": r_out,
                    "samples": len(outer)},
        "annulus": psi_a.report,
        "trivial": False,
    }
    return psi.with_report(report)


# ---------------------------------------------------------------------------
# rectangle corollary


def extend_rectangle(phi: AreaMap, length: float,
                     halfheights: tuple[float, float, float], *,
                     delta: float | None = None,
                     area_condition_check: bool = True,
                     area_tol: float = 1e-6,
                     end_margin_fraction: float = 0.04,
                     arc: tuple[float, float] = (0.125, 0.875),
                     norm_plan: SamplingPlan | None = None,
                     name: str | None = None,
                     **annulus_options) -> AreaMap:
    """Extend a rectangle embedding with identity ends area-preservingly.

    The rectangles are [0, length] x [-c, c] for the three half-heights
    ``c1 < c2 < c3``.  The tallest one is identified with a quadrilateral
    over an arc of the working annulus, the annulus pipeline runs in its
    arc-confined mode, and the result is pulled back; it agrees with
    ``phi`` on the smallest rectangle and is supported inside the
    tallest.

    ``phi`` must be the identity near the vertical ends
    (``EndConditionFailed`` otherwise) and must sweep zero signed area
    across the horizontal center fiber (``AreaConditionFailed``
    otherwise); the middle rectangle must be tall enough that the inner
    sub-annulus lands inside it, which needs 2*c2 > 1.05*c3.
    """
    chart = phi.chart
    R = float(length)
    c1, c2, c3 = (float(c) for c in halfheights)
    if not (0.0 < c1 < c2 < c3):
        raise ValueError(f"half-heights {halfheights} must be increasing")
    if 2.0 * c2 <= 1.05 * c3:
        raise ValueError(
            "middle rectangle too thin for the annulus identification: "
            f"need 2*c2 > 1.05*c3, got c2 = {c2:g}, c3 = {c3:g}"
        )
    x_lo, x_hi = (float(a) for a in arc)
    if not (0.0 < x_lo < x_hi < 1.0):
        raise ValueError(f"arc {arc} must sit strictly inside the circle")

    # end condition: the input must freeze two strips at the vertical ends
    we = end_margin_fraction * R
    ys = np.linspace(-c2, c2, 129)
    for x0s, x1s in ((0.0, we), (R - we, R)):
        gx, gy = np.meshgrid(np.linspace(x0s, x1s, 33), ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        disp = float(np.max(np.abs(phi.evaluate(pts) - pts)))
        if disp > 1e-12:
            raise EndConditionFailed(
                f"input moves points by {disp:.2e} within {we:g} of the "
                "vertical ends"
            )

    if area_condition_check:
        xs = np.linspace(0.0, R, 4097)
        fiber = Curve(np.column_stack([xs, np.zeros_like(xs)]),
                      closed=False, chart=chart)
        img = Curve(phi.evaluate(fiber.vertices), closed=False, chart=chart)
        swept = signed_area_between(fiber, img, chart)
        if abs(swept) > area_tol:
            raise AreaConditionFailed(
                f"signed area between the center fiber and its image is "
                f"{swept:.3e} (tolerance {area_tol:g}); the input admits "
                "no area-preserving extension"
            )

    # affine identification of the tall rectangle with the quadrilateral
    # (x_lo, x_hi) x [-2, 2]
    sx = (x_hi - x_lo) / R
    sy = 2.0 / c3

    def to_arc(pts):
        return np.column_stack([x_lo + sx * pts[:, 0], sy * pts[:, 1]])

    def from_arc(pts):
        return np.column_stack([(pts[:, 0] - x_lo) / sx, pts[:, 1] / sy])

    ann_chart = Annulus(halfwidth=2.0, period_x=1.0)
    arc_region = RectRegion(x_lo, x_hi, -2.0, 2.0, ann_chart)

    def conjugate(apply):
        def run(pts):
            xw = np.mod(pts[:, 0], 1.0)
            m = (xw >= x_lo) & (xw <= x_hi)
            if np.any(m):
                q = np.column_stack([xw[m], pts[m, 1]])
                q = to_arc(apply(from_arc(q)))
                q[:, 0] = pts[m, 0] + (q[:, 0] - xw[m])
                pts[m] = q
            return pts
        return run

    phi_a = AreaMap(
        chart=ann_chart,
        fwd=conjugate(phi.evaluate),
        inv=conjugate(phi.inverse),
        name=f"quadrilateral({phi.name})",
        support=arc_region,
        provenance={"kind": "rectangle_conjugate", "length": R,
                    "halfheights": (c1, c2, c3)},
        exactness=Exactness("numeric"),
        inverse_strategy=InverseStrategy("analytic"),
        children=(phi,),
    )
    delta_a = c0_norm(phi_a, plan=norm_plan or SamplingPlan(256, 256))
    psi_a = extend_annulus(phi_a, delta_a, area_condition_check=False,
                           identity_arc=(x_lo, x_hi), norm_plan=norm_plan,
                           **annulus_options)

    sup_hw = (psi_a.report or {}).get("support", {}).get("halfwidth", 2.0)
    plane_hi = min(c3, sup_hw / sy)
    active = RectRegion(0.0, R, -plane_hi, plane_hi, chart)

    def plane_apply(apply):
        def run(pts):
            m = active.contains(pts)
            if np.any(m):
                pts[m] = from_arc(apply(to_arc(pts[m])))
            return pts
        return run

    if delta is None:
        delta = c0_norm(phi, plan=norm_plan or SamplingPlan(256, 256))
    delta = float(delta)

    psi = AreaMap(
        chart=chart,
        fwd=plane_apply(psi_a.evaluate),
        inv=plane_apply(psi_a.inverse),
        name=name or f"extend_rectangle({phi.name})",
        support=active,
        provenance={"kind": "extend_rectangle", "length": R,
                    "halfheights": (c1, c2, c3)},
        exactness=Exactness("numeric"),
        inverse_strategy=InverseStrategy("analytic"),
        children=(phi, psi_a),
    )

    # audits
    gx, gy = np.meshgrid(np.linspace(0.0, R, 128),
                         np.linspace(-c1, c1, 96), indexing="ij")
    inner = np.column_stack([gx.ravel(), gy.ravel()])
    agree_max = float(np.max(np.abs(psi.evaluate(inner)
                                    - phi.evaluate(inner))))

    frame_x = np.linspace(-0.2 * R, 1.2 * R, 128)
    frame_y = np.linspace(plane_hi + 1e-9, 1.2 * c3, 4)
    gx, gy = np.meshgrid(frame_x, np.concatenate([frame_y, -frame_y]),
                         indexing="ij")
    outer = np.column_stack([gx.ravel(), gy.ravel()])
    sides_x = np.concatenate([np.linspace(-0.2 * R, -1e-9, 32),
                              np.linspace(R + 1e-9, 1.2 * R, 32)])
    gx, gy = np.meshgrid(sides_x, np.linspace(-c3, c3, 48), indexing="ij")
    outer = np.vstack([outer, np.column_stack([gx.ravel(), gy.ravel()])])
    support_max = float(np.max(np.abs(psi.evaluate(outer) - outer)))

    cn = c0_norm(psi, plan=norm_plan or SamplingPlan(256, 256))
    report = {
        "delta": delta,
        "delta_annulus": delta_a,
        "norm_scale": delta_a / max(delta, 1e-300),
        "c0_norm": cn,
        "ratio": cn / max(delta, 1e-300),
        "agreement": {"max": agree_max, "halfheight": c1,
                      "samples": len(inner)},
        "support": {"max": support_max, "halfheight": plane_hi,
                    "samples": len(outer)},
        "annulus": psi_a.report,
        "trivial": False,
    }
    return psi.with_report(report)
