"""Density equalization with C0 control.

The central operation turns a pair of equal-mass densities into an area
map pulling one back to the other, built from divergence-solving vector
fields whose time-one flow displacement is controlled by the density
defect.  On top of it sit the strip spread (pushing a thin concentration
of density across a band), the per-square area adjustment, and the
skeleton adjustment (fixing the pullback density exactly on a grid of
lines).

Densities are ratios to the chart's reference form dx dy, sampled on
rectilinear grids with spline evaluation off-grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator, RectBivariateSpline

from .errors import (
    DegenerateDensity,
    FaceMassMismatch,
    FlowDiverged,
    MassMismatch,
    RatioOutOfRange,
    TubeTooThin,
)
from .geometry_core import Band, Chart, RectRegion, UnionRegion, as_points
from .maps import (
    AreaMap,
    Exactness,
    InverseStrategy,
    KinkLine,
    _integrate_midpoint,
    compose,
    identity_map,
)
from .profiles import PlateauBump, StepProfile


# ---------------------------------------------------------------------------
# densities


class Density:
    """Positive density on a box, grid-sampled, spline-evaluated.

    ``values[i, j]`` is the density at ``(xs[i], ys[j])``; the total mass
    is the 2D trapezoid integral of the grid, by definition.  When the
    box spans a full period of the chart, evaluation wraps the first
    coordinate.
    """

    def __init__(self, chart: Chart, box: tuple[float, float, float, float],
                 values: np.ndarray, name: str = "density"):
        self.chart = chart
        self.box = tuple(float(b) for b in box)
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise ValueError("density grid must be at least 2x2")
        if not np.all(np.isfinite(vals)):
            raise DegenerateDensity("density grid has non-finite entries")
        if np.min(vals) <= 0.0:
            raise DegenerateDensity(
                f"density must be positive; min value {np.min(vals):.3e}"
            )
        self.values = vals
        self.name = name
        x0, x1, y0, y1 = self.box
        self.xs = np.linspace(x0, x1, vals.shape[0])
        self.ys = np.linspace(y0, y1, vals.shape[1])
        kx = min(3, vals.shape[0] - 1)
        ky = min(3, vals.shape[1] - 1)
        self._spline = RectBivariateSpline(self.xs, self.ys, vals, kx=kx, ky=ky)
        self.total_mass = float(
            np.trapezoid(np.trapezoid(vals, self.ys, axis=1), self.xs)
        )

    def __call__(self, pts) -> np.ndarray:
        pts = as_points(pts)
        x = pts[:, 0]
        px = self.chart.periods[0]
        x0, x1, _, _ = self.box
        if px is not None and abs((x1 - x0) - px) < 1e-12:
            x = x0 + np.mod(x - x0, px)
        return self._spline.ev(x, pts[:, 1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def scaled(self, factor: float, name: str | None = None) -> "Density":
        return Density(self.chart, self.box, self.values * factor,
                       name or self.name)

    def separable_axis(self) -> str | None:
        """'y' if the density varies only with y, 'x' if only with x."""
        scale = float(np.max(self.values))
        if np.max(np.ptp(self.values, axis=0)) <= 1e-12 * scale:
            return "y"
        if np.max(np.ptp(self.values, axis=1)) <= 1e-12 * scale:
            return "x"
        return None

    @staticmethod
    def constant(chart: Chart, box, shape=(65, 65), value: float = 1.0) -> "Density":
        return Density(chart, box, np.full(shape, float(value)), name="reference")

    @staticmethod
    def from_function(chart: Chart, box, fn, shape=(129, 129),
                      name: str = "density") -> "Density":
        xs = np.linspace(box[0], box[1], shape[0])
        ys = np.linspace(box[2], box[3], shape[1])
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        vals = np.asarray(fn(np.column_stack([gx.ravel(), gy.ravel()])), dtype=float)
        return Density(chart, box, vals.reshape(shape), name=name)


def _grid_points(box, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs = np.linspace(box[0], box[1], shape[0])
    ys = np.linspace(box[2], box[3], shape[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return xs, ys, np.column_stack([gx.ravel(), gy.ravel()])


def _fd_deriv(m: AreaMap, pts: np.ndarray, h: float, axis: int,
              box, period) -> np.ndarray:
    """d(m)/d(axis) by finite differences, aware of the box geometry.

    Maps built on a box are the identity outside it, so a centered stencil
    straddling the box edge measures the mask instead of the map; points
    within h of a hard edge use a second-order one-sided stencil pointing
    inward.  When the box spans a full period the edge is a seam, not a
    boundary: stencil points wrap around instead.
    """
    e = np.zeros_like(pts)
    e[:, axis] = h

    def ev(q):
        if period is None:
            return m.evaluate(q)
        lo = box[0] if axis == 0 else box[2]
        wrapped = q.copy()
        wrapped[:, axis] = lo + np.mod(q[:, axis] - lo, period)
        out = m.evaluate(wrapped)
        out[:, axis] += q[:, axis] - wrapped[:, axis]
        return out

    if box is None or period is not None:
        return (ev(pts + e) - ev(pts - e)) / (2 * h)
    lo, hi = (box[0], box[1]) if axis == 0 else (box[2], box[3])
    bias = np.zeros(len(pts))
    bias[pts[:, axis] > hi - h] = -1.0
    bias[pts[:, axis] < lo + h] = 1.0
    out = np.empty_like(pts)
    cen = bias == 0.0
    if np.any(cen):
        out[cen] = (m.evaluate(pts[cen] + e[cen])
                    - m.evaluate(pts[cen] - e[cen])) / (2 * h)
    sid = ~cen
    if np.any(sid):
        s = bias[sid][:, None]
        p = pts[sid]
        es = np.zeros_like(p)
        es[:, axis] = h
        f0 = m.evaluate(p)
        f1 = m.evaluate(p + s * es)
        f2 = m.evaluate(p + 2 * s * es)
        out[sid] = (4.0 * f1 - 3.0 * f0 - f2) / (2 * h * s)
    return out


def _fd_det(m: AreaMap, pts: np.ndarray, h: float, box=None,
            chart: Chart | None = None) -> np.ndarray:
    periods = (None, None)
    if box is not None and chart is not None:
        px, py = chart.periods
        periods = (
            px if px is not None and abs((box[1] - box[0]) - px) < 1e-12 else None,
            py if py is not None and abs((box[3] - box[2]) - py) < 1e-12 else None,
        )
    dx = _fd_deriv(m, pts, h, 0, box, periods[0])
    dy = _fd_deriv(m, pts, h, 1, box, periods[1])
    return dx[:, 0] * dy[:, 1] - dy[:, 0] * dx[:, 1]


def pullback_density(m: AreaMap, base: Density, box=None, shape=None,
                     h: float = 3e-5, name: str | None = None) -> Density:
    """Grid-sampled pullback density det Dm * (base o m)."""
    box = box or base.box
    shape = shape or base.shape
    _, _, pts = _grid_points(box, shape)
    det = _fd_det(m, pts, h, box=box, chart=base.chart)
    vals = det * base(m.evaluate(pts))
    return Density(base.chart, box, vals.reshape(shape),
                   name=name or f"pullback({base.name})")


def pullback_residual(m: AreaMap, w1: Density, w2: Density, n: int = 64,
                      h: float = 3e-5) -> float:
    """max |det Dm * w2(m(x)) - w1(x)| / w1(x) over an n x n interior grid."""
    x0, x1, y0, y1 = w1.box
    xs = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
    ys = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    det = _fd_det(m, pts, h, box=w1.box, chart=w1.chart)
    got = det * w2(m.evaluate(pts))
    want = w1(pts)
    return float(np.max(np.abs(got - want) / want))


# ---------------------------------------------------------------------------
# 1D cumulative-mass transport


def fiber_equalize_1d(coords: np.ndarray, g1: np.ndarray, g2: np.ndarray):
    """Monotone transport T with T'(y) * g2(T(y)) = g1(y), fixing the ends.

    T is the composition of cumulative-mass functions G2^{-1} o G1.  The
    masses of g1 and g2 over the interval must agree to 1e-8 relative;
    G1 is rescaled to close the gap exactly so T fixes the right end.
    Returns (T, T', T_inverse) as vectorized callables.
    """
    coords = np.asarray(coords, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    if np.min(g1) <= 0 or np.min(g2) <= 0:
        raise DegenerateDensity("1d densities must be positive")
    G1 = np.concatenate([[0.0], cumulative_trapezoid(g1, coords)])
    G2 = np.concatenate([[0.0], cumulative_trapezoid(g2, coords)])
    m1, m2 = G1[-1], G2[-1]
    if abs(m1 - m2) > 1e-8 * max(abs(m1), abs(m2)):
        raise MassMismatch(f"1d masses differ: {m1:.12g} vs {m2:.12g}")
    G1 = G1 * (m2 / m1)
    fwd_cum = PchipInterpolator(coords, G1)
    inv_cum = PchipInterpolator(G2, coords)
    bwd_cum = PchipInterpolator(coords, G2)
    fwd_inv = PchipInterpolator(G1, coords)
    d1 = PchipInterpolator(coords, g1)
    d2 = PchipInterpolator(coords, g2)

    def T(y):
        return inv_cum(np.clip(fwd_cum(np.asarray(y, dtype=float)), 0.0, m2))

    def Tp(y):
        y = np.asarray(y, dtype=float)
        return d1(y) / d2(T(y))

    def Tinv(y):
        return fwd_inv(np.clip(bwd_cum(np.asarray(y, dtype=float)), 0.0, m2))

    return T, Tp, Tinv


# ---------------------------------------------------------------------------
# the Moser flow on a box


def _is_periodic_x(chart: Chart, box) -> bool:
    px = chart.periods[0]
    return px is not None and abs((box[1] - box[0]) - px) < 1e-12


class _GridField:
    """Divergence solver: w = (u, v) with div w = sigma and w = 0 on the box edges.

    v is the fiberwise primitive of (sigma - m(x) q(y)); u = M(x) q(y)
    carries the column-mass imbalance m with a fixed bump profile q that
    vanishes at the fiber ends.  sigma is mean-adjusted so the cumulative
    sums close exactly; when the box spans a full period in x the splines
    get wrapped ghost columns.
    """

    def __init__(self, xs, ys, sigma, periodic_x: bool):
        self.periodic_x = periodic_x
        self.x0, self.x1 = float(xs[0]), float(xs[-1])
        area = (xs[-1] - xs[0]) * (ys[-1] - ys[0])
        total = np.trapezoid(np.trapezoid(sigma, ys, axis=1), xs)
        sigma = sigma - total / area
        q_raw = PlateauBump(ys[0], ys[-1], ramp=0.25 * (ys[-1] - ys[0])).value(ys)
        q = q_raw / np.trapezoid(q_raw, ys)
        m = np.trapezoid(sigma, ys, axis=1)
        v = cumulative_trapezoid(sigma - m[:, None] * q[None, :], ys,
                                 axis=1, initial=0.0)
        M = np.concatenate([[0.0], cumulative_trapezoid(m, xs)])
        u = M[:, None] * q[None, :]
        ky = min(3, len(ys) - 1)
        if periodic_x:
            period = xs[-1] - xs[0]
            ghosts = max(4, len(xs) // 4)
            left = xs[-1 - ghosts:-1] - period
            right = xs[1:1 + ghosts] + period
            xs_ext = np.concatenate([left, xs, right])
            u = np.vstack([u[-1 - ghosts:-1], u, u[1:1 + ghosts]])
            v = np.vstack([v[-1 - ghosts:-1], v, v[1:1 + ghosts]])
            self._u = RectBivariateSpline(xs_ext, ys, u, kx=3, ky=ky)
            self._v = RectBivariateSpline(xs_ext, ys, v, kx=3, ky=ky)
        else:
            kx = min(3, len(xs) - 1)
            self._u = RectBivariateSpline(xs, ys, u, kx=kx, ky=ky)
            self._v = RectBivariateSpline(xs, ys, v, kx=kx, ky=ky)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        if self.periodic_x:
            x = self.x0 + np.mod(x - self.x0, self.x1 - self.x0)
        return np.column_stack([self._u.ev(x, pts[:, 1]),
                                self._v.ev(x, pts[:, 1])])


def _moser_flow_map(chart: Chart, box, xs, ys, rho_a: np.ndarray,
                    rho_b: np.ndarray, steps: int, name: str) -> AreaMap:
    """Time-one map of the interpolation flow, aiming at f*(rho_b) = rho_a."""
    periodic = _is_periodic_x(chart, box)
    field_w = _GridField(xs, ys, rho_a - rho_b, periodic)
    kx = min(3, len(xs) - 1)
    ky = min(3, len(ys) - 1)
    sp_a = RectBivariateSpline(xs, ys, rho_a, kx=kx, ky=ky)
    sp_b = RectBivariateSpline(xs, ys, rho_b, kx=kx, ky=ky)
    x0, x1 = float(xs[0]), float(xs[-1])

    def field(t, pts):
        x = pts[:, 0]
        if periodic:
            x = x0 + np.mod(x - x0, x1 - x0)
        rho_t = (1.0 - t) * sp_a.ev(x, pts[:, 1]) + t * sp_b.ev(x, pts[:, 1])
        return field_w(pts) / rho_t[:, None]

    region = RectRegion(*box, chart=chart)

    def fwd(pts):
        mask = region.contains(pts)
        if np.any(mask):
            pts[mask] = _integrate_midpoint(field, pts[mask].copy(), 0.0, 1.0, steps)
        return pts

    def inv(pts):
        mask = region.contains(pts)
        if np.any(mask):
            pts[mask] = _integrate_midpoint(field, pts[mask].copy(), 1.0, 0.0, steps)
        return pts

    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name,
        support=region,
        provenance={"kind": "moser_flow", "box": list(box), "steps": steps},
        exactness=Exactness("numeric"),
    )


# ---------------------------------------------------------------------------
# equalization


def _check_boundary_agreement(w1: Density, w2: Density, tol: float):
    periodic = _is_periodic_x(w1.chart, w1.box)
    scale = float(np.max(w1.values))
    edges = [("bottom", w1.values[:, 0], w2.values[:, 0]),
             ("top", w1.values[:, -1], w2.values[:, -1])]
    if not periodic:
        edges += [("left", w1.values[0, :], w2.values[0, :]),
                  ("right", w1.values[-1, :], w2.values[-1, :])]
    for label, a, b in edges:
        gap = float(np.max(np.abs(a - b)))
        if gap > tol * scale:
            raise ValueError(
                f"densities disagree on the {label} boundary by {gap:.3e}; "
                "an equalizing map cannot be the identity on that edge"
            )


def _separable_transport(w1: Density, w2: Density, axis: str) -> AreaMap:
    box = w1.box
    if axis == "y":
        coords = np.linspace(box[2], box[3], 2049)
        mid = 0.5 * (box[0] + box[1])
        line = np.column_stack([np.full_like(coords, mid), coords])
    else:
        coords = np.linspace(box[0], box[1], 2049)
        mid = 0.5 * (box[2] + box[3])
        line = np.column_stack([coords, np.full_like(coords, mid)])
    T, _, Tinv = fiber_equalize_1d(coords, w1(line), w2(line))
    region = RectRegion(*box, chart=w1.chart)
    j = 1 if axis == "y" else 0

    def fwd(pts):
        mask = region.contains(pts)
        if np.any(mask):
            pts[mask, j] = T(pts[mask, j])
        return pts

    def inv(pts):
        mask = region.contains(pts)
        if np.any(mask):
            pts[mask, j] = Tinv(pts[mask, j])
        return pts

    return AreaMap(
        chart=w1.chart,
        fwd=fwd,
        inv=inv,
        name=f"transport_1d({axis})",
        support=region,
        provenance={"kind": "moser_1d", "axis": axis},
        exactness=Exactness("numeric"),
    )


def _map_norm_on_box(f: AreaMap, box, n: int = 96) -> float:
    _, _, pts = _grid_points(box, (n, n))
    img = f.evaluate(pts)
    return float(np.max(np.hypot(img[:, 0] - pts[:, 0], img[:, 1] - pts[:, 1])))


def _equalize_single(w1: Density, w2: Density, target: float, max_sweeps: int,
                     flow_steps: int) -> AreaMap:
    defect = float(np.max(np.abs(w2.values / w1.values - 1.0)))
    parts: list[AreaMap] = []
    sep1, sep2 = w1.separable_axis(), w2.separable_axis()
    # a cumulative-mass transport needs an interval; skip the fast path
    # when the transport direction closes up into a circle
    periodic_axis = "x" if _is_periodic_x(w1.chart, w1.box) else None
    if sep1 is not None and sep1 == sep2 and sep1 != periodic_axis:
        parts.append(_separable_transport(w1, w2, sep1))

    residual = np.inf
    for _ in range(max_sweeps):
        if parts:
            cur = compose(parts, name="moser") if len(parts) > 1 else parts[0]
            pb = pullback_density(cur, w2, box=w1.box, shape=w1.shape)
            residual = float(np.max(np.abs(pb.values / w1.values - 1.0)))
            if residual < target:
                break
            # the composite leaves pb behind; prepend (in application
            # order) a flow g with g*(pb) = w1, giving (cur o g)*(w2) = w1
            rho_b = pb.values
        else:
            rho_b = w2.values
        parts.append(_moser_flow_map(w1.chart, w1.box, w1.xs, w1.ys,
                                     w1.values, rho_b, flow_steps,
                                     name=f"moser_sweep{len(parts)}"))
    else:
        cur = compose(parts, name="moser") if len(parts) > 1 else parts[0]
        pb = pullback_density(cur, w2, box=w1.box, shape=w1.shape)
        residual = float(np.max(np.abs(pb.values / w1.values - 1.0)))
        if residual >= target:
            raise FlowDiverged(
                f"density equalization stalled at residual {residual:.3e} "
                f"(target {target:.1e}) after {max_sweeps} sweeps"
            )

    f = compose(parts, name="moser") if len(parts) > 1 else parts[0]
    norm = _map_norm_on_box(f, w1.box)
    return f.with_report({
        "residual": residual,
        "c0_norm": norm,
        "defect": defect,
        "ratio": norm / defect if defect > 0 else 0.0,
        "sweeps": len(parts),
    })


def _sub_density(w: Density, face, shape) -> Density:
    _, _, pts = _grid_points(face, shape)
    return Density(w.chart, face, w(pts).reshape(shape), name=w.name)


def _face_interior_mask(pts: np.ndarray, face, chart: Chart) -> np.ndarray:
    x0, x1, y0, y1 = face
    x, y = pts[:, 0], pts[:, 1]
    px, py = chart.periods
    if px is not None:
        mid = 0.5 * (x0 + x1)
        x = mid + (x - mid) - px * np.round((x - mid) / px)
    if py is not None:
        mid = 0.5 * (y0 + y1)
        y = mid + (y - mid) - py * np.round((y - mid) / py)
    return (x > x0) & (x < x1) & (y > y0) & (y < y1)


def _tiled_map(chart: Chart, face_maps, report: dict) -> AreaMap:
    """Glue per-face maps; points on face edges or outside stay put exactly."""
    active = [(f, m) for f, m in face_maps if m is not None]
    if not active:
        return identity_map(chart).with_report(report)

    def fwd(pts):
        for face, m in active:
            mask = _face_interior_mask(pts, face, chart)
            if np.any(mask):
                pts[mask] = m.evaluate(pts[mask])
        return pts

    def inv(pts):
        for face, m in active:
            mask = _face_interior_mask(pts, face, chart)
            if np.any(mask):
                pts[mask] = m.inverse(pts[mask])
        return pts

    support = UnionRegion(tuple(RectRegion(*f, chart=chart) for f, _ in active))
    m = AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=f"tiled_moser[{len(active)}]",
        support=support,
        provenance={"kind": "tiled_moser", "faces": len(active)},
        exactness=Exactness("numeric"),
        children=tuple(m for _, m in active),
    )
    return m.with_report(report)


def _equalize_per_face(w1: Density, w2: Density, faces, *, target, max_sweeps,
                       flow_steps) -> AreaMap:
    face_maps = []
    worst_resid = 0.0
    worst_norm = 0.0
    defect = float(np.max(np.abs(w2.values / w1.values - 1.0)))
    for face in faces:
        nx = max(33, int(round(65 * (face[1] - face[0]) / (w1.box[1] - w1.box[0]))))
        ny = max(33, int(round(65 * (face[3] - face[2]) / (w1.box[3] - w1.box[2]))))
        f1 = _sub_density(w1, face, (nx, ny))
        f2 = _sub_density(w2, face, (nx, ny))
        gap = abs(f1.total_mass - f2.total_mass)
        # quadrature of two different splines over a face wobbles at the
        # 1e-5 level; only a defect-scale gap marks a real mismatch
        if gap > 1e-4 * max(abs(f1.total_mass), abs(f2.total_mass)):
            raise FaceMassMismatch(f"face {face} masses differ by {gap:.3e}")
        # close the tiny quadrature gap exactly so the face field shuts
        # off on the face boundary
        f2 = f2.scaled(f1.total_mass / f2.total_mass)
        if float(np.max(np.abs(f2.values / f1.values - 1.0))) < 1e-13:
            face_maps.append((face, None))
            continue
        fm = _equalize_single(f1, f2, target, max_sweeps, flow_steps)
        worst_resid = max(worst_resid, fm.report["residual"])
        worst_norm = max(worst_norm, fm.report["c0_norm"])
        face_maps.append((face, fm))
    report = {
        "residual": worst_resid,
        "c0_norm": worst_norm,
        "defect": defect,
        "ratio": worst_norm / defect if defect > 0 else 0.0,
        "faces": len([1 for _, m in face_maps if m is not None]),
    }
    return _tiled_map(w1.chart, face_maps, report)


def moser_equalize(w1: Density, w2: Density, domain=None,
                   fixed_skeleton: Sequence[tuple] | None = None, *,
                   target: float = 1e-4, max_sweeps: int = 8,
                   flow_steps: int = 64, boundary_check: bool = True,
                   boundary_tol: float = 1e-7) -> AreaMap:
    """Map f whose pullback density det Df * (w2 o f) matches w1.

    The densities must share a grid box; total masses must agree to 1e-8
    relative.  With ``fixed_skeleton`` (an iterable of face boxes tiling
    the domain) the construction runs independently per face and f is
    exactly the identity on every face edge; per-face masses must then
    also agree.  The returned map carries a report with the achieved
    residual, its C0 norm, and the norm against the density defect
    sup|w2/w1 - 1|.
    """
    if domain is not None and tuple(domain) != tuple(w1.box):
        raise ValueError("domain must match the density box")
    if w1.box != w2.box or w1.shape != w2.shape:
        raise ValueError("densities must share a grid")
    m1, m2 = w1.total_mass, w2.total_mass
    if abs(m1 - m2) > 1e-8 * max(abs(m1), abs(m2)):
        raise MassMismatch(f"total masses differ: {m1:.12g} vs {m2:.12g}")

    defect = float(np.max(np.abs(w2.values / w1.values - 1.0)))
    if defect < 1e-13:
        return identity_map(w1.chart).with_report(
            {"residual": 0.0, "c0_norm": 0.0, "defect": defect,
             "ratio": 0.0, "sweeps": 0})

    if fixed_skeleton is not None:
        return _equalize_per_face(w1, w2, list(fixed_skeleton), target=target,
                                  max_sweeps=max_sweeps, flow_steps=flow_steps)

    if boundary_check:
        _check_boundary_agreement(w1, w2, boundary_tol)
    return _equalize_single(w1, w2, target, max_sweeps, flow_steps)


# ---------------------------------------------------------------------------
# strip adjustment


class _StripTables:
    """Fiberwise cumulative integrals of a thin-band perturbation chi."""

    def __init__(self, chi: Callable, delta: float, chart: Chart, n_grid: int):
        period = chart.periods[0]
        if period is None:
            raise ValueError("strip maps need a periodic first coordinate")
        self.period = period
        self.delta = float(delta)
        self.chi = chi
        xs = np.linspace(0.0, period, n_grid)
        zs = np.linspace(0.0, self.delta, n_grid)
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        vals = np.asarray(chi(np.column_stack([gx.ravel(), gz.ravel()])),
                          dtype=float).reshape(n_grid, n_grid)
        if np.min(1.0 + vals) <= 0.0:
            raise DegenerateDensity(
                f"1 + chi must stay positive; min is {1.0 + np.min(vals):.3e}"
            )
        self.sup = float(np.max(np.abs(vals)))
        self.xs = xs
        cum = cumulative_trapezoid(vals, zs, axis=1, initial=0.0)
        self._cum_sp = RectBivariateSpline(xs, zs, cum, kx=3, ky=3)
        self._chi_sp = RectBivariateSpline(xs, zs, vals, kx=3, ky=3)
        self.c_of_x = cum[:, -1]

    def chi_cum(self, x, z):
        """integral of chi from 0 to z along the fiber at x, any z."""
        x = np.mod(np.asarray(x, dtype=float), self.period)
        z = np.asarray(z, dtype=float)
        out = self._cum_sp.ev(x, np.clip(z, 0.0, self.delta))
        return np.where(z <= 0.0, 0.0, out)

    def chi_at(self, x, z):
        x = np.mod(np.asarray(x, dtype=float), self.period)
        z = np.asarray(z, dtype=float)
        inside = (z > 0.0) & (z < self.delta)
        return np.where(inside,
                        self._chi_sp.ev(x, np.clip(z, 0.0, self.delta)), 0.0)


def _psi1_from_tables(tab: _StripTables, chart: Chart) -> AreaMap:
    top = float(np.max(np.abs(tab.c_of_x))) + tab.delta

    def fwd(pts):
        pts[:, 1] += tab.chi_cum(pts[:, 0], pts[:, 1])
        return pts

    def inv(pts):
        x, target = pts[:, 0], pts[:, 1]
        w = target - tab.chi_cum(x, target)
        for _ in range(60):
            r = w + tab.chi_cum(x, w) - target
            if np.max(np.abs(r)) < 1e-13:
                break
            w = w - r / (1.0 + tab.chi_at(x, w))
        pts[:, 1] = w
        return pts

    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name="strip_psi1",
        support=Band(0.0, chart.sampling_box[3], "y", chart),
        provenance={"kind": "strip_psi1", "delta": tab.delta},
        exactness=Exactness("numeric"),
        inverse_strategy=InverseStrategy("newton"),
        kinks=(KinkLine("y", 0.0), KinkLine("y", tab.delta)),
    )


def strip_psi1(chi: Callable, delta: float, chart: Chart,
               n_grid: int = 513) -> AreaMap:
    """The fiberwise primitive map (x, z) -> (x, integral_0^z (1 + chi) dt).

    Its Jacobian determinant is 1 + chi(x, z) exactly; it is the identity
    for z <= 0 and a constant fiber shift above the band.
    """
    return _psi1_from_tables(_StripTables(chi, delta, chart, n_grid), chart)


def strip_adjust(chi: Callable, delta: float, chart: Chart, *,
                 spread_top: float = 0.5, residual_target: float = 1e-4,
                 n_grid: int = 513, flow_steps: int = 48,
                 equalize_shape: tuple[int, int] = (97, 97)) -> AreaMap:
    """Spread a mass-neutral density perturbation off its thin band.

    chi lives in M x [0, delta] (M the chart's circle direction) with
    1 + chi positive and zero total integral.  The result f is supported
    in M x [0, spread_top], is the identity on and below z = 0, pulls
    (1 + chi) dx dy back to dx dy within the residual target, and has C0
    norm proportional to delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if spread_top < 0.5:
        raise ValueError("spread_top must be at least 1/2: the dilation "
                         "t -> 2*delta*t spreads the band over [0, 1/2]")
    tab = _StripTables(chi, delta, chart, n_grid)
    if delta > spread_top / (1.0 + tab.sup):
        raise ValueError(
            f"delta {delta} too large for spread band of height {spread_top}"
        )

    total = np.trapezoid(tab.c_of_x, tab.xs)
    scale = np.trapezoid(np.abs(tab.c_of_x), tab.xs) + 1e-300
    if abs(total) > 1e-8 * max(scale, tab.period * delta):
        raise MassMismatch(f"chi must be mass-neutral; integral is {total:.3e}")

    # the dilation t -> 2*delta*t only sees the declared band, so any chi
    # mass outside [0, delta] would be dropped silently; probe the raw
    # callable beyond the band on both sides
    sample_x = tab.xs[:: max(1, len(tab.xs) // 32)]
    probe_t = np.concatenate([
        -delta * np.linspace(0.05, 1.0, 8),
        delta * (1.0 + np.linspace(0.05, 3.0, 12)),
    ])
    gx, gt = np.meshgrid(sample_x, probe_t, indexing="ij")
    outside = np.asarray(chi(np.column_stack([gx.ravel(), gt.ravel()])),
                         dtype=float)
    leak = float(np.max(np.abs(outside)))
    if leak > 1e-8 * max(tab.sup, 1.0):
        raise ValueError(
            f"chi reaches {leak:.3e} outside the declared band [0, {delta:g}]; "
            "widen delta to cover the support"
        )

    psi1 = _psi1_from_tables(tab, chart)

    # spread the band over [0, 1/2] through a smooth dilation: tau(0) = 0,
    # tau(1/2) = delta, tau' = 0 at both ends, so the spread density
    # 1 + tau'(z) chi(x, tau(z)) meets the reference continuously at the
    # band edges even when chi itself steps there
    sp = StepProfile(0.0, 1.0)

    def tau(z):
        return delta * sp.value(2.0 * np.asarray(z, dtype=float))

    def tau_prime(z):
        return 2.0 * delta * sp.deriv(2.0 * np.asarray(z, dtype=float))

    def psi2_shift(x, z):
        return tab.chi_cum(x, tau(z))

    def fwd2(pts):
        pts[:, 1] += psi2_shift(pts[:, 0], pts[:, 1])
        return pts

    def inv2(pts):
        x, target = pts[:, 0], pts[:, 1]
        w = target - psi2_shift(x, target)
        for _ in range(60):
            r = w + psi2_shift(x, w) - target
            if np.max(np.abs(r)) < 1e-13:
                break
            w = w - r / (1.0 + tau_prime(w) * tab.chi_at(x, tau(w)))
        pts[:, 1] = w
        return pts

    psi2 = AreaMap(
        chart=chart,
        fwd=fwd2,
        inv=inv2,
        name="strip_psi2",
        support=Band(0.0, spread_top, "y", chart),
        provenance={"kind": "strip_psi2", "delta": delta},
        exactness=Exactness("numeric"),
        kinks=(KinkLine("y", 0.0), KinkLine("y", 0.5)),
    )

    psi = compose([psi1.inverted(), psi2], name="strip_spread")

    # pullback of (1+chi) dx dy under psi is 1 + tau'(z) chi(x, tau(z))
    # on the spread band; equalize that residual back to the reference
    box = (0.0, tab.period, 0.0, spread_top)

    def resid_density(pts):
        return 1.0 + tau_prime(pts[:, 1]) * tab.chi_at(pts[:, 0], tau(pts[:, 1]))

    w2 = Density.from_function(chart, box, resid_density, shape=equalize_shape,
                               name="strip_residual")
    w1 = Density.constant(chart, box, shape=equalize_shape)
    w1 = w1.scaled(w2.total_mass / w1.total_mass, name="reference")
    h = moser_equalize(w1, w2, target=residual_target, flow_steps=flow_steps,
                       boundary_check=False)
    f = compose([psi, h], name="strip_adjust")
    return f.with_report({
        "delta": delta,
        "c0_norm": _map_norm_on_box(f, box),
        "equalize_residual": h.report.get("residual") if h.report else None,
    })


# ---------------------------------------------------------------------------
# square area adjustment


def _bump_profile():
    """Unit-interval plateau bump normalized to unit mass; returns (B, sup B)."""
    bump = PlateauBump(0.0, 1.0, ramp=0.25)
    us = np.linspace(0.0, 1.0, 4097)
    mass = float(np.trapezoid(bump.value(us), us))

    def B(u):
        return bump.value(np.asarray(u, dtype=float)) / mass

    return B, float(np.max(bump.value(us))) / mass


def square_area_adjust(omega: Density, band, square_side: float, *,
                       target: float = 1e-4, flow_steps: int = 64
                       ) -> tuple[Density, AreaMap]:
    """Per-square area correction over a band tiled by squares.

    Measures the omega-mass of every square against its reference area,
    builds the plateau-bump density carrying exactly those masses while
    staying 1 on the square edges, and equalizes square by square.  The
    squares must tile the band exactly: the band height and the chart
    period must both be integer multiples of the side.
    """
    chart = omega.chart
    period = chart.periods[0]
    if period is None:
        raise ValueError("square adjustment needs a periodic first coordinate")
    if isinstance(band, Band):
        y0, y1 = band.lo, band.hi
    else:
        y0, y1 = float(band[0]), float(band[1])
    side = float(square_side)
    nx = int(round(period / side))
    ny = int(round((y1 - y0) / side))
    if nx < 1 or abs(nx * side - period) > 1e-9 * period:
        raise ValueError(f"side {side} does not tile the period {period}")
    if ny < 1 or abs(ny * side - (y1 - y0)) > 1e-9 * max(y1 - y0, 1.0):
        raise ValueError(f"side {side} does not tile the band height {y1 - y0}")
    if y0 < omega.box[2] - 1e-12 or y1 > omega.box[3] + 1e-12:
        raise ValueError("band exceeds the density's grid box")

    faces = [(i * side, (i + 1) * side, y0 + j * side, y0 + (j + 1) * side)
             for i in range(nx) for j in range(ny)]

    # resample the density onto a lattice aligned with the tiling, then
    # take the per-square masses from that same lattice so the corrected
    # density's total closes against it exactly
    per = 16
    box = (0.0, period, y0, y1)
    omega_band = _sub_density(omega, box, (nx * per + 1, ny * per + 1))
    r = side * side
    t = np.empty(len(faces))
    for k, face in enumerate(faces):
        i = int(round(face[0] / side))
        j = int(round((face[2] - y0) / side))
        sub = omega_band.values[i * per:(i + 1) * per + 1,
                                j * per:(j + 1) * per + 1]
        fys = omega_band.ys[j * per:(j + 1) * per + 1]
        fxs = omega_band.xs[i * per:(i + 1) * per + 1]
        s_k = float(np.trapezoid(np.trapezoid(sub, fys, axis=1), fxs))
        t[k] = s_k / r - 1.0
    A = float(np.max(np.abs(t)))
    B, _ = _bump_profile()
    # normalize the bump in the lattice's own trapezoid arithmetic so each
    # corrected face mass closes against s_k exactly
    bu = B(np.linspace(0.0, 1.0, per + 1))
    bu = bu / np.trapezoid(bu, dx=1.0 / per)
    supB = float(np.max(bu))
    E2 = supB * supB
    if A >= 1.0:
        raise RatioOutOfRange(f"square mass ratios stray too far: A = {A:.4f} >= 1")
    if A > 0 and E2 >= 1.0 / A:
        raise RatioOutOfRange(
            f"bump height {E2:.3f} exceeds 1/A = {1.0 / A:.3f}; "
            "refine the squares"
        )

    vals = np.ones(omega_band.shape)
    for k, face in enumerate(faces):
        if t[k] == 0.0:
            continue
        i = int(round(face[0] / side))
        j = int(round((face[2] - y0) / side))
        sl = np.s_[i * per:(i + 1) * per + 1, j * per:(j + 1) * per + 1]
        vals[sl] += t[k] * bu[:, None] * bu[None, :]
    rho = Density(chart, box, vals, name="square_adjusted")
    h2 = moser_equalize(rho, omega_band, fixed_skeleton=faces, target=target,
                        flow_steps=flow_steps)
    report = dict(h2.report or {})
    report.update({"A": A, "E2": E2, "t": [float(v) for v in t],
                   "squares": len(faces)})
    return rho, h2.with_report(report)


# ---------------------------------------------------------------------------
# skeleton adjustment


@dataclass(frozen=True)
class SkeletonLine:
    """Axis-aligned skeleton piece carrying a correction tube.

    axis "h" is the line y = pos with longitudinal extent x in [lo, hi];
    axis "v" is x = pos with y in [lo, hi].  ``closed`` marks a full
    period circle (no ends).  ``side`` restricts the tube to one side of
    the line: -1 below/left, +1 above/right, 0 both.
    """

    axis: str
    pos: float
    lo: float
    hi: float
    closed: bool = False
    side: int = 0


def _line_samples(line: SkeletonLine, n: int) -> tuple[np.ndarray, np.ndarray]:
    if line.closed:
        ls = line.lo + (line.hi - line.lo) * np.arange(n) / n
    else:
        ls = np.linspace(line.lo, line.hi, n)
    if line.axis == "h":
        return ls, np.column_stack([ls, np.full(n, line.pos)])
    return ls, np.column_stack([np.full(n, line.pos), ls])


def _pulled_on_line(maps: list[AreaMap], omega: Density, line: SkeletonLine,
                    pts: np.ndarray, h: float) -> np.ndarray:
    """Pullback density at points on the line, one-sided when the tube is."""
    if not maps:
        m = identity_map(omega.chart)
    elif len(maps) == 1:
        m = maps[0]
    else:
        m = compose(maps, name="partial")
    if line.side == 0:
        return _fd_det(m, pts, h) * omega(m.evaluate(pts))
    # second-order one-sided transverse stencil into the active side
    j = 1 if line.axis == "h" else 0
    off = np.zeros_like(pts)
    off[:, j] = h * line.side
    lng = np.zeros_like(pts)
    lng[:, 1 - j] = h
    base = m.evaluate(pts)
    in1 = m.evaluate(pts + off)
    in2 = m.evaluate(pts + 2 * off)
    dtrans = (4.0 * in1 - 3.0 * base - in2) / (2 * h * line.side)
    dlong = (m.evaluate(pts + lng) - m.evaluate(pts - lng)) / (2 * h)
    if line.axis == "h":
        det = dlong[:, 0] * dtrans[:, 1] - dtrans[:, 0] * dlong[:, 1]
    else:
        det = dtrans[:, 0] * dlong[:, 1] - dlong[:, 0] * dtrans[:, 1]
    return det * omega(base)


def _tube_map(chart: Chart, line: SkeletonLine, w: float, nodes: np.ndarray,
              lam: np.ndarray) -> AreaMap:
    """Transverse stretch fixing the pullback density on the line.

    (long, pos + s) -> (long, pos + T(s)) with T(s) = s + (lam(long)-1)
    s (1-(s/w)^2)^3, so the map is the identity on the line and meets the
    identity C2-smoothly at the tube walls (a C1 junction would leave a
    finite-difference artifact in det measurements there); its Jacobian
    determinant on the line is exactly lam(long).
    """
    period = chart.periods[0] if line.axis == "h" else chart.periods[1]
    if line.closed:
        if period is None:
            raise ValueError("closed skeleton line on a non-periodic axis")
        ext = np.concatenate([nodes[-4:] - period, nodes, [nodes[0] + period],
                              nodes[1:4] + period])
        lam_ext = np.concatenate([lam[-4:], lam, [lam[0]], lam[1:4]])
        lam_ip = PchipInterpolator(ext, lam_ext)
    else:
        lam_ip = PchipInterpolator(nodes, lam)
    tpd = chart.periods[1] if line.axis == "h" else chart.periods[0]
    jt = 1 if line.axis == "h" else 0

    def split(pts):
        s = pts[:, jt] - line.pos
        if tpd is not None:
            s = s - tpd * np.round(s / tpd)
        ell = pts[:, 1 - jt]
        if line.closed and period is not None:
            ell = line.lo + np.mod(ell - line.lo, period)
        return ell, s

    def in_tube(ell, s):
        if line.side == 0:
            mask = np.abs(s) < w
        elif line.side < 0:
            mask = (s > -w) & (s < 0.0)
        else:
            mask = (s > 0.0) & (s < w)
        if not line.closed:
            mask &= (ell >= line.lo) & (ell <= line.hi)
        return mask

    def fwd(pts):
        ell, s = split(pts)
        mask = in_tube(ell, s)
        if np.any(mask):
            u2 = (s[mask] / w) ** 2
            lamv = lam_ip(ell[mask])
            pts[mask, jt] += (lamv - 1.0) * s[mask] * (1.0 - u2) ** 3
        return pts

    def inv(pts):
        ell, s = split(pts)
        mask = in_tube(ell, s)
        if np.any(mask):
            lamv = lam_ip(ell[mask])
            target = s[mask]
            # identity start + clamping keeps iterates inside the tube,
            # where T is monotone for lam in the clip range
            sv = target.copy()
            for _ in range(60):
                u2 = (sv / w) ** 2
                r = sv + (lamv - 1.0) * sv * (1.0 - u2) ** 3 - target
                if np.max(np.abs(r)) < 1e-14 * max(w, 1.0):
                    break
                # d/ds [s (1-u^2)^3] = (1-u^2)^2 (1-7u^2), in (-0.66, 1]
                dT = 1.0 + (lamv - 1.0) * (1.0 - u2) ** 2 * (1.0 - 7.0 * u2)
                sv = np.clip(sv - r / dT, -w, w)
            pts[mask, jt] = line.pos + sv
        return pts

    if line.axis == "h":
        support = Band(line.pos - (w if line.side <= 0 else 0.0),
                       line.pos + (w if line.side >= 0 else 0.0), "y", chart)
    else:
        support = Band(line.pos - (w if line.side <= 0 else 0.0),
                       line.pos + (w if line.side >= 0 else 0.0), "x", chart)
    kinks = ()
    if line.side != 0:
        kinks = (KinkLine("y" if line.axis == "h" else "x", line.pos),)
    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=f"tube_{line.axis}@{line.pos:.4g}",
        support=support,
        provenance={"kind": "skeleton_tube", "axis": line.axis,
                    "pos": line.pos, "width": w, "side": line.side},
        exactness=Exactness("numeric"),
        kinks=kinks,
    )


def _auto_tube_width(skeleton: Sequence[SkeletonLine], omega: Density) -> float:
    gaps = []
    for axis in ("h", "v"):
        ps = sorted({ln.pos for ln in skeleton if ln.axis == axis})
        period = omega.chart.periods[0 if axis == "v" else 1]
        for a, b in zip(ps, ps[1:]):
            gaps.append(b - a)
        if period is not None and len(ps) > 1:
            gaps.append(ps[0] + period - ps[-1])
    box_h = [abs(ln.pos - omega.box[2]) for ln in skeleton if ln.axis == "h"]
    box_h += [abs(omega.box[3] - ln.pos) for ln in skeleton if ln.axis == "h"]
    box_v = [abs(ln.pos - omega.box[0]) for ln in skeleton if ln.axis == "v"]
    box_v += [abs(omega.box[1] - ln.pos) for ln in skeleton if ln.axis == "v"]
    cands = [g / 2.5 for g in gaps] + [0.95 * g for g in box_h + box_v if g > 0]
    if not cands:
        cands = [0.125 * (omega.box[3] - omega.box[2])]
    return min(cands)


def skeleton_adjust(omega: Density, skeleton: Sequence[SkeletonLine], *,
                    bound: float, tube_width: float | None = None,
                    target: float = 1e-6, max_passes: int = 4,
                    n_line: int = 1025) -> AreaMap:
    """Tube-supported map whose pullback density is 1 on the skeleton.

    Lines are processed "h" before "v" so that the ends of vertical
    segments (which should terminate on horizontal lines) are already
    exact when their turn comes; each line gets transverse stretch passes
    until its sampled pullback density matches the reference within
    target.  The composite's C0 norm must come in under ``bound``.
    """
    chart = omega.chart
    if bound <= 0:
        raise ValueError("bound must be positive")
    w = tube_width if tube_width is not None else _auto_tube_width(skeleton, omega)
    if w <= 0:
        raise TubeTooThin("no room for a correction tube")
    fd_h = max(3e-4 * w, 1e-7)

    lines = [ln for ln in skeleton if ln.axis == "h"]
    lines += [ln for ln in skeleton if ln.axis == "v"]
    parts: list[AreaMap] = []
    worst = 0.0
    for line in lines:
        # a line crossing another line's tube sees pullback variation on
        # the tube-width scale, and the interpolation error of its stretch
        # profile falls like the cube of the node spacing; key the node
        # count to the width so crossings stay resolved
        extent = line.hi - line.lo
        n = int(np.ceil(1024.0 * extent / w)) + 1
        n = max(n_line if line.closed else 257, min(8193, n))
        nodes, pts = _line_samples(line, n)
        defect = np.inf
        for _ in range(max_passes):
            pulled = _pulled_on_line(parts, omega, line, pts.copy(), fd_h)
            if np.min(pulled) <= 0:
                raise DegenerateDensity("pullback density lost positivity on a line")
            defect = float(np.max(np.abs(pulled - 1.0)))
            if defect < target:
                break
            lam = np.clip(1.0 / pulled, 0.5, 2.0)
            if not line.closed:
                # force exact end continuity; the ends sit on already
                # corrected lines so the subtracted offsets are tiny
                hat = (nodes - nodes[0]) / (nodes[-1] - nodes[0])
                lam = lam - (1 - hat) * (lam[0] - 1.0) - hat * (lam[-1] - 1.0)
            parts.append(_tube_map(chart, line, w, nodes, lam))
        if defect >= target:
            raise TubeTooThin(
                f"line {line.axis}@{line.pos:.4g} stalled at defect "
                f"{defect:.3e} (target {target:.1e}); tube width {w:.3g}"
            )
        worst = max(worst, defect)

    if not parts:
        return identity_map(chart).with_report(
            {"residual": worst, "c0_norm": 0.0, "tube_width": w, "passes": 0})

    f = compose(parts, name="skeleton_adjust") if len(parts) > 1 else parts[0]
    norm = 0.0
    for line in lines:
        _, pts = _line_samples(line, 257)
        for frac in (-0.9, -0.6, -0.3, 0.3, 0.6, 0.9):
            if line.side != 0 and np.sign(frac) != np.sign(line.side):
                continue
            probe = pts.copy()
            probe[:, 1 if line.axis == "h" else 0] += frac * w
            img = f.evaluate(probe)
            norm = max(norm, float(np.max(np.hypot(img[:, 0] - probe[:, 0],
                                                   img[:, 1] - probe[:, 1]))))
    if norm > bound:
        raise TubeTooThin(
            f"skeleton correction moves points by {norm:.3e}, over the "
            f"requested bound {bound:.3e}; widen the tubes or the bound"
        )
    return f.with_report({"residual": worst, "c0_norm": norm,
                          "tube_width": w, "passes": len(parts)})
