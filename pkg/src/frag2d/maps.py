"""Area-preserving maps as composable evaluator objects.

An AreaMap carries a forward evaluator on universal-cover coordinates
(deck-equivariant), an optional exact inverse evaluator, a support
region, provenance, and an exactness tag.  Compositions keep their
children; nothing is ever resampled onto a grid.  Inverses fall back to
a damped vectorized Newton iteration when no analytic inverse exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import (
    BadCylinder,
    FlowDiverged,
    InverseNotFound,
    MapEvaluationError,
    ProfileInvalid,
    SupportNotCompact,
)
from .geometry_core import (
    Annulus,
    Band,
    Chart,
    DiskRegion,
    GluedTorus,
    Region,
    UnionRegion,
    as_points,
)
from .profiles import StepProfile


@dataclass(frozen=True)
class Exactness:
    kind: str  # "exact" | "numeric"
    residual: float | None = None

    @property
    def is_exact(self) -> bool:
        return self.kind == "exact"


EXACT = Exactness("exact")


@dataclass(frozen=True)
class InverseStrategy:
    kind: str  # "analytic" | "newton" | "composed"
    max_iter: int = 50
    tol: float = 1e-12


@dataclass(frozen=True)
class KinkLine:
    """Derivative discontinuity along a coordinate line (axis = const)."""

    axis: str
    value: float


@dataclass(frozen=True)
class KinkCircle:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True, eq=False)
class AreaMap:
    chart: Chart
    fwd: Callable[[np.ndarray], np.ndarray]
    inv: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "map"
    support: Region | None = None
    provenance: dict = field(default_factory=lambda: {"kind": "formula"})
    exactness: Exactness = EXACT
    inverse_strategy: InverseStrategy = field(default_factory=lambda: InverseStrategy("analytic"))
    kinks: tuple = ()
    children: tuple = ()
    report: dict | None = None

    # -- evaluation --------------------------------------------------------

    def evaluate(self, pts) -> np.ndarray:
        arr = np.asarray(pts, dtype=float)
        single = arr.ndim == 1
        out = self.fwd(as_points(arr).copy())
        out = np.asarray(out, dtype=float)
        if out.shape != as_points(arr).shape:
            raise MapEvaluationError(
                f"evaluator for {self.name!r} returned shape {out.shape}"
            )
        if not np.all(np.isfinite(out)):
            raise MapEvaluationError(f"non-finite image under {self.name!r}")
        return out[0] if single else out

    __call__ = evaluate

    def inverse(self, pts) -> np.ndarray:
        arr = np.asarray(pts, dtype=float)
        single = arr.ndim == 1
        targets = as_points(arr).copy()
        if self.inv is not None:
            out = np.asarray(self.inv(targets), dtype=float)
        else:
            out = _newton_invert(
                self.fwd, targets,
                max_iter=self.inverse_strategy.max_iter,
                tol=self.inverse_strategy.tol,
            )
        if not np.all(np.isfinite(out)):
            raise MapEvaluationError(f"non-finite inverse image under {self.name!r}")
        return out[0] if single else out

    def inverted(self) -> "AreaMap":
        if self.inv is not None:
            inv_map = AreaMap(
                chart=self.chart,
                fwd=self.inv,
                inv=self.fwd,
                name=f"inv({self.name})",
                support=self.support,
                provenance={"kind": "inverse", "of": self.provenance},
                exactness=self.exactness,
                inverse_strategy=self.inverse_strategy,
                kinks=self.kinks,
            )
            return inv_map
        strategy = InverseStrategy("newton", 50, 1e-12)
        return AreaMap(
            chart=self.chart,
            fwd=lambda p: _newton_invert(self.fwd, p, strategy.max_iter, strategy.tol),
            inv=self.fwd,
            name=f"inv({self.name})",
            support=self.support,
            provenance={"kind": "inverse", "of": self.provenance},
            exactness=self.exactness,
            inverse_strategy=strategy,
            kinks=self.kinks,
        )

    def restricted_to(self, region: Region, name: str | None = None) -> "AreaMap":
        """Glue of this map inside ``region`` with the identity outside.

        The caller is responsible for having verified that the map is
        (tolerance-)identity outside the region, so the glue is continuous;
        the restriction itself is then exact at every sample by definition.
        """

        def fwd(pts):
            out = pts.copy()
            mask = region.contains(pts)
            if np.any(mask):
                out[mask] = self.fwd(pts[mask].copy())
            return out

        def inv(pts):
            out = pts.copy()
            mask = region.contains(pts)
            if np.any(mask):
                out[mask] = self.inverse(pts[mask])
            return out

        return AreaMap(
            chart=self.chart,
            fwd=fwd,
            inv=inv,
            name=name or f"{self.name}|restricted",
            support=region,
            provenance={"kind": "restriction", "of": self.provenance},
            exactness=self.exactness,
            inverse_strategy=self.inverse_strategy,
            kinks=self.kinks,
            children=(self,),
        )

    def with_report(self, report: dict) -> "AreaMap":
        return replace(self, report=report)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "chart": self.chart.kind,
            "provenance": self.provenance,
            "exactness": {"kind": self.exactness.kind, "residual": self.exactness.residual},
            "inverse_strategy": self.inverse_strategy.kind,
            "children": [c.describe() for c in self.children],
        }


def identity_map(chart: Chart) -> AreaMap:
    return AreaMap(
        chart=chart,
        fwd=lambda p: p,
        inv=lambda p: p,
        name="id",
        provenance={"kind": "formula", "formula": "identity"},
    )


def compose(maps: list[AreaMap] | tuple[AreaMap, ...], name: str | None = None) -> AreaMap:
    """Composition in writing order: compose([f, g]) applies g first."""
    maps = tuple(maps)
    if not maps:
        raise ValueError("compose needs at least one map")
    if len(maps) == 1:
        return maps[0]
    chart = maps[0].chart

    def fwd(pts):
        out = pts
        for m in reversed(maps):
            out = m.fwd(out.copy()) if out is pts else m.fwd(out)
        return out

    def inv(pts):
        out = pts
        for m in maps:
            out = m.inverse(out)
        return out

    supports = [m.support for m in maps]
    support = None
    if all(s is not None for s in supports):
        support = UnionRegion(tuple(supports))
    exact = all(m.exactness.is_exact for m in maps)
    kinks = tuple(k for m in maps for k in m.kinks)
    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name or "compose(" + ",".join(m.name for m in maps) + ")",
        support=support,
        provenance={"kind": "composite", "parts": [m.provenance for m in maps]},
        exactness=EXACT if exact else Exactness("numeric"),
        inverse_strategy=InverseStrategy("composed"),
        kinks=kinks,
        children=maps,
    )


def invert(m: AreaMap) -> AreaMap:
    return m.inverted()


# ---------------------------------------------------------------------------
# Newton fallback


def _newton_invert(fwd, targets: np.ndarray, max_iter: int = 50, tol: float = 1e-12,
                   fd_h: float = 1e-7) -> np.ndarray:
    x = targets.copy()
    n = x.shape[0]
    active = np.ones(n, dtype=bool)
    resid = fwd(x.copy()) - targets
    for _ in range(max_iter):
        err = np.max(np.abs(resid), axis=1)
        active = err > tol
        if not np.any(active):
            break
        xa = x[active]
        ta = targets[active]
        ra = resid[active]
        ex = np.zeros_like(xa)
        ex[:, 0] = fd_h
        ey = np.zeros_like(xa)
        ey[:, 1] = fd_h
        j11_12 = (fwd(xa + ex) - fwd(xa - ex)) / (2 * fd_h)
        j21_22 = (fwd(xa + ey) - fwd(xa - ey)) / (2 * fd_h)
        a, c = j11_12[:, 0], j11_12[:, 1]
        b, d = j21_22[:, 0], j21_22[:, 1]
        det = a * d - b * c
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dx = (d * ra[:, 0] - b * ra[:, 1]) / det
        dy = (-c * ra[:, 0] + a * ra[:, 1]) / det
        step = np.column_stack([dx, dy])
        if not np.all(np.isfinite(step)):
            raise InverseNotFound("singular Jacobian in Newton iteration")
        old_err = np.max(np.abs(ra), axis=1)
        lam = np.ones(len(xa))
        for _ in range(5):
            trial = xa - lam[:, None] * step
            r_trial = fwd(trial.copy()) - ta
            new_err = np.max(np.abs(r_trial), axis=1)
            worse = (new_err > old_err) & (old_err > tol)
            if not np.any(worse):
                break
            lam = np.where(worse, lam / 2.0, lam)
        x[active] = trial
        resid[active] = r_trial
    else:
        bad = int(np.sum(np.max(np.abs(resid), axis=1) > tol))
        if bad:
            raise InverseNotFound(
                f"Newton inversion failed for {bad} of {n} points "
                f"(max residual {np.max(np.abs(resid)):.3e})"
            )
    return x


# ---------------------------------------------------------------------------
# Hamiltonian flows


@dataclass(frozen=True)
class Hamiltonian:
    """Time-dependent Hamiltonian H(t, points) -> (N,) values."""

    value: Callable[[float, np.ndarray], np.ndarray]
    grad: Callable[[float, np.ndarray], np.ndarray] | None = None
    support: Region | None = None
    time_interval: tuple[float, float] = (0.0, 1.0)

    def gradient(self, t: float, pts: np.ndarray, h: float = 1e-6) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(t, pts), dtype=float)
        ex = np.zeros_like(pts)
        ex[:, 0] = h
        ey = np.zeros_like(pts)
        ey[:, 1] = h
        gx = (self.value(t, pts + ex) - self.value(t, pts - ex)) / (2 * h)
        gy = (self.value(t, pts + ey) - self.value(t, pts - ey)) / (2 * h)
        return np.column_stack([gx, gy])

    def field(self, t: float, pts: np.ndarray) -> np.ndarray:
        """Symplectic gradient: X = (dH/dy, -dH/dx) for the form dx dy."""
        g = self.gradient(t, pts)
        return np.column_stack([g[:, 1], -g[:, 0]])

    @staticmethod
    def autonomous(f, grad=None, support=None) -> "Hamiltonian":
        g = None if grad is None else (lambda t, pts: grad(pts))
        return Hamiltonian(value=lambda t, pts: f(pts), grad=g, support=support)


def _integrate_midpoint(field, pts, t0, t1, steps, fp_tol=1e-14, fp_max=60):
    p = pts.copy()
    dt = (t1 - t0) / steps
    scale = max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    for k in range(steps):
        tm = t0 + (k + 0.5) * dt
        z = p + dt * field(tm, p)
        prev = np.inf
        for _ in range(fp_max):
            z_new = p + dt * field(tm, 0.5 * (p + z))
            delta = np.max(np.abs(z_new - z)) if z.size else 0.0
            z = z_new
            if delta < fp_tol * scale:
                break
            if delta >= 0.5 * prev and delta < 1e-9 * scale:
                # Stagnated at the field evaluator's noise floor.  Spline
                # fields carry a seam mismatch of a few 1e-10 on periodic
                # charts; the iterate then bounces between two values that
                # straddle the true fixed point, so accepting here costs at
                # most one bounce of positional error.
                break
            prev = delta
        else:
            raise FlowDiverged(
                f"implicit midpoint fixed point did not converge at t={tm:.4f}"
            )
        if not np.all(np.isfinite(z)):
            raise FlowDiverged(f"flow produced non-finite values at t={tm:.4f}")
        p = z
    return p


def hamiltonian_flow(H: Hamiltonian, chart: Chart, steps: int = 64,
                     name: str = "flow") -> AreaMap:
    """Time-one map of the Hamiltonian field by the implicit midpoint rule.

    The backward flow is the exact numerical inverse because the midpoint
    rule is time-symmetric.
    """
    if steps < 16:
        raise ValueError("hamiltonian_flow needs steps >= 16")
    t0, t1 = H.time_interval
    support = H.support

    def fwd(pts):
        if support is None:
            return _integrate_midpoint(H.field, pts, t0, t1, steps)
        out = pts.copy()
        mask = support.contains(pts)
        if np.any(mask):
            out[mask] = _integrate_midpoint(H.field, pts[mask].copy(), t0, t1, steps)
        return out

    def inv(pts):
        if support is None:
            return _integrate_midpoint(H.field, pts, t1, t0, steps)
        out = pts.copy()
        mask = support.contains(pts)
        if np.any(mask):
            out[mask] = _integrate_midpoint(H.field, pts[mask].copy(), t1, t0, steps)
        return out

    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name,
        support=support,
        provenance={"kind": "flow", "steps": steps, "time": [t0, t1]},
        exactness=Exactness("numeric"),
    )


# ---------------------------------------------------------------------------
# Named constructions


def _validate_ramp_profile(profile, halfwidth: float):
    lo, hi = profile.lo, profile.hi
    if not (-halfwidth <= lo < hi <= halfwidth):
        raise ProfileInvalid(
            f"profile ramp [{lo}, {hi}] must sit inside [-{halfwidth}, {halfwidth}]"
        )
    ys = np.linspace(lo, hi, 512)
    if np.any(profile.deriv(ys) < -1e-12):
        raise ProfileInvalid("profile must be monotone non-decreasing")
    if abs(profile.value(-halfwidth)) > 1e-12 or abs(profile.value(halfwidth) - 1.0) > 1e-12:
        raise ProfileInvalid("profile must run from 0 at the bottom to 1 at the top")


def shear_psi_epsilon(eps: float, profile: StepProfile | None = None,
                      chart: Annulus | None = None) -> AreaMap:
    """Horizontal shear (x, y) -> (x + eps * profile'(y), y).

    The generating function is eps * profile(y); the map transports the
    quantity eps across the annulus per unit circumference.
    """
    chart = chart or Annulus(1.0)
    profile = profile or StepProfile(-chart.halfwidth, chart.halfwidth)
    _validate_ramp_profile(profile, chart.halfwidth)
    return band_shear(eps, profile, chart, name=f"shear({eps:g})")


def band_shear(eps: float, profile, chart: Chart, axis: str = "x",
               name: str | None = None) -> AreaMap:
    """Shear along ``axis`` with displacement eps * profile'(transverse).

    The transverse coordinate is wrapped into the profile's home window on
    periodic charts, so the evaluator is deck-equivariant.
    """
    mid = 0.5 * (profile.lo + profile.hi)
    t_axis = 1 if axis == "x" else 0
    period = chart.periods[t_axis]

    def transverse(pts):
        c = pts[:, t_axis]
        if period is not None:
            c = mid + (c - mid) - period * np.round((c - mid) / period)
        return c

    if axis == "x":
        def fwd(pts):
            pts[:, 0] += eps * profile.deriv(transverse(pts))
            return pts

        def inv(pts):
            pts[:, 0] -= eps * profile.deriv(transverse(pts))
            return pts

        support = Band(profile.lo, profile.hi, "y", chart)
    else:
        def fwd(pts):
            pts[:, 1] += eps * profile.deriv(transverse(pts))
            return pts

        def inv(pts):
            pts[:, 1] -= eps * profile.deriv(transverse(pts))
            return pts

        support = Band(profile.lo, profile.hi, "x", chart)
    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=name or f"band_shear({eps:g},{axis})",
        support=support,
        provenance={
            "kind": "formula",
            "formula": "shear",
            "eps": eps,
            "axis": axis,
            "ramp": [profile.lo, profile.hi],
        },
        exactness=EXACT,
    )


def dehn_twist(chart: GluedTorus, cylinder: int, direction: int = 1) -> AreaMap:
    """Full twist supported in one of the two narrow cylinders (1 or 3)."""
    if cylinder not in (1, 3):
        raise BadCylinder(f"twists are supported on cylinders 1 and 3, got {cylinder}")
    if direction not in (-1, 1):
        raise BadCylinder(f"direction must be +-1, got {direction}")
    lo, hi, _ = chart.blocks[cylinder - 1]
    ramp = StepProfile(lo, hi)
    L = chart.total_height

    def g(y):
        return ramp.value(np.mod(y, L))

    def fwd(pts):
        pts[:, 0] += direction * g(pts[:, 1])
        return pts

    def inv(pts):
        pts[:, 0] -= direction * g(pts[:, 1])
        return pts

    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=f"twist(c{cylinder},{direction:+d})",
        support=Band(lo, hi, "y", chart),
        provenance={"kind": "formula", "formula": "dehn_twist",
                    "cylinder": cylinder, "direction": direction},
        exactness=EXACT,
    )


def alexander_isotopy(psi: AreaMap, s: float, disk: DiskRegion | None = None) -> AreaMap:
    """Conjugate by scaling about the disk center: supported in the s-scaled disk.

    At s = 1 this is psi; as s -> 0 it contracts to the identity while the
    sup norm never exceeds the norm of psi.
    """
    if not (0.0 < s <= 1.0):
        raise ValueError(f"scale parameter must lie in (0, 1], got {s}")
    if disk is None:
        if not isinstance(psi.support, DiskRegion):
            raise SupportNotCompact(
                "alexander_isotopy needs a disk-supported map (pass disk=)"
            )
        disk = psi.support
    _check_disk_support(psi, disk)
    c = np.array([disk.cx, disk.cy])
    chart = psi.chart
    px, py = chart.periods

    def to_local(pts):
        d = pts - c
        if px is not None:
            d[:, 0] -= px * np.round(d[:, 0] / px)
        if py is not None:
            d[:, 1] -= py * np.round(d[:, 1] / py)
        return d

    def fwd(pts):
        d = to_local(pts)
        r = np.hypot(d[:, 0], d[:, 1])
        mask = r <= s * disk.r
        if np.any(mask):
            inner = c + d[mask] / s
            moved = psi.evaluate(inner)
            pts[mask] += s * (moved - inner)
        return pts

    def inv(pts):
        d = to_local(pts)
        r = np.hypot(d[:, 0], d[:, 1])
        mask = r <= s * disk.r
        if np.any(mask):
            inner = c + d[mask] / s
            moved = psi.inverse(inner)
            pts[mask] += s * (moved - inner)
        return pts

    return AreaMap(
        chart=chart,
        fwd=fwd,
        inv=inv,
        name=f"alexander({psi.name},s={s:g})",
        support=DiskRegion(disk.cx, disk.cy, s * disk.r, disk.chart),
        provenance={"kind": "composite", "construction": "alexander",
                    "s": s, "of": psi.provenance},
        exactness=psi.exactness,
        kinks=psi.kinks + (KinkCircle(disk.cx, disk.cy, s * disk.r),),
        children=(psi,),
    )


def _check_disk_support(psi: AreaMap, disk: DiskRegion, n: int = 256):
    """The map must be exactly the identity on a ring at the disk boundary."""
    for frac in (0.999, 0.9999, 1.0):
        theta = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        ring = np.column_stack(
            [disk.cx + frac * disk.r * np.cos(theta),
             disk.cy + frac * disk.r * np.sin(theta)]
        )
        moved = psi.evaluate(ring)
        if np.max(np.abs(moved - ring)) > 1e-11:
            raise SupportNotCompact(
                "map moves points on the disk boundary ring; its support "
                "must be compactly contained in the disk"
            )


# ---------------------------------------------------------------------------
# Area verification


@dataclass(frozen=True)
class AreaReport:
    max_det_residual: float
    mean_det_residual: float
    max_cell_residual: float
    grid: int
    fd_step: float
    skipped: int

    def ok(self, tol: float) -> bool:
        return self.max_det_residual < tol


def _kink_mask(pts: np.ndarray, kinks: tuple, margin: float, chart: Chart) -> np.ndarray:
    keep = np.ones(pts.shape[0], dtype=bool)
    px, py = chart.periods
    for k in kinks:
        if isinstance(k, KinkLine):
            c = pts[:, 1] if k.axis == "y" else pts[:, 0]
            period = py if k.axis == "y" else px
            d = c - k.value
            if period is not None:
                d -= period * np.round(d / period)
            keep &= np.abs(d) > margin
        elif isinstance(k, KinkCircle):
            dx = pts[:, 0] - k.cx
            dy = pts[:, 1] - k.cy
            if px is not None:
                dx -= px * np.round(dx / px)
            if py is not None:
                dy -= py * np.round(dy / py)
            keep &= np.abs(np.hypot(dx, dy) - k.r) > margin
    return keep


def verify_area(m: AreaMap, chart: Chart | None = None, n: int = 64,
                h: float = 3e-5, kink_margin: float | None = None,
                cells: int = 16) -> AreaReport:
    """Jacobian-determinant and transported-cell-measure residuals.

    The determinant uses central differences and accounts for a
    non-constant area density.  Sample points within ``kink_margin`` of a
    declared derivative discontinuity are skipped (the maps there are
    homeomorphism-grade rather than C1, which finite differences cannot
    see past); transported cells still measure those zones integrally.
    """
    chart = chart or m.chart
    x0, x1, y0, y1 = chart.sampling_box
    xs = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
    ys = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = chart.contains(pts)
    pts = pts[inside]
    skipped = 0
    if m.kinks:
        margin = kink_margin if kink_margin is not None else 120 * h
        keep = _kink_mask(pts, m.kinks, margin, chart)
        skipped = int(np.sum(~keep))
        pts = pts[keep]

    ex = np.zeros_like(pts)
    ex[:, 0] = h
    ey = np.zeros_like(pts)
    ey[:, 1] = h
    fxp = m.evaluate(pts + ex)
    fxm = m.evaluate(pts - ex)
    fyp = m.evaluate(pts + ey)
    fym = m.evaluate(pts - ey)
    j11 = (fxp[:, 0] - fxm[:, 0]) / (2 * h)
    j21 = (fxp[:, 1] - fxm[:, 1]) / (2 * h)
    j12 = (fyp[:, 0] - fym[:, 0]) / (2 * h)
    j22 = (fyp[:, 1] - fym[:, 1]) / (2 * h)
    det = j11 * j22 - j12 * j21
    rho0 = np.atleast_1d(chart.area_density(pts))
    rho1 = np.atleast_1d(chart.area_density(m.evaluate(pts)))
    resid = np.abs(det * rho1 / rho0 - 1.0)
    max_det = float(np.max(resid)) if len(resid) else 0.0
    mean_det = float(np.mean(resid)) if len(resid) else 0.0

    max_cell = _cell_residual(m, chart, cells)
    return AreaReport(max_det, mean_det, max_cell, n, h, skipped)


def _primitive_y(chart: Chart, y: np.ndarray) -> np.ndarray:
    """Antiderivative of the area density along y (flattening coordinate)."""
    if isinstance(chart, GluedTorus):
        ys = np.asarray(y, dtype=float)
        grid = np.linspace(
            float(np.min(ys)) - 1e-9, float(np.max(ys)) + 1e-9, 4097
        )
        vals = chart.circumference(np.mod(grid, chart.total_height))
        prim = np.concatenate([[0.0], cumulative_trapezoid(vals, grid)])
        return np.interp(ys, grid, prim)
    return np.asarray(y, dtype=float)


def _cell_residual(m: AreaMap, chart: Chart, cells: int) -> float:
    x0, x1, y0, y1 = chart.sampling_box
    xs = np.linspace(x0, x1, cells + 1)
    ys = np.linspace(y0, y1, cells + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    keep_grid = chart.contains(corners).reshape(cells + 1, cells + 1)
    img = m.evaluate(corners)
    u = img[:, 0].reshape(cells + 1, cells + 1)
    v = _primitive_y(chart, img[:, 1]).reshape(cells + 1, cells + 1)
    pv = _primitive_y(chart, gy.ravel()).reshape(cells + 1, cells + 1)

    worst = 0.0
    for i in range(cells):
        for j in range(cells):
            if not (keep_grid[i, j] and keep_grid[i + 1, j]
                    and keep_grid[i + 1, j + 1] and keep_grid[i, j + 1]):
                continue
            qx = np.array([u[i, j], u[i + 1, j], u[i + 1, j + 1], u[i, j + 1]])
            qy = np.array([v[i, j], v[i + 1, j], v[i + 1, j + 1], v[i, j + 1]])
            area = 0.5 * abs(np.sum(qx * np.roll(qy, -1) - np.roll(qx, -1) * qy))
            ref = abs((xs[i + 1] - xs[i]) * (pv[i, j + 1] - pv[i, j]))
            if ref > 0:
                worst = max(worst, abs(area - ref) / ref)
    return float(worst)
