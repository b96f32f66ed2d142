"""Surface models, curves, lifts, signed areas, and C0-distance measurement.

Conventions used throughout the package:

* Every chart has a fundamental domain in the (x, y) plane.  Periodic
  directions are recorded in ``periods`` (None when a direction is not
  periodic).  Map evaluators act on universal-cover coordinates and are
  required to be deck-equivariant, so curve lifting never needs to unwrap
  their output.
* ``signed_area_between(a, b)`` is the Green's-theorem area of the closed
  polyline a . reverse(b), positive when b lies above a in increasing
  second coordinate.
* Distances are geodesic distances of the piecewise-flat model.  The
  glued-cylinder torus exposes certified lower/upper displacement bounds
  next to an approximate Dijkstra distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    BadCylinder,
    HomotopyClassMismatch,
    LiftAmbiguity,
    LiftWindowExceeded,
    MapEvaluationError,
)
from .profiles import smoothstep


def as_points(pts) -> np.ndarray:
    """Coerce to an (N, 2) float array; single points become (1, 2)."""
    arr = np.asarray(pts, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != 2:
            raise ValueError(f"a point needs 2 coordinates, got shape {arr.shape}")
        return arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) array, got shape {arr.shape}")
    return arr


def _wrap_delta(d: np.ndarray, period: float | None) -> np.ndarray:
    """Wrap coordinate differences to the symmetric fundamental interval."""
    if period is None:
        return d
    return d - period * np.round(d / period)


# ---------------------------------------------------------------------------
# Charts


class Chart:
    """Base class; concrete charts are frozen dataclasses."""

    kind: str = "abstract"

    @property
    def periods(self) -> tuple[float | None, float | None]:
        raise NotImplementedError

    @property
    def domain(self) -> tuple[float, float, float, float]:
        """Fundamental domain (x0, x1, y0, y1)."""
        raise NotImplementedError

    def wrap(self, pts) -> np.ndarray:
        pts = as_points(pts).copy()
        px, py = self.periods
        x0, _, y0, _ = self.domain
        if px is not None:
            pts[:, 0] = x0 + np.mod(pts[:, 0] - x0, px)
        if py is not None:
            pts[:, 1] = y0 + np.mod(pts[:, 1] - y0, py)
        return pts

    def area_density(self, pts) -> np.ndarray:
        """Density of the area form relative to dx dy."""
        return np.ones(as_points(pts).shape[0])

    def displacement_bounds(self, p, q) -> tuple[np.ndarray, np.ndarray]:
        """Certified (lower, upper) bounds on geodesic distance d(p, q)."""
        d = self.distance(p, q)
        return d, d

    def distance(self, p, q) -> np.ndarray:
        raise NotImplementedError

    def contains(self, pts) -> np.ndarray:
        """Mask of points inside the chart's valid region."""
        return np.ones(as_points(pts).shape[0], dtype=bool)

    @property
    def sampling_box(self) -> tuple[float, float, float, float]:
        return self.domain

    @property
    def lift_scale(self) -> float:
        """Length scale below which incremental lifts are unambiguous."""
        px, py = self.periods
        scales = [p for p in (px, py) if p is not None]
        return min(scales) / 2.0 if scales else math.inf


def _flat_distance(chart: Chart, p, q) -> np.ndarray:
    p = as_points(p)
    q = as_points(q)
    px, py = chart.periods
    dx = _wrap_delta(q[:, 0] - p[:, 0], px)
    dy = _wrap_delta(q[:, 1] - p[:, 1], py)
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class Annulus(Chart):
    """S1 x [-halfwidth, halfwidth] with unit circumference."""

    halfwidth: float = 1.0
    period_x: float = 1.0
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        if self.halfwidth <= 0 or self.period_x <= 0:
            raise ValueError("annulus needs halfwidth > 0 and period_x > 0")

    @property
    def periods(self):
        return (self.period_x, None)

    @property
    def domain(self):
        return (0.0, self.period_x, -self.halfwidth, self.halfwidth)

    def distance(self, p, q):
        return _flat_distance(self, p, q)

    def contains(self, pts):
        pts = as_points(pts)
        return np.abs(pts[:, 1]) <= self.halfwidth + 1e-12


@dataclass(frozen=True)
class FlatTorus(Chart):
    px: float = 1.0
    py: float = 1.0
    kind: str = field(default="torus", init=False)

    def __post_init__(self):
        if self.px <= 0 or self.py <= 0:
            raise ValueError("torus periods must be positive")

    @property
    def periods(self):
        return (self.px, self.py)

    @property
    def domain(self):
        return (0.0, self.px, 0.0, self.py)

    def distance(self, p, q):
        return _flat_distance(self, p, q)


@dataclass(frozen=True)
class Disk(Chart):
    radius: float = 1.0
    kind: str = field(default="disk", init=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")

    @property
    def periods(self):
        return (None, None)

    @property
    def domain(self):
        r = self.radius
        return (-r, r, -r, r)

    def distance(self, p, q):
        return _flat_distance(self, p, q)

    def contains(self, pts):
        pts = as_points(pts)
        return np.hypot(pts[:, 0], pts[:, 1]) <= self.radius + 1e-12


@dataclass(frozen=True)
class GluedTorus(Chart):
    """Four flat cylinders glued in a cycle.

    Blocks along y: a square cylinder of circumference 2a, a collar, a
    square cylinder of circumference 2b, a collar, then the same pattern
    repeated.  x is the angular coordinate normalized to period 1; the
    metric is c(y)^2 dx^2 + dy^2 and the area form c(y) dx dy, where c
    interpolates the circumferences smoothly across collars.
    """

    a: float
    b: float
    collar: float | None = None
    dijkstra_edge: float | None = None
    kind: str = field(default="glued_torus", init=False)

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise BadCylinder(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if self.collar is None:
            object.__setattr__(self, "collar", min(self.a, self.b) / 4.0)
        if self.collar <= 0:
            raise BadCylinder("collar width must be positive")

    @property
    def total_height(self) -> float:
        return 4.0 * self.a + 4.0 * self.b + 4.0 * self.collar

    @property
    def periods(self):
        return (1.0, self.total_height)

    @property
    def domain(self):
        return (0.0, 1.0, 0.0, self.total_height)

    @cached_property
    def blocks(self) -> tuple[tuple[float, float, float], ...]:
        """(y_lo, y_hi, circumference) for the four flat blocks, in order."""
        a, b, w = self.a, self.b, self.collar
        out = []
        y = 0.0
        for c in (2 * a, 2 * b, 2 * a, 2 * b):
            out.append((y, y + c, c))
            y += c + w
        return tuple(out)

    def circumference(self, y) -> np.ndarray:
        y = np.mod(np.asarray(y, dtype=float), self.total_height)
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        c = np.empty_like(y)
        blocks = self.blocks
        w = self.collar
        c[:] = np.nan
        for lo, hi, circ in blocks:
            inside = (y >= lo) & (y <= hi)
            c[inside] = circ
        for i, (lo, hi, circ) in enumerate(blocks):
            nxt = blocks[(i + 1) % 4][2]
            in_collar = (y > hi) & (y < hi + w) if i < 3 else (y > hi)
            u = (y - hi) / w
            c = np.where(in_collar, circ + (nxt - circ) * smoothstep(u), c)
        return float(c[0]) if scalar else c

    def circumference_lipschitz(self) -> float:
        return 1.5 * abs(2 * self.b - 2 * self.a) / self.collar

    def area_density(self, pts):
        pts = as_points(pts)
        return np.atleast_1d(self.circumference(pts[:, 1]))

    def block_index(self, y) -> np.ndarray:
        """Block index 0..3 for points in a flat block, -1 in collars."""
        y = np.mod(np.atleast_1d(np.asarray(y, dtype=float)), self.total_height)
        idx = np.full(y.shape, -1, dtype=int)
        for i, (lo, hi, _) in enumerate(self.blocks):
            idx[(y >= lo) & (y <= hi)] = i
        return idx

    # -- certified displacement bounds ------------------------------------

    def displacement_bounds(self, p, q):
        p = as_points(p)
        q = as_points(q)
        L = self.total_height
        yp = np.mod(p[:, 1], L)
        yq = np.mod(q[:, 1], L)
        dx = _wrap_delta(q[:, 0] - p[:, 0], 1.0)
        dy = _wrap_delta(yq - yp, L)
        cmin = 2.0 * self.a

        lb = np.hypot(cmin * np.abs(dx), dy)

        bi_p = self.block_index(yp)
        bi_q = self.block_index(yq)
        same = (bi_p == bi_q) & (bi_p >= 0)
        if np.any(same):
            los = np.array([blk[0] for blk in self.blocks] + [0.0])
            his = np.array([blk[1] for blk in self.blocks] + [0.0])
            circs = np.array([blk[2] for blk in self.blocks] + [cmin])
            lo = los[bi_p]
            hi = his[bi_p]
            circ = circs[bi_p]
            in_band = np.hypot(circ * np.abs(dx), yq - yp)
            exit_p = np.minimum(yp - lo, hi - yp)
            exit_q = np.minimum(yq - lo, hi - yq)
            band_lb = np.minimum(in_band, exit_p + exit_q)
            lb = np.where(same, np.maximum(lb, band_lb), lb)

        ub = self._straight_upper(p[:, 0], yp, dx, dy)
        ub = np.minimum(ub, self._block_route_upper(yp, yq, dx))
        ub = np.maximum(ub, lb)
        return lb, ub

    def _straight_upper(self, xp, yp, dx, dy, segments: int = 96):
        """Length of the straight coordinate path, with a strict c bound."""
        t = np.linspace(0.0, 1.0, segments + 1)
        ys = yp[:, None] + dy[:, None] * t[None, :]
        cs = np.atleast_2d(self.circumference(np.mod(ys, self.total_height)))
        lam = self.circumference_lipschitz()
        seg_dy = np.abs(dy)[:, None] / segments
        cmax = np.maximum(cs[:, 1:], cs[:, :-1]) + lam * seg_dy / 2.0
        seg_dx = np.abs(dx)[:, None] / segments
        return np.sum(np.hypot(cmax * seg_dx, seg_dy), axis=1)

    def _block_route_upper(self, yp, yq, dx):
        """Vertical-horizontal-vertical route through each flat block."""
        L = self.total_height
        best = np.full(yp.shape, np.inf)
        for lo, hi, circ in self.blocks:
            for ystar in (lo + 1e-9, (lo + hi) / 2.0, hi - 1e-9):
                up_p = np.mod(ystar - yp, L)
                dn_p = np.mod(yp - ystar, L)
                up_q = np.mod(ystar - yq, L)
                dn_q = np.mod(yq - ystar, L)
                vert = np.minimum(up_p, dn_p) + np.minimum(up_q, dn_q)
                best = np.minimum(best, vert + circ * np.abs(dx))
        return best

    # -- approximate geodesics ---------------------------------------------

    @cached_property
    def _graph(self):
        import scipy.sparse as sp

        h = self.dijkstra_edge if self.dijkstra_edge is not None else self.b / 256.0
        L = self.total_height
        ny = max(16, int(round(L / h)))
        nx = max(16, int(round(2.0 * self.b / h)))
        ys = np.arange(ny) * (L / ny)
        xs = np.arange(nx) * (1.0 / nx)
        rows, cols, vals = [], [], []
        idx = np.arange(nx * ny).reshape(ny, nx)
        cmid = self.circumference(ys)
        for dj, di in ((0, 1), (1, 0), (1, 1), (1, -1)):
            j2 = (np.arange(ny) + dj) % ny
            i2 = (np.arange(nx) + di) % nx
            src = idx
            dst = idx[j2][:, i2]
            dyv = dj * (L / ny)
            cseg = np.maximum(cmid, self.circumference((ys + dyv) % L))
            dxv = abs(di) * (1.0 / nx)
            w = np.hypot(cseg[:, None] * dxv, dyv) * np.ones((1, nx))
            rows.append(src.ravel())
            cols.append(dst.ravel())
            vals.append(w.ravel())
        n = nx * ny
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return m.tocsr(), xs, ys, nx, ny

    def _node_of(self, pts):
        _, xs, ys, nx, ny = self._graph
        pts = self.wrap(pts)
        i = np.round(pts[:, 0] * nx).astype(int) % nx
        j = np.round(pts[:, 1] / (self.total_height / ny)).astype(int) % ny
        return j * nx + i

    def distance(self, p, q):
        """Approximate geodesic distance via Dijkstra on the cached graph."""
        from scipy.sparse.csgraph import dijkstra

        graph = self._graph[0]
        p = as_points(p)
        q = as_points(q)
        src = self._node_of(p)
        dst = self._node_of(q)
        out = np.empty(p.shape[0])
        for s in np.unique(src):
            dists = dijkstra(graph, directed=False, indices=s)
            mask = src == s
            out[mask] = dists[dst[mask]]
        return out


# ---------------------------------------------------------------------------
# Support regions


class Region:
    """Chart subset with containment tests; identity is asserted outside."""

    def contains(self, pts) -> np.ndarray:
        raise NotImplementedError

    def thickened(self, d: float) -> "Region":
        raise NotImplementedError


@dataclass(frozen=True)
class EverythingRegion(Region):
    def contains(self, pts):
        return np.ones(as_points(pts).shape[0], dtype=bool)

    def thickened(self, d):
        return self


@dataclass(frozen=True)
class Band(Region):
    """axis='y': all x, y in [lo, hi]; axis='x' the transpose."""

    lo: float
    hi: float
    axis: str = "y"
    chart: Chart | None = None

    def contains(self, pts):
        pts = as_points(pts)
        c = pts[:, 1] if self.axis == "y" else pts[:, 0]
        if self.chart is not None:
            period = self.chart.periods[1 if self.axis == "y" else 0]
            if period is not None:
                mid = 0.5 * (self.lo + self.hi)
                c = mid + _wrap_delta(c - mid, period)
        return (c >= self.lo) & (c <= self.hi)

    def thickened(self, d):
        return Band(self.lo - d, self.hi + d, self.axis, self.chart)


@dataclass(frozen=True)
class RectRegion(Region):
    x0: float
    x1: float
    y0: float
    y1: float
    chart: Chart | None = None

    def _rel(self, pts):
        pts = as_points(pts)
        cx = 0.5 * (self.x0 + self.x1)
        cy = 0.5 * (self.y0 + self.y1)
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        if self.chart is not None:
            px, py = self.chart.periods
            dx = _wrap_delta(dx, px)
            dy = _wrap_delta(dy, py)
        return dx, dy

    def contains(self, pts):
        dx, dy = self._rel(pts)
        hx = 0.5 * (self.x1 - self.x0)
        hy = 0.5 * (self.y1 - self.y0)
        # the centered form rounds differently than the raw bounds, and an
        # edge can land one ulp outside; boundary points must count as in
        return (np.abs(dx) <= hx + 1e-12) & (np.abs(dy) <= hy + 1e-12)

    def thickened(self, d):
        return RectRegion(self.x0 - d, self.x1 + d, self.y0 - d, self.y1 + d, self.chart)


@dataclass(frozen=True)
class DiskRegion(Region):
    cx: float
    cy: float
    r: float
    chart: Chart | None = None

    def contains(self, pts):
        pts = as_points(pts)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        if self.chart is not None:
            px, py = self.chart.periods
            dx = _wrap_delta(dx, px)
            dy = _wrap_delta(dy, py)
        return np.hypot(dx, dy) <= self.r

    def thickened(self, d):
        return DiskRegion(self.cx, self.cy, self.r + d, self.chart)


@dataclass(frozen=True)
class AnnulusRegion(Region):
    """Points with r_in <= |p - center| <= r_out (wrapped on periodic charts)."""

    cx: float
    cy: float
    r_in: float
    r_out: float
    chart: Chart | None = None

    def contains(self, pts):
        pts = as_points(pts)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        if self.chart is not None:
            px, py = self.chart.periods
            dx = _wrap_delta(dx, px)
            dy = _wrap_delta(dy, py)
        r = np.hypot(dx, dy)
        return (r >= self.r_in) & (r <= self.r_out)

    def thickened(self, d):
        return AnnulusRegion(self.cx, self.cy, max(self.r_in - d, 0.0), self.r_out + d, self.chart)


@dataclass(frozen=True)
class TubeRegion(Region):
    """Rectangle around the segment p0 -> p1, in the segment's own frame.

    Extends from x = x_lo to x = length - x_lo along the segment and
    halfwidth to both sides; x_lo may be negative to extend past the ends.
    """

    p0: tuple[float, float]
    p1: tuple[float, float]
    halfwidth: float
    x_lo: float = 0.0
    chart: Chart | None = None

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def frame(self):
        ex = np.array([self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]]) / self.length
        ey = np.array([-ex[1], ex[0]])
        return ex, ey

    def to_frame(self, pts):
        pts = as_points(pts)
        dx = pts[:, 0] - self.p0[0]
        dy = pts[:, 1] - self.p0[1]
        if self.chart is not None:
            px, py = self.chart.periods
            dx = _wrap_delta(dx, px)
            dy = _wrap_delta(dy, py)
        ex, ey = self.frame
        return dx * ex[0] + dy * ex[1], dx * ey[0] + dy * ey[1]

    def contains(self, pts):
        u, v = self.to_frame(pts)
        return (u >= self.x_lo) & (u <= self.length - self.x_lo) & (np.abs(v) <= self.halfwidth)

    def thickened(self, d):
        return TubeRegion(self.p0, self.p1, self.halfwidth + d, self.x_lo - d, self.chart)


@dataclass(frozen=True)
class UnionRegion(Region):
    parts: tuple[Region, ...]

    def contains(self, pts):
        pts = as_points(pts)
        mask = np.zeros(pts.shape[0], dtype=bool)
        for part in self.parts:
            mask |= part.contains(pts)
        return mask

    def thickened(self, d):
        return UnionRegion(tuple(p.thickened(d) for p in self.parts))


# ---------------------------------------------------------------------------
# Curves


@dataclass(frozen=True)
class Curve:
    """Oriented polyline in universal-cover coordinates.

    ``period_class`` records the integer deck translation from first to
    last vertex; it must be exact for closed curves.
    """

    vertices: np.ndarray
    closed: bool = False
    period_class: tuple[int, int] = (0, 0)
    chart: Chart | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise ValueError("curve needs at least two (x, y) vertices")
        steps = np.diff(v, axis=0)
        if np.any(np.all(steps == 0.0, axis=1)):
            raise ValueError("consecutive curve vertices must be distinct")
        if self.closed:
            if self.chart is None:
                raise ValueError("closed curves need a chart for period bookkeeping")
            px, py = self.chart.periods
            tx = (px or 0.0) * self.period_class[0]
            ty = (py or 0.0) * self.period_class[1]
            gap = v[-1] - v[0] - np.array([tx, ty])
            if np.max(np.abs(gap)) > 1e-9:
                raise ValueError(
                    f"closed curve endpoint gap {gap} inconsistent with "
                    f"period class {self.period_class}"
                )

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    def reversed(self) -> "Curve":
        kx, ky = self.period_class
        return Curve(self.vertices[::-1].copy(), self.closed, (-kx, -ky), self.chart)

    def translated(self, tx: float, ty: float) -> "Curve":
        return Curve(self.vertices + np.array([tx, ty]), self.closed, self.period_class, self.chart)

    def refined(self) -> "Curve":
        """Insert the midpoint of every segment."""
        v = self.vertices
        mid = 0.5 * (v[:-1] + v[1:])
        out = np.empty((2 * len(v) - 1, 2))
        out[0::2] = v
        out[1::2] = mid
        return Curve(out, self.closed, self.period_class, self.chart)

    def is_simple(self) -> bool:
        """Segment-intersection sweep; O(n^2) pairwise check."""
        v = self.vertices
        seg_a = v[:-1]
        seg_b = v[1:]
        n = len(seg_a)
        for i in range(n):
            a1, a2 = seg_a[i], seg_b[i]
            for j in range(i + 2, n):
                if self.closed and i == 0 and j == n - 1:
                    continue
                b1, b2 = seg_a[j], seg_b[j]
                if _segments_cross(a1, a2, b1, b2):
                    return False
        return True

    @staticmethod
    def from_function(f, t0: float, t1: float, n: int, chart=None, closed=False,
                      period_class=(0, 0)) -> "Curve":
        t = np.linspace(t0, t1, n + 1)
        pts = np.array([f(ti) for ti in t], dtype=float)
        return Curve(pts, closed, period_class, chart)


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _segments_cross(a1, a2, b1, b2) -> bool:
    d1 = _cross2(a2 - a1, b1 - a1)
    d2 = _cross2(a2 - a1, b2 - a1)
    d3 = _cross2(b2 - b1, a1 - b1)
    d4 = _cross2(b2 - b1, a2 - b1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def crossing_arc(chart: Annulus, x: float = 0.0, n: int = 256) -> Curve:
    """Vertical arc from the bottom to the top boundary at fixed x."""
    hw = chart.halfwidth
    ys = np.linspace(-hw, hw, n + 1)
    pts = np.column_stack([np.full(n + 1, x), ys])
    return Curve(pts, closed=False, chart=chart)


def horizontal_circle(chart, y: float, n: int = 256) -> Curve:
    px = chart.periods[0]
    xs = np.linspace(0.0, px, n + 1)
    pts = np.column_stack([xs, np.full(n + 1, y)])
    return Curve(pts, closed=True, period_class=(1, 0), chart=chart)


def shoelace(poly: np.ndarray) -> float:
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * float(
        np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    )


def signed_area_between(a: Curve, b: Curve, chart: Chart | None = None) -> float:
    """Signed area of the chain swept from a to b.

    Positive when b lies above a in increasing second coordinate.  Arcs
    must share endpoints up to a deck translation (which is applied to b);
    closed curves must share their period class.
    """
    chart = chart or a.chart or b.chart
    if a.closed != b.closed:
        raise HomotopyClassMismatch("cannot compare an arc with a closed loop")
    px, py = chart.periods if chart is not None else (None, None)

    if a.closed:
        if a.period_class != b.period_class:
            raise HomotopyClassMismatch(
                f"period classes differ: {a.period_class} vs {b.period_class}"
            )
        b_al = _deck_translate_to(a.start, b, px, py)
    else:
        b_al = _deck_translate_to(a.start, b, px, py)
        if np.max(np.abs(b_al.start - a.start)) > 1e-7 or \
           np.max(np.abs(b_al.end - a.end)) > 1e-7:
            raise HomotopyClassMismatch(
                "arcs must share both endpoints up to a deck translation; "
                f"got start gap {b_al.start - a.start}, end gap {b_al.end - a.end}"
            )

    _check_lift_window(a, b_al, px, py)
    poly = np.vstack([a.vertices, b_al.vertices[::-1]])
    return shoelace(poly)


def _deck_translate_to(anchor, b: Curve, px, py) -> Curve:
    """Translate b by whole periods so its start is nearest the anchor."""
    tx = ty = 0.0
    if px is not None:
        tx = px * round((anchor[0] - b.start[0]) / px)
    if py is not None:
        ty = py * round((anchor[1] - b.start[1]) / py)
    return b.translated(tx, ty) if (tx or ty) else b


def _check_lift_window(a: Curve, b: Curve, px, py):
    for dim, period in ((0, px), (1, py)):
        if period is None:
            continue
        k = a.period_class[dim] if a.closed else 0
        for c in (a, b):
            drift = np.ptp(c.vertices[:, dim])
            if drift > (abs(k) + 1.4) * period:
                raise LiftWindowExceeded(
                    f"curve spans {drift:.3f} in coordinate {dim}, beyond the "
                    f"lift window for period {period}"
                )


def lift_continuously(pts: np.ndarray, chart: Chart, anchor=None,
                      max_step_fraction: float = 0.4) -> np.ndarray:
    """Lift a sampled path to the universal cover by nearest-translate steps."""
    pts = as_points(pts).copy()
    px, py = chart.periods
    out = np.empty_like(pts)
    out[0] = pts[0]
    if anchor is not None:
        if px is not None:
            out[0, 0] = anchor[0] + _wrap_delta(pts[0, 0] - anchor[0], px)
        if py is not None:
            out[0, 1] = anchor[1] + _wrap_delta(pts[0, 1] - anchor[1], py)
    steps = np.diff(pts, axis=0)
    if px is not None:
        steps[:, 0] = _wrap_delta(steps[:, 0], px)
        if np.any(np.abs(steps[:, 0]) > max_step_fraction * px):
            raise LiftAmbiguity("consecutive samples too far apart in x to lift")
    if py is not None:
        steps[:, 1] = _wrap_delta(steps[:, 1], py)
        if np.any(np.abs(steps[:, 1]) > max_step_fraction * py):
            raise LiftAmbiguity("consecutive samples too far apart in y to lift")
    out[1:] = out[0] + np.cumsum(steps, axis=0)
    return out


def winding_class(trace, chart: Chart) -> tuple[int, int]:
    """Deck class of a traced loop, via incremental lifting."""
    pts = as_points(trace)
    lifted = lift_continuously(pts, chart)
    px, py = chart.periods
    disp = lifted[-1] - lifted[0]
    kx = int(round(disp[0] / px)) if px is not None else 0
    ky = int(round(disp[1] / py)) if py is not None else 0
    return (kx, ky)


# ---------------------------------------------------------------------------
# C0 norms


@dataclass(frozen=True)
class SamplingPlan:
    """Deterministic sampling of a chart's fundamental domain.

    mode 'centers' uses stratified cell centers; 'lattice' includes the
    domain boundary (useful when an extremum is known to sit on a special
    fiber).
    """

    nx: int = 512
    ny: int = 512
    mode: str = "centers"

    def points(self, chart: Chart) -> np.ndarray:
        x0, x1, y0, y1 = chart.sampling_box
        if self.mode == "centers":
            xs = x0 + (x1 - x0) * (np.arange(self.nx) + 0.5) / self.nx
            ys = y0 + (y1 - y0) * (np.arange(self.ny) + 0.5) / self.ny
        elif self.mode == "lattice":
            xs = np.linspace(x0, x1, self.nx)
            ys = np.linspace(y0, y1, self.ny)
        else:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        mask = chart.contains(pts)
        return pts[mask]

    def cell_diameter(self, chart: Chart) -> float:
        x0, x1, y0, y1 = chart.sampling_box
        return math.hypot((x1 - x0) / self.nx, (y1 - y0) / self.ny)


@dataclass(frozen=True)
class NormReport:
    value: float
    lower_bound: float
    upper_bound: float
    gap: float
    argmax: tuple[float, float]


def c0_norm_report(map_like, chart: Chart | None = None,
                   plan: SamplingPlan | None = None) -> NormReport:
    """Max displacement over the sampling plan, with a rigor gap estimate.

    ``value`` is the max of per-sample distance upper bounds; the reported
    gap adds the sampled local-Lipschitz term covering points between
    samples, plus any chart-level bound slack at the maximizer.
    """
    chart = chart if chart is not None else map_like.chart
    plan = plan or SamplingPlan()
    pts = plan.points(chart)
    img = map_like(pts)
    if not np.all(np.isfinite(img)):
        bad = pts[~np.all(np.isfinite(img), axis=1)][:1]
        raise MapEvaluationError(f"non-finite image at sample {bad}")
    lb, ub = chart.displacement_bounds(pts, img)
    i = int(np.argmax(ub))
    value = float(ub[i])
    lower = float(np.max(lb))
    cell = plan.cell_diameter(chart)
    scale = float(np.max(np.atleast_1d(chart.area_density(pts[i : i + 1]))))
    lip = _local_variation(pts, ub, cell)
    gap = lip * cell + max(scale, 1.0) * cell + (value - float(lb[i]))
    return NormReport(
        value=value,
        lower_bound=lower,
        upper_bound=value + gap,
        gap=gap,
        argmax=(float(pts[i, 0]), float(pts[i, 1])),
    )


def _local_variation(pts, vals, cell) -> float:
    """Crude max |d f| / |d x| over nearby sample pairs (subsampled)."""
    n = len(pts)
    if n < 4:
        return 0.0
    stride = max(1, n // 4096)
    a = slice(0, n - 1, stride)
    b = slice(1, n, stride)
    dp = np.linalg.norm(pts[b] - pts[a], axis=1)
    dv = np.abs(vals[b] - vals[a])
    near = (dp > 0) & (dp < 4 * cell)
    if not np.any(near):
        return 0.0
    return float(np.max(dv[near] / dp[near]))


def c0_norm(map_like, chart: Chart | None = None,
            plan: SamplingPlan | None = None) -> float:
    return c0_norm_report(map_like, chart, plan).value
