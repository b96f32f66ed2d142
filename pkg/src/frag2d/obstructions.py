"""Transport obstruction functionals.

Three functionals measure how much area a map carries across reference
curves: the annulus flux (area through a boundary-to-boundary arc), the
per-edge transport obstruction on a cover of a surface, and the flux of a
sampled isotopy.  All are computed by polyline quadrature with automatic
refinement, so every value carries an explicit resolution guarantee.

Sign conventions, fixed once here and relied on everywhere else:

* ``annulus_flux``: positive when mass moves in the +x direction through
  the vertical arc (a right-displaced image of the arc gives +).
* ``edge_obstruction``: positive when mass moves leftward across the
  oriented edge (for an edge traversed in +x, upward transport gives +).
"""

from __future__ import annotations

from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import (
    HomotopyClassMismatch,
    LiftAmbiguity,
    LiftWindowExceeded,
    ObstructionUndefined,
    RangeExceeded,
)
from .geometry_core import (
    Annulus,
    Chart,
    Curve,
    Region,
    crossing_arc,
    signed_area_between,
)

REFINE_TOL = 1e-8
MAX_SEGMENTS = 2 ** 14


def _refined_value(value_at: Callable[[int], float], n0: int = 256,
                   tol: float = REFINE_TOL, n_max: int = MAX_SEGMENTS) -> float:
    prev = value_at(n0)
    n = 2 * n0
    while n <= n_max:
        cur = value_at(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
        n *= 2
    return prev


def _image_curve(m, arc: Curve, chart: Chart) -> Curve:
    img = m(arc.vertices)
    return Curve(np.asarray(img, dtype=float), closed=arc.closed,
                 period_class=arc.period_class, chart=chart)


def annulus_flux(m, chart: Annulus | None = None, arc: Curve | None = None,
                 tol: float = REFINE_TOL, n_max: int = MAX_SEGMENTS) -> float:
    """Area transported through a bottom-to-top arc of the annulus.

    The default arc is the vertical segment at x = 0; the value is
    independent of that choice for area-preserving maps fixing the
    boundary, which the test suite checks rather than assumes.
    """
    chart = chart or getattr(m, "chart", None)
    if chart is None:
        raise ValueError("annulus_flux needs a chart")
    hw = chart.halfwidth

    def value_at(n: int) -> float:
        base = arc if arc is not None else crossing_arc(chart, 0.0, n)
        cur = base
        while len(cur.vertices) - 1 < n:
            cur = cur.refined()
        img = _image_curve(m, cur, chart)
        if np.max(np.abs(img.vertices[:, 1])) > hw + 1e-9:
            raise RangeExceeded(
                "image of the crossing arc leaves the annulus"
            )
        return signed_area_between(img, cur, chart)

    return _refined_value(value_at, tol=tol, n_max=n_max)


# ---------------------------------------------------------------------------
# Edge obstructions on a cover


class CoverLike(Protocol):
    """What edge obstructions need from a cover of a surface.

    ``edge_arc(i, j, n)`` is the oriented center-to-center polyline with n
    segments; ``edge_region(i, j)`` is the set the transported arc must
    stay inside (None disables the check); ``vertex_region(i)`` is the
    small disk where the map must restrict to the identity.
    """

    chart: Chart

    def edge_arc(self, i: int, j: int, n: int) -> Curve: ...

    def edge_region(self, i: int, j: int) -> Region | None: ...

    def vertex_region(self, i: int) -> Region | None: ...


def _check_identity_on_region(m, region: Region | None, chart: Chart,
                              center: np.ndarray, id_tol: float) -> None:
    if region is None:
        return
    rng = np.random.default_rng(1234)
    probes = [center]
    r = getattr(region, "r", None)
    if r is not None:
        theta = rng.uniform(0, 2 * np.pi, 48)
        rad = r * np.sqrt(rng.uniform(0, 1, 48))
        probes.append(
            np.column_stack([center[0] + rad * np.cos(theta),
                             center[1] + rad * np.sin(theta)])
        )
    pts = np.vstack([np.atleast_2d(p) for p in probes])
    pts = pts[region.contains(pts)]
    if len(pts) == 0:
        return
    moved = m(pts)
    disp = np.max(np.abs(moved - pts))
    if disp > id_tol:
        raise ObstructionUndefined(
            f"map moves a vertex disk by {disp:.3e}; the edge obstruction "
            "needs the identity there"
        )


def edge_obstruction(m, edge: tuple[int, int], cover: CoverLike,
                     tol: float = REFINE_TOL, n_max: int = 2 ** 13,
                     id_tol: float = 1e-6) -> float:
    """Signed area between an edge arc and its image.

    Positive when mass crosses the oriented edge from its right side to
    its left side.  Defined only while the map is small enough that the
    transported arc stays inside the edge's neighborhood and the vertex
    disks are pointwise fixed.
    """
    i, j = edge
    chart = cover.chart
    containment = cover.edge_region(i, j)

    def value_at(n: int) -> float:
        garc = cover.edge_arc(i, j, n)
        img = _image_curve(m, garc, chart)
        if containment is not None:
            ok = containment.contains(img.vertices)
            if not np.all(ok):
                k = int(np.argmin(ok))
                raise ObstructionUndefined(
                    f"image of edge ({i},{j}) leaves its neighborhood "
                    f"near {img.vertices[k]}"
                )
        return signed_area_between(garc, img, chart)

    probe_arc = cover.edge_arc(i, j, 2)
    _check_identity_on_region(m, cover.vertex_region(i), chart,
                              probe_arc.vertices[0], id_tol)
    _check_identity_on_region(m, cover.vertex_region(j), chart,
                              probe_arc.vertices[-1], id_tol)
    return _refined_value(value_at, n0=128, tol=tol, n_max=n_max)


def loop_obstruction_sum(m, loop: Sequence[int], cover: CoverLike,
                         tol: float = REFINE_TOL, n_max: int = 2 ** 13,
                         id_tol: float = 1e-6) -> float:
    """Cyclic sum of edge obstructions along a vertex loop."""
    if len(loop) < 2:
        raise ValueError("a loop needs at least two vertices")
    cyc = list(loop)
    if cyc[0] != cyc[-1]:
        cyc.append(cyc[0])
    total = 0.0
    for a, b in zip(cyc[:-1], cyc[1:]):
        total += edge_obstruction(m, (a, b), cover, tol=tol, n_max=n_max,
                                  id_tol=id_tol)
    return total


# ---------------------------------------------------------------------------
# Isotopy flux


def isotopy_flux(path: Sequence | Callable[[float], object],
                 arc: Curve | None = None, chart: Chart | None = None,
                 t_samples: int = 32, return_partial: bool = False):
    """Accumulated transport of a sampled isotopy through a reference arc.

    The swept area is summed over time slabs (signed area between
    consecutive images of the arc), which telescopes exactly thanks to the
    chain additivity of the polyline quadrature.  Aliasing from a path
    sampled too coarsely to track lifts surfaces as LiftAmbiguity.
    """
    if callable(path) and not isinstance(path, (list, tuple)):
        ts = np.linspace(0.0, 1.0, t_samples + 1)
        maps = [path(float(t)) for t in ts]
    else:
        maps = list(path)
    if len(maps) < 2:
        raise ValueError("an isotopy path needs at least two samples")
    chart = chart or getattr(maps[0], "chart", None)
    if chart is None:
        raise ValueError("isotopy_flux needs a chart")
    if arc is None:
        if not isinstance(chart, Annulus):
            raise ValueError("default crossing arc exists only on the annulus")
        arc = crossing_arc(chart, 0.0, 1024)

    slices = [_image_curve(m, arc, chart) for m in maps]
    partial = [0.0]
    total = 0.0
    for prev, cur in zip(slices[:-1], slices[1:]):
        try:
            total += signed_area_between(cur, prev, chart)
        except (HomotopyClassMismatch, LiftWindowExceeded) as exc:
            raise LiftAmbiguity(
                f"isotopy path sampled too coarsely to track the arc: {exc}"
            ) from exc
        partial.append(total)
    if return_partial:
        return total, np.array(partial)
    return total
