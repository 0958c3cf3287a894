"""Slicing a watertight mesh into layer contours, infill generation,
toolpath planning and G-code emission.

The infill of each layer is built from the interior distance function of
the layer region: the stationary eikonal equation ``|grad T| = 1`` is
solved inside the contours and the level sets at spacing, 2 spacing, ...
become the infill curves.  They follow the boundary of the object, which
keeps extrusion runs long compared with an axis-aligned square pattern
clipped to the same region (also provided, as a baseline).

Units are mm and mm/min throughout.  G-code uses absolute positioning
and absolute (cumulative) extrusion: the E word of a line is the total
material length times the flow coefficient up to that line.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import FieldError, Grid2D, Polyline2D, ScalarField2D, extract_contours
from .levelset import solve_stationary_eikonal
from .mesh import TriangleMesh

__all__ = [
    "Layer",
    "Move",
    "ToolPath",
    "GCodeProgram",
    "SlicerConfig",
    "slice_mesh",
    "infill_eikonal",
    "infill_square",
    "plan_toolpath",
    "emit_gcode",
    "parse_gcode",
    "metrics",
]

logger = logging.getLogger(__name__)

# Slice planes landing exactly on a vertex height are shifted by this
# fraction of the layer height (removes horizontal-facet degeneracy).
PLANE_EPS_FACTOR = 1e-7

PREAMBLE = (
    "G21 ; units: millimeters",
    "G90 ; absolute positioning",
    "G28 ; home all axes",
)
POSTAMBLE = (
    "G10 ; retract",
    "M84 ; motors off",
)


@dataclass(frozen=True)
class SlicerConfig:
    """Feeds (mm/min), flow coefficient (E units per mm of extrusion)
    and the layer height (mm)."""

    layer_height: float = 0.2
    perimeter_feed: float = 1800.0
    infill_feed: float = 2700.0
    travel_feed: float = 6000.0
    flow: float = 0.05

    def __post_init__(self):
        if self.layer_height <= 0:
            raise ValueError("layer height must be positive")
        for name in ("perimeter_feed", "infill_feed", "travel_feed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.flow <= 0:
            raise ValueError("flow must be positive")


@dataclass
class Layer:
    """One horizontal cut: height and closed, oriented contours (material
    lies to the left of the traversal direction, so outer boundaries are
    counter-clockwise and holes clockwise)."""

    z: float
    contours: list

    def __post_init__(self):
        for c in self.contours:
            if not isinstance(c, Polyline2D) or not c.closed:
                raise ValueError("layer contours must be closed polylines")

    def bounds(self):
        pts = np.vstack([c.vertices for c in self.contours])
        return pts.min(axis=0), pts.max(axis=0)


@dataclass(frozen=True)
class Move:
    """One straight move of the extruder.

    ``e`` optionally pins the absolute extrusion value after the move
    (set by the parser so that re-emission is byte-identical); planned
    moves leave it None and the emitter accumulates flow x length.
    """

    target: tuple  # (x, y, z)
    feed: float    # mm/min
    extrude: bool
    e: float | None = None

    def __post_init__(self):
        t = tuple(float(c) for c in self.target)
        if len(t) != 3 or not all(math.isfinite(c) for c in t):
            raise ValueError(f"move target must be 3 finite coordinates, got {self.target}")
        if not (math.isfinite(self.feed) and self.feed > 0):
            raise ValueError("feed must be positive and finite")
        object.__setattr__(self, "target", t)


@dataclass
class ToolPath:
    """Ordered moves, starting from the machine origin (0, 0, 0)."""

    moves: list = dc_field(default_factory=list)

    def append(self, target, feed, extrude, e=None):
        self.moves.append(Move(tuple(target), float(feed), bool(extrude), e))

    @property
    def start(self):
        return (0.0, 0.0, 0.0)


@dataclass
class GCodeProgram:
    """Emitted command stream: fixed preamble, one G1 line per move,
    fixed postamble.  ``total_e`` is the unrounded final extrusion
    value (flow x total extruded length)."""

    preamble: tuple = PREAMBLE
    commands: list = dc_field(default_factory=list)
    postamble: tuple = POSTAMBLE
    total_e: float = 0.0

    @property
    def lines(self):
        return list(self.preamble) + list(self.commands) + list(self.postamble)

    @property
    def text(self):
        return "\n".join(self.lines) + "\n"


# ---------------------------------------------------------------------------
# Slicing
# ---------------------------------------------------------------------------

def _canonical_crossing(p, q, z):
    """Intersection of segment p-q with the plane at height ``z``,
    computed after ordering the endpoints lexicographically so that the
    two facets sharing the edge produce bit-identical points."""
    if (p[0], p[1], p[2]) > (q[0], q[1], q[2]):
        p, q = q, p
    t = (z - p[2]) / (q[2] - p[2])
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _facet_plane_segment(tri, normal, z):
    """Oriented in-plane segment of one facet cut at height ``z``; the
    solid interior lies to the left of the segment direction.  Returns
    None when the facet does not properly cross the plane."""
    below = [v[2] < z for v in tri]
    if all(below) or not any(below):
        return None
    # one vertex on one side, two on the other
    lone = 0 if below.count(True) == 1 else 1
    idx = [k for k in range(3) if below[k] == (lone == 0)]
    k = idx[0]
    a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
    p = _canonical_crossing(a, b, z)
    q = _canonical_crossing(a, c, z)
    # Direction with interior on the left: proportional to (-ny, nx).
    d = (-normal[1], normal[0])
    if (q[0] - p[0]) * d[0] + (q[1] - p[1]) * d[1] >= 0.0:
        return p, q
    return q, p


def _stitch_closed(segments, z):
    """Chain oriented segments (exact endpoint matching) into closed
    contours; anything unstitchable raises with diagnostics."""
    starts = {}
    for idx, (p, q) in enumerate(segments):
        starts.setdefault(p, []).append(idx)
    used = [False] * len(segments)
    contours = []
    for idx in range(len(segments)):
        if used[idx]:
            continue
        chain = [segments[idx][0]]
        cur = idx
        used[idx] = True
        while True:
            end = segments[cur][1]
            if end == chain[0]:
                break
            nxt = None
            for cand in starts.get(end, ()):
                if not used[cand]:
                    nxt = cand
                    break
            if nxt is None:
                raise ValueError(
                    f"unstitchable slice at z={z}: open chain of "
                    f"{len(chain)} segments ends at {end}"
                )
            chain.append(end)
            used[nxt] = True
            cur = nxt
        # drop repeated points (degenerate facet touches)
        scale = max(1.0, max(abs(c) for p in chain for c in p))
        dup = 1e-11 * scale
        pts = []
        for p in chain:
            if not pts or math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1]) > dup:
                pts.append(p)
        if pts and math.hypot(pts[0][0] - pts[-1][0], pts[0][1] - pts[-1][1]) <= dup:
            pts.pop()
        if len(pts) >= 3:
            try:
                contours.append(Polyline2D(np.array(pts), closed=True))
            except FieldError:
                pass  # zero-area sliver
    return contours


def slice_mesh(mesh: TriangleMesh, layer_height: float) -> list:
    """Cut the mesh with horizontal planes ``z = z_min + k layer_height``
    and stitch the facet-plane intersection segments of each plane into
    the closed contours of a :class:`Layer`.

    Planes through a vertex (including the bottom plane) are shifted up
    by ``1e-7 layer_height`` until clear; planes yielding no contours
    (above the top, through a gap) are dropped.
    """
    if layer_height <= 0:
        raise ValueError("layer height must be positive")
    lo, hi = mesh.bounds
    tris = mesh.tris
    normals = mesh.normals
    vertex_z = np.unique(tris[:, :, 2].ravel())
    eps = PLANE_EPS_FACTOR * layer_height
    layers = []
    nplanes = int(math.floor((hi[2] - lo[2]) / layer_height)) + 1
    for k in range(nplanes + 1):
        z = lo[2] + k * layer_height
        guard = 0
        while vertex_z[np.searchsorted(vertex_z, z):np.searchsorted(vertex_z, z, side="right")].size:
            z += eps
            guard += 1
            if guard > 1000:
                raise ValueError("could not find a vertex-free slice plane")
        if z >= hi[2]:
            continue
        zmin_f = tris[:, :, 2].min(axis=1)
        zmax_f = tris[:, :, 2].max(axis=1)
        hit = np.nonzero((zmin_f < z) & (zmax_f > z))[0]
        segments = []
        for f in hit:
            seg = _facet_plane_segment(tris[f], normals[f], z)
            if seg is not None and seg[0] != seg[1]:
                segments.append(seg)
        if not segments:
            continue
        contours = _stitch_closed(segments, z)
        if contours:
            layers.append(Layer(z=z, contours=contours))
    if not layers:
        raise ValueError("mesh produced no layers (degenerate height range?)")
    return layers


# ---------------------------------------------------------------------------
# Layer rasterization
# ---------------------------------------------------------------------------

def _winding_inside(layer: Layer, grid: Grid2D) -> np.ndarray:
    """Winding-number interior test for all grid nodes (nonzero winding =
    material, so holes subtract)."""
    xs, ys = grid.coords()
    X = xs[:, None]
    winding = np.zeros(tuple(grid.dims), dtype=int)
    for c in layer.contours:
        v = c.vertices
        nxt = np.roll(v, -1, axis=0)
        for (x1, y1), (x2, y2) in zip(v, nxt):
            if y1 == y2:
                continue
            lo, hi = (y1, y2) if y1 < y2 else (y2, y1)
            rows = (ys >= lo) & (ys < hi)
            if not rows.any():
                continue
            t = (ys[rows] - y1) / (y2 - y1)
            xc = x1 + t * (x2 - x1)
            sign = 1 if y2 > y1 else -1
            winding[:, rows] += sign * (X < xc[None, :])
    return winding != 0


def _distance_to_contours(layer: Layer, grid: Grid2D) -> np.ndarray:
    """Exact Euclidean distance from every grid node to the contour
    segments (vectorized over nodes, chunked over both nodes and
    segments to bound peak memory)."""
    X, Y = grid.meshgrid()
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    best = np.full(P.shape[0], np.inf)
    for c in layer.contours:
        v = c.vertices
        a = v
        b = np.roll(v, -1, axis=0)
        for k0 in range(0, len(a), 64):
            aa = a[k0:k0 + 64]
            bb = b[k0:k0 + 64]
            d = bb - aa                      # (E, 2)
            L2 = np.maximum((d * d).sum(axis=1), 1e-300)
            for n0 in range(0, P.shape[0], 65536):
                Pn = P[n0:n0 + 65536]
                ap = Pn[:, None, :] - aa[None, :, :]   # (N, E, 2)
                t = np.clip((ap * d[None, :, :]).sum(axis=2) / L2[None, :],
                            0.0, 1.0)
                closest = aa[None, :, :] + t[:, :, None] * d[None, :, :]
                diff = Pn[:, None, :] - closest
                dist = np.sqrt((diff * diff).sum(axis=2))
                np.minimum(best[n0:n0 + 65536], dist.min(axis=1),
                           out=best[n0:n0 + 65536])
    return best.reshape(tuple(grid.dims))


def _raster_grid(layer: Layer, h: float) -> Grid2D:
    # The half-cell origin shift keeps grid nodes off the contours and the
    # offset levels of axis-aligned geometry, where exactly-on-node level
    # sets would degrade the marching-squares extraction.
    lo, hi = layer.bounds()
    nx = int(math.ceil((hi[0] - lo[0]) / h)) + 5
    ny = int(math.ceil((hi[1] - lo[1]) / h)) + 5
    return Grid2D((lo[0] - 2 * h + 0.5 * h, lo[1] - 2 * h + 0.5 * h), (h, h), (nx, ny))


def interior_distance(layer: Layer, grid_spacing: float) -> ScalarField2D:
    """Distance to the layer boundary on a raster covering the layer,
    masked to the interior plus a one-band margin.

    Nodes within two cells of a contour are frozen at their exact
    segment distance; the stationary eikonal solved from that band fills
    the rest of the interior.
    """
    grid = _raster_grid(layer, grid_spacing)
    inside = _winding_inside(layer, grid)
    d_exact = _distance_to_contours(layer, grid)
    band = d_exact <= 2.0 * grid_spacing
    mask = inside | band
    speed = ScalarField2D(grid, np.ones(tuple(grid.dims)), mask)
    T = solve_stationary_eikonal(speed, band, source_values=d_exact)
    vals = np.where(inside, T.values, 0.0)
    return ScalarField2D(grid, vals, mask)


# ---------------------------------------------------------------------------
# Infill
# ---------------------------------------------------------------------------

def infill_eikonal(layer: Layer, spacing: float, grid_spacing: float | None = None) -> list:
    """Infill curves as the level sets of the interior distance function
    at ``spacing, 2 spacing, ...`` (inward offsets of the boundary).

    The raster spacing defaults to ``spacing / 4``.  Regions thinner
    than twice the spacing produce no curves (walls only); that case is
    logged."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    h = spacing / 4.0 if grid_spacing is None else float(grid_spacing)
    if h >= spacing:
        raise ValueError("raster spacing must be below the infill spacing")
    field = interior_distance(layer, h)
    tmax = float(field.values.max())
    curves = []
    level = spacing
    while level < tmax:
        for c in extract_contours(field, level):
            if c.closed:
                curves.append(c)
        level += spacing
    if not curves:
        logger.info(
            "layer z=%g thinner than 2x spacing %g everywhere: walls only",
            layer.z, spacing,
        )
    return curves


def _clip_line_to_layer(layer: Layer, axis: int, coord: float) -> list:
    """Interior intervals of the axis-aligned line ``x[axis] = coord``,
    as open polylines."""
    crossings = []
    for c in layer.contours:
        v = c.vertices
        nxt = np.roll(v, -1, axis=0)
        for (x1, y1), (x2, y2) in zip(v, nxt):
            p1 = (x1, y1)[axis]
            p2 = (x2, y2)[axis]
            if p1 == p2:
                continue
            lo, hi = (p1, p2) if p1 < p2 else (p2, p1)
            if not (lo <= coord < hi):
                continue
            t = (coord - p1) / (p2 - p1)
            other = (x1, y1)[1 - axis] + t * ((x2, y2)[1 - axis] - (x1, y1)[1 - axis])
            sign = 1 if p2 > p1 else -1
            crossings.append((other, sign))
    crossings.sort()
    pieces = []
    winding = 0
    start = None
    for other, sign in crossings:
        prev = winding
        # the line enters/leaves material as the winding count about the
        # perpendicular axis changes
        winding += sign
        if prev == 0 and winding != 0:
            start = other
        elif prev != 0 and winding == 0 and start is not None:
            if other > start:
                a = (coord, start) if axis == 0 else (start, coord)
                b = (coord, other) if axis == 0 else (other, coord)
                pieces.append(Polyline2D(np.array([a, b])))
            start = None
    return pieces


def infill_square(layer: Layer, spacing: float) -> list:
    """Baseline infill: axis-aligned grid lines at the given spacing
    clipped to the layer interior."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    lo, hi = layer.bounds()
    curves = []
    for axis in range(2):
        coord = lo[axis] + spacing
        while coord < hi[axis] - 1e-12 * max(1.0, abs(hi[axis])):
            curves.extend(_clip_line_to_layer(layer, axis, coord))
            coord += spacing
    return curves


# ---------------------------------------------------------------------------
# Toolpath planning
# ---------------------------------------------------------------------------

def _nearest_entry(curve: Polyline2D, point):
    """Best entry vertex index and traversal order for reaching ``curve``
    from ``point``: closed curves may start anywhere, open curves at
    either end."""
    v = curve.vertices
    if curve.closed:
        d = np.linalg.norm(v - point, axis=1)
        k = int(np.argmin(d))
        return float(d[k]), k, False
    d0 = float(np.linalg.norm(v[0] - point))
    d1 = float(np.linalg.norm(v[-1] - point))
    if d1 < d0:
        return d1, 0, True
    return d0, 0, False


def _curve_vertices(curve: Polyline2D, entry: int, reverse: bool):
    v = curve.vertices
    if curve.closed:
        rolled = np.roll(v, -entry, axis=0)
        return np.vstack([rolled, rolled[:1]])
    return v[::-1] if reverse else v


def plan_toolpath(layers, infill, config: SlicerConfig = SlicerConfig()) -> ToolPath:
    """Order the work: per layer the perimeters first, then the infill
    curves, both greedily by nearest entry point from the current
    position; approach moves are non-extruding travels.

    ``infill`` is one list of curves per layer.
    """
    if len(infill) != len(layers):
        raise ValueError("need one infill curve list per layer")
    path = ToolPath()
    pos2 = np.array([0.0, 0.0])
    for layer, curves in zip(layers, infill):
        for group, feed in ((list(layer.contours), config.perimeter_feed),
                            (list(curves), config.infill_feed)):
            remaining = group
            while remaining:
                picks = [(_nearest_entry(c, pos2), i)
                         for i, c in enumerate(remaining)]
                (dist, entry, reverse), i = min(picks, key=lambda t: (t[0][0], t[1]))
                curve = remaining.pop(i)
                verts = _curve_vertices(curve, entry, reverse)
                path.append((verts[0][0], verts[0][1], layer.z),
                            config.travel_feed, False)
                for p in verts[1:]:
                    path.append((p[0], p[1], layer.z), feed, True)
                pos2 = verts[-1][:2].copy()
    return path


# ---------------------------------------------------------------------------
# G-code
# ---------------------------------------------------------------------------

def _word(prefix, value):
    return f"{prefix}{value:.5f}"


def emit_gcode(path: ToolPath, flow: float | None = None,
               config: SlicerConfig = SlicerConfig()) -> GCodeProgram:
    """Render the toolpath as ``G1 F# X# Y# Z# E#`` lines with absolute
    cumulative extrusion: each extruding move advances E by
    ``flow x segment length``."""
    flow = config.flow if flow is None else float(flow)
    if flow <= 0:
        raise ValueError("flow must be positive")
    prog = GCodeProgram()
    e = 0.0
    prev = np.array(path.start)
    for mv in path.moves:
        tgt = np.array(mv.target)
        if mv.e is not None:
            e = mv.e
        elif mv.extrude:
            e += flow * float(np.linalg.norm(tgt - prev))
        prog.commands.append(" ".join([
            "G1",
            _word("F", mv.feed),
            _word("X", tgt[0]),
            _word("Y", tgt[1]),
            _word("Z", tgt[2]),
            _word("E", e),
        ]))
        prev = tgt
    prog.total_e = e
    return prog


_G1_RE = re.compile(
    r"^G1 F(?P<F>-?\d+\.\d{5}) X(?P<X>-?\d+\.\d{5}) Y(?P<Y>-?\d+\.\d{5})"
    r" Z(?P<Z>-?\d+\.\d{5}) E(?P<E>-?\d+\.\d{5})$"
)


def parse_gcode(text: str) -> ToolPath:
    """Parse a program emitted by :func:`emit_gcode` back into a
    toolpath (moves with E unchanged are travels).  Unknown non-G1 lines
    (preamble/postamble) are skipped; malformed G1 lines raise."""
    path = ToolPath()
    e = 0.0
    for line in text.splitlines():
        line = line.strip()
        if not line or not line.startswith("G1 "):
            continue
        m = _G1_RE.match(line)
        if m is None:
            raise ValueError(f"malformed G1 line: {line!r}")
        new_e = float(m.group("E"))
        if new_e < e - 1e-12:
            raise ValueError(f"extrusion must be non-decreasing, E drops at: {line!r}")
        path.append(
            (float(m.group("X")), float(m.group("Y")), float(m.group("Z"))),
            float(m.group("F")),
            new_e > e,
            e=new_e,
        )
        e = new_e
    return path


def metrics(path: ToolPath) -> dict:
    """Print time (s), extruded material length (mm), travel length (mm)
    and move count of a planned path."""
    t = 0.0
    material = 0.0
    travel = 0.0
    prev = np.array(path.start)
    for mv in path.moves:
        tgt = np.array(mv.target)
        length = float(np.linalg.norm(tgt - prev))
        t += length / mv.feed * 60.0
        if mv.extrude:
            material += length
        else:
            travel += length
        prev = tgt
    return {
        "print_time_s": t,
        "material_length_mm": material,
        "travel_length_mm": travel,
        "move_count": len(path.moves),
    }
