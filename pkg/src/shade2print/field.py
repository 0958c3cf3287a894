"""Uniform-grid scalar fields in 2D/3D with interpolation, finite
differences and iso-contour extraction.

Grids are node-centered: the physical coordinate of node ``(i, j)`` is
``origin + spacing * (i, j)``.  Fields are treated as immutable value
objects once built; solvers make their own working copies.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "Grid2D",
    "Grid3D",
    "ScalarField2D",
    "ScalarField3D",
    "Polyline2D",
    "interp_bilinear",
    "gradient_central",
    "gradient_upwind",
    "extract_contours",
    "read_pgm",
    "write_pgm",
]

# Deterministic perturbation for marching-squares nodes sitting exactly on
# the iso-level (removes topological ambiguity).
_DEGENERATE_EPS = 1e-12


class FieldError(ValueError):
    """Raised on domain errors (out-of-bounds queries, bad grid specs)."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2D node grid.

    ``dims`` counts nodes per axis; ``spacing`` is the physical length per
    cell (uniform along each axis, possibly different between axes).
    """

    origin: tuple[float, float]
    spacing: tuple[float, float]
    dims: tuple[int, int]

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise FieldError(f"spacing must be positive, got {self.spacing}")
        if any(n < 2 for n in self.dims):
            raise FieldError(f"dims must be >= 2 per axis, got {self.dims}")

    @property
    def ndim(self) -> int:
        return 2

    def coords(self):
        """Per-axis node coordinate arrays."""
        return tuple(
            self.origin[k] + self.spacing[k] * np.arange(self.dims[k])
            for k in range(2)
        )

    def meshgrid(self):
        return np.meshgrid(*self.coords(), indexing="ij")

    def node_position(self, i: int, j: int) -> np.ndarray:
        return np.array(
            [self.origin[0] + self.spacing[0] * i, self.origin[1] + self.spacing[1] * j]
        )

    @property
    def upper(self) -> tuple[float, float]:
        return tuple(
            self.origin[k] + self.spacing[k] * (self.dims[k] - 1) for k in range(2)
        )

    def contains(self, p) -> bool:
        return all(
            self.origin[k] - 1e-12 <= p[k] <= self.upper[k] + 1e-12 for k in range(2)
        )


@dataclass(frozen=True)
class Grid3D:
    """Uniform 3D node grid (see :class:`Grid2D` for conventions)."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise FieldError(f"spacing must be positive, got {self.spacing}")
        if any(n < 2 for n in self.dims):
            raise FieldError(f"dims must be >= 2 per axis, got {self.dims}")

    @property
    def ndim(self) -> int:
        return 3

    def coords(self):
        return tuple(
            self.origin[k] + self.spacing[k] * np.arange(self.dims[k])
            for k in range(3)
        )

    def meshgrid(self):
        return np.meshgrid(*self.coords(), indexing="ij")

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(
            self.origin[k] + self.spacing[k] * (self.dims[k] - 1) for k in range(3)
        )


def _check_values(grid, values, mask):
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(grid.dims):
        raise FieldError(
            f"values shape {values.shape} does not match grid dims {grid.dims}"
        )
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise FieldError("mask shape does not match values shape")
    return values, mask


@dataclass(frozen=True)
class ScalarField2D:
    """Scalar samples on a :class:`Grid2D`, with an optional domain mask.

    Masked-out nodes (``mask == False``) carry Dirichlet data: solver
    stencils crossing the mask read those values, they never extrapolate.
    """

    grid: Grid2D
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        values, mask = _check_values(self.grid, self.values, self.mask)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def with_values(self, values) -> "ScalarField2D":
        return ScalarField2D(self.grid, values, self.mask)


@dataclass(frozen=True)
class ScalarField3D:
    """Scalar samples on a :class:`Grid3D` (same conventions as 2D)."""

    grid: Grid3D
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        values, mask = _check_values(self.grid, self.values, self.mask)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def with_values(self, values) -> "ScalarField3D":
        return ScalarField3D(self.grid, values, self.mask)


@dataclass
class Polyline2D:
    """Ordered 2D vertex chain, optionally closed.

    Closed polylines must have at least 3 vertices and nonzero enclosed
    area; consecutive duplicate vertices are rejected.
    """

    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise FieldError("vertices must be an (n, 2) array")
        n = len(self.vertices)
        if n >= 2:
            d = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
            scale = max(1.0, np.abs(self.vertices).max())
            if np.any(d < 1e-12 * scale):
                raise FieldError("consecutive duplicate vertices")
        if self.closed:
            if n < 3:
                raise FieldError("closed polyline needs >= 3 vertices")
            if abs(self.signed_area()) < 1e-300:
                raise FieldError("closed polyline has zero enclosed area")

    def signed_area(self) -> float:
        """Shoelace area; positive for counter-clockwise traversal."""
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def length(self) -> float:
        v = self.vertices
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1).sum()
        if self.closed:
            seg += float(np.linalg.norm(v[0] - v[-1]))
        return float(seg)


def interp_bilinear(field: ScalarField2D, p) -> float:
    """Bilinear interpolation of ``field`` at point ``p``.

    The four cell weights are nonnegative and sum to one, so the operator
    is monotone and exact on affine fields.  Raises :class:`FieldError`
    for points outside the grid bounding box (callers clamp if desired).
    """
    g = field.grid
    if not g.contains(p):
        raise FieldError(f"point {tuple(p)} outside grid bounds")
    fx = (p[0] - g.origin[0]) / g.spacing[0]
    fy = (p[1] - g.origin[1]) / g.spacing[1]
    i = min(int(np.floor(fx)), g.dims[0] - 2)
    j = min(int(np.floor(fy)), g.dims[1] - 2)
    i = max(i, 0)
    j = max(j, 0)
    tx = min(max(fx - i, 0.0), 1.0)
    ty = min(max(fy - j, 0.0), 1.0)
    v = field.values
    return float(
        (1 - tx) * (1 - ty) * v[i, j]
        + tx * (1 - ty) * v[i + 1, j]
        + (1 - tx) * ty * v[i, j + 1]
        + tx * ty * v[i + 1, j + 1]
    )


def _axis_diffs(field, node, axis):
    """Forward/backward/central one-axis differences with one-sided
    fallback at grid boundaries."""
    v = field.values
    h = field.grid.spacing[axis]
    idx = list(node)
    n = v.shape[axis]
    i = idx[axis]

    def at(k):
        idx2 = list(idx)
        idx2[axis] = k
        return v[tuple(idx2)]

    if 0 < i < n - 1:
        backward = (at(i) - at(i - 1)) / h
        forward = (at(i + 1) - at(i)) / h
        central = (at(i + 1) - at(i - 1)) / (2 * h)
    elif i == 0:
        forward = backward = central = (at(1) - at(0)) / h
    else:
        forward = backward = central = (at(n - 1) - at(n - 2)) / h
    return backward, forward, central


def gradient_central(field, node) -> np.ndarray:
    """Central-difference gradient at a node (one-sided at the boundary).

    Second order on smooth fields, exact on linear ones.
    """
    nd = field.grid.ndim
    return np.array([_axis_diffs(field, node, k)[2] for k in range(nd)])


def gradient_upwind(field, node, direction) -> np.ndarray:
    """Upwind gradient at a node, biased against the given flow direction.

    For a positive flow component the backward difference is used
    (information travels with the flow); ties fall back to central.
    """
    nd = field.grid.ndim
    out = np.empty(nd)
    for k in range(nd):
        backward, forward, central = _axis_diffs(field, node, k)
        if direction[k] > 0:
            out[k] = backward
        elif direction[k] < 0:
            out[k] = forward
        else:
            out[k] = central
    return out


# ---------------------------------------------------------------------------
# Marching squares
# ---------------------------------------------------------------------------

def _edge_point(pa, pb, va, vb, level):
    t = (level - va) / (vb - va)
    # Snap crossings that land essentially on a node to the exact node, so
    # contours passing through a node are stitched by exact coincidence.
    if t < 1e-9:
        return pa
    if t > 1.0 - 1e-9:
        return pb
    return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))


def extract_contours(field: ScalarField2D, level: float) -> list[Polyline2D]:
    """Marching-squares iso-contours of ``field`` at ``level``.

    Each polyline is closed unless it exits the mask or the grid; the
    region with ``field < level`` lies to the left of the traversal
    direction.  Nodes sitting exactly on the level are perturbed to
    ``level + 1e-12 * spacing``; the saddle ambiguity is resolved by the
    cell-center average test.
    """
    g = field.grid
    v = field.values.copy()
    eps = _DEGENERATE_EPS * min(g.spacing)
    v[v == level] = level + eps

    mask = field.mask
    neg = v < level
    nx, ny = g.dims
    # Mixed cells only: cheap vectorized prefilter.
    c00 = neg[:-1, :-1]
    c10 = neg[1:, :-1]
    c01 = neg[:-1, 1:]
    c11 = neg[1:, 1:]
    mixed = ~((c00 & c10 & c01 & c11) | ~(c00 | c10 | c01 | c11))
    if mask is not None:
        cell_ok = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
        mixed &= cell_ok
    cells = np.argwhere(mixed)
    if len(cells) == 0:
        return []

    xs, ys = g.coords()
    segments = []  # (start, end) tuples, inside (< level) on the left
    for i, j in cells:
        corners = [
            ((xs[i], ys[j]), v[i, j]),
            ((xs[i + 1], ys[j]), v[i + 1, j]),
            ((xs[i + 1], ys[j + 1]), v[i + 1, j + 1]),
            ((xs[i], ys[j + 1]), v[i, j + 1]),
        ]
        pts = []
        for k in range(4):
            (pa, va), (pb, vb) = corners[k], corners[(k + 1) % 4]
            if (va < level) != (vb < level):
                pts.append((k, _edge_point(pa, pb, va, vb, level)))
        if len(pts) == 2:
            pairs = [(pts[0][1], pts[1][1])]
        elif len(pts) == 4:
            # Saddle: cell-center average decides the pairing.
            center = 0.25 * (v[i, j] + v[i + 1, j] + v[i, j + 1] + v[i + 1, j + 1])
            if (center < level) == (v[i, j] < level):
                pairs = [(pts[0][1], pts[1][1]), (pts[2][1], pts[3][1])]
            else:
                pairs = [(pts[3][1], pts[0][1]), (pts[1][1], pts[2][1])]
        else:
            continue
        for p, q in pairs:
            mx, my = 0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])
            dx, dy = q[0] - p[0], q[1] - p[1]
            norm = np.hypot(dx, dy)
            if norm < 1e-300:
                continue
            delta = 0.25 * min(g.spacing)
            lx = mx - dy / norm * delta
            ly = my + dx / norm * delta
            lx = min(max(lx, xs[i]), xs[i + 1])
            ly = min(max(ly, ys[j]), ys[j + 1])
            fld = ScalarField2D(g, v)
            if interp_bilinear(fld, (lx, ly)) < level:
                segments.append((p, q))
            else:
                segments.append((q, p))

    return _stitch_segments(segments, min(g.spacing))


def _stitch_segments(segments, h) -> list[Polyline2D]:
    """Chain directed segments into polylines by matching endpoints."""
    tol = 1e-9 * h

    def key(p):
        return (round(p[0] / tol), round(p[1] / tol))

    starts: dict = {}
    has_incoming: set = set()
    for idx, (p, q) in enumerate(segments):
        starts.setdefault(key(p), []).append(idx)
        has_incoming.add(key(q))
    used = [False] * len(segments)
    polylines = []

    def walk(idx):
        chain = [idx]
        used[idx] = True
        cur = idx
        while True:
            nxts = [k for k in starts.get(key(segments[cur][1]), []) if not used[k]]
            if not nxts:
                break
            if len(nxts) > 1:
                # Junction where several segments meet at one point (the
                # contour passes through a grid node): continue along the
                # segment that best preserves the travel direction.
                p, q = segments[cur]
                din = (q[0] - p[0], q[1] - p[1])

                def straightness(k):
                    a, b = segments[k]
                    dout = (b[0] - a[0], b[1] - a[1])
                    n = np.hypot(*din) * np.hypot(*dout)
                    return (din[0] * dout[0] + din[1] * dout[1]) / n if n else -2.0

                nxts.sort(key=straightness, reverse=True)
            cur = nxts[0]
            used[cur] = True
            chain.append(cur)
        return chain

    # Chain heads (open contours hitting the mask/domain edge) first, then
    # whatever remains are cycles.
    order = [i for i in range(len(segments)) if key(segments[i][0]) not in has_incoming]
    order += list(range(len(segments)))
    for idx in order:
        if used[idx]:
            continue
        chain = walk(idx)
        pts = [segments[chain[0]][0]]
        for k in chain:
            pts.append(segments[k][1])
        closed = key(pts[0]) == key(pts[-1]) and len(pts) > 3
        if closed:
            pts = pts[:-1]
        arr = np.array(pts)
        # Drop near-duplicate consecutive vertices.
        keep = [0]
        for n in range(1, len(arr)):
            if np.linalg.norm(arr[n] - arr[keep[-1]]) > tol:
                keep.append(n)
        arr = arr[keep]
        if closed and len(arr) >= 3:
            try:
                polylines.append(Polyline2D(arr, closed=True))
            except FieldError:
                pass
        elif not closed and len(arr) >= 2:
            polylines.append(Polyline2D(arr, closed=False))
    return polylines


# ---------------------------------------------------------------------------
# PGM I/O (P2 ascii / P5 binary), intensities mapped to [0, 1]
# ---------------------------------------------------------------------------

def read_pgm(path) -> ScalarField2D:
    """Read a P2/P5 PGM image as a field with values in [0, 1].

    Pixel (column, row) maps to node (i, j) with j counted from the bottom
    image row, so that the field's y axis points up.
    """
    with open(path, "rb") as f:
        data = f.read()
    header = []
    pos = 0
    while len(header) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if m is None:
            raise FieldError(f"truncated PGM header in {path}")
        tok = m.group(1)
        pos += m.end()
        if not tok.startswith(b"#"):
            header.append(tok)
    magic = header[0]
    width, height, maxval = (int(t) for t in header[1:4])
    if magic == b"P5":
        raw = data[pos + 1:]  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        pix = np.frombuffer(raw, dtype=dtype, count=width * height)
    elif magic == b"P2":
        pix = np.array(data[pos:].split()[: width * height], dtype=float)
    else:
        raise FieldError(f"unsupported PGM magic {magic!r}")
    img = pix.reshape(height, width).astype(float) / maxval
    values = img[::-1, :].T  # (x, y) with y up
    grid = Grid2D((0.0, 0.0), (1.0, 1.0), (width, height))
    return ScalarField2D(grid, values)


def write_pgm(field: ScalarField2D, path, maxval: int = 255, binary: bool = True):
    """Write a field (clipped to [0, 1]) as PGM; inverse of :func:`read_pgm`."""
    v = np.clip(field.values, 0.0, 1.0)
    img = np.round(v.T[::-1, :] * maxval).astype(np.uint16 if maxval > 255 else np.uint8)
    height, width = img.shape
    if binary:
        with open(path, "wb") as f:
            f.write(f"P5\n{width} {height}\n{maxval}\n".encode())
            if maxval > 255:
                f.write(img.astype(">u2").tobytes())
            else:
                f.write(img.tobytes())
    else:
        with open(path, "w") as f:
            f.write(f"P2\n{width} {height}\n{maxval}\n")
            for row in img:
                f.write(" ".join(str(int(x)) for x in row) + "\n")
