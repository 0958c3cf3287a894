"""Triangle meshes: heightfield-to-solid conversion, STL I/O and
validation.

A mesh is a flat array of facets (three vertices plus a unit normal).
The STL conventions enforced by :func:`validate`: shared vertices only
(no vertex on the interior of another facet's edge), strictly positive
coordinates on export, outward normals consistent with counterclockwise
winding seen from outside, and watertightness (every edge used exactly
twice, in opposite directions).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import ScalarField2D

__all__ = [
    "Facet",
    "TriangleMesh",
    "MeshReport",
    "MeshError",
    "heightfield_to_solid",
    "stl_read",
    "stl_write",
    "validate",
]

NORMAL_TOL = 1e-6


class MeshError(ValueError):
    pass


def facet_normal(v1, v2, v3):
    """Unit normal of the vertex triple (right-hand rule)."""
    n = np.cross(np.subtract(v2, v1), np.subtract(v3, v2))
    ln = np.linalg.norm(n)
    if ln == 0.0:
        return np.zeros(3)
    return n / ln


@dataclass(frozen=True)
class Facet:
    """One triangle: three vertices and a unit normal.  Construction is
    permissive (validation reports degeneracies and normal/winding
    mismatches); use :meth:`from_vertices` to get a consistent normal."""

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2", "v3", "normal"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def from_vertices(cls, v1, v2, v3):
        return cls(v1, v2, v3, facet_normal(v1, v2, v3))

    @property
    def area(self) -> float:
        return 0.5 * float(np.linalg.norm(
            np.cross(self.v2 - self.v1, self.v3 - self.v1)))


class TriangleMesh:
    """Immutable triangle soup backed by arrays: ``tris`` with shape
    (F, 3, 3) (facet, vertex, coordinate) and ``normals`` (F, 3)."""

    def __init__(self, tris, normals=None, name: str = "mesh", metadata=None):
        tris = np.asarray(tris, dtype=float)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3):
            raise MeshError("tris must have shape (F, 3, 3)")
        self.tris = tris
        if normals is None:
            normals = _normals_of(tris)
        else:
            normals = np.asarray(normals, dtype=float)
            if normals.shape != (tris.shape[0], 3):
                raise MeshError("normals must have shape (F, 3)")
        self.normals = normals
        self.name = name
        self.metadata = dict(metadata or {})

    @classmethod
    def from_facets(cls, facets, name: str = "mesh"):
        tris = np.array([[f.v1, f.v2, f.v3] for f in facets], dtype=float)
        normals = np.array([f.normal for f in facets], dtype=float)
        if len(facets) == 0:
            tris = np.zeros((0, 3, 3))
            normals = np.zeros((0, 3))
        return cls(tris, normals, name)

    def __len__(self):
        return self.tris.shape[0]

    def facets(self):
        for t, n in zip(self.tris, self.normals):
            yield Facet(t[0], t[1], t[2], n)

    @property
    def bounds(self):
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        pts = self.tris.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def translated(self, offset) -> "TriangleMesh":
        meta = dict(self.metadata)
        meta["shift"] = tuple(
            np.asarray(offset, float) + np.asarray(meta.get("shift", (0, 0, 0)))
        )
        return TriangleMesh(self.tris + np.asarray(offset, float),
                            self.normals, self.name, meta)

    def signed_volume(self) -> float:
        """Sum of per-facet signed tetrahedron volumes; positive for a
        closed outward-oriented surface."""
        a, b, c = self.tris[:, 0], self.tris[:, 1], self.tris[:, 2]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _normals_of(tris):
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 1])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return np.where(ln > 0, n / np.where(ln == 0, 1, ln), 0.0)


# ---------------------------------------------------------------------------
# Heightfield to watertight solid
# ---------------------------------------------------------------------------

def heightfield_to_solid(u: ScalarField2D, base_z: float,
                         name: str = "heightfield") -> TriangleMesh:
    """Closed solid from a height field: triangulated top surface, flat
    bottom plate at ``base_z``, vertical walls along the mask boundary.

    Cells are active when all four corner nodes are in the mask; the
    height must stay strictly above ``base_z`` on active corners.
    """
    grid = u.grid
    vals = u.values
    mask = u.mask if u.mask is not None else np.ones(vals.shape, bool)
    nx, ny = vals.shape
    cells = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
    if not cells.any():
        raise MeshError("mask contains no full cell")
    corner = np.zeros_like(mask)
    corner[:-1, :-1] |= cells
    corner[1:, :-1] |= cells
    corner[:-1, 1:] |= cells
    corner[1:, 1:] |= cells
    if np.any(vals[corner] <= base_z):
        raise MeshError("height field dips to or below the base plane")

    xs, ys = grid.coords()
    tris = []

    def node(i, j, z=None):
        return (xs[i], ys[j], vals[i, j] if z is None else z)

    for i, j in np.argwhere(cells):
        p00, p10 = node(i, j), node(i + 1, j)
        p01, p11 = node(i, j + 1), node(i + 1, j + 1)
        # top: counterclockwise from above
        tris.append((p00, p10, p11))
        tris.append((p00, p11, p01))
        b00, b10 = node(i, j, base_z), node(i + 1, j, base_z)
        b01, b11 = node(i, j + 1, base_z), node(i + 1, j + 1, base_z)
        # bottom: clockwise from above
        tris.append((b00, b11, b10))
        tris.append((b00, b01, b11))

    # walls on cell sides not shared with another active cell, traversed
    # counterclockwise around each cell so the solid sits on the left
    padded = np.zeros((nx + 1, ny + 1), bool)
    padded[1:nx, 1:ny] = cells
    for i, j in np.argwhere(cells):
        sides = (
            ((i, j), (i + 1, j), padded[i + 1, j]),          # south
            ((i + 1, j), (i + 1, j + 1), padded[i + 2, j + 1]),  # east
            ((i + 1, j + 1), (i, j + 1), padded[i + 1, j + 2]),  # north
            ((i, j + 1), (i, j), padded[i, j + 1]),          # west
        )
        for (ia, ja), (ib, jb), neighbor in sides:
            if neighbor:
                continue
            pb = node(ia, ja, base_z)
            qb = node(ib, jb, base_z)
            qt = node(ib, jb)
            pt = node(ia, ja)
            tris.append((pb, qb, qt))
            tris.append((pb, qt, pt))

    return TriangleMesh(np.asarray(tris, dtype=float), name=name)


# ---------------------------------------------------------------------------
# STL I/O
# ---------------------------------------------------------------------------

def _f32(x: float) -> float:
    return float(np.float32(x))


def _fmt(x: float) -> str:
    # shortest decimal that round-trips through float32
    x32 = np.float32(x)
    for prec in range(1, 10):
        s = f"{float(x32):.{prec}g}"
        if np.float32(float(s)) == x32:
            return s
    return f"{float(x32):.9g}"


def stl_write(mesh: TriangleMesh, path, fmt: str = "ascii",
              check: bool = True, shift_step: float = 1.0) -> TriangleMesh:
    """Write ``mesh`` to ``path`` in ASCII or binary STL.

    If any coordinate is non-strictly-positive the mesh is first shifted
    by a positive multiple of ``shift_step`` along all three axes (the
    shift lands in the written mesh's metadata, and the possibly shifted
    mesh is returned).  With ``check`` enabled the (shifted) mesh must
    validate cleanly.
    """
    if fmt not in ("ascii", "binary"):
        raise MeshError(f"unknown STL format {fmt!r}")
    out = mesh
    lo, _ = mesh.bounds
    if len(mesh) and lo.min() <= 0.0:
        k = math.floor(-lo.min() / shift_step) + 1
        out = mesh.translated((k * shift_step,) * 3)
    if check:
        report = validate(out)
        if not report.ok:
            raise MeshError(f"mesh fails validation: {report.summary()}")
    if fmt == "ascii":
        lines = [f"solid {out.name}"]
        for t, n in zip(out.tris, out.normals):
            lines.append(f"  facet normal {_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}")
            lines.append("    outer loop")
            for v in t:
                lines.append(f"      vertex {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append(f"endsolid {out.name}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        with open(path, "wb") as fh:
            header = out.name.encode()[:80]
            fh.write(header + b"\0" * (80 - len(header)))
            fh.write(struct.pack("<I", len(out)))
            for t, n in zip(out.tris, out.normals):
                data = [n[0], n[1], n[2],
                        t[0, 0], t[0, 1], t[0, 2],
                        t[1, 0], t[1, 1], t[1, 2],
                        t[2, 0], t[2, 1], t[2, 2]]
                fh.write(struct.pack("<12f", *data))
                fh.write(struct.pack("<H", 0))
    return out


def stl_read(path) -> TriangleMesh:
    """Read an ASCII or binary STL file (flavor auto-detected)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] == b"solid":
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError:
            text = None
        if text is not None and "endsolid" in text and "facet" in text:
            return _parse_ascii(text)
    return _parse_binary(blob)


def _parse_ascii(text) -> TriangleMesh:
    tokens = text.split()
    pos = 0

    def expect(*words):
        nonlocal pos
        for w in words:
            if pos >= len(tokens) or tokens[pos] != w:
                got = tokens[pos] if pos < len(tokens) else "<eof>"
                raise MeshError(f"malformed STL: expected {w!r}, got {got!r}")
            pos += 1

    def floats(k):
        nonlocal pos
        vals = []
        for _ in range(k):
            try:
                vals.append(float(tokens[pos]))
            except (ValueError, IndexError):
                raise MeshError("malformed STL: bad float")
            pos += 1
        return vals

    expect("solid")
    name_parts = []
    while pos < len(tokens) and tokens[pos] != "facet" and tokens[pos] != "endsolid":
        name_parts.append(tokens[pos])
        pos += 1
    name = " ".join(name_parts) or "mesh"
    tris, normals = [], []
    while pos < len(tokens) and tokens[pos] == "facet":
        expect("facet", "normal")
        normals.append(floats(3))
        expect("outer", "loop")
        tri = []
        for _ in range(3):
            expect("vertex")
            tri.append(floats(3))
        tris.append(tri)
        expect("endloop")
        expect("endfacet")
    expect("endsolid")
    tris = np.asarray(tris) if tris else np.zeros((0, 3, 3))
    normals = np.asarray(normals) if len(normals) else np.zeros((0, 3))
    return TriangleMesh(tris, normals, name)


def _parse_binary(blob) -> TriangleMesh:
    if len(blob) < 84:
        raise MeshError("malformed STL: binary file too short")
    (count,) = struct.unpack_from("<I", blob, 80)
    if len(blob) < 84 + 50 * count:
        raise MeshError("malformed STL: truncated binary facet data")
    name = blob[:80].split(b"\0", 1)[0].decode("latin-1").strip() or "mesh"
    tris = np.empty((count, 3, 3))
    normals = np.empty((count, 3))
    off = 84
    for k in range(count):
        vals = struct.unpack_from("<12f", blob, off)
        normals[k] = vals[0:3]
        tris[k] = np.reshape(vals[3:12], (3, 3))
        off += 50
    return TriangleMesh(tris, normals, name)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class MeshReport:
    degenerate: list = dc_field(default_factory=list)       # facet indices
    t_junctions: list = dc_field(default_factory=list)      # (vertex, facet)
    nonpositive: list = dc_field(default_factory=list)      # facet indices
    orientation: list = dc_field(default_factory=list)      # facet indices
    open_edges: list = dc_field(default_factory=list)       # (point, point)
    misoriented_edges: list = dc_field(default_factory=list)
    watertight: bool = False
    volume: float = 0.0

    @property
    def ok(self) -> bool:
        return (self.watertight and not self.degenerate
                and not self.t_junctions and not self.nonpositive
                and not self.orientation and not self.misoriented_edges
                and self.volume > 0.0)

    def summary(self) -> str:
        parts = []
        if self.degenerate:
            parts.append(f"{len(self.degenerate)} degenerate facets")
        if self.t_junctions:
            parts.append(f"{len(self.t_junctions)} vertices on foreign edges")
        if self.nonpositive:
            parts.append(f"{len(self.nonpositive)} facets with non-positive "
                         "coordinates")
        if self.orientation:
            parts.append(f"{len(self.orientation)} normal/winding mismatches")
        if self.open_edges:
            parts.append(f"{len(self.open_edges)} open edges")
        if self.misoriented_edges:
            parts.append(f"{len(self.misoriented_edges)} inconsistently "
                         "wound edges")
        if not parts and self.volume <= 0.0:
            parts.append("non-positive enclosed volume")
        return "; ".join(parts) if parts else "ok"


def validate(mesh: TriangleMesh, require_positive: bool = True) -> MeshReport:
    """Check the STL conventions: vertex sharing, positive coordinates,
    normal/winding consistency, watertightness and orientation.

    Vertices closer than 1e-6 times the bounding-box diagonal are
    treated as identical.
    """
    report = MeshReport()
    F = len(mesh)
    if F == 0:
        return report
    lo, hi = mesh.bounds
    diag = float(np.linalg.norm(hi - lo))
    tol = 1e-6 * diag if diag > 0 else 1e-12

    computed = _normals_of(mesh.tris)
    areas = 0.5 * np.linalg.norm(
        np.cross(mesh.tris[:, 1] - mesh.tris[:, 0],
                 mesh.tris[:, 2] - mesh.tris[:, 0]), axis=1)
    report.degenerate = list(np.nonzero(areas <= tol * tol)[0])
    if require_positive:
        report.nonpositive = list(
            np.nonzero((mesh.tris <= 0.0).any(axis=(1, 2)))[0])
    stored_ok = np.linalg.norm(mesh.normals, axis=1) > 0.5
    mism = np.einsum("ij,ij->i", computed, mesh.normals) < 1.0 - NORMAL_TOL
    report.orientation = list(np.nonzero(mism & stored_ok
                                         & (areas > tol * tol))[0])

    # weld vertices on a tolerance lattice
    pts = mesh.tris.reshape(-1, 3)
    keys = np.round(pts / tol).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    vid = inverse.reshape(F, 3)

    edges = {}
    for fi in range(F):
        if fi in report.degenerate:
            continue
        a, b, c = vid[fi]
        for p, q in ((a, b), (b, c), (c, a)):
            edges[(p, q)] = edges.get((p, q), 0) + 1

    def point_of(v):
        return tuple(np.asarray(uniq[v], float) * tol)

    seen = set()
    for (p, q), cnt in edges.items():
        if (q, p) in seen or (p, q) in seen:
            continue
        seen.add((p, q))
        rev = edges.get((q, p), 0)
        if cnt == 1 and rev == 1:
            continue
        if cnt + rev != 2:
            report.open_edges.append((point_of(p), point_of(q)))
        else:
            report.misoriented_edges.append((point_of(p), point_of(q)))
    report.watertight = not report.open_edges and not report.misoriented_edges

    report.t_junctions = _find_t_junctions(mesh.tris, vid, uniq, tol)
    report.volume = mesh.signed_volume()
    return report


def _find_t_junctions(tris, vid, uniq, tol):
    """Vertices lying strictly inside another facet's edge (bucketed by
    edge bounding boxes to stay near-linear)."""
    F = tris.shape[0]
    pts = tris.reshape(-1, 3)
    nv = uniq.shape[0]
    vpos = np.zeros((nv, 3))
    vpos[vid.reshape(-1)] = pts

    lengths = []
    edge_list = []
    for fi in range(F):
        a, b, c = vid[fi]
        for p, q in ((a, b), (b, c), (c, a)):
            if p != q:
                edge_list.append((p, q, fi))
                lengths.append(np.linalg.norm(vpos[q] - vpos[p]))
    if not edge_list:
        return []
    cell = max(float(np.median(lengths)), tol * 10)

    buckets = {}
    for vi in range(nv):
        key = tuple((vpos[vi] / cell).astype(np.int64))
        buckets.setdefault(key, []).append(vi)

    hits = []
    reported = set()
    for p, q, fi in edge_list:
        a, b = vpos[p], vpos[q]
        lo = np.minimum(a, b) - tol
        hi = np.maximum(a, b) + tol
        ks = (lo / cell).astype(np.int64)
        ke = (hi / cell).astype(np.int64)
        d = b - a
        dd = float(d @ d)
        for kx in range(ks[0], ke[0] + 1):
            for ky in range(ks[1], ke[1] + 1):
                for kz in range(ks[2], ke[2] + 1):
                    for vi in buckets.get((kx, ky, kz), ()):
                        if vi == p or vi == q or (vi, p, q) in reported:
                            continue
                        w = vpos[vi] - a
                        t = float(w @ d) / dd
                        if t <= 1e-9 or t >= 1 - 1e-9:
                            continue
                        if np.linalg.norm(w - t * d) <= tol:
                            reported.add((vi, p, q))
                            hits.append((tuple(vpos[vi]), fi))
    return hits
