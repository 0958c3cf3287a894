"""Shared synthetic fixtures: analytic surfaces, meshes and level-set
fields with known closed-form answers."""

from __future__ import annotations

import numpy as np
import pytest

from shade2print.field import Grid2D, Grid3D, ScalarField2D, ScalarField3D
from shade2print.mesh import TriangleMesh
from shade2print.reflectance import LightSetup
from shade2print.sfs import SfSProblem


# ---------------------------------------------------------------------------
# Shape-from-shading: hemisphere of radius 1 on [-1.2, 1.2]^2
# ---------------------------------------------------------------------------

def hemisphere_problem(n: int, masked: bool = True):
    """Vertical-light Lambertian image of the unit hemisphere.

    The rendered intensity has the closed form I = sqrt(1 - r^2) inside
    the silhouette (the surface normal's third component), and 1 on the
    flat background.  Returns ``(problem, u_true, mask, r2)``.
    """
    grid = Grid2D((-1.2, -1.2), (2.4 / (n - 1), 2.4 / (n - 1)), (n, n))
    X, Y = grid.meshgrid()
    r2 = X * X + Y * Y
    u_true = np.sqrt(np.maximum(1.0 - r2, 0.0))
    inside = r2 < 1.0
    I = np.where(inside, u_true, 1.0)
    image = ScalarField2D(grid, np.clip(I, 0.0, 1.0),
                          inside if masked else None)
    problem = SfSProblem(image=image, light=LightSetup((0.0, 0.0, 1.0)))
    return problem, u_true, inside, r2


@pytest.fixture(scope="session")
def hemi64():
    return hemisphere_problem(64)


@pytest.fixture(scope="session")
def hemi128():
    return hemisphere_problem(128)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

def icosphere(subdiv: int = 3, r: float = 1.0,
              center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere: subdivided icosahedron with vertices projected
    onto the radius-r sphere (subdiv=3 gives 1280 facets)."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdiv):
        cache = {}
        next_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc),
                           (ab, bc, ca)]
        faces = next_faces
    ctr = np.asarray(center, dtype=float)
    tris = np.array([[verts[a] * r + ctr, verts[b] * r + ctr,
                      verts[c] * r + ctr] for a, b, c in faces])
    return TriangleMesh(tris, name="icosphere")


@pytest.fixture(scope="session")
def unit_icosphere():
    return icosphere(subdiv=3, r=1.0)


def box_mesh(lo, hi, name: str = "box") -> TriangleMesh:
    """Axis-aligned box as 12 outward-oriented triangles."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    p = {(i, j, k): (x1 if i else x0, y1 if j else y0, z1 if k else z0)
         for i in (0, 1) for j in (0, 1) for k in (0, 1)}
    quads = [  # outward counterclockwise
        ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),   # bottom (z0)
        ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),   # top (z1)
        ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),   # front (y0)
        ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),   # back (y1)
        ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),   # left (x0)
        ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),   # right (x1)
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((p[a], p[b], p[c]))
        tris.append((p[a], p[c], p[d]))
    return TriangleMesh(np.array(tris, dtype=float), name=name)


# ---------------------------------------------------------------------------
# Level-set / overhang fixtures on the unit cube, 49^3 nodes
# ---------------------------------------------------------------------------

def capped_cylinder_sdf(X, Y, Z, cx, cy, r, z0, z1):
    """Exact signed distance to a finite vertical cylinder."""
    dr = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2) - r
    dz = np.maximum(z0 - Z, Z - z1)
    outside = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dz, 0.0) ** 2)
    return outside + np.minimum(np.maximum(dr, dz), 0.0)


def unit_grid3(n: int = 49) -> Grid3D:
    return Grid3D((0.0, 0.0, 0.0), (1 / (n - 1),) * 3, (n, n, n))


@pytest.fixture(scope="session")
def mushroom_field():
    """Thin stem carrying a wide cap: the cap underside is a flat
    unprintable overhang (min of two capped-cylinder distances)."""
    g = unit_grid3(49)
    X, Y, Z = g.meshgrid()
    stem = capped_cylinder_sdf(X, Y, Z, 0.5, 0.5, 0.08, 0.0, 0.5)
    cap = capped_cylinder_sdf(X, Y, Z, 0.5, 0.5, 0.30, 0.5, 0.65)
    return ScalarField3D(g, np.minimum(stem, cap))


@pytest.fixture(scope="session")
def pyramid_field():
    """45-degree-sided cone standing on the plate: printable as-is."""
    g = unit_grid3(49)
    X, Y, Z = g.meshgrid()
    rad = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2)
    cone = rad - 0.4 * (1.0 - Z / 0.8)
    cone = np.where(Z > 0.8, np.maximum(cone, Z - 0.8), cone)
    return ScalarField3D(g, cone)


@pytest.fixture(scope="session")
def t_bracket():
    """Vertical column with a one-sided horizontal arm.

    Returns ``(field, solid, arm, X, Y, Z)`` where the pseudo-distance
    field is -h inside / +h outside (enough for interior masking), and
    the analytic overhang region is the part of the arm beyond the
    45-degree support cone from the column's top edge.
    """
    g = unit_grid3(49)
    X, Y, Z = g.meshgrid()
    col = (np.abs(X - 0.5) <= 0.1) & (np.abs(Y - 0.5) <= 0.1) & (Z <= 0.8)
    arm = ((X >= 0.4) & (X <= 1.0) & (np.abs(Y - 0.5) <= 0.1)
           & (Z >= 0.6) & (Z <= 0.8))
    solid = col | arm
    h = g.spacing[0]
    field = ScalarField3D(g, np.where(solid, -h, h))
    return field, solid, arm, X, Y, Z
