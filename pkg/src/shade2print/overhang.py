"""Overhang detection and repair for 3D printing.

Detection compares two arrival times over the printed object: the ideal
build time T1 = (height above the plate) / v0 against the arrival time
T2 of a front that starts on the first layer and travels with the
anisotropic speed

    v(a) = v0 / max(tan(alpha) |P a|, |h . a|),    P = I - h h^T,

which slows directions shallower than the limit overhang angle alpha.
Regions reached noticeably later than their height warrants hang over
air.

Repair grows the solid with the outward normal speed

    C1 (z_max - z) max(cos(theta) - cos(alpha), 0) + C2 max(-kappa, 0)

applied only where the surface points downward (n3 < 0) above the build
plate, until every zero-level sample is printable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import ScalarField3D
from .levelset import (
    LevelSetState,
    NormalSpeedLaw,
    curvature_field,
    evolve,
    normal_field,
    solve_anisotropic_eikonal,
)

__all__ = [
    "Printability",
    "PrintConfig",
    "PrintabilityReport",
    "RepairResult",
    "classify",
    "anisotropic_speed",
    "detect_overhangs",
    "repair_overhangs",
    "zero_level_samples",
    "extract_zero_surface",
]


class Printability(enum.Enum):
    UNPRINTABLE = "unprintable"
    MODIFIABLE = "modifiable"
    SAFE = "safe"


@dataclass(frozen=True)
class PrintConfig:
    """Printing parameters: limit overhang angle (the 45 degree rule by
    default), build direction, print rate, build-plate height, repair
    speed weights and the evolution time cap."""

    alpha: float = math.pi / 4
    h_build: tuple = (0.0, 0.0, 1.0)
    v0: float = 1.0
    z_min: float = 0.0
    c1: float | None = None   # default 1 / (z_max - z_min), set per object
    c2: float | None = None   # default grid spacing
    t_f: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.alpha < math.pi / 2:
            raise ValueError("alpha must lie in (0, pi/2)")
        if self.v0 <= 0:
            raise ValueError("v0 must be positive")
        h = np.asarray(self.h_build, dtype=float)
        n = np.linalg.norm(h)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("h_build must be a unit vector")
        object.__setattr__(self, "h_build", tuple(h / n))
        for name in ("c1", "c2"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")


@dataclass
class PrintabilityReport:
    classes: np.ndarray            # Printability value per surface sample
    points: np.ndarray             # (N, 3) surface sample positions
    overhang_mask: np.ndarray | None = None   # grid mask from detection
    fraction_printable: float = 0.0

    @classmethod
    def from_samples(cls, points, normals, alpha, overhang_mask=None,
                     z_min=None):
        classes = np.array(
            [classify(n, alpha) for n in normals], dtype=object)
        supported = np.zeros(len(points), bool)
        if z_min is not None and len(points):
            # downward faces resting on the build plate are held up by it
            supported = points[:, 2] <= z_min + 1e-9
        printable = sum(1 for k, c in enumerate(classes)
                        if supported[k] or c is not Printability.UNPRINTABLE)
        frac = printable / len(classes) if len(classes) else 1.0
        return cls(classes=classes, points=points,
                   overhang_mask=overhang_mask, fraction_printable=frac)


def classify(N, alpha: float) -> Printability:
    """Printability of a surface element with unit exterior normal ``N``:
    unprintable when the angle to the pull of gravity is below the limit
    angle, safe when the element faces upward, modifiable between."""
    N = np.asarray(N, dtype=float)
    if abs(np.linalg.norm(N) - 1.0) > 1e-6:
        raise ValueError("N must be a unit vector")
    cos_theta = -N[2]          # G . N with G = (0, 0, -1)
    if cos_theta > math.cos(alpha):
        return Printability.UNPRINTABLE
    if N[2] >= 0.0:
        return Printability.SAFE
    return Printability.MODIFIABLE


def anisotropic_speed(a, config: PrintConfig):
    """Front speed along direction(s) ``a`` (last axis = components):
    v0 straight up and within the limit cone, smaller beyond it."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(config.h_build)
    ah = a @ h
    pa = a - ah[..., None] * h if a.ndim > 1 else a - ah * h
    horiz = np.linalg.norm(pa, axis=-1)
    denom = np.maximum(math.tan(config.alpha) * horiz, np.abs(ah))
    return config.v0 / np.maximum(denom, 1e-12)


def zero_level_samples(field: ScalarField3D):
    """Points where the level-set function changes sign along grid
    edges (linear interpolation), with unit normals interpolated from
    nodal gradients.  Returns ``(points, normals)``."""
    phi = field.values
    grid = field.grid
    nrm = normal_field(field)
    pts, normals = [], []
    axes_coords = grid.coords()
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = phi[tuple(lo)], phi[tuple(hi)]
        cross = (a <= 0.0) != (b <= 0.0)   # inside is phi <= 0
        for idx in np.argwhere(cross):
            i, j, k = idx
            jdx = list(idx)
            jdx[axis] += 1
            va, vb = phi[i, j, k], phi[tuple(jdx)]
            t = va / (va - vb) if va != vb else 0.0
            p = np.array([axes_coords[0][i], axes_coords[1][j],
                          axes_coords[2][k]], dtype=float)
            p[axis] += t * grid.spacing[axis]
            n = (1 - t) * nrm[i, j, k] + t * nrm[tuple(jdx)]
            ln = np.linalg.norm(n)
            if ln < 1e-12:
                continue
            pts.append(p)
            normals.append(n / ln)
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.asarray(pts), np.asarray(normals)


def detect_overhangs(sdf_field: ScalarField3D, config: PrintConfig):
    """Two-arrival-time overhang detection on a signed-distance field.

    Returns ``(report, T1, T2)``; the report's grid mask marks interior
    nodes whose anisotropic arrival lags the ideal build time by more
    than 2h/v0.
    """
    grid = sdf_field.grid
    interior = sdf_field.values <= 0.0
    if not interior.any():
        raise ValueError("empty object")
    X, Y, Z = grid.meshgrid()
    h = np.asarray(config.h_build)
    height = X * h[0] + Y * h[1] + Z * h[2] - config.z_min
    hz = grid.spacing[2]
    first_layer = interior & (height <= 0.5 * hz)
    if not first_layer.any():
        raise ValueError("object does not touch the build plate")

    T1 = np.where(interior, height / config.v0, np.inf)
    speed_fn = lambda normals: anisotropic_speed(normals, config)
    T2_field, _ = solve_anisotropic_eikonal(
        grid, speed_fn, first_layer, mask=interior,
        init_direction=config.h_build)
    tau = 2.0 * max(grid.spacing) / config.v0
    mask = interior & (T2_field.values - T1 > tau)

    pts, normals = zero_level_samples(sdf_field)
    report = PrintabilityReport.from_samples(pts, normals, config.alpha,
                                             overhang_mask=mask,
                                             z_min=config.z_min)
    return report, ScalarField3D(grid, T1), T2_field


@dataclass
class RepairResult:
    state: LevelSetState
    trace: list = dc_field(default_factory=list)   # (t, fraction printable)
    printable: bool = False
    steps: int = 0
    added: np.ndarray | None = None                # nodes added to the solid
    config: PrintConfig | None = None


def _printable_fraction(field, alpha, z_min):
    pts, normals = zero_level_samples(field)
    if len(pts) == 0:
        return 1.0
    bad = sum(1 for k, n in enumerate(normals)
              if pts[k, 2] > z_min + 1e-9
              and classify(n, alpha) is Printability.UNPRINTABLE)
    return 1.0 - bad / len(pts)


def repair_overhangs(state: LevelSetState, config: PrintConfig,
                     check_every: int = 10, max_steps: int = 100_000,
                     angle_margin: float | None = None):
    """Grow the solid until every zero-level sample is printable.

    The level-set function is evolved with the gated outward speed; it
    never increases anywhere, stays untouched at and below the build
    plate, and the printable fraction is sampled every ``check_every``
    steps (and at the start and end).

    ``angle_margin`` (cosine units, default: the coarsest grid spacing)
    is added to the angle threshold inside the speed only, so the grown
    chamfer overshoots the limit angle by O(h) and the strict
    classification of the final surface clears it despite O(h) normal
    error.
    """
    fld = state.field
    grid = fld.grid
    phi0 = fld.values
    X, Y, Z = grid.meshgrid()
    hmin = min(grid.spacing)

    pts0, _ = zero_level_samples(fld)
    if len(pts0) == 0:
        raise ValueError("state has no zero level")
    z_max = float(pts0[:, 2].max())
    c1 = config.c1 if config.c1 is not None else 1.0 / max(z_max - config.z_min, 1e-12)
    c2 = config.c2 if config.c2 is not None else hmin
    cos_alpha = math.cos(config.alpha)
    margin = angle_margin if angle_margin is not None else max(grid.spacing)

    def speed_array(values):
        f = fld.with_values(values)
        n = normal_field(f)
        kappa = curvature_field(f)
        cos_theta = -n[..., 2]
        v1 = np.maximum(cos_theta - cos_alpha + margin, 0.0)
        v2 = np.maximum(-kappa, 0.0)
        v = c1 * np.maximum(z_max - Z, 0.0) * v1 + c2 * v2
        gate = (n[..., 2] < 0.0) & (Z > config.z_min)
        return np.where(gate, v, 0.0)

    cur = state
    trace = [(cur.t, _printable_fraction(cur.field, config.alpha, config.z_min))]
    steps = 0
    prev_vals = phi0
    printable = trace[0][1] >= 1.0
    while not printable and cur.t < config.t_f and steps < max_steps:
        v = speed_array(cur.field.values)
        vmax = float(np.max(v))
        if vmax <= 0.0:
            printable = _printable_fraction(cur.field, config.alpha, config.z_min) >= 1.0
            break
        dt = 0.45 * hmin / vmax
        dt = min(dt, config.t_f - cur.t)
        law = NormalSpeedLaw(lambda t, coords, _v=v: _v)
        cur = evolve(cur, law, dt, 1)
        # the speed is nonnegative, so phi can only decrease; the clamp
        # guards against round-off flipping that inequality
        vals = np.minimum(cur.field.values, prev_vals)
        cur = LevelSetState(cur.field.with_values(vals), cur.t)
        prev_vals = vals
        steps += 1
        if steps % check_every == 0:
            frac = _printable_fraction(cur.field, config.alpha, config.z_min)
            trace.append((cur.t, frac))
            printable = frac >= 1.0
    final_frac = _printable_fraction(cur.field, config.alpha, config.z_min)
    if not trace or trace[-1][0] != cur.t:
        trace.append((cur.t, final_frac))
    printable = final_frac >= 1.0
    added = (cur.field.values < 0.0) & (phi0 >= 0.0)
    return RepairResult(state=cur, trace=trace, printable=printable,
                        steps=steps, added=added, config=config)


def extract_zero_surface(field: ScalarField3D, name: str = "zero-level"):
    """Watertight surface of the region ``phi < 0`` as a blocky
    voxel-face mesh (faces between inside and outside nodes, two
    triangles each).  A first-order stand-in for a marching-cubes
    extraction: geometry is accurate to one cell."""
    from .mesh import TriangleMesh

    phi = field.values
    grid = field.grid
    inside = phi < 0.0
    xs, ys, zs = grid.coords()
    hx, hy, hz = grid.spacing
    tris = []

    def corners(i, j, k):
        # cube of half-spacings centered on the node
        x0, x1 = xs[i] - hx / 2, xs[i] + hx / 2
        y0, y1 = ys[j] - hy / 2, ys[j] + hy / 2
        z0, z1 = zs[k] - hz / 2, zs[k] + hz / 2
        return x0, x1, y0, y1, z0, z1

    nx, ny, nz = phi.shape
    for i, j, k in np.argwhere(inside):
        x0, x1, y0, y1, z0, z1 = corners(i, j, k)
        faces = (
            (i + 1 >= nx or not inside[i + 1, j, k],
             ((x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1))),
            (i - 1 < 0 or not inside[i - 1, j, k],
             ((x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0))),
            (j + 1 >= ny or not inside[i, j + 1, k],
             ((x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0))),
            (j - 1 < 0 or not inside[i, j - 1, k],
             ((x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1))),
            (k + 1 >= nz or not inside[i, j, k + 1],
             ((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1))),
            (k - 1 < 0 or not inside[i, j, k - 1],
             ((x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0))),
        )
        for exposed, (a, b, c, d) in faces:
            if exposed:
                tris.append((a, b, c))
                tris.append((a, c, d))
    if not tris:
        raise ValueError("empty zero level")
    return TriangleMesh(np.asarray(tris, dtype=float), name=name)
