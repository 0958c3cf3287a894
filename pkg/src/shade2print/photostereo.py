"""Two-image photometric stereo under orthographic projection and
Lambertian shading.

Subtracting the two image irradiance equations cancels the normalization
and the diffuse albedo, leaving the linear transport problem

    b(x, y) . grad u = f,   b = (I2 l1' - I1 l1'', I2 l2' - I1 l2''),
                            f = I2 l3' - I1 l3''

with Dirichlet data g on the boundary, solved by first-order upwind
Gauss-Seidel sweeps.  The albedo can be recovered afterwards from either
image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .field import ScalarField2D
from .reflectance import LightSetup

__all__ = [
    "PSProblem",
    "PSSolution",
    "assemble_bf",
    "solve_transport",
    "solve",
    "solve_three",
    "recover_albedo",
]

DEGENERATE_REL_EPS = 1e-9


def _unit_light(L):
    return LightSetup(L).L


@dataclass(frozen=True)
class PSProblem:
    """Two images of the same surface under two non-parallel lights
    (unit vectors with positive third component), plus Dirichlet
    boundary height ``g`` (scalar or full array)."""

    I1: ScalarField2D
    I2: ScalarField2D
    L1: np.ndarray
    L2: np.ndarray
    g: float | np.ndarray = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L1", _unit_light(self.L1))
        object.__setattr__(self, "L2", _unit_light(self.L2))
        if self.I1.grid != self.I2.grid:
            raise ValueError("images must share one grid")
        m1, m2 = self.I1.mask, self.I2.mask
        if (m1 is None) != (m2 is None) or (
            m1 is not None and not np.array_equal(m1, m2)
        ):
            raise ValueError("images must share one mask")
        if np.linalg.norm(np.cross(self.L1, self.L2)) < 1e-12:
            raise ValueError("lights must not be parallel")


@dataclass
class PSSolution:
    u: ScalarField2D
    residual: float
    degenerate: np.ndarray   # |b| below threshold: no characteristic direction
    filled: np.ndarray       # degenerate nodes filled by neighbor averaging
    passes: int


def assemble_bf(problem: PSProblem):
    """Transport field and right-hand side of the subtracted image
    irradiance equations; both scale linearly with a joint image scaling,
    which is why the height is albedo independent."""
    I1, I2 = problem.I1.values, problem.I2.values
    l1p, l2p, l3p = problem.L1
    l1s, l2s, l3s = problem.L2
    b = np.stack([I2 * l1p - I1 * l1s, I2 * l2p - I1 * l2s], axis=-1)
    f = I2 * l3p - I1 * l3s
    return b, ScalarField2D(problem.I1.grid, f, problem.I1.mask)


def _interior(mask):
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1] = (
        mask[1:-1, 1:-1]
        & mask[:-2, 1:-1] & mask[2:, 1:-1]
        & mask[1:-1, :-2] & mask[1:-1, 2:]
    )
    return inner


def solve_transport(
    b: np.ndarray,
    f: ScalarField2D,
    g=0.0,
    tol: float = 1e-12,
    max_pass: int = 2000,
) -> PSSolution:
    """Upwind Gauss-Seidel solution of ``b . grad u = f`` with ``u = g``
    on the mask boundary.

    Nodes where ``|b|`` falls below ``1e-9 max|b|`` have no usable
    characteristic direction: they are flagged, left out of the sweeps
    and filled afterwards by repeated averaging of solved neighbors.
    The reported residual is the sup norm of the upwind defect over the
    clean interior.
    """
    grid = f.grid
    mask = f.mask if f.mask is not None else np.ones(f.values.shape, bool)
    if not mask.any():
        raise ValueError("empty mask")
    interior = _interior(mask)
    bmag = np.linalg.norm(b, axis=-1)
    eps = DEGENERATE_REL_EPS * float(bmag.max()) if bmag.max() > 0 else 0.0
    degenerate = interior & (bmag <= eps)
    update = interior & ~degenerate

    if np.isscalar(g):
        gv = np.full(mask.shape, float(g))
    else:
        gv = np.asarray(g, dtype=float)
        if gv.shape != mask.shape:
            raise ValueError("boundary data shape mismatch")
    u = gv.copy()
    u[update] = 0.0

    b1 = np.ascontiguousarray(b[..., 0])
    b2 = np.ascontiguousarray(b[..., 1])
    passes = _kernels.transport_sweeps(
        u, b1, b2, np.ascontiguousarray(f.values), update,
        grid.spacing[0], grid.spacing[1], max_pass, tol,
    )

    filled = np.zeros_like(degenerate)
    if degenerate.any():
        solved = mask & ~degenerate
        todo = degenerate.copy()
        for _ in range(int(np.sum(todo)) + 1):
            if not todo.any():
                break
            progressed = False
            for i, j in np.argwhere(todo):
                acc, cnt = 0.0, 0
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1] \
                            and solved[ni, nj]:
                        acc += u[ni, nj]
                        cnt += 1
                if cnt:
                    u[i, j] = acc / cnt
                    filled[i, j] = True
                    progressed = True
            solved |= filled
            todo = degenerate & ~filled
            if not progressed:
                break

    residual = _upwind_residual(u, b1, b2, f.values, update, grid.spacing)
    return PSSolution(
        u=ScalarField2D(grid, u, f.mask),
        residual=residual,
        degenerate=degenerate,
        filled=filled,
        passes=passes,
    )


def _upwind_residual(u, b1, b2, f, where, spacing):
    hx, hy = spacing
    res = 0.0
    for i, j in np.argwhere(where):
        if b1[i, j] > 0:
            dx = (u[i, j] - u[i - 1, j]) / hx
        elif b1[i, j] < 0:
            dx = (u[i + 1, j] - u[i, j]) / hx
        else:
            dx = (u[i + 1, j] - u[i - 1, j]) / (2 * hx)
        if b2[i, j] > 0:
            dy = (u[i, j] - u[i, j - 1]) / hy
        elif b2[i, j] < 0:
            dy = (u[i, j + 1] - u[i, j]) / hy
        else:
            dy = (u[i, j + 1] - u[i, j - 1]) / (2 * hy)
        res = max(res, abs(b1[i, j] * dx + b2[i, j] * dy - f[i, j]))
    return res


def solve(problem: PSProblem, tol: float = 1e-12, max_pass: int = 2000) -> PSSolution:
    """Assemble and solve the two-image problem."""
    b, f = assemble_bf(problem)
    return solve_transport(b, f, problem.g, tol=tol, max_pass=max_pass)


def solve_three(images, lights, g=0.0, tol: float = 1e-12,
                max_pass: int = 2000) -> PSSolution:
    """Three-image extension for non-coplanar lights: least-squares
    combination of the three pairwise two-image systems (each pair is
    exactly determined, so the combination averages the pairwise
    heights; degeneracy masks are intersected)."""
    if len(images) != 3 or len(lights) != 3:
        raise ValueError("need exactly three images and three lights")
    pairs = [(0, 1), (0, 2), (1, 2)]
    sols = [
        solve(PSProblem(images[i], images[j], lights[i], lights[j], g),
              tol=tol, max_pass=max_pass)
        for i, j in pairs
    ]
    vals = np.mean([s.u.values for s in sols], axis=0)
    return PSSolution(
        u=ScalarField2D(images[0].grid, vals, images[0].mask),
        residual=max(s.residual for s in sols),
        degenerate=np.logical_and.reduce([s.degenerate for s in sols]),
        filled=np.logical_or.reduce([s.filled for s in sols]),
        passes=max(s.passes for s in sols),
    )


def recover_albedo(problem: PSProblem, u: ScalarField2D,
                   eps: float = 1e-6) -> ScalarField2D:
    """Pointwise diffuse albedo ``I1 / (N . L1)`` from the solved height;
    nodes with grazing incidence (``N . L1 <= eps``) or zero intensity in
    either image are masked out."""
    ux, uy = np.gradient(u.values, *u.grid.spacing, edge_order=1)
    norm = np.sqrt(1.0 + ux * ux + uy * uy)
    ndl = (-ux * problem.L1[0] - uy * problem.L1[1] + problem.L1[2]) / norm
    ok = ndl > eps
    ok &= (problem.I1.values > 0) & (problem.I2.values > 0)
    if problem.I1.mask is not None:
        ok &= problem.I1.mask
    vals = np.where(ok, problem.I1.values / np.where(ok, ndl, 1.0), 0.0)
    return ScalarField2D(u.grid, vals, ok)
