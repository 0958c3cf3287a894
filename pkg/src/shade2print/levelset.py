"""Level-set front propagation and stationary eikonal solvers.

Supports advective, normal-speed and anisotropic normal-speed evolution
laws with explicit first-order upwind (Godunov) time stepping, a
fast-sweeping solver for ``v |grad T| = 1`` (isotropic and
direction-dependent speed via lagged normals), geometric queries
(normal, mean curvature) and signed-distance reinitialization.

Boundary conditions are homogeneous Neumann (zero-gradient ghost cells)
for the evolution laws, and Dirichlet source values for the stationary
solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import _kernels
from ._kernels import INF
from .field import Grid2D, Grid3D, ScalarField2D, ScalarField3D

__all__ = [
    "LevelSetState",
    "AdvectiveLaw",
    "NormalSpeedLaw",
    "AnisotropicSpeedLaw",
    "CFLError",
    "evolve",
    "normal_field",
    "curvature_field",
    "normal_and_curvature",
    "solve_stationary_eikonal",
    "solve_anisotropic_eikonal",
    "reinitialize",
    "eikonal_residual",
]


class CFLError(RuntimeError):
    """Time step violates the explicit stability bound."""


@dataclass(frozen=True)
class LevelSetState:
    """A level-set function together with the current evolution time."""

    field: ScalarField2D | ScalarField3D
    t: float = 0.0


@dataclass(frozen=True)
class AdvectiveLaw:
    """Transport by a velocity vector field: ``u_t + v . grad u = 0``.

    ``velocity(t, coords)`` receives the meshgrid coordinate arrays and
    returns one array (or scalar) per axis.
    """

    velocity: Callable


@dataclass(frozen=True)
class NormalSpeedLaw:
    """Motion in the normal direction: ``u_t + v |grad u| = 0``.

    ``speed(t, coords)`` returns a scalar or an array over the grid;
    positive speed grows the enclosed region.
    """

    speed: Callable


@dataclass(frozen=True)
class AnisotropicSpeedLaw:
    """Normal motion with direction-dependent speed
    ``u_t + v(t, x, N) |grad u| = 0``; ``speed(t, coords, normals)`` gets
    the unit normal array (last axis = components)."""

    speed: Callable


def _backward_diff(phi, h, axis):
    d = np.zeros_like(phi)
    src = [slice(None)] * phi.ndim
    dst = [slice(None)] * phi.ndim
    dst[axis] = slice(1, None)
    src[axis] = slice(None, -1)
    d[tuple(dst)] = (phi[tuple(dst)] - phi[tuple(src)]) / h
    return d


def _forward_diff(phi, h, axis):
    d = np.zeros_like(phi)
    src = [slice(None)] * phi.ndim
    dst = [slice(None)] * phi.ndim
    dst[axis] = slice(None, -1)
    src[axis] = slice(1, None)
    d[tuple(dst)] = (phi[tuple(src)] - phi[tuple(dst)]) / h
    return d


def _godunov_grad_mag(phi, spacing, v):
    """Godunov upwind |grad phi| for the sign of the local speed."""
    pos = np.zeros_like(phi)
    neg = np.zeros_like(phi)
    for axis in range(phi.ndim):
        dm = _backward_diff(phi, spacing[axis], axis)
        dp = _forward_diff(phi, spacing[axis], axis)
        pos += np.maximum(dm, 0.0) ** 2 + np.minimum(dp, 0.0) ** 2
        neg += np.minimum(dm, 0.0) ** 2 + np.maximum(dp, 0.0) ** 2
    return np.where(v >= 0, np.sqrt(pos), np.sqrt(neg))


def evolve(state: LevelSetState, law, dt: float, steps: int) -> LevelSetState:
    """Explicit upwind evolution of the level-set function.

    Raises :class:`CFLError` before stepping if ``dt`` exceeds
    ``0.5 h / max|speed|`` evaluated at the initial state.
    """
    fld = state.field
    phi = fld.values.copy()
    spacing = fld.grid.spacing
    hmin = min(spacing)
    coords = fld.grid.meshgrid()
    t = state.t

    def max_speed():
        if isinstance(law, AdvectiveLaw):
            comps = law.velocity(t, coords)
            return max(float(np.max(np.abs(np.asarray(c)))) for c in comps)
        if isinstance(law, NormalSpeedLaw):
            return float(np.max(np.abs(np.asarray(law.speed(t, coords)))))
        if isinstance(law, AnisotropicSpeedLaw):
            n = normal_field(fld)
            return float(np.max(np.abs(np.asarray(law.speed(t, coords, n)))))
        raise TypeError(f"unknown speed law {law!r}")

    vmax = max_speed()
    if vmax > 0 and dt > 0.5 * hmin / vmax + 1e-15:
        raise CFLError(
            f"dt = {dt} violates CFL bound {0.5 * hmin / vmax:.3e} "
            f"(max speed {vmax:.3e})"
        )

    for _ in range(steps):
        if isinstance(law, AdvectiveLaw):
            comps = law.velocity(t, coords)
            for axis in range(phi.ndim):
                v = np.broadcast_to(np.asarray(comps[axis], dtype=float), phi.shape)
                dm = _backward_diff(phi, spacing[axis], axis)
                dp = _forward_diff(phi, spacing[axis], axis)
                phi = phi - dt * np.where(v > 0, v * dm, v * dp)
        else:
            if isinstance(law, NormalSpeedLaw):
                v = np.broadcast_to(
                    np.asarray(law.speed(t, coords), dtype=float), phi.shape
                )
            else:
                n = normal_field(fld.with_values(phi))
                v = np.broadcast_to(
                    np.asarray(law.speed(t, coords, n), dtype=float), phi.shape
                )
            phi = phi - dt * v * _godunov_grad_mag(phi, spacing, v)
        t += dt
    return LevelSetState(fld.with_values(phi), t)


def _central_gradients(values, spacing):
    return np.gradient(values, *spacing, edge_order=1)


def normal_field(field, eps: float = 1e-12):
    """Unit normals ``grad u / |grad u|`` at every node (last axis =
    components); zero where the gradient degenerates."""
    grads = _central_gradients(field.values, field.grid.spacing)
    g = np.stack(grads, axis=-1)
    mag = np.linalg.norm(g, axis=-1)
    safe = np.where(mag > eps, mag, 1.0)
    n = g / safe[..., None]
    n[mag <= eps] = 0.0
    return n


def curvature_field(field, eps: float = 1e-12):
    """Mean curvature ``div(grad u / |grad u|)`` at every node."""
    n = normal_field(field, eps)
    kappa = np.zeros(field.values.shape)
    for axis in range(n.shape[-1]):
        kappa += np.gradient(n[..., axis], field.grid.spacing[axis],
                             axis=axis, edge_order=1)
    return kappa


def normal_and_curvature(state: LevelSetState, node, eps: float = 1e-12):
    """Unit exterior normal and mean curvature at one grid node.

    Returns ``(None, None)`` (undefined flag) where the gradient
    magnitude falls below ``eps``.
    """
    fld = state.field
    grads = _central_gradients(fld.values, fld.grid.spacing)
    g = np.array([gr[tuple(node)] for gr in grads])
    mag = np.linalg.norm(g)
    if mag <= eps:
        return None, None
    kappa = curvature_field(fld, eps)[tuple(node)]
    return g / mag, float(kappa)


def _as_bool_sources(grid, sources):
    src = np.asarray(sources)
    if src.dtype == bool:
        if src.shape != tuple(grid.dims):
            raise ValueError("source mask shape mismatch")
        return src
    mask = np.zeros(tuple(grid.dims), dtype=bool)
    for node in src:
        mask[tuple(node)] = True
    return mask


def solve_stationary_eikonal(
    speed,
    sources,
    source_values=0.0,
    tol: float = 1e-12,
    max_pass: int = 1000,
    edge_cost=None,
):
    """Viscosity solution of ``v(x) |grad T| = 1`` with ``T`` fixed on the
    source set, by Godunov fast sweeping over all axis orderings.

    ``speed`` is a scalar field (values may be ``inf`` where the front
    moves freely, e.g. at brightness maxima in shape-from-shading);
    masked-out nodes never receive a value.  ``source_values`` may be a
    scalar or a full array (Dirichlet data ``g``).

    ``edge_cost`` (2D only) optionally replaces nodal slowness with a
    prescribed travel cost per grid edge: a pair ``(cx, cy)`` of arrays
    with ``cx[i, j]`` the cost between nodes (i, j) and (i+1, j) and
    ``cy[i, j]`` between (i, j) and (i, j+1).  Callers use this to
    integrate a slowness with known sub-cell structure exactly instead
    of sampling it at nodes.
    """
    v = np.asarray(speed.values, dtype=float)
    if np.any(v <= 0):
        raise ValueError("speed must be positive")
    with np.errstate(divide="ignore"):
        slowness = np.where(np.isinf(v), 0.0, 1.0 / v)
    grid = speed.grid
    frozen = _as_bool_sources(grid, sources)
    if not frozen.any():
        raise ValueError("empty source set")
    mask = speed.mask if speed.mask is not None else np.ones(frozen.shape, bool)
    T = np.full(frozen.shape, INF)
    if np.isscalar(source_values):
        T[frozen] = float(source_values)
    else:
        T[frozen] = np.asarray(source_values, dtype=float)[frozen]
    if grid.ndim == 2:
        if edge_cost is not None:
            cx = np.ascontiguousarray(edge_cost[0], dtype=float)
            cy = np.ascontiguousarray(edge_cost[1], dtype=float)
            nx, ny = frozen.shape
            if cx.shape != (nx - 1, ny) or cy.shape != (nx, ny - 1):
                raise ValueError("edge cost arrays have wrong shapes")
            _kernels.fsm2d_edge(T, cx, cy, frozen, mask, max_pass, tol)
        else:
            _kernels.fsm2d(T, slowness, frozen, mask,
                           grid.spacing[0], grid.spacing[1], max_pass, tol)
        return ScalarField2D(grid, T, speed.mask)
    if edge_cost is not None:
        raise ValueError("edge costs are supported on 2D grids only")
    _kernels.fsm3d(T, slowness, frozen, mask,
                   grid.spacing[0], grid.spacing[1], grid.spacing[2],
                   max_pass, tol)
    return ScalarField3D(grid, T, speed.mask)


def solve_anisotropic_eikonal(
    grid,
    speed_fn,
    sources,
    mask=None,
    init_direction=None,
    outer_iter: int = 20,
    outer_tol: float = 1e-6,
    tol: float = 1e-12,
    max_pass: int = 1000,
):
    """Stationary anisotropic eikonal ``v(x, N) |grad T| = 1``.

    The propagation direction ``N = grad T / |grad T|`` is lagged: each
    outer iteration freezes ``N`` from the previous arrival-time field
    and re-runs the isotropic sweeps.  ``speed_fn(normals)`` maps an
    array of unit directions (last axis = components) to speeds.
    Returns ``(T, converged)``.
    """
    nd = grid.ndim
    if init_direction is None:
        init_direction = (0.0,) * (nd - 1) + (1.0,)
    shape = tuple(grid.dims)
    n0 = np.broadcast_to(np.asarray(init_direction, float), shape + (nd,)).copy()
    mask_arr = mask if mask is not None else np.ones(shape, bool)
    fld_cls = ScalarField2D if nd == 2 else ScalarField3D
    T_prev = None
    converged = False
    for _ in range(outer_iter):
        v = np.asarray(speed_fn(n0), dtype=float)
        v = np.broadcast_to(v, shape).copy()
        sf = fld_cls(grid, v, mask_arr)
        T = solve_stationary_eikonal(sf, sources, tol=tol, max_pass=max_pass)
        if T_prev is not None:
            active = np.isfinite(T.values) & (T.values < INF / 2) & mask_arr
            diff = np.max(np.abs(T.values[active] - T_prev[active])) if active.any() else 0.0
            if diff < outer_tol:
                converged = True
                T_prev = T.values
                break
        T_prev = T.values
        # refresh propagation directions from the new arrival times
        capped = np.minimum(T.values, INF)
        grads = _central_gradients(capped, grid.spacing)
        g = np.stack(grads, axis=-1)
        magg = np.linalg.norm(g, axis=-1)
        ok = (magg > 1e-12) & np.isfinite(magg)
        n0 = np.where(ok[..., None], g / np.where(ok, magg, 1.0)[..., None], n0)
    return fld_cls(grid, T_prev, mask if mask is not None else None), converged


def eikonal_residual(T, speed):
    """Max-norm residual ``| v |grad T| - 1 |`` over interior nodes with
    finite arrival times (upwind gradient).

    Nodes whose upwind gradient vanishes are local minima of the arrival
    time: they carry Dirichlet source data, not the equation, and are
    excluded."""
    vals = T.values
    spacing = T.grid.spacing
    grads2 = np.zeros_like(vals)
    for axis in range(vals.ndim):
        dm = _backward_diff(vals, spacing[axis], axis)
        dp = _forward_diff(vals, spacing[axis], axis)
        grads2 += np.maximum(np.maximum(dm, 0.0), np.maximum(-dp, 0.0)) ** 2
    mag = np.sqrt(grads2)
    v = np.asarray(speed.values, dtype=float)
    res = np.abs(v * mag - 1.0)
    interior = np.isfinite(vals) & (vals < INF / 2) & np.isfinite(v) \
        & (mag > 0.0)
    return float(np.max(res[interior])) if interior.any() else 0.0


def reinitialize(state: LevelSetState, interface_fraction_limit: float = 0.4):
    """Replace the level-set function by the signed distance to its own
    zero level (the zero level moves by less than half a cell).

    Interface-adjacent nodes are seeded with a local first-order distance
    estimate and frozen; fast sweeping fills the rest on both sides.
    Raises ``ValueError`` when the sign pattern has no coherent front
    (e.g. alternating signs everywhere).
    """
    fld = state.field
    phi = fld.values
    spacing = fld.grid.spacing
    neg = phi < 0
    interface = np.zeros(phi.shape, bool)
    for axis in range(phi.ndim):
        sl_a = [slice(None)] * phi.ndim
        sl_b = [slice(None)] * phi.ndim
        sl_a[axis] = slice(None, -1)
        sl_b[axis] = slice(1, None)
        change = neg[tuple(sl_a)] != neg[tuple(sl_b)]
        interface[tuple(sl_a)] |= change
        interface[tuple(sl_b)] |= change
    if not interface.any():
        raise ValueError("level-set function has no zero crossing")
    if interface.mean() > interface_fraction_limit:
        raise ValueError("no coherent front: sign changes almost everywhere")

    grads = _central_gradients(phi, spacing)
    mag = np.sqrt(sum(g * g for g in grads))
    mag = np.maximum(mag, 1e-12)
    d0 = np.abs(phi) / mag
    d0 = np.minimum(d0, 2.0 * float(np.linalg.norm(spacing)))

    ones = np.ones(phi.shape)
    fld_cls = ScalarField2D if phi.ndim == 2 else ScalarField3D
    speed = fld_cls(fld.grid, ones, fld.mask)
    T = solve_stationary_eikonal(speed, interface, source_values=d0)
    signed = np.where(neg, -T.values, T.values)
    return LevelSetState(fld.with_values(signed), state.t)
