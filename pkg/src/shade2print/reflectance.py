"""Forward brightness models: Lambertian, Oren-Nayar, Phong, Blinn-Phong.

Given a unit surface normal, a light/viewer setup and material parameters,
each model produces an image intensity in [0, 1].  All functions are pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Model", "LightSetup", "ReflectanceParams", "brightness", "oren_nayar_ab"]

_UNIT_TOL = 1e-9


class Model(enum.Enum):
    LAMBERTIAN = "lambertian"
    OREN_NAYAR = "oren_nayar"
    PHONG = "phong"
    BLINN_PHONG = "blinn_phong"


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-12:
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"{name} must be a unit vector, |{name}| = {n}")
        v = v / n
    return v


@dataclass(frozen=True)
class LightSetup:
    """Unit light direction (toward the source, third component positive:
    the source sits above the surface) and unit viewer direction."""

    L: np.ndarray
    V: np.ndarray = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "L", _unit(self.L, "L"))
        object.__setattr__(self, "V", _unit(self.V, "V"))
        if self.L[2] <= 0:
            raise ValueError("light must point down from above the surface (l3 > 0)")


@dataclass(frozen=True)
class ReflectanceParams:
    """Material parameters for the four supported brightness models.

    Component weights satisfy ``k_A + k_D + k_S <= 1`` (a strict inequality
    models absorption).
    """

    model: Model = Model.LAMBERTIAN
    gamma_D: float = 1.0     # diffuse albedo
    gamma_S: float = 1.0     # specular albedo
    sigma: float = 0.0       # Oren-Nayar roughness
    alpha_exp: float = 1.0   # Phong specular exponent
    c_shine: float = 1.0     # Blinn-Phong shininess exponent
    k_A: float = 0.0
    k_D: float = 1.0
    k_S: float = 0.0
    I_A: float = 0.0         # ambient intensity

    def __post_init__(self):
        for name in ("gamma_D", "gamma_S", "I_A"):
            x = getattr(self, name)
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {x}")
        for name in ("sigma", "alpha_exp", "c_shine", "k_A", "k_D", "k_S"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.k_A + self.k_D + self.k_S > 1.0 + 1e-12:
            raise ValueError("k_A + k_D + k_S must be <= 1")


def oren_nayar_ab(sigma: float) -> tuple[float, float]:
    """Roughness-dependent constants of the Oren-Nayar model.

    ``A = 1 - 0.5 sigma^2 / (sigma^2 + 0.33)``,
    ``B = 0.45 sigma^2 / (sigma^2 + 0.09)``.
    """
    s2 = sigma * sigma
    return 1.0 - 0.5 * s2 / (s2 + 0.33), 0.45 * s2 / (s2 + 0.09)


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def brightness(N, params: ReflectanceParams, light: LightSetup) -> float:
    """Image intensity reflected by a surface element with unit normal ``N``.

    The normal must be unit length and oriented away from the solid.  The
    result is clamped to [0, 1]; negative cosines are clamped to zero
    before any exponentiation.
    """
    N = np.asarray(N, dtype=float)
    if abs(np.linalg.norm(N) - 1.0) > 1e-6:
        raise ValueError("N must be a unit vector")
    L, V = light.L, light.V
    cos_i = float(np.dot(N, L))

    if params.model is Model.LAMBERTIAN:
        return _clamp01(params.gamma_D * max(0.0, cos_i))

    if params.model is Model.OREN_NAYAR:
        A, B = oren_nayar_ab(params.sigma)
        cos_r = float(np.dot(N, V))
        theta_i = math.acos(min(max(cos_i, -1.0), 1.0))
        theta_r = math.acos(min(max(cos_r, -1.0), 1.0))
        alpha = max(theta_i, theta_r)
        beta = min(theta_i, theta_r)
        # Azimuths of L and V projected onto the image plane.  A vanishing
        # projection (vertical L or V) leaves the azimuth undefined; the
        # factor is then taken as 1, the coincident-azimuth limit L = V.
        pl = math.hypot(L[0], L[1])
        pv = math.hypot(V[0], V[1])
        if pl < 1e-15 or pv < 1e-15:
            azim = 1.0
        else:
            phi_i = math.atan2(L[1], L[0])
            phi_r = math.atan2(V[1], V[0])
            azim = max(0.0, math.cos(phi_r - phi_i))
        tan_beta = math.tan(min(beta, math.pi / 2 - 1e-12))
        value = max(0.0, cos_i) * (A + B * math.sin(alpha) * tan_beta * azim)
        return _clamp01(params.gamma_D * value)

    if params.model is Model.PHONG:
        R = 2.0 * cos_i * N - L
        cos_s = max(0.0, float(np.dot(R, V)))
        spec = cos_s ** params.alpha_exp
        return _clamp01(
            params.k_A * params.I_A
            + params.k_D * params.gamma_D * max(0.0, cos_i)
            + params.k_S * params.gamma_S * spec
        )

    if params.model is Model.BLINN_PHONG:
        H = L + V
        nh = np.linalg.norm(H)
        cos_d = max(0.0, float(np.dot(N, H / nh))) if nh > 1e-15 else 0.0
        return _clamp01(
            params.k_A * params.I_A
            + params.k_D * params.gamma_D * max(0.0, cos_i)
            + params.k_S * params.gamma_S * cos_d ** params.c_shine
        )

    raise ValueError(f"unknown model {params.model}")
