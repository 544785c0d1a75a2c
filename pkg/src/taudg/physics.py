"""Scalar conservation laws and manufactured steady cases.

Both shipped laws are scalar (one unknown per node).  A law provides the
advective flux vector, a pointwise characteristic speed for CFL estimates, a
one-point numerical flux, and an isotropic viscosity ``mu`` (viscous flux is
mu * grad q).  Manufactured cases attach an exact steady field and the
matching source term with hand-coded derivatives; boundary data is sampled
from the exact field.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class ScalarLaw:
    """Base class; subclasses implement fluxes for one scalar unknown."""

    n_vars = 1
    name = "scalar"

    def __init__(self, mu: float = 0.0):
        if mu < 0.0:
            raise ConfigError(f"viscosity must be >= 0, got {mu}")
        self.mu = float(mu)
        self.exact = None
        self.source = None

    def with_manufactured(self, exact, source):
        self.exact = exact
        self.source = source
        return self

    # interface ------------------------------------------------------------
    def advective_flux(self, q):
        raise NotImplementedError

    def wave_speed(self, q):
        """Pointwise magnitude of the characteristic velocity vector."""
        raise NotImplementedError

    def riemann_flux(self, ql, qr, normal):
        """Numerical advective flux through a unit normal, per point."""
        raise NotImplementedError


class AdvectionDiffusion(ScalarLaw):
    """Linear advection-diffusion: flux = (a q, b q) - mu grad q."""

    name = "advection-diffusion"

    def __init__(self, velocity=(1.0, 1.0), mu: float = 0.0):
        super().__init__(mu)
        self.velocity = (float(velocity[0]), float(velocity[1]))

    def advective_flux(self, q):
        a, b = self.velocity
        return a * q, b * q

    def wave_speed(self, q):
        return np.full_like(q, float(np.hypot(*self.velocity)))

    def riemann_flux(self, ql, qr, normal):
        # full upwinding: the trace from the side the wind blows from
        a, b = self.velocity
        an = a * normal[..., 0] + b * normal[..., 1]
        return 0.5 * an * (ql + qr) + 0.5 * np.abs(an) * (ql - qr)


class ViscousBurgers(ScalarLaw):
    """Viscous Burgers with flux (q^2/2, q^2/2) - mu grad q."""

    name = "viscous-burgers"

    def advective_flux(self, q):
        f = 0.5 * q * q
        return f, f

    def wave_speed(self, q):
        return np.sqrt(2.0) * np.abs(q)

    def riemann_flux(self, ql, qr, normal):
        # Rusanov with lambda = max(|ql|, |qr|)
        nsum = normal[..., 0] + normal[..., 1]
        lam = np.maximum(np.abs(ql), np.abs(qr))
        return 0.25 * (ql * ql + qr * qr) * nsum - 0.5 * lam * (qr - ql)


# manufactured cases --------------------------------------------------------


def _case_advdiff_sine(mu=0.1, velocity=(1.0, 1.0)):
    a, b = velocity
    pi = np.pi

    def exact(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def source(x, y):
        sx, cx = np.sin(pi * x), np.cos(pi * x)
        sy, cy = np.sin(pi * y), np.cos(pi * y)
        return a * pi * cx * sy + b * pi * sx * cy + 2.0 * mu * pi * pi * sx * sy

    return AdvectionDiffusion(velocity, mu).with_manufactured(exact, source)


def _case_burgers_tanh(mu=0.1, delta=0.25):
    def exact(x, y):
        return np.tanh((x + y - 1.0) / delta)

    def source(x, y):
        t = np.tanh((x + y - 1.0) / delta)
        sech2 = 1.0 - t * t
        return 2.0 * t * sech2 / delta + 4.0 * mu * t * sech2 / (delta * delta)

    return ViscousBurgers(mu).with_manufactured(exact, source)


def _case_advdiff_boundary_layer(mu=0.01, delta=0.05, slope=0.5, velocity=(1.0, 0.5)):
    # wall layer at y=0 under a linear cross profile: all the resolution
    # demand is normal to the wall, the x direction is exact at first order
    a, b = velocity

    def exact(x, y):
        return (1.0 + slope * x) * (1.0 - np.exp(-y / delta))

    def source(x, y):
        e = np.exp(-y / delta)
        g = 1.0 + slope * x
        qx = slope * (1.0 - e)
        qy = g * e / delta
        qyy = -g * e / (delta * delta)
        return a * qx + b * qy - mu * qyy

    return AdvectionDiffusion(velocity, mu).with_manufactured(exact, source)


def _case_advdiff_runge(mu=0.1, width=0.35, center=0.5, velocity=(1.0, 1.0)):
    # separable rational bump: poles at center +- i*width keep the spectral
    # decay geometric, which the log-linear extrapolation relies on
    a, b = velocity

    def f(t):
        z = (t - center) / width
        return 1.0 / (1.0 + z * z)

    def fp(t):
        z = (t - center) / width
        return -2.0 * z / (width * (1.0 + z * z) ** 2)

    def fpp(t):
        z = (t - center) / width
        return 2.0 * (3.0 * z * z - 1.0) / (width * width * (1.0 + z * z) ** 3)

    def exact(x, y):
        return f(x) * f(y)

    def source(x, y):
        qx = fp(x) * f(y)
        qy = f(x) * fp(y)
        qxx = fpp(x) * f(y)
        qyy = f(x) * fpp(y)
        return a * qx + b * qy - mu * (qxx + qyy)

    return AdvectionDiffusion(velocity, mu).with_manufactured(exact, source)


def _case_advdiff_aniso(mu=0.05, width=0.3, center=0.5, slope=0.5,
                        velocity=(1.0, 0.5)):
    # rational bump in x times a linear profile in y: all the resolution
    # demand sits in one direction, the other is exact at any order
    a, b = velocity

    def f(t):
        z = (t - center) / width
        return 1.0 / (1.0 + z * z)

    def fp(t):
        z = (t - center) / width
        return -2.0 * z / (width * (1.0 + z * z) ** 2)

    def fpp(t):
        z = (t - center) / width
        return 2.0 * (3.0 * z * z - 1.0) / (width * width * (1.0 + z * z) ** 3)

    def exact(x, y):
        return f(x) * (1.0 + slope * y)

    def source(x, y):
        g = 1.0 + slope * y
        qx = fp(x) * g
        qy = f(x) * slope
        qxx = fpp(x) * g
        return a * qx + b * qy - mu * qxx

    return AdvectionDiffusion(velocity, mu).with_manufactured(exact, source)


def _case_advdiff_poly(mu=0.1, velocity=(1.0, 1.0)):
    # polynomial exact field (degree 2 per direction): quadrature-exact regime
    a, b = velocity

    def exact(x, y):
        return x * x * y + y * y + 2.0 * x

    def source(x, y):
        qx = 2.0 * x * y + 2.0
        qy = x * x + 2.0 * y
        lap = 2.0 * y + 2.0
        return a * qx + b * qy - mu * lap

    return AdvectionDiffusion(velocity, mu).with_manufactured(exact, source)


CASES = {
    "advdiff-sine": _case_advdiff_sine,
    "burgers-tanh": _case_burgers_tanh,
    "advdiff-boundary-layer": _case_advdiff_boundary_layer,
    "advdiff-runge": _case_advdiff_runge,
    "advdiff-aniso": _case_advdiff_aniso,
    "advdiff-poly": _case_advdiff_poly,
}


def make_case(name: str, **params) -> ScalarLaw:
    try:
        factory = CASES[name]
    except KeyError:
        known = ", ".join(sorted(CASES))
        raise ConfigError(f"unknown case {name!r}; known cases: {known}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for case {name!r}: {exc}") from None
