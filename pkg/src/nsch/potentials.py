"""Double-well potential, truncation, mobilities and the singular families.

All functions are vectorized over ``phi``. The auxiliary potentials
``H`` and ``K`` and the singular functionals ``G`` and ``J`` are only
determined up to integration constants by their second derivatives; we
anchor ``G(1/2) = J(1/2) = 0`` and make ``G'`` and ``J'`` odd about 1/2.
Outside ``[eps, 1 - eps]`` every function continues with the constant
second derivative reached at the knot, so all of them are C^1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

ViscSpec = Union[float, tuple]


@dataclass(frozen=True)
class PhysParams:
    """Physical constants of the model.

    ``nu`` is either a constant viscosity or a pair ``(nu0, nu1)`` blended
    linearly in the clamped phase field.
    """

    eta: float = 1e-2
    eps: float = 1e-8
    lam: float = 1e-1
    gamma: float = 1e-3
    nu: ViscSpec = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if not (self.lam > 0 and self.gamma > 0):
            raise ValueError("lambda and gamma must be positive")
        nus = self.nu if isinstance(self.nu, tuple) else (self.nu,)
        if len(nus) not in (1, 2) or any(not v > 0 for v in nus):
            raise ValueError("viscosities must be positive")

    @property
    def constant_viscosity(self) -> bool:
        return not isinstance(self.nu, tuple) or self.nu[0] == self.nu[1]

    def viscosity(self, phi):
        if not isinstance(self.nu, tuple):
            return np.full_like(np.asarray(phi, dtype=float), self.nu)
        nu0, nu1 = self.nu
        return nu0 + (nu1 - nu0) * np.clip(phi, 0.0, 1.0)


# -- double well -------------------------------------------------------------

def F(phi, eta):
    phi = np.asarray(phi, dtype=float)
    return phi**2 * (1.0 - phi) ** 2 / (4.0 * eta**2)


def Fc(phi, eta):
    phi = np.asarray(phi, dtype=float)
    return (phi**4 - 2.0 * phi**3 + 1.5 * phi**2) / (4.0 * eta**2)


def Fe(phi, eta):
    phi = np.asarray(phi, dtype=float)
    return -(phi**2) / (8.0 * eta**2)


def Fc_prime(phi, eta):
    phi = np.asarray(phi, dtype=float)
    return (4.0 * phi**3 - 6.0 * phi**2 + 3.0 * phi) / (4.0 * eta**2)


def Fe_prime(phi, eta):
    return -np.asarray(phi, dtype=float) / (4.0 * eta**2)


def F_prime(phi, eta):
    return Fc_prime(phi, eta) + Fe_prime(phi, eta)


def Fc_second(phi, eta):
    phi = np.asarray(phi, dtype=float)
    return 3.0 * (phi - 0.5) ** 2 / eta**2


def Fc_prime_divdiff(a, b, eta):
    """Divided difference ``(Fc'(a) - Fc'(b)) / (a - b)``, exact for a == b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (4.0 * (a * a + a * b + b * b) - 6.0 * (a + b) + 3.0) / (4.0 * eta**2)


# -- truncation and mobilities -------------------------------------------------

def trunc(phi, eps):
    """Clamp to ``[eps, 1 - eps]``."""
    return np.clip(np.asarray(phi, dtype=float), eps, 1.0 - eps)


def mobility(phi):
    phi = np.asarray(phi, dtype=float)
    return phi * (1.0 - phi)


def mob_trunc(phi, eps):
    return trunc(phi, eps) * trunc(1.0 - np.asarray(phi, dtype=float), eps)


# -- G family: G'' = 1/M_eps, H'' = 1/T ---------------------------------------

def H_prime(phi, eps):
    phi = np.asarray(phi, dtype=float)
    lo, hi = eps, 1.0 - eps
    inner = np.log(np.clip(phi, lo, hi))
    return np.where(
        phi < lo,
        np.log(lo) + (phi - lo) / lo,
        np.where(phi > hi, np.log(hi) + (phi - hi) / hi, inner),
    )


def G_prime(phi, eps):
    phi = np.asarray(phi, dtype=float)
    return H_prime(phi, eps) - H_prime(1.0 - phi, eps)


def _G_inner(phi):
    return phi * np.log(phi) + (1.0 - phi) * np.log1p(-phi) + np.log(2.0)


def G_val(phi, eps):
    phi = np.asarray(phi, dtype=float)
    lo, hi = eps, 1.0 - eps
    curv = 1.0 / (eps * (1.0 - eps))
    inner = _G_inner(np.clip(phi, lo, hi))
    below = _G_inner(lo) + G_prime(lo, eps) * (phi - lo) + 0.5 * curv * (phi - lo) ** 2
    above = _G_inner(hi) + G_prime(hi, eps) * (phi - hi) + 0.5 * curv * (phi - hi) ** 2
    return np.where(phi < lo, below, np.where(phi > hi, above, inner))


# -- J family: J'' = 1/sqrt(M_eps), K'' = sqrt(T(1-phi)/T(phi)) ---------------

def _K_inner(phi):
    return np.arcsin(np.sqrt(phi)) + np.sqrt(phi * (1.0 - phi))


def K_prime(phi, eps):
    phi = np.asarray(phi, dtype=float)
    lo, hi = eps, 1.0 - eps
    inner = _K_inner(np.clip(phi, lo, hi))
    below = _K_inner(lo) + np.sqrt(hi / lo) * (phi - lo)
    above = _K_inner(hi) + np.sqrt(lo / hi) * (phi - hi)
    return np.where(phi < lo, below, np.where(phi > hi, above, inner))


def J_prime(phi, eps):
    phi = np.asarray(phi, dtype=float)
    return K_prime(phi, eps) - K_prime(1.0 - phi, eps)


def _J_inner(phi):
    # antiderivative of 2 arcsin(sqrt(phi)) - pi/2, zero at phi = 1/2
    return (
        (2.0 * phi - 1.0) * np.arcsin(np.sqrt(phi))
        + np.sqrt(phi * (1.0 - phi))
        - 0.5 * np.pi * phi
        + 0.25 * np.pi
        - 0.5
    )


def J_val(phi, eps):
    phi = np.asarray(phi, dtype=float)
    lo, hi = eps, 1.0 - eps
    curv = 1.0 / np.sqrt(eps * (1.0 - eps))
    inner = _J_inner(np.clip(phi, lo, hi))
    below = _J_inner(lo) + J_prime(lo, eps) * (phi - lo) + 0.5 * curv * (phi - lo) ** 2
    above = _J_inner(hi) + J_prime(hi, eps) * (phi - hi) + 0.5 * curv * (phi - hi) ** 2
    return np.where(phi < lo, below, np.where(phi > hi, above, inner))
