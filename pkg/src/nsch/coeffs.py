"""Per-element, per-axis secant coefficients.

Each function returns an ``(Ne, 2)`` array; column ``k`` is the diagonal
entry for axis ``k + 1`` on each element. Along an axis-parallel edge the
corresponding gradient component of any P1 function is the nodal
difference divided by ``+-h``, so secant ratios of nodal differences make
the discrete chain rules hold exactly, e.g. ``tG * d_k I_h G'(phi) =
-d_k I_h H'(1 - phi)``.

Where the two nodal values (nearly) coincide the secant is replaced by
its limit at the edge midpoint: ``trunc`` for the transport
coefficients and ``M_eps`` for the mobilities. Falling back to an
element average instead would make the coefficients jump across the
equality threshold, and the fixed-point iteration can then cycle
between the two branches.
"""

from __future__ import annotations

import numpy as np

from nsch import potentials as pot
from nsch.mesh import Mesh

EQUAL_RTOL = 1e-12


def _edge_values(mesh: Mesh, phi):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.num_nodes,):
        raise ValueError(f"expected {mesh.num_nodes} nodal values, got shape {phi.shape}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("phase field has non-finite nodal values")
    el = mesh.elements
    a0 = phi[el[:, 0]][:, None]  # value at x0, broadcast over axes
    ak = phi[el[:, 1:]]  # (Ne, 2) value at x_k
    return phi, a0, ak


def _equal_mask(a0, ak):
    return np.abs(ak - a0) <= EQUAL_RTOL * np.maximum(1.0, np.abs(a0))


def _edge_mid(a0, ak):
    return 0.5 * (a0 + ak)


def _secant(num_k, num_0, den_k, den_0, equal):
    safe = np.where(equal, 1.0, den_k - den_0)
    return (num_k - num_0) / safe


def tG_coeff(mesh: Mesh, phi, eps: float) -> np.ndarray:
    phi, a0, ak = _edge_values(mesh, phi)
    eq = _equal_mask(a0, ak)
    fallback = pot.trunc(_edge_mid(a0, ak), eps)
    ratio = _secant(
        pot.H_prime(1.0 - ak, eps), pot.H_prime(1.0 - a0, eps),
        pot.G_prime(ak, eps), pot.G_prime(a0, eps), eq,
    )
    return np.where(eq, fallback, -ratio)


def mG_coeff(mesh: Mesh, phi, eps: float) -> np.ndarray:
    phi, a0, ak = _edge_values(mesh, phi)
    eq = _equal_mask(a0, ak)
    fallback = pot.mob_trunc(_edge_mid(a0, ak), eps)
    ratio = _secant(ak, a0, pot.G_prime(ak, eps), pot.G_prime(a0, eps), eq)
    return np.where(eq, fallback, ratio)


def tJ_coeff(mesh: Mesh, phi, eps: float) -> np.ndarray:
    phi, a0, ak = _edge_values(mesh, phi)
    eq = _equal_mask(a0, ak)
    fallback = pot.trunc(_edge_mid(a0, ak), eps)
    ratio = _secant(
        pot.K_prime(1.0 - ak, eps), pot.K_prime(1.0 - a0, eps),
        pot.J_prime(ak, eps), pot.J_prime(a0, eps), eq,
    )
    return np.where(eq, fallback, -ratio)


def mJ_coeff(mesh: Mesh, phi, eps: float) -> np.ndarray:
    phi, a0, ak = _edge_values(mesh, phi)
    eq = _equal_mask(a0, ak)
    fallback = pot.mob_trunc(_edge_mid(a0, ak), eps)
    ratio = _secant(ak, a0, pot.J_prime(ak, eps), pot.J_prime(a0, eps), eq)
    return np.where(eq, fallback, ratio**2)


def rH_coeff(mesh: Mesh, phi, eta: float) -> np.ndarray:
    """Divided difference of Fc' along each axis edge (Fc'' on equal values)."""
    phi, a0, ak = _edge_values(mesh, phi)
    return pot.Fc_prime_divdiff(ak, a0, eta)
