"""Energies, volume, bound violations and residuals of the discrete laws.

Residuals of the discrete energy law and of the singular-functional
estimates are reported multiplied by ``dt`` (energy units), as
``LHS - RHS`` of the corresponding inequality: a converged step gives a
value that is non-positive up to fixed-point and solver tolerances.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from nsch import coeffs
from nsch import potentials as pot
from nsch.fespace import p1_gradients
from nsch.schemes import State, Stepper, mobility_coeff


@dataclass
class DiagRecord:
    step: int
    t: float
    E_kin: float
    E_mix: float
    E_total: float
    volume: float
    phi_min: float
    phi_max: float
    neg_sq: float
    over_sq: float
    G_func: float
    J_func: float
    energy_residual: float = math.nan
    energy_scale: float = math.nan
    G_residual: float = math.nan
    G_scale: float = math.nan
    J_residual: float = math.nan
    J_scale: float = math.nan
    fp_iters: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


RECORD_FIELDS = [f.name for f in fields(DiagRecord)]


def mixing_potential_integral(stepper: Stepper, phi) -> float:
    """Integral of F: lumped I_h(F) for G_eps, exact quadrature of F(phi_h) otherwise."""
    eta = stepper.params.phys.eta
    if stepper.params.scheme == "Geps":
        return float(np.sum(stepper.m * pot.F(phi, eta)))
    sp_ = stepper.space
    return float(np.sum(sp_.wdet * pot.F(sp_.eval_p1(phi), eta)))


def energies(stepper: Stepper, state: State) -> tuple[float, float, float]:
    """Kinetic, mixing (lambda included) and total energy."""
    lam = stepper.params.phys.lam
    u = state.u.ravel()
    e_kin = 0.5 * float(u @ (stepper.Mvel @ u))
    grad_sq = float(state.phi @ (stepper.K @ state.phi))
    e_mix = lam * (0.5 * grad_sq + mixing_potential_integral(stepper, state.phi))
    return e_kin, e_mix, e_kin + e_mix


def bound_violations(stepper: Stepper, phi) -> tuple[float, float, float, float]:
    """``(int I_h(phi_-)^2, int I_h((phi-1)_+)^2, min phi, max phi)``."""
    phi = np.asarray(phi, dtype=float)
    neg = np.minimum(phi, 0.0)
    over = np.maximum(phi - 1.0, 0.0)
    M = stepper.space.mass_p1
    return float(neg @ (M @ neg)), float(over @ (M @ over)), float(phi.min()), float(phi.max())


def energy_law_terms(stepper: Stepper, s0: State, s1: State) -> dict:
    """Every term of the discrete energy law for the step ``s0 -> s1``, times dt."""
    params = stepper.params
    phys, dt = params.phys, params.dt
    _, _, e0 = energies(stepper, s0)
    _, _, e1 = energies(stepper, s1)
    u1 = s1.u.ravel()
    du = u1 - s0.u.ravel()
    dphi = s1.phi - s0.phi
    visc = float(u1 @ (stepper.viscous_matrix(s1.phi) @ u1))
    Mdiag = mobility_coeff(stepper.mesh, s1.phi, params.scheme, phys.eps)
    grad_mu = p1_gradients(stepper.mesh, s1.mu)
    if Mdiag is None:
        mob = float(np.sum(stepper.mesh.areas[:, None] * grad_mu**2))
    else:
        mob = float(np.sum(stepper.mesh.areas[:, None] * Mdiag * grad_mu**2))
    terms = {
        "dE": e1 - e0,
        "viscous": dt * visc,
        "mobility": dt * phys.gamma * mob,
        "kinetic_jump": 0.5 * float(du @ (stepper.Mvel @ du)),
        "interface_jump": 0.5 * phys.lam * float(dphi @ (stepper.K @ dphi)),
    }
    return terms


def energy_law_residual(stepper: Stepper, s0: State, s1: State) -> tuple[float, float]:
    """``(residual, scale)``: residual is the law's LHS times dt (should be <= 0)."""
    terms = energy_law_terms(stepper, s0, s1)
    _, _, e1 = energies(stepper, s1)
    return sum(terms.values()), max(abs(e1), sum(abs(v) for v in terms.values()))


def g_estimate_terms(stepper: Stepper, s0: State, s1: State) -> dict:
    phys, dt = stepper.params.phys, stepper.params.dt
    lam, gam, eta, eps = phys.lam, phys.gamma, phys.eta, phys.eps
    m = stepper.m
    omega = s1.mu - lam * (pot.Fc_prime(s1.phi, eta) + pot.Fe_prime(s0.phi, eta))
    R = coeffs.rH_coeff(stepper.mesh, s1.phi, eta)
    gphi = p1_gradients(stepper.mesh, s1.phi)
    gsq0 = float(s0.phi @ (stepper.K @ s0.phi))
    gsq1 = float(s1.phi @ (stepper.K @ s1.phi))
    return {
        "dG": float(np.sum(m * (pot.G_val(s1.phi, eps) - pot.G_val(s0.phi, eps)))),
        "omega": dt * gam * float(np.sum(m * omega**2)),
        "convex": dt * gam * lam * float(np.sum(stepper.mesh.areas[:, None] * R * gphi**2)),
        "rhs": -dt * gam * lam / (8.0 * eta**2) * (gsq0 + gsq1),
    }


def j_estimate_terms(stepper: Stepper, s0: State, s1: State) -> dict:
    phys, dt = stepper.params.phys, stepper.params.dt
    eps = phys.eps
    MJ = coeffs.mJ_coeff(stepper.mesh, s1.phi, eps)
    gmu = p1_gradients(stepper.mesh, s1.mu)
    gsq1 = float(s1.phi @ (stepper.K @ s1.phi))
    return {
        "dJ": float(np.sum(stepper.m * (pot.J_val(s1.phi, eps) - pot.J_val(s0.phi, eps)))),
        "rhs": -dt * phys.gamma * (float(np.sum(stepper.mesh.areas[:, None] * MJ * gmu**2)) + gsq1),
    }


def estimate_residuals(stepper: Stepper, s0: State, s1: State, scheme: str | None = None):
    """``(residual, scale)`` of the singular-functional estimate of ``scheme``.

    Only the G_eps and J_eps schemes carry such an estimate; the scale is
    the sum of absolute values of all terms.
    """
    scheme = scheme or stepper.params.scheme
    if scheme != stepper.params.scheme:
        raise ValueError(f"stepper runs {stepper.params.scheme!r}, not {scheme!r}")
    if scheme == "Geps":
        terms = g_estimate_terms(stepper, s0, s1)
    elif scheme == "Jeps":
        terms = j_estimate_terms(stepper, s0, s1)
    else:
        raise ValueError("no singular-functional estimate applies to the CM scheme")
    return sum(terms.values()), sum(abs(v) for v in terms.values())


def make_record(stepper: Stepper, state: State, step: int, prev: State | None = None,
                fp_iters: int = 0) -> DiagRecord:
    eps = stepper.params.phys.eps
    e_kin, e_mix, e_tot = energies(stepper, state)
    neg, over, lo, hi = bound_violations(stepper, state.phi)
    m = stepper.m
    rec = DiagRecord(
        step=step,
        t=state.t,
        E_kin=e_kin,
        E_mix=e_mix,
        E_total=e_tot,
        volume=float(np.sum(m * state.phi)),
        phi_min=lo,
        phi_max=hi,
        neg_sq=neg,
        over_sq=over,
        G_func=float(np.sum(m * pot.G_val(state.phi, eps))),
        J_func=float(np.sum(m * pot.J_val(state.phi, eps))),
        fp_iters=fp_iters,
    )
    if prev is not None:
        rec.energy_residual, rec.energy_scale = energy_law_residual(stepper, prev, state)
        if stepper.params.scheme == "Geps":
            rec.G_residual, rec.G_scale = estimate_residuals(stepper, prev, state)
        elif stepper.params.scheme == "Jeps":
            rec.J_residual, rec.J_scale = estimate_residuals(stepper, prev, state)
    return rec
