"""Time stepping for the G_eps-, J_eps- and constant-mobility schemes.

Each step solves the nonlinear coupled scheme by alternating a
phase-field substep (phi, mu) and a Stokes-like fluid substep (u, p)
until the relative L2 increment of all four unknowns drops below
``Params.tol``. Mobility and transport coefficients are frozen at the
previous iterate; the convex part of the potential is Newton-linearized
around it.

Unknown layouts: velocity ``(2, N + Ne)`` (nodal then bubble, per
component), pressure/phase/chemical potential ``(N,)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from nsch import coeffs
from nsch import potentials as pot
from nsch.fespace import FESpace, assemble, assemble_vector, fe_space
from nsch.linsys import (
    CondensedFactorization,
    Factorized,
    LinearSolveReport,
    augment_mean_zero,
    fill_reducing_order,
)
from nsch.mesh import Mesh
from nsch.potentials import PhysParams

log = logging.getLogger(__name__)

SCHEMES = ("Geps", "Jeps", "CM")

BoundaryData = Callable[[np.ndarray, np.ndarray, float], tuple]


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, increment: float, state=None):
        super().__init__(f"{message} (last relative increment {increment:.3e})")
        self.increment = increment
        self.state = state


@dataclass(frozen=True)
class Params:
    phys: PhysParams = field(default_factory=PhysParams)
    dt: float = 1e-4
    scheme: str = "Geps"
    tol: float = 1e-4
    max_iters: int = 50
    lin_tol: float = 1e-10
    bc: Optional[BoundaryData] = None  # (x, y, t) -> (ux, uy); None means u = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class State:
    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.u.copy(), self.p.copy(), self.phi.copy(), self.mu.copy(), self.t)


@dataclass
class StepReport:
    iterations: int
    increment: float
    increments: list = field(default_factory=list)
    solves: list = field(default_factory=list)
    coefficient_phi: Optional[np.ndarray] = None  # phi^l used for the last frozen coefficients


@dataclass
class FluidOperator:
    matrix: sp.csr_matrix  # full saddle matrix with the gauge row
    fac: CondensedFactorization  # on the free unknowns
    lift: sp.csr_matrix  # free rows, Dirichlet columns


def transport_coeff(mesh: Mesh, phi, scheme: str, eps: float):
    """P0 diagonal transport coefficient (T_h^G or T_h^J); None for CM."""
    if scheme == "Geps":
        return coeffs.tG_coeff(mesh, phi, eps)
    if scheme == "Jeps":
        return coeffs.tJ_coeff(mesh, phi, eps)
    return None


def mobility_coeff(mesh: Mesh, phi, scheme: str, eps: float):
    """P0 diagonal mobility (M^G or M^J); None for CM (unit mobility)."""
    if scheme == "Geps":
        return coeffs.mG_coeff(mesh, phi, eps)
    if scheme == "Jeps":
        return coeffs.mJ_coeff(mesh, phi, eps)
    return None


class Stepper:
    """Discrete operators on one mesh for one parameter set."""

    def __init__(self, mesh: Mesh, params: Params):
        self.mesh = mesh
        self.params = params
        self.space: FESpace = fe_space(mesh)
        sp_ = self.space
        self.N, self.Ne, self.Nb = sp_.N, sp_.Ne, sp_.Nb
        self.m = mesh.lumped_mass
        self.K = sp_.stiff_p1
        self.Mvel = sp_.mass_velocity
        # integral of each local velocity basis function over its element
        self.int_basis = mesh.areas[:, None] * (sp_.qw @ sp_.vals)[None, :]  # (Ne, 4)
        self.vel_index = np.stack([sp_.vdofs, sp_.vdofs + self.Nb])  # (2, Ne, 4)
        self.Gp = self._pressure_gradient()
        self.D = self._divergence()
        bnodes = np.flatnonzero(mesh.boundary)
        self.bnodes = bnodes
        self.dirichlet = np.concatenate([bnodes, bnodes + self.Nb])
        nfull = 2 * self.Nb + self.N + 1
        mask = np.ones(nfull, dtype=bool)
        mask[self.dirichlet] = False
        self.free = np.flatnonzero(mask)
        # bubble unknowns (x, y) of each element, as positions among the free unknowns
        pos = np.cumsum(mask) - 1
        e = np.arange(self.Ne)
        self._bubble_blocks = np.column_stack([pos[self.N + e], pos[self.Nb + self.N + e]])
        # eliminate the gauge multiplier, then one pressure unknown, last
        self._gauge_tail = pos[[nfull - 1, 2 * self.Nb + self.N // 2]]
        self._outer_order = None
        self._phase_order = None
        self._visc_const = None

    # -- fluid operators ------------------------------------------------------
    def _pressure_gradient(self) -> sp.csr_matrix:
        """(grad q_j, v_a) for P1 pressure q and velocity test v, shape (2Nb, N)."""
        sp_ = self.space
        blocks = []
        for c in range(2):
            local = np.einsum("ea,eb->eab", self.int_basis, sp_.dlam[:, :, c])
            blocks.append(assemble(local, sp_.vdofs, sp_.elements, (self.Nb, self.N)))
        return sp.vstack(blocks, format="csr")

    def _divergence(self) -> sp.csr_matrix:
        """(div v_b, q_i), shape (N, 2Nb)."""
        sp_ = self.space
        blocks = []
        for c in range(2):
            local = np.einsum("eq,qi,eqb->eib", sp_.wdet, sp_.qbary, sp_.grads[:, :, :, c])
            blocks.append(assemble(local, sp_.elements, sp_.vdofs, (self.N, self.Nb)))
        return sp.hstack(blocks, format="csr")

    def viscous_matrix(self, phi) -> sp.csr_matrix:
        """(nu(phi) D(u), D(v)) on the full velocity space."""
        phys = self.params.phys
        if phys.constant_viscosity and self._visc_const is not None:
            return self._visc_const
        sp_ = self.space
        nu_q = phys.viscosity(sp_.eval_p1(phi))  # (Ne, Q)
        w = sp_.wdet * nu_q
        g = sp_.grads
        gx, gy = g[..., 0], g[..., 1]
        lxx = np.einsum("eq,eqa,eqb->eab", w, gx, gx) + 0.5 * np.einsum("eq,eqa,eqb->eab", w, gy, gy)
        lyy = np.einsum("eq,eqa,eqb->eab", w, gy, gy) + 0.5 * np.einsum("eq,eqa,eqb->eab", w, gx, gx)
        # test v_x = phi_a (row), trial u_y = phi_b (col): 1/2 d_x phi_b d_y phi_a
        lxy = 0.5 * np.einsum("eq,eqa,eqb->eab", w, gy, gx)
        lyx = 0.5 * np.einsum("eq,eqa,eqb->eab", w, gx, gy)
        vd = sp_.vdofs
        shape = (self.Nb, self.Nb)
        A = sp.bmat(
            [
                [assemble(lxx, vd, vd, shape), assemble(lxy, vd, vd, shape)],
                [assemble(lyx, vd, vd, shape), assemble(lyy, vd, vd, shape)],
            ],
            format="csr",
        )
        if phys.constant_viscosity:
            self._visc_const = A
        return A

    def convection_matrix(self, w_field: np.ndarray) -> sp.csr_matrix:
        """((w.grad)u, v) + 1/2 ((div w) u, v), block diagonal over components."""
        sp_ = self.space
        wq = sp_.eval_velocity(w_field)  # (Ne, Q, 2)
        divw = sp_.div_velocity(w_field)  # (Ne, Q)
        adv = (sp_.grads @ wq[..., None])[..., 0]  # w . grad phi_b, (Ne, Q, 4)
        vt = sp_.vals.T  # (4, Q)
        local = vt @ (sp_.wdet[..., None] * adv)
        local += 0.5 * (vt * (sp_.wdet * divw)[:, None, :]) @ sp_.vals
        C = assemble(local, sp_.vdofs, sp_.vdofs, (self.Nb, self.Nb))
        return sp.block_diag([C, C], format="csr")

    def momentum_matrix(self, u_n: np.ndarray, phi) -> sp.csr_matrix:
        dt = self.params.dt
        return self.Mvel / dt + self.convection_matrix(u_n) + self.viscous_matrix(phi)

    def saddle_matrix(self, u_n, phi) -> sp.csr_matrix:
        A = sp.bmat([[self.momentum_matrix(u_n, phi), self.Gp], [self.D, None]], format="csr")
        pdofs = 2 * self.Nb + np.arange(self.N)
        A_aug, _ = augment_mean_zero(A, np.zeros(A.shape[0]), self.m, pdofs)
        return A_aug

    def capillary_force(self, phi_coef, mu) -> np.ndarray:
        """Load vector of (T_h(phi) grad mu, v) (or (phi grad mu, v) for CM), length 2Nb."""
        sp_ = self.space
        scheme = self.params.scheme
        gmu = sp_.dlam  # (Ne, 3, 2)
        grad_mu = np.einsum("ei,eid->ed", mu[sp_.elements], gmu)  # (Ne, 2)
        if scheme == "CM":
            phiq = sp_.eval_p1(phi_coef)  # (Ne, Q)
            local = np.einsum("eq,eq,qa->ea", sp_.wdet, phiq, sp_.vals)  # int phi v_a
            flux = local[:, None, :] * grad_mu[:, :, None]  # (Ne, 2, 4)
        else:
            T = transport_coeff(self.mesh, phi_coef, scheme, self.params.phys.eps)
            flux = (T * grad_mu)[:, :, None] * self.int_basis[:, None, :]
        out = np.zeros(2 * self.Nb)
        for c in range(2):
            np.add.at(out, self.vel_index[c].ravel(), flux[:, c, :].ravel())
        return out

    def boundary_values(self, t: float) -> np.ndarray:
        """Dirichlet values on boundary nodal dofs, ordered like ``self.dirichlet``."""
        if self.params.bc is None:
            return np.zeros(self.dirichlet.size)
        x, y = self.mesh.nodes[self.bnodes, 0], self.mesh.nodes[self.bnodes, 1]
        ux, uy = self.params.bc(x, y, t)
        return np.concatenate([np.broadcast_to(ux, x.shape), np.broadcast_to(uy, x.shape)]).astype(float)

    def fluid_substep(self, state_n: State, phi_new, mu_new, phi_coef, operator=None):
        """Solve the Stokes-like system for ``(u^{l+1}, p^{l+1})``.

        ``phi_coef`` is the iterate the transport coefficient is frozen at;
        viscosity is evaluated at ``phi_new``. ``operator`` may pass a
        prebuilt :class:`FluidOperator` when it does not depend on the
        iterate.
        """
        dt = self.params.dt
        if operator is None:
            operator = self.fluid_operator(state_n, phi_new)
        rhs_u = self.Mvel @ state_n.u.ravel() / dt - self.capillary_force(phi_coef, mu_new)
        rhs = np.concatenate([rhs_u, np.zeros(self.N + 1)])
        g = self.boundary_values(state_n.t + dt)
        x = np.zeros(rhs.size)
        x[self.dirichlet] = g
        rhs_free = rhs[self.free] - operator.lift @ g
        xf, report = operator.fac.solve(rhs_free, self.params.lin_tol)
        x[self.free] = xf
        u = x[: 2 * self.Nb].reshape(2, self.Nb)
        p = x[2 * self.Nb : 2 * self.Nb + self.N].copy()
        return u, p, report

    def fluid_operator(self, state_n: State, phi) -> "FluidOperator":
        """Saddle matrix at ``(u^n, phi)`` with bubbles condensed out and factorized."""
        A = self.saddle_matrix(state_n.u, phi)
        rows = A[self.free]
        fac = CondensedFactorization(
            rows[:, self.free], self._bubble_blocks, self._gauge_tail, self._outer_order
        )
        self._outer_order = fac.outer_order
        return FluidOperator(A, fac, rows[:, self.dirichlet])

    # -- phase-field substep ------------------------------------------------
    def mobility_stiffness(self, Mdiag) -> sp.csr_matrix:
        """(M grad mu, grad nu) for a P0 diagonal M of shape (Ne, 2); M=None gives the Laplacian."""
        if Mdiag is None:
            return self.K
        sp_ = self.space
        scaled = sp_.dlam * (self.mesh.areas[:, None] * Mdiag)[:, None, :]
        local = scaled @ sp_.dlam.transpose(0, 2, 1)
        return assemble(local, sp_.elements, sp_.elements, (self.N, self.N))

    def transport_load(self, phi_coef, u) -> np.ndarray:
        """(T_h(phi) u, grad psi_a) (or (phi u, grad psi_a) for CM)."""
        sp_ = self.space
        scheme = self.params.scheme
        if scheme == "CM":
            phiq = sp_.eval_p1(phi_coef)
            uq = sp_.eval_velocity(u)
            flux = np.einsum("eq,eq,eqd->ed", sp_.wdet, phiq, uq)
        else:
            T = transport_coeff(self.mesh, phi_coef, scheme, self.params.phys.eps)
            flux = T * sp_.element_integral_velocity(u)
        local = np.einsum("ed,ead->ea", flux, sp_.dlam)
        return assemble_vector(local, sp_.elements, self.N)

    def potential_terms(self, phi_it, phi_n):
        """Matrix of lam (Fc''(phi^l) phi, psi) and load of -lam (Fc'(phi^l) - Fc''(phi^l) phi^l + Fe'(phi^n), psi).

        Lumped (nodal) for G_eps, consistent quadrature otherwise.
        """
        phys = self.params.phys
        lam, eta = phys.lam, phys.eta
        if self.params.scheme == "Geps":
            d2 = pot.Fc_second(phi_it, eta)
            mat = sp.diags(lam * self.m * d2, format="csr")
            f = pot.Fc_prime(phi_it, eta) - d2 * phi_it + pot.Fe_prime(phi_n, eta)
            return mat, -lam * self.m * f
        sp_ = self.space
        pq = sp_.eval_p1(phi_it)
        pnq = sp_.eval_p1(phi_n)
        d2 = pot.Fc_second(pq, eta)
        local = lam * (sp_.qbary.T * (sp_.wdet * d2)[:, None, :]) @ sp_.qbary
        mat = assemble(local, sp_.elements, sp_.elements, (self.N, self.N))
        f = pot.Fc_prime(pq, eta) - d2 * pq + pot.Fe_prime(pnq, eta)
        load = (sp_.wdet * f) @ sp_.qbary
        return mat, -lam * assemble_vector(load, sp_.elements, self.N)

    def phase_matrix(self, phi_it, phi_n):
        phys = self.params.phys
        dt = self.params.dt
        Mdiag = mobility_coeff(self.mesh, phi_it, self.params.scheme, phys.eps)
        KM = self.mobility_stiffness(Mdiag)
        Fmat, Fload = self.potential_terms(phi_it, phi_n)
        Ml = sp.diags(self.m, format="csr")
        A = sp.bmat([[Ml / dt, phys.gamma * KM], [phys.lam * self.K + Fmat, -Ml]], format="csc")
        return A, Fload

    def phase_substep(self, state_n: State, it: State):
        """Solve the linear phase-field system for ``(phi^{l+1}, mu^{l+1})``."""
        dt = self.params.dt
        A, Fload = self.phase_matrix(it.phi, state_n.phi)
        rhs1 = self.m * state_n.phi / dt + self.transport_load(it.phi, it.u)
        rhs = np.concatenate([rhs1, Fload])
        fac = Factorized(A, self._phase_order)
        if self._phase_order is None and not fac.safe:
            self._phase_order = fill_reducing_order(A)
        x, report = fac.solve(rhs, self.params.lin_tol)
        return x[: self.N].copy(), x[self.N :].copy(), report

    # -- full step ---------------------------------------------------------
    def increment(self, new: State, old: State) -> float:
        sp_ = self.space
        num = (
            sp_.l2_velocity(new.u - old.u) ** 2
            + sp_.l2_p1(new.p - old.p) ** 2
            + sp_.l2_p1(new.phi - old.phi) ** 2
            + sp_.l2_p1(new.mu - old.mu) ** 2
        )
        den = (
            sp_.l2_velocity(new.u) ** 2
            + sp_.l2_p1(new.p) ** 2
            + sp_.l2_p1(new.phi) ** 2
            + sp_.l2_p1(new.mu) ** 2
        )
        if den == 0.0:
            return 0.0 if num == 0.0 else np.inf
        return float(np.sqrt(num / den))

    def step(self, state_n: State):
        """Advance one time step; returns ``(state^{n+1}, StepReport)``."""
        params = self.params
        it = state_n
        operator = None
        if params.phys.constant_viscosity:
            operator = self.fluid_operator(state_n, state_n.phi)
        report = StepReport(0, np.inf)
        for k in range(1, params.max_iters + 1):
            phi1, mu1, rep_phase = self.phase_substep(state_n, it)
            u1, p1, rep_fluid = self.fluid_substep(state_n, phi1, mu1, it.phi, operator)
            new = State(u1, p1, phi1, mu1, state_n.t + params.dt)
            inc = self.increment(new, it)
            report.solves.extend([rep_phase, rep_fluid])
            report.increments.append(inc)
            report.coefficient_phi = it.phi
            report.iterations, report.increment = k, inc
            it = new
            if inc <= params.tol:
                return it, report
        raise NonConvergenceError(
            f"fixed-point iteration did not reach tol={params.tol:g} in {params.max_iters} iterations",
            report.increment,
            it,
        )

    # -- initial data ------------------------------------------------------
    def initial_state(self, phi0, u0=None, t: float = 0.0) -> State:
        """Build a state from nodal phi0 and optional velocity.

        ``mu`` solves ``(mu, psi)_h = lam (grad phi, grad psi) + lam (F'(phi), psi)_h``
        and the pressure starts at zero. Boundary velocity dofs are
        overwritten with the Dirichlet data at ``t``.
        """
        phys = self.params.phys
        phi0 = np.asarray(phi0, dtype=float).copy()
        if phi0.shape != (self.N,):
            raise ValueError(f"phi0 must have {self.N} nodal values")
        u = np.zeros((2, self.Nb)) if u0 is None else np.array(u0, dtype=float).reshape(2, self.Nb)
        u.ravel()[self.dirichlet] = self.boundary_values(t)
        mu = phys.lam * ((self.K @ phi0) / self.m + pot.F_prime(phi0, phys.eta))
        return State(u, np.zeros(self.N), phi0, mu, t)


def phase_substep(scheme: str, state_n: State, it: State, mesh: Mesh, params: Params):
    return Stepper(mesh, replace(params, scheme=scheme)).phase_substep(state_n, it)


def fluid_substep(scheme: str, state_n: State, phi_new, mu_new, phi_coef, mesh: Mesh, params: Params):
    return Stepper(mesh, replace(params, scheme=scheme)).fluid_substep(state_n, phi_new, mu_new, phi_coef)


def step(scheme: str, state_n: State, mesh: Mesh, params: Params):
    return Stepper(mesh, replace(params, scheme=scheme)).step(state_n)
