"""P1 and P1-bubble spaces on a structured mesh.

Scalar P1 fields are plain arrays of nodal values. Velocity fields are
arrays of shape ``(2, N + Ne)``: for each component the first ``N``
entries are nodal P1 values and the last ``Ne`` are coefficients of the
cubic bubble ``27 * l1 * l2 * l3`` of each element.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from nsch.mesh import Mesh


def triangle_quadrature(npts: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle.

    Returns barycentric coordinates ``(Q, 3)`` and weights summing to 1
    (so that ``area * sum(w * f)`` integrates ``f`` over an element). With
    ``npts`` Gauss points per direction the rule is exact for polynomials
    of total degree ``2 * npts - 2``.
    """
    x, w = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    su, sv = np.meshgrid(s, s, indexing="ij")
    wu, wv = np.meshgrid(ws, ws, indexing="ij")
    xi = su.ravel()
    eta = (sv * (1.0 - su)).ravel()
    weights = (wu * wv * (1.0 - su)).ravel() * 2.0
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return bary, weights


def bubble(bary: np.ndarray) -> np.ndarray:
    """Cubic bubble ``27 l1 l2 l3``; equals 1 at the barycenter."""
    bary = np.asarray(bary)
    return 27.0 * bary[..., 0] * bary[..., 1] * bary[..., 2]


def interp_nodal(f, mesh: Mesh) -> np.ndarray:
    """Nodal P1 interpolant of ``f(x, y)`` (vectorized over node arrays)."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    vals = np.asarray(f(x, y), dtype=float)
    return np.broadcast_to(vals, x.shape).copy()


def lumped_inner(mesh: Mesh, f: np.ndarray, g: np.ndarray) -> float:
    """Mass-lumped product ``sum_i f_i g_i m_i`` = integral of I_h(f g)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (mesh.num_nodes,) or g.shape != (mesh.num_nodes,):
        raise ValueError(
            f"expected nodal fields of length {mesh.num_nodes}, got {f.shape} and {g.shape}"
        )
    return float(np.sum(f * g * mesh.lumped_mass))


def p0_project(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    """Element averages of a P1 field (mean of the three vertex values)."""
    phi = np.asarray(phi, dtype=float)
    return phi[mesh.elements].mean(axis=1)


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the three barycentric functions, shape ``(Ne, 3, 2)``."""
    cached = mesh._cache.get("dlam")
    if cached is not None:
        return cached
    p = mesh.nodes[mesh.elements]  # (Ne, 3, 2)
    V = np.concatenate([np.ones(p.shape[:2] + (1,)), p], axis=2)
    coef = np.linalg.inv(V)  # column i holds (a_i, b_i, c_i)
    dlam = np.transpose(coef[:, 1:, :], (0, 2, 1)).copy()
    dlam.setflags(write=False)
    mesh._cache["dlam"] = dlam
    return dlam


def p1_gradients(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    """Elementwise constant gradients of a P1 field, shape ``(Ne, 2)``."""
    dlam = barycentric_gradients(mesh)
    return np.einsum("ei,eid->ed", np.asarray(phi, dtype=float)[mesh.elements], dlam)


def p1_gradient(mesh: Mesh, phi: np.ndarray, elem: int) -> np.ndarray:
    if not 0 <= elem < mesh.num_elements:
        raise ValueError(f"element index {elem} out of range")
    dlam = barycentric_gradients(mesh)[elem]
    return np.asarray(phi, dtype=float)[mesh.elements[elem]] @ dlam


def assemble(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices ``local[e, a, b]`` into a CSR matrix."""
    ne, na, nb = local.shape
    r = np.broadcast_to(rows[:, :, None], (ne, na, nb)).ravel()
    c = np.broadcast_to(cols[:, None, :], (ne, na, nb)).ravel()
    A = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def assemble_vector(local: np.ndarray, rows: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.add.at(out, rows.ravel(), local.ravel())
    return out


class FESpace:
    """Precomputed element data for P1 and P1-bubble fields on ``mesh``.

    All elements are affine images of the reference triangle, so basis
    values at quadrature points are shared; only gradients vary.
    """

    def __init__(self, mesh: Mesh, quad_points: int = 5):
        self.mesh = mesh
        self.N = mesh.num_nodes
        self.Ne = mesh.num_elements
        self.Nb = self.N + self.Ne
        self.qbary, self.qw = triangle_quadrature(quad_points)
        self.Q = self.qw.size
        # basis values at quadrature points: l1, l2, l3, bubble
        self.vals = np.column_stack([self.qbary, bubble(self.qbary)])
        self.dlam = barycentric_gradients(mesh)
        L = self.qbary
        # grad b = 27 (dl1 l2 l3 + l1 dl2 l3 + l1 l2 dl3)
        coef = 27.0 * np.column_stack(
            [L[:, 1] * L[:, 2], L[:, 0] * L[:, 2], L[:, 0] * L[:, 1]]
        )  # (Q, 3)
        dbub = np.einsum("qi,eid->eqd", coef, self.dlam)
        self.grads = np.empty((self.Ne, self.Q, 4, 2))
        self.grads[:, :, :3, :] = self.dlam[:, None, :, :]
        self.grads[:, :, 3, :] = dbub
        self.wdet = mesh.areas[:, None] * self.qw[None, :]  # (Ne, Q)
        self.elements = mesh.elements
        self.vdofs = np.column_stack([mesh.elements, self.N + np.arange(self.Ne)])

    # -- evaluation at quadrature points ---------------------------------
    def eval_p1(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi)[self.elements] @ self.qbary.T  # (Ne, Q)

    def eval_velocity(self, u: np.ndarray) -> np.ndarray:
        """Values ``(Ne, Q, 2)`` of a velocity field."""
        loc = u[:, self.vdofs]  # (2, Ne, 4)
        return np.stack([loc[0] @ self.vals.T, loc[1] @ self.vals.T], axis=-1)

    def grad_velocity(self, u: np.ndarray) -> np.ndarray:
        """Gradients ``(Ne, Q, c, d)`` = d u_c / d x_d."""
        loc = u[:, self.vdofs]
        return np.einsum("cea,eqad->eqcd", loc, self.grads)

    def div_velocity(self, u: np.ndarray) -> np.ndarray:
        """Divergence ``(Ne, Q)`` of a velocity field."""
        loc = u[:, self.vdofs]  # (2, Ne, 4)
        return np.einsum("ea,eqa->eq", loc[0], self.grads[..., 0]) + np.einsum(
            "ea,eqa->eq", loc[1], self.grads[..., 1]
        )

    def element_integral_velocity(self, u: np.ndarray) -> np.ndarray:
        """Integral of each velocity component over each element, ``(Ne, 2)``."""
        loc = u[:, self.vdofs]  # (2, Ne, 4)
        mean_basis = self.qw @ self.vals  # (4,) = (1/3, 1/3, 1/3, 9/20)
        return (loc @ mean_basis).T * self.mesh.areas[:, None]

    # -- standard matrices --------------------------------------------------
    @cached_property
    def mass_p1(self) -> sp.csr_matrix:
        v = self.qbary
        local = np.einsum("eq,qa,qb->eab", self.wdet, v, v)
        return assemble(local, self.elements, self.elements, (self.N, self.N))

    @cached_property
    def stiff_p1(self) -> sp.csr_matrix:
        local = np.einsum("e,ead,ebd->eab", self.mesh.areas, self.dlam, self.dlam)
        return assemble(local, self.elements, self.elements, (self.N, self.N))

    @cached_property
    def mass_b(self) -> sp.csr_matrix:
        local = np.einsum("eq,qa,qb->eab", self.wdet, self.vals, self.vals)
        return assemble(local, self.vdofs, self.vdofs, (self.Nb, self.Nb))

    @cached_property
    def stiff_b(self) -> sp.csr_matrix:
        local = np.einsum("eq,eqad,eqbd->eab", self.wdet, self.grads, self.grads)
        return assemble(local, self.vdofs, self.vdofs, (self.Nb, self.Nb))

    @cached_property
    def mass_velocity(self) -> sp.csr_matrix:
        return sp.block_diag([self.mass_b, self.mass_b], format="csr")

    @cached_property
    def stiff_velocity(self) -> sp.csr_matrix:
        return sp.block_diag([self.stiff_b, self.stiff_b], format="csr")

    # -- norms ----------------------------------------------------------------
    def l2_p1(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(f @ (self.mass_p1 @ f), 0.0)))

    def h1_p1(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(f @ (self.mass_p1 @ f) + f @ (self.stiff_p1 @ f), 0.0)))

    def l2_velocity(self, u: np.ndarray) -> float:
        v = u.ravel()
        return float(np.sqrt(max(v @ (self.mass_velocity @ v), 0.0)))

    def h1_velocity(self, u: np.ndarray) -> float:
        v = u.ravel()
        return float(
            np.sqrt(max(v @ (self.mass_velocity @ v) + v @ (self.stiff_velocity @ v), 0.0))
        )


def fe_space(mesh: Mesh) -> FESpace:
    """Shared :class:`FESpace` for ``mesh`` (built once, then cached on the mesh)."""
    space = mesh._cache.get("space")
    if space is None:
        space = FESpace(mesh)
        mesh._cache["space"] = space
    return space
