"""Sparse solves with a residual contract, and pressure gauge fixing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


class SolverFailure(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class LinearSolveReport:
    residual: float
    size: int
    method: str = "splu"
    refinements: int = 0
    iterations: int = 0


def _relres(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / bnorm) if bnorm > 0 else float(r)


# symmetric minimum-degree ordering without pivoting is several times
# cheaper on the saddle-point systems; threshold pivoting is the fallback
FAST_LU = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
SAFE_LU = dict(permc_spec="COLAMD", diag_pivot_thresh=1.0)
ORDERED_LU = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))


def _factor(A, opts):
    try:
        return spla.splu(A, **opts)
    except RuntimeError as exc:  # exactly singular pivot
        log.debug("splu(%s) failed: %s", opts["permc_spec"], exc)
        return None


def fill_reducing_order(A, tail=()) -> np.ndarray:
    """Minimum-degree elimination order of ``A + A^T``, with ``tail`` eliminated last.

    Saddle-point systems with a gauge multiplier are factorized without
    pivoting; eliminating the multiplier and then one pressure unknown
    last keeps every pivot away from zero.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    tail = np.asarray(tail, dtype=np.int64)
    keep = np.setdiff1d(np.arange(n), tail)
    sub = A[keep][:, keep].tocsc()
    lu = _factor(sub, FAST_LU)
    if lu is None:
        # same symmetric pattern, but with a nonsingular diagonal
        pattern = (abs(sub) + abs(sub).T + sp.identity(keep.size)).tocsc()
        lu = spla.splu(pattern, **FAST_LU)
    return np.concatenate([keep[np.argsort(lu.perm_c)], tail])


class Factorized:
    """Direct factorization of a square sparse matrix, reusable across RHS.

    With ``order`` the matrix is symmetrically permuted and factorized in
    that order without pivoting; otherwise SuperLU chooses the ordering.
    Either way a failed residual check retries with threshold pivoting.
    """

    def __init__(self, A, order=None):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.safe = False
        self.order = None
        if order is not None:
            order = np.asarray(order)
            if order.shape != (A.shape[0],):
                raise ValueError("order must be a permutation of the unknowns")
            self.order = order
            self.lu = _factor(A[order][:, order].tocsc(), ORDERED_LU)
        else:
            self.lu = _factor(A, FAST_LU)
        if self.lu is None:
            self._go_safe()

    def _go_safe(self):
        self.safe = True
        self.order = None
        self.lu = _factor(self.A, SAFE_LU)

    def _apply(self, b):
        if self.order is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.order] = self.lu.solve(b[self.order])
        return x

    def solve(self, b, tol: float = DEFAULT_TOL):
        A = self.A
        b = np.asarray(b, dtype=float)
        if b.shape != (A.shape[0],):
            raise ValueError(f"rhs has shape {b.shape}, expected ({A.shape[0]},)")
        if not np.any(b):
            return np.zeros_like(b), LinearSolveReport(0.0, b.size)
        if self.lu is not None:
            x = self._apply(b)
            res = _relres(A, x, b)
            k = 0
            while res > tol and k < 3 and np.isfinite(res):
                x = x + self._apply(b - A @ x)
                res = _relres(A, x, b)
                k += 1
            if res <= tol:
                return x, LinearSolveReport(res, b.size, "splu", k)
            if not self.safe:
                self._go_safe()
                return self.solve(b, tol)
            log.warning("direct solve residual %.3e above %.1e, trying GMRES", res, tol)
            x0 = x if np.all(np.isfinite(x)) else None
        else:
            x0 = None
        x, info = spla.gmres(A, b, x0=x0, rtol=tol * 0.5, atol=0.0, restart=200, maxiter=50)
        res = _relres(A, x, b)
        if res > tol or not np.isfinite(res):
            raise SolverFailure("linear solve did not meet tolerance", res)
        return x, LinearSolveReport(res, b.size, "gmres", 0, int(info))


class CondensedFactorization:
    """Solve ``A x = b`` after eliminating small decoupled blocks of unknowns.

    ``blocks`` is a ``(k, m)`` index array; the unknowns of one block may
    couple with each other and with the rest, but not with other blocks
    (element bubbles are the use case). Their dense ``m x m`` blocks are
    inverted exactly and the Schur complement on the remaining unknowns
    is factorized. ``tail`` (indices into ``A``) is eliminated last in the
    Schur complement; the computed order is exposed as ``outer_order``
    so callers can reuse it for matrices with the same pattern.
    """

    def __init__(self, A, blocks, tail=(), outer_order=None):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        blocks = np.asarray(blocks, dtype=np.int64)
        if blocks.ndim != 2:
            raise ValueError("blocks must be a (k, m) index array")
        k, m = blocks.shape
        inner = blocks.ravel()
        is_inner = np.zeros(n, dtype=bool)
        is_inner[inner] = True
        if is_inner.sum() != inner.size:
            raise ValueError("blocks must not share unknowns")
        outer = np.flatnonzero(~is_inner)
        A_II = A[inner][:, inner]
        rows = np.repeat(blocks, m, axis=1).ravel()
        cols = np.tile(blocks, (1, m)).ravel()
        dense = np.asarray(A[rows, cols]).reshape(k, m, m)
        if not np.isclose(abs(A_II).sum(), np.abs(dense).sum(), rtol=1e-13, atol=0.0):
            raise ValueError("blocks couple with each other")
        inv = np.linalg.inv(dense)
        loc = np.arange(k * m).reshape(k, m)
        self.Binv = sp.csr_matrix(
            (inv.ravel(), (np.repeat(loc, m, axis=1).ravel(), np.tile(loc, (1, m)).ravel())),
            shape=(k * m, k * m),
        )
        self.A, self.inner, self.outer = A, inner, outer
        self.A_OI = A[outer][:, inner]
        self.A_IO = A[inner][:, outer]
        S = A[outer][:, outer] - self.A_OI @ (self.Binv @ self.A_IO)
        if outer_order is None:
            pos = -np.ones(n, dtype=np.int64)
            pos[outer] = np.arange(outer.size)
            tail_pos = pos[np.asarray(tail, dtype=np.int64)]
            if np.any(tail_pos < 0):
                raise ValueError("tail unknowns must not belong to a block")
            outer_order = fill_reducing_order(S, tail_pos)
        self.outer_order = outer_order
        self.schur = Factorized(S, outer_order)

    def _apply(self, b, tol):
        b_I, b_O = b[self.inner], b[self.outer]
        x_O, rep = self.schur.solve(b_O - self.A_OI @ (self.Binv @ b_I), tol)
        x = np.empty_like(b)
        x[self.outer] = x_O
        x[self.inner] = self.Binv @ (b_I - self.A_IO @ x_O)
        return x, rep

    def solve(self, b, tol: float = DEFAULT_TOL):
        A = self.A
        b = np.asarray(b, dtype=float)
        if b.shape != (A.shape[0],):
            raise ValueError(f"rhs has shape {b.shape}, expected ({A.shape[0]},)")
        if not np.any(b):
            return np.zeros_like(b), LinearSolveReport(0.0, b.size)
        x, _ = self._apply(b, tol)
        res = _relres(A, x, b)
        k = 0
        while res > tol and k < 3 and np.isfinite(res):
            dx, _ = self._apply(b - A @ x, tol)
            x = x + dx
            res = _relres(A, x, b)
            k += 1
        if res <= tol:
            return x, LinearSolveReport(res, b.size, "condensed", k)
        log.warning("condensed solve residual %.3e above %.1e, solving the full system", res, tol)
        return Factorized(A).solve(b, tol)


def solve(A, b, tol: float = DEFAULT_TOL):
    """Solve ``A x = b`` to relative residual ``tol``; returns ``(x, report)``."""
    return Factorized(A).solve(b, tol)


def augment_mean_zero(A, b, weights, pressure_dofs):
    """Append the constraint ``sum_i w_i p_i = 0`` with one Lagrange multiplier.

    The multiplier enters the rows of ``pressure_dofs`` with coefficient
    ``w_i``, keeping the saddle-point structure symmetric. Returns the
    augmented matrix and right-hand side; the multiplier is the last unknown.
    """
    weights = np.asarray(weights, dtype=float)
    pressure_dofs = np.asarray(pressure_dofs)
    if weights.shape != pressure_dofs.shape:
        raise ValueError("weights and pressure dofs must have the same length")
    if not np.any(weights):
        raise ValueError("gauge weights must not all vanish")
    n = A.shape[0]
    col = sp.csr_matrix((weights, (pressure_dofs, np.zeros_like(pressure_dofs))), shape=(n, 1))
    A_aug = sp.bmat([[A, col], [col.T, None]], format="csr")
    b_aug = np.concatenate([np.asarray(b, dtype=float), [0.0]])
    return A_aug, b_aug
