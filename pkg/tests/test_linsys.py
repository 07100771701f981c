import numpy as np
import pytest
import scipy.sparse as sp

from nsch import linsys
from nsch.linsys import CondensedFactorization, Factorized, SolverFailure, augment_mean_zero


def test_identity():
    b = np.arange(1.0, 6.0)
    x, rep = linsys.solve(sp.identity(5, format="csr"), b)
    np.testing.assert_array_equal(x, b)
    assert rep.residual == 0.0


def test_small_diagonal_system():
    x, _ = linsys.solve(sp.diags([2.0, 4.0]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(x, [0.5, 0.25], rtol=1e-15)


def test_lumped_mass_recovers_ones(mesh8):
    M = sp.diags(mesh8.lumped_mass)
    x, rep = linsys.solve(M, M @ np.ones(mesh8.num_nodes))
    np.testing.assert_allclose(x, 1.0, rtol=1e-14)
    assert rep.residual <= 1e-10


def test_zero_rhs_short_circuit():
    x, rep = Factorized(sp.diags([3.0, 1.0])).solve(np.zeros(2))
    assert not np.any(x) and rep.residual == 0.0


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Factorized(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError):
        Factorized(sp.identity(3)).solve(np.ones(4))
    with pytest.raises(ValueError):
        Factorized(sp.identity(3), order=np.arange(2))


def test_singular_system_raises():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverFailure) as info:
        linsys.solve(A, np.array([1.0, 0.0]))
    assert info.value.residual > 1e-10


def _laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def _neumann_laplacian(n):
    A = _laplacian_1d(n).tolil()
    A[0, 0] = A[-1, -1] = 1.0
    return A.tocsr()


def test_mean_zero_gauge(rng):
    n = 30
    A = _neumann_laplacian(n)
    w = rng.uniform(0.5, 1.5, n)
    b = rng.normal(size=n)
    b -= b.mean()  # compatible right-hand side
    A_aug, b_aug = augment_mean_zero(A, b, w, np.arange(n))
    x, _ = linsys.solve(A_aug, b_aug)
    p, mult = x[:n], x[n]
    assert abs(w @ p) <= 1e-12 * np.abs(p).max()
    assert abs(mult) <= 1e-10
    np.testing.assert_allclose(A @ p, b, atol=1e-10)

    # pinning one node instead gives the same solution up to a constant
    pinned = A.tolil()
    pinned[0, :] = 0.0
    pinned[0, 0] = 1.0
    rhs = b.copy()
    rhs[0] = 0.0
    q, _ = linsys.solve(pinned.tocsr(), rhs)
    q -= (w @ q) / w.sum()
    np.testing.assert_allclose(p, q, atol=1e-10)


def test_gauge_solution_is_shift_invariant(rng):
    n = 20
    A = _neumann_laplacian(n)
    w = np.ones(n)
    b = rng.normal(size=n)
    b -= b.mean()
    x1, _ = linsys.solve(*augment_mean_zero(A, b, w, np.arange(n)))
    # the operator annihilates constants, so a shifted guess problem is the same
    x2, _ = linsys.solve(*augment_mean_zero(A, b + A @ np.full(n, 3.0), w, np.arange(n)))
    np.testing.assert_allclose(x1, x2, atol=1e-12)


def test_gauge_rejects_bad_weights():
    A = _neumann_laplacian(4)
    with pytest.raises(ValueError):
        augment_mean_zero(A, np.zeros(4), np.zeros(4), np.arange(4))
    with pytest.raises(ValueError):
        augment_mean_zero(A, np.zeros(4), np.ones(3), np.arange(4))


def _block_system(rng, nb=12, no=20, m=2):
    """Random nonsymmetric system whose first ``nb * m`` unknowns form decoupled blocks."""
    n = nb * m + no
    A = np.zeros((n, n))
    for k in range(nb):
        idx = slice(k * m, (k + 1) * m)
        A[idx, idx] = rng.normal(size=(m, m)) + 4 * np.eye(m)
    coupling = rng.normal(size=(nb * m, no)) * (rng.random((nb * m, no)) < 0.2)
    A[: nb * m, nb * m:] = coupling
    A[nb * m:, : nb * m] = coupling.T
    oo = rng.normal(size=(no, no)) * (rng.random((no, no)) < 0.3)
    A[nb * m:, nb * m:] = oo + oo.T + 10 * np.eye(no)
    blocks = np.arange(nb * m).reshape(nb, m)
    return sp.csr_matrix(A), blocks


def test_condensed_matches_full_solve(rng):
    A, blocks = _block_system(rng)
    b = rng.normal(size=A.shape[0])
    x_ref = np.linalg.solve(A.toarray(), b)
    fac = CondensedFactorization(A, blocks)
    x, rep = fac.solve(b)
    np.testing.assert_allclose(x, x_ref, rtol=1e-10, atol=1e-12)
    assert rep.method == "condensed" and rep.residual <= 1e-10
    # a second factorization reusing the order gives the same answer
    again = CondensedFactorization(A, blocks, outer_order=fac.outer_order)
    np.testing.assert_allclose(again.solve(b)[0], x_ref, rtol=1e-10, atol=1e-12)


def test_condensed_tail_is_eliminated_last(rng):
    A, blocks = _block_system(rng)
    n = A.shape[0]
    fac = CondensedFactorization(A, blocks, tail=[n - 1, n - 3])
    # outer positions of the tail unknowns, in order
    np.testing.assert_array_equal(fac.outer_order[-2:], [fac.outer.size - 1, fac.outer.size - 3])
    with pytest.raises(ValueError):
        CondensedFactorization(A, blocks, tail=[0])


def test_condensed_rejects_coupled_blocks(rng):
    A, blocks = _block_system(rng)
    A = A.tolil()
    A[0, 2] = 1.0  # first unknown of block 0 touches block 1
    with pytest.raises(ValueError, match="couple"):
        CondensedFactorization(A.tocsr(), blocks)
    with pytest.raises(ValueError):
        CondensedFactorization(A.tocsr(), np.array([[0, 1], [1, 2]]))


def test_fill_reducing_order_is_permutation(rng):
    A = _laplacian_1d(50) + sp.random(50, 50, density=0.05, random_state=1)
    order = linsys.fill_reducing_order(A, tail=[7, 3])
    assert sorted(order) == list(range(50))
    assert list(order[-2:]) == [7, 3]
    b = rng.normal(size=50)
    x, _ = Factorized(A, order).solve(b)
    np.testing.assert_allclose(A @ x, b, atol=1e-9)
