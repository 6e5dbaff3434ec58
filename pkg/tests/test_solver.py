import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cutdarcy.errors import Singular
from cutdarcy.forms import Discretization, assemble_system
from cutdarcy.solver import condest_1norm, dense_cond_1norm, factor, onenorm_inverse, solve, solve_transpose
from cutdarcy.verify import RunParams, build_geometry, get_case, problem_config


def small_system(method="BGP", bc="pressure", n=8, ratio=0.5, element="RT0xQ0"):
    p = RunParams(method=method, bc=bc, n=n, hcut_ratio=ratio, element=element)
    mesh, dom = build_geometry(p)
    disc = Discretization(mesh, dom, element)
    return assemble_system(disc, problem_config(p, get_case(p.case)))


class TestFactorSolve:
    def test_identity(self):
        x = solve(factor(sp.identity(5, format="csr")), np.arange(5.0))
        assert np.array_equal(x, np.arange(5.0))

    def test_permutation(self):
        A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(solve(factor(A), np.array([3.0, 7.0])), [7.0, 3.0])

    def test_spd_residual(self, rng):
        n = 60
        R = rng.standard_normal((n, n))
        A = sp.csr_matrix(R @ R.T + n * np.eye(n))
        b = rng.standard_normal(n)
        x = solve(factor(A), b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * (np.linalg.norm(A.toarray(), 2) * np.linalg.norm(x) + np.linalg.norm(b))

    def test_zero_rhs(self):
        A = small_system().A
        assert np.all(solve(factor(A), np.zeros(A.shape[0])) == 0.0)

    def test_transpose_solve_symmetric(self, rng):
        A = small_system().A
        F = factor(A)
        b = rng.standard_normal(A.shape[0])
        assert np.allclose(solve(F, b, refine=0), solve_transpose(F, b), rtol=1e-9, atol=1e-12)

    def test_transpose_solve_nonsymmetric(self, rng):
        A = small_system(bc="mixed").A
        F = factor(A)
        b = rng.standard_normal(A.shape[0])
        y = solve_transpose(F, b)
        assert np.linalg.norm(A.T @ y - b) <= 1e-9 * np.linalg.norm(b) * max(1.0, np.abs(y).max())

    def test_random_100(self, rng):
        A = rng.standard_normal((100, 100)) + 10 * np.eye(100)
        b = rng.standard_normal(100)
        x = solve(factor(sp.csr_matrix(A)), b)
        assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-12, atol=1e-13)

    def test_darcy_residual(self):
        s = small_system(bc="mixed", ratio=1e-3)
        x = solve(factor(s.A), s.b)
        An = abs(s.A).sum(axis=0).max()
        assert np.abs(s.A @ x - s.b).max() <= 1e-10 * (An * np.abs(x).max() + np.abs(s.b).max())

    def test_singular_zero_matrix(self):
        with pytest.raises(Singular):
            factor(sp.csr_matrix((3, 3)))

    def test_singular_rank_deficient(self):
        A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
        with pytest.raises(Singular):
            factor(A)

    def test_unstabilised_extreme_cut_singular_or_huge(self):
        s = small_system(method="std", ratio=5e-7, bc="mixed")
        try:
            F = factor(s.A)
        except Singular:
            return
        assert condest_1norm(s.A, F) > 1e12

    def test_non_square(self):
        with pytest.raises(ValueError):
            factor(sp.csr_matrix(np.ones((2, 3))))


class TestCondest:
    def test_diag(self):
        A = sp.diags([1.0, 1e6]).tocsr()
        assert condest_1norm(A) == pytest.approx(1e6, rel=1e-12)

    def test_identity(self):
        assert condest_1norm(sp.identity(7, format="csr")) == pytest.approx(1.0)

    def test_lower_bound_and_deterministic(self, rng):
        A = sp.csr_matrix(rng.standard_normal((40, 40)) + 3 * np.eye(40))
        F = factor(A)
        est = onenorm_inverse(F)
        exact = np.linalg.norm(np.linalg.inv(A.toarray()), 1)
        assert est <= exact * (1 + 1e-10)
        assert est == onenorm_inverse(factor(A))

    @pytest.mark.parametrize("method,bc,ratio", [("BGP", "pressure", 0.5), ("BGP", "mixed", 5e-7),
                                                 ("AL-BGP", "mixed", 1e-3), ("std", "mixed", 1e-2),
                                                 ("BGP", "flux", 0.5)])
    def test_within_factor_five_of_dense_oracle(self, method, bc, ratio):
        A = small_system(method=method, bc=bc, ratio=ratio).A
        est = condest_1norm(A)
        exact = dense_cond_1norm(A)
        assert exact / 5 <= est <= exact * (1 + 1e-8)

    @given(st.integers(0, 2**32 - 1), st.integers(5, 30))
    @settings(max_examples=30)
    def test_random_within_factor_five(self, seed, n):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((n, n)) + np.diag(rng.uniform(1, 10, n)) * rng.choice([-1, 1], n)
        A = sp.csr_matrix(M)
        try:
            est = condest_1norm(A)
        except Singular:
            return
        exact = dense_cond_1norm(A)
        assert exact / 5 <= est <= exact * (1 + 1e-8)
