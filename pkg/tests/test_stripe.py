import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pd_stripe, random_stripe
from wbdoa.stripe import (
    DecompositionFailure,
    StripeMatrix,
    backward_substitute_adjoint,
    block_ldl,
    densify,
    dump_dense,
    forward_substitute,
    gram,
    ldl_solve,
    quadratic_form,
    stripe_add,
    stripe_adjoint,
    stripe_logdet,
    stripe_matvec,
    stripe_mul,
)


def dense_ldl(a):
    """Unpivoted scalar LDL^H of a Hermitian PD matrix (independent oracle)."""
    n = a.shape[0]
    lower = np.eye(n, dtype=complex)
    diag = np.zeros(n)
    for j in range(n):
        diag[j] = (a[j, j] - (np.abs(lower[j, :j]) ** 2 * diag[:j]).sum()).real
        for i in range(j + 1, n):
            lower[i, j] = (a[i, j] - (lower[i, :j] * diag[:j] * lower[j, :j].conj()).sum()) / diag[j]
    return lower, diag


class TestAdjoint:
    def test_hermitian_fixed_point(self):
        t = StripeMatrix.block_diagonal(np.array([[2.0] * 4, [0.5] * 4]))
        assert np.array_equal(stripe_adjoint(t).data, t.data)

    def test_matches_dense(self):
        a = random_stripe(np.random.default_rng(0), 2, 3, 4)
        assert np.array_equal(densify(stripe_adjoint(a)), densify(a).conj().T)

    def test_involution_bitwise(self):
        a = random_stripe(np.random.default_rng(1), 3, 2, 5)
        assert np.array_equal(stripe_adjoint(stripe_adjoint(a)).data, a.data)


class TestAddMul:
    def test_add_zero(self):
        a = random_stripe(np.random.default_rng(2), 2, 2, 4)
        z = StripeMatrix.zeros(2, 2, 4)
        assert np.array_equal(stripe_add(a, z).data, a.data)

    def test_add_matches_dense(self):
        rng = np.random.default_rng(3)
        a, b = random_stripe(rng, 3, 2, 4), random_stripe(rng, 3, 2, 4)
        assert np.allclose(densify(stripe_add(a, b)), densify(a) + densify(b))

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError):
            stripe_add(StripeMatrix.zeros(2, 2, 4), StripeMatrix.zeros(2, 3, 4))

    def test_scalar_regularized_gram(self):
        # single-sensor, single-source: 1/gamma + |s|^2 per bin
        s = random_stripe(np.random.default_rng(4), 1, 1, 6)
        inv_gamma = StripeMatrix.block_diagonal(np.full((1, 6), 1 / 0.7))
        total = stripe_add(inv_gamma, stripe_mul(stripe_adjoint(s), s))
        assert np.allclose(total.data[0, 0], 1 / 0.7 + np.abs(s.data[0, 0]) ** 2)

    def test_mul_identity(self):
        a = random_stripe(np.random.default_rng(5), 3, 2, 4)
        assert np.allclose(stripe_mul(a, StripeMatrix.identity(2, 4)).data, a.data)

    def test_mul_matches_dense(self):
        rng = np.random.default_rng(6)
        a, b = random_stripe(rng, 3, 2, 4), random_stripe(rng, 2, 2, 4)
        err = np.abs(densify(stripe_mul(a, b)) - densify(a) @ densify(b)).max()
        assert err < 1e-12

    def test_mul_shape_mismatch(self):
        with pytest.raises(ValueError):
            stripe_mul(StripeMatrix.zeros(2, 3, 4), StripeMatrix.zeros(2, 3, 4))

    def test_gram_is_psd(self):
        s = random_stripe(np.random.default_rng(7), 3, 2, 4)
        g = gram(s)
        assert np.allclose(densify(g), densify(s).conj().T @ densify(s))
        eigs = np.linalg.eigvalsh(densify(g))
        assert eigs.min() >= -1e-10

    def test_matvec(self):
        rng = np.random.default_rng(8)
        a = random_stripe(rng, 3, 2, 4)
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert np.allclose(stripe_matvec(a, v), densify(a) @ v)


class TestBlockLdl:
    def test_identity(self):
        f = block_ldl(StripeMatrix.identity(3, 4))
        assert np.array_equal(densify(f.unit_lower), np.eye(12))
        assert np.array_equal(f.diag, np.ones((3, 4)))

    def test_reconstruction_and_dense_oracle(self):
        r = random_pd_stripe(np.random.default_rng(9), k=2, length=8, sensors=3)
        f = block_ldl(r)
        lo = densify(f.unit_lower)
        rebuilt = lo @ np.diag(f.diag.reshape(-1)) @ lo.conj().T
        dense = densify(r)
        assert np.abs(rebuilt - dense).max() / np.abs(dense).max() < 1e-10
        # the stripe factorization is the unique scalar LDL^H of the dense matrix
        lo_ref, d_ref = dense_ldl(dense)
        assert np.abs(lo - lo_ref).max() < 1e-10
        assert np.abs(f.diag.reshape(-1) - d_ref).max() < 1e-10

    def test_unit_lower_structure(self):
        r = random_pd_stripe(np.random.default_rng(10), k=3, length=4)
        lo = densify(block_ldl(r).unit_lower)
        assert np.allclose(np.diag(lo), 1.0)
        assert np.abs(np.triu(lo, 1)).max() == 0.0

    def test_zeroed_diagonal_fails(self):
        r = random_pd_stripe(np.random.default_rng(11), k=2, length=4)
        data = r.data.copy()
        data[0, 0, 2] = 0.0
        with pytest.raises(DecompositionFailure):
            block_ldl(StripeMatrix(data))

    def test_indefinite_fails(self):
        data = StripeMatrix.identity(2, 3).data.copy()
        data[1, 1, :] = -1.0
        with pytest.raises(DecompositionFailure):
            block_ldl(StripeMatrix(data))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            block_ldl(StripeMatrix.zeros(2, 3, 4))


class TestSolves:
    def test_forward_identity(self):
        z = np.arange(8, dtype=complex)
        assert np.array_equal(forward_substitute(StripeMatrix.identity(2, 4), z), z)

    def test_forward_residual(self):
        rng = np.random.default_rng(12)
        f = block_ldl(random_pd_stripe(rng, k=3, length=4))
        z = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        x = forward_substitute(f.unit_lower, z)
        assert np.abs(densify(f.unit_lower) @ x - z).max() < 1e-10

    def test_forward_scalar_blocks(self):
        # block_len 1 reduces to ordinary scalar forward substitution
        rng = np.random.default_rng(13)
        f = block_ldl(random_pd_stripe(rng, k=4, length=1))
        z = rng.standard_normal(4) + 0j
        x = forward_substitute(f.unit_lower, z)
        assert np.allclose(np.linalg.solve(densify(f.unit_lower), z), x)

    def test_backward_adjoint(self):
        rng = np.random.default_rng(14)
        f = block_ldl(random_pd_stripe(rng, k=3, length=4))
        u = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        x = backward_substitute_adjoint(f.unit_lower, u)
        assert np.abs(densify(f.unit_lower).conj().T @ x - u).max() < 1e-10

    def test_ldl_solve(self):
        rng = np.random.default_rng(15)
        r = random_pd_stripe(rng, k=3, length=4)
        f = block_ldl(r)
        z = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        assert np.abs(densify(r) @ ldl_solve(f, z) - z).max() < 1e-8

    def test_block_shape_round_trip(self):
        rng = np.random.default_rng(16)
        f = block_ldl(random_pd_stripe(rng, k=2, length=4))
        z = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        assert forward_substitute(f.unit_lower, z).shape == (2, 4)


class TestLogdetQuadratic:
    def test_logdet_identity(self):
        assert stripe_logdet(block_ldl(StripeMatrix.identity(2, 4))) == 0.0

    def test_logdet_scaled_identity(self):
        data = StripeMatrix.identity(2, 4).data * 2.0
        assert np.isclose(stripe_logdet(block_ldl(StripeMatrix(data))), 8 * np.log(2))

    def test_logdet_matches_dense(self):
        r = random_pd_stripe(np.random.default_rng(17), k=3, length=6)
        ref = np.linalg.slogdet(densify(r))[1]
        assert abs(stripe_logdet(block_ldl(r)) - ref) < 1e-8

    def test_quadratic_identity(self):
        z = np.arange(1, 9, dtype=complex)
        f = block_ldl(StripeMatrix.identity(2, 4))
        assert np.isclose(quadratic_form(f, z), (np.abs(z) ** 2).sum())

    def test_quadratic_matches_dense(self):
        rng = np.random.default_rng(18)
        r = random_pd_stripe(rng, k=3, length=4)
        z = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        ref = (z.conj() @ np.linalg.solve(densify(r), z)).real
        assert abs(quadratic_form(block_ldl(r), z) - ref) < 1e-8

    def test_quadratic_zero(self):
        f = block_ldl(random_pd_stripe(np.random.default_rng(19), k=2, length=4))
        assert quadratic_form(f, np.zeros(8, dtype=complex)) == 0.0


class TestDensify:
    def test_identity(self):
        assert np.array_equal(densify(StripeMatrix.identity(3, 2)), np.eye(6))

    def test_shape(self):
        assert densify(StripeMatrix.zeros(2, 3, 4)).shape == (8, 12)

    def test_sparsity_pattern(self):
        a = random_stripe(np.random.default_rng(20), 2, 2, 3)
        dense = densify(a)
        for i in range(2):
            for j in range(2):
                block = dense[i * 3 : (i + 1) * 3, j * 3 : (j + 1) * 3]
                assert np.array_equal(np.diag(np.diag(block)), block)

    def test_dump_dense(self, tmp_path):
        dump_dense(StripeMatrix.identity(2, 2), tmp_path / "m.txt")
        assert (tmp_path / "m.txt").read_text().count("\n") == 4


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    inner=st.integers(1, 4),
    length=st.integers(1, 8),
    seed=st.integers(0, 2**31),
)
def test_ops_match_dense_property(rows, cols, inner, length, seed):
    rng = np.random.default_rng(seed)
    a = random_stripe(rng, rows, inner, length)
    b = random_stripe(rng, inner, cols, length)
    c = random_stripe(rng, rows, inner, length)
    da, db, dc = densify(a), densify(b), densify(c)
    scale = max(np.abs(da).max(), np.abs(db).max(), 1.0)
    assert np.abs(densify(stripe_mul(a, b)) - da @ db).max() / scale**2 < 1e-10
    assert np.abs(densify(stripe_add(a, c)) - (da + dc)).max() / scale < 1e-10
    assert np.abs(densify(stripe_adjoint(a)) - da.conj().T).max() == 0.0


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 4), length=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_ldl_quadratic_logdet_property(k, length, seed):
    rng = np.random.default_rng(seed)
    r = random_pd_stripe(rng, k=k, length=length)
    f = block_ldl(r)
    dense = densify(r)
    z = rng.standard_normal(k * length) + 1j * rng.standard_normal(k * length)
    assert abs(stripe_logdet(f) - np.linalg.slogdet(dense)[1]) < 1e-8
    ref = (z.conj() @ np.linalg.solve(dense, z)).real
    assert abs(quadratic_form(f, z) - ref) < 1e-8 * max(1.0, abs(ref))


def test_ldl_cost_scales_linearly_in_block_len():
    # fixed block count, growing diagonal length: expect linear growth
    rng = np.random.default_rng(21)
    k = 4

    def ldl_time(length, repeats=5):
        r = random_pd_stripe(rng, k=k, length=length)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            block_ldl(r)
            best = min(best, time.perf_counter() - t0)
        return best

    ldl_time(1024)  # warm up
    t_small, t_big = ldl_time(2048), ldl_time(16384)
    assert t_big / t_small < 2.0 * (16384 / 2048)
