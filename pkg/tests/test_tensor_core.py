import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import circular_tproduct, direct_dft
from tsvdnet.errors import DimMismatch, ImaginaryResidueTooLarge, NonFiniteInput
from tsvdnet.tensor_core import (
    fft_mode3,
    frobenius_norm_sq,
    from_slice_major,
    identity_tensor,
    ifft_mode3,
    rotate,
    scale,
    sub,
    t_product,
    t_transpose,
    tensor3,
    to_slice_major,
    unrotate,
)

dims = st.integers(1, 5)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def tensors(n1=dims, n2=dims, n3=st.integers(1, 6)):
    return st.tuples(n1, n2, n3).flatmap(lambda s: arrays(np.float64, s, elements=finite))


class TestConstruction:
    def test_rejects_wrong_ndim(self):
        with pytest.raises(DimMismatch):
            tensor3(np.zeros((2, 2)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        a = np.zeros((2, 2, 2))
        a[1, 0, 1] = bad
        with pytest.raises(NonFiniteInput):
            tensor3(a)

    def test_slice_major_layout(self):
        a = np.arange(12.0).reshape(2, 3, 2)
        flat = to_slice_major(a)
        # first frontal slice, row-major, then the second
        np.testing.assert_array_equal(flat[:6], a[:, :, 0].ravel())
        np.testing.assert_array_equal(flat[6:], a[:, :, 1].ravel())
        np.testing.assert_array_equal(from_slice_major(flat, a.shape), a)

    def test_from_slice_major_length_checked(self):
        with pytest.raises(DimMismatch):
            from_slice_major(np.zeros(5), (2, 2, 2))


class TestFourier:
    def test_length_one_is_identity(self, rng):
        a = rng.standard_normal((3, 2, 1))
        f = fft_mode3(a)
        np.testing.assert_array_equal(f.real, a)
        np.testing.assert_array_equal(f.imag, 0.0)

    def test_unit_impulse(self):
        f = fft_mode3(np.array([1.0, 0.0]).reshape(1, 1, 2))
        np.testing.assert_array_equal(f.ravel(), [1.0, 1.0])

    def test_matches_direct_dft(self, rng):
        a = rng.standard_normal((3, 3, 4))
        assert np.max(np.abs(fft_mode3(a) - direct_dft(a))) < 1e-12

    def test_round_trip(self, rng):
        a = rng.standard_normal((4, 4, 3))
        assert np.max(np.abs(ifft_mode3(fft_mode3(a)) - a)) < 1e-12

    def test_zero_inverse(self):
        np.testing.assert_array_equal(ifft_mode3(np.zeros((2, 2, 3), complex)), 0.0)

    def test_single_slice_real_parts(self, rng):
        a = rng.standard_normal((2, 3, 1))
        np.testing.assert_array_equal(ifft_mode3(a.astype(complex)), a)

    def test_corrupted_spectrum_rejected(self, rng):
        f = fft_mode3(rng.standard_normal((2, 2, 4)))
        f[0, 0, 1] += 1.0  # breaks conjugate symmetry
        with pytest.raises(ImaginaryResidueTooLarge):
            ifft_mode3(f)

    def test_identity_spectrum(self):
        f = fft_mode3(identity_tensor(2, 3))
        for k in range(3):
            np.testing.assert_allclose(f[:, :, k], np.eye(2), atol=1e-15)

    @given(tensors())
    def test_conjugate_symmetry(self, a):
        f = fft_mode3(a)
        n3 = a.shape[2]
        for k in range(n3):
            np.testing.assert_allclose(f[:, :, k], np.conj(f[:, :, (n3 - k) % n3]), atol=1e-10)


class TestTProduct:
    def test_tube_case(self):
        a = np.array([1.0, 2.0]).reshape(1, 1, 2)
        b = np.array([3.0, 4.0]).reshape(1, 1, 2)
        np.testing.assert_array_equal(t_product(a, b).ravel(), [11.0, 10.0])

    def test_identity_law(self, rng):
        a = rng.standard_normal((3, 4, 2))
        np.testing.assert_allclose(t_product(a, identity_tensor(4, 2)), a, atol=1e-14)
        np.testing.assert_allclose(t_product(identity_tensor(3, 2), a), a, atol=1e-14)

    def test_single_slice_is_matmul(self, rng):
        a = rng.standard_normal((3, 4, 1))
        b = rng.standard_normal((4, 2, 1))
        np.testing.assert_allclose(t_product(a, b)[:, :, 0], a[:, :, 0] @ b[:, :, 0], atol=1e-13)

    @pytest.mark.parametrize("shape_b", [(3, 2, 2), (4, 2, 3)])
    def test_dim_mismatch(self, rng, shape_b):
        with pytest.raises(DimMismatch):
            t_product(rng.standard_normal((2, 4, 2)), rng.standard_normal(shape_b))

    @given(st.tuples(dims, dims, dims, st.integers(1, 6)), st.integers(0, 2**32 - 1))
    def test_matches_circular_convolution(self, shape, seed):
        n1, n2, n4, n3 = shape
        r = np.random.default_rng(seed)
        a, b = r.standard_normal((n1, n2, n3)), r.standard_normal((n2, n4, n3))
        assert np.max(np.abs(t_product(a, b) - circular_tproduct(a, b))) < 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_associative(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (r.standard_normal(s) for s in [(3, 4, 5), (4, 2, 5), (2, 3, 5)])
        lhs = t_product(t_product(a, b), c)
        rhs = t_product(a, t_product(b, c))
        assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestTranspose:
    def test_single_slice(self, rng):
        a = rng.standard_normal((2, 3, 1))
        np.testing.assert_array_equal(t_transpose(a)[:, :, 0], a[:, :, 0].T)

    def test_slice_order(self, rng):
        a = rng.standard_normal((2, 3, 4))
        t = t_transpose(a)
        assert t.shape == (3, 2, 4)
        np.testing.assert_array_equal(t[:, :, 0], a[:, :, 0].T)
        for k in range(1, 4):
            np.testing.assert_array_equal(t[:, :, k], a[:, :, 4 - k].T)

    @given(tensors())
    def test_involution(self, a):
        np.testing.assert_array_equal(t_transpose(t_transpose(a)), a)

    def test_gram_is_t_symmetric(self, rng):
        a = rng.standard_normal((2, 3, 4))
        gram = t_product(a, t_transpose(a))
        np.testing.assert_allclose(t_transpose(gram), gram, atol=1e-10)
        # in the Fourier domain every slice is Hermitian
        gf = direct_dft(gram)
        for k in range(4):
            np.testing.assert_allclose(gf[:, :, k], gf[:, :, k].conj().T, atol=1e-10)

    def test_matches_circular_definition(self, rng):
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4))
        np.testing.assert_allclose(
            t_product(t_transpose(a), b), circular_tproduct(t_transpose(a), b), atol=1e-12
        )


class TestIdentityAndRotation:
    def test_identity_single_slice(self):
        np.testing.assert_array_equal(identity_tensor(2, 1)[:, :, 0], np.eye(2))

    def test_identity_other_slices_zero(self):
        e = identity_tensor(3, 4)
        np.testing.assert_array_equal(e[:, :, 1:], 0.0)

    def test_rotate_shape(self):
        assert rotate(np.zeros((3, 3, 4))).shape == (3, 4, 3)

    def test_rotate_index_mapping(self, rng):
        a = rng.standard_normal((3, 4, 5))
        assert rotate(a)[1, 3, 2] == a[1, 2, 3]

    @given(tensors())
    def test_rotate_round_trip_exact(self, a):
        np.testing.assert_array_equal(unrotate(rotate(a)), a)


class TestNorms:
    def test_zero(self):
        assert frobenius_norm_sq(np.zeros((2, 3, 4))) == 0.0

    def test_identity(self):
        assert frobenius_norm_sq(identity_tensor(2, 3)) == 2.0

    def test_per_slice_sum(self, rng):
        a = rng.standard_normal((3, 4, 5))
        per_slice = sum(np.linalg.norm(a[:, :, k], "fro") ** 2 for k in range(5))
        assert abs(frobenius_norm_sq(a) - per_slice) < 1e-12

    def test_sub_and_scale(self, rng):
        a, b = rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 2))
        np.testing.assert_array_equal(sub(a, b), a - b)
        np.testing.assert_array_equal(scale(a, -2.5), -2.5 * a)

    def test_sub_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            sub(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
