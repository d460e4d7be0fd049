"""Dense 3-order tensors and the t-product algebra.

Tensors are plain ``float64`` numpy arrays of shape ``(n1, n2, n3)``; the
third axis indexes frontal slices and each ``a[i, j, :]`` is a tube.
Fourier-domain tensors are ``complex128`` arrays of the same shape.

The DFT along mode 3 is unnormalized in the forward direction and carries
the ``1/n3`` factor on the way back, so that

    t_product(a, b) == ifft_mode3(fft_mode3(a) @ fft_mode3(b))   (slice-wise)
"""

import numpy as np

from .errors import DimMismatch, ImaginaryResidueTooLarge, NonFiniteInput

# Residue above this after an inverse transform means the Fourier tensor was
# not the transform of a real tensor.
IMAG_RESIDUE_LIMIT = 1e-6


def tensor3(data, dtype=np.float64):
    """Validate and copy ``data`` into a 3-order tensor.

    Raises
    ------
    DimMismatch
        If ``data`` is not 3-dimensional or has an empty mode.
    NonFiniteInput
        If any entry is NaN or infinite.
    """
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim != 3:
        raise DimMismatch(f"expected a 3-order tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise DimMismatch(f"all dims must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("tensor contains NaN or Inf")
    return arr


def from_slice_major(values, dims):
    """Build a tensor from a flat slice-major, row-major buffer."""
    n1, n2, n3 = (int(d) for d in dims)
    flat = np.asarray(values, dtype=np.float64)
    if flat.size != n1 * n2 * n3:
        raise DimMismatch(f"{flat.size} values do not fill dims {(n1, n2, n3)}")
    return tensor3(flat.reshape(n3, n1, n2).transpose(1, 2, 0))


def to_slice_major(a):
    """Flatten a tensor with the frontal-slice index outermost."""
    return np.ascontiguousarray(np.asarray(a).transpose(2, 0, 1)).ravel()


def fft_mode3(t):
    return np.fft.fft(np.asarray(t, dtype=np.float64), axis=2)


def ifft_mode3(t):
    """Inverse of :func:`fft_mode3`, returning the real part.

    Raises ``ImaginaryResidueTooLarge`` when the discarded imaginary part is
    not negligible.
    """
    out = np.fft.ifft(np.asarray(t, dtype=np.complex128), axis=2)
    residue = np.max(np.abs(out.imag)) if out.size else 0.0
    if residue >= IMAG_RESIDUE_LIMIT:
        raise ImaginaryResidueTooLarge(
            f"max |imag| after inverse FFT is {residue:.3e}"
        )
    return np.ascontiguousarray(out.real)


def _check_same_dims(a, b):
    if a.shape != b.shape:
        raise DimMismatch(f"dims differ: {a.shape} vs {b.shape}")


def t_product(a, b):
    """t-product ``a * b`` computed slice-wise in the Fourier domain."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3:
        raise DimMismatch("t_product needs two 3-order tensors")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise DimMismatch(f"cannot t-multiply {a.shape} by {b.shape}")
    af = fft_mode3(a).transpose(2, 0, 1)
    bf = fft_mode3(b).transpose(2, 0, 1)
    cf = np.matmul(af, bf).transpose(1, 2, 0)
    return ifft_mode3(cf)


def t_transpose(a):
    """Transpose each frontal slice and reverse the order of slices 2..n3."""
    a = np.asarray(a)
    order = (-np.arange(a.shape[2])) % a.shape[2]
    return np.ascontiguousarray(a.transpose(1, 0, 2)[:, :, order])


def identity_tensor(n, n3):
    if n < 1 or n3 < 1:
        raise DimMismatch(f"identity_tensor needs n >= 1 and n3 >= 1, got {n}, {n3}")
    out = np.zeros((n, n, n3))
    out[:, :, 0] = np.eye(n)
    return out


def rotate(a):
    """Swap modes 2 and 3: ``rotate(a)[i, k, j] == a[i, j, k]``.

    After rotation every frontal slice mixes entries from all original
    slices. The permutation is its own inverse.
    """
    return np.ascontiguousarray(np.asarray(a).transpose(0, 2, 1))


unrotate = rotate


def frobenius_norm_sq(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


def sub(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dims(a, b)
    return a - b


def scale(a, s):
    return np.asarray(a, dtype=np.float64) * float(s)
