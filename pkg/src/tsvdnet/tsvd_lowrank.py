"""T-SVD, tensor nuclear norm, and singular value shrinkage.

Every routine works slice by slice on ``fft_mode3(g)``. For a real tensor
the Fourier slices come in conjugate pairs (``k`` and ``n3 - k``), so only
slices ``0 .. n3 // 2`` are decomposed and the mirrored half is filled with
conjugates. Besides halving the work, this is what makes the inverse FFT of
the factors real: independent SVDs of paired slices would pick unrelated
phases for the singular vectors.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NegativeThreshold, SvdFailure
from .tensor_core import fft_mode3, ifft_mode3, rotate, tensor3, unrotate


@dataclass(frozen=True)
class TsvdFactors:
    """``g == u * s * t_transpose(v)`` with orthogonal ``u``, ``v`` and f-diagonal ``s``."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    # singular values of each Fourier slice, shape (n3, min(n1, n2))
    fourier_singular_values: np.ndarray


def _slice_svd(mat, k, compute_uv=True):
    try:
        return np.linalg.svd(mat, full_matrices=True, compute_uv=compute_uv)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(k, exc) from exc


def _normalize_phase(u, vh):
    """Make the first nonzero entry of each left singular vector real and >= 0.

    The same unit-modulus factor is divided out of the matching row of ``vh``
    so the product ``u @ diag(s) @ vh`` is unchanged.
    """
    u = u.copy()
    vh = vh.copy()
    for i in range(u.shape[1]):
        col = u[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size == 0:
            continue
        lead = col[nz[0]]
        phase = lead / abs(lead)
        u[:, i] = col / phase
        if i < vh.shape[0]:
            vh[i, :] = vh[i, :] * phase
    return u, vh


def _half_slices(gf):
    """Yield ``(k, mirror, slice)`` for the independent half of the spectrum.

    Self-conjugate slices (``k == 0`` and the Nyquist slice) are real up to
    rounding; they are decomposed as real matrices so their factors stay real.
    """
    n3 = gf.shape[2]
    for k in range(n3 // 2 + 1):
        kk = (n3 - k) % n3
        mat = gf[:, :, k]
        yield k, kk, (mat.real if kk == k else mat)


def fourier_singular_values(g):
    """Singular values of every Fourier slice, shape ``(n3, min(n1, n2))``."""
    gf = fft_mode3(tensor3(g))
    n3 = gf.shape[2]
    out = np.empty((n3, min(gf.shape[0], gf.shape[1])))
    for k, kk, mat in _half_slices(gf):
        out[k] = out[kk] = _slice_svd(mat, k, compute_uv=False)
    return out


def tensor_rank(g, tol=None):
    """Tubal rank vector: rank of each Fourier slice."""
    sv = fourier_singular_values(g)
    if tol is None:
        tol = max(g.shape[0], g.shape[1]) * np.finfo(float).eps * max(sv.max(initial=0.0), 1.0)
    return (sv > tol).sum(axis=1)


def tsvd(g):
    """Tensor SVD via per-Fourier-slice complex SVDs.

    Returns
    -------
    TsvdFactors
        ``u`` is ``n1 x n1 x n3``, ``s`` is ``n1 x n2 x n3``, ``v`` is
        ``n2 x n2 x n3``.
    """
    g = tensor3(g)
    n1, n2, n3 = g.shape
    r = min(n1, n2)
    gf = fft_mode3(g)
    uf = np.zeros((n1, n1, n3), dtype=np.complex128)
    sf = np.zeros((n1, n2, n3), dtype=np.complex128)
    vf = np.zeros((n2, n2, n3), dtype=np.complex128)
    svals = np.empty((n3, r))
    for k, kk, mat in _half_slices(gf):
        u, s, vh = _slice_svd(mat, k)
        u, vh = _normalize_phase(u, vh)
        uf[:, :, k] = u
        vf[:, :, k] = vh.conj().T
        sf[np.arange(r), np.arange(r), k] = s
        svals[k] = s
        if kk != k:
            uf[:, :, kk] = u.conj()
            vf[:, :, kk] = vh.T
            sf[:, :, kk] = sf[:, :, k]
            svals[kk] = s
    return TsvdFactors(
        u=ifft_mode3(uf), s=ifft_mode3(sf), v=ifft_mode3(vf), fourier_singular_values=svals
    )


def tensor_nuclear_norm(g):
    """Sum of the singular values of all Fourier-domain frontal slices."""
    return float(np.sum(fourier_singular_values(g)))


def shrinkage_prox(g, threshold):
    """Proximal map of the tensor nuclear norm.

    Returns ``argmin_a lam * TNN(a) + (eta / 2) * ||a - g||_F^2`` where
    ``threshold = lam / eta``. Since the forward DFT is unnormalized,
    ``||a||_F^2 == sum_k ||a_f^(k)||_F^2 / n3``; the per-slice problem is
    therefore nuclear-norm shrinkage by ``n3 * threshold`` in the Fourier
    domain. Singular values equal to zero map to zero.
    """
    if threshold < 0:
        raise NegativeThreshold(f"threshold must be >= 0, got {threshold}")
    g = tensor3(g)
    n1, n2, n3 = g.shape
    if threshold == 0:
        return g
    tau = n3 * float(threshold)
    gf = fft_mode3(g)
    af = np.zeros_like(gf)
    for k, kk, mat in _half_slices(gf):
        u, s, vh = _slice_svd(mat, k)
        r = s.size
        shrunk = np.maximum(s - tau, 0.0)
        keep = shrunk > 0
        if np.any(keep):
            af[:, :, k] = (u[:, :r][:, keep] * shrunk[keep]) @ vh[:r][keep]
        if kk != k:
            af[:, :, kk] = af[:, :, k].conj()
    return ifft_mode3(af)


def rotated_prox(g, threshold):
    """Shrinkage applied to the mode-2/3 rotated tensor, rotated back."""
    return unrotate(shrinkage_prox(rotate(g), threshold))


def rotated_tnn(g):
    return tensor_nuclear_norm(rotate(g))
