"""Independent reference implementations used only by the tests.

Everything here is written from the textbook definitions with explicit
loops, and shares no code with the package beyond plain numpy.
"""

import numpy as np


def direct_dft(x):
    """Unnormalized DFT along the last axis by direct summation."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    out = np.zeros_like(x)
    for k in range(n):
        for m in range(n):
            out[..., k] += x[..., m] * np.exp(-2j * np.pi * m * k / n)
    return out


def circular_tproduct(a, b):
    """t-product from the circular-convolution definition, tube by tube."""
    n1, n2, n3 = a.shape
    _, n4, _ = b.shape
    c = np.zeros((n1, n4, n3))
    for i in range(n1):
        for j in range(n4):
            for p in range(n2):
                for k in range(n3):
                    for m in range(n3):
                        c[i, j, k] += a[i, p, m] * b[p, j, (k - m) % n3]
    return c


def fourier_singular_values(g):
    """Singular values of every DFT frontal slice, computed with the direct DFT."""
    gf = direct_dft(g)
    return [np.linalg.svd(gf[:, :, k], compute_uv=False) for k in range(g.shape[2])]


def tnn(g):
    return float(sum(s.sum() for s in fourier_singular_values(g)))


def rotated_tnn(g):
    return tnn(np.swapaxes(g, 1, 2))


def central_difference(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place probes)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def assert_gradient_close(analytic, numeric, rel=1e-4, abs_small=1e-7, cutoff=1e-3):
    """Relative tolerance where the gradient is large, absolute where it is small."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < cutoff
    err = np.abs(analytic - numeric)
    assert np.all(err[small] <= abs_small), f"max abs err {err[small].max()}"
    big = ~small
    if np.any(big):
        ratio = err[big] / scale[big]
        assert np.all(ratio <= rel), f"max rel err {ratio.max()}"
