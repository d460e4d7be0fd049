"""Scalar loss terms and their partial derivatives.

Value functions take plain arrays. The ``*_grad`` variants also return the
partials with respect to logits / sigma / the similarity tensor, which the
trainer chains through :func:`tsvdnet.model_grad.backward`.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimMismatch, EmptyDomainBatch, InvalidDistribution, NonPositiveSigma
from .model_grad import softmax
from .tensor_core import frobenius_norm_sq, sub


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    entropy: float
    coupling: float
    tnn: float  # lam * TNN(rotate(aux)); reported only
    w_ent: float  # weight actually applied to ``entropy`` in ``total``
    total: float

    def as_dict(self):
        return asdict(self)


def make_breakdown(cls, entropy, coupling, tnn, w_ent):
    return LossBreakdown(
        cls=float(cls),
        entropy=float(entropy),
        coupling=float(coupling),
        tnn=float(tnn),
        w_ent=float(w_ent),
        total=float(cls + w_ent * entropy + coupling),
    )


def _logsumexp(z):
    m = np.max(z, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True)))[..., 0]


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise NonPositiveSigma("sigma must be > 0")


def cross_entropy(logits, label):
    """Unscaled cross-entropy ``-h_c + log sum_c' exp(h_c')``; vectorizes over rows."""
    logits = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    h_c = np.take_along_axis(logits, label[..., None], axis=-1)[..., 0]
    return _logsumexp(logits) - h_c


def uncertainty_ce(logits, sigma, label):
    """``CE / sigma**2 + log(sigma)``."""
    _check_sigma(sigma)
    sigma = np.asarray(sigma, dtype=np.float64)
    out = cross_entropy(logits, label) / sigma**2 + np.log(sigma)
    return float(out) if np.ndim(out) == 0 else out


def exact_scaled_nll(logits, sigma, label):
    """``-log softmax(logits / sigma**2)[label]`` without the approximation."""
    _check_sigma(sigma)
    sigma = np.asarray(sigma, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    scaled = logits / (sigma[..., None] ** 2 if sigma.ndim else sigma**2)
    out = cross_entropy(scaled, label)
    return float(out) if np.ndim(out) == 0 else out


def exact_vs_approx_gap(logits, sigma, label):
    """Absolute error of the ``log(sigma)`` approximation to the scaled NLL."""
    return abs(exact_scaled_nll(logits, sigma, label) - uncertainty_ce(logits, sigma, label))


def cls_loss_grad(groups):
    """Two-level averaged uncertainty loss over source domains.

    Parameters
    ----------
    groups : list of (logits, sigma, labels)
        One entry per source domain; ``logits`` is ``(N_m, C)``.

    Returns
    -------
    loss : float
        ``mean_m mean_i [CE_i / sigma_i**2 + log sigma_i]``.
    d_logits, d_sigma : list of ndarray
        Partials per group.
    """
    if not groups:
        raise EmptyDomainBatch("need at least one source domain")
    n_dom = len(groups)
    loss = 0.0
    d_logits, d_sigma = [], []
    for m, (logits, sigma, labels) in enumerate(groups):
        logits = np.asarray(logits, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        labels = np.asarray(labels)
        n = logits.shape[0]
        if n == 0:
            raise EmptyDomainBatch(f"source domain {m} has no samples in the batch")
        _check_sigma(sigma)
        ce = cross_entropy(logits, labels)
        inv_var = 1.0 / sigma**2
        loss += np.mean(ce * inv_var + np.log(sigma)) / n_dom
        w = 1.0 / (n_dom * n)
        grad = softmax(logits)
        grad[np.arange(n), labels] -= 1.0
        d_logits.append(grad * (w * inv_var)[:, None])
        d_sigma.append(w * (1.0 / sigma - 2.0 * ce * inv_var / sigma))
    return float(loss), d_logits, d_sigma


def batch_cls_loss(groups):
    return cls_loss_grad(groups)[0]


def _check_distribution(probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
        raise InvalidDistribution("rows must be nonnegative and sum to 1")
    return probs


def target_entropy(probs):
    """Mean Shannon entropy (nats) of probability rows, with 0 ln 0 = 0."""
    probs = _check_distribution(probs)
    if probs.shape[0] == 0:
        return 0.0
    plogp = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return float(np.mean(-plogp.sum(axis=1)))


def entropy_grad(logits):
    """Mean entropy of ``softmax(logits)`` and its partials w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - np.max(logits, axis=1, keepdims=True)
    logp = z - _logsumexp(z)[:, None]
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    d_logits = -p * (logp + ent[:, None]) / n
    return float(ent.mean()), d_logits


def coupling_loss(a, g, eta):
    """``(eta / 2) * ||a - g||_F^2``."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return 0.5 * eta * frobenius_norm_sq(sub(a, g))


def coupling_grad_g(a, g, eta):
    """Partial of :func:`coupling_loss` with respect to ``g``."""
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if a.shape != g.shape:
        raise DimMismatch(f"dims differ: {a.shape} vs {g.shape}")
    return eta * (g - a)
