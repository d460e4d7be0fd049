"""Class prototypes, pseudo-labels and prototypical similarity tensors.

Domains are indexed ``0 .. M`` with the sources first and the target last.
The similarity tensor has shape ``(C, C, M + 1)``; frontal slice ``m`` holds
the Gaussian-kernel similarities between the class prototypes of domain
``m``.

A prototype cell that is not usable (never observed, or deliberately masked
such as the target during warm-up) is replaced by the mean of the same
class's usable prototypes in the other domains.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientPrototypes, InvalidDistribution

# Kernel values are floored here so every similarity stays strictly positive.
SIM_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class PrototypeBank:
    protos: np.ndarray  # (D, C, F)
    valid: np.ndarray  # (D, C) bool
    alpha: float = 0.3
    gamma: float = 0.05

    @classmethod
    def empty(cls, n_domains, num_classes, feat_dim, alpha=0.3, gamma=0.05):
        if not 0 < alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        if gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {gamma}")
        return cls(
            np.zeros((n_domains, num_classes, feat_dim)),
            np.zeros((n_domains, num_classes), dtype=bool),
            float(alpha),
            float(gamma),
        )

    @property
    def n_domains(self):
        return self.protos.shape[0]

    @property
    def num_classes(self):
        return self.protos.shape[1]


def pseudo_label(probs, tau):
    """Index of the argmax class if its probability is strictly above ``tau``, else None."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise InvalidDistribution("probs must be a probability vector")
    k = int(np.argmax(probs))
    return k if probs[k] > tau else None


def pseudo_labels(probs, tau):
    """Row-wise :func:`pseudo_label`; ``-1`` marks rows without a label."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
        raise InvalidDistribution("probs must be rows of probability vectors")
    k = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(k)), k]
    return np.where(conf > tau, k, -1)


def batch_prototypes(features, domains, labels, n_domains, num_classes):
    """Per-(domain, class) feature means of one batch.

    Samples with label ``-1`` are ignored. Returns ``(means, counts)``; cells
    with ``counts == 0`` hold zeros and must be treated as absent.
    """
    features = np.asarray(features, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    cell = domains[keep] * num_classes + labels[keep]
    n_cells = n_domains * num_classes
    counts = np.bincount(cell, minlength=n_cells)
    sums = np.zeros((n_cells, features.shape[1]))
    np.add.at(sums, cell, features[keep])
    means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return (
        means.reshape(n_domains, num_classes, -1),
        counts.reshape(n_domains, num_classes),
    )


def ema_update(bank, means, present):
    """``alpha * batch + (1 - alpha) * old`` on present cells.

    A cell seen for the first time takes the batch mean directly.
    """
    present = np.asarray(present, dtype=bool)
    if means.shape != bank.protos.shape or present.shape != bank.valid.shape:
        raise ValueError("batch means do not match the bank shape")
    w = np.where(bank.valid, bank.alpha, 1.0) * present
    w = w[:, :, None]
    protos = w * means + (1.0 - w) * bank.protos
    return replace(bank, protos=protos, valid=bank.valid | present)


def _usable(bank, masked_domains=()):
    usable = bank.valid.copy()
    for m in masked_domains:
        usable[m] = False
    return usable


def effective_prototypes(bank, masked_domains=()):
    """Prototypes with unusable cells substituted by cross-domain class means.

    Returns ``(protos, usable)`` where ``usable`` marks cells taken as is.
    """
    usable = _usable(bank, masked_domains)
    n_usable = usable.sum(axis=0)  # per class
    if np.any(n_usable == 0):
        missing = np.flatnonzero(n_usable == 0).tolist()
        raise InsufficientPrototypes(f"classes {missing} have no prototype in any domain")
    class_mean = (bank.protos * usable[:, :, None]).sum(axis=0) / n_usable[:, None]
    protos = np.where(usable[:, :, None], bank.protos, class_mean[None, :, :])
    return protos, usable


def gaussian_similarity(protos, gamma):
    """``exp(-||p_i - p_j||^2 / (2 gamma^2))`` for prototype rows ``p``."""
    protos = np.asarray(protos, dtype=np.float64)
    diff = protos[:, None, :] - protos[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    return np.maximum(np.exp(-d2 / (2.0 * gamma**2)), SIM_FLOOR)


def similarity_matrix(bank, m, masked_domains=()):
    if m not in masked_domains and bank.valid[m].sum() < 2:
        raise InsufficientPrototypes(f"domain {m} has fewer than two observed classes")
    protos, _ = effective_prototypes(bank, masked_domains)
    return gaussian_similarity(protos[m], bank.gamma)


def assemble_tensor(bank, masked_domains=()):
    """Stack per-domain similarity matrices into a ``(C, C, D)`` tensor."""
    for m in range(bank.n_domains):
        if m not in masked_domains and bank.valid[m].sum() < 2:
            raise InsufficientPrototypes(f"domain {m} has fewer than two observed classes")
    protos, _ = effective_prototypes(bank, masked_domains)
    return np.stack([gaussian_similarity(p, bank.gamma) for p in protos], axis=2)


def _kernel_backward(protos, sim, d_sim, gamma):
    """Partials w.r.t. the prototype rows of one similarity matrix."""
    s = (d_sim + d_sim.T) * sim * (sim > SIM_FLOOR)
    np.fill_diagonal(s, 0.0)
    return -(s.sum(axis=1)[:, None] * protos - s @ protos) / gamma**2


@dataclass
class SimilarityTape:
    """Everything needed to push ``dL/dG`` back onto batch features."""

    bank_before: PrototypeBank
    bank_after: PrototypeBank
    counts: np.ndarray
    domains: np.ndarray
    labels: np.ndarray
    protos_eff: np.ndarray
    usable: np.ndarray
    g: np.ndarray

    def backward(self, d_g):
        gamma = self.bank_after.gamma
        n_dom, n_cls, _ = self.protos_eff.shape
        d_eff = np.stack(
            [
                _kernel_backward(self.protos_eff[m], self.g[:, :, m], d_g[:, :, m], gamma)
                for m in range(n_dom)
            ]
        )
        # substituted cells spread their gradient over the usable cells they average
        n_usable = self.usable.sum(axis=0)
        spread = (d_eff * ~self.usable[:, :, None]).sum(axis=0) / n_usable[:, None]
        d_protos = np.where(self.usable[:, :, None], d_eff + spread[None], 0.0)
        present = self.counts > 0
        coef = np.where(self.bank_before.valid, self.bank_before.alpha, 1.0) * present
        d_means = d_protos * (coef / np.maximum(self.counts, 1))[:, :, None]
        d_feat = np.zeros((self.labels.shape[0], d_means.shape[2]))
        keep = self.labels >= 0
        d_feat[keep] = d_means[self.domains[keep], self.labels[keep]]
        return d_feat


def update_and_assemble(bank, features, domains, labels, masked_domains=()):
    """EMA-update ``bank`` from one batch and build the similarity tensor.

    Gradients flow only through this batch's contribution to the prototypes;
    the previous bank state is a constant.

    Returns
    -------
    g : ndarray, shape (C, C, D)
    tape : SimilarityTape
        ``tape.bank_after`` is the updated bank; ``tape.backward(dL_dg)``
        gives the partials with respect to ``features``.
    """
    domains = np.asarray(domains, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    means, counts = batch_prototypes(features, domains, labels, bank.n_domains, bank.num_classes)
    after = ema_update(bank, means, counts > 0)
    masked = tuple(masked_domains) + tuple(
        m for m in range(after.n_domains) if m not in masked_domains and after.valid[m].sum() < 2
    )
    protos_eff, usable = effective_prototypes(after, masked)
    g = np.stack([gaussian_similarity(p, after.gamma) for p in protos_eff], axis=2)
    tape = SimilarityTape(bank, after, counts, domains, labels, protos_eff, usable, g)
    return g, tape
