"""Small feed-forward model with a classifier head and an uncertainty head.

Architecture (all dense)::

    features = relu(x @ f_w1 + f_b1) @ f_w2 + f_b2
    logits   = features @ mu_w + mu_b
    sigma    = clip(exp(features @ sigma_w + sigma_b), SIGMA_MIN, SIGMA_MAX)

Gradients are written out by hand. :func:`backward` takes the partials of a
scalar loss with respect to the three forward outputs (features, logits,
sigma) and returns partials for every parameter.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import NonFiniteGradient, NonFiniteInput, NonPositiveSigma

SIGMA_MIN = 0.5
SIGMA_MAX = 1e3

# order matters: serialization and iteration follow it
PARAM_NAMES = ("f_w1", "f_b1", "f_w2", "f_b2", "mu_w", "mu_b", "sigma_w", "sigma_b")
FEATURE_PARAMS = ("f_w1", "f_b1", "f_w2", "f_b2")
HEAD_PARAMS = ("mu_w", "mu_b", "sigma_w", "sigma_b")


@dataclass
class ModelParams:
    f_w1: np.ndarray
    f_b1: np.ndarray
    f_w2: np.ndarray
    f_b2: np.ndarray
    mu_w: np.ndarray
    mu_b: np.ndarray
    sigma_w: np.ndarray
    sigma_b: np.ndarray

    @property
    def input_dim(self):
        return self.f_w1.shape[0]

    @property
    def hidden_dim(self):
        return self.f_w1.shape[1]

    @property
    def feat_dim(self):
        return self.f_w2.shape[1]

    @property
    def num_classes(self):
        return self.mu_w.shape[1]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self):
        return ModelParams(**{k: v.copy() for k, v in self.items()})

    def map(self, fn, other=None):
        if other is None:
            return ModelParams(**{k: fn(v) for k, v in self.items()})
        return ModelParams(**{k: fn(v, getattr(other, k)) for k, v in self.items()})


# Gradients have exactly the parameter layout.
GradientSet = ModelParams


def init_params(input_dim, num_classes, hidden_dim=64, feat_dim=32, seed=0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)

    f_w1, f_b1 = dense(input_dim, hidden_dim)
    f_w2, f_b2 = dense(hidden_dim, feat_dim)
    mu_w, mu_b = dense(feat_dim, num_classes)
    sigma_w, sigma_b = dense(feat_dim, 1)
    return ModelParams(f_w1, f_b1, f_w2, f_b2, mu_w, mu_b, sigma_w, sigma_b)


def zeros_like(params):
    return params.map(np.zeros_like)


@dataclass
class ForwardResult:
    features: np.ndarray  # (B, feat_dim)
    logits: np.ndarray  # (B, C)
    sigma: np.ndarray  # (B,)
    # cached intermediates
    x: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    sigma_active: np.ndarray  # False where the clip is binding


def forward(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"expected {params.input_dim} input columns, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("batch contains NaN or Inf")
    pre = x @ params.f_w1 + params.f_b1
    hidden = np.maximum(pre, 0.0)
    feats = hidden @ params.f_w2 + params.f_b2
    logits = feats @ params.mu_w + params.mu_b
    raw = (feats @ params.sigma_w + params.sigma_b)[:, 0]
    unclipped = np.exp(np.minimum(raw, 50.0))
    sigma = np.clip(unclipped, SIGMA_MIN, SIGMA_MAX)
    active = (unclipped > SIGMA_MIN) & (unclipped < SIGMA_MAX)
    return ForwardResult(feats, logits, sigma, x, pre, hidden, active)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def scaled_softmax(logits, sigma):
    """Softmax of ``logits / sigma**2`` (sigma acts as a temperature)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise NonPositiveSigma("sigma must be > 0")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 2 and sigma.ndim == 1:
        sigma = sigma[:, None]
    return softmax(logits / sigma**2)


def backward(params, fwd, d_logits=None, d_sigma=None, d_features=None):
    """Parameter gradients given upstream partials of a scalar loss.

    Any upstream term may be ``None`` (treated as zero). ``d_sigma`` is with
    respect to the clipped sigma; samples where the clip binds pass no
    gradient to the sigma head.
    """
    bsz = fwd.features.shape[0]
    d_feat = np.zeros_like(fwd.features) if d_features is None else np.array(d_features, dtype=float)

    grads = zeros_like(params)
    if d_logits is not None:
        d_logits = np.asarray(d_logits, dtype=float)
        grads.mu_w = fwd.features.T @ d_logits
        grads.mu_b = d_logits.sum(axis=0)
        d_feat += d_logits @ params.mu_w.T
    if d_sigma is not None:
        d_raw = (np.asarray(d_sigma, dtype=float) * fwd.sigma * fwd.sigma_active).reshape(bsz, 1)
        grads.sigma_w = fwd.features.T @ d_raw
        grads.sigma_b = d_raw.sum(axis=0)
        d_feat += d_raw @ params.sigma_w.T

    grads.f_w2 = fwd.hidden.T @ d_feat
    grads.f_b2 = d_feat.sum(axis=0)
    d_hidden = (d_feat @ params.f_w2.T) * (fwd.pre_hidden > 0)
    grads.f_w1 = fwd.x.T @ d_hidden
    grads.f_b1 = d_hidden.sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return grads


def sgd_step(params, grads, lr):
    return params.map(lambda p, g: p - lr * g, grads)
