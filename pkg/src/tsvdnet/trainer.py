"""Alternating optimization of the network and the auxiliary low-rank tensor.

Each iteration:

1. draw ``batch_size`` samples from every domain;
2. ``theta_step``: forward pass, EMA prototype update, similarity tensor
   ``g``, one SGD step on ``cls + w_ent * entropy + (eta/2) ||aux - g||^2``;
3. ``aux_step``: ``aux = rotated_prox(g, lam / eta)``, then
   ``eta = min(rho * eta, eta_max)``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model_grad as mg
from .errors import (
    ConfigError,
    EmptyEvalSet,
    NonFiniteGradient,
    NonFiniteInput,
    TrainingDiverged,
)
from .objective import cls_loss_grad, coupling_grad_g, coupling_loss, entropy_grad, make_breakdown
from .synthdata import inject_noise
from .proto_align import PrototypeBank, batch_prototypes, ema_update, pseudo_labels, update_and_assemble
from .tsvd_lowrank import rotated_prox, rotated_tnn

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1000.0
    eta0: float = 1e-3
    eta_max: float = 1.0
    rho: float = 1.1
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 20
    tau: float = 0.9
    alpha: float = 0.3
    gamma: float = 4.0
    w_ent: float = 0.1
    warmup_iters: int = 100
    seed: int = 0
    hidden_dim: int = 64
    feat_dim: int = 32
    use_entropy: bool = True
    use_tlr: bool = True
    use_uncertainty: bool = True

    def validate(self):
        if not self.rho > 1:
            raise ConfigError(f"rho must be > 1, got {self.rho}")
        if not 0 < self.eta0 <= self.eta_max:
            raise ConfigError("need 0 < eta0 <= eta_max")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_iters < 0:
            raise ConfigError("batch_size must be >= 1; epochs and warmup_iters >= 0")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not self.gamma > 0 or self.w_ent < 0:
            raise ConfigError("gamma must be > 0 and w_ent >= 0")
        if self.hidden_dim < 1 or self.feat_dim < 1:
            raise ConfigError("layer sizes must be positive")
        return self

    def ablation(self, entropy, tlr, uncertainty):
        return replace(self, use_entropy=entropy, use_tlr=tlr, use_uncertainty=uncertainty)


@dataclass
class TrainState:
    params: mg.ModelParams
    bank: PrototypeBank
    eta: float
    rng: np.random.Generator
    aux: np.ndarray | None = None  # (C, C, M + 1); set from the first g
    g: np.ndarray | None = None  # similarity tensor of the latest theta_step
    iter: int = 0


@dataclass
class Batch:
    x: np.ndarray
    domains: np.ndarray
    labels: np.ndarray  # target rows carry their true label, used for nothing but bookkeeping
    n_domains: int

    def rows(self, m):
        return np.flatnonzero(self.domains == m)


@dataclass
class StepInfo:
    losses: object
    mean_sigma: list
    n_pseudo: int
    grads: mg.GradientSet = field(repr=False, default=None)


def eta_step(eta, rho, eta_max):
    return min(rho * eta, eta_max)


def _source_prototypes(params, dataset, bank):
    """Seed the bank with whole-domain source prototypes of the initial model."""
    n_dom = len(dataset.domains)
    feats, doms, labels = [], [], []
    for m, d in enumerate(dataset.sources):
        feats.append(mg.forward(params, d.x).features)
        doms.append(np.full(len(d.y), m))
        labels.append(d.y)
    means, counts = batch_prototypes(
        np.concatenate(feats), np.concatenate(doms), np.concatenate(labels), n_dom, bank.num_classes
    )
    return ema_update(bank, means, counts > 0)


def init_state(config, dataset):
    config.validate()
    params = mg.init_params(
        dataset.input_dim, dataset.num_classes, config.hidden_dim, config.feat_dim, seed=config.seed
    )
    bank = PrototypeBank.empty(
        len(dataset.domains), dataset.num_classes, config.feat_dim, config.alpha, config.gamma
    )
    bank = _source_prototypes(params, dataset, bank)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    return TrainState(params=params, bank=bank, eta=config.eta0, rng=rng)


def sample_batch(rng, dataset, batch_size):
    xs, doms, labels = [], [], []
    for m, d in enumerate(dataset.domains):
        n = len(d.y)
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        xs.append(d.x[idx])
        doms.append(np.full(idx.size, m))
        labels.append(d.y[idx])
    return Batch(np.concatenate(xs), np.concatenate(doms), np.concatenate(labels), len(dataset.domains))


def theta_objective(params, state, batch, config, pseudo=None):
    """Loss breakdown, gradients and side products of one theta step.

    ``pseudo`` fixes the target pseudo-labels (``-1`` for none); when None
    they are derived from the current predictions. Holding them fixed makes
    the objective a smooth function of ``params`` for finite-difference
    checks.
    """
    target = batch.n_domains - 1
    fwd = mg.forward(params, batch.x)
    if not (np.all(np.isfinite(fwd.features)) and np.all(np.isfinite(fwd.logits))):
        raise NonFiniteGradient("network outputs are no longer finite")
    sigma = fwd.sigma if config.use_uncertainty else np.ones_like(fwd.sigma)

    groups = []
    src_rows = [batch.rows(m) for m in range(target)]
    for rows in src_rows:
        groups.append((fwd.logits[rows], sigma[rows], batch.labels[rows]))
    cls, d_log_src, d_sig_src = cls_loss_grad(groups)

    d_logits = np.zeros_like(fwd.logits)
    d_sigma = np.zeros_like(fwd.sigma)
    for rows, dl, ds in zip(src_rows, d_log_src, d_sig_src):
        d_logits[rows] = dl
        d_sigma[rows] = ds

    tgt_rows = batch.rows(target)
    ent, d_ent = entropy_grad(fwd.logits[tgt_rows])
    w_ent = config.w_ent if config.use_entropy else 0.0
    if w_ent:
        d_logits[tgt_rows] += w_ent * d_ent

    after_warmup = state.iter >= config.warmup_iters
    if pseudo is None:
        if after_warmup:
            pseudo = pseudo_labels(mg.softmax(fwd.logits[tgt_rows]), config.tau)
        else:
            pseudo = np.full(tgt_rows.size, -1)
    labels = batch.labels.copy()
    labels[tgt_rows] = pseudo
    masked = () if after_warmup else (target,)
    g, tape = update_and_assemble(state.bank, fwd.features, batch.domains, labels, masked)
    aux = g if state.aux is None else state.aux

    d_features = None
    coupling = 0.0
    if config.use_tlr:
        coupling = coupling_loss(aux, g, state.eta)
        d_features = tape.backward(coupling_grad_g(aux, g, state.eta))

    grads = mg.backward(
        params,
        fwd,
        d_logits=d_logits,
        d_sigma=d_sigma if config.use_uncertainty else None,
        d_features=d_features,
    )
    losses = make_breakdown(cls, ent, coupling, config.lam * rotated_tnn(aux), w_ent)
    mean_sigma = [float(np.mean(fwd.sigma[batch.rows(m)])) for m in range(batch.n_domains)]
    info = StepInfo(losses, mean_sigma, int(np.sum(pseudo >= 0)), grads)
    return info, g, tape.bank_after, pseudo


def theta_step(state, batch, config):
    """One SGD step on the network with ``aux`` held fixed."""
    try:
        info, g, bank, _ = theta_objective(state.params, state, batch, config)
    except (NonFiniteGradient, NonFiniteInput) as exc:
        raise TrainingDiverged(f"iteration {state.iter}: {exc}") from exc
    if not math.isfinite(info.losses.total):
        raise TrainingDiverged(f"iteration {state.iter}: non-finite loss {info.losses.total}")
    params = mg.sgd_step(state.params, info.grads, config.lr)
    aux = g.copy() if state.aux is None else state.aux
    return replace(state, params=params, bank=bank, g=g, aux=aux), info


def aux_step(state, config):
    """Shrinkage update of ``aux`` from the latest ``g``, then grow ``eta``."""
    aux = rotated_prox(state.g, config.lam / state.eta)
    return replace(state, aux=aux, eta=eta_step(state.eta, config.rho, config.eta_max))


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    sigma: np.ndarray


def evaluate(params, x, y):
    """Accuracy of ``argmax(logits)``; sigma plays no role in the prediction."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyEvalSet("evaluation set is empty")
    fwd = mg.forward(params, x)
    pred = np.argmax(fwd.logits, axis=1)
    return EvalResult(float(np.mean(pred == np.asarray(y))), pred, fwd.sigma)


def sigma_noise_sweep(params, x, levels, draws=32, seed=0):
    """Mean and std of predicted sigma on ``x + r * eps`` for each level ``r``.

    Each sample is perturbed ``draws`` times so the mean is a Monte Carlo
    estimate of the expected sigma at that noise level. Every level reuses
    the same noise seed, so repeated levels give identical rows.

    Returns a list of ``(r, mean_sigma, std_sigma)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyEvalSet("sweep set is empty")
    tiled = np.tile(x, (draws, 1))
    rows = []
    for r in levels:
        sigma = mg.forward(params, inject_noise(tiled, float(r), seed)).sigma
        rows.append((float(r), float(sigma.mean()), float(sigma.std())))
    return rows


def iterations_per_epoch(dataset, batch_size):
    return max(1, math.ceil(min(len(d.y) for d in dataset.domains) / batch_size))


def train(config, dataset, on_record=None):
    """Run the full alternating optimization.

    Parameters
    ----------
    on_record : callable, optional
        Called with each per-iteration metrics dict as soon as it exists,
        so partial logs survive a divergence.

    Returns
    -------
    state : TrainState
    records : list of dict
    """
    if len(dataset.sources) < 2:
        raise ConfigError("training needs at least two source domains")
    state = init_state(config, dataset)
    n_iter = config.epochs * iterations_per_epoch(dataset, config.batch_size)
    # overflow surfaces as non-finite values, which theta_step reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(config, dataset, state, n_iter, on_record)


def _train_loop(config, dataset, state, n_iter, on_record):
    records = []
    for it in range(n_iter):
        batch = sample_batch(state.rng, dataset, config.batch_size)
        try:
            state, info = theta_step(state, batch, config)
        except TrainingDiverged as exc:
            exc.metrics = records
            raise
        eta_used = state.eta
        state = aux_step(state, config)
        rec = {
            "iter": it,
            "cls": info.losses.cls,
            "entropy": info.losses.entropy,
            "coupling": info.losses.coupling,
            "total": info.losses.total,
            "tnn_g": rotated_tnn(state.g),
            "tnn_a": rotated_tnn(state.aux),
            "eta": eta_used,
            "target_acc": evaluate(state.params, dataset.target.x, dataset.target.y).accuracy,
            "mean_sigma": info.mean_sigma,
            "n_pseudo": info.n_pseudo,
        }
        state = replace(state, iter=it + 1)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if it % 200 == 0:
            log.debug("iter %d cls %.4f acc %.4f", it, rec["cls"], rec["target_acc"])
    return state, records


def config_dict(config):
    return asdict(config)
