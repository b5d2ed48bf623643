"""Linear label-embedding scorer, optimizers and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import (
    Dataset,
    empirical_marginal,
    label_smooth,
    sample_soft_distribution_label,
    soft_marginal,
    uniform,
)
from .losses import INFONCE_FAMILY, LOSS_IDS, SOFT_LOSSES, NoiseModel, compute_loss
from .numerics import RandomSource, make_rng


@dataclass
class ScoringModel:
    """K x d label embeddings, a temperature and per-class log noise."""

    embeddings: np.ndarray
    temperature: float = 1.0
    log_noise: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a K x d array")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.log_noise is None:
            self.log_noise = np.full(self.k, -math.log(self.k))
        self.log_noise = np.asarray(self.log_noise, dtype=np.float64)
        if self.log_noise.shape != (self.k,):
            raise ValueError("log_noise must have one entry per class")

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def noise_model(self) -> NoiseModel:
        # forward_logits already divides by the temperature
        return NoiseModel(self.log_noise, 1.0)

    def copy(self) -> ScoringModel:
        return ScoringModel(self.embeddings.copy(), self.temperature, self.log_noise.copy())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "temperature": self.temperature,
            "log_noise": [float(v) for v in self.log_noise],
            "embeddings": [float(v) for v in self.embeddings.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScoringModel:
        emb = np.asarray(d["embeddings"], dtype=np.float64).reshape(d["k"], d["d"])
        return cls(emb, float(d["temperature"]), np.asarray(d["log_noise"], dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> ScoringModel:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_model(k: int, d: int, rng: RandomSource, temperature: float = 1.0) -> ScoringModel:
    """Embeddings drawn entrywise from N(0, 1/d)."""
    return ScoringModel(rng.standard_normal((k, d)) / math.sqrt(d), temperature)


def forward_logits(model: ScoringModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.d:
        raise ValueError(f"input dimension {x.shape[1]} does not match model dimension {model.d}")
    return x @ model.embeddings.T / model.temperature


# --------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> AdamState:
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update; returns new params and state."""
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


def sgd_step(params, grads, lr: float):
    return params - lr * grads


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 1024
    learning_rate: float = 1e-3
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    loss_id: str = "nll"
    epsilon: float = 0.0
    optimizer: str = "adam"
    noise: str | tuple[float, ...] = "empirical"
    extra_negatives: int = 0

    def __post_init__(self):
        if self.loss_id not in LOSS_IDS:
            raise ValueError(f"unknown loss id {self.loss_id!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        min_batch = 2 if self.loss_id in INFONCE_FAMILY else 1
        if self.batch_size < min_batch:
            raise ValueError(f"batch_size must be at least {min_batch} for {self.loss_id}")
        if isinstance(self.noise, str) and self.noise not in ("empirical", "uniform"):
            raise ValueError("noise must be 'empirical', 'uniform' or explicit probabilities")
        if self.extra_negatives < 0:
            raise ValueError("extra_negatives must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if isinstance(d.get("noise"), list):
            d["noise"] = tuple(d["noise"])
        return cls(**d)


@dataclass
class TrainResult:
    final_model: ScoringModel
    epochs_run: int
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = 0
    history: list[np.ndarray] = field(default_factory=list, repr=False)


def _noise_probs(config: TrainConfig, k: int, labels, targets) -> np.ndarray:
    if config.noise == "uniform":
        return uniform(k)
    if config.noise == "empirical":
        if labels is not None:
            return empirical_marginal(labels, k)
        probs = soft_marginal(targets)
        if np.any(probs <= 0):
            probs = (probs + 1.0 / k) / 2.0
        return probs
    probs = np.asarray(config.noise, dtype=np.float64)
    if probs.shape != (k,):
        raise ValueError("explicit noise probabilities must cover every class")
    return probs / probs.sum()


def _batches(n: int, batch_size: int, drop_last: bool, order=None):
    order = np.arange(n) if order is None else order
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield order[start:start + batch_size]


def _eval_loss(model, x, labels, targets, config, noise) -> float:
    """Mean loss over a fixed split, batched like training."""
    contrastive = config.loss_id in INFONCE_FAMILY
    n = x.shape[0]
    bs = min(config.batch_size, n) if contrastive else n
    total, count = 0.0, 0
    for idx in _batches(n, bs, drop_last=contrastive):
        out = compute_loss(
            config.loss_id,
            forward_logits(model, x[idx]),
            labels=None if labels is None else labels[idx],
            targets=None if targets is None else targets[idx],
            noise=noise,
        )
        total += out.value * idx.size
        count += idx.size
    return total / count


def train(dataset: Dataset, config: TrainConfig, init: ScoringModel, record_history: bool = False) -> TrainResult:
    """Mini-batch training with early stopping on validation loss.

    Hard-label losses (nll, infonce, sd_infonce) need ``hard_labels``;
    soft losses use ``soft_targets`` when present, otherwise they smooth
    the hard labels with ``config.epsilon`` toward the uniform
    distribution. For sd_infonce the training labels are resampled from
    the smoothed conditional every epoch, with the noise distribution
    doubling as the smoothing distribution. Returns the model with the
    best validation loss.
    """
    rng = make_rng(config.seed)
    k, d = init.k, init.d
    if dataset.inputs.shape[1] != d:
        raise ValueError("dataset dimension does not match the model")
    soft = config.loss_id in SOFT_LOSSES
    contrastive = config.loss_id in INFONCE_FAMILY

    labels = dataset.hard_labels
    targets = dataset.soft_targets
    if soft and targets is None:
        if labels is None:
            raise ValueError("soft losses need soft targets or hard labels")
        targets = label_smooth(labels, k, config.epsilon)
    if not soft and labels is None:
        raise ValueError(f"{config.loss_id} needs hard labels")

    n = len(dataset)
    n_val = max(1, int(round(config.val_fraction * n)))
    perm = rng.permutation(n)
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if config.batch_size > tr_idx.size:
        raise ValueError("batch_size exceeds the training split")

    x_tr, x_val = dataset.inputs[tr_idx], dataset.inputs[val_idx]
    lab_tr = None if labels is None else labels[tr_idx]
    lab_val = None if labels is None else labels[val_idx]
    tgt_tr = None if targets is None else targets[tr_idx]
    tgt_val = None if targets is None else targets[val_idx]

    noise_probs = _noise_probs(config, k, lab_tr, tgt_tr)
    model = ScoringModel(init.embeddings.copy(), init.temperature, np.log(noise_probs))
    noise = model.noise_model()
    eval_labels = lab_val
    if config.loss_id == "sd_infonce":
        eval_labels = sample_soft_distribution_label(lab_val, config.epsilon, noise_probs, make_rng(config.seed + 1))

    state = AdamState.zeros_like(model.embeddings)
    best_val, best_model, best_epoch, since_best = math.inf, model.copy(), 0, 0
    result = TrainResult(best_model, 0)
    if record_history:
        result.history.append(model.embeddings.copy())

    for epoch in range(1, config.max_epochs + 1):
        epoch_labels = lab_tr
        if config.loss_id == "sd_infonce":
            epoch_labels = sample_soft_distribution_label(lab_tr, config.epsilon, noise_probs, rng)
        order = rng.permutation(tr_idx.size)
        total, count = 0.0, 0
        for idx in _batches(tr_idx.size, config.batch_size, drop_last=contrastive, order=order):
            xb = x_tr[idx]
            extra = None
            if config.extra_negatives and config.loss_id == "st_infonce":
                extra = tgt_tr[rng.integers(0, tr_idx.size, size=config.extra_negatives)]
            logits = forward_logits(model, xb)
            if not np.all(np.isfinite(logits)):
                raise FloatingPointError(f"non-finite logits at epoch {epoch}; lower the learning rate")
            out = compute_loss(
                config.loss_id,
                logits,
                labels=None if epoch_labels is None else epoch_labels[idx],
                targets=None if tgt_tr is None else tgt_tr[idx],
                noise=noise,
                extra_negatives=extra,
            )
            if not np.isfinite(out.value):
                raise FloatingPointError(f"non-finite {config.loss_id} loss at epoch {epoch}")
            grad = out.grad_logits.T @ xb / model.temperature
            if config.optimizer == "adam":
                model.embeddings, state = adam_step(model.embeddings, grad, state, config.learning_rate)
            else:
                model.embeddings = sgd_step(model.embeddings, grad, config.learning_rate)
            if record_history:
                result.history.append(model.embeddings.copy())
            total += out.value * idx.size
            count += idx.size

        val = _eval_loss(model, x_val, eval_labels, tgt_val, config, noise)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        result.train_curve.append(total / count)
        result.val_curve.append(val)
        result.epochs_run = epoch
        if val < best_val:
            best_val, best_model, best_epoch, since_best = val, model.copy(), epoch, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    result.final_model = best_model
    result.best_epoch = best_epoch
    return result


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
