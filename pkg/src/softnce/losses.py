"""Loss functions that consume class scores (logits) and (soft) targets.

Every batch loss returns a :class:`LossOutput` holding the batch-mean
value and its gradient with respect to the logits. The InfoNCE family
builds its negatives from the other rows of the batch: row ``n`` is
contrasted against the labels (or soft targets) of every row, its own
included at position ``n``.

Scores entering the InfoNCE family are ``logits / T - log(eta)``; the
noise correction is a training-time device only, :func:`predict` uses the
raw logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import check_distribution, check_soft_targets, one_hot
from .numerics import as_real, log_softmax, log_sum_exp, log_sum_exp_relative, softmax, softmax_rows_with_lse

INFONCE_FAMILY = ("infonce", "sd_infonce", "st_infonce")
SOFT_LOSSES = ("soft_ce", "st_infonce")
LOSS_IDS = ("nll", "soft_ce", "infonce", "sd_infonce", "st_infonce")


@dataclass(frozen=True)
class NoiseModel:
    log_noise: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        log_noise = np.asarray(self.log_noise, dtype=np.float64)
        if log_noise.ndim != 1 or log_noise.size < 2:
            raise ValueError("log_noise must be a vector over at least two classes")
        if abs(np.exp(log_noise).sum() - 1.0) > 1e-9:
            raise ValueError("exp(log_noise) must sum to 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "log_noise", log_noise)

    @classmethod
    def from_probs(cls, probs, temperature: float = 1.0) -> NoiseModel:
        probs = check_distribution(probs, "noise probabilities")
        if np.any(probs <= 0):
            raise ValueError("noise probabilities must be strictly positive")
        return cls(np.log(probs), temperature)

    @classmethod
    def uniform(cls, n_classes: int, temperature: float = 1.0) -> NoiseModel:
        return cls(np.full(n_classes, -np.log(n_classes)), temperature)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_noise)

    def scores(self, logits) -> np.ndarray:
        return np.asarray(logits) / self.temperature - self.log_noise


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray
    per_sample: np.ndarray


def _check_logits(logits) -> np.ndarray:
    logits = as_real(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("logits must be an N x K array with K >= 2")
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    return logits


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ValueError("one label per logits row required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label out of range")
    return labels


def _check_targets(targets, shape) -> np.ndarray:
    targets = check_soft_targets(targets)
    if targets.shape != shape:
        raise ValueError("targets must match the logits shape")
    return targets


def _check_noise(noise: NoiseModel, k: int) -> None:
    if noise.log_noise.size != k:
        raise ValueError("noise model must cover every class")


def nll_loss(logits, labels) -> LossOutput:
    """Mean negative log-likelihood of the labels under softmax(logits)."""
    logits = _check_logits(logits)
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    logp = log_softmax(logits, axis=1)
    per = log_sum_exp_relative(logits, labels)
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return LossOutput(per.mean(), grad / n, per)


def soft_target_ce_loss(logits, targets) -> LossOutput:
    logits = _check_logits(logits)
    n, _ = logits.shape
    targets = _check_targets(targets, logits.shape)
    logp = log_softmax(logits, axis=1)
    per = -np.sum(targets * logp, axis=1)
    grad = np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets
    return LossOutput(per.mean(), grad / n, per)


def _distinct_rows(pool):
    """Bit-identical rows merged: (unique rows, inverse index, counts)."""
    pool = np.ascontiguousarray(pool)
    keys = pool.view(np.dtype((np.void, pool.itemsize * pool.shape[1]))).ravel()
    _, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    return pool[first], inv.reshape(-1), counts


def _contrastive(s, pool, n: int, temperature: float) -> LossOutput:
    """Shared kernel: row ``n`` scores every pool row, its positive being row ``n``.

    Identical pool rows contribute identical terms, so the softmax runs over
    the distinct rows weighted by their multiplicity. With hard labels or
    label-smoothed targets that is at most K columns instead of N.
    """
    uniq, inv, counts = _distinct_rows(pool)
    a = s @ uniq.T
    pos = inv[:n]
    per = log_sum_exp_relative(a, pos, counts)
    p, _ = softmax_rows_with_lse(a + np.log(counts))
    idx = np.arange(n)
    p[idx, pos] -= 1.0
    return LossOutput(per.mean(), (p @ uniq) / (n * temperature), per)


def infonce_loss(logits, labels, noise: NoiseModel) -> LossOutput:
    """InfoNCE with in-batch negatives and hard labels.

    The score matrix is ``A[n, m] = s(z_n, y_{k_m})``; the positive of row
    ``n`` sits on the diagonal. A batch of one has no negatives and yields
    a loss of exactly zero.
    """
    logits = _check_logits(logits)
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    _check_noise(noise, k)
    # routed through the soft kernel so one-hot targets reproduce it bit for bit
    return _contrastive(noise.scores(logits), one_hot(labels, k), n, noise.temperature)


def soft_distribution_infonce_loss(logits, smoothed_labels, noise: NoiseModel) -> LossOutput:
    """InfoNCE on labels already resampled from the smoothed conditional."""
    return infonce_loss(logits, smoothed_labels, noise)


def _aggregate_scores(s, targets, extra_negatives):
    pool = targets if extra_negatives is None else np.vstack([targets, extra_negatives])
    return s @ pool.T, pool


def _prepare_soft(logits, targets, noise, extra_negatives):
    logits = _check_logits(logits)
    n, k = logits.shape
    targets = _check_targets(targets, logits.shape)
    _check_noise(noise, k)
    if extra_negatives is not None:
        extra_negatives = check_soft_targets(extra_negatives)
        if extra_negatives.shape[1] != k:
            raise ValueError("extra negatives must cover every class")
    n_neg = n - 1 + (0 if extra_negatives is None else extra_negatives.shape[0])
    if n_neg < 1:
        raise ValueError("needs at least one negative")
    return logits, targets, extra_negatives


def soft_target_infonce_loss(logits, targets, noise: NoiseModel, extra_negatives=None) -> LossOutput:
    """Soft target InfoNCE.

    Row ``n`` scores every soft target in the batch as
    ``A[n, m] = sum_j targets[m, j] * s(z_n, y_j)``; the diagonal is the
    positive and the remaining entries are negatives. ``extra_negatives``
    appends further soft targets that act as negatives for every row.
    """
    logits, targets, extra = _prepare_soft(logits, targets, noise, extra_negatives)
    pool = targets if extra is None else np.vstack([targets, extra])
    return _contrastive(noise.scores(logits), pool, logits.shape[0], noise.temperature)


def energy_ce_form(logits, targets, noise: NoiseModel, extra_negatives=None) -> LossOutput:
    """Soft target InfoNCE written as an energy cross-entropy.

    Per row: ``-sum_i targets[n, i] * (s(z_n, y_i) - log Z_n)`` where
    ``Z_n`` sums exp of the positive and all negative aggregate scores.
    """
    logits, targets, extra = _prepare_soft(logits, targets, noise, extra_negatives)
    n = logits.shape[0]
    s = noise.scores(logits)
    a, pool = _aggregate_scores(s, targets, extra)
    p, log_z = softmax_rows_with_lse(a)
    per = -np.sum(targets * (s - log_z[:, None]), axis=1)
    grad = -targets + targets.sum(axis=1, keepdims=True) * (p @ pool)
    return LossOutput(per.mean(), grad / (n * noise.temperature), per)


def soft_target_tuple_loss(z_scores, alpha_pos, alpha_negs, noise: NoiseModel) -> tuple[float, np.ndarray]:
    """Single-tuple soft target InfoNCE and its gradient w.r.t. ``z_scores``.

    ``z_scores[j]`` is the raw score of the data embedding against class
    ``j``. Returns ``(loss, d loss / d z_scores)``.
    """
    z_scores = as_real(z_scores)
    k = z_scores.size
    _check_noise(noise, k)
    alpha_pos = np.asarray(alpha_pos, dtype=np.float64).reshape(1, k)
    alpha_negs = np.asarray(alpha_negs, dtype=np.float64).reshape(-1, k)
    alphas = np.vstack([alpha_pos, alpha_negs])
    s = noise.scores(z_scores)
    agg = alphas @ s
    value = log_sum_exp(agg) - agg[0]
    grad = (softmax(agg) @ alphas - alphas[0]) / noise.temperature
    return value, grad


def theoretical_soft_target_infonce(z_scores, alpha_pos, alpha_negs, noise: NoiseModel) -> float:
    """Loss for one tuple of simplex samples: positive first, then negatives.

    With no negatives the softmax has a single term and the loss is zero.
    """
    alpha_negs = np.asarray(alpha_negs, dtype=np.float64)
    if alpha_negs.size == 0:
        return 0.0
    return soft_target_tuple_loss(z_scores, alpha_pos, alpha_negs, noise)[0]


def predict(logits, k: int = 1) -> np.ndarray:
    """Indices of the ``k`` largest raw logits per row, ties to the lowest index."""
    logits = _check_logits(logits)
    if not 1 <= k <= logits.shape[1]:
        raise ValueError("k must lie in [1, K]")
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def compute_loss(
    loss_id: str,
    logits,
    labels=None,
    targets=None,
    noise: NoiseModel | None = None,
    extra_negatives=None,
) -> LossOutput:
    """Dispatch on ``loss_id``; ``sd_infonce`` expects pre-smoothed labels."""
    if loss_id == "nll":
        return nll_loss(logits, labels)
    if loss_id == "soft_ce":
        return soft_target_ce_loss(logits, targets)
    if noise is None:
        noise = NoiseModel.uniform(np.shape(logits)[1])
    if loss_id == "infonce":
        return infonce_loss(logits, labels, noise)
    if loss_id == "sd_infonce":
        return soft_distribution_infonce_loss(logits, labels, noise)
    if loss_id == "st_infonce":
        return soft_target_infonce_loss(logits, targets, noise, extra_negatives)
    if loss_id == "energy_ce":
        return energy_ce_form(logits, targets, noise, extra_negatives)
    raise ValueError(f"unknown loss id {loss_id!r}")
