"""Estimation error, accuracy, calibration and exact information audits.

All logarithms are natural; entropies and mutual information are in nats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .losses import predict
from .models import ScoringModel, forward_logits
from .numerics import log_softmax, xlogy

N_BINS = 15


def kl_estimation_error(theta_true, model: ScoringModel, x_probe) -> float:
    """Mean over probe points of KL(p(.|x, theta_true) || q(.|x, model)).

    The true conditional is softmax(x . theta_k); the model conditional is
    softmax of its raw logits x . y_k / T, without noise correction.
    """
    theta_true = np.asarray(theta_true, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x_probe, dtype=np.float64))
    if theta_true.shape != model.embeddings.shape:
        raise ValueError("true parameters and model embeddings differ in shape")
    if x.shape[1] != theta_true.shape[1]:
        raise ValueError("probe points have the wrong dimension")
    log_p = log_softmax(x @ theta_true.T, axis=1)
    log_q = log_softmax(forward_logits(model, x), axis=1)
    kl = np.sum(np.exp(log_p) * (log_p - log_q), axis=1)
    return float(np.mean(np.maximum(kl, 0.0)))


def topk_accuracy(logits, labels, k: int = 1) -> float:
    top = predict(logits, k)
    labels = np.asarray(labels, dtype=np.intp)
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


@dataclass
class CalibrationReport:
    bin_edges: list[float]
    bin_confidence: list[float]
    bin_accuracy: list[float]
    bin_counts: list[int]
    ece: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self, path) -> None:
        """Reliability-diagram rows: bin_lo, bin_hi, confidence, accuracy, count."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "confidence", "accuracy", "count"])
            for b in range(len(self.bin_counts)):
                w.writerow([
                    repr(self.bin_edges[b]),
                    repr(self.bin_edges[b + 1]),
                    repr(self.bin_confidence[b]),
                    repr(self.bin_accuracy[b]),
                    self.bin_counts[b],
                ])


def calibration(probs, labels, n_bins: int = N_BINS) -> CalibrationReport:
    """Equal-width reliability bins on the top-class confidence.

    Bins are right-closed, ``(lo, hi]``, with confidence 0 folded into the
    first bin. Empty bins report count 0 and contribute nothing to the ECE.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("probabilities must be a row-stochastic matrix")
    n = probs.shape[0]
    conf = probs.max(axis=1)
    correct = (predict(probs, 1)[:, 0] == labels).astype(np.float64)
    bins = np.clip(np.ceil(conf * n_bins).astype(np.intp) - 1, 0, n_bins - 1)

    edges = [b / n_bins for b in range(n_bins + 1)]
    bin_conf, bin_acc, counts = [], [], []
    gap = []
    for b in range(n_bins):
        mask = bins == b
        c = int(mask.sum())
        counts.append(c)
        if c == 0:
            bin_conf.append(0.0)
            bin_acc.append(0.0)
            continue
        conf_sum = math.fsum(conf[mask])
        acc_sum = math.fsum(correct[mask])
        bin_conf.append(conf_sum / c)
        bin_acc.append(acc_sum / c)
        gap.append(abs(acc_sum - conf_sum))
    ece = math.fsum(gap) / n if n else 0.0
    return CalibrationReport(edges, bin_conf, bin_acc, counts, ece)


# --------------------------------------------------------------------------
# exact discrete information audits


@dataclass
class DiscreteJoint:
    """Joint probability table p(z, y) with z along rows."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2 or np.any(~np.isfinite(t)) or np.any(t < 0):
            raise ValueError("joint must be a non-negative 2-D table")
        if abs(t.sum() - 1.0) > 1e-12:
            raise ValueError("joint must sum to 1")
        self.table = t

    @property
    def p_z(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def p_y(self) -> np.ndarray:
        return self.table.sum(axis=0)


def _entropy(p) -> float:
    return float(-np.sum(xlogy(p, p)))


def _cond_entropy(joint, p_z) -> float:
    """-sum p(z,y) log(p(z,y)/p(z)), skipping zero-probability rows."""
    cond = np.divide(joint, p_z[:, None], out=np.zeros_like(joint), where=p_z[:, None] > 0)
    return float(-np.sum(xlogy(joint, cond)))


def mi_bound_audit(joint: DiscreteJoint, epsilon: float) -> dict:
    """Exact terms of the smoothed-conditional MI bound.

    Returns I(Z;Y), H(Y|Z), H_eps(Y|Z) and ``lhs = mi + h_cond - h_eps``,
    where H_eps uses the smoothed joint (1-eps) p(z,y) + eps p(z) p(y).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(joint)
    p = joint.table
    p_z, p_y = joint.p_z, joint.p_y
    h_y = _entropy(p_y)
    h_cond = _cond_entropy(p, p_z)
    mi = float(np.sum(xlogy(p, p)) - np.sum(xlogy(p_z, p_z)) - np.sum(xlogy(p_y, p_y)))
    p_eps = (1.0 - epsilon) * p + epsilon * np.outer(p_z, p_y)
    h_eps = _cond_entropy(p_eps, p_z)
    lhs = mi + h_cond - h_eps
    return {
        "mi": mi,
        "h_y": h_y,
        "h_cond": h_cond,
        "h_eps": h_eps,
        "lhs": lhs,
        "holds_nonneg": bool(lhs >= -1e-12),
    }


def random_joint(rng, max_z: int = 6, max_y: int = 6) -> DiscreteJoint:
    nz = int(rng.integers(1, max_z + 1))
    ny = int(rng.integers(1, max_y + 1))
    t = rng.dirichlet(np.full(nz * ny, float(rng.choice([0.2, 1.0, 5.0])))).reshape(nz, ny)
    return DiscreteJoint(t / t.sum())


def critic_recovery_audit(trained: ScoringModel, true_cond, xi, epsilon: float) -> float:
    """Largest gap between the learned and the optimal smoothed conditional.

    Inputs are enumerated as one-hot rows. The learned critic is
    normalized per input; the optimum is proportional to
    ``((1 - eps) p(y|x) / xi(y) + eps) * xi(y)``.
    """
    true_cond = np.asarray(true_cond, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    n_x, n_y = true_cond.shape
    if trained.d != n_x or trained.k != n_y:
        raise ValueError("critic audit needs a one-hot input space matching the model")
    r_hat = np.exp(log_softmax(forward_logits(trained, np.eye(n_x)), axis=1))
    target = ((1.0 - epsilon) * true_cond / xi + epsilon) * xi
    target /= target.sum(axis=1, keepdims=True)
    return float(np.max(np.abs(r_hat - target)))
