"""Soft targets, the continuous categorical distribution and the GMM benchmark."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import RandomSource, sample_categorical, softmax

SIMPLEX_TOL = 1e-9
CC_MAX_K = 16


def check_distribution(p, name: str = "distribution", tol: float = SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} is not a probability distribution")
    return p


def check_soft_targets(t, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate a matrix whose rows are soft targets."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("soft targets must be a 2-D array")
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise ValueError("soft targets must be finite and non-negative")
    if np.any(np.abs(t.sum(axis=1) - 1.0) > tol):
        raise ValueError("soft target rows must sum to 1")
    return t


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def uniform(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


# --------------------------------------------------------------------------
# soft target constructors


def label_smooth(k, n_classes: int, epsilon: float, xi=None) -> np.ndarray:
    """(1 - epsilon) * onehot(k) + epsilon * xi.

    ``k`` may be a single index or an array of indices; in the latter case
    one smoothed row is returned per index. ``xi`` defaults to uniform.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    xi = uniform(n_classes) if xi is None else check_distribution(xi, "xi")
    if xi.size != n_classes:
        raise ValueError("xi must have one entry per class")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr >= n_classes):
        raise ValueError("class index out of range")
    hot = one_hot(np.atleast_1d(k_arr), n_classes)
    out = (1.0 - epsilon) * hot + epsilon * xi
    return out[0] if k_arr.ndim == 0 else out


def mixup_targets(t1, t2, lam: float) -> np.ndarray:
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if t1.shape != t2.shape:
        raise ValueError("soft targets must have equal lengths")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("mixing coefficient must lie in [0, 1]")
    return lam * t1 + (1.0 - lam) * t2


# --------------------------------------------------------------------------
# GMM benchmark


@dataclass(frozen=True)
class GmmSpec:
    n_modes: int = 20
    dim: int = 20
    alignment_percent: float = 0.0
    mean_scale: float = 10.0
    mixture_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_modes < 2:
            raise ValueError("need at least two modes")
        if self.n_modes > self.dim:
            raise ValueError("n_modes must not exceed dim")
        if not 0.0 <= self.alignment_percent < 100.0:
            raise ValueError("alignment_percent must lie in [0, 100)")
        if self.mixture_weights is not None:
            w = check_distribution(self.mixture_weights, "mixture_weights")
            if w.size != self.n_modes:
                raise ValueError("one mixture weight per mode required")

    @property
    def weights(self) -> np.ndarray:
        if self.mixture_weights is None:
            return uniform(self.n_modes)
        return np.asarray(self.mixture_weights, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> GmmSpec:
        d = dict(d)
        if d.get("mixture_weights") is not None:
            d["mixture_weights"] = tuple(d["mixture_weights"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> GmmSpec:
        return cls.from_dict(json.loads(text))


@dataclass
class Dataset:
    """Inputs with hard labels and/or soft targets.

    ``unique_inputs`` and ``source_index`` are filled in by the GMM sampler
    so that evaluation can run over the distinct points only.
    """

    inputs: np.ndarray
    hard_labels: np.ndarray | None = None
    soft_targets: np.ndarray | None = None
    unique_inputs: np.ndarray | None = field(default=None, repr=False)
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        n = self.inputs.shape[0]
        if self.hard_labels is None and self.soft_targets is None:
            raise ValueError("dataset needs hard labels or soft targets")
        if self.hard_labels is not None:
            self.hard_labels = np.asarray(self.hard_labels, dtype=np.intp)
            if self.hard_labels.shape != (n,):
                raise ValueError("one hard label per input row required")
        if self.soft_targets is not None:
            self.soft_targets = check_soft_targets(self.soft_targets)
            if self.soft_targets.shape[0] != n:
                raise ValueError("one soft target row per input row required")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> Dataset:
        return Dataset(
            inputs=self.inputs[idx],
            hard_labels=None if self.hard_labels is None else self.hard_labels[idx],
            soft_targets=None if self.soft_targets is None else self.soft_targets[idx],
        )

    def to_csv(self, path) -> None:
        """Write ``x_0..x_{d-1}, label`` rows (argmax label for soft targets)."""
        labels = self.hard_labels
        if labels is None:
            labels = np.argmax(self.soft_targets, axis=1)
        d = self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i}" for i in range(d)] + ["label"])
            for x, y in zip(self.inputs, labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])


def alignment_angle(alignment_percent: float) -> float:
    """Angle between the fixed mode and every other mode, in radians.

    0% gives orthogonal modes (pi/2); the angle shrinks linearly to 0 as
    the percentage approaches 100.
    """
    if not 0.0 <= alignment_percent < 100.0:
        raise ValueError("alignment_percent must lie in [0, 100)")
    scale = 100.0 / (100.0 - alignment_percent)
    return math.pi / (2.0 * scale)


def make_modes(spec: GmmSpec) -> np.ndarray:
    """Unit mode directions, one per row.

    The first mode is e_1; mode i >= 2 is cos(phi) e_1 + sin(phi) e_i.
    """
    phi = alignment_angle(spec.alignment_percent)
    theta = np.zeros((spec.n_modes, spec.dim))
    theta[0, 0] = 1.0
    c, s = math.cos(phi), math.sin(phi)
    if spec.alignment_percent == 0.0:
        c, s = 0.0, 1.0
    for i in range(1, spec.n_modes):
        theta[i, 0] = c
        theta[i, i] = s
    return theta


def conditional_probs(x, theta) -> np.ndarray:
    """p(k | x) = softmax_k(x . theta_k) for every row of ``x``."""
    return softmax(np.atleast_2d(x) @ np.asarray(theta).T, axis=1)


def sample_gmm_dataset(
    spec: GmmSpec,
    n_unique: int,
    n_total: int,
    theta: np.ndarray,
    rng: RandomSource,
    label_theta: str = "unit",
) -> Dataset:
    """Sample unique points from the mixture, resample them, then label.

    ``label_theta="unit"`` labels with softmax(x . theta_k); ``"scaled"``
    uses the mean-scaled directions instead.
    """
    if n_unique < spec.n_modes or n_total < n_unique:
        raise ValueError("need n_total >= n_unique >= n_modes")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_modes, spec.dim):
        raise ValueError("theta shape does not match n_modes x dim")
    if label_theta not in ("unit", "scaled"):
        raise ValueError("label_theta must be 'unit' or 'scaled'")

    comp = sample_categorical(rng, np.tile(spec.weights, (n_unique, 1)))
    unique = spec.mean_scale * theta[comp] + rng.standard_normal((n_unique, spec.dim))
    source = rng.integers(0, n_unique, size=n_total)
    inputs = unique[source]

    label_dirs = theta if label_theta == "unit" else spec.mean_scale * theta
    labels = sample_categorical(rng, conditional_probs(inputs, label_dirs))
    return Dataset(inputs=inputs, hard_labels=labels, unique_inputs=unique, source_index=source)


# --------------------------------------------------------------------------
# continuous categorical distribution


def _check_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or lam.size < 2:
        raise ValueError("CC parameters need K >= 2 entries")
    if np.any(~(lam > 0)):
        raise ValueError("CC parameters must be strictly positive")
    return lam


def cc_log_density_unnorm(alpha, lam) -> float:
    """sum_i alpha_i log(lambda_i), the unnormalized CC log density."""
    lam = _check_lambda(lam)
    alpha = np.asarray(alpha, dtype=np.float64)
    return float(alpha @ np.log(lam))


def cc_sample(lam, rng: RandomSource, size: int | None = None) -> np.ndarray:
    """Rejection sampler for CC(lambda).

    Proposals are uniform on the simplex; a proposal is accepted with
    probability prod(lambda^alpha) / max(lambda), which is at most one
    because the log density is linear in alpha and peaks at a vertex.
    """
    lam = _check_lambda(lam)
    k = lam.size
    if k > CC_MAX_K:
        raise ValueError("CC sampling supported for small K only")
    n = 1 if size is None else int(size)
    log_lam = np.log(lam)
    log_max = log_lam.max()
    out = np.empty((n, k))
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), 64)
        prop = rng.dirichlet(np.ones(k), size=batch)
        log_acc = prop @ log_lam - log_max
        keep = prop[np.log(rng.random(batch)) < log_acc]
        take = min(n - filled, keep.shape[0])
        out[filled:filled + take] = keep[:take]
        filled += take
    return out[0] if size is None else out


def cc_posterior(tuple_alphas, p_cond, eta) -> np.ndarray:
    """Posterior over which tuple position holds the sample from CC(p_cond).

    Every other position is assumed to come from CC(eta). The CC
    normalizers cancel, leaving prod_i (p_i / eta_i)^alpha_ki per position.
    """
    alphas = np.atleast_2d(np.asarray(tuple_alphas, dtype=np.float64))
    p_cond = np.asarray(p_cond, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if np.any(eta <= 0):
        raise ValueError("eta must be strictly positive")
    if np.any(p_cond <= 0):
        raise ValueError("p_cond must be strictly positive")
    log_ratio = np.log(p_cond) - np.log(eta)
    return softmax(alphas @ log_ratio)


def sample_soft_distribution_label(k_true, epsilon: float, xi, rng: RandomSource):
    """Draw from (1 - eps) * onehot(k_true) + eps * xi.

    Vectorized over ``k_true``; returns an int for scalar input.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    xi = check_distribution(xi, "xi")
    k = np.atleast_1d(np.asarray(k_true, dtype=np.intp))
    noisy = rng.random(k.size) < epsilon
    draws = sample_categorical(rng, np.tile(xi, (k.size, 1)))
    out = np.where(noisy, draws, k)
    return int(out[0]) if np.ndim(k_true) == 0 else out


def empirical_marginal(labels, n_classes: int) -> np.ndarray:
    """Class frequencies; add-one smoothing only when a class is absent."""
    counts = np.bincount(np.asarray(labels, dtype=np.intp), minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        counts += 1.0
    return counts / counts.sum()


def soft_marginal(targets) -> np.ndarray:
    return check_soft_targets(targets).mean(axis=0)

