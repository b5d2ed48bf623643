"""Embedding-level gradients for the loss family and a finite-difference harness.

Scores are either plain dot products ``z . y`` or cosine similarities
``z . y / (|z| |y|)``. Gradients flow from the logits back to the data
embeddings ``Z`` and label embeddings ``Y``; under cosine scoring each
embedding gradient is the normalized-space gradient projected onto the
tangent space, ``(I - u u^T) / |v| * grad_u`` with ``u = v / |v|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import label_smooth, sample_soft_distribution_label
from .losses import (
    LOSS_IDS,
    NoiseModel,
    compute_loss,
    soft_target_tuple_loss,
)
from .numerics import RandomSource, as_real, softmax

SCORINGS = ("dot", "cosine")


@dataclass
class GradReport:
    max_rel_error: float
    max_abs_error: float
    n_probes: int
    passed: bool = True
    worst: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "n_probes": self.n_probes,
            "passed": self.passed,
            "worst": self.worst,
        }


def _unit_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine scoring undefined at origin")
    return v / norms, norms


def embedding_logits(z, y, scoring: str = "dot") -> np.ndarray:
    """Raw scores of every data embedding against every label embedding."""
    z, y = as_real(z), as_real(y)
    if z.shape[-1] != y.shape[-1]:
        raise ValueError("embedding dimensions disagree")
    if scoring == "dot":
        return z @ y.T
    if scoring == "cosine":
        return _unit_rows(z)[0] @ _unit_rows(y)[0].T
    raise ValueError(f"unknown scoring {scoring!r}")


def _tangent(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    radial = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def backprop_logits(grad_logits, z, y, scoring: str = "dot") -> tuple[np.ndarray, np.ndarray]:
    """Chain rule from d loss / d logits to (d loss / d z, d loss / d y)."""
    g = np.asarray(grad_logits, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = z.ndim == 1
    z2, g2 = np.atleast_2d(z), np.atleast_2d(g)
    if scoring == "dot":
        gz, gy = g2 @ y, g2.T @ z2
    elif scoring == "cosine":
        zu, zn = _unit_rows(z2)
        yu, yn = _unit_rows(y)
        gz = _tangent(g2 @ yu, zu, zn)
        gy = _tangent(g2.T @ zu, yu, yn)
    else:
        raise ValueError(f"unknown scoring {scoring!r}")
    return (gz[0] if single else gz), gy


def grad_wrt_embeddings(
    z,
    y,
    targets,
    scoring: str = "dot",
    noise: NoiseModel | None = None,
    loss_id: str = "st_infonce",
    labels=None,
):
    """Loss value and gradients w.r.t. the data and label embeddings.

    A 1-D ``z`` is a single data embedding scored against one tuple of
    soft targets: ``targets[0]`` is the positive, the remaining rows are
    negatives. A 2-D ``z`` is a batch scored with ``loss_id`` using
    in-batch negatives; ``labels`` feeds the hard-label losses.

    Returns ``(value, grad_z, grad_y)``.
    """
    z, y = as_real(z), as_real(y)
    noise = noise if noise is not None else NoiseModel.uniform(y.shape[0])
    logits = embedding_logits(z, y, scoring)
    if z.ndim == 1:
        targets = np.asarray(targets, dtype=np.float64)
        value, g = soft_target_tuple_loss(logits, targets[0], targets[1:], noise)
    else:
        out = compute_loss(loss_id, logits, labels=labels, targets=targets, noise=noise)
        value, g = out.value, out.grad_logits
    gz, gy = backprop_logits(g, z, y, scoring)
    return value, gz, gy


def grad_magnitude_hard_target(z, y, targets, j: int, noise: NoiseModel | None = None, scoring: str = "dot") -> float:
    """Scalar response of a single tuple's loss to label embedding ``y_j``.

    Evaluates ``a_kj * | -1 + sum_l a_lj C_l / a_kj |`` where row 0 of
    ``targets`` is the positive ``a_k`` and ``C_l`` are the softmax weights
    of the aggregate scores. The prefactor makes the value 0 whenever the
    positive puts no mass on class ``j``.
    """
    targets = np.asarray(targets, dtype=np.float64)
    noise = noise if noise is not None else NoiseModel.uniform(targets.shape[1])
    s = noise.scores(embedding_logits(z, y, scoring))
    c = softmax(targets @ s)
    a_kj = targets[0, j]
    if a_kj == 0:
        return 0.0
    return float(a_kj * abs(-1.0 + (c @ targets[:, j]) / a_kj))


def attraction_repulsion_report(z_scores, alpha_pos, alpha_negs, noise: NoiseModel) -> dict:
    """Numerically compare the tuple loss against its two-summand rewrite.

    ``attraction`` is the class-wise log-ratio term with shifted weights
    ``alpha_lj - alpha_ki``; ``repulsion`` is the weighted penalty over the
    remaining classes. The rewrite is not an exact identity in general, so
    the residual ``full - (attraction + repulsion)`` is reported, not
    asserted.
    """
    s = noise.scores(np.asarray(z_scores, dtype=np.float64))
    a_k = np.asarray(alpha_pos, dtype=np.float64)
    negs = np.asarray(alpha_negs, dtype=np.float64).reshape(-1, s.size)
    full, _ = soft_target_tuple_loss(z_scores, a_k, negs, noise)

    k = s.size
    attraction = 0.0
    for i in range(k):
        others = np.arange(k) != i
        terms = [a_k[i] * s[i]]
        for a_l in negs:
            shifted = a_l[others] - a_k[i]
            terms.append(a_l[i] * s[i] + shifted @ s[others])
        log_den = np.logaddexp.reduce(terms)
        attraction -= a_k[i] * (s[i] - log_den)

    repulsion = 0.0
    for i in range(k):
        for l in range(k):
            if l != i:
                repulsion += a_k[i] * a_k[l] * s[l]
    return {
        "full": float(full),
        "attraction": float(attraction),
        "repulsion": float(repulsion),
        "residual": float(full - attraction - repulsion),
    }


# --------------------------------------------------------------------------
# finite differences


def central_difference(f, x, step: float = 1e-3, levels: int = 2, dtype=np.float64) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences.

    Differences at steps ``h, 2h, ..., 2^levels h`` are combined by
    Richardson extrapolation, cancelling the even truncation terms up to
    order ``2 * levels``. ``levels=0`` is the plain central difference.
    With ``dtype=np.longdouble`` the probes are evaluated in extended
    precision, which lowers the roundoff floor by about three digits.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    x = np.array(x, dtype=dtype)
    grad = np.zeros(x.shape, dtype=dtype)
    flat, gflat = x.reshape(-1), grad.reshape(-1)

    def probe(i, h):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite loss at probe point")
        return (fp - fm) / (2.0 * h)

    for i in range(flat.size):
        table = [probe(i, step * 2**j) for j in range(levels + 1)]
        for lvl in range(1, levels + 1):
            c = 4.0**lvl
            table = [(c * table[j] - table[j + 1]) / (c - 1.0) for j in range(len(table) - 1)]
        gflat[i] = table[0]
    return grad.astype(np.float64)


def compare_gradients(analytic, numeric, floor: float = 1e-8) -> tuple[float, float, int]:
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    abs_err = np.abs(a - b)
    rel = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    return float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0)), worst


@dataclass
class GradInstance:
    """A loss evaluated on embeddings: everything needed to probe it."""

    loss_id: str
    z: np.ndarray
    y: np.ndarray
    noise: NoiseModel
    scoring: str = "dot"
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None

    def value(self, z=None, y=None) -> float:
        z = self.z if z is None else z
        y = self.y if y is None else y
        return grad_wrt_embeddings(z, y, self.targets, self.scoring, self.noise, self.loss_id, self.labels)[0]

    def gradients(self) -> tuple[np.ndarray, np.ndarray]:
        _, gz, gy = grad_wrt_embeddings(
            self.z, self.y, self.targets, self.scoring, self.noise, self.loss_id, self.labels
        )
        return gz, gy


def random_instance(
    loss_id: str,
    rng: RandomSource,
    n: int = 4,
    k: int = 5,
    d: int = 6,
    scoring: str = "dot",
    epsilon: float = 0.1,
    temperature: float = 1.0,
) -> GradInstance:
    """Random embeddings, labels, smoothed targets and a random noise model."""
    if loss_id not in LOSS_IDS and loss_id != "energy_ce":
        raise ValueError(f"unknown loss id {loss_id!r}")
    z = rng.standard_normal((n, d))
    y = rng.standard_normal((k, d))
    labels = rng.integers(0, k, size=n)
    eta = rng.dirichlet(np.full(k, 2.0))
    noise = NoiseModel.from_probs(eta, temperature)
    mix = rng.dirichlet(np.ones(k), size=n)
    targets = label_smooth(labels, k, epsilon) * 0.5 + 0.5 * mix
    if loss_id == "sd_infonce":
        labels = sample_soft_distribution_label(labels, epsilon, eta, rng)
    return GradInstance(loss_id, z, y, noise, scoring, labels, targets)


def finite_difference_check(
    loss_id: str,
    instance: GradInstance,
    step: float = 1e-3,
    tolerance: float = 1e-5,
    grad_hook=None,
) -> GradReport:
    """Compare analytic embedding gradients with central differences.

    Every coordinate of ``z`` and ``y`` is probed, in extended precision. ``grad_hook`` may
    transform the analytic gradients before comparison (used to inject
    faults when testing the harness itself).
    """
    if instance.loss_id != loss_id:
        instance = GradInstance(
            loss_id, instance.z, instance.y, instance.noise, instance.scoring, instance.labels, instance.targets
        )
    base = instance.value()
    if not np.isfinite(base):
        raise FloatingPointError("non-finite loss at probe point")
    gz, gy = instance.gradients()
    if grad_hook is not None:
        gz, gy = grad_hook(gz, gy)
    fd_z = central_difference(lambda v: instance.value(z=v), instance.z, step, dtype=np.longdouble)
    fd_y = central_difference(lambda v: instance.value(y=v), instance.y, step, dtype=np.longdouble)
    rel_z, abs_z, wz = compare_gradients(gz, fd_z)
    rel_y, abs_y, wy = compare_gradients(gy, fd_y)
    if rel_z >= rel_y:
        worst = {"param": "z", "index": wz, "analytic": float(np.ravel(gz)[wz]), "numeric": float(np.ravel(fd_z)[wz])}
    else:
        worst = {"param": "y", "index": wy, "analytic": float(np.ravel(gy)[wy]), "numeric": float(np.ravel(fd_y)[wy])}
    max_rel = max(rel_z, rel_y)
    return GradReport(
        max_rel_error=max_rel,
        max_abs_error=max(abs_z, abs_y),
        n_probes=instance.z.size + instance.y.size,
        passed=bool(max_rel < tolerance),
        worst=worst,
    )
