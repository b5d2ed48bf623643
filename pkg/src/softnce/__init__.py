"""Conditional density estimation with noise-contrastive losses.

Soft-target InfoNCE and its relatives, a synthetic Gaussian-mixture
benchmark, finite-difference gradient checks and exact information audits.
"""

__version__ = "0.1.0"

from .distributions import (
    Dataset,
    GmmSpec,
    cc_posterior,
    cc_sample,
    label_smooth,
    make_modes,
    mixup_targets,
    sample_gmm_dataset,
    sample_soft_distribution_label,
)
from .evaluation import calibration, kl_estimation_error, mi_bound_audit, topk_accuracy
from .gradients import finite_difference_check, grad_wrt_embeddings
from .losses import (
    NoiseModel,
    compute_loss,
    energy_ce_form,
    infonce_loss,
    nll_loss,
    predict,
    soft_target_ce_loss,
    soft_target_infonce_loss,
)
from .models import ScoringModel, TrainConfig, init_model, train
from .numerics import log_sum_exp, make_rng, softmax
