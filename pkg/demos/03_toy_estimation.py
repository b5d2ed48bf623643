"""A scaled-down version of the Gaussian-mixture estimation experiment.

NLL and InfoNCE fit the same linear conditional model; the KL between
the true and fitted conditionals is reported per alignment level. The
full protocol is ``python3 -m softnce estimate``; this runs in about a
minute.
"""
# %%
import numpy as np

from softnce import GmmSpec, TrainConfig, init_model, kl_estimation_error, make_modes, make_rng, sample_gmm_dataset, train
from softnce.numerics import child_seeds

for alignment in (0, 40, 80):
    spec = GmmSpec(n_modes=10, dim=10, alignment_percent=alignment)
    theta = make_modes(spec)
    ds_seed, init_seed = child_seeds(alignment, 2)
    ds = sample_gmm_dataset(spec, 400, 4000, theta, make_rng(ds_seed))
    init = init_model(spec.n_modes, spec.dim, make_rng(init_seed))
    kl = {}
    for loss_id in ("nll", "infonce"):
        cfg = TrainConfig(loss_id=loss_id, batch_size=256, learning_rate=0.01, max_epochs=100, patience=10)
        res = train(ds, cfg, init)
        kl[loss_id] = kl_estimation_error(theta, res.final_model, ds.unique_inputs)
    print(f"alignment {alignment:2d}%  KL nll {kl['nll']:.4f}  KL infonce {kl['infonce']:.4f}")
