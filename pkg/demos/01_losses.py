"""Five losses on one small batch.

Run with ``python3 demos/01_losses.py``. Shows that the soft-target
losses collapse to their hard counterparts on one-hot targets and that
the energy cross-entropy form gives the same number as the direct one.
"""
# %%
import numpy as np

from softnce import (
    NoiseModel,
    energy_ce_form,
    infonce_loss,
    label_smooth,
    make_rng,
    nll_loss,
    soft_target_ce_loss,
    soft_target_infonce_loss,
)

rng = make_rng(0)
n, k = 6, 4
logits = rng.normal(scale=2.0, size=(n, k))
labels = rng.integers(0, k, size=n)
# add-one smoothed label frequencies as the noise distribution
noise = NoiseModel.from_probs((np.bincount(labels, minlength=k) + 1) / (n + k))
print("labels:", labels)
print("noise eta:", np.round(noise.probs, 3))

# %% hard losses
print(f"NLL      {nll_loss(logits, labels).value:.6f}")
print(f"InfoNCE  {infonce_loss(logits, labels, noise).value:.6f}")

# %% soft targets with label smoothing
for eps in (0.0, 0.1, 0.3):
    t = label_smooth(labels, k, eps)
    ce = soft_target_ce_loss(logits, t).value
    st = soft_target_infonce_loss(logits, t, noise).value
    print(f"eps={eps:.1f}  soft CE {ce:.6f}  soft-target InfoNCE {st:.6f}")

# %% one-hot targets reproduce the hard losses, and the energy form agrees
t = label_smooth(labels, k, 0.0)
print("reduction gap:", abs(soft_target_infonce_loss(logits, t, noise).value - infonce_loss(logits, labels, noise).value))
t = label_smooth(labels, k, 0.2)
print("energy-form gap:", abs(soft_target_infonce_loss(logits, t, noise).value - energy_ce_form(logits, t, noise).value))
