"""Exact checks: calibration, the mutual-information bound and the CC posterior."""
# %%
import numpy as np

from softnce import calibration, cc_posterior, cc_sample, make_rng, mi_bound_audit
from softnce.evaluation import DiscreteJoint, random_joint

# one bin at confidence 0.8 with 60% accuracy
rep = calibration(np.tile([0.8, 0.2], (100, 1)), np.array([0] * 60 + [1] * 40))
print("ECE of the single-bin example:", rep.ece)

# %% the bound shrinks from I(Z;Y) at eps=0 to zero at eps=1
joint = random_joint(make_rng(2))
for eps in np.linspace(0, 1, 5):
    r = mi_bound_audit(joint, float(eps))
    print(f"eps={eps:.2f}  lhs {r['lhs']:.5f}  (I(Z;Y) = {r['mi']:.5f})")
print("independent joint:", mi_bound_audit(DiscreteJoint(np.outer([0.4, 0.6], [0.2, 0.8])), 0.5)["lhs"])

# %% which tuple position came from CC(p)?
rng = make_rng(3)
p, eta = np.array([0.7, 0.2, 0.1]), np.array([0.2, 0.3, 0.5])
tuple_ = np.vstack([cc_sample(eta, rng, 2), cc_sample(p, rng, 1)])
print("tuple:\n", np.round(tuple_, 3))
print("posterior over positions:", np.round(cc_posterior(tuple_, p, eta), 3))
