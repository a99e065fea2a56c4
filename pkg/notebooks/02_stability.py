# %% [markdown]
# # Recovering a stable clustering with threshold graphs
#
# A certified instance has k tight cores and a few planted bad points. Each
# machine runs the greedy on its threshold graph at 2t, machine 1 runs it
# again at 6t on the weighted local centers.

# %%
import numpy as np

from distclust.core import closeness_error
from distclust.distsim import PartitionSpec, partition
from distclust.stability import (ESTIMATE, StabilityParams, large_cluster_refine, run_algorithm3,
                                 run_kcenter_2as)
from distclust.synth import GenSpec, generate

inst = generate(GenSpec("as_certified", n=1500, d=2, k=4, seed=5, bad_budget=8))
cert = inst.certification
print({key: cert[key] for key in ("t", "bad_count", "max_good_intra", "min_good_inter")})

# %%
parts = partition(inst.dataset, PartitionSpec("random", 4, seed=5))
res = run_algorithm3(parts, 4, StabilityParams(alpha=1.0, eps=0.005, w_avg=cert["w_avg"]))
err = closeness_error(res.clustering, inst.truth)
print(f"error {err:.4f}, allowed {13 * cert['bad_count'] / inst.dataset.n:.4f}, bits {res.ledger.total_bits}")

# %%
refined, ledger = large_cluster_refine(parts, res)
print(f"after refinement: error {closeness_error(refined, inst.truth):.4f}, bits {ledger.total_bits}")

# %% [markdown]
# k-center under (2,0)-stability: thresholding at twice the optimal radius
# recovers the optimum exactly, and the radius can be searched for.

# %%
kc = generate(GenSpec("kcenter_2as", n=200, d=2, k=5, seed=2))
out = run_kcenter_2as(partition(kc.dataset, PartitionSpec("random", 4, seed=2)), 5, ESTIMATE)
print(out.r_star, kc.certification["r_star"], out.probes,
      closeness_error(out.clustering, kc.truth), np.bincount(out.clustering.labels))
