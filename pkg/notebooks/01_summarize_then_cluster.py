# %% [markdown]
# # Summarize locally, cluster at the coordinator
#
# Each machine sends a weighted set of k+z local centers to machine 1, which
# clusters the union. We compare against the brute-force optimum and read
# the message ledger.

# %%
import math

from distclust.core import lp_cost
from distclust.distsim import PartitionSpec, alg1_bits_bound, partition, ratio_bound, run_algorithm1
from distclust.oracle import brute_force_opt
from distclust.synth import GenSpec, generate

inst = generate(GenSpec("outlier_injected", n=14, d=2, k=3, z=2, seed=0))
ds = inst.dataset
parts = partition(ds, PartitionSpec("random", 3, seed=1))
[p.n for p in parts]

# %%
for p in (1.0, 2.0, math.inf):
    res = run_algorithm1(parts, 3, 2, p, "oracle", "oracle")
    opt = brute_force_opt(ds, 3, 2, p).cost
    print(f"p={p}: cost/OPT = {lp_cost(ds, res.clustering) / opt:.3f} (bound {ratio_bound(1, 1, p):.2f}), "
          f"bits {res.ledger.total_bits} <= {alg1_bits_bound(res.ledger, 3, 3, 2, 1.0):.0f}")

# %% [markdown]
# Heuristic subroutines on a larger instance: local search at the coordinator,
# oversampled greedy on the machines.

# %%
big = generate(GenSpec("separated_clusters", n=400, d=2, k=4, seed=3, jitter=0.3)).dataset
res = run_algorithm1(partition(big, PartitionSpec("random", 5, seed=3)), 4, 0, 1.0,
                     "local_search", "oversampled", seed=7)
print(res.clustering.k, lp_cost(big, res.clustering), res.ledger.total_bits)
print(res.ledger.to_jsonl().splitlines()[0])
