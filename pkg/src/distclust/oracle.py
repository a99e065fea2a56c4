"""Exact optima by exhaustive enumeration, for certifying tiny instances."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .core import (Clustering, Dataset, WeightedPointSet, clustering_from_distances,
                   cross_distances, root_cost)

MAX_CANDIDATES = 18
REL_TOL = 1e-9
_CHUNK = 4096


class OracleSizeError(ValueError):
    """The instance is too large for exhaustive enumeration."""


@dataclass
class OracleResult:
    clustering: Clustering
    cost: float
    power_cost: float
    centers_from_data: bool = True


def _subset_costs(dmin: np.ndarray, w: np.ndarray, z: int, p: float) -> np.ndarray:
    """Objective per column of ``dmin`` (n x S) after dropping z weight units."""
    if z > 0:
        order = np.argsort(-dmin, axis=0, kind="stable")
        ds_ = np.take_along_axis(dmin, order, axis=0)
        ws = w[order]
        before = np.cumsum(ws, axis=0) - ws
        kept = ws - np.clip(z - before, 0, ws)
    else:
        ds_, kept = dmin, np.broadcast_to(w[:, None], dmin.shape)
    if math.isinf(p):
        return np.where(kept > 0, ds_, 0.0).max(axis=0, initial=0.0)
    return np.sum(kept * ds_ ** p, axis=0)


def brute_force_opt(ds: Dataset, k: int, z: int = 0, p: float = 1.0,
                    centers_from: Optional[Dataset] = None, weights=None,
                    max_candidates: int = MAX_CANDIDATES) -> OracleResult:
    """Optimal (k, z, p) clustering with centers drawn from ``centers_from``.

    Every k-subset of the candidate centers is tried; points go to their
    nearest chosen center and the ``z`` most expensive weight units are
    dropped. The lexicographically first optimal subset wins.
    """
    cand = ds if centers_from is None else centers_from
    if cand.n > max_candidates:
        raise OracleSizeError(f"{cand.n} candidate centers exceed the oracle limit {max_candidates}")
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.ones(ds.n, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    D = cross_distances(ds, cand)
    kk = min(k, cand.n)
    best_cost, best_sub = math.inf, None
    gen = combinations(range(cand.n), kk)
    while True:
        chunk = np.array([c for _, c in zip(range(_CHUNK), gen)], dtype=np.int64)
        if len(chunk) == 0:
            break
        dmin = D[:, chunk].min(axis=2)
        costs = _subset_costs(dmin, w, z, p)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_sub = float(costs[i]), chunk[i]
    centers = cand.coords[best_sub] if cand.coords is not None else None
    c = clustering_from_distances(D[:, best_sub], w, z, p, centers=centers,
                                  center_ids=cand.ids[best_sub], algorithm="oracle")
    return OracleResult(clustering=c, cost=root_cost(best_cost, p), power_cost=best_cost)


def oracle_weighted(wps: WeightedPointSet, k: int, z: int = 0, p: float = 1.0) -> OracleResult:
    return brute_force_opt(wps.ds, k, z, p, weights=wps.weights)


def check_local_opt_lemma(ds: Dataset, partition: Sequence[Dataset], k: int, z: int,
                          p: float, tol: float = REL_TOL) -> tuple[float, float, bool]:
    """Compare summed local (k+z)-optima against 2^p times the global optimum.

    For finite p both sides are un-rooted power sums; for p = inf the sum
    becomes a max and the factor is 2.
    """
    local = [brute_force_opt(part, k + z, 0, p).power_cost if part.n else 0.0
             for part in partition]
    glob = brute_force_opt(ds, k, z, p).power_cost
    if math.isinf(p):
        lhs, rhs = max(local, default=0.0), 2.0 * glob
    else:
        lhs, rhs = float(sum(local)), 2.0 ** p * glob
    return lhs, rhs, lhs <= rhs * (1 + tol) + tol
