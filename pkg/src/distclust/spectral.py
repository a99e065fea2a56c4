"""Distributed spectral clustering: disPCA projection then distributed Lloyd rounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Dataset, nearest
from .distsim import COORDINATOR, DEFAULT_BITS, Ledger, _root_of, alg1_bits_bound, run_algorithm1

POWER_TOL = 1e-8
POWER_MAX_ITER = 1000


def spectral_norm(M: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest singular value by power iteration on M^T M from the all-ones vector."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    v = np.ones(M.shape[1]) / math.sqrt(M.shape[1])
    est = 0.0
    for _ in range(max_iter):
        u = M.T @ (M @ v)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
        new = math.sqrt(nu)
        if abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
    return est


def check_spectral_stability(X: np.ndarray, labels, centers: Optional[np.ndarray] = None,
                             gamma: float = 1.0) -> tuple[bool, dict]:
    """Every point's projection on the line c_r--c_s must favor its own c_r by
    (gamma k/|C_r| + gamma k/|C_s|) * ||A - C||.

    ``centers`` defaults to the cluster means. The report carries the minimum
    slack (gap minus requirement) and the minimum gap/requirement ratio.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1
    if centers is None:
        centers = np.vstack([X[labels == j].mean(axis=0) for j in range(k)])
    centers = np.asarray(centers, dtype=np.float64)
    sizes = np.bincount(labels, minlength=k)
    norm = spectral_norm(X - centers[labels])
    report = {"norm_A_minus_C": norm, "min_slack": math.inf, "min_ratio": math.inf,
              "violations": 0}
    if k == 1:
        return True, report
    for r in range(k):
        pts = X[labels == r]
        for s in range(k):
            if s == r:
                continue
            u = centers[s] - centers[r]
            L = np.linalg.norm(u)
            if L == 0:
                raise ValueError(f"centers {r} and {s} coincide")
            lam = (pts - centers[r]) @ u / L
            gap = np.abs(L - lam) - np.abs(lam)
            req = gamma * k * (1.0 / sizes[r] + 1.0 / sizes[s]) * norm
            slack = gap - req
            report["min_slack"] = min(report["min_slack"], float(slack.min()))
            if req > 0:
                report["min_ratio"] = min(report["min_ratio"], float(gap.min() / req))
            report["violations"] += int((slack < 0).sum())
    return report["violations"] == 0, report


# disPCA ----------------------------------------------------------------------------------

@dataclass
class Projection:
    parts: list                  # projected machine datasets (ids preserved)
    basis: np.ndarray            # d x k orthonormal columns
    ledger: Ledger
    rank_deficient: bool = False


def distributed_ksvd_project(parts: Sequence[Dataset], k: int, ledger: Optional[Ledger] = None,
                             bits_per_coord: int = DEFAULT_BITS) -> Projection:
    """Machines send their top-k singular values times right singular vectors;
    machine 1 takes the top-k right subspace of the stack and broadcasts it;
    every machine projects its rows onto that subspace."""
    root = _root_of(parts)
    if root.coords is None:
        raise ValueError("spectral projection needs euclidean data")
    d = root.d
    if k > d:
        raise ValueError(f"k={k} exceeds d={d}")
    ledger = Ledger.for_dataset(root, bits_per_coord) if ledger is None else ledger
    rnd = ledger.next_round()
    sketches, deficient = [], False
    for i, part in enumerate(parts, start=1):
        block = np.zeros((k, d))
        if part.n:
            _, S, Vt = np.linalg.svd(part.coords, full_matrices=False)
            r = min(k, len(S))
            block[:r] = S[:r, None] * Vt[:r]
            deficient |= r < k or bool(np.any(S[:r] <= 1e-12 * max(S[0], 1e-300)))
        sketches.append(block)
        ledger.send(i, COORDINATOR, "vectors", k, rnd)
        ledger.send(i, COORDINATOR, "scalars", k, rnd)
    _, S, Vt = np.linalg.svd(np.vstack(sketches), full_matrices=True)
    basis = Vt[:k].T
    if np.count_nonzero(S[:k] > 1e-12 * max(S[0] if len(S) else 0.0, 1e-300)) < k:
        deficient = True
    for i in range(1, len(parts) + 1):
        ledger.send(COORDINATOR, i, "vectors", k, rnd + 1)
    proj_root = Dataset(coords=(root.coords @ basis) @ basis.T, ids=root.ids)
    proj_parts = [proj_root.subset_ids(p.ids) for p in parts]
    return Projection(proj_parts, basis, ledger, deficient)


# distributed Lloyd ----------------------------------------------------------------------------

def _local_stats(X: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = len(nu)
    if len(X) == 0:
        return np.zeros((k, nu.shape[1])), np.zeros(k, dtype=np.int64)
    d2 = ((X[:, None, :] - nu[None, :, :]) ** 2).sum(axis=2)
    lab, _ = nearest(d2)
    w = np.bincount(lab, minlength=k)
    sums = np.zeros_like(nu)
    np.add.at(sums, lab, X)
    mu = np.where(w[:, None] > 0, sums / np.maximum(w, 1)[:, None], 0.0)
    return mu, w


def distributed_lloyd_round(parts: Sequence, nu: np.ndarray, ledger: Optional[Ledger] = None,
                            rnd: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One round: broadcast nu, local means and counts up, weighted average at machine 1.

    Returns the new centers and a flag per center that was globally empty
    (and kept unchanged).
    """
    nu = np.asarray(nu, dtype=np.float64)
    k = len(nu)
    num = np.zeros_like(nu)
    den = np.zeros(k)
    for i, part in enumerate(parts, start=1):
        X = part.coords if isinstance(part, Dataset) else np.asarray(part)
        if ledger is not None:
            ledger.send(COORDINATOR, i, "centers", k, rnd)
        mu, w = _local_stats(X, nu)
        if ledger is not None:
            ledger.send(i, COORDINATOR, "centers", k, rnd + 1)
            ledger.send(i, COORDINATOR, "weights", k, rnd + 1)
        num += w[:, None] * mu
        den += w
    empty = den == 0
    out = nu.copy()
    out[~empty] = num[~empty] / den[~empty, None]
    return out, empty


def centralized_lloyd_step(X: np.ndarray, nu: np.ndarray) -> np.ndarray:
    mu, w = _local_stats(np.asarray(X, dtype=np.float64), np.asarray(nu, dtype=np.float64))
    out = np.asarray(nu, dtype=np.float64).copy()
    out[w > 0] = mu[w > 0]
    return out


def lloyd_step_equivalence(parts: Sequence, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(distributed round, centralized Lloyd step on the gathered rows) from the same nu."""
    dist, _ = distributed_lloyd_round(parts, nu)
    rows = [p.coords if isinstance(p, Dataset) else np.asarray(p) for p in parts]
    X = np.vstack([r for r in rows if len(r)])
    return dist, centralized_lloyd_step(X, nu)


def kmeans_cost(X: np.ndarray, nu: np.ndarray) -> float:
    d2 = ((X[:, None, :] - nu[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def lloyd_rounds(A_norm: float, eps: float) -> int:
    return max(1, math.ceil(math.log2(A_norm / eps))) if A_norm > eps else 1


@dataclass
class Alg4Result:
    centers: np.ndarray
    ledger: Ledger
    rounds: int
    history: list = field(default_factory=list)     # nu after each round, nu^0 first
    costs: list = field(default_factory=list)       # k-means cost on projected rows per nu
    projection: Optional[Projection] = None
    info: dict = field(default_factory=dict)


def run_algorithm4(parts: Sequence[Dataset], k: int, eps: float, seed: int = 0,
                   alg_a: str = "kmeanspp_lloyd", alg_b: str = "kmeanspp_lloyd",
                   bits_per_coord: int = DEFAULT_BITS) -> Alg4Result:
    """disPCA projection, k-means seeding by the summarize-then-cluster pipeline,
    then T = ceil(log2(||A|| / eps)) distributed Lloyd rounds on projected rows."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    root = _root_of(parts)
    ledger = Ledger.for_dataset(root, bits_per_coord)
    proj = distributed_ksvd_project(parts, k, ledger)
    init = run_algorithm1(proj.parts, k, 0, 2.0, alg_a, alg_b, seed=seed,
                          bits_per_coord=bits_per_coord)
    ledger.extend(init.ledger, ledger.next_round())
    nu = np.asarray(init.clustering.centers, dtype=np.float64)
    if nu.shape[0] < k:
        raise ValueError("initialization returned fewer than k centers")
    A_norm = spectral_norm(root.coords)
    T = lloyd_rounds(A_norm, eps)
    X = proj.parts[0].top.coords
    history, costs, empties = [nu], [kmeans_cost(X, nu)], 0
    for _ in range(T):
        nu, empty = distributed_lloyd_round(proj.parts, nu, ledger, ledger.next_round())
        empties += int(empty.sum())
        history.append(nu)
        costs.append(kmeans_cost(X, nu))
    svd_residual = float(np.linalg.norm(root.coords - X))
    return Alg4Result(nu, ledger, T, history, costs, proj,
                      {"A_norm": A_norm, "empty_cluster_events": empties,
                       "svd_residual": svd_residual, "rank_deficient": proj.rank_deficient})


def alg4_bits_bound(ledger: Ledger, m: int, k: int, eps: float, gamma_b: float = 1.0,
                    c: float = 4.0) -> float:
    """c m k (point + index bits) ceil(log2(k/eps)) plus the projection and seeding terms."""
    P, I, B = ledger.point_bits, ledger.index_bits, ledger.bits_per_coord
    lloyd = c * m * k * (P + I) * max(1, math.ceil(math.log2(k / eps)))
    svd = c * m * k * (P + B)
    return lloyd + svd + alg1_bits_bound(ledger, m, k, 0, gamma_b)


def center_error(nu: np.ndarray, centers: np.ndarray) -> float:
    """max_j ||nu_j - c_j|| under the best matching of estimates to true centers."""
    D = np.linalg.norm(nu[:, None, :] - centers[None, :, :], axis=2)
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max())
