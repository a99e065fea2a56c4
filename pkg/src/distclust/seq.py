"""Weighted sequential clustering subroutines.

Every routine takes a :class:`WeightedPointSet` and treats an entry of weight
w exactly like w coincident unit points, so the distributed pipelines can feed
them machine summaries. Routines are addressable by name through
:data:`REGISTRY`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .core import (OUTLIER, AlgorithmProfile, Clustering, WeightedPointSet, center_distances,
                   clustering_for_centers, nearest, trim_outliers)
from .oracle import oracle_weighted

IMPROVEMENT_TOL = 1e-6


class InfeasibleCapacityError(ValueError):
    pass


class UnknownAlgorithmError(KeyError):
    pass


@dataclass
class SeqRequest:
    input: WeightedPointSet
    k: int
    z: int = 0
    p: float = 1.0
    L: Optional[float] = None
    center_budget: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.z < 0:
            raise ValueError("z must be >= 0")
        if not (self.p >= 1):
            raise ValueError("p must lie in [1, inf]")
        if self.L is not None and self.L * self.k < self.input.total - self.z:
            raise InfeasibleCapacityError(
                f"capacity infeasible: k*L = {self.k * self.L} < total weight - z = "
                f"{self.input.total - self.z}")


def _first_center(wps: WeightedPointSet) -> int:
    return int(np.argmin(wps.ds.ids))


def dp_seeding(dist_col: Callable[[int], np.ndarray], w: np.ndarray, k: int, p: float,
               rng: np.random.Generator, first: int = 0) -> list[int]:
    """D^p sampling of up to ``k`` entry positions, starting at ``first``.

    Draws go through the cumulative mass with one uniform number per
    center, so a weight-w entry and w adjacent unit copies of it are picked
    with the same draws. With p = inf this is farthest-first traversal.
    Stops early once every entry sits on a chosen center.
    """
    chosen = [first]
    mind = dist_col(first).copy()
    while len(chosen) < k:
        if math.isinf(p):
            j = int(np.argmax(mind))
            if mind[j] <= 0:
                break
        else:
            mass = np.cumsum(w * mind ** p)
            total = mass[-1]
            if total <= 0:
                break
            j = int(np.searchsorted(mass, rng.random() * total, side="right"))
            j = min(j, len(mass) - 1)
            if mind[j] <= 0:
                j = int(np.argmax(mind))
        chosen.append(j)
        np.minimum(mind, dist_col(j), out=mind)
    return chosen


def gonzalez_kcenter(wps: WeightedPointSet, k: int, p: float = math.inf) -> Clustering:
    """Farthest-point traversal from the lowest id; a 2-approximation for k-center."""
    D = wps.ds.pairwise()
    centers = dp_seeding(lambda j: D[:, j], wps.weights, k, math.inf, None, _first_center(wps))
    return clustering_for_centers(wps, centers, 0, p, algorithm="gonzalez")


def _greedy_disks(D: np.ndarray, w: np.ndarray, k: int, r: float) -> tuple[list[int], np.ndarray]:
    near = (D <= r).astype(np.float64)
    far = D <= 3 * r * (1 + 1e-12)
    uncovered = np.ones(len(w), dtype=bool)
    centers: list[int] = []
    for _ in range(k):
        if not uncovered.any():
            break
        mass = near @ (w * uncovered)
        j = int(np.argmax(mass))
        centers.append(j)
        uncovered &= ~far[j]
    return centers, uncovered


def charikar_kcenter_outliers(wps: WeightedPointSet, k: int, z: int = 0,
                              p: float = math.inf) -> Clustering:
    """Greedy disk cover with binary search over radii; 3-approx for k-center with z outliers.

    For a guessed radius r, k times pick the point whose r-ball holds the most
    uncovered weight and mark its 3r-ball covered; r is feasible when at most
    z weight stays uncovered. Every r >= OPT is feasible, so the smallest
    feasible radius found by bisection is at most OPT.
    """
    D = wps.ds.pairwise()
    w = wps.weights.astype(np.float64)
    radii = np.unique(D)
    lo, hi = -1, len(radii) - 1
    best = _greedy_disks(D, w, k, radii[hi])[0]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        centers, unc = _greedy_disks(D, w, k, radii[mid])
        if w[unc].sum() <= z:
            hi, best = mid, centers
        else:
            lo = mid
    c = clustering_for_centers(wps, best, z, p, algorithm="charikar")
    c.info["radius"] = float(radii[hi])
    return c


def _trimmed_costs(new: np.ndarray, w: np.ndarray, p: float, trim: int) -> np.ndarray:
    if trim <= 0:
        return (w[:, None] * new ** p).sum(axis=0)
    order = np.argsort(-new, axis=0, kind="stable")
    ds_ = np.take_along_axis(new, order, axis=0)
    ws = w[order]
    before = np.cumsum(ws, axis=0) - ws
    kept = ws - np.clip(trim - before, 0, ws)
    return (kept * ds_ ** p).sum(axis=0)


def local_search_kmedian(wps: WeightedPointSet, k: int, p: float = 1.0, seed: int = 0,
                         trim: int = 0, init=None, tol: float = IMPROVEMENT_TOL,
                         max_passes: int = 1000) -> Clustering:
    """Single-swap local search from a D^p-sampled start.

    Each pass applies the best (out, in) swap if it lowers the cost below
    (1 - tol) times the current cost. With ``trim`` > 0 the objective drops
    the ``trim`` most expensive weight units.
    """
    if math.isinf(p):
        raise ValueError("local search needs a finite exponent")
    D = wps.ds.pairwise()
    w = wps.weights
    n = wps.n
    if k >= n:
        return clustering_for_centers(wps, np.arange(n), trim, p, algorithm="local_search")
    if init is None:
        rng = np.random.default_rng(seed)
        centers = dp_seeding(lambda j: D[:, j], w, k, p, rng, _first_center(wps))
    else:
        centers = list(dict.fromkeys(int(c) for c in init))
    # top up when seeding stopped early on coincident points
    for j in range(n):
        if len(centers) >= k:
            break
        if j not in centers:
            centers.append(j)
    cost = float(_trimmed_costs(D[:, centers].min(axis=1)[:, None], w, p, trim)[0])
    history = [cost]
    for _ in range(max_passes):
        sub = D[:, centers]
        best = (cost, None, None)
        is_center = np.zeros(n, dtype=bool)
        is_center[centers] = True
        for oi in range(len(centers)):
            others = np.delete(sub, oi, axis=1)
            dwo = others.min(axis=1) if others.shape[1] else np.full(n, np.inf)
            costs = _trimmed_costs(np.minimum(D, dwo[:, None]), w, p, trim)
            costs[is_center] = np.inf
            ci = int(np.argmin(costs))
            if costs[ci] < best[0]:
                best = (float(costs[ci]), oi, ci)
        if best[1] is None or not best[0] < (1 - tol) * cost:
            break
        centers[best[1]] = best[2]
        cost = best[0]
        history.append(cost)
    c = clustering_for_centers(wps, centers, trim, p, algorithm="local_search")
    c.info["history"] = history
    return c


def _lloyd_once(X, w, k, iters, rng, first):
    col = lambda j: ((X - X[j]) ** 2).sum(axis=1) ** 0.5  # noqa: E731
    seeds = dp_seeding(col, w, k, 2.0, rng, first)
    C = X[seeds].copy()
    history = []
    labels = None
    for it in range(iters):
        dist = cdist(X, C)
        lab, dmin = nearest(dist)
        history.append(float((w * dmin ** 2).sum()))
        counts = np.bincount(lab, weights=w, minlength=len(C))
        empty = np.flatnonzero(counts == 0)
        if labels is not None and np.array_equal(lab, labels) and not len(empty):
            break
        labels = lab
        sums = np.zeros_like(C)
        np.add.at(sums, lab, w[:, None] * X)
        nz = counts > 0
        C[nz] = sums[nz] / counts[nz, None]
        for j in empty:
            # re-seed an empty cluster at the currently most expensive point
            dist = cdist(X, C)
            _, dmin = nearest(dist)
            C[j] = X[int(np.argmax(dmin))]
    dist = cdist(X, C)
    lab, dmin = nearest(dist)
    final = float((w * dmin ** 2).sum())
    if not history or history[-1] != final:
        history.append(final)
    return C, final, history


def kmeanspp_lloyd(wps: WeightedPointSet, k: int, iters: int = 100, seed: int = 0,
                   n_init: int = 1) -> Clustering:
    """Weighted D^2 seeding followed by weighted Lloyd iterations (k-means)."""
    ds = wps.ds
    if ds.coords is None:
        raise ValueError("Lloyd iterations need euclidean coordinates")
    rng = np.random.default_rng(seed)
    w = wps.weights.astype(np.float64)
    best = None
    for _ in range(n_init):
        C, cost, hist = _lloyd_once(ds.coords, w, min(k, ds.n), iters, rng, _first_center(wps))
        if best is None or cost < best[1]:
            best = (C, cost, hist)
    C, cost, hist = best
    lab, _ = nearest(cdist(ds.coords, C))
    return Clustering(labels=lab, centers=C, p=2.0, info={"algorithm": "kmeanspp_lloyd",
                                                         "history": hist})


def oversampled_greedy(wps: WeightedPointSet, k: int, gamma: float = 3.0, p: float = 1.0,
                       seed: int = 0) -> Clustering:
    """Open ceil(gamma*k) centers by D^p sampling and assign once (bicriteria)."""
    budget = int(math.ceil(gamma * k))
    if budget >= wps.n:
        return clustering_for_centers(wps, np.arange(wps.n), 0, p, algorithm="oversampled")
    D = wps.ds.pairwise()
    rng = np.random.default_rng(seed)
    centers = dp_seeding(lambda j: D[:, j], wps.weights, budget, p, rng, _first_center(wps))
    return clustering_for_centers(wps, centers, 0, p, algorithm="oversampled", gamma=gamma)


def kmedian_outliers_bicriteria(wps: WeightedPointSet, k: int, z: int, eps: float = 1.0,
                                seed: int = 0, rounds: int = 20) -> Clustering:
    """k-median discarding up to (1+eps)z weight, by alternating local search.

    Starts from a local search on the trimmed objective, then alternates
    between re-solving on the points kept and re-selecting the (1+eps)z most
    expensive units until the discarded set stops changing.
    """
    budget = int(math.floor((1 + eps) * z))
    w = wps.weights
    if budget >= wps.total:
        ids = wps.ds.ids[: min(k, wps.n)]
        c = Clustering(labels=np.full(wps.n, OUTLIER), center_ids=ids,
                       centers=wps.ds.coords[: len(ids)] if wps.ds.coords is not None else None,
                       p=1.0, z=budget, outlier_weight=w.copy(),
                       info={"algorithm": "kmedian_outliers", "rounds": 0})
        return c
    D = wps.ds.pairwise()
    centers = list(np.flatnonzero(np.isin(
        wps.ds.ids, local_search_kmedian(wps, k, 1.0, seed, trim=budget).center_ids)))
    prev = None
    r = 0
    for r in range(1, rounds + 1):
        outw = trim_outliers(D[:, centers].min(axis=1), w, budget)
        if prev is not None and np.array_equal(outw, prev):
            break
        prev = outw
        keep = np.flatnonzero(w - outw > 0)
        reduced = WeightedPointSet(wps.ds.subset(keep), (w - outw)[keep])
        pos = {int(j): i for i, j in enumerate(keep)}
        init = [pos[c] for c in centers if c in pos]
        sol = local_search_kmedian(reduced, k, 1.0, seed, init=init or None)
        centers = [int(keep[reduced.ds.position(i)]) for i in sol.center_ids]
    c = clustering_for_centers(wps, centers, budget, 1.0, algorithm="kmedian_outliers")
    c.info["rounds"] = r
    return c


# capacity layer ----------------------------------------------------------

@dataclass
class CapacitatedAssignment:
    flow: np.ndarray      # entries x centers, integer weight sent to each center
    outlier: np.ndarray   # weight of each entry sent to the overflow sink
    cost: float           # sum of flow * d^p (max distance used when p = inf)

    def labels(self) -> np.ndarray:
        """Per-entry label for unsplit entries (unit weights)."""
        lab = np.argmax(self.flow, axis=1)
        return np.where(self.flow.sum(axis=1) == 0, OUTLIER, lab)


def _transport(cost: np.ndarray, w: np.ndarray, cap: float, z: int, allowed=None):
    n, k = cost.shape
    c = np.hstack([cost, np.zeros((n, 1))]).ravel()
    rows = np.repeat(np.arange(n), k + 1)
    A_eq = sp.csr_matrix((np.ones(n * (k + 1)), (rows, np.arange(n * (k + 1)))), shape=(n, n * (k + 1)))
    cols = np.tile(np.arange(k + 1), n)
    A_ub = sp.csr_matrix((np.ones(n * (k + 1)), (cols, np.arange(n * (k + 1)))), shape=(k + 1, n * (k + 1)))
    b_ub = np.r_[np.full(k, cap), z]
    ub = np.full((n, k + 1), np.inf)
    if allowed is not None:
        ub[:, :k][~allowed] = 0.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=w.astype(np.float64),
                  bounds=np.c_[np.zeros(n * (k + 1)), ub.ravel()], method="highs-ds")
    if res.status != 0:
        return None
    x = res.x.reshape(n, k + 1)
    xi = np.rint(x).astype(np.int64)
    if np.abs(x - xi).max() > 1e-6:
        raise RuntimeError("transportation solve returned a fractional vertex")
    return xi


def capacitated_assign(wps: WeightedPointSet, centers: Clustering, L: Optional[float],
                       z: int = 0, p: float = 1.0) -> CapacitatedAssignment:
    """Min-cost assignment of weight to centers holding at most L weight each.

    A transportation problem: entries supply their weight, each center
    absorbs at most L, an overflow sink absorbs at most z (the outliers).
    Unit cost d^p; for p = inf the largest used distance is minimized first
    by bisection over candidate distances, then the sum is minimized among
    assignments achieving it.
    """
    D = center_distances(wps.ds, centers)
    k = D.shape[1]
    w = wps.weights
    total = int(w.sum())
    cap = float(total) if L is None or math.isinf(L) else float(L)
    if cap * k < total - z:
        raise InfeasibleCapacityError(
            f"capacity infeasible: k*L = {cap * k} < total weight - z = {total - z}")
    if math.isinf(p):
        radii = np.unique(D)
        lo, hi = -1, len(radii) - 1
        x = _transport(D, w, cap, z, D <= radii[hi])
        while hi - lo > 1:
            mid = (lo + hi) // 2
            trial = _transport(D, w, cap, z, D <= radii[mid])
            if trial is None:
                lo = mid
            else:
                hi, x = mid, trial
        x = _transport(D, w, cap, z, D <= radii[hi])
        used = x[:, :k] > 0
        value = float(D[used].max(initial=0.0))
    else:
        x = _transport(D ** p, w, cap, z)
        if x is None:
            raise InfeasibleCapacityError("transportation problem infeasible")
        value = float((x[:, :k] * D ** p).sum())
    return CapacitatedAssignment(flow=x[:, :k], outlier=x[:, k], cost=value)


# registry ------------------------------------------------------------------

@dataclass(frozen=True)
class Subroutine:
    profile: AlgorithmProfile
    solve: Callable[[SeqRequest, int], Clustering]


def _with_p(c: Clustering, p: float) -> Clustering:
    c.p = p
    return c


def _need_no_outliers(name):
    def check(req):
        if req.z:
            raise ValueError(f"{name} does not handle outliers")
    return check


def _solve_oracle(req, seed):
    return oracle_weighted(req.input, req.k, req.z, req.p).clustering


def _solve_gonzalez(req, seed):
    _need_no_outliers("gonzalez")(req)
    return _with_p(gonzalez_kcenter(req.input, req.k), req.p)


def _solve_charikar(req, seed):
    return _with_p(charikar_kcenter_outliers(req.input, req.k, req.z), req.p)


def _solve_local_search(req, seed):
    _need_no_outliers("local_search")(req)
    return local_search_kmedian(req.input, req.k, req.p, seed)


def _solve_lloyd(req, seed):
    _need_no_outliers("kmeanspp_lloyd")(req)
    return _with_p(kmeanspp_lloyd(req.input, req.k, seed=seed, n_init=5), req.p)


def _solve_oversampled(req, seed):
    _need_no_outliers("oversampled")(req)
    return oversampled_greedy(req.input, req.k, 3.0, req.p, seed)


def _solve_kmedian_outliers(req, seed):
    return _with_p(kmedian_outliers_bicriteria(req.input, req.k, req.z, 1.0, seed), req.p)


REGISTRY: dict[str, Subroutine] = {
    "oracle": Subroutine(AlgorithmProfile("oracle", 1.0, 1.0, True, True, True, None,
                                          note="exhaustive optimum, <= 18 entries"),
                         _solve_oracle),
    "gonzalez": Subroutine(AlgorithmProfile("gonzalez", 1.0, 2.0, True, False, True, (math.inf,)),
                           _solve_gonzalez),
    "charikar": Subroutine(AlgorithmProfile("charikar", 1.0, 3.0, True, True, True, (math.inf,)),
                           _solve_charikar),
    "local_search": Subroutine(AlgorithmProfile("local_search", 1.0, 5.0, True, False, True, None,
                                                note="ratio 5 for p=1; constant for finite p"),
                               _solve_local_search),
    "kmeanspp_lloyd": Subroutine(AlgorithmProfile("kmeanspp_lloyd", 1.0, 25.0, True, False, True,
                                                  (2.0,), note="sanity bound, not a theorem"),
                                 _solve_lloyd),
    "oversampled": Subroutine(AlgorithmProfile("oversampled", 3.0, 2.0, True, False, True, None,
                                               note="empirical ratio target"),
                              _solve_oversampled),
    "kmedian_outliers": Subroutine(AlgorithmProfile("kmedian_outliers", 1.0, 8.0, True, True, True,
                                                    (1.0,), outlier_slack=2.0,
                                                    note="bicriteria: discards up to 2z"),
                                   _solve_kmedian_outliers),
}

# Published algorithms this package does not provide; asking for them by name
# gives an explanation rather than a bare KeyError.
ABSENT = {
    "byrka": "2.675-approximation for k-median (not implemented)",
    "ahmadian": "6.357-approximation for k-means (not implemented)",
    "makarychev": "bicriteria k-means (not implemented)",
    "gupta_tangwongsan": "local search for l_p objectives (not implemented)",
    "lin_vitter": "LP-filtering bicriteria k-median (use 'oversampled')",
    "chen": "constant-factor k-median with outliers (use 'kmedian_outliers')",
}


def register(name: str, solve: Callable[[SeqRequest, int], Clustering],
             profile: AlgorithmProfile) -> None:
    REGISTRY[name] = Subroutine(profile, solve)


def get_algorithm(name: str) -> Subroutine:
    try:
        return REGISTRY[name]
    except KeyError:
        if name in ABSENT:
            raise UnknownAlgorithmError(f"{name}: {ABSENT[name]}") from None
        raise UnknownAlgorithmError(f"unknown algorithm {name!r}") from None


def run_subroutine(name: str, req: SeqRequest, seed: int = 0) -> Clustering:
    sub = get_algorithm(name)
    c = sub.solve(req, seed)
    c.info.setdefault("algorithm", name)
    return c
