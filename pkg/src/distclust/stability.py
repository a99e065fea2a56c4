"""Clustering under approximation stability: threshold graphs and greedy recovery."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import Clustering, Dataset, WeightedPointSet, center_distances, lp_cost, nearest
from .distsim import COORDINATOR, DEFAULT_BITS, Ledger, _root_of, run_algorithm1

ESTIMATE = "estimate"


# threshold graphs ---------------------------------------------------------------

class ThresholdGraph:
    """Weighted graph with an edge between distinct nodes at distance <= t."""

    def __init__(self, adjacency, weights=None, ids=None, t: float = math.nan):
        adj = np.array(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        np.fill_diagonal(adj, False)
        n = adj.shape[0]
        self.adj = adj
        self.weights = np.ones(n, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
        self.ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
        self.t = t

    @classmethod
    def build(cls, points: Union[Dataset, WeightedPointSet], t: float) -> "ThresholdGraph":
        wps = points if isinstance(points, WeightedPointSet) else WeightedPointSet(points)
        return cls(wps.ds.pairwise() <= t, wps.weights, wps.ds.ids, t)

    @classmethod
    def from_adjacency(cls, adjacency, weights=None) -> "ThresholdGraph":
        return cls(adjacency, weights)

    @property
    def n(self) -> int:
        return len(self.ids)

    def closed(self) -> np.ndarray:
        return self.adj | np.eye(self.n, dtype=bool)


@dataclass
class GreedyResult:
    centers: list            # node position per round, None once the graph is exhausted
    clusters: list           # node positions claimed per round
    exhausted: bool = False

    def labels(self, n: int) -> np.ndarray:
        lab = np.full(n, -1, dtype=np.int64)
        for j, members in enumerate(self.clusters):
            lab[members] = j
        return lab


def iterative_greedy(g: ThresholdGraph, k: int) -> GreedyResult:
    """k rounds of: take the surviving node whose closed neighborhood among
    survivors has the largest weight, claim that neighborhood, remove it.
    Ties go to the lowest id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    closed = g.closed()
    w = g.weights
    alive = np.ones(g.n, dtype=bool)
    mass = closed.astype(np.int64) @ w
    centers, clusters = [], []
    exhausted = False
    for _ in range(k):
        if not alive.any():
            exhausted = True
            centers.append(None)
            clusters.append(np.empty(0, dtype=np.int64))
            continue
        cand = np.flatnonzero(alive)
        best = cand[mass[cand] == mass[cand].max()]
        v = int(best[np.argmin(g.ids[best])])
        members = np.flatnonzero(closed[v] & alive)
        centers.append(v)
        clusters.append(members)
        alive[members] = False
        mass -= closed[:, members].astype(np.int64) @ w[members]
    return GreedyResult(centers, clusters, exhausted)


def greedy_mismatch(clusters: Sequence, planted: Sequence) -> int:
    """min over bijections of sum_i |planted_sigma(i) minus clusters_i| (node sets)."""
    k = max(len(clusters), len(planted))
    inter = np.zeros((k, k), dtype=np.int64)
    sets = [set(np.asarray(c).tolist()) for c in clusters]
    for j, x in enumerate(planted):
        xs = np.asarray(x).tolist()
        for i, s in enumerate(sets):
            inter[i, j] = sum(1 for v in xs if v in s)
    r, c = linear_sum_assignment(-inter)
    return int(sum(len(x) for x in planted) - inter[r, c].sum())


# parameters and structure checks ------------------------------------------------

@dataclass
class StabilityParams:
    alpha: float
    eps: float
    w_avg: Union[float, str] = ESTIMATE
    x_bad: float = 36.0
    t_factor: float = 18.0
    p: float = 1.0
    beta: float = 1.0
    opt_cost: Union[float, str] = ESTIMATE   # l_p cost of the optimum, rooted

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    def threshold(self, w_avg: float) -> float:
        return self.alpha * w_avg / (self.t_factor * self.eps)


def lp_threshold(alpha: float, eps: float, opt_cost: float, n: int, p: float,
                 beta: float = 1.0) -> float:
    """(alpha^p OPT^p / (2 * 18^p * beta^p * eps * n))^(1/p)."""
    return (alpha ** p * opt_cost ** p / (2 * 18 ** p * beta ** p * eps * n)) ** (1 / p)


def _own_and_second(ds: Dataset, truth: Clustering) -> tuple[np.ndarray, np.ndarray]:
    if (truth.labels < 0).any():
        raise ValueError("ground truth must label every point")
    dist = center_distances(ds, truth)
    idx = np.arange(ds.n)
    own = dist[idx, truth.labels]
    if truth.k == 1:
        return own, np.full(ds.n, np.inf)
    other = dist.copy()
    other[idx, truth.labels] = np.inf
    return own, other.min(axis=1)


@dataclass
class StructureReport:
    n: int
    w_avg: float
    p1_threshold: float
    p2_gap: float
    p1_count: int
    p2_count: int
    bad: np.ndarray
    p1_bound: float
    p2_bound: float
    bad_bound: float
    markov_lhs: float
    markov_rhs: float

    @property
    def bad_count(self) -> int:
        return int(self.bad.sum())

    @property
    def ok(self) -> bool:
        return (self.p1_count <= self.p1_bound and self.p2_count < self.p2_bound
                and self.bad_count <= self.bad_bound)


def check_structural_properties(ds: Dataset, truth: Clustering, alpha: float, eps: float,
                                x: float = 36.0) -> StructureReport:
    """Count far points (distance to own center >= alpha*w_avg/(x*eps)) and
    ambiguous points (second center within alpha*w_avg/(2*eps) of the own
    center distance) of a ground-truth k-median clustering."""
    own, second = _own_and_second(ds, truth)
    n = ds.n
    w_avg = float(own.sum() / n)
    thr1 = alpha * w_avg / (x * eps)
    gap = alpha * w_avg / (2 * eps)
    p1 = own >= thr1
    p2 = second - own <= gap
    return StructureReport(n, w_avg, thr1, gap, int(p1.sum()), int(p2.sum()), p1 | p2,
                           x * eps * n / alpha, 6 * eps * n, (6 + 36 / alpha) * eps * n,
                           float(p1.sum() * thr1), float(own.sum()))


@dataclass
class LpStructureReport:
    t: float
    opt_cost: float
    bad: np.ndarray
    bad_bound: float
    p1_count: int
    p2_count: int

    @property
    def bad_count(self) -> int:
        return int(self.bad.sum())


def check_lp_structure(ds: Dataset, truth: Clustering, alpha: float, eps: float, p: float,
                       beta: float = 1.0, x: float = 36.0) -> LpStructureReport:
    """Good points sit within t of their center and beyond 17t of every other."""
    own, second = _own_and_second(ds, truth)
    n = ds.n
    opt_p = float(np.sum(own ** p))
    opt = opt_p ** (1 / p)
    t = lp_threshold(alpha, eps, opt, n, p, beta)
    good = (own < t) & (second > 17 * t)
    p1 = own ** p >= alpha ** p * opt_p / (x * eps * n)
    p2 = second ** p - own ** p <= alpha ** p * opt_p / (2 * eps * n)
    bound = (6 + 2 * 18 ** p * beta ** p / alpha ** p) * eps * n
    return LpStructureReport(t, opt, ~good, bound, int(p1.sum()), int(p2.sum()))


def good_set_separation(ds: Dataset, labels, good) -> tuple[float, float]:
    """(largest same-cluster distance, smallest cross-cluster distance) over good points."""
    good = np.flatnonzero(np.asarray(good, dtype=bool))
    lab = np.asarray(labels)[good]
    D = ds.pairwise(good, good)
    same = lab[:, None] == lab[None, :]
    intra = float(D[same].max()) if same.any() else 0.0
    inter = float(D[~same].min()) if (~same).any() else math.inf
    return intra, inter


# algorithm 3 -------------------------------------------------------------------------

@dataclass
class StabilityResult:
    center_ids: np.ndarray
    clustering: Clustering                 # each point to its nearest output center
    ledger: Ledger
    summary: WeightedPointSet
    summary_labels: np.ndarray             # coordinator cluster of each summary entry, -1 if unclaimed
    t: float
    info: dict = field(default_factory=dict)


def estimate_opt(parts: Sequence[Dataset], k: int, p: float = 1.0, alg_a: str = "local_search",
                 alg_b: str = "oversampled", seed: int = 0,
                 bits_per_coord: int = DEFAULT_BITS) -> tuple[float, Ledger]:
    """Rooted l_p cost of the summarize-then-cluster pipeline, with its ledger."""
    res = run_algorithm1(parts, k, 0, p, alg_a, alg_b, seed=seed, bits_per_coord=bits_per_coord)
    root = _root_of(parts)
    return lp_cost(root, res.clustering), res.ledger


def estimate_wavg(parts: Sequence[Dataset], k: int, alg_a: str = "local_search",
                  alg_b: str = "oversampled", seed: int = 0) -> float:
    cost, _ = estimate_opt(parts, k, 1.0, alg_a, alg_b, seed)
    return cost / _root_of(parts).n


def _two_phase(parts: Sequence[Dataset], k: int, t: float, ledger: Ledger) -> StabilityResult:
    root = _root_of(parts)
    rnd = ledger.next_round()
    ids, wts = [], []
    for i, part in enumerate(parts, start=1):
        if part.n == 0:
            continue
        g = iterative_greedy(ThresholdGraph.build(part, 2 * t), k)
        sent = 0
        for c, members in zip(g.centers, g.clusters):
            if c is None:
                continue
            ids.append(part.ids[c])
            wts.append(len(members))
            sent += 1
        ledger.send(i, COORDINATOR, "points", sent, rnd)
        ledger.send(i, COORDINATOR, "weights", sent, rnd)
    summary = WeightedPointSet(root.subset_ids(np.array(ids)), np.array(wts))
    cg = iterative_greedy(ThresholdGraph.build(summary, 6 * t), k)
    picks = [c for c in cg.centers if c is not None]
    center_ids = summary.ds.ids[picks]
    lab, _ = nearest(root.dist_to_ids(center_ids))
    out = Clustering(labels=lab, center_ids=center_ids, p=1.0)
    return StabilityResult(center_ids, out, ledger, summary, cg.labels(summary.n), t,
                           {"exhausted": cg.exhausted})


def run_algorithm3(parts: Sequence[Dataset], k: int, params: StabilityParams, seed: int = 0,
                   bits_per_coord: int = DEFAULT_BITS) -> StabilityResult:
    """Local greedy on threshold graphs at 2t, coordinator greedy at 6t over the
    weighted local centers, t = alpha * w_avg / (18 eps).

    With ``w_avg=ESTIMATE`` the average cost comes from the summarize-then-cluster
    pipeline first and that run's messages are charged to the same ledger.
    """
    root = _root_of(parts)
    ledger = Ledger.for_dataset(root, bits_per_coord)
    if params.w_avg == ESTIMATE:
        cost, est = estimate_opt(parts, k, 1.0, seed=seed, bits_per_coord=bits_per_coord)
        ledger.extend(est)
        w_avg = cost / root.n
    else:
        w_avg = float(params.w_avg)
    res = _two_phase(parts, k, params.threshold(w_avg), ledger)
    res.info["w_avg"] = w_avg
    return res


def weighted_median(dist: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per row, the smallest distance whose cumulative weight reaches half the total."""
    order = np.argsort(dist, axis=1, kind="stable")
    d = np.take_along_axis(dist, order, axis=1)
    cw = np.cumsum(weights[order], axis=1)
    idx = np.argmax(2 * cw >= weights.sum(), axis=1)
    return d[np.arange(len(d)), idx]


def large_cluster_refine(parts: Sequence[Dataset], res: StabilityResult,
                         bits_per_coord: int = DEFAULT_BITS) -> tuple[Clustering, Ledger]:
    """Broadcast the labelled summary; each point joins the cluster whose summary
    members are closest in weighted median."""
    root = _root_of(parts)
    ledger = Ledger.for_dataset(root, bits_per_coord)
    ledger.extend(res.ledger)
    rnd = ledger.next_round()
    s = res.summary.n
    for i in range(1, len(parts) + 1):
        ledger.send(COORDINATOR, i, "points", s, rnd)
        ledger.send(COORDINATOR, i, "weights", s, rnd)
        ledger.send(COORDINATOR, i, "labels", s, rnd)
    k = len(res.center_ids)
    labels = np.empty(root.n, dtype=np.int64)
    sids = res.summary.ds.ids
    for part in parts:
        if part.n == 0:
            continue
        dist = part.dist_to_ids(sids)
        med = np.full((part.n, k), np.inf)
        for j in range(k):
            members = np.flatnonzero(res.summary_labels == j)
            if len(members):
                med[:, j] = weighted_median(dist[:, members], res.summary.weights[members])
        labels[root.positions(part.ids)] = np.argmin(med, axis=1)
    return Clustering(labels=labels, center_ids=res.center_ids, p=1.0,
                      info={"refined": True}), ledger


def run_lp_variant(parts: Sequence[Dataset], k: int, params: StabilityParams, seed: int = 0,
                   bits_per_coord: int = DEFAULT_BITS) -> StabilityResult:
    """The two-phase greedy with t = (alpha^p OPT^p / (2 18^p beta^p eps n))^(1/p)."""
    root = _root_of(parts)
    p, n = params.p, root.n
    if not 1 <= p < math.log2(n):
        raise ValueError(f"p={p} outside [1, log2 n) = [1, {math.log2(n):.3g})")
    ledger = Ledger.for_dataset(root, bits_per_coord)
    if params.opt_cost == ESTIMATE:
        opt, est = estimate_opt(parts, k, p, seed=seed, bits_per_coord=bits_per_coord)
        ledger.extend(est)
    else:
        opt = float(params.opt_cost)
    t = lp_threshold(params.alpha, params.eps, opt, n, p, params.beta)
    res = _two_phase(parts, k, t, ledger)
    res.clustering.p = p
    res.info["opt_cost"] = opt
    return res


# k-center under (2,0)-stability ------------------------------------------------------------

@dataclass
class KCenterResult:
    clustering: Clustering
    ledger: Ledger
    r_star: float
    probes: int = 1


def _components(ds: Dataset, r: float) -> tuple[int, np.ndarray]:
    adj = csr_matrix(ds.pairwise() <= r)
    return connected_components(adj, directed=False)


def _kcenter_probe(parts: Sequence[Dataset], root: Dataset, r: float, ledger: Ledger, rnd: int):
    reps, rep_of = [], []
    for i, part in enumerate(parts, start=1):
        if part.n == 0:
            rep_of.append(np.empty(0, dtype=np.int64))
            continue
        nc, lab = _components(part, 2 * r)
        first = np.full(nc, np.iinfo(np.int64).max)
        np.minimum.at(first, lab, part.ids)
        rep_of.append(len(reps) + lab)
        reps.extend(first.tolist())
        ledger.send(i, COORDINATOR, "points", nc, rnd)
    rep_ds = root.subset_ids(np.array(reps))
    nc, lab = _components(rep_ds, 2 * r)
    labels = np.empty(root.n, dtype=np.int64)
    for part, ro in zip(parts, rep_of):
        if part.n:
            labels[root.positions(part.ids)] = lab[ro]
    centers = np.full(nc, np.iinfo(np.int64).max)
    np.minimum.at(centers, lab, rep_ds.ids)
    return nc, labels, centers


def _covered(parts: Sequence[Dataset], root: Dataset, r: float, labels, centers,
             ledger: Ledger, rnd: int) -> bool:
    """Broadcast the centers; every machine reports its largest distance to its center."""
    worst = 0.0
    for i, part in enumerate(parts, start=1):
        ledger.send(COORDINATOR, i, "points", len(centers), rnd)
        if part.n == 0:
            continue
        lab = labels[root.positions(part.ids)]
        worst = max(worst, float(part.dist_to_ids(centers)[np.arange(part.n), lab].max()))
        ledger.send(i, COORDINATOR, "scalars", 1, rnd)
    return worst <= 2 * r * (1 + 1e-12)


def run_kcenter_2as(parts: Sequence[Dataset], k: int, r_star: Union[float, str, None] = None,
                    bits_per_coord: int = DEFAULT_BITS) -> KCenterResult:
    """Threshold at 2r* locally and again over the representatives.

    ``r_star=None`` (or ESTIMATE) binary-searches the pairwise distances for the
    smallest radius giving exactly k components at the coordinator whose
    centers cover every point within 2r. The predicate "fewer than k
    components, or exactly k with a valid cover" is monotone in r, and every
    probe is charged to the ledger.
    """
    root = _root_of(parts)
    ledger = Ledger.for_dataset(root, bits_per_coord)
    if r_star is not None and r_star != ESTIMATE:
        r = float(r_star)
        nc, labels, centers = _kcenter_probe(parts, root, r, ledger, 0)
        if nc != k:
            raise ValueError(f"radius {r} gives {nc} components, expected {k}")
        probes = 1
    else:
        D = root.pairwise()
        cand = np.unique(D[np.triu_indices(root.n, 1)]) if root.n > 1 else np.zeros(1)
        cand = np.concatenate([[0.0], cand])
        lo, hi, probes, rnd = 0, len(cand) - 1, 0, 0
        found = None
        while lo <= hi:
            mid = (lo + hi) // 2
            probe = _kcenter_probe(parts, root, cand[mid], ledger, rnd)
            probes += 1
            ok = probe[0] < k
            if probe[0] == k:
                ok = _covered(parts, root, cand[mid], probe[1], probe[2], ledger, rnd + 1)
            rnd += 2
            if ok:
                found, hi = (mid, probe), mid - 1
            else:
                lo = mid + 1
        if found is None:
            raise ValueError("no radius yields k components")
        r = float(cand[found[0]])
        nc, labels, centers = found[1]
        if nc != k:
            raise ValueError(f"smallest feasible radius {r} gives {nc} components, expected {k}")
    out = Clustering(labels=labels, center_ids=centers, p=math.inf, info={"r_star": r})
    dist = root.dist_to_ids(centers)[np.arange(root.n), labels]
    if dist.max(initial=0.0) > 2 * r * (1 + 1e-12):
        raise ValueError(f"components at radius {r} are not covered within 2r")
    return KCenterResult(out, ledger, r, probes)
