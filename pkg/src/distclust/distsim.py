"""In-process simulation of the coordinator model with exact bit accounting.

Machines are numbered 1..m and machine 1 is the coordinator (it also holds
data). Rounds are synchronous. Messages from machine 1 to itself are free
and are not recorded.
"""
from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (EUCLIDEAN, OUTLIER, Clustering, Dataset, WeightedPointSet, center_distances,
                   lp_cost, nearest)
from .oracle import brute_force_opt
from .seq import SeqRequest, capacitated_assign, get_algorithm, run_subroutine

DEFAULT_BITS = 64
COORDINATOR = 1

POINT_KINDS = ("points", "centers", "vectors")
INDEX_KINDS = ("weights", "labels")


def index_bits(n: int) -> int:
    """Bits for a count or label in [0, n]; at least one."""
    return max(1, math.ceil(math.log2(max(n, 2))))


def machine_seed(seed: int, machine: int) -> int:
    return int(np.random.SeedSequence([seed, machine]).generate_state(1)[0])


# partitions ------------------------------------------------------------------

@dataclass
class PartitionSpec:
    mode: str = "round_robin"
    m: int = 1
    seed: int = 0
    labels: Optional[np.ndarray] = None  # ground truth, for mode="by_cluster"

    MODES = ("round_robin", "random", "sorted_adversarial", "by_cluster")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mode == "by_cluster" and self.labels is None:
            raise ValueError("by_cluster partitions need ground-truth labels")


def partition(ds: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split ``ds`` into ``spec.m`` disjoint machine datasets (ids ascending)."""
    n, m = ds.n, spec.m
    if m > n:
        warnings.warn(f"m={m} exceeds n={n}; some machines are empty", stacklevel=2)
    if spec.mode == "round_robin":
        owner = np.arange(n) % m
    elif spec.mode == "random":
        perm = np.random.default_rng(spec.seed).permutation(n)
        owner = np.empty(n, dtype=np.int64)
        for i, block in enumerate(np.array_split(perm, m)):
            owner[block] = i
    elif spec.mode == "sorted_adversarial":
        key = ds.coords[:, 0] if ds.coords is not None else ds.matrix[0]
        order = np.lexsort((np.arange(n), key))
        owner = np.empty(n, dtype=np.int64)
        for i, block in enumerate(np.array_split(order, m)):
            owner[block] = i
    else:
        labels = np.asarray(spec.labels)
        owner = np.empty(n, dtype=np.int64)
        for j, lab in enumerate(np.unique(labels)):
            members = np.flatnonzero(labels == lab)
            for i, block in enumerate(np.array_split(members, m)):
                owner[block] = (i + j) % m
    return [ds.subset(np.flatnonzero(owner == i)) for i in range(m)]


# ledger -----------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    kind: str
    items: int
    bits: int
    round: int


class Ledger:
    """Append-only record of simulated messages and their exact bit costs.

    Points cost ``d * bits_per_coord`` bits (an id of ``index_bits(n)`` bits
    under an explicit metric), weights and labels ``index_bits(n)`` bits,
    scalars ``bits_per_coord`` bits.
    """

    def __init__(self, n: int, d: int, bits_per_coord: int = DEFAULT_BITS, metric: str = EUCLIDEAN):
        self.n, self.d, self.bits_per_coord, self.metric = n, d, bits_per_coord, metric
        self.messages: list[Message] = []

    @classmethod
    def for_dataset(cls, ds: Dataset, bits_per_coord: int = DEFAULT_BITS) -> "Ledger":
        top = ds.top
        return cls(top.n, top.d, bits_per_coord, top.metric)

    @property
    def point_bits(self) -> int:
        if self.metric == EUCLIDEAN:
            return self.d * self.bits_per_coord
        return index_bits(self.n)

    @property
    def index_bits(self) -> int:
        return index_bits(self.n)

    def item_bits(self, kind: str) -> int:
        if kind in POINT_KINDS:
            return self.point_bits
        if kind in INDEX_KINDS:
            return self.index_bits
        if kind == "scalars":
            return self.bits_per_coord
        raise ValueError(f"unknown payload kind {kind!r}")

    def send(self, src: int, dst: int, kind: str, items: int, round: int) -> int:
        if src == dst or items == 0:
            return 0
        bits = int(items) * self.item_bits(kind)
        self.messages.append(Message(src, dst, kind, int(items), bits, round))
        return bits

    @property
    def total_bits(self) -> int:
        return sum(msg.bits for msg in self.messages)

    @property
    def per_round_bits(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for msg in self.messages:
            out[msg.round] = out.get(msg.round, 0) + msg.bits
        return out

    def next_round(self) -> int:
        return max((msg.round for msg in self.messages), default=-1) + 1

    def extend(self, other: "Ledger", offset: int = 0) -> None:
        for msg in other.messages:
            self.messages.append(Message(msg.src, msg.dst, msg.kind, msg.items, msg.bits,
                                         msg.round + offset))

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        for msg in self.messages:
            buf.write(json.dumps({"from": msg.src, "to": msg.dst, "kind": msg.kind,
                                  "items": msg.items, "bits": msg.bits, "round": msg.round},
                                 sort_keys=True))
            buf.write("\n")
        return buf.getvalue()

    def __len__(self) -> int:
        return len(self.messages)


# bounds -------------------------------------------------------------------------

def ratio_bound(alpha: float, beta: float, p: float) -> float:
    """Approximation factor of the summarize-then-cluster pipeline.

    For p in {1, inf} this is 4ab + 2a + 2b; for general p it is
    (2^(3p-1) a^p b^p + 2^(2p-1) (a^p + b^p))^(1/p).
    """
    if math.isinf(p) or p == 1:
        return 4 * alpha * beta + 2 * alpha + 2 * beta
    return (2 ** (3 * p - 1) * alpha ** p * beta ** p
            + 2 ** (2 * p - 1) * (alpha ** p + beta ** p)) ** (1 / p)


def alg1_bits_bound(ledger: Ledger, m: int, k: int, z: int, gamma: float, c: float = 2.0) -> float:
    return c * m * (k + z) * gamma * (ledger.point_bits + ledger.index_bits)


# algorithm 1 ----------------------------------------------------------------------

@dataclass
class Alg1Result:
    clustering: Clustering                 # over every point of the root dataset
    ledger: Ledger
    coordinator: Clustering                # A's solution on the weighted summary
    summary: WeightedPointSet
    local: list = field(default_factory=list)        # B's clustering per machine
    owners: list = field(default_factory=list)       # per machine: local entry of each point
    offsets: list = field(default_factory=list)      # first summary entry of each machine

    def __iter__(self):
        return iter((self.clustering, self.ledger))


def _root_of(parts: Sequence[Dataset]) -> Dataset:
    roots = {id(p.top) for p in parts}
    if len(roots) != 1:
        raise ValueError("partitions must come from one dataset")
    root = parts[0].top
    ids = np.sort(np.concatenate([p.ids for p in parts]))
    if not np.array_equal(ids, root.ids):
        raise ValueError("partitions must cover the dataset exactly once")
    return root


def _spread(dist: np.ndarray, flow: np.ndarray, outlier: int, p: float) -> np.ndarray:
    """Split the points of one summary entry across centers per ``flow``.

    ``dist`` is (points x centers). Returns a label per point, outliers last
    to be charged: the cheapest completion is found by assignment.
    """
    npts = dist.shape[0]
    nz = np.flatnonzero(flow)
    if len(nz) == 1 or (len(nz) == 0 and outlier == npts):
        lab = np.full(npts, nz[0] if len(nz) else OUTLIER)
        if outlier and len(nz):
            far = np.lexsort((np.arange(npts), -dist[:, nz[0]]))[:outlier]
            lab[far] = OUTLIER
        return lab
    slots = np.concatenate([np.repeat(nz, flow[nz]), np.full(outlier, OUTLIER)])
    pw = 1.0 if math.isinf(p) else p
    cost = np.where(slots[None, :] == OUTLIER, 0.0, dist[:, np.maximum(slots, 0)] ** pw)
    r, c = linear_sum_assignment(cost)
    lab = np.empty(npts, dtype=np.int64)
    lab[r] = slots[c]
    return lab


def run_algorithm1(parts: Sequence[Dataset], k: int, z: int = 0, p: float = 1.0,
                   alg_a: str = "oracle", alg_b: str = "oracle", L: Optional[float] = None,
                   broadcast_labels: bool = False, seed: int = 0,
                   bits_per_coord: int = DEFAULT_BITS) -> Alg1Result:
    """Each machine summarizes with B, the coordinator clusters the summary with A.

    Machine i runs B for (k+z)-clustering on its points, weights each local
    center by the number of its points nearest to it, and ships centers and
    weights to machine 1. Machine 1 runs A with k centers and z outliers on
    the weighted union (a capacitated assignment follows when L is set).
    Every point then inherits the global center of its local center.
    """
    prof_a, prof_b = get_algorithm(alg_a).profile, get_algorithm(alg_b).profile
    if not prof_b.handles_weights:
        raise ValueError(f"{alg_b} cannot take weighted input")
    if z > 0 and not prof_a.handles_outliers:
        raise ValueError(f"{alg_a} does not handle outliers")
    if L is not None and not prof_a.handles_capacity:
        raise ValueError(f"{alg_a} cannot be combined with capacities")
    root = _root_of(parts)
    ledger = Ledger.for_dataset(root, bits_per_coord)

    # round 0: local summaries
    local, owners, centers_ids, centers_xy, weights, offsets = [], [], [], [], [], []
    for i, part in enumerate(parts, start=1):
        offsets.append(sum(len(w) for w in weights))
        if part.n == 0:
            local.append(None)
            owners.append(np.empty(0, dtype=np.int64))
            weights.append(np.empty(0, dtype=np.int64))
            continue
        req = SeqRequest(WeightedPointSet(part), k + z, 0, p)
        cb = run_subroutine(alg_b, req, machine_seed(seed, i))
        own, _ = nearest(center_distances(part, cb))
        counts = np.bincount(own, minlength=cb.k)
        keep = np.flatnonzero(counts > 0)
        remap = np.full(cb.k, -1)
        remap[keep] = np.arange(len(keep))
        local.append(cb)
        owners.append(remap[own])
        weights.append(counts[keep])
        centers_ids.append(cb.center_ids[keep] if cb.center_ids is not None else None)
        centers_xy.append(cb.centers[keep] if cb.centers is not None else None)
        ledger.send(i, COORDINATOR, "points", len(keep), 0)
        ledger.send(i, COORDINATOR, "weights", len(keep), 0)

    if all(c is not None for c in centers_ids):
        summary_ds = root.subset_ids(np.concatenate(centers_ids))
    else:
        summary_ds = Dataset(coords=np.vstack([c for c in centers_xy if c is not None]))
    summary = WeightedPointSet(summary_ds, np.concatenate(weights))

    # coordinator
    coord = run_subroutine(alg_a, SeqRequest(summary, k, z, p), machine_seed(seed, 0))
    if L is not None:
        ca = capacitated_assign(summary, coord, L, z, p)
        flow, outl = ca.flow, ca.outlier
    else:
        w = summary.weights
        outl = coord.outlier_weights(w)
        flow = np.zeros((summary.n, coord.k), dtype=np.int64)
        live = coord.labels != OUTLIER
        flow[np.flatnonzero(live), coord.labels[live]] = (w - outl)[live]

    if broadcast_labels:
        rnd = ledger.next_round()
        for i, wts in enumerate(weights, start=1):
            ledger.send(COORDINATOR, i, "labels", len(wts), rnd)

    labels = np.full(root.n, OUTLIER, dtype=np.int64)
    for part, own, off in zip(parts, owners, offsets):
        if part.n == 0:
            continue
        dist = center_distances(part, coord)
        pos = root.positions(part.ids)
        for e in np.unique(own):
            members = np.flatnonzero(own == e)
            labels[pos[members]] = _spread(dist[members], flow[off + e], int(outl[off + e]), p)

    declared_z = z * prof_a.outlier_slack
    out = Clustering(labels=labels, centers=coord.centers, center_ids=coord.center_ids, p=p,
                     z=declared_z, info={"alg_a": alg_a, "alg_b": alg_b, "summary_size": summary.n,
                                         "bicriteria_outliers": prof_a.outlier_slack > 1})
    return Alg1Result(out, ledger, coord, summary, local, owners, offsets)


def measure_ratio(result: Clustering, ds: Dataset, k: int, z: int, p: float) -> float:
    """Cost of ``result`` over the exact (k, z, p) optimum (tiny instances only)."""
    opt = brute_force_opt(ds, k, z, p).cost
    cost = lp_cost(ds, result)
    if opt == 0:
        return 1.0 if cost <= 1e-12 else math.inf
    return cost / opt


def measured_factors(res: Alg1Result, parts: Sequence[Dataset], k: int, z: int,
                     p: float) -> tuple[float, float]:
    """Empirical (alpha, beta) of the coordinator and local routines on this run.

    alpha compares A's cost on the weighted summary with the summary's exact
    optimum; beta is the worst per-machine ratio of B against the exact
    (k+z)-optimum on that machine, as power sums combined like the proof.
    """
    opt_a = brute_force_opt(res.summary.ds, k, z, p, weights=res.summary.weights).cost
    cost_a = lp_cost(res.summary.ds, res.coordinator, res.summary.weights)
    alpha = 1.0 if opt_a == 0 and cost_a <= 1e-12 else (cost_a / opt_a if opt_a else math.inf)
    beta = 1.0
    for part, cb in zip(parts, res.local):
        if cb is None:
            continue
        opt_b = brute_force_opt(part, k + z, 0, p).cost
        cost_b = lp_cost(part, _nearest_relabel(part, cb))
        if opt_b == 0:
            r = 1.0 if cost_b <= 1e-12 else math.inf
        else:
            r = cost_b / opt_b
        beta = max(beta, r)
    return max(alpha, 1.0), beta


def _nearest_relabel(ds: Dataset, c: Clustering) -> Clustering:
    lab, _ = nearest(center_distances(ds, c))
    return Clustering(labels=lab, centers=c.centers, center_ids=c.center_ids, p=c.p)


SUMMARY_COLUMNS = ["n", "m", "k", "z", "p", "algA", "algB", "cost",
                   "oracle_cost", "ratio", "total_bits", "bound_bits"]
