"""Seeded instance generators whose ground truth is certified by the checkers."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import OUTLIER, Clustering, Dataset, save_dataset
from .stability import (check_lp_structure, check_structural_properties, good_set_separation)

MAX_ATTEMPTS = 10
KINDS = ("separated_clusters", "as_certified", "spectral_certified", "kcenter_2as",
         "outlier_injected")


class InfeasibleSpecError(ValueError):
    pass


class CertificationError(RuntimeError):
    pass


@dataclass
class GenSpec:
    kind: str
    n: int
    d: int
    k: int
    seed: int = 0
    # as_certified
    alpha: float = 1.0
    eps: float = 0.005
    bad_budget: int = 0
    bad_kind: str = "mixed"          # mixed | far | ambiguous
    p: float = 1.0
    beta: float = 1.0
    # spectral_certified
    gamma: float = 1.0
    margin: float = 0.5
    # kcenter_2as
    r_star: float = 1.0
    # outlier_injected
    z: int = 0
    spread: float = 2.0
    # separated_clusters
    jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not self.n >= self.k >= 1:
            raise ValueError("need n >= k >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")


@dataclass
class Instance:
    dataset: Dataset
    truth: Clustering
    certification: dict = field(default_factory=dict)
    spec: Optional[GenSpec] = None

    def __iter__(self):
        return iter((self.dataset, self.truth, self.certification))


def _ball(rng, size: int, d: int, radius: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((size, d))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return g * radius * rng.random(size)[:, None] ** (1.0 / d)


def _unit_perp(rng, d: int) -> np.ndarray:
    """Random unit vector orthogonal to the first axis."""
    v = rng.standard_normal(d)
    v[0] = 0.0
    return v / np.linalg.norm(v)


def _sizes(n: int, k: int) -> np.ndarray:
    return np.array([len(b) for b in np.array_split(np.arange(n), k)])


# separated clusters ---------------------------------------------------------------

def _separated(spec: GenSpec, rng) -> Instance:
    sizes = _sizes(spec.n, spec.k)
    gap = 5.0 * sizes.max()
    rows, labels, centers = [], [], []
    for j, s in enumerate(sizes):
        pts = np.zeros((s, spec.d))
        pts[:, 0] = j * gap + np.arange(s)
        if spec.jitter:
            pts += rng.uniform(-spec.jitter, spec.jitter, pts.shape)
        centers.append(sum(sizes[:j]))
        rows.append(pts)
        labels += [j] * s
    X = np.vstack(rows)
    ds = Dataset.from_points(X)
    truth = Clustering(labels=labels, center_ids=centers, centers=X[centers])
    return Instance(ds, truth, _separation_report(ds, truth.labels))


def _separation_report(ds: Dataset, labels) -> dict:
    intra, inter = good_set_separation(ds, labels, np.ones(ds.n, dtype=bool))
    return {"max_intra": intra, "min_inter": inter, "certified": bool(inter > intra)}


# approximation-stable instances ------------------------------------------------------

def _bad_layout(spec: GenSpec, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kind (0 far, 1 ambiguous), home cluster, and distance multiple of t per bad point."""
    b = spec.bad_budget
    if spec.bad_kind == "far" or spec.k == 1:
        kinds = np.zeros(b, dtype=int)
    elif spec.bad_kind == "ambiguous":
        kinds = np.ones(b, dtype=int)
    elif spec.bad_kind == "mixed":
        kinds = rng.integers(0, 2, b)
    else:
        raise ValueError(f"unknown bad_kind {spec.bad_kind!r}")
    home = rng.integers(0, spec.k, b)
    if spec.p == 1:
        far, amb = (1.0, 4.0), (6.0, 9.5)      # own >= t/2; second - own <= 9t
    else:
        far, amb = (1.2, 2.0), (3.5, 5.0)      # own >= t; second <= 17t
    mult = np.where(kinds == 0, rng.uniform(*far, b), rng.uniform(*amb, b))
    return kinds, home, mult


def _as_certified(spec: GenSpec, rng) -> Instance:
    if spec.d < 2:
        raise InfeasibleSpecError("as_certified needs d >= 2")
    n, k, p, a, e = spec.n, spec.k, spec.p, spec.alpha, spec.eps
    b = spec.bad_budget
    if b > n - k:
        raise InfeasibleSpecError(f"bad_budget {b} leaves fewer than k good points")
    sizes = _sizes(n - b, k)
    offsets = [_ball(rng, s, spec.d) for s in sizes]
    for off in offsets:
        off[0] = 0.0                                  # the center itself is a data point
    good_dist = np.concatenate([np.linalg.norm(o, axis=1) for o in offsets])
    kinds, home, mult = _bad_layout(spec, rng)
    if p == 1:
        # t = a (G + t h) / (18 e n)
        G, h = good_dist.sum(), mult.sum()
        denom = 18 * e * n - a * h
        if denom <= 0:
            raise InfeasibleSpecError(f"alpha*sum(bad multiples)={a * h:.4g} must be < 18*eps*n={18 * e * n:.4g}")
        t = a * G / denom
        if not t > 2.0:
            raise InfeasibleSpecError(f"t = alpha*w_avg/(18 eps) = {t:.4g} must exceed 2 (twice the core radius); lower eps")
    else:
        G, h = np.sum(good_dist ** p), np.sum(mult ** p)
        cst = 2 * 18 ** p * spec.beta ** p * e * n
        denom = cst - a ** p * h
        if denom <= 0:
            raise InfeasibleSpecError(f"alpha^p*sum(bad multiples^p)={a ** p * h:.4g} must be < 2*18^p*beta^p*eps*n={cst:.4g}")
        t = (a ** p * G / denom) ** (1 / p)
        if not t > 1.0:
            raise InfeasibleSpecError(f"l_p threshold t = {t:.4g} must exceed the core radius 1; lower eps")
    S = 20.0 * t
    centers = np.zeros((k, spec.d))
    centers[:, 0] = S * np.arange(k)
    rows, labels, center_ids = [], [], []
    start = 0
    for j, off in enumerate(offsets):
        rows.append(centers[j] + off)
        labels += [j] * len(off)
        center_ids.append(start)
        start += len(off)
    for kind, j, f in zip(kinds, home, mult):
        if kind == 0:
            pt = centers[j] + f * t * _unit_perp(rng, spec.d)
        else:
            step = 1.0 if j + 1 < k else -1.0
            pt = centers[j].copy()
            pt[0] += step * f * t
        rows.append(pt[None, :])
        labels.append(int(j))
    X = np.vstack(rows)
    ds = Dataset.from_points(X)
    truth = Clustering(labels=labels, center_ids=center_ids, centers=X[center_ids], p=p)
    injected = np.zeros(n, dtype=bool)
    injected[n - b:] = True
    cert = {"t_planned": float(t), "bad_injected": int(b), "bad_ids": np.flatnonzero(injected).tolist()}
    good = ~injected
    intra, inter = good_set_separation(ds, labels, good)
    cert.update(max_good_intra=intra, min_good_inter=inter)
    if p == 1:
        rep = check_structural_properties(ds, truth, a, e)
        t_chk = a * rep.w_avg / (18 * e)
        cert.update(w_avg=rep.w_avg, t=t_chk, bad_count=rep.bad_count, p1_count=rep.p1_count,
                    p2_count=rep.p2_count, bad_bound=rep.bad_bound, structure_ok=rep.ok)
        same_bad = np.array_equal(rep.bad, injected)
    else:
        rep = check_lp_structure(ds, truth, a, e, p, spec.beta)
        t_chk = rep.t
        cert.update(opt_cost=rep.opt_cost, t=t_chk, bad_count=rep.bad_count,
                    p1_count=rep.p1_count, p2_count=rep.p2_count, bad_bound=rep.bad_bound,
                    structure_ok=bool(rep.bad_count < rep.bad_bound or rep.bad_count == 0))
        same_bad = np.array_equal(rep.bad, injected)
    cert["bad_matches_injected"] = bool(same_bad)
    cert["graph_conditions"] = bool(intra <= 2 * t_chk and inter > 16 * t_chk)
    cert["certified"] = bool(same_bad and cert["structure_ok"] and cert["graph_conditions"])
    return Instance(ds, truth, cert)


# spectral stability -------------------------------------------------------------------

def _spectral(spec: GenSpec, rng) -> Instance:
    from .spectral import check_spectral_stability, spectral_norm
    n, d, k = spec.n, spec.d, spec.k
    if d <= k:
        raise InfeasibleSpecError(f"spectral_certified needs d > k (d={d}, k={k})")
    if spec.margin < 0:
        raise InfeasibleSpecError("margin must be >= 0")
    sizes = _sizes(n, k)
    labels = np.repeat(np.arange(k), sizes)
    noise = np.zeros((n, d))
    noise[:, k:] = rng.standard_normal((n, d - k))
    for j in range(k):
        noise[labels == j] -= noise[labels == j].mean(axis=0)
    nn = spectral_norm(noise)
    if k > 1:
        inv = 1.0 / sizes
        req = spec.gamma * k * (inv[:, None] + inv[None, :]) * nn
        np.fill_diagonal(req, 0.0)
        s = (1 + spec.margin) * req.max() / math.sqrt(2)
    else:
        s = 1.0
    centers = np.zeros((k, d))
    centers[np.arange(k), np.arange(k)] = s
    X = centers[labels] + noise
    scale = k / spectral_norm(X)
    X, centers = X * scale, centers * scale
    ds = Dataset.from_points(X)
    truth = Clustering(labels=labels, centers=centers, p=2.0)
    holds, rep = check_spectral_stability(X, labels, centers, spec.gamma)
    cert = {"holds": bool(holds), "min_slack": rep["min_slack"],
            "min_ratio": rep["min_ratio"], "norm_A": float(k), "norm_A_minus_C": rep["norm_A_minus_C"],
            "margin": spec.margin,
            "certified": bool(holds and rep["min_ratio"] >= 1 + spec.margin - 1e-9)}
    return Instance(ds, truth, cert)


# k-center under (2,0)-stability ----------------------------------------------------------

def _kcenter(spec: GenSpec, rng) -> Instance:
    n, d, k, r = spec.n, spec.d, spec.k, spec.r_star
    sizes = _sizes(n, k)
    rows, labels = [], []
    for j, s in enumerate(sizes):
        c = np.zeros(d)
        c[0] = 5.0 * r * j
        off = _ball(rng, s, d, r)
        off[0] = 0.0
        if s > 1:
            u = rng.standard_normal(d)
            off[1] = r * u / np.linalg.norm(u)      # one point at exactly r*
        rows.append(c + off)
        labels += [j] * s
    X = np.vstack(rows)
    labels = np.array(labels)
    ds = Dataset.from_points(X)
    # exact 1-center radius per cluster with data-point centers
    center_ids, radii = [], []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        D = ds.pairwise(members, members)
        ecc = D.max(axis=1)
        best = int(np.argmin(ecc))
        center_ids.append(int(members[best]))
        radii.append(float(ecc[best]))
    opt = max(radii)
    D = ds.pairwise()
    cross = labels[:, None] != labels[None, :]
    min_cross = float(D[cross].min()) if cross.any() else math.inf
    truth = Clustering(labels=labels, center_ids=center_ids, centers=X[center_ids], p=math.inf)
    cert = {"r_star": opt, "min_cross": min_cross, "certified": bool(min_cross > 2 * opt)}
    return Instance(ds, truth, cert)


# outliers ---------------------------------------------------------------------------------

def _outliers(spec: GenSpec, rng) -> Instance:
    if spec.z >= spec.n - spec.k + 1:
        raise InfeasibleSpecError("z must leave at least k inliers")
    base = GenSpec("separated_clusters", spec.n - spec.z, spec.d, spec.k, spec.seed,
                   jitter=spec.jitter or 0.25)
    inst = _separated(base, rng)
    X = inst.dataset.coords
    diam = float(inst.dataset.pairwise().max())
    mid = X.mean(axis=0)
    radius = np.abs(X - mid).sum(axis=1).max()
    far = []
    for i in range(spec.z):
        u = rng.standard_normal(spec.d)
        u /= np.linalg.norm(u)
        far.append(mid + (radius + spec.spread * max(diam, 1.0)) * (1 + i) * u)
    Y = np.vstack([X] + [np.array(far).reshape(-1, spec.d)])
    labels = np.concatenate([inst.truth.labels, np.full(spec.z, OUTLIER)])
    ds = Dataset.from_points(Y)
    truth = Clustering(labels=labels, center_ids=inst.truth.center_ids,
                       centers=Y[inst.truth.center_ids], z=spec.z)
    base_pos = np.arange(len(X))
    out_pos = np.arange(len(X), len(Y))
    gap = float(ds.pairwise(out_pos, base_pos).min()) if spec.z else math.inf
    cert = {"diameter": diam, "min_outlier_gap": gap,
            "certified": bool(gap >= spec.spread * diam)}
    return Instance(ds, truth, cert)


_BUILDERS = {"separated_clusters": _separated, "as_certified": _as_certified,
             "spectral_certified": _spectral, "kcenter_2as": _kcenter,
             "outlier_injected": _outliers}


def generate(spec: GenSpec) -> Instance:
    """Build an instance, retrying with derived seeds until it certifies."""
    last = None
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt])
        inst = _BUILDERS[spec.kind](spec, rng)
        inst.spec = spec
        inst.certification["attempt"] = attempt
        if inst.certification.get("certified", False):
            return inst
        last = inst.certification
    raise CertificationError(f"{spec.kind} failed certification {MAX_ATTEMPTS} times: {last}")


# graphs with planted cliques ---------------------------------------------------------------

@dataclass
class PlantedGraph:
    adjacency: np.ndarray
    cliques: list
    bad: np.ndarray


def planted_clique_graph(sizes, n_bad: int, seed: int = 0, p_edge: float = 0.5) -> PlantedGraph:
    """Disjoint cliques plus bad nodes, each bad node touching at most one clique.

    Cliques never share an edge or a common neighbor, so every clique is a
    good cluster and the bad nodes are the only noise.
    """
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    n = sum(sizes) + n_bad
    adj = np.zeros((n, n), dtype=bool)
    cliques, start = [], 0
    for s in sizes:
        idx = np.arange(start, start + s)
        adj[np.ix_(idx, idx)] = True
        cliques.append(idx)
        start += s
    bad = np.arange(start, n)
    for b in bad:
        home = rng.integers(-1, len(sizes))
        if home >= 0:
            c = cliques[home]
            touch = c[rng.random(len(c)) < p_edge]
            adj[b, touch] = adj[touch, b] = True
    if n_bad > 1:
        bb = np.triu(rng.random((n_bad, n_bad)) < p_edge, 1)
        bb = bb | bb.T
        adj[np.ix_(bad, bad)] |= bb
    np.fill_diagonal(adj, False)
    return PlantedGraph(adj, cliques, bad)


# sidecar ----------------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(float(x))
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def truth_to_dict(truth: Clustering, certification: dict, spec: Optional[GenSpec] = None) -> dict:
    return _jsonable({
        "labels": truth.labels,
        "center_ids": truth.center_ids,
        "centers": truth.centers,
        "p": truth.p,
        "z": truth.z,
        "certification": certification,
        "spec": asdict(spec) if spec is not None else None,
    })


def truth_from_dict(obj: dict) -> Clustering:
    p = obj.get("p", 1.0)
    p = float(p) if not isinstance(p, str) else float(p)
    return Clustering(labels=obj["labels"], centers=obj.get("centers"),
                      center_ids=obj.get("center_ids"), p=p, z=obj.get("z", 0))


def truth_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".truth.json")


def save_instance(inst: Instance, path: Union[str, Path]) -> Path:
    """Write the dataset to ``path`` and the ground truth to ``<stem>.truth.json``."""
    save_dataset(inst.dataset, path)
    side = truth_path(path)
    side.write_text(json.dumps(truth_to_dict(inst.truth, inst.certification, inst.spec),
                               indent=1, sort_keys=True))
    return side


def load_truth(path: Union[str, Path]) -> tuple[Clustering, dict]:
    obj = json.loads(Path(path).read_text())
    return truth_from_dict(obj), obj.get("certification", {})
