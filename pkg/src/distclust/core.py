"""Shared geometry, objective evaluation and clustering comparison.

A :class:`Dataset` is either a set of points in R^d (euclidean metric) or an
explicit distance matrix. Subsets produced by :meth:`Dataset.subset` keep the
global ids of their rows and a reference to the root dataset, so distances
between points living on different simulated machines stay available for
evaluation.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

OUTLIER = -1
EUCLIDEAN = "euclidean"
EXPLICIT = "explicit-matrix"

TRIANGLE_CHECK_FULL_N = 512
TRIANGLE_CHECK_SAMPLES = 20000


class EmptyClusteringWarning(UserWarning):
    """Raised (as a warning) when every point of a clustering is an outlier."""


class Dataset:
    """Points with a metric and global integer ids.

    Exactly one of ``coords`` (n x d) or ``matrix`` (n x n) is set on a root
    dataset. Subsets of an explicit-matrix dataset carry the sliced matrix.
    """

    def __init__(self, coords=None, matrix=None, ids=None, root: Optional["Dataset"] = None):
        if (coords is None) == (matrix is None):
            raise ValueError("exactly one of coords or matrix must be given")
        if coords is not None:
            coords = np.asarray(coords, dtype=np.float64)
            if coords.ndim == 1:
                coords = coords[:, None]
            coords.setflags(write=False)
            n = coords.shape[0]
        else:
            matrix = np.asarray(matrix, dtype=np.float64)
            matrix.setflags(write=False)
            n = matrix.shape[0]
        if ids is None:
            ids = np.arange(n)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ValueError("ids must have one entry per point")
        if len(np.unique(ids)) != n:
            raise ValueError("ids must be unique")
        ids.setflags(write=False)
        self.coords = coords
        self.matrix = matrix
        self.ids = ids
        self.root = root
        self._pos = None

    # construction -----------------------------------------------------
    @classmethod
    def from_points(cls, coords) -> "Dataset":
        return cls(coords=coords)

    @classmethod
    def from_matrix(cls, matrix, check: bool = True, seed: int = 0) -> "Dataset":
        m = np.asarray(matrix, dtype=np.float64)
        if check:
            check_metric_matrix(m, seed=seed)
        return cls(matrix=m)

    # basic properties -------------------------------------------------
    @property
    def metric(self) -> str:
        return EUCLIDEAN if self.coords is not None else EXPLICIT

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.coords.shape[1] if self.coords is not None else 0

    @property
    def top(self) -> "Dataset":
        return self.root if self.root is not None else self

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d}, metric={self.metric!r})"

    def position(self, pid: int) -> int:
        if self._pos is None:
            self._pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            return self._pos[int(pid)]
        except KeyError:
            raise KeyError(f"unknown point id {pid}") from None

    def positions(self, pids) -> np.ndarray:
        return np.array([self.position(i) for i in np.atleast_1d(pids)], dtype=np.int64)

    def subset(self, positions) -> "Dataset":
        """Rows at ``positions`` (not ids) as a new dataset sharing the root."""
        positions = np.asarray(positions, dtype=np.int64)
        root = self.top
        if self.coords is not None:
            return Dataset(coords=self.coords[positions], ids=self.ids[positions], root=root)
        return Dataset(matrix=self.matrix[np.ix_(positions, positions)],
                       ids=self.ids[positions], root=root)

    def subset_ids(self, pids) -> "Dataset":
        return self.subset(self.positions(pids))

    # distances --------------------------------------------------------
    def pairwise(self, a=None, b=None) -> np.ndarray:
        """Distance matrix between rows ``a`` and rows ``b`` (positions)."""
        a = np.arange(self.n) if a is None else np.asarray(a, dtype=np.int64)
        b = np.arange(self.n) if b is None else np.asarray(b, dtype=np.int64)
        if self.coords is not None:
            return cdist(self.coords[a], self.coords[b])
        return self.matrix[np.ix_(a, b)].copy()

    def dist_to_ids(self, center_ids) -> np.ndarray:
        """n x k distances from every row to root points ``center_ids``."""
        root = self.top
        cpos = root.positions(center_ids)
        if self.coords is not None:
            return cdist(self.coords, root.coords[cpos])
        return root.matrix[np.ix_(root.positions(self.ids), cpos)]

    def dist_to_coords(self, centers) -> np.ndarray:
        if self.coords is None:
            raise ValueError("arbitrary center coordinates need a euclidean dataset")
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, self.d)
        return cdist(self.coords, centers)


def check_metric_matrix(m: np.ndarray, seed: int = 0, tol: float = 1e-9) -> None:
    """Validate an explicit distance matrix; raises ValueError on violation."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(m, m.T, atol=tol):
        raise ValueError("distance matrix is not symmetric")
    if (m < -tol).any():
        raise ValueError("distance matrix has negative entries")
    if np.abs(np.diag(m)).max(initial=0.0) > tol:
        raise ValueError("distance matrix has a nonzero diagonal")
    n = m.shape[0]
    scale = tol * max(1.0, float(m.max(initial=0.0)))
    if n <= TRIANGLE_CHECK_FULL_N:
        for w in range(n):
            if (m > m[:, w][:, None] + m[w, :][None, :] + scale).any():
                raise ValueError(f"triangle inequality violated through point {w}")
    else:
        rng = np.random.default_rng(seed)
        u, v, w = rng.integers(0, n, size=(3, TRIANGLE_CHECK_SAMPLES))
        bad = m[u, v] > m[u, w] + m[w, v] + scale
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"triangle inequality violated on ({u[i]}, {v[i]}, {w[i]})")


@dataclass
class WeightedPointSet:
    """Points of a dataset with positive integer multiplicities."""

    ds: Dataset
    weights: np.ndarray = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(self.ds.n, dtype=np.int64)
        w = np.asarray(self.weights)
        if w.shape != (self.ds.n,):
            raise ValueError("one weight per point required")
        if not np.all(w == np.round(w)) or (w < 1).any():
            raise ValueError("weights must be positive integers")
        self.weights = w.astype(np.int64)

    @property
    def n(self) -> int:
        return self.ds.n

    @property
    def total(self) -> int:
        return int(self.weights.sum())

    def expand(self) -> tuple[Dataset, np.ndarray]:
        """Unit-weight copy; entry j becomes ``weights[j]`` consecutive rows.

        Returns the expanded dataset and, per row, the index of its entry.
        """
        owner = np.repeat(np.arange(self.n), self.weights)
        ds = self.ds
        if ds.coords is not None:
            return Dataset(coords=ds.coords[owner]), owner
        return Dataset(matrix=ds.matrix[np.ix_(owner, owner)]), owner


@dataclass
class Clustering:
    """Centers plus a label per entry (``OUTLIER`` for dropped entries).

    ``centers`` holds coordinates (euclidean mode); ``center_ids`` holds root
    ids when centers are data points. ``outlier_weight`` is only needed for
    weighted inputs where part of an entry's weight is discarded.
    """

    labels: np.ndarray
    centers: Optional[np.ndarray] = None
    center_ids: Optional[np.ndarray] = None
    p: float = 1.0
    z: float = 0
    outlier_weight: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.centers is None and self.center_ids is None:
            raise ValueError("a clustering needs centers or center_ids")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=np.float64)
            if self.centers.ndim == 1:
                self.centers = self.centers[:, None]
        if self.center_ids is not None:
            self.center_ids = np.asarray(self.center_ids, dtype=np.int64)
        if self.outlier_weight is not None:
            self.outlier_weight = np.asarray(self.outlier_weight, dtype=np.int64)
        if (self.labels >= self.k).any() or (self.labels < OUTLIER).any():
            raise ValueError("labels must lie in {0..k-1} or OUTLIER")

    @property
    def k(self) -> int:
        if self.centers is not None:
            return len(self.centers)
        return len(self.center_ids)

    @property
    def centers_from_data(self) -> bool:
        return self.center_ids is not None

    def outlier_weights(self, weights=None) -> np.ndarray:
        w = np.ones(len(self.labels), dtype=np.int64) if weights is None else np.asarray(weights)
        if self.outlier_weight is not None:
            return self.outlier_weight
        return np.where(self.labels == OUTLIER, w, 0)

    def n_outliers(self, weights=None) -> int:
        return int(self.outlier_weights(weights).sum())


def center_distances(ds: Dataset, c: Clustering) -> np.ndarray:
    """n x k distances from every row of ``ds`` to the centers of ``c``."""
    if ds.metric == EUCLIDEAN and c.centers is not None:
        return ds.dist_to_coords(c.centers)
    if c.center_ids is None:
        raise ValueError("explicit-matrix datasets need data-point centers")
    return ds.dist_to_ids(c.center_ids)


def nearest(dists: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center per row; ties go to the lowest center index."""
    if dists.shape[1] == 0:
        raise ValueError("no centers")
    lab = np.argmin(dists, axis=1)
    return lab, dists[np.arange(len(lab)), lab]


def distance(ds: Dataset, u: int, v: int) -> float:
    """Distance between points with ids ``u`` and ``v``."""
    i, j = ds.position(u), ds.position(v)
    if ds.coords is not None:
        return float(np.linalg.norm(ds.coords[i] - ds.coords[j]))
    return float(ds.matrix[i, j])


def assigned_distances(ds: Dataset, c: Clustering) -> np.ndarray:
    """Distance of each entry to its assigned center (nan for outliers)."""
    if len(c.labels) != ds.n:
        raise ValueError("assignment must cover every point")
    dist = center_distances(ds, c)
    out = np.full(ds.n, np.nan)
    keep = c.labels != OUTLIER
    out[keep] = dist[np.flatnonzero(keep), c.labels[keep]]
    return out


def power_mean_cost(ds: Dataset, c: Clustering, weights=None) -> float:
    """Sum of w * d^p over non-outlier weight; max distance when p is inf."""
    w = np.ones(ds.n, dtype=np.int64) if weights is None else np.asarray(weights)
    kept = w - c.outlier_weights(w)
    if (kept < 0).any():
        raise ValueError("outlier weight exceeds entry weight")
    dist = assigned_distances(ds, c)
    live = (kept > 0) & (c.labels != OUTLIER)
    if not live.any():
        warnings.warn("no non-outlier points; cost is 0", EmptyClusteringWarning, stacklevel=2)
        return 0.0
    if math.isinf(c.p):
        return float(dist[live].max())
    return float(np.sum(kept[live] * dist[live] ** c.p))


def lp_cost(ds: Dataset, c: Clustering, weights=None) -> float:
    """(sum of w * d^p)^(1/p) over non-outliers."""
    s = power_mean_cost(ds, c, weights)
    if math.isinf(c.p):
        return s
    return s ** (1.0 / c.p)


def root_cost(power_sum: float, p: float) -> float:
    return power_sum if math.isinf(p) else power_sum ** (1.0 / p)


LabelsLike = Union[Clustering, Sequence[int], np.ndarray]


def _labels(x: LabelsLike) -> np.ndarray:
    return x.labels if isinstance(x, Clustering) else np.asarray(x, dtype=np.int64)


def agreement_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Counts |A_i ∩ B_j| over non-outlier labels, padded to a square."""
    ka = int(a.max(initial=-1)) + 1
    kb = int(b.max(initial=-1)) + 1
    k = max(ka, kb, 1)
    m = np.zeros((k, k), dtype=np.int64)
    both = (a != OUTLIER) & (b != OUTLIER)
    np.add.at(m, (a[both], b[both]), 1)
    return m


def closeness_error(c1: LabelsLike, c2: LabelsLike, n: Optional[int] = None) -> float:
    """Fraction of points clustered differently, minimized over relabelings.

    Outliers form their own class, matched only to the outlier class of the
    other clustering.
    """
    a, b = _labels(c1), _labels(c2)
    if a.shape != b.shape:
        raise ValueError("clusterings cover different id sets")
    n = len(a) if n is None else n
    if n == 0:
        return 0.0
    m = agreement_matrix(a, b)
    rows, cols = linear_sum_assignment(m, maximize=True)
    agree = int(m[rows, cols].sum()) + int(np.sum((a == OUTLIER) & (b == OUTLIER)))
    return (len(a) - agree) / n


# file formats ------------------------------------------------------------

def load_dataset(path: Union[str, Path], check: bool = True) -> Dataset:
    """Read a CSV (``id,x0,...``) or JSON dataset file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "id":
            raise ValueError("CSV dataset header must start with 'id'")
        ids = np.array([int(r[0]) for r in body], dtype=np.int64)
        coords = np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64)
        order = np.argsort(ids)
        _check_dense(ids)
        return Dataset(coords=coords[order].reshape(len(body), len(header) - 1))
    doc = json.loads(path.read_text())
    metric = doc.get("metric", EUCLIDEAN)
    if metric == EXPLICIT:
        return Dataset.from_matrix(doc["matrix"], check=check)
    if metric != EUCLIDEAN:
        raise ValueError(f"unknown metric {metric!r}")
    pts = doc["points"]
    if pts and isinstance(pts[0], dict):
        ids = np.array([p["id"] for p in pts], dtype=np.int64)
        _check_dense(ids)
        coords = np.array([p["coords"] for p in pts], dtype=np.float64)[np.argsort(ids)]
    else:
        coords = np.array(pts, dtype=np.float64)
    return Dataset(coords=coords)


def _check_dense(ids: np.ndarray) -> None:
    if not np.array_equal(np.sort(ids), np.arange(len(ids))):
        raise ValueError("point ids must be unique and dense in [0, n)")


def save_dataset(ds: Dataset, path: Union[str, Path]) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if ds.coords is None:
            raise ValueError("CSV cannot hold an explicit matrix")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"x{j}" for j in range(ds.d)])
            for i, row in zip(ds.ids, ds.coords):
                w.writerow([int(i)] + [repr(float(x)) for x in row])
        return
    if ds.coords is not None:
        doc = {"metric": EUCLIDEAN,
               "points": [{"id": int(i), "coords": [float(x) for x in row]}
                          for i, row in zip(ds.ids, ds.coords)]}
    else:
        doc = {"metric": EXPLICIT, "matrix": ds.matrix.tolist()}
    path.write_text(json.dumps(doc))


@dataclass(frozen=True)
class AlgorithmProfile:
    """Declared factors of a sequential subroutine.

    ``center_factor`` is how many multiples of the requested center count
    the routine opens; ``ratio`` its declared (or measured) cost factor.
    """

    name: str
    center_factor: float = 1.0
    ratio: float = 1.0
    handles_weights: bool = True
    handles_outliers: bool = False
    handles_capacity: bool = False
    objectives: tuple = (1.0, 2.0, math.inf)
    outlier_slack: float = 1.0
    note: str = ""

    def __post_init__(self):
        if self.center_factor < 1 or self.ratio < 1:
            raise ValueError("center_factor and ratio must be >= 1")


def trim_outliers(dist: np.ndarray, weights: np.ndarray, z: int) -> np.ndarray:
    """Weight to discard per entry: the ``z`` units farthest from their centers.

    For objectives separable over points (sums of d^p, or a max), dropping
    the largest per-unit costs is optimal for fixed centers: swapping a kept
    unit for a dropped cheaper one can only lower the remaining sum/max.
    Equal distances drop the lower-index entry first.
    """
    out = np.zeros(len(dist), dtype=np.int64)
    budget = int(z)
    if budget <= 0:
        return out
    order = np.lexsort((np.arange(len(dist)), -dist))
    for j in order:
        if budget <= 0:
            break
        take = min(int(weights[j]), budget)
        out[j] = take
        budget -= take
    return out


def clustering_from_distances(dists: np.ndarray, weights: np.ndarray, z: int, p: float,
                              centers=None, center_ids=None, **info) -> Clustering:
    """Nearest-center assignment with the ``z`` farthest weight units dropped."""
    lab, dmin = nearest(dists)
    outw = trim_outliers(dmin, weights, z)
    labels = np.where(outw == weights, OUTLIER, lab)
    return Clustering(labels=labels, centers=centers, center_ids=center_ids, p=p, z=z,
                      outlier_weight=outw if outw.any() else None, info=dict(info))


def clustering_for_centers(wps: WeightedPointSet, center_pos, z: int, p: float, **info) -> Clustering:
    """Clustering of ``wps`` using its own rows at ``center_pos`` as centers."""
    ds = wps.ds
    center_pos = np.asarray(center_pos, dtype=np.int64)
    dists = ds.pairwise(None, center_pos)
    centers = ds.coords[center_pos] if ds.coords is not None else None
    return clustering_from_distances(dists, wps.weights, z, p, centers=centers,
                                     center_ids=ds.ids[center_pos], **info)


def cross_distances(a: Dataset, b: Dataset) -> np.ndarray:
    """|a| x |b| distances between rows of two datasets over the same metric."""
    if a.coords is not None and b.coords is not None:
        return cdist(a.coords, b.coords)
    if a.coords is not None or b.coords is not None:
        raise ValueError("cannot mix euclidean and explicit-matrix datasets")
    return a.dist_to_ids(b.ids)
