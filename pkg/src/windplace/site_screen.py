"""Site screening: first-order dominance, crossing-curve disparity, clustering.

Sites whose quantile curves cross many others are where the choice of risk
level changes the preferred location; the screen ranks them by disparity,
clusters the scores and turns the top cluster into candidate subregions.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError
from .iqnn import QuantileLadder, default_ladder
from .power_model import power_cube

REFERENCE_SIZE = 20


@dataclass(frozen=True)
class SiteQuantileProfile:
    site: tuple
    quantiles: np.ndarray
    index: tuple = None

    def __post_init__(self):
        q = np.asarray(self.quantiles, dtype=float)
        if np.any(np.diff(q) < 0):
            raise ValueError("profile quantiles must be non-decreasing")
        object.__setattr__(self, "quantiles", q)


def _taus(ladder):
    if ladder is None:
        ladder = default_ladder()
    return ladder.as_array() if isinstance(ladder, QuantileLadder) else np.asarray(ladder, float)


def site_profiles(field, curve, ladder=None, n_turbines=REFERENCE_SIZE):
    """Empirical single-farm quantiles of ``n_turbines`` turbines at every node."""
    taus = _taus(ladder)
    P = n_turbines * power_cube(field, curve)
    Q = np.quantile(P, taus, axis=-1)
    out = []
    for i, lat in enumerate(field.lat_axis):
        for j, lon in enumerate(field.lon_axis):
            out.append(SiteQuantileProfile((float(lat), float(lon)), Q[:, i, j], (i, j)))
    return out


def _matrix(profiles):
    return np.asarray([p.quantiles if isinstance(p, SiteQuantileProfile) else p
                       for p in profiles], dtype=float)


def dominance_filter(profiles):
    """Split profile indices into ``(dominant, non_dominant)``.

    A site is dominant when its curve is at least every other curve at all
    levels and strictly above each of them at some level.
    """
    Q = _matrix(profiles)
    n = len(Q)
    dominant = []
    for a in range(n):
        others = np.delete(Q, a, axis=0)
        if n > 1 and np.all(Q[a] >= others) and np.all(np.any(Q[a] > others, axis=1)):
            dominant.append(a)
    rest = [i for i in range(n) if i not in set(dominant)]
    return dominant, rest


def peel_dominant(profiles, max_rounds=None):
    """Repeatedly remove dominant sites until none remains; returns removed indices."""
    remaining = list(range(len(profiles)))
    Q = _matrix(profiles)
    removed = []
    rounds = 0
    while len(remaining) > 1 and (max_rounds is None or rounds < max_rounds):
        dom, _ = dominance_filter(Q[remaining])
        if not dom:
            break
        removed.extend(remaining[d] for d in dom)
        remaining = [r for k, r in enumerate(remaining) if k not in set(dom)]
        rounds += 1
    return removed, remaining


def pair_disparity(qa, qb, ladder=None):
    """Summed wedge areas between two crossing quantile curves.

    With ``d = qa - qb``, every sign change between consecutive non-zero
    entries ``i < j`` adds ``0.5 * |d_i - d_j| * (tau_j - tau_i)``.
    """
    taus = _taus(ladder)
    d = np.asarray(qa, dtype=float) - np.asarray(qb, dtype=float)
    if d.shape != taus.shape:
        raise ValueError("quantile vectors must match the ladder")
    nz = np.flatnonzero(d != 0)
    if nz.size < 2:
        return 0.0
    i, j = nz[:-1], nz[1:]
    cross = np.sign(d[i]) != np.sign(d[j])
    i, j = i[cross], j[cross]
    return float(np.sum(0.5 * np.abs(d[i] - d[j]) * (taus[j] - taus[i])))


def disparity_matrix(profiles, ladder=None):
    Q = _matrix(profiles)
    n = len(Q)
    D = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            D[a, b] = D[b, a] = pair_disparity(Q[a], Q[b], ladder)
    return D


class KMeans(ClusterMixin, BaseEstimator):
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    sweeps. An empty cluster keeps its previous centroid.

    Attributes ``cluster_centers_``, ``labels_``, ``inertia_``,
    ``inertia_history_`` and ``n_iter_`` are set by :meth:`fit`.
    """

    def __init__(self, n_clusters=3, max_iter=300, tol=1e-9, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _seed(self, X, rng):
        n = X.shape[0]
        centers = [X[rng.integers(n)]]
        for _ in range(1, self.n_clusters):
            d2 = np.min(((X[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            if total == 0:
                centers.append(X[rng.integers(n)])
            else:
                centers.append(X[rng.choice(n, p=d2 / total)])
        return np.asarray(centers, dtype=float)

    @staticmethod
    def _assign(X, C):
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        return d2.argmin(axis=1), d2.min(axis=1)

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = check_array(X)
        if not 1 <= self.n_clusters <= X.shape[0]:
            raise ConfigurationError(
                f"n_clusters={self.n_clusters} must lie in [1, {X.shape[0]}]")
        rng = np.random.default_rng(self.random_state)
        C = self._seed(X, rng)
        history = []
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            labels, d2 = self._assign(X, C)
            history.append(float(d2.sum()))
            new = C.copy()
            for k in range(self.n_clusters):
                members = X[labels == k]
                if len(members):
                    new[k] = members.mean(axis=0)
            shift = float(np.max(np.abs(new - C)))
            C = new
            if shift < self.tol:
                break
        labels, d2 = self._assign(X, C)
        history.append(float(d2.sum()))
        self.cluster_centers_ = C
        self.labels_ = labels
        self.inertia_ = float(d2.sum())
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self._assign(check_array(X), self.cluster_centers_)[0]


def kmeans(values, k=3, seed=0):
    """Cluster labels of ``values`` (1-D scores or 2-D points)."""
    return KMeans(n_clusters=k, random_state=seed).fit(values).labels_


_EIGHT = np.ones((3, 3), dtype=int)


def select_subregions(mask, lat_axis, lon_axis, n_regions=3):
    """Bounding boxes of the largest 8-connected groups in a boolean node mask.

    Returns ``(boxes, short)`` where each box is ``(lat_min, lat_max,
    lon_min, lon_max)`` and ``short`` flags fewer groups than requested.
    """
    mask = np.asarray(mask, dtype=bool)
    lab, n = ndimage.label(mask, structure=_EIGHT)
    groups = []
    for g in range(1, n + 1):
        ii, jj = np.nonzero(lab == g)
        groups.append((ii.size, ii.min(), ii.max(), jj.min(), jj.max()))
    # largest first, then by position for a deterministic order
    groups.sort(key=lambda t: (-t[0], t[1], t[3]))
    boxes = [
        (float(lat_axis[i0]), float(lat_axis[i1]), float(lon_axis[j0]), float(lon_axis[j1]))
        for _, i0, i1, j0, j1 in groups[:n_regions]
    ]
    return boxes, n < n_regions


@dataclass(eq=False)
class ScreenReport:
    sites: list
    dominant: list
    disparity: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    boxes: list
    short: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self, matrix_path=None):
        return {
            "dominant_sites": [list(s) for s in self.dominant],
            "n_sites": len(self.sites),
            "scores": self.scores.tolist(),
            "labels": self.labels.tolist(),
            "subregions": [list(b) for b in self.boxes],
            "fewer_regions_than_requested": bool(self.short),
            "disparity_matrix": None if matrix_path is None else str(matrix_path),
            "meta": self.meta,
        }

    def write(self, json_path):
        json_path = Path(json_path)
        mpath = json_path.with_name(json_path.stem + "_disparity.csv")
        with mpath.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lat", "lon"] + [f"{a:.6f}_{b:.6f}" for a, b in self.sites])
            for (a, b), row in zip(self.sites, self.disparity):
                w.writerow([repr(a), repr(b)] + [repr(float(x)) for x in row])
        json_path.write_text(json.dumps(self.to_dict(mpath.name), indent=1))
        return json_path, mpath


def screen_sites(field, curve, ladder=None, n_turbines=REFERENCE_SIZE, k=3, n_regions=3,
                 seed=0, exclude=None):
    """Run the screen over all grid nodes.

    Dominant sites are peeled off first (and also any ``exclude`` mask
    nodes); disparity scores are the per-site sums over all remaining
    partners. The cluster with the highest centroid gives the subregions.
    """
    profiles = site_profiles(field, curve, ladder, n_turbines)
    removed, remaining = peel_dominant(profiles)
    if exclude is not None:
        ex = np.asarray(exclude, dtype=bool)
        remaining = [r for r in remaining if not ex[profiles[r].index]]
    if len(remaining) < k:
        raise ConfigurationError(f"only {len(remaining)} sites left for {k} clusters")
    D = disparity_matrix([profiles[r] for r in remaining], ladder)
    scores = D.sum(axis=1)
    km = KMeans(n_clusters=k, random_state=seed).fit(scores)
    top = int(np.argmax(km.cluster_centers_[:, 0]))
    mask = np.zeros(field.shape, dtype=bool)
    for r, lab in zip(remaining, km.labels_):
        if lab == top:
            mask[profiles[r].index] = True
    boxes, short = select_subregions(mask, field.lat_axis, field.lon_axis, n_regions)
    return ScreenReport(
        sites=[profiles[r].site for r in remaining],
        dominant=[profiles[r].site for r in removed],
        disparity=D,
        scores=scores,
        labels=km.labels_,
        boxes=boxes,
        short=short,
        meta={"n_turbines": int(n_turbines), "k": int(k), "seed": int(seed)},
    )
