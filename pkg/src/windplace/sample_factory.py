"""Monte Carlo training samples for the two-farm production surrogate.

Each Monte Carlo iteration draws a configuration (two distinct grid sites and
an integer turbine split) and emits one row per sampled hour. Rows sharing an
``iter_id`` form a configuration group; splits never break a group apart.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError, FormatError
from .power_model import power_cube

FEATURES = ("lat1", "lon1", "lat2", "lon2", "n1", "n2")
SAMPLE_HEADER = "lat1,lon1,lat2,lon2,n1,n2,y_mw,iter_id,hour"


@dataclass(eq=False)
class SampleSet:
    """Sample rows as column arrays.

    ``X`` holds the six features in :data:`FEATURES` order; ``domain`` records
    the region extent and turbine budget used to build input bounds.
    """

    X: np.ndarray
    y: np.ndarray
    iter_id: np.ndarray
    hour: np.ndarray
    provenance: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.y.shape[0])

    @property
    def n_groups(self):
        return int(np.unique(self.iter_id).size)

    def subset(self, mask):
        return SampleSet(
            self.X[mask], self.y[mask], self.iter_id[mask], self.hour[mask],
            dict(self.provenance), dict(self.domain),
        )

    def groups(self):
        """Yield ``(iter_id, row_indices)`` in ascending ``iter_id`` order."""
        order = np.argsort(self.iter_id, kind="stable")
        ids = self.iter_id[order]
        bounds = np.flatnonzero(np.diff(ids)) + 1
        for chunk in np.split(order, bounds):
            if chunk.size:
                yield int(self.iter_id[chunk[0]]), chunk

    def require_nonempty(self, what="sample set"):
        if len(self) == 0:
            raise ConfigurationError(f"{what} is empty")
        return self

    def log_target(self, eps=1e-3):
        """``log(y + eps)``; analysis only, the embedded surrogate uses raw MW."""
        return np.log(self.y + eps)

    def content_hash(self):
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.iter_id, self.hour):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _config_hash(**kwargs):
    return hashlib.sha256(json.dumps(kwargs, sort_keys=True).encode()).hexdigest()[:16]


def generate_samples(field, curve, n_iters=1000, hours_per_iter=3000,
                     total_turbines=40, seed=0, allowed_nodes=None):
    """Run the Monte Carlo sampler.

    Per iteration: two distinct sites uniformly from the grid nodes (or from
    ``allowed_nodes``, a boolean ``(n_lat, n_lon)`` mask), ``n1`` uniform on
    ``0..total_turbines``, and ``hours_per_iter`` hours without replacement.
    Each iteration uses its own spawned seed stream, so results do not depend
    on evaluation order.
    """
    if n_iters < 1:
        raise ConfigurationError("n_iters must be >= 1")
    if total_turbines < 0:
        raise ConfigurationError("total_turbines must be >= 0")
    T = field.hours
    if not 1 <= hours_per_iter <= T:
        raise ConfigurationError(
            f"hours_per_iter={hours_per_iter} must lie in [1, {T}] (field hours)"
        )
    n_lat, n_lon = field.shape
    if allowed_nodes is None:
        allowed_nodes = np.ones((n_lat, n_lon), dtype=bool)
    allowed_nodes = np.asarray(allowed_nodes, dtype=bool)
    cand = np.flatnonzero(allowed_nodes.ravel())
    if cand.size < 2:
        raise ConfigurationError("need at least two candidate sites")

    power = power_cube(field, curve).reshape(n_lat * n_lon, T)
    nodes = field.nodes()
    H = hours_per_iter
    N = n_iters * H
    X = np.empty((N, 6))
    y = np.empty(N)
    iter_id = np.repeat(np.arange(n_iters), H)
    hour = np.empty(N, dtype=np.int64)
    streams = np.random.SeedSequence(seed).spawn(n_iters)
    for it, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        s1, s2 = rng.choice(cand, size=2, replace=False)
        n1 = int(rng.integers(0, total_turbines + 1))
        n2 = total_turbines - n1
        hrs = rng.choice(T, size=H, replace=False)
        sl = slice(it * H, (it + 1) * H)
        X[sl, 0:2] = nodes[s1]
        X[sl, 2:4] = nodes[s2]
        X[sl, 4] = n1
        X[sl, 5] = n2
        y[sl] = n1 * power[s1, hrs] + n2 * power[s2, hrs]
        hour[sl] = hrs
    lat_min, lat_max, lon_min, lon_max = field.extent
    provenance = {
        "seed": int(seed),
        "field_id": field.fingerprint(),
        "curve_id": curve.fingerprint(),
        "config_hash": _config_hash(
            n_iters=n_iters, hours_per_iter=H, total_turbines=total_turbines,
            seed=int(seed), allowed=allowed_nodes.astype(int).ravel().tolist(),
        ),
    }
    domain = {
        "lat_min": lat_min, "lat_max": lat_max,
        "lon_min": lon_min, "lon_max": lon_max,
        "total_turbines": int(total_turbines),
        "rated_power": float(curve.rated_power),
    }
    return SampleSet(X, y, iter_id, hour, provenance, domain)


def split(samples, ratios=(0.7, 0.15, 0.15), seed=0):
    """Partition by configuration group into (train, val, test)."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ConfigurationError("ratios must be three non-negative values summing to 1")
    ids = np.unique(samples.iter_id)
    G = ids.size
    needed = int(np.count_nonzero(ratios > 0))
    if G < needed:
        raise ConfigurationError(f"{G} groups cannot fill {needed} non-empty partitions")
    perm = np.random.default_rng(seed).permutation(ids)
    n_train = int(round(ratios[0] * G))
    n_val = int(round(ratios[1] * G))
    if ratios[2] == 0:
        n_val = G - n_train
    n_train = min(n_train, G)
    n_val = min(n_val, G - n_train)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(samples.subset(np.isin(samples.iter_id, p)) for p in parts)


@dataclass
class ScalingSpec:
    """Affine input/output bounds used by the surrogate and the MILP."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float
    y_max: float

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=float)
        self.x_max = np.asarray(self.x_max, dtype=float)
        self.y_min = float(self.y_min)
        self.y_max = float(self.y_max)
        if self.x_min.shape != self.x_max.shape:
            raise ConfigurationError("x_min and x_max shapes differ")
        if np.any(self.x_max <= self.x_min):
            raise ConfigurationError("degenerate input bound: need x_max > x_min")
        if not self.y_max > self.y_min:
            raise ConfigurationError("degenerate output bound: need y_max > y_min")

    @property
    def y_range(self):
        return self.y_max - self.y_min

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.x_min) / (self.x_max - self.x_min)

    def invert(self, Xs):
        return np.asarray(Xs, dtype=float) * (self.x_max - self.x_min) + self.x_min

    def to_dict(self):
        return {
            "x_min": [float(v) for v in self.x_min],
            "x_max": [float(v) for v in self.x_max],
            "y_min": self.y_min,
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["x_min"], d["x_max"], d["y_min"], d["y_max"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad scaling spec: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def domain_bounds(domain):
    """Feature bounds from region extent and turbine budget."""
    lo = [domain["lat_min"], domain["lon_min"], domain["lat_min"], domain["lon_min"], 0, 0]
    N = domain["total_turbines"]
    hi = [domain["lat_max"], domain["lon_max"], domain["lat_max"], domain["lon_max"], N, N]
    return np.array(lo, float), np.array(hi, float)


def target_bounds(y, headroom=0.05):
    y = np.asarray(y, dtype=float)
    return min(0.0, float(y.min())), float(y.max()) * (1 + headroom)


def fit_scaler(train, headroom=0.05):
    """Scaling spec for ``train``: domain-extent X bounds, ``[0, 1.05 max y]`` for Y."""
    train.require_nonempty("training set")
    x_min, x_max = domain_bounds(train.domain)
    y_min, y_max = target_bounds(train.y, headroom)
    return ScalingSpec(x_min, x_max, y_min, y_max)


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Min-max scaler with optionally fixed bounds.

    With ``x_min``/``x_max`` given (typically the decision domain) fitting
    only validates shapes; otherwise bounds come from the data.
    """

    def __init__(self, x_min=None, x_max=None):
        self.x_min = x_min
        self.x_max = x_max

    def fit(self, X, y=None):
        X = check_array(X)
        lo = X.min(axis=0) if self.x_min is None else np.asarray(self.x_min, float)
        hi = X.max(axis=0) if self.x_max is None else np.asarray(self.x_max, float)
        if lo.shape != (X.shape[1],) or hi.shape != (X.shape[1],):
            raise ConfigurationError("bounds do not match number of features")
        if np.any(hi <= lo):
            raise ConfigurationError("degenerate input bound: need x_max > x_min")
        self.data_min_ = lo
        self.data_max_ = hi
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X)
        return (X - self.data_min_) / (self.data_max_ - self.data_min_)

    def inverse_transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X)
        return X * (self.data_max_ - self.data_min_) + self.data_min_


def write_samples_csv(samples, path):
    """Write rows as ``lat1,lon1,lat2,lon2,n1,n2,y_mw,iter_id,hour`` plus a
    ``.json`` sidecar carrying provenance and domain."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(SAMPLE_HEADER + "\n")
        X = samples.X.tolist()
        for x, yy, it, h in zip(X, samples.y.tolist(), samples.iter_id.tolist(),
                                samples.hour.tolist()):
            fh.write(
                f"{x[0]!r},{x[1]!r},{x[2]!r},{x[3]!r},{int(x[4])},{int(x[5])},"
                f"{yy!r},{it},{h}\n"
            )
    meta = {"provenance": samples.provenance, "domain": samples.domain}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_samples_csv(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header != SAMPLE_HEADER:
        raise FormatError(f"{path}: expected header {SAMPLE_HEADER}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if data.size == 0:
        data = np.empty((0, 9))
    return SampleSet(
        data[:, :6].copy(), data[:, 6].copy(), data[:, 7].astype(np.int64),
        data[:, 8].astype(np.int64), meta.get("provenance", {}), meta.get("domain", {}),
    )
