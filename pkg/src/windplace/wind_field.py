"""Gridded hourly wind fields: CSV ingestion, synthetic generation and
bilinear interpolation of the u/v components."""

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import OutOfDomainError, ParseError, SchemaError, ConfigurationError

CSV_HEADER = ["lat", "lon", "hour", "u10", "v10"]
# snapping tolerance in grid-index units, keeps node queries exact
_SNAP = 1e-9


class GeoCoord(NamedTuple):
    lat: float
    lon: float


def _check_axis(axis, name):
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or axis.size == 0:
        raise SchemaError(f"{name} axis must be a non-empty 1-D sequence")
    if axis.size > 1:
        steps = np.diff(axis)
        if np.any(steps <= 0):
            raise SchemaError(f"{name} axis must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
            raise SchemaError(f"{name} axis spacing is not uniform")
    return axis


@dataclass(frozen=True, eq=False)
class WindField:
    """Hourly 10 m wind components on a regular lat/lon raster.

    ``u`` and ``v`` have shape ``(n_lat, n_lon, hours)``. Arrays are made
    read-only on construction.
    """

    lat_axis: np.ndarray
    lon_axis: np.ndarray
    u: np.ndarray
    v: np.ndarray
    name: str = "field"

    def __post_init__(self):
        lat = _check_axis(self.lat_axis, "latitude")
        lon = _check_axis(self.lon_axis, "longitude")
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.shape != v.shape or u.ndim != 3:
            raise SchemaError("u and v must be 3-D arrays of identical shape")
        if u.shape[:2] != (lat.size, lon.size):
            raise SchemaError(
                f"component shape {u.shape[:2]} does not match axes "
                f"({lat.size}, {lon.size})"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise SchemaError("wind components contain missing or non-finite values")
        for arr in (lat, lon, u, v):
            arr.setflags(write=False)
        object.__setattr__(self, "lat_axis", lat)
        object.__setattr__(self, "lon_axis", lon)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self):
        return self.u.shape[:2]

    @property
    def hours(self):
        return self.u.shape[2]

    @property
    def lat_step(self):
        return float(self.lat_axis[1] - self.lat_axis[0]) if self.lat_axis.size > 1 else 0.0

    @property
    def lon_step(self):
        return float(self.lon_axis[1] - self.lon_axis[0]) if self.lon_axis.size > 1 else 0.0

    @property
    def extent(self):
        """``(lat_min, lat_max, lon_min, lon_max)``."""
        return (
            float(self.lat_axis[0]),
            float(self.lat_axis[-1]),
            float(self.lon_axis[0]),
            float(self.lon_axis[-1]),
        )

    def nodes(self):
        """All grid nodes as an ``(n_nodes, 2)`` array of (lat, lon), row-major."""
        lat, lon = np.meshgrid(self.lat_axis, self.lon_axis, indexing="ij")
        return np.column_stack([lat.ravel(), lon.ravel()])

    def node_index(self, lat, lon):
        """Return the (i, j) grid index of a coordinate lying on a node."""
        i = _snap_index(lat, self.lat_axis)
        j = _snap_index(lon, self.lon_axis)
        if i is None or j is None:
            raise OutOfDomainError(f"({lat}, {lon}) is not a grid node")
        return i, j

    def speed(self):
        return np.hypot(self.u, self.v)

    def subgrid(self, lat_slice=slice(None), lon_slice=slice(None)):
        return WindField(
            self.lat_axis[lat_slice],
            self.lon_axis[lon_slice],
            self.u[lat_slice, lon_slice],
            self.v[lat_slice, lon_slice],
            name=self.name,
        )

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.lat_axis, self.lon_axis, self.u, self.v):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _snap_index(x, axis):
    if axis.size == 1:
        return 0 if abs(x - axis[0]) <= 1e-9 else None
    t = (x - axis[0]) / (axis[1] - axis[0])
    r = round(t)
    if abs(t - r) < _SNAP and 0 <= r < axis.size:
        return int(r)
    return None


def _locate(x, axis, what):
    """Cell index and fractional weight of ``x`` along a uniform axis."""
    n = axis.size
    if n == 1:
        if abs(x - axis[0]) > 1e-9:
            raise OutOfDomainError(f"{what} {x} outside degenerate axis {axis[0]}")
        return 0, 0, 0.0
    t = (x - axis[0]) / (axis[1] - axis[0])
    r = round(t)
    if abs(t - r) < _SNAP:
        t = float(r)
    if t < 0 or t > n - 1:
        raise OutOfDomainError(
            f"{what} {x} outside grid extent [{axis[0]}, {axis[-1]}]"
        )
    i = min(int(math.floor(t)), n - 2)
    return i, i + 1, t - i


def _corner_weights(field, at):
    i0, i1, a = _locate(float(at[0]), field.lat_axis, "latitude")
    j0, j1, b = _locate(float(at[1]), field.lon_axis, "longitude")
    return (i0, i1, j0, j1), (a, b)


def bilinear_interp(field, at, hour, component):
    """Interpolate one wind component at ``at`` for a single hour.

    Returns ``(1-a)(1-b) f00 + a(1-b) f10 + (1-a) b f01 + a b f11`` where
    ``a`` and ``b`` are the fractional positions along latitude and longitude.
    """
    if component not in ("u", "v"):
        raise ValueError("component must be 'u' or 'v'")
    if not 0 <= hour < field.hours:
        raise OutOfDomainError(f"hour {hour} outside [0, {field.hours})")
    (i0, i1, j0, j1), (a, b) = _corner_weights(field, at)
    f = getattr(field, component)
    return float(
        (1 - a) * (1 - b) * f[i0, j0, hour]
        + a * (1 - b) * f[i1, j0, hour]
        + (1 - a) * b * f[i0, j1, hour]
        + a * b * f[i1, j1, hour]
    )


def interp_series(field, at):
    """Bilinear u and v time series (each of length ``hours``) at ``at``."""
    (i0, i1, j0, j1), (a, b) = _corner_weights(field, at)
    out = []
    for f in (field.u, field.v):
        out.append(
            (1 - a) * (1 - b) * f[i0, j0]
            + a * (1 - b) * f[i1, j0]
            + (1 - a) * b * f[i0, j1]
            + a * b * f[i1, j1]
        )
    return out[0], out[1]


def write_grid_csv(field, path):
    """Write ``field`` as ``lat,lon,hour,u10,v10`` rows sorted by (lat, lon, hour)."""
    path = Path(path)
    n_lat, n_lon, T = field.u.shape
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        hours = [str(h) for h in range(T)]
        for i in range(n_lat):
            lat = repr(float(field.lat_axis[i]))
            for j in range(n_lon):
                prefix = f"{lat},{float(field.lon_axis[j])!r},"
                us = field.u[i, j].tolist()
                vs = field.v[i, j].tolist()
                fh.writelines(
                    f"{prefix}{h},{uu!r},{vv!r}\n" for h, uu, vv in zip(hours, us, vs)
                )
    return path


def load_grid_csv(path, name=None):
    """Read a wind field from the ``lat,lon,hour,u10,v10`` CSV schema.

    Raises :class:`ParseError` (with line number) on malformed rows and
    :class:`SchemaError` on incomplete grids or irregular axes.
    """
    path = Path(path)
    lats, lons, hrs, us, vs = [], [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=line)
            try:
                lat, lon = float(row[0]), float(row[1])
                hour = int(row[2])
                u, v = float(row[3]), float(row[4])
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            if hour < 0:
                raise ParseError("hour must be non-negative", line=line)
            lats.append(lat)
            lons.append(lon)
            hrs.append(hour)
            us.append(u)
            vs.append(v)
    if not lats:
        raise SchemaError("no data rows")
    lats = np.array(lats)
    lons = np.array(lons)
    hrs = np.array(hrs)
    lat_axis = _check_axis(np.unique(lats), "latitude")
    lon_axis = _check_axis(np.unique(lons), "longitude")
    T = int(hrs.max()) + 1
    ii = np.searchsorted(lat_axis, lats)
    jj = np.searchsorted(lon_axis, lons)
    shape = (lat_axis.size, lon_axis.size, T)
    u = np.full(shape, np.nan)
    v = np.full(shape, np.nan)
    seen = np.zeros(shape, dtype=np.int32)
    np.add.at(seen, (ii, jj, hrs), 1)
    if np.any(seen > 1):
        i, j, h = np.argwhere(seen > 1)[0]
        raise SchemaError(
            f"duplicate cell-hour (lat={lat_axis[i]}, lon={lon_axis[j]}, hour={h})"
        )
    if np.any(seen == 0):
        i, j, h = np.argwhere(seen == 0)[0]
        raise SchemaError(
            f"missing cell-hour (lat={lat_axis[i]}, lon={lon_axis[j]}, hour={h})"
        )
    u[ii, jj, hrs] = us
    v[ii, jj, hrs] = vs
    return WindField(lat_axis, lon_axis, u, v, name=name or path.stem)


@dataclass
class SynthFieldSpec:
    """Parameters of the synthetic AR(1) wind generator.

    Speeds follow ``base_mean + amplitude + noise_std*e + common_std*loading*f``
    where ``e`` is a spatially correlated per-cell AR(1) process and ``f`` a
    region-wide AR(1) factor. ``loading`` of opposite signs in two zones makes
    them anticorrelated; ``noise_scale`` multiplies ``noise_std`` per cell.
    """

    shape: tuple = (10, 10)
    hours: int = 2000
    base_mean: float = 7.0
    amplitude: Optional[np.ndarray] = None
    autocorrelation: float = 0.8
    correlation_length: float = 0.2
    seed: int = 0
    lat0: float = 42.9
    lon0: float = -7.1
    spacing: float = 0.1
    noise_std: float = 2.0
    loading: Optional[np.ndarray] = None
    noise_scale: Optional[np.ndarray] = None
    common_std: float = 0.0
    direction_deg: float = 30.0
    direction_std: float = 20.0
    name: str = "synthetic"

    def validate(self):
        n_lat, n_lon = self.shape
        if n_lat < 1 or n_lon < 1 or self.hours < 1:
            raise ConfigurationError("grid shape and hours must be positive")
        if not 0 <= self.autocorrelation < 1:
            raise ConfigurationError("autocorrelation must lie in [0, 1)")
        if self.correlation_length < 0 or self.noise_std < 0 or self.common_std < 0:
            raise ConfigurationError("length and noise scales must be non-negative")
        for name in ("amplitude", "loading", "noise_scale"):
            arr = getattr(self, name)
            if arr is not None and np.shape(arr) != tuple(self.shape):
                raise ConfigurationError(f"{name} map must have shape {tuple(self.shape)}")
        if self.noise_scale is not None and np.min(self.noise_scale) < 0:
            raise ConfigurationError("noise_scale must be non-negative")


def _ar1(rng, rho, shape, T, innovations=None):
    """AR(1) in the last axis with unit stationary variance."""
    e = np.empty(shape + (T,))
    if innovations is None:
        innovations = rng.standard_normal(shape + (T,))
    scale = math.sqrt(1 - rho * rho)
    e[..., 0] = innovations[..., 0]
    for t in range(1, T):
        e[..., t] = rho * e[..., t - 1] + scale * innovations[..., t]
    return e


def synth_field(spec):
    """Generate a deterministic synthetic :class:`WindField` from ``spec``."""
    spec.validate()
    n_lat, n_lon = spec.shape
    T = spec.hours
    rng = np.random.default_rng(spec.seed)
    lat_axis = spec.lat0 + spec.spacing * np.arange(n_lat)
    lon_axis = spec.lon0 + spec.spacing * np.arange(n_lon)
    n = n_lat * n_lon

    # spatially correlated innovations via a Gaussian-kernel Cholesky factor
    white = rng.standard_normal((n, T))
    if spec.correlation_length > 0 and n > 1:
        glat, glon = np.meshgrid(lat_axis, lon_axis, indexing="ij")
        pts = np.column_stack([glat.ravel(), glon.ravel()])
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        cov = np.exp(-0.5 * d2 / spec.correlation_length**2)
        chol = np.linalg.cholesky(cov + 1e-9 * np.eye(n))
        innov = chol @ white
        innov /= np.sqrt(np.diag(cov + 1e-9 * np.eye(n)))[:, None]
    else:
        innov = white
    e = _ar1(rng, spec.autocorrelation, (n,), T, innovations=innov)
    e = e.reshape(n_lat, n_lon, T)
    common = _ar1(rng, spec.autocorrelation, (), T)
    heading = _ar1(rng, spec.autocorrelation, (), T)

    amp = np.zeros(spec.shape) if spec.amplitude is None else np.asarray(spec.amplitude, float)
    load = np.zeros(spec.shape) if spec.loading is None else np.asarray(spec.loading, float)
    nsc = np.ones(spec.shape) if spec.noise_scale is None else np.asarray(spec.noise_scale, float)
    speed = (
        spec.base_mean
        + amp[:, :, None]
        + spec.noise_std * nsc[:, :, None] * e
        + spec.common_std * load[:, :, None] * common[None, None, :]
    )
    speed = np.maximum(speed, 0.0)
    theta = np.deg2rad(spec.direction_deg + spec.direction_std * heading)
    u = speed * np.cos(theta)[None, None, :]
    v = speed * np.sin(theta)[None, None, :]
    return WindField(lat_axis, lon_axis, u, v, name=spec.name)
