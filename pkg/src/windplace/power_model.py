"""Wind speed to turbine and farm power conversion."""

import csv
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .wind_field import bilinear_interp


@dataclass(frozen=True, eq=False)
class PowerCurve:
    """Piecewise-linear turbine power curve.

    Power is 0 below ``cut_in`` and at or above ``cut_out`` (the rated
    interval is right-open). Between breakpoints power is linearly
    interpolated; above the last breakpoint below cut-out it stays at the
    last breakpoint's power.
    """

    speeds: tuple
    powers: tuple
    cut_in: float
    cut_out: float
    rated_power: float
    name: str = "curve"

    def __post_init__(self):
        s = np.asarray(self.speeds, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if s.ndim != 1 or s.shape != p.shape or s.size < 1:
            raise ConfigurationError("breakpoints must be matching 1-D sequences")
        if np.any(np.diff(s) <= 0):
            raise ConfigurationError("breakpoint speeds must be strictly increasing")
        if np.any(p < 0) or np.any(p > self.rated_power + 1e-12):
            raise ConfigurationError("breakpoint powers must lie in [0, rated_power]")
        if not 0 <= self.cut_in < self.cut_out:
            raise ConfigurationError("need 0 <= cut_in < cut_out")
        object.__setattr__(self, "speeds", tuple(s.tolist()))
        object.__setattr__(self, "powers", tuple(p.tolist()))

    def fingerprint(self):
        payload = json.dumps(
            [self.speeds, self.powers, self.cut_in, self.cut_out, self.rated_power]
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def __call__(self, speed):
        return power_output(self, speed)


def wind_speed(u, v):
    """Horizontal wind speed magnitude ``sqrt(u**2 + v**2)``."""
    return np.hypot(u, v)


def power_output(curve, speed):
    """Per-turbine power (MW) at ``speed`` m/s; scalar or array."""
    speed = np.asarray(speed, dtype=float)
    p = np.interp(speed, curve.speeds, curve.powers)
    on = (speed >= curve.cut_in) & (speed < curve.cut_out)
    out = np.where(on, p, 0.0)
    return float(out) if out.ndim == 0 else out


def farm_production(field, site, n_turbines, hour, curve):
    """Farm output (MW) of ``n_turbines`` identical turbines at ``site``.

    No wake losses: output is count times the single-turbine power.
    """
    if n_turbines < 0:
        raise ConfigurationError("n_turbines must be non-negative")
    u = bilinear_interp(field, site, hour, "u")
    v = bilinear_interp(field, site, hour, "v")
    return n_turbines * power_output(curve, wind_speed(u, v))


def power_cube(field, curve):
    """Per-turbine power at every grid node and hour, shape ``(n_lat, n_lon, T)``."""
    return power_output(curve, field.speed())


def load_power_curve(csv_path, json_path=None):
    """Load a curve from ``speed_ms,power_mw`` CSV plus JSON sidecar.

    The sidecar defaults to the CSV path with a ``.json`` suffix.
    """
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    speeds, powers = [], []
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["speed_ms", "power_mw"]:
            raise FormatError(f"{csv_path}: expected header speed_ms,power_mw")
        for row in reader:
            try:
                speeds.append(float(row["speed_ms"]))
                powers.append(float(row["power_mw"]))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{csv_path}:{reader.line_num}: {exc}") from None
    try:
        meta = json.loads(json_path.read_text(encoding="utf-8"))
        return PowerCurve(
            speeds,
            powers,
            cut_in=float(meta["cut_in"]),
            cut_out=float(meta["cut_out"]),
            rated_power=float(meta["rated_power"]),
            name=meta.get("name", csv_path.stem),
        )
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{json_path}: {exc}") from None


def default_curve():
    """Vestas V90 2.0 MW curve shipped with the package."""
    data = resources.files("windplace") / "data"
    with resources.as_file(data / "v90_2mw.csv") as c, resources.as_file(
        data / "v90_2mw.json"
    ) as j:
        return load_power_curve(c, j)
