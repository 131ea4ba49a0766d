"""Accuracy of the quantile surrogate against empirical quantiles.

Two evaluations live here: held-out error metrics per configuration group,
and the leave-center-out comparison against a bilinear-interpolation
baseline on interior grid vertices.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .iqnn import QuantileLadder, TrainConfig, default_ladder, init_model, predict, train
from .power_model import power_cube, power_output, wind_speed
from .sample_factory import fit_scaler, generate_samples, split
from .wind_field import interp_series

RESIDUAL_HEADER = ["tau", "method", "vertex_lat", "vertex_lon", "residual_mw"]


def _taus(ladder):
    if ladder is None:
        ladder = default_ladder()
    return ladder.as_array() if isinstance(ladder, QuantileLadder) else np.asarray(ladder, float)


def min_rows(taus):
    """Smallest group size that resolves the top level of ``taus``."""
    return int(math.ceil(1.0 / (1.0 - float(np.max(taus))) - 1e-9))


def empirical_quantiles(y, ladder=None, group=None):
    """Order-statistic quantiles with linear interpolation between ranks."""
    taus = _taus(ladder)
    y = np.asarray(y, dtype=float).ravel()
    need = min_rows(taus)
    if y.size < need:
        label = "" if group is None else f" {group}"
        raise EvaluationError(f"group{label} has {y.size} rows, needs >= {need}")
    return np.quantile(y, taus)


def _predictor(model):
    return model if callable(model) else (lambda X: predict(model, X))


def eval_metrics(model, held_out, ladder=None):
    """MAE and RMSE of predicted versus empirical quantiles.

    ``model`` is an :class:`~windplace.iqnn.IqnnModel` or any callable mapping
    raw features ``(n, 6)`` to quantiles ``(n, O)``. Each configuration group
    contributes one error vector; ``avg_rmse`` averages the per-level RMSE.
    """
    if ladder is None:
        ladder = getattr(model, "ladder", None)
    taus = _taus(ladder)
    held_out.require_nonempty("held-out set")
    firsts, emp = [], []
    for gid, idx in held_out.groups():
        emp.append(empirical_quantiles(held_out.y[idx], taus, group=gid))
        firsts.append(held_out.X[idx[0]])
    Q = np.asarray(_predictor(model)(np.asarray(firsts)))
    err = Q - np.asarray(emp)
    mae_tau = np.abs(err).mean(axis=0)
    rmse_tau = np.sqrt((err ** 2).mean(axis=0))
    return {
        "avg_mae": float(mae_tau.mean()),
        "avg_rmse": float(rmse_tau.mean()),
        "n_groups": int(err.shape[0]),
        "per_tau": [
            {"tau": float(t), "mae": float(a), "rmse": float(r)}
            for t, a, r in zip(taus, mae_tau, rmse_tau)
        ],
    }


def center_vertices(field):
    """Interior vertices at odd (row, col) indices.

    Their diagonal neighbours ``(i +- 1, j +- 1)`` are never centers, so all
    centers can be held out together while every baseline corner stays
    observed.
    """
    n_lat, n_lon = field.shape
    out = [(i, j) for i in range(1, n_lat - 1, 2) for j in range(1, n_lon - 1, 2)]
    if not out:
        raise ConfigurationError(f"grid {field.shape} has no interior center vertices")
    return out


def center_mask(field, centers=None):
    mask = np.zeros(field.shape, dtype=bool)
    for i, j in centers or center_vertices(field):
        mask[i, j] = True
    return mask


@dataclass
class LcoConfig:
    """Settings for a leave-center-out run."""

    n_iters: int = 600
    hours_per_iter: int = 300
    total_turbines: int = 40
    hidden: tuple = (16, 16)
    hyper: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=40))
    partners_per_center: int = 4
    seed: int = 0


def lco_configs(field, centers, cfg):
    """Evaluation configurations ``(center, partner, n1, n2)`` per center.

    Partners are non-center nodes; ``n1`` is at least one so the center
    always carries turbines.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    mask = center_mask(field, centers)
    partners = np.argwhere(~mask)
    out = []
    for c in centers:
        pick = rng.choice(len(partners), size=min(cfg.partners_per_center, len(partners)),
                          replace=False)
        for p in pick:
            n1 = int(rng.integers(1, cfg.total_turbines + 1))
            out.append((tuple(c), tuple(partners[p]), n1, cfg.total_turbines - n1))
    return out


def _config_features(field, configs):
    lat, lon = field.lat_axis, field.lon_axis
    return np.array([
        [lat[c[0]], lon[c[1]], lat[p[0]], lon[p[1]], n1, n2]
        for c, p, n1, n2 in configs
    ])


def baseline_power(field, curve, vertex):
    """Per-turbine power series at ``vertex`` from its four diagonal neighbours.

    u and v are bilinearly interpolated on the stride-2 sub-lattice (the
    vertex sits at the cell center) and then converted through the curve.
    """
    i, j = vertex
    sub = field.subgrid(slice(i - 1, i + 2, 2), slice(j - 1, j + 2, 2))
    u, v = interp_series(sub, (field.lat_axis[i], field.lon_axis[j]))
    return power_output(curve, wind_speed(u, v))


@dataclass(eq=False)
class QuantileResidualReport:
    """Signed residuals (prediction minus empirical, MW) per configuration and level."""

    taus: np.ndarray
    vertices: list
    configs: list
    residuals: dict
    meta: dict = field(default_factory=dict)

    @property
    def methods(self):
        return sorted(self.residuals)

    def summary(self):
        out = {}
        for m, r in self.residuals.items():
            out[m] = {
                "mean": r.mean(axis=0).tolist(),
                "median_abs": np.median(np.abs(r), axis=0).tolist(),
            }
        return out

    def better_fraction(self, method="iqnn", other="bilinear", lo=0.1, hi=0.97):
        """Share of levels in ``[lo, hi]`` where ``method`` has the smaller median |residual|."""
        sel = (self.taus >= lo - 1e-9) & (self.taus <= hi + 1e-9)
        a = np.median(np.abs(self.residuals[method]), axis=0)[sel]
        b = np.median(np.abs(self.residuals[other]), axis=0)[sel]
        return float(np.mean(a < b))

    def to_dict(self):
        return {
            "taus": self.taus.tolist(),
            "vertices": [list(map(float, v)) for v in self.vertices],
            "configs": self.configs,
            "summary": self.summary(),
            "residuals": {m: r.tolist() for m, r in self.residuals.items()},
            "meta": self.meta,
        }

    def write(self, json_path, csv_path=None):
        json_path = Path(json_path)
        json_path.write_text(json.dumps(self.to_dict(), indent=1))
        csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESIDUAL_HEADER)
            for m in self.methods:
                for k, (lat, lon) in enumerate(self.vertices):
                    for t, r in zip(self.taus, self.residuals[m][k]):
                        w.writerow([repr(float(t)), m, repr(float(lat)), repr(float(lon)),
                                    repr(float(r))])
        return json_path, csv_path


def residual_report(field, curve, configs, ladder=None, model=None):
    """Residuals at the given configurations against all-hours empirical quantiles.

    The bilinear baseline replaces the center's series with its interpolated
    one; ``model`` (optional) adds the surrogate's residuals.
    """
    taus = _taus(ladder if ladder is not None else getattr(model, "ladder", None))
    P = power_cube(field, curve)
    truth, base = [], []
    for c, p, n1, n2 in configs:
        pc, pp = P[c], P[p]
        truth.append(empirical_quantiles(n1 * pc + n2 * pp, taus))
        base.append(empirical_quantiles(n1 * baseline_power(field, curve, c) + n2 * pp, taus))
    truth = np.asarray(truth)
    residuals = {"bilinear": np.asarray(base) - truth}
    if model is not None:
        residuals["iqnn"] = predict(model, _config_features(field, configs)) - truth
    vertices = [(field.lat_axis[c[0]], field.lon_axis[c[1]]) for c, _, _, _ in configs]
    cfg_list = [
        {"center": list(map(int, c)), "partner": list(map(int, p)), "n1": n1, "n2": n2}
        for c, p, n1, n2 in configs
    ]
    return QuantileResidualReport(taus, vertices, cfg_list, residuals)


def train_without_centers(field, curve, centers, cfg, ladder=None):
    """Sample and train with the ``centers`` removed from the candidate sites."""
    ladder = ladder or default_ladder()
    allowed = ~center_mask(field, centers)
    samples = generate_samples(
        field, curve, n_iters=cfg.n_iters, hours_per_iter=cfg.hours_per_iter,
        total_turbines=cfg.total_turbines, seed=cfg.seed, allowed_nodes=allowed,
    )
    tr, va, _ = split(samples, (0.85, 0.15, 0.0), seed=cfg.seed)
    model = init_model([6, *cfg.hidden, len(ladder)], ladder, fit_scaler(tr), seed=cfg.seed)
    model, history = train(model, tr, va, cfg.hyper)
    model.meta["data_hash"] = samples.content_hash()
    return model, history


def leave_center_out(field, curve, cfg=None, ladder=None):
    """Hold out all centers jointly, retrain once, and compare with the baseline.

    Returns ``(report, model)``.
    """
    cfg = cfg or LcoConfig()
    centers = center_vertices(field)
    model, history = train_without_centers(field, curve, centers, cfg, ladder)
    report = residual_report(field, curve, lco_configs(field, centers, cfg), model=model)
    report.meta = {
        "centers": [list(c) for c in centers],
        "best_epoch": int(history["best_epoch"]),
        "field_id": field.fingerprint(),
        "seed": int(cfg.seed),
    }
    return report, model
