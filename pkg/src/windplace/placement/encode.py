"""Compile a trained IQNN and the placement problem into a MILP.

Variables, per farm ``s`` and substation ``f``:

* ``lat_s``, ``lon_s`` continuous, ``n_s`` integer (turbine count)
* ``a0_j`` scaled inputs, ``z_l_j``/``a_l_j`` pre-/post-activations,
  ``delta_l_j`` binary ReLU indicators (unstable neurons only)
* ``Q_o`` quantiles in MW
* ``u_s_f`` binary connection, ``d_s_f`` distance (tangent cuts), ``w_s_f``
  connected distance that carries the line cost
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import EncodingError, EvaluationError
from .bounds import NeuronBounds
from .geometry import cut_directions, distance_km, km_factors
from .risk import EconSpec, RiskSpec, cvar_weights

INF = math.inf


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    kind: str  # "C", "I" or "B"


@dataclass
class Row:
    name: str
    idx: np.ndarray
    coef: np.ndarray
    sense: str  # "<=", ">=" or "="
    rhs: float


@dataclass
class Fixings:
    """Optional per-farm fixings; ``None`` entries stay free."""

    sites: Optional[Sequence] = None
    sizes: Optional[Sequence] = None


class MilpInstance:
    """Sparse MILP in row form with named variables and rows.

    ``groups`` maps a role (``"lat"``, ``"Q"``, ``"delta"``, ...) to variable
    indices; ``meta`` holds the problem data needed to read a solution back.
    """

    def __init__(self, name="placement"):
        self.name = name
        self.variables = []
        self.rows = []
        self.objective = {}
        self.index = {}
        self.groups = {}
        self.meta = {}
        self.model = None

    def add_var(self, name, lb=0.0, ub=INF, kind="C", group=None):
        if name in self.index:
            raise EncodingError(f"duplicate variable {name}")
        if kind == "B":
            lb, ub = max(0.0, lb), min(1.0, ub)
        self.index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        if group is not None:
            self.groups.setdefault(group, []).append(self.index[name])
        return self.index[name]

    def add_row(self, name, terms, sense, rhs):
        if sense not in ("<=", ">=", "="):
            raise EncodingError(f"bad sense {sense!r}")
        idx = np.array([t[0] for t in terms], dtype=np.int64)
        coef = np.array([t[1] for t in terms], dtype=float)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.variables)):
            raise EncodingError(f"row {name} references an undeclared variable")
        self.rows.append(Row(name, idx, coef, sense, float(rhs)))

    def add_objective(self, idx, coef):
        self.objective[idx] = self.objective.get(idx, 0.0) + float(coef)

    @property
    def n_vars(self):
        return len(self.variables)

    def group(self, role):
        return self.groups.get(role, [])

    def objective_value(self, x):
        return float(sum(c * x[i] for i, c in self.objective.items()))

    def max_violation(self, x):
        """Largest row or bound violation of assignment ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for r in self.rows:
            act = float(r.coef @ x[r.idx]) if r.idx.size else 0.0
            if r.sense == "<=":
                worst = max(worst, act - r.rhs)
            elif r.sense == ">=":
                worst = max(worst, r.rhs - act)
            else:
                worst = max(worst, abs(act - r.rhs))
        for i, v in enumerate(self.variables):
            worst = max(worst, v.lb - x[i], x[i] - v.ub)
        return worst


def _box_filter(cands, boxes):
    if not boxes:
        return list(cands)
    keep = []
    for c in cands:
        if any(b[0] - 1e-9 <= c[0] <= b[1] + 1e-9 and b[2] - 1e-9 <= c[1] <= b[3] + 1e-9
               for b in boxes):
            keep.append(c)
    return keep


def encode(model, econ, risk, substations, bounds, fixings=None, site_boxes=None,
           site_candidates=None, size_stride=1, n_cuts=16, transmission=True,
           ref_lat=None):
    """Build the placement MILP.

    ``site_boxes`` restricts every farm to a union of
    ``(lat_lo, lat_hi, lon_lo, lon_hi)`` boxes; ``site_candidates`` restricts
    farms to a finite list of coordinates; ``size_stride`` forces sizes onto
    multiples of the stride. Transmission rows are emitted only when
    ``transmission`` is set, ``econ.c_line > 0`` and substations are given.
    """
    if bounds is None:
        raise EncodingError("neuron bounds are required")
    if not isinstance(bounds, NeuronBounds) or bounds.model_id != model.fingerprint():
        raise EncodingError("bounds were not computed for this model")
    econ = econ or EconSpec()
    risk = risk or RiskSpec()
    taus = model.ladder.as_array()
    try:
        q_weights = cvar_weights(taus, risk.one_minus_alpha)
    except EvaluationError as exc:
        raise EncodingError(str(exc)) from None
    d = model.layers[0]
    if d % 3:
        raise EncodingError("input width must be 3 x number of farms")
    S = d // 3
    N = int(econ.total_turbines)
    fixings = fixings or Fixings()
    site_boxes = [tuple(map(float, b)) for b in (site_boxes or [])]
    sc = model.scaler
    inst = MilpInstance()
    inst.model = model

    # decision variables
    X = [None] * d
    for s in range(S):
        jl, jo, jn = 2 * s, 2 * s + 1, 2 * S + s
        lat_lb, lat_ub = sc.x_min[jl], sc.x_max[jl]
        lon_lb, lon_ub = sc.x_min[jo], sc.x_max[jo]
        if len(site_boxes) == 1:
            b = site_boxes[0]
            lat_lb, lat_ub = max(lat_lb, b[0]), min(lat_ub, b[1])
            lon_lb, lon_ub = max(lon_lb, b[2]), min(lon_ub, b[3])
        elif site_boxes:
            lat_lb = max(lat_lb, min(b[0] for b in site_boxes))
            lat_ub = min(lat_ub, max(b[1] for b in site_boxes))
            lon_lb = max(lon_lb, min(b[2] for b in site_boxes))
            lon_ub = min(lon_ub, max(b[3] for b in site_boxes))
        if fixings.sites is not None and fixings.sites[s] is not None:
            lat_lb = lat_ub = float(fixings.sites[s][0])
            lon_lb = lon_ub = float(fixings.sites[s][1])
        n_lb, n_ub = max(0.0, sc.x_min[jn]), min(float(N), sc.x_max[jn])
        if fixings.sizes is not None and fixings.sizes[s] is not None:
            n_lb = n_ub = float(fixings.sizes[s])
        X[jl] = inst.add_var(f"lat_{s + 1}", lat_lb, lat_ub, "C", "lat")
        X[jo] = inst.add_var(f"lon_{s + 1}", lon_lb, lon_ub, "C", "lon")
        X[jn] = inst.add_var(f"n_{s + 1}", n_lb, n_ub, "I", "n")

    # finite candidate sites
    cands = None
    if site_candidates is not None:
        cands = _box_filter([tuple(map(float, c)) for c in site_candidates], site_boxes)
        for s in range(S):
            sel = [inst.add_var(f"pick_{s + 1}_{g + 1}", 0, 1, "B", "pick")
                   for g in range(len(cands))]
            inst.add_row(f"pick_one_{s + 1}", [(i, 1.0) for i in sel], "=", 1.0)
            for k, role in ((0, "lat"), (1, "lon")):
                inst.add_row(
                    f"pick_{role}_{s + 1}",
                    [(X[2 * s + k], 1.0)] + [(i, -c[k]) for i, c in zip(sel, cands)],
                    "=", 0.0,
                )
    elif len(site_boxes) > 1:
        for s in range(S):
            sel = [inst.add_var(f"box_{s + 1}_{b + 1}", 0, 1, "B", "box")
                   for b in range(len(site_boxes))]
            inst.add_row(f"box_one_{s + 1}", [(i, 1.0) for i in sel], "=", 1.0)
            for k, (lo_k, hi_k, role) in enumerate(((0, 1, "lat"), (2, 3, "lon"))):
                xi = X[2 * s + k]
                inst.add_row(f"box_{role}_lo_{s + 1}",
                             [(xi, 1.0)] + [(i, -b[lo_k]) for i, b in zip(sel, site_boxes)],
                             ">=", 0.0)
                inst.add_row(f"box_{role}_hi_{s + 1}",
                             [(xi, 1.0)] + [(i, -b[hi_k]) for i, b in zip(sel, site_boxes)],
                             "<=", 0.0)

    if size_stride and int(size_stride) > 1:
        k = int(size_stride)
        for s in range(S):
            m = inst.add_var(f"m_{s + 1}", 0, N // k, "I", "stride")
            inst.add_row(f"stride_{s + 1}", [(X[2 * S + s], 1.0), (m, -float(k))], "=", 0.0)

    # input scaling
    span = sc.x_max - sc.x_min
    a_prev = []
    box_lo, box_hi = np.empty(d), np.empty(d)
    for j in range(d):
        v = inst.variables[X[j]]
        box_lo[j] = (v.lb - sc.x_min[j]) / span[j]
        box_hi[j] = (v.ub - sc.x_min[j]) / span[j]
        # bounds on a0 stay at [0, 1]: duplicating fixed values here trips CBC presolve
        a0 = inst.add_var(f"a0_{j + 1}", 0.0, 1.0, "C", "a0")
        inst.add_row(f"scale_{j + 1}", [(a0, 1.0), (X[j], -1.0 / span[j])], "=",
                     -sc.x_min[j] / span[j])
        a_prev.append(a0)
    if box_lo.min() < -1e-9 or box_hi.max() > 1 + 1e-9:
        raise EncodingError("decision bounds exceed the scaler domain")
    if not bounds.covers(np.clip(box_lo, 0, 1), np.clip(box_hi, 0, 1)):
        raise EncodingError("neuron bounds do not cover the feasible input box")

    # network with big-M ReLU rows
    n_binary = 0
    for l, (w, b) in enumerate(zip(model.weights, model.biases), start=1):
        z_lo, z_hi = bounds.z_lo[l - 1], bounds.z_hi[l - 1]
        acts = []
        for j in range(w.shape[0]):
            z = inst.add_var(f"z_{l}_{j + 1}", z_lo[j], z_hi[j], "C", f"z{l}")
            terms = [(z, 1.0)] + [(a_prev[i], -w[j, i]) for i in range(w.shape[1])
                                  if w[j, i] != 0.0]
            inst.add_row(f"lin_{l}_{j + 1}", terms, "=", b[j])
            a = inst.add_var(f"a_{l}_{j + 1}", 0.0, max(0.0, z_hi[j]), "C", f"a{l}")
            if z_hi[j] <= 0:
                pass
            elif z_lo[j] >= 0:
                inst.add_row(f"pass_{l}_{j + 1}", [(a, 1.0), (z, -1.0)], "=", 0.0)
            else:
                dlt = inst.add_var(f"delta_{l}_{j + 1}", 0, 1, "B", "delta")
                n_binary += 1
                inst.add_row(f"relu_ge_{l}_{j + 1}", [(a, 1.0), (z, -1.0)], ">=", 0.0)
                inst.add_row(f"relu_lo_{l}_{j + 1}",
                             [(a, 1.0), (z, -1.0), (dlt, -z_lo[j])], "<=", -z_lo[j])
                inst.add_row(f"relu_hi_{l}_{j + 1}", [(a, 1.0), (dlt, -z_hi[j])], "<=", 0.0)
            acts.append(a)
        a_prev = acts

    # quantile chain
    R = sc.y_range
    q_hi = sc.y_min + R * np.cumsum(np.maximum(bounds.z_hi[-1], 0.0))
    Q = []
    for o, a in enumerate(a_prev):
        q = inst.add_var(f"Q_{o + 1}", sc.y_min, q_hi[o], "C", "Q")
        if o == 0:
            inst.add_row("quant_1", [(q, 1.0), (a, -R)], "=", sc.y_min)
        else:
            inst.add_row(f"quant_{o + 1}", [(q, 1.0), (Q[-1], -1.0), (a, -R)], "=", 0.0)
        Q.append(q)

    inst.add_row("budget", [(X[2 * S + s], 1.0) for s in range(S)], "=", float(N))

    revenue_scale = econ.hours_per_year * econ.lambda_ppa
    for q, wq in zip(Q, q_weights):
        if wq:
            inst.add_objective(q, -revenue_scale * wq)

    lat_lo_r, lat_hi_r = float(sc.x_min[0]), float(sc.x_max[0])
    if ref_lat is None:
        ref_lat = 0.5 * (lat_lo_r + lat_hi_r)
    subs = [tuple(map(float, f)) for f in (substations or [])]
    use_lines = bool(transmission and econ.c_line > 0 and subs)
    if use_lines:
        kx, ky = km_factors(ref_lat)
        cx, sy = cut_directions(n_cuts)
        for s in range(S):
            lat_v = inst.variables[X[2 * s]]
            lon_v = inst.variables[X[2 * s + 1]]
            corners = [(la, lo) for la in (lat_v.lb, lat_v.ub) for lo in (lon_v.lb, lon_v.ub)]
            us = []
            for f, sub in enumerate(subs):
                dmax = max(distance_km(c, sub, ref_lat) for c in corners) * (1 + 1e-6) + 1e-6
                u = inst.add_var(f"u_{s + 1}_{f + 1}", 0, 1, "B", "u")
                dv = inst.add_var(f"d_{s + 1}_{f + 1}", 0.0, dmax, "C", "d")
                wv = inst.add_var(f"w_{s + 1}_{f + 1}", 0.0, dmax, "C", "w")
                for k in range(n_cuts):
                    # d >= c_k * kx (lon - lon_f) + s_k * ky (lat - lat_f)
                    inst.add_row(
                        f"cut_{s + 1}_{f + 1}_{k + 1}",
                        [(dv, 1.0), (X[2 * s + 1], -cx[k] * kx), (X[2 * s], -sy[k] * ky)],
                        ">=", -cx[k] * kx * sub[1] - sy[k] * ky * sub[0],
                    )
                inst.add_row(f"link_{s + 1}_{f + 1}", [(wv, 1.0), (dv, -1.0), (u, -dmax)],
                             ">=", -dmax)
                inst.add_objective(wv, econ.c_line)
                us.append(u)
            inst.add_row(f"assign_{s + 1}", [(u, 1.0) for u in us], "=", 1.0)

    inst.meta.update(
        n_farms=S, taus=taus.tolist(), one_minus_alpha=risk.one_minus_alpha,
        econ=econ, risk=risk, substations=subs, ref_lat=ref_lat, n_cuts=n_cuts,
        transmission=use_lines, site_candidates=cands, site_boxes=site_boxes,
        size_stride=int(size_stride or 1), fixings=fixings, model_id=model.fingerprint(),
        n_binary_relu=n_binary, input_box=(box_lo, box_hi),
    )
    return inst
