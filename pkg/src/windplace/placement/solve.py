"""Solver backends and solution auditing for placement instances."""

import itertools
import math
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from importlib.util import find_spec
from pathlib import Path

import numpy as np

from ..errors import BackendError, ConfigurationError
from ..iqnn import predict
from .geometry import distance_km, polyhedral_distance_km
from .lpfile import parse_solution, write_lp
from .risk import cvar_from_quantiles

SOLVER_ENV = "WINDPLACE_SOLVER_CMD"
# CBC's preprocessor wrongly reports some input-fixed instances infeasible
CBC_TEMPLATE = ("{cbc} {lp_path} preprocess off ratio {gap} sec {time_limit} "
                "solve printingOptions all solu {sol_path}")


@dataclass
class PlacementSolution:
    sites: list
    sizes: list
    connections: list  # (farm, substation, true km, modelled km)
    quantiles: np.ndarray
    cvar_mw: float
    cvar_revenue: float
    line_cost: float
    objective: float
    status: str
    gap: float = 0.0
    backend: str = ""
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.status in ("optimal", "feasible")

    def inter_site_km(self, ref_lat):
        if len(self.sites) < 2:
            return 0.0
        return distance_km(self.sites[0], self.sites[1], ref_lat)

    @property
    def total_connection_km(self):
        return float(sum(c[2] for c in self.connections))

    def to_dict(self):
        return {
            "sites": [list(map(float, s)) for s in self.sites],
            "sizes": [int(n) for n in self.sizes],
            "connections": [
                {"farm": s, "substation": f, "distance_km": dk, "model_distance_km": dm}
                for s, f, dk, dm in self.connections
            ],
            "quantiles_mw": [float(q) for q in np.asarray(self.quantiles).ravel()],
            "cvar_mw": self.cvar_mw,
            "cvar_revenue": self.cvar_revenue,
            "line_cost": self.line_cost,
            "objective": self.objective,
            "status": self.status,
            "gap": self.gap,
            "backend": self.backend,
            "wall_time": self.wall_time,
        }


def _empty(status, backend, wall, **extra):
    return PlacementSolution([], [], [], np.array([]), math.nan, math.nan, math.nan,
                             math.nan, status, math.nan, backend, wall, extra)


def _from_assignment(instance, x, status, gap, backend, wall, objective=None):
    meta = instance.meta
    S = meta["n_farms"]
    lat = [x[i] for i in instance.group("lat")]
    lon = [x[i] for i in instance.group("lon")]
    sizes = [int(round(x[i])) for i in instance.group("n")]
    Q = np.array([x[i] for i in instance.group("Q")])
    econ = meta["econ"]
    cvar = cvar_from_quantiles(Q, meta["taus"], meta["one_minus_alpha"])
    revenue = econ.hours_per_year * econ.lambda_ppa * cvar
    subs = meta["substations"]
    conns = []
    line_cost = 0.0
    if meta["transmission"]:
        F = len(subs)
        u = np.array([x[i] for i in instance.group("u")]).reshape(S, F)
        w = np.array([x[i] for i in instance.group("w")]).reshape(S, F)
        for s in range(S):
            f = int(np.argmax(u[s]))
            site = (lat[s], lon[s])
            conns.append((s, f, distance_km(site, subs[f], meta["ref_lat"]), float(w[s, f])))
        line_cost = econ.c_line * float(w.sum())
    else:
        conns = _nearest_connections(list(zip(lat, lon)), subs, meta["ref_lat"],
                                     meta["n_cuts"])
    obj = line_cost - revenue if objective is None else float(objective)
    return PlacementSolution(list(zip(lat, lon)), sizes, conns, Q, cvar, revenue,
                             line_cost, obj, status, gap, backend, wall,
                             {"assignment": x})


def _nearest_connections(sites, subs, ref_lat, n_cuts):
    conns = []
    for s, site in enumerate(sites):
        if not subs:
            continue
        dm = [float(polyhedral_distance_km(site, f, ref_lat, n_cuts)) for f in subs]
        f = int(np.argmin(dm))
        conns.append((s, f, distance_km(site, subs[f], ref_lat), dm[f]))
    return conns


def find_cbc():
    """Path to a CBC binary: ``$PATH`` first, then the copy bundled with PuLP."""
    exe = shutil.which("cbc")
    if exe:
        return exe
    spec = find_spec("pulp")
    if spec is None or not spec.submodule_search_locations:
        return None
    root = Path(list(spec.submodule_search_locations)[0]) / "solverdir" / "cbc"
    for sub in ("linux/i64", "linux/64", "linux/arm64", "osx/i64", "osx/64"):
        cand = root / sub / "cbc"
        if cand.exists():
            return str(cand)
    return None


def default_solver_cmd():
    cmd = os.environ.get(SOLVER_ENV)
    if cmd:
        return cmd
    cbc = find_cbc()
    if cbc is None:
        return None
    return CBC_TEMPLATE.replace("{cbc}", shlex.quote(cbc))


def _solve_external(instance, solver_cmd, gap, time_limit, workdir):
    template = solver_cmd or default_solver_cmd()
    if not template:
        raise BackendError(f"no external solver configured (set {SOLVER_ENV})")
    if "{lp_path}" not in template or "{sol_path}" not in template:
        raise ConfigurationError("solver command needs {lp_path} and {sol_path}")
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        lp = Path(tmp) / "placement.lp"
        sol = Path(tmp) / "placement.sol"
        write_lp(instance, lp)
        cmd = template.format(lp_path=shlex.quote(str(lp)), sol_path=shlex.quote(str(sol)),
                              gap=gap, time_limit=time_limit)
        proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True,
                              timeout=None if time_limit is None else time_limit + 60)
        output = proc.stdout + proc.stderr
        if proc.returncode != 0:
            raise BackendError(f"solver exited with status {proc.returncode}", output)
        if not sol.exists():
            raise BackendError("solver produced no solution file", output)
        parsed = parse_solution(sol, instance)
    m = re.search(r"Gap:\s+([-+\d.eE]+)", output)
    reported_gap = float(m.group(1)) if m else (0.0 if parsed["status"] == "optimal" else math.nan)
    status = parsed["status"]
    if status == "stopped":
        status = "feasible" if parsed["values"] else "time_limit"
    if status not in ("optimal", "feasible"):
        return status, None, math.nan, None
    x = np.zeros(instance.n_vars)
    for name, val in parsed["values"].items():
        x[instance.index[name]] = val
    return status, x, reported_gap, parsed["objective"]


def _solve_scipy(instance, gap, time_limit):
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import csr_matrix

    n = instance.n_vars
    c = np.zeros(n)
    for i, v in instance.objective.items():
        c[i] = v
    rows, cols, vals, lo, hi = [], [], [], [], []
    for k, r in enumerate(instance.rows):
        rows.extend([k] * r.idx.size)
        cols.extend(r.idx.tolist())
        vals.extend(r.coef.tolist())
        lo.append(r.rhs if r.sense in (">=", "=") else -np.inf)
        hi.append(r.rhs if r.sense in ("<=", "=") else np.inf)
    A = csr_matrix((vals, (rows, cols)), shape=(len(instance.rows), n))
    integrality = np.array([0 if v.kind == "C" else 1 for v in instance.variables])
    bounds = Bounds([v.lb for v in instance.variables], [v.ub for v in instance.variables])
    options = {"mip_rel_gap": gap, "disp": False}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c, constraints=LinearConstraint(A, lo, hi), integrality=integrality,
               bounds=bounds, options=options)
    if res.status == 2:
        return "infeasible", None, math.nan, None
    if res.x is None:
        return ("time_limit" if res.status == 1 else "error"), None, math.nan, None
    status = "optimal" if res.status == 0 else "feasible"
    g = getattr(res, "mip_gap", None)
    return status, np.asarray(res.x), (0.0 if g is None else float(g)), float(res.fun)


def size_options(instance):
    """Feasible turbine splits for the enumeration backend."""
    meta = instance.meta
    S = meta["n_farms"]
    N = int(meta["econ"].total_turbines)
    k = meta["size_stride"]
    ranges = []
    for i in instance.group("n"):
        v = instance.variables[i]
        ranges.append([n for n in range(0, N + 1, k) if v.lb - 1e-9 <= n <= v.ub + 1e-9])
    return [c for c in itertools.product(*ranges) if sum(c) == N] if S else []


def site_options(instance):
    meta = instance.meta
    cands = meta["site_candidates"]
    if cands is None:
        raise ConfigurationError("enumeration backend needs site_candidates")
    per_farm = []
    for s in range(meta["n_farms"]):
        lat_v = instance.variables[instance.group("lat")[s]]
        lon_v = instance.variables[instance.group("lon")[s]]
        per_farm.append([c for c in cands
                         if lat_v.lb - 1e-9 <= c[0] <= lat_v.ub + 1e-9
                         and lon_v.lb - 1e-9 <= c[1] <= lon_v.ub + 1e-9])
    return per_farm


def _line_costs(sites, meta):
    """Cheapest connection cost and choice per candidate site."""
    econ = meta["econ"]
    if not meta["transmission"]:
        return np.zeros(len(sites)), np.zeros(len(sites), dtype=int), np.zeros(len(sites))
    pts = np.asarray(sites, dtype=float)
    dm = np.column_stack([polyhedral_distance_km(pts, f, meta["ref_lat"], meta["n_cuts"])
                          for f in meta["substations"]])
    f = dm.argmin(axis=1)
    d = dm[np.arange(len(sites)), f]
    return econ.c_line * d, f, d


def _solve_enumeration(instance, batch=20000):
    """Exhaustive search over candidate sites and strided sizes."""
    meta = instance.meta
    model = instance.model
    econ = meta["econ"]
    S = meta["n_farms"]
    per_farm = site_options(instance)
    sizes = size_options(instance)
    if not sizes or any(not p for p in per_farm):
        return "infeasible", None
    scale = econ.hours_per_year * econ.lambda_ppa
    costs = [_line_costs(p, meta) for p in per_farm]
    best = None
    site_idx = list(itertools.product(*[range(len(p)) for p in per_farm]))
    combos = ((si, sz) for si in site_idx for sz in sizes)
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        X = np.empty((len(chunk), 3 * S))
        line = np.zeros(len(chunk))
        for r, (si, sz) in enumerate(chunk):
            for s in range(S):
                X[r, 2 * s:2 * s + 2] = per_farm[s][si[s]]
                X[r, 2 * S + s] = sz[s]
                line[r] += costs[s][0][si[s]]
        Q = predict(model, X)
        cvar = cvar_from_quantiles(Q, meta["taus"], meta["one_minus_alpha"])
        obj = line - scale * cvar
        r = int(np.argmin(obj))
        if best is None or obj[r] < best[0]:
            best = (float(obj[r]), chunk[r], Q[r], float(cvar[r]), float(line[r]))
    obj, (si, sz), Q, cvar, line = best
    sites = [tuple(per_farm[s][si[s]]) for s in range(S)]
    conns = []
    if meta["transmission"]:
        for s in range(S):
            f = int(costs[s][1][si[s]])
            conns.append((s, f, distance_km(sites[s], meta["substations"][f], meta["ref_lat"]),
                          float(costs[s][2][si[s]])))
    else:
        conns = _nearest_connections(sites, meta["substations"], meta["ref_lat"],
                                     meta["n_cuts"])
    sol = PlacementSolution(sites, list(sz), conns, np.asarray(Q), cvar, scale * cvar,
                            line, obj, "optimal", 0.0, "enumerate")
    sol.extra["n_candidates"] = len(site_idx) * len(sizes)
    return "optimal", sol


def solve(instance, backend="enumerate", solver_cmd=None, gap=0.01, time_limit=600,
          workdir=None):
    """Solve ``instance`` and return a :class:`PlacementSolution`.

    Backends: ``"external"`` (LP file and a solver command template with
    ``{lp_path}``/``{sol_path}``), ``"scipy"`` (in-process HiGHS) and
    ``"enumerate"`` (exhaustive over ``site_candidates`` and strided sizes).
    """
    t0 = time.perf_counter()
    if backend == "enumerate":
        status, sol = _solve_enumeration(instance)
        if sol is None:
            return _empty(status, backend, time.perf_counter() - t0)
        sol.wall_time = time.perf_counter() - t0
        return sol
    if backend == "external":
        status, x, g, obj = _solve_external(instance, solver_cmd, gap, time_limit, workdir)
    elif backend == "scipy":
        status, x, g, obj = _solve_scipy(instance, gap, time_limit)
    else:
        raise ConfigurationError(f"unknown backend {backend!r}")
    wall = time.perf_counter() - t0
    if x is None:
        return _empty(status, backend, wall)
    return _from_assignment(instance, x, status, g, backend, wall, objective=obj)


def verify_solution(model, solution, econ, risk, substations, ref_lat=None, n_cuts=16,
                    transmission=True, rel_tol=1e-5):
    """Recompute the objective of ``solution`` from a forward pass.

    Line costs use the same tangent-cut distance as the MILP (so the gap
    audits the encoding); ``objective_true_distance`` uses the exact
    equirectangular distance instead.
    """
    report = {"violations": []}
    N = int(econ.total_turbines)
    if not solution.sites or not solution.sizes:
        report["violations"].append("solution is empty")
        report.update(recomputed_objective=math.nan, abs_gap=math.nan, rel_gap=math.nan,
                      ok=False)
        return report
    if sum(solution.sizes) != N:
        report["violations"].append(f"sizes sum to {sum(solution.sizes)}, expected {N}")
    if any(n < 0 for n in solution.sizes):
        report["violations"].append("negative turbine count")
    if ref_lat is None:
        ref_lat = 0.5 * (model.scaler.x_min[0] + model.scaler.x_max[0])
    x = np.array([c for site in solution.sites for c in site] + list(solution.sizes), float)
    Q = predict(model, x)
    cvar = cvar_from_quantiles(Q, model.ladder.taus, risk.one_minus_alpha)
    revenue = econ.hours_per_year * econ.lambda_ppa * cvar
    line_model = line_true = 0.0
    use_lines = transmission and econ.c_line > 0 and substations
    if use_lines:
        farms = [c[0] for c in solution.connections]
        if sorted(farms) != list(range(len(solution.sites))):
            report["violations"].append("each farm must connect to exactly one substation")
        for s, f, _, _ in solution.connections:
            site, sub = solution.sites[s], substations[f]
            line_model += econ.c_line * float(polyhedral_distance_km(site, sub, ref_lat, n_cuts))
            line_true += econ.c_line * distance_km(site, sub, ref_lat)
    obj = line_model - revenue
    abs_gap = abs(obj - solution.objective)
    rel_gap = abs_gap / max(abs(obj), 1e-12)
    report.update(
        recomputed_objective=obj,
        objective_true_distance=line_true - revenue,
        recomputed_cvar_mw=cvar,
        recomputed_quantiles=Q,
        abs_gap=abs_gap,
        rel_gap=rel_gap,
        ok=not report["violations"] and rel_gap <= rel_tol,
    )
    return report
