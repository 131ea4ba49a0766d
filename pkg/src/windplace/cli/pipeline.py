"""Pipeline stages with content-hash caching and a JSON manifest."""

import csv
import hashlib
import json
import logging
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .. import iqnn, scenarios
from ..errors import ConfigurationError, WindplaceError
from ..placement import (EconSpec, Fixings, RiskSpec, encode, propagate_bounds, solve,
                         verify_solution)
from ..placement.solve import default_solver_cmd
from ..power_model import default_curve, load_power_curve, power_cube
from ..sample_factory import fit_scaler, read_samples_csv, split, write_samples_csv, \
    generate_samples
from ..site_screen import screen_sites
from ..surrogate_eval import LcoConfig, eval_metrics, leave_center_out
from ..wind_field import SynthFieldSpec, load_grid_csv, synth_field, write_grid_csv

log = logging.getLogger("windplace")

SWEEP_COLUMNS = [
    "mode", "one_minus_alpha", "region_tag", "lat1", "lon1", "lat2", "lon2", "n1", "n2",
    "substation1", "substation2", "dist1_km", "dist2_km", "line_cost", "cvar_mw",
    "cvar_revenue", "objective", "status", "solver_gap", "wall_time", "verify_rel_gap",
    "verify_ok", "error",
]


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


class Stage:
    """A pipeline step: config sections it reads, upstream stages, output files."""

    def __init__(self, name, sections, deps, outputs, fn):
        self.name = name
        self.sections = sections
        self.deps = deps
        self.outputs = outputs
        self.fn = fn


class Pipeline:
    """Runs stages in dependency order inside ``<outdir>/<run-id>/``.

    A stage is skipped (reported ``cached``) when its key, built from its
    config sections and upstream keys, matches the manifest and every output
    file still has the recorded hash.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = Path(cfg["run"]["outdir"]) / str(cfg["run"]["id"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"
        self.manifest = self._read_manifest()
        self.keys = {}
        self.status = {}
        self.stages = {s.name: s for s in _stages()}

    def _read_manifest(self):
        if self.manifest_path.exists():
            try:
                return json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError:
                log.warning("ignoring unreadable manifest %s", self.manifest_path)
        return {"run_id": self.cfg["run"]["id"], "stages": {}}

    def _write_manifest(self):
        self.manifest["run_id"] = self.cfg["run"]["id"]
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1))

    def path(self, name):
        return self.dir / name

    def section(self, name):
        if name == "seed":
            return self.cfg["run"]["seed"]
        sec, _, key = name.partition(".")
        val = self.cfg[sec]
        return val[key] if key else val

    def key(self, name):
        if name not in self.keys:
            st = self.stages[name]
            self.keys[name] = _hash({
                "stage": name,
                "config": {s: self.section(s) for s in st.sections},
                "deps": {d: self.key(d) for d in st.deps},
            })
        return self.keys[name]

    def _outputs(self, st):
        return [self.path(o) for o in st.outputs]

    def is_cached(self, name):
        rec = self.manifest["stages"].get(name)
        if not rec or rec.get("status") not in ("done", "cached") or rec.get("key") != self.key(name):
            return False
        for p in self._outputs(self.stages[name]):
            if not p.exists() or rec["outputs"].get(p.name) != file_hash(p):
                return False
        return True

    def run(self, name, force=False):
        """Run ``name`` and its dependencies; returns the stage status."""
        if name in self.status:
            return self.status[name]
        st = self.stages[name]
        for d in st.deps:
            self.run(d)
        if not force and self.is_cached(name):
            self.status[name] = "cached"
            self.manifest["stages"][name]["status"] = "cached"
            self._write_manifest()
            log.info("%s: cached", name)
            return "cached"
        t0 = time.perf_counter()
        rec = {"key": self.key(name), "status": "running",
               "inputs": {d: self.key(d) for d in st.deps},
               "config": {s: self.section(s) for s in st.sections}}
        self.manifest["stages"][name] = rec
        try:
            extra = st.fn(self) or {}
        except Exception as exc:
            rec.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                       wall_time=time.perf_counter() - t0)
            self._write_manifest()
            raise
        rec.update(status="done", wall_time=time.perf_counter() - t0,
                   outputs={p.name: file_hash(p) for p in self._outputs(st)}, **extra)
        self.status[name] = "done"
        self._write_manifest()
        log.info("%s: done in %.1fs", name, rec["wall_time"])
        return "done"

    # artifact loaders used by downstream stages
    def field(self):
        return load_grid_csv(self.path("field.csv"))

    def curve(self):
        c = self.cfg["curve"]
        return load_power_curve(c["csv"], c["json"]) if c["csv"] else default_curve()

    def samples(self):
        return read_samples_csv(self.path("samples.csv"))

    def partitions(self):
        s = self.samples()
        ids = json.loads(self.path("split.json").read_text())
        return tuple(s.subset(np.isin(s.iter_id, ids[k])) for k in ("train", "val", "test"))

    def model(self):
        return iqnn.load(self.path("model.json"))


def _synth_spec(fc, seed):
    scen = fc["scenario"]
    if scen == "rough":
        return scenarios.rough_field_spec(hours=fc["hours"], seed=seed)
    if scen == "two_zone":
        return scenarios.two_zone_spec(hours=fc["hours"], seed=seed)
    if scen != "plain":
        raise ConfigurationError(f"unknown field scenario {scen!r}")
    return SynthFieldSpec(
        shape=tuple(fc["shape"]), hours=fc["hours"], base_mean=fc["base_mean"],
        autocorrelation=fc["autocorrelation"], correlation_length=fc["correlation_length"],
        noise_std=fc["noise_std"], lat0=fc["lat0"], lon0=fc["lon0"], spacing=fc["spacing"],
        seed=seed,
    )


def stage_field(p):
    fc = p.cfg["field"]
    if fc["source"] == "csv":
        f = load_grid_csv(fc["path"])
        src = {"source": "csv", "input_hash": file_hash(fc["path"])}
    else:
        f = synth_field(_synth_spec(fc, p.cfg["run"]["seed"]))
        src = {"source": "synth"}
    write_grid_csv(f, p.path("field.csv"))
    return {"field_id": f.fingerprint(), "shape": list(f.shape), "hours": f.hours, **src}


def _field_section(p):
    fc = p.cfg["field"]
    if fc["source"] == "csv" and fc["path"] and Path(fc["path"]).exists():
        return {"csv_hash": file_hash(fc["path"])}
    return fc


def stage_samples(p):
    sc = p.cfg["sampling"]
    f = p.field()
    hours = min(int(sc["hours_per_iter"]), f.hours)
    s = generate_samples(f, p.curve(), n_iters=int(sc["n_iters"]), hours_per_iter=hours,
                         total_turbines=int(sc["total_turbines"]), seed=p.cfg["run"]["seed"])
    write_samples_csv(s, p.path("samples.csv"))
    return {"rows": len(s), "content_hash": s.content_hash()}


def stage_split(p):
    s = p.samples()
    parts = split(s, p.cfg["sampling"]["ratios"], seed=p.cfg["run"]["seed"])
    doc = {k: sorted(np.unique(x.iter_id).tolist()) for k, x in zip(("train", "val", "test"), parts)}
    p.path("split.json").write_text(json.dumps(doc))
    return {k: len(v) for k, v in doc.items()}


def stage_train(p):
    tc = p.cfg["training"]
    tr, va, _ = p.partitions()
    tr.require_nonempty("training partition")
    va.require_nonempty("validation partition")
    ladder = iqnn.default_ladder()
    seed = p.cfg["run"]["seed"]
    model = iqnn.init_model([6, *tc["hidden"], len(ladder)], ladder, fit_scaler(tr), seed=seed)
    hyper = iqnn.TrainConfig(batch_size=int(tc["batch_size"]),
                             learning_rate=float(tc["learning_rate"]),
                             epochs=int(tc["epochs"]), seed=seed)
    model, hist = iqnn.train(model, tr, va, hyper)
    model.meta.update(seed=seed, data_hash=tr.content_hash())
    iqnn.save(model, p.path("model.json"))
    p.path("train_history.json").write_text(json.dumps(hist))
    return {"best_epoch": hist["best_epoch"], "best_val_loss": min(hist["val_loss"])}


def stage_eval(p):
    model = p.model()
    _, va, te = p.partitions()
    out = {}
    for name, part in (("val", va), ("test", te)):
        out[name] = eval_metrics(model, part) if len(part) else None
    p.path("eval.json").write_text(json.dumps(out, indent=1))
    return {k: (v["avg_mae"] if v else None) for k, v in out.items()}


def stage_baseline(p):
    sc, tc = p.cfg["sampling"], p.cfg["training"]
    f = p.field()
    seed = p.cfg["run"]["seed"]
    cfg = LcoConfig(
        n_iters=int(sc["n_iters"]), hours_per_iter=min(int(sc["hours_per_iter"]), f.hours),
        total_turbines=int(sc["total_turbines"]), hidden=tuple(tc["hidden"]),
        hyper=iqnn.TrainConfig(batch_size=int(tc["batch_size"]),
                               learning_rate=float(tc["learning_rate"]),
                               epochs=int(tc["epochs"]), seed=seed),
        partners_per_center=int(p.cfg["eval"]["partners_per_center"]), seed=seed,
    )
    report, _ = leave_center_out(f, p.curve(), cfg)
    report.write(p.path("lco.json"), p.path("lco.csv"))
    return {"better_fraction": report.better_fraction()}


def stage_screen(p):
    sc = p.cfg["screen"]
    rep = screen_sites(p.field(), p.curve(), n_turbines=int(sc["n_turbines"]), k=int(sc["k"]),
                       n_regions=int(sc["n_regions"]), seed=p.cfg["run"]["seed"])
    rep.write(p.path("screen.json"))
    return {"n_regions": len(rep.boxes), "short": rep.short}


def _candidates(p, f):
    ec = p.cfg["experiment"]
    stride = max(1, int(ec["candidate_stride"]))
    keep = np.zeros(f.shape, dtype=bool)
    keep[::stride, ::stride] = True
    if ec["exclude_dominant"] and p.path("screen.json").exists():
        for lat, lon in json.loads(p.path("screen.json").read_text())["dominant_sites"]:
            keep[f.node_index(lat, lon)] = False
    if ec["exclude_box"]:
        la0, la1, lo0, lo1 = ec["exclude_box"]
        nodes = f.nodes().reshape(*f.shape, 2)
        inside = ((nodes[..., 0] >= la0 - 1e-9) & (nodes[..., 0] <= la1 + 1e-9)
                  & (nodes[..., 1] >= lo0 - 1e-9) & (nodes[..., 1] <= lo1 + 1e-9))
        keep &= ~inside
    return [tuple(map(float, x)) for x, k in zip(f.nodes(), keep.ravel()) if k]


def _default_sites(f, curve, cands):
    """Two candidates with the highest mean per-turbine power."""
    mean = power_cube(f, curve).mean(axis=-1)
    score = [mean[f.node_index(*c)] for c in cands]
    top = np.argsort(score, kind="stable")[::-1][:2]
    return [cands[i] for i in top]


def _regions(p):
    tags = p.cfg["experiment"]["regions"]
    out = []
    for tag in tags:
        if tag == "all":
            out.append(("all", None))
        elif tag == "screen":
            boxes = json.loads(p.path("screen.json").read_text())["subregions"]
            out.extend((f"R{k + 1}", [b]) for k, b in enumerate(boxes))
        else:
            raise ConfigurationError(f"unknown region tag {tag!r}")
    return out


def sweep_plan(p, f, curve):
    ec = p.cfg["experiment"]
    cands = _candidates(p, f)
    fixed_sites = ec["fixed_sites"] or _default_sites(f, curve, cands)
    plan = []
    for mode in ec["modes"]:
        for beta in p.cfg["risk"]["levels"]:
            for tag, boxes in _regions(p):
                if mode == "siting":
                    fx, lines = Fixings(sizes=list(ec["fixed_sizes"])), False
                elif mode == "sizing":
                    fx, lines = Fixings(sites=[tuple(s) for s in fixed_sites]), False
                else:
                    fx, lines = Fixings(), True
                sites = [tuple(x) for x in fixed_sites] if mode == "sizing" else cands
                plan.append(dict(mode=mode, beta=float(beta), tag=tag,
                                 boxes=None if mode == "sizing" else boxes,
                                 fixings=fx, transmission=lines, candidates=sites))
    return plan


def _econ(p):
    e = p.cfg["econ"]
    return EconSpec(float(e["lambda_ppa"]), float(e["c_line"]), float(e["hours_per_year"]),
                    int(p.cfg["sampling"]["total_turbines"]))


def solve_row(p, model, bounds, row, workdir=None):
    ec = p.cfg["experiment"]
    econ = _econ(p)
    subs = [tuple(s) for s in p.cfg["econ"]["substations"]]
    risk = RiskSpec(row["beta"])
    inst = encode(model, econ, risk, subs, bounds, fixings=row["fixings"],
                  site_boxes=row["boxes"], site_candidates=row["candidates"],
                  size_stride=int(ec["size_stride"]), n_cuts=int(ec["n_cuts"]),
                  transmission=row["transmission"])
    backend = ec["backend"]
    cmd = p.cfg["solver"]["cmd"]
    if backend == "external" and not cmd:
        cmd = default_solver_cmd()
    sol = solve(inst, backend=backend, solver_cmd=cmd, gap=float(ec["gap"]),
                time_limit=float(ec["time_limit"]), workdir=workdir)
    ver = None
    if sol.feasible:
        ver = verify_solution(model, sol, econ, risk, subs, ref_lat=inst.meta["ref_lat"],
                              n_cuts=int(ec["n_cuts"]), transmission=row["transmission"],
                              rel_tol=float(ec["verify_tol"]))
    return inst, sol, ver


def _row_record(row, sol, ver, error=None):
    rec = {c: "" for c in SWEEP_COLUMNS}
    rec.update(mode=row["mode"], one_minus_alpha=row["beta"], region_tag=row["tag"])
    if error is not None:
        rec.update(status="error", error=error)
        return rec
    rec.update(status=sol.status, solver_gap=sol.gap, wall_time=round(sol.wall_time, 4))
    if sol.feasible:
        (la1, lo1), (la2, lo2) = sol.sites[:2]
        conn = {s: (f, d) for s, f, d, _ in sol.connections}
        for s in (0, 1):
            if s in conn:
                rec[f"substation{s + 1}"], rec[f"dist{s + 1}_km"] = conn[s]
        rec.update(lat1=la1, lon1=lo1, lat2=la2, lon2=lo2, n1=sol.sizes[0], n2=sol.sizes[1],
                   line_cost=sol.line_cost,
                   cvar_mw=sol.cvar_mw, cvar_revenue=sol.cvar_revenue,
                   objective=sol.objective)
        if ver is not None:
            rec.update(verify_rel_gap=ver["rel_gap"], verify_ok=ver["ok"])
    return rec


def stage_sweep(p):
    f = p.field()
    curve = p.curve()
    model = p.model()
    bounds = propagate_bounds(model)
    plan = sweep_plan(p, f, curve)

    def work(row):
        with tempfile.TemporaryDirectory(dir=p.dir) as tmp:
            try:
                _, sol, ver = solve_row(p, model, bounds, row, workdir=tmp)
                return _row_record(row, sol, ver), sol.to_dict()
            except (WindplaceError, ValueError, OSError) as exc:
                log.error("%s beta=%s failed: %s", row["mode"], row["beta"], exc)
                return _row_record(row, None, None, error=f"{type(exc).__name__}: {exc}"), None

    workers = max(1, int(p.cfg["experiment"]["workers"]))
    if workers == 1:
        results = [work(r) for r in plan]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, plan))
    with p.path("sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for rec, _ in results:
            w.writerow(rec)
    p.path("sweep.json").write_text(json.dumps([s for _, s in results], indent=1, default=float))
    flagged = sum(1 for rec, _ in results if rec["verify_ok"] is not True)
    return {"rows": len(results), "flagged": flagged}


def _stages():
    return [
        Stage("field", ["field", "seed"], [], ["field.csv"], stage_field),
        Stage("sample", ["sampling", "curve", "seed"], ["field"], ["samples.csv", "samples.json"],
              stage_samples),
        Stage("split", ["sampling.ratios", "seed"], ["sample"], ["split.json"], stage_split),
        Stage("train", ["training", "seed"], ["split"], ["model.json", "train_history.json"],
              stage_train),
        Stage("eval", [], ["train"], ["eval.json"], stage_eval),
        Stage("baseline", ["sampling", "training", "eval", "curve", "seed"], ["field"],
              ["lco.json", "lco.csv"], stage_baseline),
        Stage("screen", ["screen", "curve", "seed"], ["field"],
              ["screen.json", "screen_disparity.csv"], stage_screen),
        Stage("sweep", ["econ", "risk", "experiment", "solver", "sampling.total_turbines"],
              ["train", "screen"], ["sweep.csv", "sweep.json"], stage_sweep),
    ]


PIPELINE_ORDER = ["field", "sample", "split", "train", "eval", "screen", "sweep"]


def write_report(p):
    """Summarise stage results and key artifacts into ``report.json``."""
    rep = {"run_id": p.cfg["run"]["id"], "stages": {}}
    for name, rec in p.manifest["stages"].items():
        rep["stages"][name] = {k: v for k, v in rec.items() if k not in ("config", "inputs")}
    for fname, key in (("eval.json", "eval"), ("lco.json", None), ("screen.json", "screen")):
        path = p.path(fname)
        if key and path.exists():
            rep[key] = json.loads(path.read_text())
    lco = p.path("lco.json")
    if lco.exists():
        doc = json.loads(lco.read_text())
        rep["baseline"] = {"summary": doc["summary"], "taus": doc["taus"]}
    sweep = p.path("sweep.csv")
    if sweep.exists():
        with sweep.open() as fh:
            rep["sweep"] = list(csv.DictReader(fh))
    p.path("report.json").write_text(json.dumps(rep, indent=1, default=str))
    return rep
