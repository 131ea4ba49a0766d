"""``windplace`` command-line entry point."""

import argparse
import json
import logging
import sys

from ..errors import WindplaceError
from .config import MODES, load_config
from .pipeline import PIPELINE_ORDER, Pipeline, solve_row, sweep_plan, write_report

COMMANDS = ("synth", "ingest", "sample", "train", "eval", "baseline", "screen", "optimize",
            "sweep", "pipeline")

_STAGE_OF = {"synth": "field", "ingest": "field", "sample": "split", "train": "train",
             "eval": "eval", "baseline": "baseline", "screen": "screen", "sweep": "sweep"}


def build_parser():
    ap = argparse.ArgumentParser(prog="windplace", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--solver-cmd", help="external solver template with {lp_path} and {sol_path}")
        p.add_argument("--backend", choices=("external", "enumerate", "scipy"))
        p.add_argument("--risk", type=float, nargs="+", metavar="1-ALPHA")
        p.add_argument("--mode", choices=MODES, action="append")
        p.add_argument("--outdir")
        p.add_argument("--run-id")
        p.add_argument("--force", action="store_true", help="rerun the stage even if cached")
        if name == "ingest":
            p.add_argument("--input", required=True, help="lat,lon,hour,u10,v10 CSV")
        if name == "pipeline":
            p.add_argument("--input", help="lat,lon,hour,u10,v10 CSV instead of the synthetic field")
            p.add_argument("--with-baseline", action="store_true")
    return ap


def overrides_from_args(args):
    over = {}

    def put(sec, key, val):
        if val is not None:
            over.setdefault(sec, {})[key] = val

    put("run", "seed", args.seed)
    put("run", "outdir", args.outdir)
    put("run", "id", args.run_id)
    put("solver", "cmd", args.solver_cmd)
    put("experiment", "backend", args.backend)
    put("experiment", "modes", args.mode)
    put("risk", "levels", args.risk)
    if getattr(args, "input", None):
        put("field", "source", "csv")
        put("field", "path", args.input)
    return over


def _optimize(p):
    """Solve the first planned row (first mode, first risk level) and print it."""
    f, curve = p.field(), p.curve()
    model = p.model()
    from ..placement import propagate_bounds
    bounds = propagate_bounds(model)
    plan = sweep_plan(p, f, curve)
    row = plan[0]
    _, sol, ver = solve_row(p, model, bounds, row, workdir=p.dir)
    out = {"mode": row["mode"], "one_minus_alpha": row["beta"], "region_tag": row["tag"],
           "solution": sol.to_dict(),
           "verify": None if ver is None else {k: v for k, v in ver.items()
                                               if k != "recomputed_quantiles"}}
    path = p.path("optimize.json")
    path.write_text(json.dumps(out, indent=1, default=float))
    print(json.dumps({k: out[k] for k in ("mode", "one_minus_alpha")}
                     | {"objective": sol.objective, "status": sol.status,
                        "sites": out["solution"]["sites"], "sizes": out["solution"]["sizes"]}))
    return 0 if sol.feasible else 1


def run(args):
    cfg = load_config(args.config, overrides_from_args(args))
    p = Pipeline(cfg)
    cmd = args.command
    if cmd == "pipeline":
        order = list(PIPELINE_ORDER)
        if args.with_baseline or cfg["eval"]["lco"]:
            order.insert(order.index("screen"), "baseline")
        try:
            for name in order:
                p.run(name, force=args.force and name == order[-1])
        finally:
            write_report(p)
        for name in order:
            print(f"{name}: {p.status.get(name, 'not run')}")
        return 0
    if cmd == "optimize":
        p.run("train")
        if cfg["experiment"]["exclude_dominant"] or "screen" in cfg["experiment"]["regions"]:
            p.run("screen")
        return _optimize(p)
    status = p.run(_STAGE_OF[cmd], force=args.force)
    print(f"{_STAGE_OF[cmd]}: {status}")
    if cmd == "sweep":
        write_report(p)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except WindplaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
