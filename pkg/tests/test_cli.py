import csv
import json
import shutil
import time
from importlib import resources

import numpy as np
import pytest

from windplace.cli import build_parser, main
from windplace.cli.config import load_config
from windplace.errors import ConfigurationError
from windplace.wind_field import load_grid_csv, write_grid_csv


def _ci_config(dest):
    src = resources.files("windplace") / "data" / "ci.toml"
    path = dest / "ci.toml"
    path.write_text(src.read_text())
    return path


def _status(run_dir):
    doc = json.loads((run_dir / "manifest.json").read_text())
    return {k: v["status"] for k, v in doc["stages"].items()}


def _sweep(run_dir):
    with (run_dir / "sweep.csv").open() as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def ci_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("ci")
    cfg = _ci_config(root)
    out = root / "runs"
    t0 = time.perf_counter()
    rc = main(["pipeline", "--config", str(cfg), "--outdir", str(out)])
    elapsed = time.perf_counter() - t0
    return {"rc": rc, "cfg": cfg, "out": out, "dir": out / "ci", "elapsed": elapsed}


class TestPipeline:
    def test_completes_quickly(self, ci_run):
        assert ci_run["rc"] == 0
        assert ci_run["elapsed"] < 600
        assert set(_status(ci_run["dir"]).values()) == {"done"}

    def test_artifacts(self, ci_run):
        d = ci_run["dir"]
        for name in ("field.csv", "samples.csv", "model.json", "eval.json", "screen.json",
                     "sweep.csv", "sweep.json", "report.json", "manifest.json"):
            assert (d / name).exists(), name
        rep = json.loads((d / "report.json").read_text())
        assert rep["run_id"] == "ci" and len(rep["sweep"]) == 18

    def test_sweep_rows(self, ci_run):
        rows = _sweep(ci_run["dir"])
        by_mode = {}
        for r in rows:
            by_mode.setdefault(r["mode"], []).append(r)
        assert {m: len(v) for m, v in by_mode.items()} == {"siting": 6, "sizing": 6, "joint": 6}
        for r in by_mode["siting"]:
            assert (int(r["n1"]), int(r["n2"])) == (20, 20)
        for r in rows:
            assert r["status"] == "optimal" and r["verify_ok"] == "True", r
            assert int(r["n1"]) + int(r["n2"]) == 40
        sizing_sites = {(r["lat1"], r["lon1"], r["lat2"], r["lon2"]) for r in by_mode["sizing"]}
        assert len(sizing_sites) == 1

    def test_rerun_is_cached(self, ci_run, capsys):
        before = _sweep(ci_run["dir"])
        rc = main(["pipeline", "--config", str(ci_run["cfg"]), "--outdir", str(ci_run["out"])])
        assert rc == 0
        assert set(_status(ci_run["dir"]).values()) == {"cached"}
        assert "sweep: cached" in capsys.readouterr().out
        assert _sweep(ci_run["dir"]) == before

    def test_lambda_change_reruns_only_sweep(self, ci_run, tmp_path):
        cfg = tmp_path / "ci.toml"
        text = ci_run["cfg"].read_text() + '\n[econ]\nlambda_ppa = 90.0\n'
        cfg.write_text(text)
        out = tmp_path / "runs"
        shutil.copytree(ci_run["dir"], out / "ci")
        assert main(["pipeline", "--config", str(cfg), "--outdir", str(out)]) == 0
        st = _status(out / "ci")
        assert st.pop("sweep") == "done"
        assert set(st.values()) == {"cached"}


def test_deterministic_sweep(ci_run, tmp_path):
    out = tmp_path / "again"
    assert main(["pipeline", "--config", str(ci_run["cfg"]), "--outdir", str(out)]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    assert strip(_sweep(out / "ci")) == strip(_sweep(ci_run["dir"]))


def test_ingest_csv(ci_run, tmp_path):
    field = load_grid_csv(ci_run["dir"] / "field.csv")
    src = write_grid_csv(field, tmp_path / "grid.csv")
    rc = main(["ingest", "--config", str(ci_run["cfg"]), "--input", str(src),
               "--outdir", str(tmp_path / "runs")])
    assert rc == 0
    got = load_grid_csv(tmp_path / "runs" / "ci" / "field.csv")
    np.testing.assert_array_equal(got.u, field.u)
    man = json.loads((tmp_path / "runs" / "ci" / "manifest.json").read_text())
    assert man["stages"]["field"]["status"] == "done"


def test_optimize_writes_solution(ci_run, tmp_path, capsys):
    out = tmp_path / "runs"
    shutil.copytree(ci_run["dir"], out / "ci")
    rc = main(["optimize", "--config", str(ci_run["cfg"]), "--outdir", str(out),
               "--mode", "joint", "--risk", "0.5"])
    assert rc == 0
    doc = json.loads((out / "ci" / "optimize.json").read_text())
    assert doc["mode"] == "joint" and doc["one_minus_alpha"] == 0.5
    assert doc["verify"]["ok"]
    assert '"status": "optimal"' in capsys.readouterr().out


class TestConfig:
    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[training]\nepohcs = 3\n")
        with pytest.raises(ConfigurationError, match="training.epohcs"):
            load_config(p)

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[nonsense]\nx = 1\n")
        assert main(["train", "--config", str(p), "--outdir", str(tmp_path)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_bad_risk_level(self):
        with pytest.raises(ConfigurationError):
            load_config(overrides={"risk": {"levels": [0.0]}})

    def test_run_id_from_file_stem(self, tmp_path):
        p = tmp_path / "mine.toml"
        p.write_text("")
        assert load_config(p)["run"]["id"] == "mine"

    @pytest.mark.parametrize("cmd", ["synth", "sample", "train", "eval", "baseline", "screen",
                                     "optimize", "sweep", "pipeline"])
    def test_subcommands_parse(self, cmd):
        args = build_parser().parse_args([cmd, "-v", "--seed", "3"])
        assert args.command == cmd and args.seed == 3 and args.verbose
