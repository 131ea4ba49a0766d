import itertools
import re
import subprocess

import numpy as np
import pytest

from oracles import cvar_trapezoid, tangent_cut_km
from windplace.errors import ConfigurationError, EncodingError
from windplace.iqnn import IqnnModel, QuantileLadder, init_model, predict
from windplace.placement import (EconSpec, Fixings, MilpInstance, RiskSpec, encode,
                                 parse_solution, propagate_bounds, solve, verify_solution,
                                 write_lp)
from windplace.placement.solve import find_cbc
from windplace.sample_factory import ScalingSpec

SUBS = [(43.55, -5.79), (43.30, -6.67)]


def _grid(field, stride=2):
    return [tuple(map(float, (la, lo))) for la in field.lat_axis[::stride]
            for lo in field.lon_axis[::stride]]


class TestBounds:
    def test_interval_sum(self):
        sc = ScalingSpec(np.zeros(2), np.ones(2), 0, 1)
        m = IqnnModel([np.array([[1.0, -1.0]])], [np.zeros(1)], QuantileLadder((0.5,)), sc)
        b = propagate_bounds(m)
        assert b.z_lo[0][0] == -1.0 and b.z_hi[0][0] == 1.0

    def test_zero_weights(self):
        m = init_model([6, 5, 55])
        m = IqnnModel([np.zeros_like(w) for w in m.weights],
                      [np.arange(w.shape[0], dtype=float) for w in m.weights], m.ladder, m.scaler)
        b = propagate_bounds(m)
        for lo, hi, bias in zip(b.z_lo, b.z_hi, m.biases):
            np.testing.assert_array_equal(lo, bias)
            np.testing.assert_array_equal(hi, bias)

    def test_sampling_soundness(self):
        m = init_model([6, 16, 16, 55], seed=12)
        b = propagate_bounds(m)
        from windplace.iqnn import forward_trace

        X = np.random.default_rng(0).uniform(0, 1, (100_000, 6))
        zs, _ = forward_trace(m, X)
        for z, lo, hi in zip(zs, b.z_lo, b.z_hi):
            assert np.all(z >= lo - 1e-12) and np.all(z <= hi + 1e-12)


class TestEncode:
    def test_budget_and_binary_section(self, model_2x16, tmp_path):
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.5), SUBS, propagate_bounds(model_2x16))
        budget = [r for r in inst.rows if r.name == "budget"][0]
        assert budget.rhs == 40 and budget.sense == "="
        text = write_lp(inst, tmp_path / "p.lp").read_text()
        binaries = text.split("\nBinary\n")[1].split("\nEnd")[0].split()
        deltas = [inst.variables[i].name for i in inst.group("delta")]
        assert sorted(binaries) == sorted(set(binaries))
        assert set(deltas) <= set(binaries)
        assert inst.meta["n_binary_relu"] == len(deltas)

    def test_rejects_foreign_bounds(self, model_2x16):
        other = init_model([6, 16, 16, 55], seed=99, scaler=model_2x16.scaler)
        with pytest.raises(EncodingError):
            encode(model_2x16, None, None, SUBS, propagate_bounds(other))

    def test_fixed_input_assignment_is_feasible(self, model_2x16, small_field):
        """The exact forward pass satisfies every row of the input-fixed model."""
        x = np.array([43.1, -6.7, 43.5, -6.5, 13, 27], dtype=float)
        sites = [(43.1, -6.7), (43.5, -6.5)]
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.97), SUBS, propagate_bounds(model_2x16),
                      fixings=Fixings(sites=sites, sizes=[13, 27]), transmission=False)
        from windplace.iqnn import forward_trace

        xs = model_2x16.scaler.apply(x)
        zs, acts = forward_trace(model_2x16, xs)
        val = np.zeros(inst.n_vars)
        names = {v.name: i for i, v in enumerate(inst.variables)}
        for s in range(2):
            val[names[f"lat_{s + 1}"]], val[names[f"lon_{s + 1}"]] = sites[s]
            val[names[f"n_{s + 1}"]] = x[4 + s]
        for j in range(6):
            val[names[f"a0_{j + 1}"]] = xs[j]
        for l, (z, a) in enumerate(zip(zs, acts[1:]), start=1):
            for j in range(z.shape[1]):
                val[names[f"z_{l}_{j + 1}"]] = z[0, j]
                val[names[f"a_{l}_{j + 1}"]] = a[0, j]
                if f"delta_{l}_{j + 1}" in names:
                    val[names[f"delta_{l}_{j + 1}"]] = float(z[0, j] > 0)
        Q = predict(model_2x16, x)
        for o, q in enumerate(Q):
            val[names[f"Q_{o + 1}"]] = q
        assert inst.max_violation(val) <= 1e-9


def _direct_best(model, cands, splits, beta, econ, ref_lat):
    taus = list(model.ladder.taus)
    best = None
    for (p1, p2), (n1, n2) in itertools.product(itertools.product(cands, cands), splits):
        Q = predict(model, np.array([*p1, *p2, n1, n2], float))
        line = sum(econ.c_line * min(tangent_cut_km(p, f, ref_lat) for f in SUBS)
                   for p in (p1, p2))
        obj = line - econ.hours_per_year * econ.lambda_ppa * cvar_trapezoid(list(Q), taus, beta)
        if best is None or obj < best[0]:
            best = (obj, (p1, p2), (n1, n2))
    return best


class TestEnumeration:
    def test_matches_direct_loop(self, model_2x16, small_field):
        cands = _grid(small_field)
        econ = EconSpec()
        inst = encode(model_2x16, econ, RiskSpec(0.67), SUBS, propagate_bounds(model_2x16),
                      site_candidates=cands, size_stride=40)
        sol = solve(inst, backend="enumerate")
        want = _direct_best(model_2x16, cands, [(0, 40), (20, 20), (40, 0)], 0.67, econ,
                            inst.meta["ref_lat"])
        assert sol.objective == pytest.approx(want[0], rel=1e-12)
        assert tuple(sol.sizes) == want[2]

    def test_verify_gap_zero(self, model_2x16, small_field):
        cands = _grid(small_field)
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.2), SUBS, propagate_bounds(model_2x16),
                      site_candidates=cands, size_stride=10)
        sol = solve(inst, backend="enumerate")
        rep = verify_solution(model_2x16, sol, EconSpec(), RiskSpec(0.2), SUBS,
                              ref_lat=inst.meta["ref_lat"])
        assert rep["ok"] and rep["rel_gap"] <= 1e-12

    def test_corrupted_solution_flagged(self, model_2x16, small_field):
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.5), SUBS, propagate_bounds(model_2x16),
                      site_candidates=_grid(small_field), size_stride=20)
        sol = solve(inst, backend="enumerate")
        sol.sizes = [sol.sizes[0] + 1, sol.sizes[1]]
        rep = verify_solution(model_2x16, sol, EconSpec(), RiskSpec(0.5), SUBS)
        assert not rep["ok"] and any("sum" in v for v in rep["violations"])

    def test_contradictory_fixings_infeasible(self, model_2x16, small_field):
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.5), SUBS, propagate_bounds(model_2x16),
                      fixings=Fixings(sizes=[30, 30]), site_candidates=_grid(small_field))
        sol = solve(inst, backend="enumerate")
        assert sol.status == "infeasible" and not sol.feasible and sol.sites == []

    def test_cvar_optimum_monotone(self, model_2x16, small_field):
        cands = _grid(small_field)
        vals = []
        for beta in (0.2, 0.5, 0.77, 0.97):
            inst = encode(model_2x16, EconSpec(), RiskSpec(beta), SUBS,
                          propagate_bounds(model_2x16), site_candidates=cands, size_stride=10,
                          transmission=False)
            vals.append(solve(inst, backend="enumerate").cvar_mw)
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_unknown_backend(self, model_2x16):
        inst = encode(model_2x16, None, None, SUBS, propagate_bounds(model_2x16))
        with pytest.raises(ConfigurationError):
            solve(inst, backend="gurobi")


def test_scipy_backend_agrees_on_fixed_sites(model_2x16):
    sites = [(43.3, -6.7), (43.5, -6.3)]
    econ = EconSpec()
    inst = encode(model_2x16, econ, RiskSpec(0.87), SUBS, propagate_bounds(model_2x16),
                  fixings=Fixings(sites=sites), site_candidates=sites, size_stride=10)
    ref = solve(inst, backend="enumerate")
    got = solve(inst, backend="scipy", gap=1e-9)
    assert got.objective == pytest.approx(ref.objective, rel=1e-6)


class TestLpFile:
    def test_simple_bound(self, tmp_path):
        cbc = find_cbc()
        if cbc is None:
            pytest.skip("CBC not available")
        inst = MilpInstance("tiny")
        x = inst.add_var("x", 3.0, float("inf"))
        inst.add_objective(x, 1.0)
        lp = write_lp(inst, tmp_path / "t.lp")
        subprocess.run([cbc, str(lp), "solve", "solu", str(tmp_path / "t.sol")],
                       check=True, capture_output=True)
        out = parse_solution(tmp_path / "t.sol", inst)
        assert out["status"] == "optimal" and out["values"]["x"] == 3.0

    def test_name_value_layout(self, tmp_path):
        inst = MilpInstance()
        inst.add_var("x")
        inst.add_var("y", kind="B")
        p = tmp_path / "g.sol"
        p.write_text("# Objective value = 4.5\nx 1.5\ny 1\n")
        out = parse_solution(p, inst)
        assert out["objective"] == 4.5 and out["values"] == {"x": 1.5, "y": 1.0}

    def test_round_trip_declares_all(self, model_2x16, tmp_path, cbc_cmd):
        sites = [(43.1, -6.9), (43.3, -6.5)]
        inst = encode(model_2x16, EconSpec(), RiskSpec(0.5), SUBS, propagate_bounds(model_2x16),
                      fixings=Fixings(sites=sites, sizes=[10, 30]))
        lp = write_lp(inst, tmp_path / "p.lp")
        declared = set(re.findall(r"\b(?:lat|lon|n|a0|z|a|delta|Q|u|d|w)_[\d_]+\b", lp.read_text()))
        assert {v.name for v in inst.variables} == declared
        sol = solve(inst, backend="external", solver_cmd=cbc_cmd, workdir=tmp_path)
        assert sol.feasible
        assert set(sol.extra["assignment"].nonzero()[0]) <= set(range(inst.n_vars))


def test_external_fixed_matches_forward(model_2x16, tmp_path, cbc_cmd):
    sites = [(43.2, -6.8), (43.6, -6.4)]
    econ = EconSpec()
    risk = RiskSpec(0.77)
    inst = encode(model_2x16, econ, risk, SUBS, propagate_bounds(model_2x16),
                  fixings=Fixings(sites=sites, sizes=[25, 15]))
    sol = solve(inst, backend="external", solver_cmd=cbc_cmd, workdir=tmp_path)
    Q = predict(model_2x16, np.array([*sites[0], *sites[1], 25, 15], float))
    np.testing.assert_allclose(sol.quantiles, Q, rtol=1e-5)
    rep = verify_solution(model_2x16, sol, econ, risk, SUBS, ref_lat=inst.meta["ref_lat"])
    assert rep["ok"] and rep["rel_gap"] <= 1e-5
