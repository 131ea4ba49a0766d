import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from windplace.iqnn import TrainConfig, default_ladder, init_model, train  # noqa: E402
from windplace.placement import find_cbc  # noqa: E402
from windplace.power_model import default_curve  # noqa: E402
from windplace.sample_factory import fit_scaler, generate_samples, split  # noqa: E402
from windplace.wind_field import SynthFieldSpec, WindField, synth_field  # noqa: E402


@pytest.fixture(scope="session")
def curve():
    return default_curve()


@pytest.fixture(scope="session")
def small_field():
    spec = SynthFieldSpec(shape=(5, 5), hours=600, spacing=0.2, seed=0)
    return synth_field(spec)


@pytest.fixture(scope="session")
def small_samples(small_field, curve):
    return generate_samples(small_field, curve, n_iters=300, hours_per_iter=200, seed=0)


@pytest.fixture(scope="session")
def model_2x16(small_samples):
    """A trained CI-profile surrogate ([6, 16, 16, 55])."""
    tr, va, _ = split(small_samples, seed=0)
    m = init_model([6, 16, 16, 55], default_ladder(), fit_scaler(tr), seed=0)
    m, _ = train(m, tr, va, TrainConfig(epochs=20))
    return m


@pytest.fixture(scope="session")
def cbc_cmd():
    from windplace.placement.solve import default_solver_cmd

    if find_cbc() is None and default_solver_cmd() is None:
        pytest.skip("no LP-conformant external solver available")
    return default_solver_cmd()


def affine_field(n_lat=4, n_lon=5, hours=3, seed=0):
    """u and v affine in (lat, lon) per hour, with random coefficients."""
    rng = np.random.default_rng(seed)
    lat = 43.0 + 0.1 * np.arange(n_lat)
    lon = -7.0 + 0.1 * np.arange(n_lon)
    L, G = np.meshgrid(lat, lon, indexing="ij")
    cu = rng.normal(size=(3, hours))
    cv = rng.normal(size=(3, hours))
    u = cu[0] + cu[1] * (L[..., None] - 43.0) * 10 + cu[2] * (G[..., None] + 7.0) * 10 + 6
    v = cv[0] + cv[1] * (L[..., None] - 43.0) * 10 + cv[2] * (G[..., None] + 7.0) * 10 + 6
    return WindField(lat, lon, u, v), (cu, cv)


# acceptance criteria: one PASS/FAIL/SKIP line per criterion in the terminal summary
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _CRITERIA[mark.args[0]] = (status, mark.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, label, detail = _CRITERIA[n]
        line = f"C{n:<2} {status:<4} {label}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
