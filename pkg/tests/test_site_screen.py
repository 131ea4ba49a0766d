import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import disparity, dominant_set, ladder55, load_frozen
from windplace.errors import ConfigurationError
from windplace.scenarios import ZoneLayout, two_zone_field
from windplace.site_screen import (KMeans, SiteQuantileProfile, dominance_filter, kmeans,
                                   pair_disparity, peel_dominant, screen_sites, select_subregions)

TAUS = np.array(ladder55())


class TestDominance:
    def test_identical_neither(self):
        q = np.linspace(0, 10, 55)
        assert dominance_filter([q, q.copy()]) == ([], [0, 1])

    def test_shifted(self):
        q = np.linspace(0, 10, 55)
        assert dominance_filter([q + 1, q]) == ([0], [1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8))
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        base = np.sort(rng.uniform(0, 5, 55))
        profiles = [base + rng.integers(0, 3) + np.sort(rng.uniform(0, 0.5, 55)) * rng.integers(0, 2)
                    for _ in range(n)]
        dom, rest = dominance_filter(profiles)
        assert dom == dominant_set([list(p) for p in profiles])
        assert sorted(dom + rest) == list(range(n))

    def test_peel(self):
        q = np.linspace(0, 10, 55)
        removed, remaining = peel_dominant([q + 2, q + 1, q, q[::-1].cumsum() / 50])
        assert removed == [0, 1] and remaining == [2, 3]

    def test_profile_rejects_decreasing(self):
        with pytest.raises(ValueError):
            SiteQuantileProfile((0, 0), [2.0, 1.0])


class TestDisparity:
    def test_hand_value(self):
        frozen = load_frozen()["hand"]["disparity_one_interval"]
        got = pair_disparity([1.0, -1.0], [0.0, 0.0], [0.3, 0.4])
        assert got == pytest.approx(0.1, abs=1e-12) and got == pytest.approx(frozen, abs=1e-15)

    def test_frozen_seeded(self):
        case = load_frozen()["seeded"]["disparity_pair"]
        assert pair_disparity(case["qa"], case["qb"], TAUS) == pytest.approx(case["value"],
                                                                           abs=1e-12)

    def test_no_crossing(self):
        q = np.linspace(0, 10, 55)
        assert pair_disparity(q, q, TAUS) == 0.0
        assert pair_disparity(q + 0.5, q, TAUS) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=55, max_size=55),
           st.lists(st.floats(0, 50), min_size=55, max_size=55))
    def test_symmetric_nonnegative(self, a, b):
        a, b = sorted(a), sorted(b)
        g = pair_disparity(a, b, TAUS)
        assert g >= 0 and g == pytest.approx(pair_disparity(b, a, TAUS), abs=1e-9)
        assert g == pytest.approx(disparity(a, b, list(TAUS)), abs=1e-9)
        d = np.array(a) - np.array(b)
        crossing = np.any(d > 0) and np.any(d < 0)
        assert (g > 0) == crossing


class TestKMeans:
    def test_single_cluster(self):
        assert np.all(kmeans(np.full(7, 2.0), k=1) == 0)

    def test_separated_groups(self):
        rng = np.random.default_rng(0)
        vals = np.concatenate([rng.normal(0, 0.1, 20), rng.normal(50, 0.1, 15)])
        labels = kmeans(vals, k=2, seed=3)
        assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
        assert labels[0] != labels[-1]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        vals = np.concatenate([rng.normal(c, 0.2, 10) for c in (0, 5, 12)])
        perm = rng.permutation(vals.size)
        a = kmeans(vals, k=3)
        b = kmeans(vals[perm], k=3)
        # same partition up to relabeling
        pairs_a = a[:, None] == a[None, :]
        pairs_b = b[:, None] == b[None, :]
        inv = np.argsort(perm)
        np.testing.assert_array_equal(pairs_a, pairs_b[np.ix_(inv, inv)])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_inertia_non_increasing(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(30, 2))
        km = KMeans(n_clusters=k, random_state=seed).fit(X)
        h = np.array(km.inertia_history_)
        assert np.all(np.diff(h) <= 1e-9)
        np.testing.assert_array_equal(km.predict(X), km.labels_)

    def test_too_many_clusters(self):
        with pytest.raises(ConfigurationError):
            KMeans(n_clusters=4).fit(np.arange(3.0))


class TestSubregions:
    def test_one_blob(self):
        m = np.zeros((5, 6), dtype=bool)
        m[1:3, 2:5] = True
        m[3, 4] = True
        boxes, short = select_subregions(m, np.arange(5.0), np.arange(6.0) + 10, n_regions=1)
        assert boxes == [(1.0, 3.0, 12.0, 14.0)] and not short

    def test_two_disjoint(self):
        m = np.zeros((6, 6), dtype=bool)
        m[0:2, 0:2] = True
        m[4:6, 3:6] = True
        boxes, short = select_subregions(m, np.arange(6.0), np.arange(6.0), n_regions=2)
        assert len(boxes) == 2 and not short
        (a, b) = boxes
        assert a[1] < b[0] or b[1] < a[0] or a[3] < b[2] or b[3] < a[2]

    def test_short_flag(self):
        m = np.zeros((3, 3), dtype=bool)
        m[1, 1] = True
        _, short = select_subregions(m, np.arange(3.0), np.arange(3.0), n_regions=3)
        assert short


def test_screen_on_seeded_field(curve, tmp_path):
    lay = ZoneLayout(shape=(6, 9), zone_a=(slice(0, 6), slice(0, 3)),
                     zone_b=(slice(0, 6), slice(6, 9)), dominant=(slice(5, 6), slice(3, 5)),
                     substation_nodes=((0, 7), (5, 7)))
    f = two_zone_field(layout=lay, hours=800, seed=1)
    rep = screen_sites(f, curve, n_regions=3, seed=0)
    assert rep.dominant, "the amplitude-9 block should be peeled as dominant"
    assert len(rep.boxes) >= 1
    lat_min, lat_max, lon_min, lon_max = f.extent
    for b in rep.boxes:
        assert lat_min <= b[0] <= b[1] <= lat_max and lon_min <= b[2] <= b[3] <= lon_max
    js, csv_path = rep.write(tmp_path / "screen.json")
    assert csv_path.exists() and js.exists()
    assert np.allclose(rep.disparity, rep.disparity.T)
