import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dploc import evaluation as ev
from dploc.data import FingerprintDataset, Schema, TestbedSpec, synthesize_queries, synthesize_testbed
from dploc.errors import ConfigError, DataError, SchemaError


def brute_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return abs(sxy / math.sqrt(sxx * syy))


def brute_ranks(v):
    # average ranks with ties
    order = sorted(range(len(v)), key=lambda i: v[i])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@pytest.fixture(scope="module")
def radiomap():
    return synthesize_testbed(TestbedSpec())


def test_pearson_examples():
    assert ev.pearson_matrix(np.array([[1.0, 3.0], [2.0, 2.0], [3.0, 1.0]])).values[0, 1] == pytest.approx(1.0, abs=1e-15)
    m = ev.pearson_matrix(np.array([[1.0, 1.0], [2.0, 3.0], [3.0, 2.0], [4.0, 4.0]]), ["X", "Y"])
    assert m.values[0, 1] == pytest.approx(0.8, abs=1e-15)
    assert m.values[0, 0] == 1.0 and m.columns == ["X", "Y"]


def test_pearson_constant_column_flagged():
    m = ev.pearson_matrix(np.array([[1.0, 5.0, 2.0], [2.0, 5.0, 1.0], [3.0, 5.0, 7.0]]), ["a", "b", "c"])
    assert m.constant == ["b"]
    assert np.all(m.values[1] == 0.0) and np.all(m.values[:, 1] == 0.0)
    assert m.values[0, 0] == 1.0


def test_pearson_needs_two_records():
    with pytest.raises(DataError):
        ev.pearson_matrix(np.ones((1, 3)))


def test_pearson_matches_brute_force_on_random_fixtures():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, p = rng.integers(3, 12), rng.integers(2, 5)
        x = rng.normal(size=(n, p))
        m = ev.pearson_matrix(x).values
        assert np.array_equal(m, m.T)
        for i in range(p):
            for j in range(p):
                expected = 1.0 if i == j else brute_pearson(x[:, i].tolist(), x[:, j].tolist())
                assert abs(m[i, j] - expected) < 1e-12


def test_pearson_permutation_equivariant():
    x = np.random.default_rng(1).normal(size=(30, 5))
    perm = [3, 0, 4, 1, 2]
    a = ev.pearson_matrix(x).values
    b = ev.pearson_matrix(x[:, perm]).values
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-14)


def test_pearson_on_dataset(radiomap):
    m = ev.pearson_matrix(radiomap)
    assert m.values.shape == (12, 12) and m.columns[-1] == "zone"
    assert np.all((m.values >= 0) & (m.values <= 1))


def test_corr_preservation():
    a = ev.pearson_matrix(np.random.default_rng(2).normal(size=(40, 5)))
    assert ev.corr_preservation(a, a) == pytest.approx(1.0)
    iu = np.triu_indices(5, 1)
    rev = np.zeros((5, 5))
    rev[iu] = -a.values[iu]
    assert ev.corr_preservation(a.values, rev) == pytest.approx(-1.0)
    with pytest.raises(SchemaError):
        ev.corr_preservation(a.values, np.eye(4))


def test_corr_preservation_swapped_pair_brute_force():
    a = ev.pearson_matrix(np.random.default_rng(3).normal(size=(25, 5))).values
    b = a.copy()
    b[0, 1], b[2, 3] = a[2, 3], a[0, 1]
    iu = np.triu_indices(5, 1)
    ra, rb = brute_ranks(a[iu].tolist()), brute_ranks(b[iu].tolist())
    n = len(ra)
    d2 = sum((x - y) ** 2 for x, y in zip(ra, rb))
    expected = 1 - 6 * d2 / (n * (n * n - 1))
    assert ev.corr_preservation(a, b) == pytest.approx(expected, abs=1e-12)


def test_rmse_examples():
    truth = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert ev.rmse_2d(truth, truth) == 0.0
    assert ev.rmse_2d(truth + [3.0, 4.0], truth) == pytest.approx(5.0, abs=1e-15)
    assert ev.rmse_2d(np.array([[3.0, 0.0], [0.0, 4.0]]), np.zeros((2, 2))) == pytest.approx(math.sqrt(12.5), abs=1e-15)
    with pytest.raises(SchemaError):
        ev.rmse_2d(np.zeros((2, 2)), np.zeros((3, 2)))


def test_zone_accuracy_examples():
    assert ev.zone_accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    assert ev.zone_accuracy([1, 2], [0, 0]) == 0.0
    assert ev.zone_accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 75.0
    with pytest.raises(SchemaError):
        ev.zone_accuracy([1], [1, 2])


def test_scalar_metrics_match_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        p, t = rng.normal(size=(n, 2)) * 10, rng.normal(size=(n, 2)) * 10
        brute = math.sqrt(sum((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 for a, b in zip(p.tolist(), t.tolist())) / n)
        assert abs(ev.rmse_2d(p, t) - brute) < 1e-12
        pz, tz = rng.integers(0, 4, n), rng.integers(0, 4, n)
        assert abs(ev.zone_accuracy(pz, tz) - 100.0 * sum(int(a == b) for a, b in zip(pz, tz)) / n) < 1e-12


def brute_disclosure(orig, gen):
    total = 0.0
    for g in gen:
        total += min(math.sqrt(sum((a - b) ** 2 for a, b in zip(g, o))) for o in orig)
    return total / len(gen)


def test_disclosure_examples():
    assert ev.disclosure_min(np.zeros((1, 2)), np.array([[3.0, 4.0]]), space="raw") == 5.0
    d = np.random.default_rng(5).normal(size=(20, 3))
    assert ev.disclosure_min(d, d) == 0.0
    assert ev.disclosure_min(d, d, space="raw") == 0.0
    with pytest.raises(SchemaError):
        ev.disclosure_min(d, d[:, :2])
    with pytest.raises(ConfigError):
        ev.disclosure_min(d, d, space="cosine")


def test_disclosure_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(100):
        orig, gen = rng.normal(size=(20, 3)), rng.normal(size=(10, 3))
        assert abs(ev.disclosure_min(orig, gen, space="raw") - brute_disclosure(orig.tolist(), gen.tolist())) < 1e-12
        lo, span = orig.min(axis=0), orig.max(axis=0) - orig.min(axis=0)
        brute = brute_disclosure(((orig - lo) / span).tolist(), ((gen - lo) / span).tolist())
        assert abs(ev.disclosure_min(orig, gen) - brute) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), shift=st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_disclosure_translation_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    orig, gen = rng.normal(size=(15, 3)), rng.normal(size=(8, 3))
    s = np.array(shift)
    for space in ("raw", "normalized"):
        a = ev.disclosure_min(orig, gen, space=space)
        b = ev.disclosure_min(orig + s, gen + s, space=space)
        assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_disclosure_uses_generated_columns(radiomap):
    gen = radiomap.select("location_based").subset(np.arange(10))
    assert ev.disclosure_min(radiomap, gen) == 0.0


def test_knn_memorizes_training_points(radiomap):
    loc = radiomap.select("location_based")
    pred = ev.train_downstream(loc, "regression_xy", "knn", k=1)
    assert ev.score(pred, loc) == 0.0
    assert ev.locate(pred, loc.rss[17]) == tuple(loc.coords[17])
    zone = ev.train_downstream(radiomap.select("zone_based"), "classification_zone", "knn", k=1)
    assert ev.locate(zone, radiomap.rss[5]) == radiomap.zones[5]


def test_locate_input_checks(radiomap):
    pred = ev.train_downstream(radiomap.select("location_based"), "regression_xy", "knn")
    with pytest.raises(SchemaError):
        ev.locate(pred, [-50.0] * 8)
    with pytest.raises(DataError):
        ev.locate(pred, [-50.0] * 8 + [-150.0])


def test_task_needs_its_columns(radiomap):
    with pytest.raises(Exception):
        ev.train_downstream(radiomap.select("zone_based"), "regression_xy", "knn")
    with pytest.raises(ConfigError):
        ev.train_downstream(radiomap, "regression_xy", "forest")


def two_zone_toy():
    rng = np.random.default_rng(7)
    zones = np.repeat([0, 1], 25)
    rss = rng.uniform(-80, -40, size=(50, 9))
    rss[:, 0] = np.where(zones == 0, rng.uniform(-90, -70, 50), rng.uniform(-50, -30, 50))
    return FingerprintDataset(rss, zones=zones, schema=Schema(n_zones=2))


def test_mlp_separates_two_zone_toy():
    toy = two_zone_toy()
    pred = ev.train_downstream(toy, "classification_zone", "mlp", seed=0)
    assert ev.score(pred, toy) >= 95.0


def test_regression_mlp_output_shape_and_bounds(radiomap):
    settings_ = ev.MLPSettings(epochs=50)
    pred = ev.train_downstream(radiomap.select("location_based"), "regression_xy", "mlp", settings=settings_)
    out = pred.predict(synthesize_queries(TestbedSpec(), 100).rss)
    assert out.shape == (100, 2)
    assert np.all((out >= 0) & (out <= [51.0, 18.0]))


def test_near_constant_training_column_does_not_explode():
    rng = np.random.default_rng(8)
    rss = rng.uniform(-80, -40, size=(60, 9))
    rss[:, 3] = -60.0 + rng.normal(scale=1e-6, size=60)
    coords = np.column_stack([rng.uniform(0, 51, 60), rng.uniform(0, 18, 60)])
    train = FingerprintDataset(rss, coords, schema=Schema())
    pred = ev.train_downstream(train, "regression_xy", "mlp", settings=ev.MLPSettings(epochs=20))
    query = rss[:5].copy()
    query[:, 3] = -20.0
    out = pred.predict(query)
    assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= [51.0, 18.0]))


def test_cross_validation_aggregates_folds(radiomap):
    entry = ev.cross_validate(radiomap.select("location_based"), "regression_xy", "knn", k=5, seed=0)
    assert entry.n_folds == 5 and entry.metric == "rmse_m"
    assert entry.mean == pytest.approx(sum(entry.folds) / 5, abs=1e-12)
    assert entry.std == pytest.approx(math.sqrt(sum((f - entry.mean) ** 2 for f in entry.folds) / 5), abs=1e-12)
    again = ev.cross_validate(radiomap.select("location_based"), "regression_xy", "knn", k=5, seed=0)
    assert again.folds == entry.folds


def test_cross_validation_constant_labels():
    rss = np.random.default_rng(9).uniform(-80, -40, size=(20, 9))
    ds = FingerprintDataset(rss, zones=np.full(20, 2), schema=Schema())
    entry = ev.cross_validate(ds, "classification_zone", "knn", k=5)
    assert entry.mean == 100.0 and entry.std == 0.0 and entry.metric == "zone_accuracy_pct"


def test_tstr_protocol(radiomap):
    loc = radiomap.select("location_based")
    with pytest.raises(ConfigError):
        ev.cross_validate(loc, "regression_xy", "knn", protocol="tstr")
    with pytest.raises(ConfigError):
        ev.cross_validate(loc, "regression_xy", "knn", protocol="holdout")
    entry = ev.cross_validate(loc.subset(np.arange(0, 384, 2)), "regression_xy", "knn", protocol="tstr", real_test=loc)
    assert entry.protocol == "tstr" and entry.mean > 0
