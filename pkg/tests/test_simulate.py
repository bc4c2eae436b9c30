import numpy as np
import pytest

from gfbm.core import derive_indices
from gfbm.covariance import CovarianceOracle
from gfbm.simulate import (
    BadRatio,
    BadSize,
    FactorizationFailure,
    GridTooCoarse,
    OutOfRange,
    PathEnsemble,
    assemble_covariance,
    build_grid,
    custom_grid,
    default_smallball_grid,
    factorize,
    resolve_workers,
    running_sup,
    sample_ensemble,
    sample_running_sup,
    standard_normals,
    write_ensemble_csv,
)


@pytest.fixture(scope="module")
def bm():
    return CovarianceOracle(derive_indices(0, 0, fbm_limit=True))


@pytest.fixture(scope="module")
def ex():
    return CovarianceOracle(derive_indices(0.2, 0.1))


def test_grids():
    assert build_grid("uniform", 4, 1.0).points.tolist() == [0.25, 0.5, 0.75, 1.0]
    assert build_grid("geometric", 3, 1.0, 0.5).points.tolist() == [0.25, 0.5, 1.0]
    with pytest.raises(BadRatio):
        build_grid("geometric", 3, 1.0, 1.5)
    with pytest.raises(BadSize):
        build_grid("uniform", 1)
    with pytest.raises(BadSize):
        build_grid("uniform", 5000)
    g = build_grid("geometric", 100, 2.0)
    assert g.points[0] == pytest.approx(0.02)
    assert g.points[-1] == 2.0


def test_default_smallball_grid(ex):
    g = default_smallball_grid(ex.params)
    assert g.n == 4096 and g.points[0] == pytest.approx(1e-2)
    with pytest.raises(BadRatio):
        default_smallball_grid(ex.params, n=8)


def test_assemble_bm(bm):
    c = assemble_covariance(bm, custom_grid([0.5, 1.0]))
    assert np.allclose(c, [[0.5, 0.5], [0.5, 1.0]], atol=1e-14)


def test_assembly_paths_agree(ex):
    # the geometric lag cache and the generic path give the same matrix
    g = build_grid("geometric", 12, 1.0, 0.8)
    c1 = assemble_covariance(ex, g)
    c2 = assemble_covariance(ex, custom_grid(g.points))
    assert np.allclose(c1, c2, rtol=1e-12, atol=0)
    assert np.array_equal(c1, c1.T)


def test_factorize_jitter():
    f = factorize(np.eye(3))
    assert f.jitter == 0.0
    # rank-deficient but PSD: needs jitter
    v = np.array([1.0, 2.0, 3.0])
    f = factorize(np.outer(v, v) + 1e-14 * np.eye(3))
    assert np.allclose(f.lower @ f.lower.T, np.outer(v, v), atol=1e-6)
    with pytest.raises(FactorizationFailure):
        factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_standard_normals_substreams():
    a = standard_normals(5, 0, 10)
    assert np.array_equal(a, standard_normals(5, 0, 10))
    assert not np.array_equal(a, standard_normals(5, 1, 10))
    assert not np.array_equal(a, standard_normals(6, 0, 10))


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv("GFBM_THREADS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.setenv("GFBM_THREADS", "0")
    assert resolve_workers() >= 1


def test_determinism_and_workers(ex):
    g = build_grid("uniform", 8, 1.0)
    e1 = sample_ensemble(ex, g, 2500, 42, workers=1)
    e2 = sample_ensemble(ex, g, 2500, 42, workers=4)
    assert e1.values.tobytes() == e2.values.tobytes()
    # prefix property: paths do not depend on the ensemble size
    e3 = sample_ensemble(ex, g, 100, 42)
    assert np.array_equal(e3.values, e1.values[:100])


def test_running_sup_example(bm):
    ens = PathEnsemble(custom_grid([1.0, 2.0, 3.0]), bm.params, 1, 0, np.array([[0.1, -0.5, 0.3]]))
    assert running_sup(ens, 3.0)[0] == 0.5
    assert running_sup(ens, 1.5)[0] == pytest.approx(0.1)
    with pytest.warns(GridTooCoarse):
        assert running_sup(ens, 0.5)[0] == 0.0
    with pytest.raises(OutOfRange):
        running_sup(ens, 4.0)


def test_streaming_sup_matches_materialized(ex):
    g = build_grid("geometric", 20, 1.0, 0.8)
    ens = sample_ensemble(ex, g, 300, 9)
    cps = [g.points[5], 0.5, 1.0]
    m = sample_running_sup(ex, g, 300, 9, cps)
    for j, c in enumerate(cps):
        assert np.array_equal(m[:, j], running_sup(ens, c))


def test_sample_covariance_bm(bm):
    g = build_grid("uniform", 4, 1.0)
    ens = sample_ensemble(bm, g, 20000, 3)
    s = ens.values.T @ ens.values / ens.n_paths
    c = assemble_covariance(bm, g)
    se = np.sqrt((c ** 2 + np.outer(np.diag(c), np.diag(c))) / ens.n_paths)
    assert np.all(np.abs(s - c) <= 4 * se)


def test_csv_roundtrip(tmp_path, ex):
    g = build_grid("uniform", 5, 1.0)
    ens = sample_ensemble(ex, g, 3, 1)
    path = write_ensemble_csv(ens, tmp_path / "e.csv")
    rows = open(path).read().splitlines()
    assert rows[0].startswith("# gfbm-ensemble v1")
    back = np.array([[float(v) for v in r.split(",")] for r in rows[2:]])
    assert np.array_equal(back, ens.values)
