import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.stats import wasserstein_distance

from ambientgan import data as D
from ambientgan import measurements as M
from ambientgan import nets
from ambientgan import training as TR
from ambientgan.metrics import random_directions, severity_sweep, sliced_wasserstein


def test_identical_sets():
    a = np.random.default_rng(0).normal(size=(50, 3))
    assert sliced_wasserstein(a, a.copy()) == 0.0


@pytest.mark.parametrize("projections", [1, 5, 128])
def test_unit_translation_in_one_dimension(projections):
    assert sliced_wasserstein(np.zeros((2, 1)), np.ones((2, 1)), projections) == pytest.approx(1.0, abs=1e-15)


def test_one_dimensional_matches_assignment_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = rng.integers(2, 40)
        a, b = rng.normal(size=n), rng.normal(loc=0.5, size=n) * 2
        cost = np.abs(a[:, None] - b[None, :])
        r, c = linear_sum_assignment(cost)
        exact = cost[r, c].mean()
        assert abs(sliced_wasserstein(a[:, None], b[:, None], projections=3) - exact) < 1e-12
        assert abs(wasserstein_distance(a, b) - exact) < 1e-12


def test_projection_matches_per_direction_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 30, 4))
    dirs = random_directions(4, 16, seed=0)
    expected = np.mean([wasserstein_distance(a @ d, b @ d) for d in dirs])
    assert sliced_wasserstein(a, b, directions=dirs) == pytest.approx(expected, abs=1e-12)


def test_directions_are_unit_and_seeded():
    d = random_directions(5, 64, seed=3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_array_equal(d, random_directions(5, 64, seed=3))


def test_larger_set_is_subsampled():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(10, 2)), rng.normal(size=(500, 2))
    v = sliced_wasserstein(a, b, seed=1)
    assert v >= 0 and v == sliced_wasserstein(a, b, seed=1)


def test_errors():
    with pytest.raises(ValueError, match="dims"):
        sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        sliced_wasserstein(np.zeros((1, 2)), np.zeros((3, 2)))


sets = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s).normal(size=(3, 20, 3)))


@settings(max_examples=40, deadline=None)
@given(triple=sets)
def test_symmetry_and_triangle_with_shared_directions(triple):
    a, b, c = triple
    dirs = random_directions(3, 32, seed=0)
    ab = sliced_wasserstein(a, b, directions=dirs)
    assert ab == pytest.approx(sliced_wasserstein(b, a, directions=dirs), abs=1e-15)
    ac = sliced_wasserstein(a, c, directions=dirs)
    cb = sliced_wasserstein(c, b, directions=dirs)
    assert ab <= ac + cb + 1e-12


@settings(max_examples=40, deadline=None)
@given(triple=sets, scale=st.floats(-10, 10))
def test_scale_equivariance(triple, scale):
    a, b, _ = triple
    dirs = random_directions(3, 32, seed=0)
    assert sliced_wasserstein(scale * a, scale * b, directions=dirs) == pytest.approx(
        abs(scale) * sliced_wasserstein(a, b, directions=dirs), rel=1e-12, abs=1e-12)


def _sweep_cfg():
    return TR.PipelineConfig(dataset=D.Shapes8x8(sample_count=300), latent=nets.LatentSpec(4),
                             measurement=M.BlockPixels((8, 8), p=0.5), generator_hidden=(8,),
                             discriminator_hidden=(8,), iterations=4, eval_every=2,
                             eval_samples=64, projections=8)


def test_empty_sweep():
    res = severity_sweep(_sweep_cfg(), [], ["ambient", "ignore"])
    assert res.table == [] and res.curves == {}


def test_sweep_table_rows():
    res = severity_sweep(_sweep_cfg(), [0.5, 0.9], ["ambient", "baseline", "ignore"], jobs=2)
    assert len(res.table) == 6
    assert {(r.severity, r.variant) for r in res.table} == {
        (s, v) for s in (0.5, 0.9) for v in ("ambient", "baseline", "ignore")}
    assert all(len(c) == 3 for c in res.curves.values())


def test_sweep_records_uninvertible_cells_as_absent():
    cfg = TR.PipelineConfig(**{**_sweep_cfg().__dict__,
                               "measurement": M.Compose(stages=(M.KeepPatch((8, 8), k=4),
                                                                M.BlockPixels((8, 8), p=0.5)))})
    res = severity_sweep(cfg, [0.5], ["ambient", "baseline"])
    assert res.absent == [(0.5, "baseline")]
    assert len(res.table) == 1 and not res.failed


def test_sweep_is_deterministic_across_job_counts():
    a = severity_sweep(_sweep_cfg(), [0.5, 0.9], ["ambient"], jobs=1).table
    b = severity_sweep(_sweep_cfg(), [0.5, 0.9], ["ambient"], jobs=2).table
    assert a == b
