import gzip
import math
from dataclasses import fields

import numpy as np
import pytest

from ambientgan import data as D
from ambientgan import measurements as M
from ambientgan import training as TR


def test_degenerate_mixture_is_a_point():
    spec = D.GaussianMixture2D(components=(((3.0, -1.0), np.zeros((2, 2)), 1.0),))
    x = D.sample_clean(spec, 100, seed=0)
    assert x.shape == (100, 2)
    assert np.all(x == [3.0, -1.0])


def test_mixture_mean_monte_carlo():
    spec = D.GaussianMixture2D()
    n = 10 ** 5
    x = D.sample_clean(spec, n, seed=1)
    # per-coordinate variance: within-mode 0.3^2 plus between-mode 2^2
    sigma = math.sqrt(0.3 ** 2 + 2.0 ** 2)
    assert np.all(np.abs(x.mean(axis=0) - spec.mean) < 3 * sigma / math.sqrt(n))


def test_mixture_mode_weights():
    spec = D.GaussianMixture2D(components=(((0, 0), np.eye(2) * 0.01, 0.8),
                                           ((5, 5), np.eye(2) * 0.01, 0.2)))
    x = D.sample_clean(spec, 20000, seed=2)
    frac = np.mean(x[:, 0] > 2.5)
    assert abs(frac - 0.2) < 3 * math.sqrt(0.2 * 0.8 / 20000)


@pytest.mark.parametrize("comps", [
    (((0, 0), np.eye(2), 0.5),),
    (((0, 0), -np.eye(2), 1.0),),
    (((0, 0), [[1, 2], [0, 1]], 1.0),),
])
def test_mixture_validation(comps):
    with pytest.raises(D.DataError):
        D.GaussianMixture2D(components=comps)


def test_shapes_range_and_shape():
    x = D.sample_clean(D.Shapes8x8(), 500, seed=0)
    assert x.shape == (500, 64)
    assert x.min() >= -1 and x.max() <= 1
    assert set(np.unique(x)) == {-1.0, 1.0}


def test_shapes_classes_differ_and_jitter_moves_glyphs():
    bars = D.sample_clean(D.Shapes8x8(classes=("bar",), jitter=0), 10, seed=0)
    disks = D.sample_clean(D.Shapes8x8(classes=("disk",), jitter=0), 10, seed=0)
    assert not np.array_equal(bars[0], disks[0])
    jittered = D.sample_clean(D.Shapes8x8(classes=("box",), jitter=2), 200, seed=0)
    assert len({row.tobytes() for row in jittered}) > 1
    with pytest.raises(D.DataError):
        D.Shapes8x8(classes=("triangle",))


def test_sampling_is_seeded():
    for spec in (D.GaussianMixture2D(), D.Shapes8x8()):
        a = D.sample_clean(spec, 50, seed=4)
        np.testing.assert_array_equal(a, D.sample_clean(spec, 50, seed=4))
        assert not np.array_equal(a, D.sample_clean(spec, 50, seed=5))
        assert not np.array_equal(a, D.sample_clean(spec, 50, seed=4, purpose="reference"))


def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(7, 5, 4), dtype=np.uint8)
    path = tmp_path / "imgs.idx"
    D.write_idx(path, imgs)
    raw = path.read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    np.testing.assert_array_equal(D.read_idx(path), imgs)
    gz = tmp_path / "imgs.idx.gz"
    gz.write_bytes(gzip.compress(raw))
    np.testing.assert_array_equal(D.read_idx(gz), imgs)


def test_idx_labels_magic(tmp_path):
    path = tmp_path / "labels.idx"
    D.write_idx(path, np.arange(10, dtype=np.uint8))
    assert path.read_bytes()[:4] == bytes([0, 0, 8, 1])


def test_idx_file_dataset_scaling(tmp_path):
    path = tmp_path / "imgs.idx"
    imgs = np.zeros((3, 2, 2), dtype=np.uint8)
    imgs[0] = 255
    D.write_idx(path, imgs)
    spec = D.IdxFile(str(path), sample_count=3)
    assert spec.image_shape == (2, 2)
    x = D.sample_clean(spec, 3, seed=0)
    assert sorted(x[:, 0]) == [-1.0, -1.0, 1.0]
    with pytest.raises(D.DataError):
        D.sample_clean(spec, 4, seed=0)


@pytest.mark.parametrize("blob,msg", [
    (b"\x00\x00\x0d\x03" + b"\x00" * 16, "magic"),
    (b"\x01\x00\x08\x01\x00\x00\x00\x02ab", "magic"),
    (b"\x00\x00\x08\x01\x00\x00\x00\x05ab", "dimensions"),
    (b"\x00\x00\x08\x03\x00\x00", "truncated"),
    (b"\x00", "short"),
])
def test_idx_rejects_bad_files(tmp_path, blob, msg):
    path = tmp_path / "bad.idx"
    path.write_bytes(blob)
    with pytest.raises(D.DataError, match=msg):
        D.read_idx(path)


def test_identity_measurement_keeps_corpus():
    clean = D.sample_clean(D.Shapes8x8(), 100, seed=0)
    ds = D.measure_corpus(clean, M.BlockPixels((8, 8), p=0.0), seed=0)
    np.testing.assert_array_equal(ds.measurements.reshape(100, 64), clean)


def test_corpus_block_fraction():
    clean = np.ones((4000, 64))
    ds = D.measure_corpus(clean, M.BlockPixels((8, 8), p=0.95), seed=3)
    n = ds.measurements.size
    assert abs(np.mean(ds.measurements == 0) - 0.95) < 3 * math.sqrt(0.95 * 0.05 / n)


def test_corpus_is_seeded_and_chunk_independent():
    clean = D.sample_clean(D.Shapes8x8(), 300, seed=0)
    spec = M.KeepPatch((8, 8), k=4)
    a = D.measure_corpus(clean, spec, seed=1).measurements
    b = D.measure_corpus(clean, spec, seed=1, chunk=7).measurements
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, D.measure_corpus(clean, spec, seed=2).measurements)


def test_multiple_measurements_per_sample():
    clean = D.sample_clean(D.Shapes8x8(), 10, seed=0)
    ds = D.measure_corpus(clean, M.PadRotateProject((8, 8), pad=2), seed=0, per_sample=3)
    assert len(ds) == 30
    assert not np.array_equal(ds.measurements[0], ds.measurements[1])


def test_corpus_shape_mismatch():
    from ambientgan.tape import ShapeError
    with pytest.raises(ShapeError):
        D.measure_corpus(np.zeros((3, 10)), M.BlockPixels((8, 8), p=0.5), seed=0)


def test_learner_sees_only_measurements():
    assert [f.name for f in fields(D.MeasuredDataset)] == ["measurements", "spec"]
    cfg = TR.PipelineConfig(measurement=M.KeepPatch((8, 8), k=2),
                            dataset=D.Shapes8x8(sample_count=200), eval_samples=16)
    data = TR.prepare_data(cfg)
    clean = D.sample_clean(cfg.dataset, 200, cfg.seed)
    # a 2x2 patch keeps at most 4 of 64 pixels per row
    assert np.all(np.count_nonzero(data.real, axis=1) <= 4)
    assert not any(np.array_equal(r, c) for r, c in zip(data.real, clean))
