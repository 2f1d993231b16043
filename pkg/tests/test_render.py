import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catwig import render
from catwig.qstate import W_MAX, StateClass, WignerGrid
from catwig.render import (
    CorpusManifest,
    CorruptGridError,
    EmptySplitError,
    ImageRecord,
    bilinear,
    colorize_values,
    make_batches,
    resize_bilinear,
    seeded_permutation,
    split_tags,
    to_input,
)


def record(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    return ImageRecord(pixels, StateClass.COHERENT, 1, 5.0, pixels.shape[0])


def test_colorize_examples():
    px = colorize_values(np.array([0.0, W_MAX, -1 / np.pi]))
    assert px[0].tolist() == [255, 255, 255, 255]
    assert px[1].tolist() == [255, 0, 0, 255]
    # t = -0.5 -> 127.5 rounds half up
    assert px[2].tolist() == [128, 128, 255, 255]
    assert colorize_values(np.array([-W_MAX]))[0].tolist() == [0, 0, 255, 255]


def test_colorize_saturates():
    px = colorize_values(np.array([5.0, -5.0]))
    assert px[0].tolist() == [255, 0, 0, 255]
    assert px[1].tolist() == [0, 0, 255, 255]


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_colorize_rejects_corrupt(bad):
    with pytest.raises(CorruptGridError):
        render.colorize(WignerGrid(np.array([[0.0, bad], [0.0, 0.0]]), 1.0, 2))


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=50))
def test_colorize_symmetric_and_monotone(vals):
    v = np.sort(np.array(vals))
    px = colorize_values(v).astype(int)
    neg = colorize_values(-v).astype(int)
    assert np.array_equal(neg[:, 0], px[:, 2])
    assert np.array_equal(neg[:, 2], px[:, 0])
    # R and B never decrease/increase respectively as v grows; G peaks at 0
    assert np.all(np.diff(px[:, 0]) >= 0)
    assert np.all(np.diff(px[:, 2]) <= 0)
    assert np.all(px[:, 3] == 255)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, (9, 9, 4), dtype=np.uint8)
    render.write_png(tmp_path / "a.png", px)
    assert np.array_equal(render.read_png(tmp_path / "a.png"), px)


def test_write_png_reports_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        render.write_png(tmp_path / "nope" / "x.png", np.zeros((2, 2, 4), np.uint8))


def test_resize_constant():
    img = record(np.full((512, 512, 4), (10, 200, 30, 255)))
    out = resize_bilinear(img, 128)
    assert out.pixels.shape == (128, 128, 4)
    assert np.all(out.pixels == np.array([10, 200, 30, 255], dtype=np.uint8))
    assert out.source_resolution == 128


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = record(rng.integers(0, 256, (64, 64, 4)))
    assert np.array_equal(resize_bilinear(img, 64).pixels, img.pixels)


def test_bilinear_checkerboard_center():
    board = np.array([[0.0, 255.0], [255.0, 0.0]])[..., None]
    up = bilinear(board, 3)
    # corners are kept exactly, the centre averages all four
    assert up[1, 1, 0] == pytest.approx(127.5)
    assert up[0, 0, 0] == 0 and up[0, 2, 0] == 255
    assert up[0, 1, 0] == pytest.approx(127.5)


def test_resize_rejects_small_side():
    with pytest.raises(ValueError):
        resize_bilinear(record(np.zeros((16, 16, 4))), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 40))
def test_resize_no_overshoot(seed, side):
    rng = np.random.default_rng(seed)
    img = record(rng.integers(0, 256, (37, 37, 4)))
    out = resize_bilinear(img, side).pixels
    # bilinear output is a convex combination: per channel it stays inside the input range
    for ch in range(4):
        assert out[..., ch].min() >= img.pixels[..., ch].min()
        assert out[..., ch].max() <= img.pixels[..., ch].max()


def test_to_input():
    px = np.zeros((2, 2, 4), dtype=np.uint8)
    px[0, 0] = (255, 0, 128, 255)
    x = to_input(record(px))
    assert x.shape == (4, 2, 2)
    np.testing.assert_allclose(x[:, 0, 0], [1.0, 0.0, 128 / 255, 1.0])
    assert np.all(to_input(record(np.full((3, 3, 4), 255))) == 1.0)


def test_to_input_roundtrip():
    rng = np.random.default_rng(2)
    px = rng.integers(0, 256, (5, 5, 4), dtype=np.uint8)
    back = np.rint(to_input(record(px)) * 255).astype(np.uint8).transpose(1, 2, 0)
    assert np.array_equal(back, px)


def test_permutation_is_fixed_by_seed():
    a = seeded_permutation(50, 11)
    assert sorted(a.tolist()) == list(range(50))
    assert np.array_equal(a, seeded_permutation(50, 11))
    assert not np.array_equal(a, seeded_permutation(50, 12))


@pytest.mark.parametrize("seed", range(25))
def test_split_cardinality_any_seed(seed):
    tags = split_tags(400, seed)
    assert tags.count("train") == 320 and tags.count("test") == 80


def test_corpus_layout(small_corpus):
    m = small_corpus
    assert len(m.entries) == 400
    assert collections.Counter(e.label for e in m.entries) == {0: 100, 1: 100, 2: 100, 3: 100}
    train, test = m.select("train"), m.select("test")
    assert len(train) == 320 and len(test) == 80
    assert not {e.path for e in train} & {e.path for e in test}
    assert m.entries[0].path == "coherent_001.png"
    assert (m.root / "cat4_100.png").exists()
    meta = render.read_meta(m.root)
    assert meta["colormap"] == "wmap-v1" and meta["resolution"] == "32"
    px = render.read_png(m.root / "cat2_004.png")
    assert px.shape == (32, 32, 4) and np.all(px[..., 3] == 255)


def test_manifest_roundtrip(small_corpus):
    again = CorpusManifest.read(small_corpus.root)
    assert again.entries == small_corpus.entries
    assert again.seed == 7


def test_corpus_refuses_nonempty(small_corpus):
    with pytest.raises(FileExistsError):
        render.generate_corpus(small_corpus.root, resolution=32, seed=7)


def test_corpus_deterministic(tmp_path):
    kw = dict(resolution=24, n_range=range(1, 6), seed=5, workers=1)
    a = render.generate_corpus(tmp_path / "a", **kw)
    b = render.generate_corpus(tmp_path / "b", **kw)
    assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()
    for e in a.entries:
        assert (tmp_path / "a" / e.path).read_bytes() == (tmp_path / "b" / e.path).read_bytes()
    c = render.generate_corpus(tmp_path / "a", overwrite=True, **kw)
    assert c.entries == b.entries


def test_batches(small_corpus):
    train = make_batches(small_corpus, "train", 16, epoch_seed=1, side=16)
    test = make_batches(small_corpus, "test", 16, epoch_seed=1, side=16)
    assert len(train) == 20 and len(test) == 5
    assert all(b.inputs.shape[1:] == (4, 16, 16) for b in train)
    assert all(0 <= b.inputs.min() and b.inputs.max() <= 1 for b in train)
    labels = sorted(t for b in train for t in b.targets.tolist())
    assert labels == sorted(e.label for e in small_corpus.select("train"))
    paths = [p for b in train for p in b.paths]
    assert len(set(paths)) == 320


def test_batches_reshuffle_per_epoch(small_corpus):
    a = [p for b in make_batches(small_corpus, "test", 16, 1) for p in b.paths]
    b = [p for b in make_batches(small_corpus, "test", 16, 2) for p in b.paths]
    assert a != b and sorted(a) == sorted(b)


def test_short_last_batch():
    x = np.zeros((10, 4, 8, 8))
    batches = list(render.iter_batches(x, np.zeros(10, int), 4, 0))
    assert [len(b.targets) for b in batches] == [4, 4, 2]


def test_empty_split():
    m = CorpusManifest([render.ManifestEntry("a.png", 0, 1, "train")], seed=0)
    with pytest.raises(EmptySplitError):
        make_batches(m, "test", 16, 0)
