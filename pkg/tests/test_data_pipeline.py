import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from saltseg.data_pipeline import (
    Dataset,
    Sample,
    SplitConfig,
    batches,
    kfold,
    load_dataset,
    prepare_input,
    save_dataset,
    split,
    synth_generate,
    synth_sample,
)
from saltseg.exceptions import DimensionError, ImageFormatError, LoadError, ValidationError
from saltseg.imageio import read_gray, read_pgm, write_gray, write_pgm


def toy_dataset(n):
    return Dataset([Sample(np.full((1, 101, 101), i / max(n, 1)), np.zeros((1, 101, 101)), f"s{i:04d}")
                    for i in range(n)], "test")


# -- image files ------------------------------------------------------------

def test_pgm_roundtrip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", pixels)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), pixels)


def test_pgm_header_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# max\n255\n\x00\xff")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[0, 255]]


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5 x"])
def test_pgm_malformed(tmp_path, data):
    (tmp_path / "bad.pgm").write_bytes(data)
    with pytest.raises(ImageFormatError):
        read_pgm(tmp_path / "bad.pgm")


def test_png_roundtrip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(6, 9), dtype=np.uint8)
    write_gray(tmp_path / "a.png", pixels)
    np.testing.assert_array_equal(read_gray(tmp_path / "a.png"), pixels)


def test_png_rgb_is_converted(tmp_path):
    Image.new("RGB", (3, 2), (255, 255, 255)).save(tmp_path / "rgb.png")
    assert read_gray(tmp_path / "rgb.png").tolist() == [[255] * 3] * 2


def test_png_garbage(tmp_path):
    (tmp_path / "g.png").write_bytes(b"\x89PNG not really")
    with pytest.raises(ImageFormatError):
        read_gray(tmp_path / "g.png")


def test_unknown_extension(tmp_path):
    with pytest.raises(ImageFormatError):
        read_gray(tmp_path / "x.jpg")


# -- loading ------------------------------------------------------------------

def write_pair(root, sid, img, mask, ext=".pgm"):
    (root / "images").mkdir(exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    write_gray(root / "images" / f"{sid}{ext}", img)
    write_gray(root / "masks" / f"{sid}{ext}", mask)


def test_load_normalises_and_binarises(tmp_path):
    img = np.full((101, 101), 255, dtype=np.uint8)
    img[0, 0] = 0
    mask = np.zeros((101, 101), dtype=np.uint8)
    mask[0, :3] = [127, 128, 255]
    write_pair(tmp_path, "b", img, mask)
    write_pair(tmp_path, "a", img, mask, ext=".png")
    ds = load_dataset(tmp_path)
    assert ds.ids == ["a", "b"]
    s = ds[1]
    assert s.image.shape == (1, 101, 101) and s.image[0, 0, 0] == 0.0 and s.image[0, 1, 1] == 1.0
    assert s.mask[0, 0, :3].tolist() == [0.0, 1.0, 1.0]


def test_load_two_directory_form(tmp_path):
    write_pair(tmp_path, "x", np.zeros((101, 101)), np.zeros((101, 101)))
    assert load_dataset(tmp_path / "images", tmp_path / "masks").ids == ["x"]


def test_load_missing_mask(tmp_path):
    write_pair(tmp_path, "x", np.zeros((101, 101)), np.zeros((101, 101)))
    (tmp_path / "masks" / "x.pgm").unlink()
    with pytest.raises(LoadError):
        load_dataset(tmp_path)


def test_load_wrong_size(tmp_path):
    write_pair(tmp_path, "x", np.zeros((100, 101)), np.zeros((101, 101)))
    with pytest.raises(DimensionError):
        load_dataset(tmp_path)


def test_load_missing_directory(tmp_path):
    with pytest.raises(LoadError):
        load_dataset(tmp_path / "nope")


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError):
        Dataset([toy_dataset(1)[0], toy_dataset(1)[0]], "dup")


def test_save_load_roundtrip(tmp_path):
    ds = synth_generate(3, seed=4)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.ids == ds.ids
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.mask, b.mask)
        assert np.max(np.abs(a.image - b.image)) <= 0.5 / 255 + 1e-12


def test_prepare_input_shape():
    assert prepare_input(toy_dataset(1)[0]).shape == (1, 1, 128, 128)


# -- split / kfold / batches --------------------------------------------------

def test_split_4000():
    tr, te = split(toy_dataset(4000), SplitConfig(0.8, 0))
    assert (len(tr), len(te)) == (3200, 800)
    assert not set(tr.ids) & set(te.ids)


def test_split_keeps_both_sides():
    tr, te = split(toy_dataset(2), SplitConfig(0.99, 0))
    assert (len(tr), len(te)) == (1, 1)


def test_split_rounds_half_up():
    tr, _ = split(toy_dataset(5), SplitConfig(0.5, 0))
    assert len(tr) == 3


def test_split_is_seeded():
    ds = toy_dataset(50)
    assert split(ds, SplitConfig(0.8, 3))[0].ids == split(ds, SplitConfig(0.8, 3))[0].ids
    assert split(ds, SplitConfig(0.8, 3))[0].ids != split(ds, SplitConfig(0.8, 4))[0].ids


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
def test_split_bad_fraction(frac):
    with pytest.raises(ValidationError):
        split(toy_dataset(10), SplitConfig(frac, 0))


def test_split_needs_two():
    with pytest.raises(ValidationError):
        split(toy_dataset(1))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 1000))
def test_kfold_partitions(n, k, seed):
    if k > n:
        with pytest.raises(ValidationError):
            kfold(toy_dataset(n), k, seed)
        return
    ds = toy_dataset(n)
    folds = kfold(ds, k, seed)
    val_ids = [sid for _, val in folds for sid in val.ids]
    assert sorted(val_ids) == ds.ids
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)
    for tr, val in folds:
        assert sorted(tr.ids + val.ids) == ds.ids


def test_kfold_rejects_k1():
    with pytest.raises(ValidationError):
        kfold(toy_dataset(5), 1)


def test_batches_cover_epoch_and_reshuffle():
    ds = toy_dataset(10)
    sizes = [len(x) for x, _ in batches(ds, 4, 0, 0)]
    assert sizes == [4, 4, 2]
    first = [x[:, 0, 0, 0].tolist() for x, _ in batches(ds, 10, 0, 0)][0]
    again = [x[:, 0, 0, 0].tolist() for x, _ in batches(ds, 10, 0, 0)][0]
    other = [x[:, 0, 0, 0].tolist() for x, _ in batches(ds, 10, 0, 1)][0]
    assert first == again and first != other
    assert sorted(first) == sorted(s.image[0, 0, 0] for s in ds)


def test_batches_shapes():
    x, z = next(batches(toy_dataset(3), 2, 0, 0))
    assert x.shape == (2, 1, 128, 128) and z.shape == (2, 1, 101, 101)


def test_batches_bad_size():
    with pytest.raises(ValidationError):
        next(batches(toy_dataset(3), 0, 0, 0))


# -- synthetic data -----------------------------------------------------------

def test_synth_mask_is_union_of_ellipses():
    for idx in range(6):
        s, ellipses = synth_sample(7, idx)
        yy, xx = np.mgrid[0:101, 0:101].astype(float)
        union = np.zeros((101, 101), bool)
        for e in ellipses:
            union |= e.contains(yy, xx)
        np.testing.assert_array_equal(s.mask[0].astype(bool), union)


def test_synth_ellipse_pixels_are_bright():
    s, ellipses = synth_sample(0, 0, n_ellipses=2)
    inside = s.mask[0].astype(bool)
    assert s.image[0][inside].mean() > 0.7 > s.image[0][~inside].mean()


def test_synth_is_deterministic_and_indexed():
    a, b = synth_generate(4, 2), synth_generate(6, 2)
    for sa, sb in zip(a, b):
        assert sa.image.tobytes() == sb.image.tobytes()
    assert a.ids[0] == "synth_2_00000"
    assert synth_generate(1, 3)[0].image.tobytes() != a[0].image.tobytes()


def test_synth_range():
    ds = synth_generate(20, 1)
    imgs = ds.images()
    assert imgs.min() >= 0.0 and imgs.max() <= 1.0
    assert set(np.unique(ds.masks())) <= {0.0, 1.0}
    assert 0.0 < ds.masks().mean() < 0.5


def test_synth_rejects_zero():
    with pytest.raises(ValidationError):
        synth_generate(0)
