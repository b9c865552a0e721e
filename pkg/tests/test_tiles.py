import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import angle_deg, tile_origins, two_stain_image, unit

from crcrisk.tiles import (
    StainEstimationError,
    StainProfile,
    estimate_stains,
    foreground_mask,
    load_mask,
    load_png,
    normalize_to,
    optical_density,
    od_to_rgb,
    save_png,
    tile_grid,
)

H_TRUE = (0.65, 0.70, 0.29)
E_TRUE = (0.07, 0.99, 0.11)


def test_tile_grid_448():
    tiles = tile_grid(np.zeros((448, 448, 3), np.uint8))
    assert [t.origin for t in tiles] == [(0, 0), (224, 0), (0, 224), (224, 224)]
    assert all(t.pixels.shape == (224, 224, 3) for t in tiles)


def test_tile_grid_discards_edges():
    assert len(tile_grid(np.zeros((500, 500, 3), np.uint8))) == 4


def test_tile_grid_too_small():
    with pytest.raises(ValueError, match="image too small"):
        tile_grid(np.zeros((223, 224, 3), np.uint8))


@settings(max_examples=20, deadline=None)
@given(st.integers(224, 1000), st.integers(224, 1000))
def test_tile_grid_floor_counts(w, h):
    img = np.zeros((h, w, 3), np.uint8)
    assert [t.origin for t in tile_grid(img)] == tile_origins(w, h)


def test_tile_pixels_are_views_of_source():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (450, 700, 3), dtype=np.uint8)
    for t in tile_grid(img):
        assert np.array_equal(t.pixels, img[t.y:t.y + 224, t.x:t.x + 224])


def test_foreground_white_and_dark():
    assert not foreground_mask(np.full((448, 448, 3), 255, np.uint8)).any()
    assert foreground_mask(np.full((448, 448, 3), 50, np.uint8)).all()


def test_foreground_half_dark():
    img = np.full((448, 448, 3), 255, np.uint8)
    img[:, :224] = 50
    mask = foreground_mask(img)
    assert mask.tolist() == [[True, False], [True, False]]


def test_foreground_quorum_oracle():
    img = np.full((224, 224, 3), 255, np.uint8)
    flat = img.reshape(-1, 3)
    flat[: 224 * 224 // 2] = 50  # exactly half dark
    assert foreground_mask(img)[0, 0]
    flat[0] = 255
    assert not foreground_mask(img)[0, 0]


def test_mask_file_roundtrip(tmp_path):
    m = np.zeros((2, 3, 3), np.uint8)
    m[1, 2] = 255
    save_png(tmp_path / "m.png", m)
    got = load_mask(tmp_path / "m.png", (2, 3))
    assert got.sum() == 1 and got[1, 2]
    with pytest.raises(ValueError):
        load_mask(tmp_path / "m.png", (3, 3))


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    save_png(tmp_path / "a.png", img)
    assert np.array_equal(load_png(tmp_path / "a.png"), img)


def test_od_bijection():
    v = np.arange(256, dtype=np.uint8)
    assert np.array_equal(od_to_rgb(optical_density(v)), v)


def test_estimate_stains_grayscale():
    g = np.random.default_rng(0).integers(20, 200, (64, 64))
    with pytest.raises(StainEstimationError, match="degenerate stain plane"):
        estimate_stains(np.stack([g] * 3, axis=-1).astype(np.uint8))


def test_estimate_stains_too_few_pixels():
    img = np.full((64, 64, 3), 255, np.uint8)
    img[:5, :5] = (100, 50, 150)
    with pytest.raises(StainEstimationError):
        estimate_stains(img)


def test_estimate_stains_recovers_known_vectors():
    prof = estimate_stains(two_stain_image(H_TRUE, E_TRUE))
    assert angle_deg(prof.stain_matrix[:, 0], H_TRUE) < 2.0
    assert angle_deg(prof.stain_matrix[:, 1], E_TRUE) < 2.0
    assert np.allclose(np.linalg.norm(prof.stain_matrix, axis=0), 1.0)
    assert (prof.stain_matrix >= 0).all()


def test_estimate_stains_shuffle_invariant():
    img = two_stain_image(H_TRUE, E_TRUE, side=128, seed=3)
    perm = np.random.default_rng(0).permutation(128 * 128)
    shuffled = img.reshape(-1, 3)[perm].reshape(img.shape)
    a, b = estimate_stains(img), estimate_stains(shuffled)
    assert np.allclose(a.stain_matrix, b.stain_matrix, atol=1e-12)
    assert np.allclose(a.max_concentration, b.max_concentration, atol=1e-12)


def test_normalize_identity():
    img = two_stain_image(H_TRUE, E_TRUE, side=128)
    prof = estimate_stains(img)
    out = normalize_to(img, prof, prof)
    assert out.shape == img.shape
    assert np.abs(out.astype(int) - img.astype(int)).mean() <= 1.0


def test_normalize_white_stays_white():
    white = np.full((32, 32, 3), 255, np.uint8)
    src = StainProfile(np.column_stack([unit(H_TRUE), unit(E_TRUE)]), [0.8, 0.6])
    tgt = StainProfile(np.column_stack([unit((0.55, 0.75, 0.37)), unit((0.15, 0.95, 0.25))]), [1.0, 0.5])
    assert (normalize_to(white, src, tgt) == 255).all()


def test_remix_reproduces_pure_stain_pixels():
    prof = StainProfile(np.column_stack([unit(H_TRUE), unit(E_TRUE)]), [1.0, 1.0])
    rng = np.random.default_rng(2)
    c = rng.random((500, 2))
    od = c @ prof.stain_matrix.T
    img = od_to_rgb(od).reshape(20, 25, 3)
    assert np.abs(normalize_to(img, prof, prof).astype(int) - img.astype(int)).max() <= 1
