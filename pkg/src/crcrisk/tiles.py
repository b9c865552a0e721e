"""Slide preprocessing: fixed-grid tiling, optical-density foreground masks
and Macenko stain normalization.

Images are ``(height, width, 3)`` uint8 RGB arrays. Optical density uses
base-10 logs with a +1 offset so that zero-valued channels stay finite::

    od = -log10((v + 1) / 256)
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

TILE_SIZE = 224
FOREGROUND_QUORUM = 0.5
MIN_TISSUE_PIXELS = 100


class StainEstimationError(ValueError):
    pass


@dataclass
class Tile:
    x: int
    y: int
    pixels: np.ndarray

    @property
    def origin(self):
        return (self.x, self.y)


@dataclass
class StainProfile:
    stain_matrix: np.ndarray  # (3, 2): hematoxylin, eosin columns
    max_concentration: np.ndarray  # (2,)

    def __post_init__(self):
        self.stain_matrix = np.asarray(self.stain_matrix, dtype=np.float64)
        self.max_concentration = np.asarray(self.max_concentration, dtype=np.float64)

    def full_basis(self):
        """3x3 basis: the two stain vectors plus their unit normal, so that
        light not explained by either stain survives a round trip."""
        h, e = self.stain_matrix[:, 0], self.stain_matrix[:, 1]
        n = np.cross(h, e)
        return np.column_stack([h, e, n / np.linalg.norm(n)])


# Reference H&E profile for normalization when no target slide is given
# (the widely used Macenko reference vectors, concentrations in log10 OD units).
_REF_HE = np.array([[0.5626, 0.2159], [0.7201, 0.8012], [0.4062, 0.5581]])
DEFAULT_TARGET = StainProfile(
    _REF_HE / np.linalg.norm(_REF_HE, axis=0),
    np.array([1.9705, 1.0308]) / np.log(10.0),
)


def as_rgb(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("channel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def optical_density(img) -> np.ndarray:
    return -np.log10((np.asarray(img, dtype=np.float64) + 1.0) / 256.0)


def od_to_rgb(od) -> np.ndarray:
    v = 256.0 * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def grid_shape(img):
    h, w = np.asarray(img).shape[:2]
    return h // TILE_SIZE, w // TILE_SIZE


def tile_grid(img):
    """Non-overlapping 224x224 tiles in row-major order; partial edge strips
    are dropped."""
    img = as_rgb(img)
    h, w = img.shape[:2]
    if h < TILE_SIZE or w < TILE_SIZE:
        raise ValueError(f"image too small: {w}x{h}, need at least {TILE_SIZE}x{TILE_SIZE}")
    rows, cols = grid_shape(img)
    return [
        Tile(c * TILE_SIZE, r * TILE_SIZE, img[r * TILE_SIZE:(r + 1) * TILE_SIZE, c * TILE_SIZE:(c + 1) * TILE_SIZE])
        for r in range(rows)
        for c in range(cols)
    ]


def foreground_mask(img, od_threshold=0.15) -> np.ndarray:
    """Boolean (rows, cols) grid; a tile is foreground when at least half of
    its pixels have mean optical density above ``od_threshold``."""
    img = as_rgb(img)
    rows, cols = grid_shape(img)
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=bool)
    crop = img[: rows * TILE_SIZE, : cols * TILE_SIZE]
    tissue = optical_density(crop).mean(axis=2) > od_threshold
    frac = tissue.reshape(rows, TILE_SIZE, cols, TILE_SIZE).mean(axis=(1, 3))
    return frac >= FOREGROUND_QUORUM


def load_mask(path, shape=None) -> np.ndarray:
    """External foreground mask: one pixel per tile, nonzero = foreground."""
    mask = np.asarray(Image.open(path).convert("L")) > 0
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask {path} has grid shape {mask.shape}, expected {tuple(shape)}")
    return mask


def estimate_stains(img, alpha=1.0, beta_od=0.15) -> StainProfile:
    """Macenko stain vector estimation.

    Pixels whose mean OD exceeds ``beta_od`` are projected onto the plane of
    the two leading principal directions of their OD covariance; the robust
    angular extremes (``alpha`` and ``100 - alpha`` percentiles) give the two
    stain vectors.
    """
    od = optical_density(as_rgb(img)).reshape(-1, 3)
    od = od[od.mean(axis=1) > beta_od]
    if od.shape[0] < MIN_TISSUE_PIXELS:
        raise StainEstimationError(f"too few tissue pixels ({od.shape[0]} < {MIN_TISSUE_PIXELS})")
    evals, evecs = np.linalg.eigh(np.cov(od, rowvar=False))
    if evals[2] <= 0 or evals[1] <= 1e-6 * evals[2]:
        raise StainEstimationError("degenerate stain plane: optical densities are collinear")
    v1, v2 = evecs[:, 2], evecs[:, 1]
    if v1.sum() < 0:
        v1 = -v1
    proj = od @ np.column_stack([v1, v2])
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [alpha, 100.0 - alpha])
    vecs = []
    for angle in (lo, hi):
        v = np.cos(angle) * v1 + np.sin(angle) * v2
        v = np.clip(v, 0.0, None)
        vecs.append(v / np.linalg.norm(v))
    a, b = vecs
    he = np.column_stack([a, b]) if a[2] >= b[2] else np.column_stack([b, a])
    conc, *_ = np.linalg.lstsq(he, od.T, rcond=None)
    return StainProfile(he, np.percentile(conc, 99, axis=1))


def normalize_to(img, source: StainProfile, target: StainProfile) -> np.ndarray:
    """Unmix with the source stains, rescale each stain's concentration by the
    ratio of 99th percentiles, and remix with the target stains."""
    img = as_rgb(img)
    od = optical_density(img).reshape(-1, 3).T
    conc = np.linalg.solve(source.full_basis(), od)
    conc[:2] *= (target.max_concentration / source.max_concentration)[:, None]
    out = target.full_basis() @ conc
    return od_to_rgb(out.T).reshape(img.shape)


# ---------------------------------------------------------------------------
# file helpers


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_png(path, img):
    Image.fromarray(as_rgb(img)).save(path, format="PNG")


def write_manifest(path, rows):
    """``rows``: iterable of ``(slide_id, tile_x, tile_y, foreground)``."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slide_id", "tile_x", "tile_y", "foreground"])
        for slide, x, y, fg in rows:
            w.writerow([slide, x, y, int(bool(fg))])
