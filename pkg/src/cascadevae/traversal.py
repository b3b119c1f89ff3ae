"""Latent traversal rendering to binary PGM (P5) grids."""

from __future__ import annotations

import math

import numpy as np

from . import nn


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary PGM, maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"expected a 2-d uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _to_tiles(probs: np.ndarray, width: int) -> np.ndarray:
    return np.round(probs * 255.0).astype(np.uint8).reshape(-1, width, width)


def traversal_grids(
    params: nn.MlpParams,
    lo: float = -1.5,
    hi: float = 1.5,
    steps: int = 10,
) -> dict[str, np.ndarray]:
    """One grid per discrete value (rows sweep each continuous dim) plus a
    discrete sweep at z = 0. The image dimension must be a square raster."""
    width = math.isqrt(params.image_dim)
    if width * width != params.image_dim:
        raise ValueError(f"image dim {params.image_dim} is not a square raster")
    m, s = params.latent_dim, params.discrete_card
    sweep = np.linspace(lo, hi, steps)
    z = np.zeros((m * steps, m))
    for j in range(m):
        z[j * steps : (j + 1) * steps, j] = sweep
    grids: dict[str, np.ndarray] = {}
    eye = np.eye(s)
    for c in range(s):
        probs = nn.decoder_forward(params, z, np.tile(eye[c], (m * steps, 1)))
        tiles = _to_tiles(probs, width).reshape(m, steps, width, width)
        grids[f"d{c}"] = tiles.transpose(0, 2, 1, 3).reshape(m * width, steps * width)
    probs = nn.decoder_forward(params, np.zeros((s, m)), eye)
    tiles = _to_tiles(probs, width)
    grids["dsweep"] = tiles.transpose(1, 0, 2).reshape(width, s * width)
    return grids


def write_traversals(params: nn.MlpParams, out_prefix: str, lo=-1.5, hi=1.5, steps=10):
    paths = []
    for name, grid in traversal_grids(params, lo, hi, steps).items():
        path = f"{out_prefix}_{name}.pgm"
        write_pgm(path, grid)
        paths.append(path)
    return paths
