"""Small image helpers shared by training, metrics, and the CLI."""

from __future__ import annotations

import math

import numpy as np
import torch
from PIL import Image


def tensor_to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) or (B, 3, H, W) in [-1, 1] -> uint8 HWC array(s)."""
    arr = ((img.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    arr = arr.cpu().numpy()
    return np.moveaxis(arr, -3, -1)


def save_image(img: torch.Tensor, path: str) -> None:
    Image.fromarray(tensor_to_uint8(img)).save(path)


def save_image_grid(imgs: torch.Tensor, path: str, cols: int | None = None) -> None:
    """(B, 3, H, W) in [-1, 1] -> one tiled PNG."""
    arr = tensor_to_uint8(imgs)
    b, h, w, _ = arr.shape
    cols = cols or int(math.ceil(math.sqrt(b)))
    rows = int(math.ceil(b / cols))
    grid = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for i in range(b):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = arr[i]
    Image.fromarray(grid).save(path)


def save_grayscale(values: np.ndarray, path: str) -> None:
    """Float grid -> 8-bit grayscale PNG, scaled to the value range."""
    lo, hi = float(values.min()), float(values.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    Image.fromarray(((values - lo) * scale).astype(np.uint8), mode="L").save(path)
