"""Mask construction and mean-filling of the regions to be outpainted.

Arrays are channels-last. Every function accepts optional leading batch
dimensions on the image; the mask is always a single ``(height, width)`` array
shared across the batch.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class OutpaintGeometry:
    """Image of height ``m`` with a known center ``n`` wide and unknown strips ``k`` wide."""

    m: int = 128
    n: int = 64
    k: int = 32

    def __post_init__(self):
        for name in ("m", "n", "k"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValueError(f"geometry field {name} must be a positive integer, got {value!r}")

    @property
    def total_width(self) -> int:
        return self.n + 2 * self.k

    @property
    def shape(self) -> tuple:
        return (self.m, self.total_width)


DEFAULT_GEOMETRY = OutpaintGeometry(128, 64, 32)


class PreprocessedPair(NamedTuple):
    ground_truth: np.ndarray
    generator_input: np.ndarray


def build_mask(geometry: OutpaintGeometry) -> np.ndarray:
    """Return the binary mask, 1 on the two outer strips and 0 on the known center."""
    mask = np.ones(geometry.shape, dtype=np.uint8)
    mask[:, geometry.k:geometry.k + geometry.n] = 0
    return mask


def _check_shapes(image: np.ndarray, mask: np.ndarray):
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if image.ndim < 3 or image.shape[-3:-1] != mask.shape:
        raise ValueError(f"image shape {image.shape} does not match mask shape {mask.shape}")


def mean_unmasked(image: np.ndarray, mask: np.ndarray):
    """Scalar mean over every channel of the pixels where ``mask == 0``.

    With leading batch dimensions one mean per image is returned.
    """
    image = np.asarray(image)
    _check_shapes(image, mask)
    known = mask == 0
    if not known.any():
        raise ValueError("mask covers the whole image; the unmasked mean is undefined")
    values = image[..., known, :]
    return values.mean(axis=(-2, -1))


def assemble_input(image: np.ndarray, mask: np.ndarray) -> PreprocessedPair:
    """Mean-fill the masked region and append the mask as a fourth channel."""
    image = np.asarray(image)
    _check_shapes(image, mask)
    mask_f = mask.astype(image.dtype)[..., None]
    if mask.any():
        mu = np.asarray(mean_unmasked(image, mask), dtype=image.dtype)[..., None, None, None]
    else:
        mu = np.zeros(image.shape[:-3] + (1, 1, 1), dtype=image.dtype)
    filled = np.where(mask_f > 0, mu, image)
    mask_channel = np.broadcast_to(mask_f, image.shape[:-1] + (1,))
    return PreprocessedPair(image, np.concatenate([filled, mask_channel], axis=-1))
