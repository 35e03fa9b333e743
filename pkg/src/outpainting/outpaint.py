"""Inference: single-shot and recursive horizontal outpainting."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .network import Generator, generator_forward
from .objectives import normalize, renormalize, rmse
from .postprocess import BlendRequest, blend_generated_strips, seamless_blend
from .preprocess import OutpaintGeometry, assemble_input, build_mask

BLEND_MODES = ("strips", "center", "none")


@dataclass
class OutpaintResult:
    output: np.ndarray
    raw: np.ndarray
    geometry: OutpaintGeometry
    rmse: Optional[float] = None


def _blend(known: np.ndarray, generated: np.ndarray, mask: np.ndarray, mode: str) -> np.ndarray:
    if mode == "strips":
        return blend_generated_strips(known, generated, mask)
    if mode == "center":
        return seamless_blend(BlendRequest(known, generated, mask))
    if mode == "none":
        return np.where(mask[..., None] > 0, generated, known).astype(np.uint8)
    raise ValueError(f"blend mode must be one of {BLEND_MODES}, got {mode!r}")


def outpaint_once(generator: Generator, image: np.ndarray, geometry: OutpaintGeometry,
                  ground_truth: Optional[np.ndarray] = None, blend: str = "strips") -> OutpaintResult:
    """Regenerate the outer strips of ``image`` from its center columns.

    ``image`` is uint8 with shape ``(m, n + 2k, 3)``. Its strips are ignored.
    """
    image = np.asarray(image)
    if image.shape != geometry.shape + (3,):
        raise ValueError(f"image shape {image.shape} does not match geometry {geometry.shape}")
    mask = build_mask(geometry)
    _, gen_input = assemble_input(normalize(image), mask)
    raw = generator_forward(generator, gen_input)
    generated = renormalize(raw)
    output = _blend(image, generated, mask, blend)
    score = rmse(ground_truth, generated, mask) if ground_truth is not None else None
    return OutpaintResult(output, raw, geometry, score)


def expand_and_pad(image: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Widen ``image`` by ``k`` columns each side, filled with its scalar mean.

    Returns the 4-channel generator input (values in [0, 1]) and the mask of
    the new columns.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pixels = normalize(image)
    m, w = pixels.shape[:2]
    canvas = np.zeros((m, w + 2 * k, 3), dtype=np.float32)
    canvas[:, k:k + w] = pixels
    mask = build_mask(OutpaintGeometry(m, w, k))
    return assemble_input(canvas, mask).generator_input, mask


def outpaint_recursive(generator: Generator, image: np.ndarray, iterations: int, k: int = 32,
                       blend: str = "strips") -> OutpaintResult:
    """Repeatedly widen ``image`` by ``2k`` columns, ``iterations`` times.

    The generator runs on the whole widened canvas each time.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    current = np.asarray(image)
    raw = None
    for _ in range(iterations):
        m, w = current.shape[:2]
        if (w + 2 * k) % 2:
            raise ValueError(f"intermediate width {w + 2 * k} is odd")
        gen_input, mask = expand_and_pad(current, k)
        raw = generator_forward(generator, gen_input)
        known = np.zeros((m, w + 2 * k, 3), dtype=np.uint8)
        known[:, k:k + w] = current
        current = _blend(known, renormalize(raw), mask, blend)
    m, w = current.shape[:2]
    return OutpaintResult(current, raw, OutpaintGeometry(m, image.shape[1], (w - image.shape[1]) // 2))


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, pixels: np.ndarray):
    # fixed encoder settings so reruns are byte-identical
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(Path(path), format="PNG", optimize=False,
                                                            compress_level=6)


def side_by_side(*images: np.ndarray, gap: int = 4) -> np.ndarray:
    """Horizontally tile images of equal height with white gaps between them."""
    height = max(im.shape[0] for im in images)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(np.full((height, gap, 3), 255, dtype=np.uint8))
        padded = np.full((height, im.shape[1], 3), 255, dtype=np.uint8)
        padded[:im.shape[0]] = im
        parts.append(padded)
    return np.concatenate(parts, axis=1)
