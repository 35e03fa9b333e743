"""Render the bundled 128x128 city test image (deterministic)."""
import sys

import numpy as np
from PIL import Image


def render(size=128, seed=2018):
    rng = np.random.default_rng(seed)
    h = w = size
    y = np.linspace(0, 1, h)[:, None]
    sky = np.stack([90 + 100 * y, 140 + 80 * y, 220 - 20 * y], axis=-1)
    img = np.broadcast_to(sky, (h, w, 3)).copy()
    # far skyline then near skyline
    for layer, (shade, lo, hi) in enumerate([(0.55, 0.25, 0.6), (0.85, 0.4, 0.8)]):
        x = 0
        while x < w:
            bw = int(rng.integers(8, 20))
            top = int(h * (1 - rng.uniform(lo, hi)))
            base = rng.uniform(60, 140, size=3) * shade
            img[top:h - 12, x:x + bw] = base
            if layer == 1:
                lit = rng.uniform(180, 250, size=3)
                for wy in range(top + 3, h - 15, 5):
                    for wx in range(x + 2, min(x + bw - 2, w), 4):
                        if rng.random() < 0.55:
                            img[wy:wy + 2, wx:wx + 2] = lit
            x += bw + int(rng.integers(0, 4))
    img[h - 12:] = [70, 70, 75]
    img[h - 7:h - 6, ::6] = [230, 220, 120]
    img += rng.normal(0, 3, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "src/outpainting/data/city.png"
    Image.fromarray(render()).save(out, format="PNG", optimize=False, compress_level=6)
    print("wrote", out)
