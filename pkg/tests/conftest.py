import numpy as np
import pytest
from PIL import Image

from outpainting.preprocess import OutpaintGeometry

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def check(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return check


@pytest.fixture
def tiny_geometry():
    return OutpaintGeometry(8, 4, 2)


def write_images(directory, count, size, seed=0, prefix="img"):
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        h, w = size
        # smooth-ish content: random low-res field upsampled
        low = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        im = Image.fromarray(low).resize((w, h), Image.BILINEAR)
        path = directory / f"{prefix}_{i:03d}.png"
        im.save(path)
        paths.append(path)
    return paths


@pytest.fixture
def image_dir(tmp_path):
    def make(count=6, size=(32, 32), seed=0):
        d = tmp_path / f"images_{count}_{size[0]}x{size[1]}_{seed}"
        write_images(d, count, size, seed)
        return d
    return make
