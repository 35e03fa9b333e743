"""Train/validation manifests and deterministic minibatch sampling."""
import hashlib
import logging
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, List, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .objectives import normalize

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MANIFEST_HEADER = "# outpainting manifest v1"


class ConfigurationError(ValueError):
    pass


class DecodeError(OSError):
    pass


@dataclass
class DatasetManifest:
    train_paths: List[str]
    val_paths: List[str]
    target_size: Tuple[int, int] = (128, 128)
    seed: int = 0
    skipped: List[str] = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.train_paths) & set(self.val_paths)
        if overlap:
            raise ConfigurationError(f"train and val sets overlap: {sorted(overlap)[:3]}")
        self.target_size = tuple(int(v) for v in self.target_size)

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER, f"seed {self.seed}",
                 f"target_size {self.target_size[0]} {self.target_size[1]}", "[train]"]
        lines += self.train_paths
        lines.append("[val]")
        lines += self.val_paths
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ConfigurationError("not an outpainting manifest (bad header)")
        seed, size, section = 0, (128, 128), None
        train, val = [], []
        for line in lines[1:]:
            if not line:
                continue
            if line == "[train]":
                section = train
            elif line == "[val]":
                section = val
            elif section is None and line.startswith("seed "):
                seed = int(line.split()[1])
            elif section is None and line.startswith("target_size "):
                size = tuple(int(v) for v in line.split()[1:3])
            elif section is None:
                raise ConfigurationError(f"unexpected manifest line: {line!r}")
            else:
                section.append(line)
        return cls(train, val, size, seed)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_text(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


def build_manifest(root_dir, val_count: int, seed: int,
                   target_size: Tuple[int, int] = (128, 128)) -> DatasetManifest:
    """Split the images under ``root_dir`` into train and held-out validation lists.

    Files are listed recursively and sorted before a seeded shuffle, so the
    split depends only on the file set, ``val_count`` and ``seed``.
    Undecodable files are skipped and recorded in ``manifest.skipped``.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigurationError(f"dataset directory does not exist: {root}")
    candidates = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    good, skipped = [], []
    for p in candidates:
        (good if _is_decodable(p) else skipped).append(str(p))
    for p in skipped:
        logger.warning("skipping undecodable image %s", p)
    if not good:
        raise ConfigurationError(f"no decodable images in {root}")
    if val_count < 0 or len(good) < val_count + 1:
        raise ConfigurationError(
            f"need at least {val_count + 1} images for val_count={val_count}, found {len(good)}")
    order = np.random.default_rng(seed).permutation(len(good))
    shuffled = [good[i] for i in order]
    manifest = DatasetManifest(shuffled[val_count:], shuffled[:val_count], target_size, seed, skipped)
    logger.info("manifest: %d train, %d val, %d skipped", len(manifest.train_paths),
                len(manifest.val_paths), len(skipped))
    return manifest


def load_and_downsample(path, target_size: Tuple[int, int] = (128, 128)) -> np.ndarray:
    """Decode ``path`` to an RGB uint8 array of shape ``target_size + (3,)``.

    Downscaling uses box (area-average) filtering.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            h, w = target_size
            if im.size != (w, h):
                downscale = w <= im.width and h <= im.height
                im = im.resize((w, h), Image.BOX if downscale else Image.BICUBIC)
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


@lru_cache(maxsize=4096)
def _cached(path: str, target_size: Tuple[int, int]) -> np.ndarray:
    pixels = load_and_downsample(path, target_size)
    pixels.setflags(write=False)
    return pixels


def batch_indices(n_train: int, batch_size: int, step: int, seed: int) -> List[int]:
    """Indices into ``train_paths`` for ``step``.

    Consecutive steps walk through a seeded per-epoch permutation, so each
    epoch visits every image once.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n_train < 1:
        raise ValueError("manifest has no training images")
    start = step * batch_size
    indices = []
    for pos in range(start, start + batch_size):
        epoch, offset = divmod(pos, n_train)
        indices.append(int(_epoch_permutation(n_train, seed, epoch)[offset]))
    return indices


@lru_cache(maxsize=8)
def _epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def sample_minibatch(manifest: DatasetManifest, batch_size: int, step: int) -> List[np.ndarray]:
    """Normalized float32 images in [0, 1] for training step ``step``."""
    n = len(manifest.train_paths)
    if batch_size > n:
        logger.warning("batch_size %d exceeds %d training images; sampling with replacement", batch_size, n)
    idx = batch_indices(n, batch_size, step, manifest.seed)
    return [normalize(_cached(manifest.train_paths[i], manifest.target_size)) for i in idx]


def load_split(paths: List[str], target_size: Tuple[int, int]) -> List[np.ndarray]:
    return [_cached(p, tuple(target_size)) for p in paths]


def prefetch_batches(manifest: DatasetManifest, batch_size: int, steps: Iterable[int],
                     workers: int = 2, depth: int = 4) -> Iterator[List[np.ndarray]]:
    """Yield minibatches for ``steps`` in order, decoding up to ``depth`` ahead on worker threads."""
    workers = max(1, min(workers, os.cpu_count() or 1))
    pending = deque()
    steps = iter(steps)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for step in steps:
            pending.append(pool.submit(sample_minibatch, manifest, batch_size, step))
            if len(pending) >= depth:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
