"""Gradient-domain (Poisson) compositing.

``seamless_blend`` pastes the known center of the source into the generated
image: inside the blend region the result reproduces the source's
Laplacian, and on the region's border it takes the destination's values.

``blend_generated_strips`` runs the same solver the other way round. The
generated strips keep their own gradients but are pinned to the known center
along the seam, so the center is never modified. The inference pipeline uses
this one.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-3


@dataclass
class BlendRequest:
    source: np.ndarray
    destination: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.source.shape != self.destination.shape:
            raise ValueError(f"source {self.source.shape} and destination {self.destination.shape} differ")
        if self.source.ndim != 3 or self.source.shape[:2] != self.mask.shape:
            raise ValueError(f"mask {self.mask.shape} does not match images {self.source.shape}")


def erode(region: np.ndarray) -> np.ndarray:
    """4-neighbour binary erosion; pixels on the image border are always removed."""
    region = region.astype(bool)
    out = np.zeros_like(region)
    out[1:-1, 1:-1] = (region[1:-1, 1:-1] & region[:-2, 1:-1] & region[2:, 1:-1]
                       & region[1:-1, :-2] & region[1:-1, 2:])
    return out


def poisson_system(region: np.ndarray):
    """Sparse 5-point Laplacian restricted to ``region`` plus its pixel index map."""
    h, w = region.shape
    index = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(region)
    index[ys, xs] = np.arange(len(ys))
    rows, cols, vals = [np.arange(len(ys))], [np.arange(len(ys))], [np.full(len(ys), 4.0)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        nbr = np.full(len(ys), -1)
        nbr[inside] = index[ny[inside], nx[inside]]
        ok = nbr >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nbr[ok])
        vals.append(-np.ones(ok.sum()))
    n = len(ys)
    a = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return a, index, ys, xs


def _rhs(guide: np.ndarray, boundary: np.ndarray, region: np.ndarray, ys, xs) -> np.ndarray:
    h, w = region.shape
    b = np.zeros(len(ys))
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny = np.clip(ys + dy, 0, h - 1)
        nx = np.clip(xs + dx, 0, w - 1)
        real = (ys + dy == ny) & (xs + dx == nx)
        # guidance gradient toward every real neighbour
        b += np.where(real, guide[ys, xs] - guide[ny, nx], 0.0)
        outside = real & ~region[ny, nx]
        b += np.where(outside, boundary[ny, nx], 0.0)
    return b


def poisson_composite(guide: np.ndarray, boundary: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Solve the Poisson equation per channel on ``region``.

    Gradients come from ``guide`` and Dirichlet values from ``boundary``.
    Pixels outside ``region`` are copied from ``boundary``. Float result,
    not rounded.
    """
    region = region.astype(bool)
    guide = guide.astype(np.float64)
    out = boundary.astype(np.float64).copy()
    if not region.any():
        return out
    a, _, ys, xs = poisson_system(region)
    for c in range(guide.shape[2]):
        b = _rhs(guide[..., c], out[..., c], region, ys, xs)
        x0 = guide[ys, xs, c]
        sol, info = cg(a, b, x0=x0, rtol=1e-10, atol=RESIDUAL_TOL * 1e-5, maxiter=10 * len(ys) + 100)
        residual = np.linalg.norm(a @ sol - b)
        if info != 0 or residual > RESIDUAL_TOL:
            raise RuntimeError(f"Poisson solve did not converge (info={info}, residual={residual:.3g})")
        out[ys, xs, c] = sol
    return out


def _to_pixels(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def blend_region(mask: np.ndarray) -> np.ndarray:
    """The known region (``mask == 0``) shrunk by one pixel."""
    return erode(np.asarray(mask) == 0)


def _too_thin(region: np.ndarray, known: np.ndarray) -> bool:
    cols = np.nonzero(known.any(axis=0))[0]
    rows = np.nonzero(known.any(axis=1))[0]
    return not region.any() or len(cols) < 3 or len(rows) < 3


def seamless_blend(request: BlendRequest) -> np.ndarray:
    """Clone the known center of ``request.source`` into ``request.destination``."""
    mask = np.asarray(request.mask)
    known = mask == 0
    region = blend_region(mask)
    if _too_thin(region, known):
        logger.warning("blend region narrower than 3 px; copying the source directly")
        out = request.destination.copy()
        out[known] = request.source[known]
        return out
    return _to_pixels(poisson_composite(request.source, request.destination, region))


def blend_generated_strips(known: np.ndarray, generated: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fit the generated strips (``mask == 1``) seamlessly against the known pixels.

    The known pixels pass through unchanged. Inside the strips the result
    keeps the generated gradients. Along the seam it matches the known
    pixels, and on the outer image border it matches the generated ones.
    """
    mask = np.asarray(mask).astype(bool)
    canvas = np.where(mask[..., None], generated, known)
    border = np.zeros_like(mask)
    border[[0, -1], :] = True
    border[:, [0, -1]] = True
    region = mask & ~border
    if not region.any():
        return canvas.astype(np.uint8)
    return _to_pixels(poisson_composite(generated, canvas, region))
