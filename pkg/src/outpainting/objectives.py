"""Training losses and the masked RMSE metric.

The losses operate on torch tensors so that autograd provides their
gradients; ``rmse`` and ``renormalize`` are plain numpy evaluation helpers.
Images passed to the losses are channels-first ``(N, 3, H, W)`` batches and
the mask broadcasts as ``(H, W)``.
"""
import numpy as np
import torch

EPS = 1e-7


def _as_mask(mask, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(np.asarray(mask), dtype=like.dtype, device=like.device)


def mse_loss(output: torch.Tensor, target: torch.Tensor, mask) -> torch.Tensor:
    """Sum of squared errors on the masked region, averaged over the batch."""
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    m = _as_mask(mask, output)
    if m.shape != output.shape[-2:]:
        raise ValueError(f"mask shape {tuple(m.shape)} does not match images {tuple(output.shape)}")
    sq = (m * (output - target)) ** 2
    if sq.dim() == 3:
        return sq.sum()
    return sq.flatten(1).sum(dim=1).mean()


def _clamp(p):
    if isinstance(p, torch.Tensor):
        return p.clamp(EPS, 1 - EPS)
    return torch.tensor(float(np.clip(p, EPS, 1 - EPS)), dtype=torch.float64)


def disc_loss(p_real, p_fake) -> torch.Tensor:
    """-[log D(real) + log(1 - D(fake))], batch mean."""
    p_real, p_fake = _clamp(p_real), _clamp(p_fake)
    return -(torch.log(p_real) + torch.log1p(-p_fake)).mean()


def gen_loss(mse, p_fake, alpha: float) -> torch.Tensor:
    """Masked MSE plus the non-saturating adversarial term weighted by ``alpha``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    p_fake = _clamp(p_fake)
    return mse - alpha * torch.log(p_fake).mean()


def rmse(truth: np.ndarray, output: np.ndarray, mask: np.ndarray) -> float:
    """Masked RMSE in [0, 255] intensity units.

    Squared errors are summed over all three channels but normalized by the
    number of masked *pixels*, so a full-scale error on every channel gives
    ``255 * sqrt(3)``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    output = np.asarray(output, dtype=np.float64)
    if truth.shape != output.shape or truth.shape[-3:-1] != mask.shape:
        raise ValueError(f"shape mismatch: {truth.shape}, {output.shape}, mask {mask.shape}")
    support = int(np.count_nonzero(mask))
    if support == 0:
        raise ValueError("mask has empty support")
    diff = mask[..., None] * (truth - output)
    return float(np.sqrt(np.sum(diff ** 2) / support))


def renormalize(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 pixels, rounding half up."""
    scaled = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def normalize(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels).astype(np.float32) / np.float32(255)
