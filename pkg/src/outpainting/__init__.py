"""GAN-based horizontal image outpainting."""
from .preprocess import DEFAULT_GEOMETRY, OutpaintGeometry, assemble_input, build_mask, mean_unmasked

__all__ = ["DEFAULT_GEOMETRY", "OutpaintGeometry", "assemble_input", "build_mask", "mean_unmasked"]
__version__ = "0.1.0"
