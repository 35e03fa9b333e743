"""Generator and discriminator architectures.

Networks are described declaratively by a :class:`NetworkSpec` (an ordered
list of :class:`LayerSpec` rows: kind, kernel, dilation, stride, width, activation)
and realized as ``torch.nn`` modules. Public forward helpers take
channels-last arrays; the modules themselves are channels-first.
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

CONV, DECONV, FC, OUT, CONCAT = "CONV", "DECONV", "FC", "OUT", "CONCAT"
HALF = Fraction(1, 2)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    f: int = 1
    eta: int = 1
    s: Fraction = Fraction(1)
    n: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "s", Fraction(self.s))
        if self.kind not in (CONV, DECONV, FC, OUT, CONCAT):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.f < 1 or self.eta < 1:
            raise ValueError("filter size and dilation must be >= 1")
        if self.s not in (HALF, 1, 2):
            raise ValueError(f"stride must be 1/2, 1 or 2, got {self.s}")
        if (self.kind == DECONV) != (self.s == HALF):
            raise ValueError("DECONV layers, and only they, use stride 1/2")
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkSpec:
    role: str
    layers: Tuple[LayerSpec, ...]
    in_channels: int = 3


def generator_spec(dilations: Sequence[int] = (2, 4, 8)) -> NetworkSpec:
    if len(dilations) != 3 or any(int(d) < 1 for d in dilations):
        raise ValueError(f"expected three positive dilation rates, got {dilations!r}")
    d4, d5, d6 = (int(d) for d in dilations)
    layers = (
        LayerSpec(CONV, 5, 1, 1, 64),
        LayerSpec(CONV, 3, 1, 2, 128),
        LayerSpec(CONV, 3, 1, 1, 256),
        LayerSpec(CONV, 3, d4, 1, 256),
        LayerSpec(CONV, 3, d5, 1, 256),
        LayerSpec(CONV, 3, d6, 1, 256),
        LayerSpec(CONV, 3, 1, 1, 256),
        LayerSpec(DECONV, 4, 1, HALF, 128),
        LayerSpec(CONV, 3, 1, 1, 64),
        LayerSpec(OUT, 3, 1, 1, 3, "sigmoid"),
    )
    return NetworkSpec("generator", layers, in_channels=4)


def discriminator_specs() -> Tuple[NetworkSpec, NetworkSpec, NetworkSpec]:
    """Global, local and concatenator specs."""
    conv = lambda n: LayerSpec(CONV, 5, 1, 2, n)
    global_spec = NetworkSpec(
        "global_disc", tuple(conv(n) for n in (32, 64, 64, 64, 64)) + (LayerSpec(FC, n=512),))
    local_spec = NetworkSpec(
        "local_disc", tuple(conv(n) for n in (32, 64, 64, 64)) + (LayerSpec(FC, n=512),))
    concat_spec = NetworkSpec(
        "concatenator", (LayerSpec(CONCAT, activation="none"), LayerSpec(FC, n=1, activation="sigmoid")),
        in_channels=1536)
    return global_spec, local_spec, concat_spec


def format_spec(spec: NetworkSpec) -> str:
    """Render a spec as a plain-text table with the columns Type, f, eta, s, n, act."""
    rows = [("Type", "f", "eta", "s", "n", "act")]
    for layer in spec.layers:
        if layer.kind in (FC, CONCAT):
            rows.append((layer.kind, "-", "-", "-", str(layer.n), layer.activation))
        else:
            rows.append((layer.kind, str(layer.f), str(layer.eta), str(layer.s), str(layer.n), layer.activation))
    widths = [max(len(r[i]) for r in rows) for i in range(6)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return f"# {spec.role}\n" + "\n".join(lines) + "\n"


# ---------------------------------------------------------------- arithmetic

def conv_output_size(size: int, layer: LayerSpec) -> int:
    """Spatial size after one layer under the padding rules used by :func:`build_network`."""
    if layer.kind == DECONV:
        return size * 2
    if layer.kind in (CONV, OUT):
        pad = _padding(layer)
        return (size + 2 * pad - layer.eta * (layer.f - 1) - 1) // int(layer.s) + 1
    raise ValueError(f"{layer.kind} has no spatial output")


def spatial_trace(spec: NetworkSpec, height: int, width: int) -> List[Tuple[int, int]]:
    """Spatial size after each convolutional layer of ``spec``."""
    trace = []
    for layer in spec.layers:
        if layer.kind not in (CONV, DECONV, OUT):
            break
        height, width = conv_output_size(height, layer), conv_output_size(width, layer)
        trace.append((height, width))
    return trace


def receptive_field(spec: NetworkSpec) -> List[int]:
    """Receptive field (input pixels) after each layer.

    Uses ``r += (f - 1) * eta * jump; jump *= s``. A stride-1/2 transposed
    conv with kernel ``f`` reaches ``ceil(f / 2)`` input-grid taps, so it adds
    ``(ceil(f / 2) - 1) * jump`` and then halves the jump.
    """
    r, jump = 1, Fraction(1)
    sizes = []
    for layer in spec.layers:
        if layer.kind == DECONV:
            taps = -(-layer.f // 2)
            r += (taps - 1) * jump
        elif layer.kind in (CONV, OUT):
            r += (layer.f - 1) * layer.eta * jump
        else:
            raise ValueError(f"receptive field undefined for {layer.kind} layers")
        jump *= layer.s
        sizes.append(int(r))
    return sizes


# ---------------------------------------------------------------- modules

_ACTIVATIONS = {"relu": nn.ReLU, "sigmoid": nn.Sigmoid, "none": nn.Identity}


def _padding(layer: LayerSpec) -> int:
    # 'same' for stride 1; halves exactly for stride 2 with odd kernels
    return layer.eta * (layer.f - 1) // 2


def build_network(spec: NetworkSpec, input_hw: Optional[Tuple[int, int]] = None) -> nn.Sequential:
    """Instantiate an uninitialized module for ``spec``.

    FC layers need the flattened input size, hence ``input_hw`` for specs
    that contain convolutions followed by FC layers.
    """
    modules = []
    channels = spec.in_channels
    hw = input_hw
    for layer in spec.layers:
        if layer.kind in (CONV, OUT):
            modules.append(nn.Conv2d(channels, layer.n, layer.f, stride=int(layer.s),
                                     padding=_padding(layer), dilation=layer.eta))
            if hw is not None:
                hw = (conv_output_size(hw[0], layer), conv_output_size(hw[1], layer))
            channels = layer.n
        elif layer.kind == DECONV:
            # output = 2 * input requires 2 * pad - output_padding = eta * (f - 1) - 1
            need = layer.eta * (layer.f - 1) - 1
            pad = (need + 1) // 2
            modules.append(nn.ConvTranspose2d(channels, layer.n, layer.f, stride=2, padding=pad,
                                              output_padding=2 * pad - need, dilation=layer.eta))
            if hw is not None:
                hw = (hw[0] * 2, hw[1] * 2)
            channels = layer.n
        elif layer.kind == FC:
            if modules and not isinstance(modules[-1], nn.Flatten) and hw is not None:
                modules.append(nn.Flatten())
                channels = channels * hw[0] * hw[1]
                hw = None
            modules.append(nn.Linear(channels, layer.n))
            channels = layer.n
        elif layer.kind == CONCAT:
            continue
        modules.append(_ACTIVATIONS[layer.activation]())
    return nn.Sequential(*modules)


def init_params(module: nn.Module, seed: int) -> nn.Module:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, deterministic in ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, (nn.Conv2d, nn.Linear)):
                fan_in = layer.weight[0].numel()
            elif isinstance(layer, nn.ConvTranspose2d):
                # each output sees in_channels * (f/stride)^2 inputs
                fan_in = layer.weight.shape[0] * layer.weight[0, 0].numel() // 4
            else:
                continue
            std = (2.0 / fan_in) ** 0.5
            layer.weight.copy_(torch.randn(layer.weight.shape, generator=gen, dtype=layer.weight.dtype) * std)
            layer.bias.zero_()
    return module


def weight_shapes(module: nn.Module) -> List[Tuple[int, ...]]:
    """Per-layer kernel shapes in ``(f, f, in, out)`` / ``(in, out)`` layout."""
    shapes = []
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            shapes.append(tuple(layer.weight.permute(2, 3, 1, 0).shape))
        elif isinstance(layer, nn.ConvTranspose2d):
            shapes.append(tuple(layer.weight.permute(2, 3, 0, 1).shape))
        elif isinstance(layer, nn.Linear):
            shapes.append(tuple(layer.weight.T.shape))
    return shapes


class Generator(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.net = build_network(spec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"generator expects {self.spec.in_channels} channels, got {x.shape[1]}")
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError(f"generator needs even spatial sizes, got {tuple(x.shape[-2:])}")
        return self.net(x)


def make_generator(dilations: Sequence[int] = (2, 4, 8), seed: int = 0,
                   spec: Optional[NetworkSpec] = None) -> Generator:
    return init_params(Generator(spec or generator_spec(dilations)), seed)


def split_halves(image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Left half, and the right half mirrored so its outer strip is on the left.

    Works on the last (width) axis of channels-first tensors.
    """
    width = image.shape[-1]
    if width % 2:
        raise ValueError(f"image width must be even to split, got {width}")
    half = width // 2
    return image[..., :half], torch.flip(image[..., half:], dims=(-1,))


class Discriminator(nn.Module):
    """Global branch, optional shared local branch, and the concatenator.

    Built for one fixed input size, since the branches end in FC layers.
    """

    def __init__(self, height: int = 128, width: int = 128, use_local: bool = True,
                 specs: Optional[Tuple[NetworkSpec, NetworkSpec, NetworkSpec]] = None):
        super().__init__()
        global_spec, local_spec, concat_spec = specs or discriminator_specs()
        self.input_hw = (height, width)
        self.use_local = use_local
        self.global_branch = build_network(global_spec, (height, width))
        self.local_branch = build_network(local_spec, (height, width // 2)) if use_local else None
        feat = global_spec.layers[-1].n + (2 * local_spec.layers[-1].n if use_local else 0)
        if use_local and feat != concat_spec.in_channels:
            raise ValueError(f"concatenator expects {concat_spec.in_channels} features, got {feat}")
        self.concat = build_network(NetworkSpec(concat_spec.role, concat_spec.layers, feat))

    def features(self, image: torch.Tensor) -> torch.Tensor:
        if tuple(image.shape[-2:]) != self.input_hw:
            raise ValueError(f"discriminator built for {self.input_hw}, got {tuple(image.shape[-2:])}")
        parts = [self.global_branch(image)]
        if self.use_local:
            left, right = split_halves(image)
            parts += [self.local_branch(left), self.local_branch(right)]
        return torch.cat(parts, dim=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.concat(self.features(image)).squeeze(1)


def make_discriminator(height: int = 128, width: int = 128, use_local: bool = True,
                       seed: int = 1) -> Discriminator:
    return init_params(Discriminator(height, width, use_local), seed)


# ---------------------------------------------------------------- array helpers

def to_nchw(x) -> torch.Tensor:
    t = torch.as_tensor(np.ascontiguousarray(x) if isinstance(x, np.ndarray) else x)
    squeeze = t.dim() == 3
    if squeeze:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()


def generator_forward(generator: Generator, x: np.ndarray) -> np.ndarray:
    """Run the generator on channels-last input ``(H, W, 4)`` or ``(N, H, W, 4)``."""
    x = np.asarray(x)
    dtype = next(generator.parameters()).dtype
    with torch.no_grad():
        out = to_nhwc(generator(to_nchw(x).to(dtype)))
    return out[0] if x.ndim == 3 else out


def discriminator_forward(discriminator: Discriminator, image: np.ndarray):
    """Probability that a channels-last image (or batch) is real."""
    image = np.asarray(image)
    dtype = next(discriminator.parameters()).dtype
    with torch.no_grad():
        p = discriminator(to_nchw(image).to(dtype)).numpy()
    return float(p[0]) if image.ndim == 3 else p
