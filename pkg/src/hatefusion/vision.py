"""Image preprocessing and the vision branch (backbone + projection to 512-d)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .errors import ShapeMismatch, UnreadableImage, UnsupportedColorSpace
from .features import FEATURE_DIM, VISION, BranchFeature, generator, init_linear

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# modes PIL converts to RGB without inventing information
_CONVERTIBLE = {"1", "L", "LA", "P", "PA", "RGB", "RGBA", "RGBX", "CMYK", "YCbCr"}


@dataclass(frozen=True)
class PreprocessConfig:
    height: int = 299
    width: int = 299
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image size must be positive")
        if len(self.mean) != 3 or len(self.std) != 3 or any(s <= 0 for s in self.std):
            raise ValueError("mean/std need three entries and std > 0")


def load_rgb(image_path, index: Optional[str] = None) -> Image.Image:
    """Decode to RGB; grayscale is replicated across the three channels."""
    index = index if index is not None else Path(image_path).stem
    try:
        im = Image.open(image_path)
        im.load()
    except Exception as exc:
        raise UnreadableImage(index, str(exc)) from exc
    if im.mode not in _CONVERTIBLE:
        raise UnsupportedColorSpace(f"{index}: image mode {im.mode!r}")
    return im.convert("RGB")


def preprocess_image(image_path, config: PreprocessConfig = PreprocessConfig(), index=None) -> torch.Tensor:
    """Decode, resize to ``config`` size, scale to [0, 1] and normalize per channel.

    Returns a float32 tensor of shape ``(3, height, width)``.
    """
    im = load_rgb(image_path, index)
    if im.size != (config.width, config.height):
        im = im.resize((config.width, config.height), Image.BILINEAR)
    # float64 arithmetic so a pixel equal to the mean maps to exactly 0
    x = np.asarray(im, dtype=np.float64) / 255.0
    x = (x - np.asarray(config.mean)) / np.asarray(config.std)
    return torch.from_numpy(x.transpose(2, 0, 1).astype(np.float32))


class StubVisionBackbone(nn.Module):
    """Cheap deterministic backbone for tests.

    Average-pools the image to a ``grid x grid`` thumbnail and applies a
    seeded random affine map to ``native_dim``.
    """

    def __init__(self, native_dim: int = 2048, grid: int = 8, input_size=(299, 299), seed: int = 0):
        super().__init__()
        self.identity = f"stub-vision:g{grid}:d{native_dim}:s{seed}"
        self.native_dim = native_dim
        self.grid = grid
        self.input_size = tuple(input_size)
        self.body = nn.Linear(3 * grid * grid, native_dim)
        gen = generator("stub-vision", seed)
        with torch.no_grad():
            self.body.weight.copy_(torch.randn(self.body.weight.shape, generator=gen) / grid)
            self.body.bias.copy_(torch.randn(native_dim, generator=gen) * 0.1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        pooled = F.adaptive_avg_pool2d(images, self.grid)
        return self.body(pooled.flatten(1))


class InceptionBackbone(nn.Module):
    """torchvision Inception-v3 trunk; auxiliary head disabled, pooled 2048-d output."""

    native_dim = 2048

    def __init__(self, weights_path=None):
        super().__init__()
        from torchvision.models import inception_v3

        net = inception_v3(weights=None, aux_logits=False, init_weights=weights_path is None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            state = {k: v for k, v in state.items() if not k.startswith(("AuxLogits.", "fc."))}
            net.load_state_dict(state, strict=False)
        net.fc = nn.Identity()
        self.net = net
        self.identity = "inception_v3" + (f":{Path(weights_path).name}" if weights_path else ":random")
        self.input_size = (299, 299)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)


class VisionBranch(nn.Module):
    """Backbone followed by a trainable ``native_dim -> 512`` projection and ReLU."""

    role = VISION

    def __init__(self, backbone: nn.Module, seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.projection = init_linear(nn.Linear(backbone.native_dim, FEATURE_DIM), generator("proj", VISION, seed))

    @property
    def identity(self) -> str:
        return self.backbone.identity

    @property
    def input_size(self) -> tuple[int, int]:
        return self.backbone.input_size

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.projection(self.backbone(images)))


def encode_image(tensor: torch.Tensor, branch: VisionBranch) -> BranchFeature:
    """Encode one ``(3, H, W)`` image, or a batch, into F1."""
    batched = tensor.dim() == 4
    images = tensor if batched else tensor.unsqueeze(0)
    if images.dim() != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != tuple(branch.input_size):
        raise ShapeMismatch(
            f"expected (3, {branch.input_size[0]}, {branch.input_size[1]}) images, got {tuple(tensor.shape)}"
        )
    out = branch(images)
    return BranchFeature(out if batched else out[0], VISION)
