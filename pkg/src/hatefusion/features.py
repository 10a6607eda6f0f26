"""Branch feature containers and small shared torch helpers."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ShapeMismatch

FEATURE_DIM = 512
HIDDEN_DIM = 128
NUM_CLASSES = 2

VISION = "F1"
TEXT_A = "F2"
TEXT_B = "F3"


@dataclass(frozen=True)
class BranchFeature:
    """A 512-d branch output; ``role`` is one of F1 (vision), F2, F3 (text)."""

    vector: torch.Tensor
    role: str

    def __post_init__(self):
        if self.vector.shape[-1] != FEATURE_DIM:
            raise ShapeMismatch(f"{self.role} must have length {FEATURE_DIM}, got {tuple(self.vector.shape)}")
        if not torch.isfinite(self.vector).all():
            raise ValueError(f"{self.role} contains non-finite entries")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (``hash()`` is salted per process)."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") & ((1 << 63) - 1)


def generator(*parts) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(*parts))
    return g


@torch.no_grad()
def init_linear(layer: nn.Linear, gen: torch.Generator) -> nn.Linear:
    """Uniform fan-in init, zero bias."""
    bound = 1.0 / math.sqrt(layer.in_features)
    w = torch.rand(layer.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound
    layer.weight.copy_(w.to(layer.weight.dtype))
    if layer.bias is not None:
        layer.bias.zero_()
    return layer
