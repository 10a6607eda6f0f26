"""Late fusion of the three branch features and the classification head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .corpus import DatasetManifest, Label, Sample
from .errors import ConfigError, MissingText, NonFiniteLogits, RoleMismatch, ShapeMismatch
from .features import (
    FEATURE_DIM,
    HIDDEN_DIM,
    NUM_CLASSES,
    TEXT_A,
    TEXT_B,
    VISION,
    BranchFeature,
    generator,
    init_linear,
)
from .text import DEFAULT_MAX_LEN, HFTextBackbone, StubTextBackbone, TextBranch, tokenize
from .vision import InceptionBackbone, PreprocessConfig, StubVisionBackbone, VisionBranch, preprocess_image

FUSED_DIM = 3 * FEATURE_DIM

# branch key -> feature role, in concatenation order
BRANCH_ROLES = {"vision": VISION, "text_a": TEXT_A, "text_b": TEXT_B}
BRANCH_ORDER = tuple(BRANCH_ROLES)


@dataclass(frozen=True)
class FusedFeature:
    vector: torch.Tensor

    def __post_init__(self):
        if self.vector.shape[-1] != FUSED_DIM:
            raise ShapeMismatch(f"fused feature must have length {FUSED_DIM}")


def fuse(f1: BranchFeature, f2: BranchFeature, f3: BranchFeature) -> FusedFeature:
    """Concatenate F1 || F2 || F3 (vision, text A, text B)."""
    for feat, role in ((f1, VISION), (f2, TEXT_A), (f3, TEXT_B)):
        if feat.role != role:
            raise RoleMismatch(f"expected role {role}, got {feat.role}")
        if feat.vector.shape[-1] != FEATURE_DIM:
            raise ShapeMismatch(f"{role} has length {feat.vector.shape[-1]}")
    return FusedFeature(torch.cat([f1.vector, f2.vector, f3.vector], dim=-1))


class ClassificationHead(nn.Module):
    """``in_dim -> 128`` with ReLU, then ``128 -> 2`` logits (no final rectifier)."""

    def __init__(self, in_dim: int = FUSED_DIM, seed: int = 0):
        super().__init__()
        self.in_dim = in_dim
        self.layer1 = init_linear(nn.Linear(in_dim, HIDDEN_DIM), generator("head1", in_dim, seed))
        self.layer2 = init_linear(nn.Linear(HIDDEN_DIM, NUM_CLASSES), generator("head2", seed))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layer2(torch.relu(self.layer1(x)))


def head_forward(f4, head: ClassificationHead) -> torch.Tensor:
    x = f4.vector if isinstance(f4, FusedFeature) else f4
    if x.shape[-1] != head.in_dim:
        raise ShapeMismatch(f"head expects {head.in_dim} inputs, got {x.shape[-1]}")
    return head(x)


@dataclass(frozen=True)
class Prediction:
    logits: tuple[float, float]
    probabilities: tuple[float, float]
    label: Label

    @property
    def confidence(self) -> float:
        return self.probabilities[int(self.label)]


def predict(logits) -> Prediction:
    """Softmax and argmax; exact ties go to NO_HATE (code 0)."""
    l0, l1 = (float(v) for v in (logits.tolist() if hasattr(logits, "tolist") else logits))
    if not (math.isfinite(l0) and math.isfinite(l1)):
        raise NonFiniteLogits(f"logits ({l0}, {l1})")
    m = max(l0, l1)
    e0, e1 = math.exp(l0 - m), math.exp(l1 - m)
    z = e0 + e1
    label = Label.HATE if l1 > l0 else Label.NO_HATE
    return Prediction((l0, l1), (e0 / z, e1 / z), label)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild an (untrained) ensemble, stored in checkpoints."""

    branches: tuple[str, ...] = BRANCH_ORDER
    zero_fill: bool = False
    seed: int = 0
    vision: str = "stub"  # stub | inception_v3
    vision_weights: Optional[str] = None
    vision_name: str = "InceptionV3"
    text_a: str = "stub"  # stub | hf
    text_a_dir: Optional[str] = None
    text_a_pooling: str = "first_token"
    text_a_name: str = "BERT"
    text_b: str = "stub"
    text_b_dir: Optional[str] = None
    text_b_pooling: str = "last_token"
    text_b_name: str = "XLNET"
    image_size: int = 299
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    stub_grid: int = 8
    stub_native_dim: int = 2048
    stub_vocab: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "mean", tuple(self.mean))
        object.__setattr__(self, "std", tuple(self.std))
        unknown = set(self.branches) - set(BRANCH_ORDER)
        if unknown or not self.branches or len(set(self.branches)) != len(self.branches):
            raise ConfigError(f"bad branch selection {self.branches}")
        if self.vision not in ("stub", "inception_v3"):
            raise ConfigError(f"unknown vision backbone {self.vision!r}")
        for kind in (self.text_a, self.text_b):
            if kind not in ("stub", "hf"):
                raise ConfigError(f"unknown text backbone {kind!r}")

    @property
    def preprocess(self) -> PreprocessConfig:
        size = 299 if self.vision == "inception_v3" else self.image_size
        return PreprocessConfig(size, size, self.mean, self.std)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def build_branch(spec: ModelSpec, key: str) -> nn.Module:
    if key == "vision":
        if spec.vision == "inception_v3":
            backbone = InceptionBackbone(spec.vision_weights)
        else:
            size = spec.preprocess
            backbone = StubVisionBackbone(spec.stub_native_dim, spec.stub_grid, (size.height, size.width), spec.seed)
        return VisionBranch(backbone, spec.seed)
    kind, path, pooling, role = {
        "text_a": (spec.text_a, spec.text_a_dir, spec.text_a_pooling, TEXT_A),
        "text_b": (spec.text_b, spec.text_b_dir, spec.text_b_pooling, TEXT_B),
    }[key]
    if kind == "hf":
        if path is None:
            raise ConfigError(f"{key}: hf backbone needs a weights directory")
        backbone = HFTextBackbone.from_dir(path, pooling)
    else:
        backbone = StubTextBackbone(spec.stub_vocab, spec.seed, name=f"stub-{key}")
    return TextBranch(backbone, role, spec.seed)


class EnsembleModel(nn.Module):
    """Branches -> concatenation -> head.

    With all three branches this is the full stacked ensemble. Subsets
    serve ablations: by default the head input shrinks to 512 per active
    branch; with ``zero_fill`` missing branches contribute zero vectors
    and the head keeps its 1536-d input.
    """

    def __init__(self, branches: dict[str, nn.Module], zero_fill: bool = False, seed: int = 0, spec=None):
        super().__init__()
        order = [k for k in BRANCH_ORDER if k in branches]
        if not order:
            raise ConfigError("an ensemble needs at least one branch")
        self.branches = nn.ModuleDict({k: branches[k] for k in order})
        self.zero_fill = zero_fill
        self.head = ClassificationHead(FUSED_DIM if zero_fill else FEATURE_DIM * len(order), seed)
        self.spec = spec
        self.preprocess = spec.preprocess if spec is not None else PreprocessConfig()

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "EnsembleModel":
        return cls({k: build_branch(spec, k) for k in spec.branches}, spec.zero_fill, spec.seed, spec)

    @property
    def uses_text(self) -> bool:
        return any(k in self.branches for k in ("text_a", "text_b"))

    def backbone_parameters(self):
        for branch in self.branches.values():
            yield from branch.backbone.parameters()

    def branch_features(self, batch: dict) -> dict[str, torch.Tensor]:
        feats = {}
        if "vision" in self.branches:
            feats["vision"] = self.branches["vision"](batch["image"])
        for key in ("text_a", "text_b"):
            if key in self.branches:
                ids, mask = batch[key]
                feats[key] = self.branches[key](ids, mask)
        return feats

    def fused(self, batch: dict) -> torch.Tensor:
        feats = self.branch_features(batch)
        if self.zero_fill:
            ref = next(iter(feats.values()))
            parts = [feats.get(k, ref.new_zeros(ref.shape)) for k in BRANCH_ORDER]
        else:
            parts = [feats[k] for k in self.branches]
        return torch.cat(parts, dim=-1)

    def forward(self, batch: dict) -> torch.Tensor:
        return self.head(self.fused(batch))

    # -- input preparation ------------------------------------------------

    def encode_inputs(self, sample: Sample, max_len: int = DEFAULT_MAX_LEN) -> dict:
        """Per-sample model inputs: preprocessed image and token sequences."""
        out = {}
        if "vision" in self.branches:
            out["image"] = preprocess_image(sample.path, self.preprocess, sample.index)
        if self.uses_text:
            if sample.ocr_text is None:
                raise MissingText(sample.index)
            for key in ("text_a", "text_b"):
                if key in self.branches:
                    out[key] = tokenize(sample.ocr_text, self.branches[key], max_len)
        return out

    @staticmethod
    def collate(items: Sequence[dict]) -> dict:
        batch = {}
        if "image" in items[0]:
            batch["image"] = torch.stack([it["image"] for it in items])
        for key in ("text_a", "text_b"):
            if key in items[0]:
                ids = torch.stack([it[key].token_ids for it in items])
                mask = torch.stack([it[key].attention_mask for it in items])
                batch[key] = (ids, mask)
        return batch

    @torch.no_grad()
    def predict_manifest(self, manifest: DatasetManifest, batch_size: int = 32, max_len: int = DEFAULT_MAX_LEN):
        was_training = self.training
        self.eval()
        preds = []
        samples = list(manifest.samples)
        try:
            for start in range(0, len(samples), batch_size):
                chunk = samples[start : start + batch_size]
                logits = self(self.collate([self.encode_inputs(s, max_len) for s in chunk]))
                preds.extend(predict(row) for row in logits)
        finally:
            self.train(was_training)
        return preds


def forward(sample: Sample, model: EnsembleModel, max_len: int = DEFAULT_MAX_LEN) -> Prediction:
    """Full single-sample inference: preprocess, encode, fuse, classify."""
    if model.uses_text and sample.ocr_text is None:
        raise MissingText(sample.index)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(model.collate([model.encode_inputs(sample, max_len)]))
    finally:
        model.train(was_training)
    return predict(logits[0])
