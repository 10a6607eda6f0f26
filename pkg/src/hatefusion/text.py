"""Tokenization and the two text branches (backbone, pooling, projection to 512-d)."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import BackboneMismatch, ConfigError, ShapeMismatch
from .features import FEATURE_DIM, TEXT_A, TEXT_B, BranchFeature, generator, init_linear

POOLING_RULES = ("first_token", "last_token", "mean")
DEFAULT_MAX_LEN = 512


@dataclass(frozen=True)
class TokenSequence:
    token_ids: torch.Tensor
    attention_mask: torch.Tensor
    backbone_id: str

    def __post_init__(self):
        if self.token_ids.shape != self.attention_mask.shape or self.token_ids.dim() != 1:
            raise ShapeMismatch("token_ids and attention_mask must be equal-length vectors")

    def __len__(self):
        return self.token_ids.shape[0]


def pool(hidden: torch.Tensor, mask: torch.Tensor, rule: str) -> torch.Tensor:
    """Reduce ``(B, L, D)`` token states to ``(B, D)`` honoring the attention mask."""
    mask = mask.to(hidden.dtype)
    if rule == "mean":
        return (hidden * mask.unsqueeze(-1)).sum(1) / mask.sum(1, keepdim=True).clamp(min=1)
    positions = torch.arange(mask.shape[1], device=mask.device).expand_as(mask)
    active = mask > 0
    if rule == "first_token":
        idx = torch.where(active, positions, mask.shape[1]).min(1).values.clamp(max=mask.shape[1] - 1)
    elif rule == "last_token":
        idx = torch.where(active, positions, -1).max(1).values.clamp(min=0)
    else:
        raise ConfigError(f"unknown pooling rule {rule!r}")
    return hidden[torch.arange(hidden.shape[0]), idx]


class StubTokenizer:
    """Word-level tokenizer hashing each word into a fixed vocabulary.

    Ids 0, 1, 2 are PAD, CLS and SEP; sequences are ``CLS words... SEP``,
    right-padded.
    """

    pad_id, cls_id, sep_id = 0, 1, 2
    num_special = 2
    _WORD = re.compile(r"\w+|[^\w\s]")

    def __init__(self, vocab_size: int = 4096):
        if vocab_size <= 3:
            raise ConfigError("stub vocabulary too small")
        self.vocab_size = vocab_size

    def word_id(self, word: str) -> int:
        h = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
        return 3 + h % (self.vocab_size - 3)

    def encode(self, text: str, max_len: int) -> tuple[list[int], list[int]]:
        words = [self.word_id(w) for w in self._WORD.findall(text)]
        ids = [self.cls_id] + words[: max_len - 2] + [self.sep_id]
        mask = [1] * len(ids)
        pad = max_len - len(ids)
        return ids + [self.pad_id] * pad, mask + [0] * pad


class StubTextBackbone(nn.Module):
    """Seeded embedding table looked up per token, mask-weighted mean pooled to 768-d."""

    pooled_dim = 768

    def __init__(self, vocab_size: int = 4096, seed: int = 0, name: str = "stub-text"):
        super().__init__()
        self.identity = f"{name}:v{vocab_size}:s{seed}"
        self.tokenizer = StubTokenizer(vocab_size)
        self.pooling = "mean"
        self.embedding = nn.Embedding(vocab_size, self.pooled_dim)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn(vocab_size, self.pooled_dim, generator=generator(name, seed)))

    @property
    def num_special_tokens(self) -> int:
        return self.tokenizer.num_special

    def encode_ids(self, text: str, max_len: int) -> tuple[list[int], list[int]]:
        return self.tokenizer.encode(text, max_len)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return pool(self.embedding(ids), mask, self.pooling)


class HFTextBackbone(nn.Module):
    """A Hugging Face encoder loaded from a local directory.

    ``pooling`` picks the summary token: ``first_token`` for BERT-style
    encoders, ``last_token`` for XLNet (whose tokenizer pads on the left
    and puts ``<cls>`` last).
    """

    def __init__(self, model, tokenizer, pooling: str, identity: str):
        super().__init__()
        if pooling not in POOLING_RULES:
            raise ConfigError(f"unknown pooling rule {pooling!r}")
        self.model = model
        self.tokenizer = tokenizer
        self.pooling = pooling
        self.identity = identity
        self.pooled_dim = model.config.hidden_size if hasattr(model.config, "hidden_size") else model.config.d_model

    @classmethod
    def from_dir(cls, path, pooling: str) -> "HFTextBackbone":
        from transformers import AutoModel, AutoTokenizer

        path = Path(path)
        if not path.is_dir():
            raise ConfigError(f"text backbone directory not found: {path}")
        model = AutoModel.from_pretrained(path, local_files_only=True)
        tokenizer = AutoTokenizer.from_pretrained(path, local_files_only=True)
        return cls(model, tokenizer, pooling, f"hf:{path.name}")

    @property
    def num_special_tokens(self) -> int:
        return self.tokenizer.num_special_tokens_to_add(pair=False)

    def encode_ids(self, text: str, max_len: int) -> tuple[list[int], list[int]]:
        enc = self.tokenizer(text, max_length=max_len, padding="max_length", truncation=True)
        return list(enc["input_ids"]), list(enc["attention_mask"])

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        out = self.model(input_ids=ids, attention_mask=mask)
        return pool(out.last_hidden_state, mask, self.pooling)


class TextBranch(nn.Module):
    """Text backbone followed by a trainable ``768 -> 512`` projection and ReLU."""

    def __init__(self, backbone: nn.Module, role: str, seed: int = 0):
        super().__init__()
        if role not in (TEXT_A, TEXT_B):
            raise ConfigError(f"text branch role must be {TEXT_A} or {TEXT_B}")
        self.role = role
        self.backbone = backbone
        self.projection = init_linear(nn.Linear(backbone.pooled_dim, FEATURE_DIM), generator("proj", role, seed))

    @property
    def identity(self) -> str:
        return self.backbone.identity

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # drop columns that are padding in every row; pooling is mask-aware, so
        # this only removes work and keeps extra padding bit-for-bit irrelevant
        active = mask.bool().any(0).nonzero()
        if active.numel():
            lo, hi = int(active[0]), int(active[-1]) + 1
            ids, mask = ids[:, lo:hi], mask[:, lo:hi]
        return torch.relu(self.projection(self.backbone(ids, mask)))


def tokenize(text: str, branch, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    backbone = branch.backbone if isinstance(branch, TextBranch) else branch
    if max_len < backbone.num_special_tokens:
        raise ConfigError(f"max_len {max_len} cannot hold {backbone.num_special_tokens} special tokens")
    ids, mask = backbone.encode_ids(text, max_len)
    return TokenSequence(torch.tensor(ids, dtype=torch.long), torch.tensor(mask, dtype=torch.long), backbone.identity)


def encode_text(tokens: TokenSequence, branch: TextBranch) -> BranchFeature:
    if tokens.backbone_id != branch.identity:
        raise BackboneMismatch(f"tokens from {tokens.backbone_id!r} fed to {branch.identity!r}")
    out = branch(tokens.token_ids.unsqueeze(0), tokens.attention_mask.unsqueeze(0))
    return BranchFeature(out[0], branch.role)
