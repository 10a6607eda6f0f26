"""Weighted cross-entropy training with Adam and a step learning-rate schedule."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import torch

from .corpus import DatasetManifest, Label, class_stats
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    EmptyBatch,
    FingerprintMismatch,
    MissingFile,
    NonFiniteLogits,
    NonFiniteLoss,
    UnlabeledSample,
)
from .features import derive_seed
from .fusion import EnsembleModel, ModelSpec

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "hatefusion-ckpt-1"
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 3e-5
    max_seq_len: int = 512
    epochs: int = 100
    batch_size: int = 32
    step_size: int = 30
    decay: float = 0.1
    seed: int = 0
    # (no_hate, hate); None means inverse frequency on the training set
    class_weights: Optional[tuple[float, float]] = None
    freeze_branches: bool = False

    def __post_init__(self):
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
            if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
                raise ConfigError("class_weights must be two positive values")
        if not (self.learning_rate > 0 and self.decay > 0 and self.weight_decay >= 0):
            raise ConfigError("learning_rate and decay must be positive, weight_decay non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.step_size < 1 or self.max_seq_len < 1:
            raise ConfigError("epochs, batch_size, step_size and max_seq_len must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during 0-based ``epoch``."""
        return self.learning_rate * self.decay ** (epoch // self.step_size)

    def fingerprint(self) -> str:
        # epoch budget is excluded so a run can be resumed with a longer horizon
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "epochs"}
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def weighted_cross_entropy(logits: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Sum_i w[y_i] * -log softmax(logits_i)[y_i], divided by Sum_i w[y_i]."""
    if logits.dim() != 2 or logits.shape[0] == 0:
        raise EmptyBatch("weighted_cross_entropy needs a non-empty (B, C) batch")
    if not torch.isfinite(logits).all():
        raise NonFiniteLogits("non-finite logits in batch")
    weights = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    nll = -torch.log_softmax(logits, dim=1).gather(1, labels.unsqueeze(1)).squeeze(1)
    w = weights[labels]
    return (w * nll).sum() / w.sum()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            [EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:])) for r in rows]
        )


@dataclass
class Checkpoint:
    model_spec: dict
    model_state: dict
    optimizer_state: dict
    epoch: int  # number of completed epochs
    config: dict
    fingerprint: str
    history: list[dict]
    best_val_acc: float = -1.0
    version: str = CHECKPOINT_VERSION

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(asdict(self), tmp)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except FileNotFoundError:
            raise MissingFile(f"checkpoint not found: {path}") from None
        except Exception as exc:
            raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
            raise CorruptCheckpoint(f"{path} is not a {CHECKPOINT_VERSION} checkpoint")
        try:
            return cls(**blob)
        except TypeError as exc:
            raise CorruptCheckpoint(str(exc)) from exc

    def train_history(self) -> TrainHistory:
        return TrainHistory([EpochRecord(**r) for r in self.history])

    def build_model(self) -> EnsembleModel:
        model = EnsembleModel.from_spec(ModelSpec.from_dict(self.model_spec))
        model.load_state_dict(self.model_state)
        return model


class _Encoded:
    """Model inputs for a manifest, encoded once and reused across epochs."""

    def __init__(self, manifest: DatasetManifest, model: EnsembleModel, max_len: int):
        self.items = []
        labels = []
        for s in manifest.samples:
            if s.label is None:
                raise UnlabeledSample(s.index)
            self.items.append(model.encode_inputs(s, max_len))
            labels.append(int(s.label))
        self.labels = torch.tensor(labels, dtype=torch.long)

    def __len__(self):
        return len(self.items)

    def batches(self, batch_size: int, order=None):
        order = range(len(self.items)) if order is None else order.tolist()
        order = list(order)
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield EnsembleModel.collate([self.items[i] for i in idx]), self.labels[idx]


def _set_trainable(model: EnsembleModel, config: TrainConfig):
    for p in model.backbone_parameters():
        p.requires_grad_(not config.freeze_branches)
    return [p for p in model.parameters() if p.requires_grad]


def _train_mode(model: EnsembleModel, config: TrainConfig):
    model.train()
    if config.freeze_branches:
        # frozen backbones also keep their normalization statistics fixed
        for branch in model.branches.values():
            branch.backbone.eval()


@torch.no_grad()
def evaluate_loss(model: EnsembleModel, data: _Encoded, weights, batch_size: int) -> tuple[float, float]:
    if len(data) == 0:
        return math.nan, math.nan
    model.eval()
    total, wsum, correct = 0.0, 0.0, 0
    for batch, labels in data.batches(batch_size):
        logits = model(batch)
        w = weights[labels]
        total += float(weighted_cross_entropy(logits, labels, weights)) * float(w.sum())
        wsum += float(w.sum())
        correct += int((logits.argmax(1) == labels).sum())
    return total / wsum, correct / len(data)


def _resolve_weights(config: TrainConfig, train: DatasetManifest) -> torch.Tensor:
    if config.class_weights is not None:
        return torch.tensor(config.class_weights, dtype=torch.float32)
    stats = class_stats(train)
    return torch.tensor([stats.weights[Label.NO_HATE], stats.weights[Label.HATE]], dtype=torch.float32)


def _run(config, train, validation, model, optimizer, start_epoch, history, best, out_dir):
    weights = _resolve_weights(config, train)
    train_data = _Encoded(train, model, config.max_seq_len)
    val_data = _Encoded(validation, model, config.max_seq_len)
    spec = model.spec.to_dict() if model.spec is not None else None

    def snapshot(epoch):
        return Checkpoint(
            model_spec=spec,
            model_state=copy.deepcopy(model.state_dict()),
            optimizer_state=copy.deepcopy(optimizer.state_dict()),
            epoch=epoch,
            config=asdict(config),
            fingerprint=config.fingerprint(),
            history=[asdict(r) for r in history.records],
            best_val_acc=best[0],
        )

    best_ckpt = None
    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        _train_mode(model, config)
        # per-epoch seeds make shuffling and any dropout independent of history
        torch.manual_seed(derive_seed("epoch", config.seed, epoch))
        order = torch.randperm(len(train_data), generator=torch.Generator().manual_seed(derive_seed("shuffle", config.seed, epoch)))
        total, wsum, correct = 0.0, 0.0, 0
        for b, (batch, labels) in enumerate(train_data.batches(config.batch_size, order)):
            optimizer.zero_grad()
            logits = model(batch)
            if not torch.isfinite(logits).all():
                raise NonFiniteLoss(epoch, b)
            loss = weighted_cross_entropy(logits, labels, weights)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, b)
            loss.backward()
            optimizer.step()
            bw = float(weights[labels].sum())
            total += loss.item() * bw
            wsum += bw
            correct += int((logits.detach().argmax(1) == labels).sum())
        val_loss, val_acc = evaluate_loss(model, val_data, weights, config.batch_size)
        rec = EpochRecord(epoch, total / wsum, correct / len(train_data), val_loss, val_acc, lr)
        history.records.append(rec)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.2e", *[getattr(rec, c) for c in HISTORY_COLUMNS])
        if not math.isnan(val_acc) and val_acc > best[0]:
            best[0] = val_acc
            best_ckpt = snapshot(epoch + 1)

    final = snapshot(config.epochs)
    if best_ckpt is None:
        best_ckpt = final
    if out_dir is not None:
        out_dir = Path(out_dir)
        final.save(out_dir / "final.pt")
        best_ckpt.save(out_dir / "best.pt")
        history.write_csv(out_dir / "history.csv")
    return final, history


def make_optimizer(model: EnsembleModel, config: TrainConfig) -> torch.optim.Adam:
    params = _set_trainable(model, config)
    return torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def fit(config: TrainConfig, train: DatasetManifest, validation: DatasetManifest, model: EnsembleModel, out_dir=None):
    """Train ``model`` in place for ``config.epochs`` epochs.

    Returns ``(final_checkpoint, history)``. With ``out_dir`` set, writes
    ``final.pt``, ``best.pt`` (highest validation accuracy) and
    ``history.csv`` there.
    """
    optimizer = make_optimizer(model, config)
    return _run(config, train, validation, model, optimizer, 0, TrainHistory(), [-1.0], out_dir)


def resume(checkpoint: Checkpoint, config: TrainConfig, train: DatasetManifest, validation: DatasetManifest, out_dir=None):
    """Continue training from ``checkpoint`` up to ``config.epochs``."""
    if checkpoint.fingerprint != config.fingerprint():
        raise FingerprintMismatch("checkpoint was produced under a different training configuration")
    if checkpoint.model_spec is None:
        raise CorruptCheckpoint("checkpoint carries no model spec")
    model = checkpoint.build_model()
    optimizer = make_optimizer(model, config)
    optimizer.load_state_dict(checkpoint.optimizer_state)
    history = checkpoint.train_history()
    ckpt, history = _run(
        config, train, validation, model, optimizer, checkpoint.epoch, history, [checkpoint.best_val_acc], out_dir
    )
    return ckpt, history
