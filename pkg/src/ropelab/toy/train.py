"""Deterministic training and evaluation loops for the toy decoder.

Examples are serialized once and grouped into same-length buckets so a batch
is a dense tensor; each step samples one bucket (weighted by size) and a batch
of rows within it, all through a single seeded numpy generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

import torch.nn.functional as F

from ropelab.toy.data import SyntheticDataset, serialize_example
from ropelab.toy.model import ToyDecoder, masked_loss, rotation_tables


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int) -> None:
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 8
    lr: float = 3e-4
    seed: int = 0


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)


@dataclass
class _Bucket:
    tokens: torch.Tensor
    temporal: np.ndarray
    flatten: np.ndarray
    mask: torch.Tensor
    tables: tuple[torch.Tensor, torch.Tensor] | None = None


def tensorize(dataset: SyntheticDataset) -> list[_Bucket]:
    """Serialize every example and stack same-length streams."""
    by_len: dict[int, list[tuple[list[int], tuple, tuple, list[bool]]]] = {}
    for example in dataset.examples:
        tokens, ids, mask = serialize_example(example)
        by_len.setdefault(len(tokens), []).append(
            (tokens, ids.temporal, ids.flatten, mask)
        )
    buckets = []
    for length in sorted(by_len):
        rows = by_len[length]
        buckets.append(
            _Bucket(
                tokens=torch.tensor([r[0] for r in rows], dtype=torch.long),
                temporal=np.array([r[1] for r in rows], dtype=np.int64),
                flatten=np.array([r[2] for r in rows], dtype=np.int64),
                mask=torch.tensor([r[3] for r in rows], dtype=torch.bool),
            )
        )
    return buckets


def _bucket_tables(model: ToyDecoder, bucket: _Bucket):
    if bucket.tables is None:
        bucket.tables = rotation_tables(model.config, bucket.temporal, bucket.flatten)
    return bucket.tables


def _batch_loss(model: ToyDecoder, bucket: _Bucket, rows: np.ndarray):
    """Answer-masked mean NLL, projecting the head only at scored positions.

    Numerically identical to masked_loss over the full logits, but avoids
    the vocab-sized projection at the ~99% of positions the mask drops.
    """
    tokens = bucket.tokens[rows]
    cos, sin = _bucket_tables(model, bucket)
    hidden = model.hidden(tokens, tables=(cos[rows], sin[rows]))
    target_mask = bucket.mask[rows][:, 1:]
    if not bool(target_mask.any()):
        raise ValueError("loss mask selects no positions")
    picked_hidden = hidden[:, :-1][target_mask]
    targets = tokens[:, 1:][target_mask]
    logits = F.linear(picked_hidden, model.head_weight())
    log_probs = F.log_softmax(logits, dim=-1)
    return -log_probs.gather(-1, targets.unsqueeze(-1)).mean()


def train(
    model: ToyDecoder, dataset: SyntheticDataset, config: TrainConfig
) -> TrainResult:
    """Adam on the answer-masked loss; per-step losses are recorded and a
    non-finite loss aborts with the step index."""
    rng = np.random.default_rng(config.seed)
    buckets = tensorize(dataset)
    counts = np.array([b.tokens.shape[0] for b in buckets], dtype=np.float64)
    weights = counts / counts.sum()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    result = TrainResult()
    model.train()
    for step in range(config.steps):
        bucket = buckets[int(rng.choice(len(buckets), p=weights))]
        n = bucket.tokens.shape[0]
        rows = rng.choice(n, size=min(config.batch_size, n), replace=False)
        loss = _batch_loss(model, bucket, rows)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.losses.append(float(loss.detach()))
    model.eval()
    return result


def _iter_eval_batches(buckets: list[_Bucket], batch_size: int):
    for bucket in buckets:
        n = bucket.tokens.shape[0]
        for start in range(0, n, batch_size):
            yield bucket, np.arange(start, min(start + batch_size, n))


def _masked_logits(model: ToyDecoder, bucket: _Bucket, rows: np.ndarray):
    tokens = bucket.tokens[rows]
    cos, sin = _bucket_tables(model, bucket)
    hidden = model.hidden(tokens, tables=(cos[rows], sin[rows]))
    target_mask = bucket.mask[rows][:, 1:]
    targets = tokens[:, 1:][target_mask]
    logits = F.linear(hidden[:, :-1][target_mask], model.head_weight())
    return logits, targets, target_mask


@torch.no_grad()
def evaluate_masked_loss(
    model: ToyDecoder, dataset: SyntheticDataset, batch_size: int = 64
) -> float:
    """Answer-token mean NLL over the whole dataset."""
    model.eval()
    total, count = 0.0, 0
    for bucket, rows in _iter_eval_batches(tensorize(dataset), batch_size):
        logits, targets, _ = _masked_logits(model, bucket, rows)
        log_probs = F.log_softmax(logits, dim=-1)
        total += float(-log_probs.gather(-1, targets.unsqueeze(-1)).sum())
        count += targets.shape[0]
    return total / count


@torch.no_grad()
def evaluate_answer_accuracy(
    model: ToyDecoder, dataset: SyntheticDataset, batch_size: int = 64
) -> float:
    """Fraction of examples whose every answer token is the argmax prediction."""
    model.eval()
    correct, total = 0, 0
    for bucket, rows in _iter_eval_batches(tensorize(dataset), batch_size):
        logits, targets, target_mask = _masked_logits(model, bucket, rows)
        wrong = logits.argmax(dim=-1) != targets
        row_of = target_mask.nonzero(as_tuple=True)[0]
        all_right = torch.ones(len(rows), dtype=torch.bool)
        all_right[row_of[wrong]] = False
        correct += int(all_right.sum())
        total += len(rows)
    return correct / total
