"""Channel-group attention probe.

The pre-softmax score is a dot product over the head dimension, so it splits
exactly into the partial sums over temporal-axis and flatten-axis subspace
channels: s = s_T + s_F. The probe reports, per layer and head, each group's
share of total score magnitude over (query, key <= query) pairs, optionally
restricted to answer-token queries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ropelab.rotary import Axis
from ropelab.toy.model import ToyDecoder


@dataclass(frozen=True)
class HeadShare:
    layer: int
    head: int
    temporal_share: float
    flatten_share: float


def _axis_dims(model: ToyDecoder) -> tuple[list[int], list[int]]:
    temporal_dims, flatten_dims = [], []
    for i, axis in enumerate(model.config.rotary.subspace_axis):
        pair = [2 * i, 2 * i + 1]
        (temporal_dims if axis is Axis.TEMPORAL else flatten_dims).extend(pair)
    return temporal_dims, flatten_dims


@torch.no_grad()
def score_decomposition(
    model: ToyDecoder, tokens, temporal_ids, flatten_ids
) -> list[dict[str, torch.Tensor]]:
    """Per layer: full scores and the temporal/flatten partial scores,
    each of shape (batch, heads, T, T)."""
    _, internals = model(
        tokens, temporal_ids, flatten_ids, return_internals=True
    )
    temporal_dims, flatten_dims = _axis_dims(model)
    scale = model.config.head_dim**0.5
    layers = []
    for layer in internals:
        q, k = layer["q"], layer["k"]
        full = q @ k.transpose(-2, -1) / scale
        s_t = q[..., temporal_dims] @ k[..., temporal_dims].transpose(-2, -1) / scale
        s_f = q[..., flatten_dims] @ k[..., flatten_dims].transpose(-2, -1) / scale
        layers.append({"full": full, "temporal": s_t, "flatten": s_f})
    return layers


@torch.no_grad()
def attention_group_scores(
    model: ToyDecoder,
    tokens,
    temporal_ids,
    flatten_ids,
    query_mask=None,
) -> list[HeadShare]:
    """Magnitude shares of the two channel groups, per layer and head.

    query_mask (batch, T) restricts which query positions are aggregated;
    causality restricts keys to k <= q either way.
    """
    decomposition = score_decomposition(model, tokens, temporal_ids, flatten_ids)
    t_len = decomposition[0]["full"].shape[-1]
    causal = torch.tril(torch.ones(t_len, t_len, dtype=torch.bool))
    if query_mask is None:
        select = causal.unsqueeze(0)
    else:
        query_mask = torch.as_tensor(query_mask, dtype=torch.bool)
        if query_mask.dim() == 1:
            query_mask = query_mask.unsqueeze(0)
        select = causal.unsqueeze(0) & query_mask.unsqueeze(-1)
    shares = []
    for layer_index, layer in enumerate(decomposition):
        for head in range(layer["full"].shape[1]):
            picked_t = layer["temporal"][:, head][select]
            picked_f = layer["flatten"][:, head][select]
            mag_t = float(picked_t.abs().sum())
            mag_f = float(picked_f.abs().sum())
            denominator = mag_t + mag_f
            if denominator == 0.0:
                temporal_share = flatten_share = 0.5
            else:
                temporal_share = mag_t / denominator
                flatten_share = mag_f / denominator
            shares.append(
                HeadShare(
                    layer=layer_index,
                    head=head,
                    temporal_share=temporal_share,
                    flatten_share=flatten_share,
                )
            )
    return shares


def mean_temporal_share(shares: list[HeadShare]) -> float:
    return float(np.mean([s.temporal_share for s in shares]))


def shares_table(shares: list[HeadShare]) -> str:
    """Plot-ready table: one row per (layer, head)."""
    lines = ["layer\thead\ttemporal_share\tflatten_share"]
    for share in shares:
        lines.append(
            f"{share.layer}\t{share.head}\t{share.temporal_share:.6f}\t{share.flatten_share:.6f}"
        )
    return "\n".join(lines) + "\n"
