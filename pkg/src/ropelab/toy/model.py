"""A small causal decoder whose only non-standard piece is the rotary call.

Queries and keys rotate per subspace by the temporal or flatten id (or by the
flatten id on both axes in FLATTEN_ROPE mode, which recovers textbook 1-D
rotary encoding bit for bit). Angles are always computed in float64 and cast
to the activation dtype. Interpolation coefficients activate only once the
stream is longer than the trained context.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ropelab.interpolation import effective_lambda
from ropelab.rotary import RotaryConfig, angle_tables


class Encoding(Enum):
    ITROPE = "itrope"
    FLATTEN_ROPE = "flatten_rope"


class LengthError(ValueError):
    """Stream longer than the supported context."""


@dataclass
class ToyModelConfig:
    vocab: int = 512
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    encoding: Encoding = Encoding.ITROPE
    rotary: RotaryConfig | None = None
    max_train_len: int = 256
    extended_len: int | None = None
    dtype: str = "float64"
    tie_head: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even")
        if self.rotary is None:
            self.rotary = RotaryConfig(dim=self.head_dim)
        if self.rotary.dim != self.head_dim:
            raise ValueError(
                f"rotary dim {self.rotary.dim} must equal head_dim {self.head_dim}"
            )
        if self.extended_len is not None and self.extended_len <= self.max_train_len:
            raise ValueError("extended_len must exceed max_train_len")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float64": torch.float64, "float32": torch.float32}[self.dtype]


def rotation_tables(
    config: ToyModelConfig, temporal_ids: np.ndarray, flatten_ids: np.ndarray
) -> tuple[torch.Tensor, torch.Tensor]:
    """cos/sin per token and subspace, honoring encoding mode and the
    interpolation activation threshold."""
    t = np.asarray(temporal_ids)
    f = np.asarray(flatten_ids)
    if config.encoding is Encoding.FLATTEN_ROPE:
        t = f
    seq_len = t.shape[-1]
    lam = effective_lambda(config.rotary.lam, seq_len, config.max_train_len)
    rotary = config.rotary if lam == config.rotary.lam else config.rotary.with_lam(lam)
    cos, sin = angle_tables(rotary, t, f)
    dtype = config.torch_dtype
    return torch.from_numpy(cos).to(dtype), torch.from_numpy(sin).to(dtype)


def _rotate_pairs(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, heads, T, head_dim); cos/sin: (B, 1, T, head_dim/2)
    even, odd = x[..., 0::2], x[..., 1::2]
    return torch.stack(
        (even * cos - odd * sin, even * sin + odd * cos), dim=-1
    ).flatten(-2)


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ToyModelConfig) -> None:
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model, bias=False)
        self.proj = nn.Linear(config.d_model, config.d_model, bias=False)

    def forward(self, x, cos, sin, collect=None):
        batch, t_len, d_model = x.shape
        q, k, v = self.qkv(x).split(d_model, dim=2)

        def heads(m):
            return m.view(batch, t_len, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(q), heads(k), heads(v)
        cos = cos.unsqueeze(1)
        sin = sin.unsqueeze(1)
        q = _rotate_pairs(q, cos, sin)
        k = _rotate_pairs(k, cos, sin)
        if collect is not None:
            collect.append({"q": q, "k": k})
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(batch, t_len, d_model)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, config: ToyModelConfig) -> None:
        super().__init__()
        self.fc_in = nn.Linear(config.d_model, 4 * config.d_model, bias=False)
        self.fc_out = nn.Linear(4 * config.d_model, config.d_model, bias=False)

    def forward(self, x):
        return self.fc_out(F.gelu(self.fc_in(x)))


class Block(nn.Module):
    def __init__(self, config: ToyModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = Mlp(config)

    def forward(self, x, cos, sin, collect=None):
        x = x + self.attn(self.ln1(x), cos, sin, collect)
        return x + self.mlp(self.ln2(x))


class ToyDecoder(nn.Module):
    """Causal decoder with a tied output head."""

    def __init__(self, config: ToyModelConfig, seed: int = 0) -> None:
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab, config.d_model)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        self.ln_out = nn.LayerNorm(config.d_model)
        self.head = (
            None if config.tie_head else nn.Linear(config.d_model, config.vocab, bias=False)
        )
        self.to(config.torch_dtype)
        self._init_weights(seed)

    def head_weight(self) -> torch.Tensor:
        return self.embed.weight if self.head is None else self.head.weight

    def _init_weights(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in sorted(self.named_parameters()):
                if param.dim() >= 2:
                    noise = torch.randn(
                        param.shape, generator=generator, dtype=torch.float64
                    )
                    param.copy_((0.02 * noise).to(param.dtype))
                elif name.endswith("bias"):
                    param.zero_()
                else:
                    param.fill_(1.0)

    def _check_length(self, t_len: int) -> None:
        limit = self.config.max_train_len
        if t_len <= limit:
            return
        if self.config.extended_len is None:
            raise LengthError(
                f"stream length {t_len} exceeds trained context {limit} and no "
                "extension is configured"
            )
        if t_len > self.config.extended_len:
            raise LengthError(
                f"stream length {t_len} exceeds extended context "
                f"{self.config.extended_len}"
            )

    def hidden(
        self,
        tokens,
        temporal_ids=None,
        flatten_ids=None,
        tables=None,
        collect=None,
    ):
        """Post-norm hidden states; tables short-circuits the angle computation
        when the caller has already built (cos, sin) for these positions."""
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
            temporal_ids = np.asarray(temporal_ids)[None, :]
            flatten_ids = np.asarray(flatten_ids)[None, :]
        self._check_length(tokens.shape[1])
        if tables is None:
            cos, sin = rotation_tables(self.config, temporal_ids, flatten_ids)
        else:
            cos, sin = tables
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x, cos, sin, collect)
        return self.ln_out(x)

    def forward(self, tokens, temporal_ids, flatten_ids, return_internals=False):
        internals: list[dict] | None = [] if return_internals else None
        x = self.hidden(tokens, temporal_ids, flatten_ids, collect=internals)
        logits = F.linear(x, self.head_weight())
        if return_internals:
            return logits, internals
        return logits


def masked_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor):
    """Mean negative log-likelihood over masked positions only."""
    if not bool(mask.any()):
        raise ValueError("loss mask selects no positions")
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -picked[mask].mean()
