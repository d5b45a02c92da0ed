# src/tripletswap/models/attention.py
"""
Attention building blocks shared by SwapNet and FaceNet.

- FusedSelfAttention: self-attention over [swap tokens ; reference tokens],
  keeping only the swap-token outputs.
- AdapterCrossAttention: context cross-attention plus an identity term with
  its own key/value projections and a zero-initialised output path.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from tripletswap.domain.errors import ConfigValidationError


def softmax_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """q [B,h,n,d], k/v [B,h,m,d] -> [B,h,n,d]."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return scores.softmax(dim=-1) @ v


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, c = x.shape
    return x.view(b, n, heads, c // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class FusedSelfAttention(nn.Module):
    def __init__(self, dim: int, head_dim: int) -> None:
        super().__init__()
        self.heads = dim // head_dim
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, swap_tokens: torch.Tensor, ref_tokens: torch.Tensor | None = None) -> torch.Tensor:
        """
        Attention over the concatenation of both token sequences; the output
        keeps the first n tokens. With ref_tokens None or empty this is plain
        self-attention.
        """
        n = swap_tokens.shape[1]
        if ref_tokens is not None and ref_tokens.shape[1] > 0:
            if ref_tokens.shape[-1] != swap_tokens.shape[-1] or ref_tokens.shape[0] != swap_tokens.shape[0]:
                raise ConfigValidationError(
                    "reference tokens do not match swap tokens",
                    swap=tuple(swap_tokens.shape),
                    ref=tuple(ref_tokens.shape),
                )
            x = torch.cat([swap_tokens, ref_tokens], dim=1)
        else:
            x = swap_tokens
        q = split_heads(self.to_q(x[:, :n]), self.heads)
        k = split_heads(self.to_k(x), self.heads)
        v = split_heads(self.to_v(x), self.heads)
        return self.to_out(merge_heads(softmax_attention(q, k, v)))


class AdapterCrossAttention(nn.Module):
    def __init__(self, dim: int, d_ctx: int, head_dim: int, use_id_adapter: bool = True) -> None:
        super().__init__()
        self.heads = dim // head_dim
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(d_ctx, dim, bias=False)
        self.to_v = nn.Linear(d_ctx, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)
        self.use_id_adapter = use_id_adapter
        if use_id_adapter:
            self.to_k_id = nn.Linear(d_ctx, dim, bias=False)
            self.to_v_id = nn.Linear(d_ctx, dim, bias=False)
            self.to_out_id = zero_module(nn.Linear(dim, dim))

    def forward(
        self,
        tokens: torch.Tensor,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if context.shape[-1] != self.to_k.in_features:
            raise ConfigValidationError("context dim mismatch", expected=self.to_k.in_features, got=context.shape[-1])
        q = split_heads(self.to_q(tokens), self.heads)
        k = split_heads(self.to_k(context), self.heads)
        v = split_heads(self.to_v(context), self.heads)
        out = self.to_out(merge_heads(softmax_attention(q, k, v)))
        if self.use_id_adapter and id_tokens is not None:
            if id_tokens.shape[-1] != self.to_k_id.in_features:
                raise ConfigValidationError(
                    "id token dim mismatch", expected=self.to_k_id.in_features, got=id_tokens.shape[-1]
                )
            k_id = split_heads(self.to_k_id(id_tokens), self.heads)
            v_id = split_heads(self.to_v_id(id_tokens), self.heads)
            out = out + self.to_out_id(merge_heads(softmax_attention(q, k_id, v_id)))
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4) -> None:
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransformerBlock(nn.Module):
    """
    Pre-norm block: fused self-attention, adapter cross-attention, feed-forward.
    The normalised tokens entering self-attention are what FaceNet hands to
    the matching SwapNet site.
    """

    def __init__(self, dim: int, d_ctx: int, head_dim: int, use_id_adapter: bool) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn1 = FusedSelfAttention(dim, head_dim)
        self.norm2 = nn.LayerNorm(dim)
        self.attn2 = AdapterCrossAttention(dim, d_ctx, head_dim, use_id_adapter)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
        ref_tokens: torch.Tensor | None = None,
        capture: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        h = self.norm1(x)
        if capture is not None:
            capture.append(h)
        x = x + self.attn1(h, ref_tokens)
        x = x + self.attn2(self.norm2(x), context, id_tokens)
        return x + self.ff(self.norm3(x))


class SpatialTransformer(nn.Module):
    """Feature map <-> token sequence wrapper around one TransformerBlock."""

    def __init__(self, channels: int, d_ctx: int, head_dim: int, groups: int, use_id_adapter: bool) -> None:
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.proj_in = nn.Conv2d(channels, channels, 1)
        self.block = TransformerBlock(channels, d_ctx, head_dim, use_id_adapter)
        self.proj_out = nn.Conv2d(channels, channels, 1)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
        ref_tokens: torch.Tensor | None = None,
        capture: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        b, c, hgt, wid = x.shape
        h = self.proj_in(self.norm(x))
        tokens = h.flatten(2).transpose(1, 2)
        tokens = self.block(tokens, context, id_tokens, ref_tokens, capture)
        h = tokens.transpose(1, 2).reshape(b, c, hgt, wid)
        return x + self.proj_out(h)
