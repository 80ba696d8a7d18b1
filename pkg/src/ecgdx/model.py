"""Neural architecture: strided-conv encoders for the full signal and single
heartbeats, self-attention fusion over their concatenated tokens, mirrored
transposed-conv decoders with uncertainty heads, a trend autoencoder, and
attribute/classification heads on pooled features."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_FLOOR = 1e-6

_GLOBAL_STAGES = 4  # stride 4 each -> total 256
_LOCAL_STAGES = 3  # stride 4 each -> total 64
_GLOBAL_STRIDE = 4 ** _GLOBAL_STAGES
_LOCAL_STRIDE = 4 ** _LOCAL_STAGES


@dataclass(frozen=True)
class ModelConfig:
    d_global: int = 5000
    d_local: int = 320
    n_leads: int = 12
    feature_dim: int = 128
    attn_heads: int = 4
    n_classes: int = 9
    n_attributes: int = 7
    dropout: float = 0.1

    def __post_init__(self):
        if self.feature_dim % self.attn_heads != 0:
            raise ValueError("feature_dim must be divisible by attn_heads")
        if self.feature_dim % 8 != 0:
            raise ValueError("feature_dim must be divisible by 8 (group norm)")
        if self.d_local % _LOCAL_STRIDE != 0:
            raise ValueError(f"d_local must be a multiple of {_LOCAL_STRIDE}")

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def padded_global(self) -> int:
        return -(-self.d_global // _GLOBAL_STRIDE) * _GLOBAL_STRIDE

    @property
    def tokens_global(self) -> int:
        return self.padded_global // _GLOBAL_STRIDE

    @property
    def tokens_local(self) -> int:
        return self.d_local // _LOCAL_STRIDE


@dataclass
class RestorationResult:
    restored: torch.Tensor  # [B, n_leads, L]
    uncertainty: Optional[torch.Tensor]  # same shape, strictly positive; None for trend


@dataclass
class ForwardOutput:
    global_branch: RestorationResult
    local_branch: RestorationResult
    trend_branch: RestorationResult
    attr_pred: torch.Tensor  # [B, n_attributes]
    class_logits: torch.Tensor  # [B, n_classes]


def _encoder(in_ch: int, widths: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_ch
    for w in widths:
        layers += [nn.Conv1d(prev, w, kernel_size=8, stride=4, padding=2),
                   nn.GroupNorm(8, w), nn.GELU()]
        prev = w
    return nn.Sequential(*layers)


def _decoder(widths: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(widths) - 1):
        layers += [nn.ConvTranspose1d(widths[i], widths[i + 1], kernel_size=8, stride=4, padding=2),
                   nn.GroupNorm(8, widths[i + 1]), nn.GELU()]
    return nn.Sequential(*layers)


class FusionBlock(nn.Module):
    """Pre-norm self-attention block with an MLP, ratio 4."""

    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(),
                                 nn.Dropout(dropout), nn.Linear(dim * 4, dim))

    def forward(self, x: torch.Tensor, need_weights: bool = False):
        h = self.norm1(x)
        attn_out, weights = self.attn(h, h, h, need_weights=need_weights,
                                      average_attn_weights=False)
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x, weights


class EcgRestorationModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.feature_dim
        self.global_encoder = _encoder(config.n_leads, [32, 64, 128, c])
        self.local_encoder = _encoder(config.n_leads, [32, 64, c])
        self.trend_encoder = _encoder(config.n_leads, [32, 64, 128, c])
        self.fusion = nn.ModuleList([FusionBlock(c, config.attn_heads, config.dropout)
                                     for _ in range(2)])
        self.global_decoder = _decoder([c, 128, 64, 32, 32])
        self.local_decoder = _decoder([c, 64, 32, 32])
        self.trend_proj = nn.Linear(2 * c, c)
        self.trend_decoder = _decoder([c, 128, 64, 32, 32])
        self.global_rest_head = nn.Conv1d(32, config.n_leads, kernel_size=1)
        self.global_unc_head = nn.Conv1d(32, config.n_leads, kernel_size=1)
        self.local_rest_head = nn.Conv1d(32, config.n_leads, kernel_size=1)
        self.local_unc_head = nn.Conv1d(32, config.n_leads, kernel_size=1)
        self.trend_rest_head = nn.Conv1d(32, config.n_leads, kernel_size=1)
        self.attr_head = nn.Sequential(nn.Linear(2 * c, c), nn.GELU(),
                                       nn.Linear(c, config.n_attributes))
        self.class_head = nn.Sequential(nn.Linear(2 * c, c), nn.GELU(),
                                        nn.Linear(c, config.n_classes))

    # ---- encoding -------------------------------------------------------
    def _pad(self, x: torch.Tensor, multiple: int) -> torch.Tensor:
        length = x.shape[-1]
        padded = -(-length // multiple) * multiple
        if padded != length:
            x = F.pad(x, (0, padded - length))
        return x

    def encode_global(self, masked_global: torch.Tensor) -> torch.Tensor:
        """[B, n_leads, D] -> [B, D_pad/256, feature_dim]"""
        self._check_leads(masked_global)
        x = self._pad(masked_global, _GLOBAL_STRIDE)
        return self.global_encoder(x).transpose(1, 2)

    def encode_local(self, masked_beat: torch.Tensor) -> torch.Tensor:
        """[B, n_leads, d] -> [B, d/64, feature_dim]"""
        self._check_leads(masked_beat)
        x = self._pad(masked_beat, _LOCAL_STRIDE)
        return self.local_encoder(x).transpose(1, 2)

    def encode_trend(self, trend: torch.Tensor) -> torch.Tensor:
        self._check_leads(trend)
        x = self._pad(trend, _GLOBAL_STRIDE)
        return self.trend_encoder(x).transpose(1, 2)

    def _check_leads(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[1] != self.config.n_leads:
            raise ValueError(f"expected [B, {self.config.n_leads}, L], got {tuple(x.shape)}")

    # ---- fusion ---------------------------------------------------------
    def cross_fuse(self, global_tokens: torch.Tensor,
                   local_tokens: Optional[torch.Tensor] = None,
                   need_weights: bool = False):
        """Self-attention over the concatenated token sequences, then split.

        ``local_tokens`` may be omitted for unsegmentable records; attention
        then runs over the global tokens alone.
        """
        n_g = global_tokens.shape[1]
        x = global_tokens if local_tokens is None else torch.cat(
            [global_tokens, local_tokens], dim=1)
        all_weights = []
        for block in self.fusion:
            x, w = block(x, need_weights=need_weights)
            if need_weights:
                all_weights.append(w)
        fused_global = x[:, :n_g]
        fused_local = None if local_tokens is None else x[:, n_g:]
        if need_weights:
            return fused_global, fused_local, all_weights
        return fused_global, fused_local

    # ---- decoding -------------------------------------------------------
    def decode(self, fused_tokens: torch.Tensor, branch: str,
               out_len: Optional[int] = None) -> RestorationResult:
        if branch == "global":
            dec, rest, unc = self.global_decoder, self.global_rest_head, self.global_unc_head
            out_len = out_len or self.config.d_global
        elif branch == "local":
            dec, rest, unc = self.local_decoder, self.local_rest_head, self.local_unc_head
            out_len = out_len or self.config.d_local
        else:
            raise ValueError(f"unknown branch {branch!r}")
        h = dec(fused_tokens.transpose(1, 2))
        restored = rest(h)[..., :out_len]
        uncertainty = F.softplus(unc(h)[..., :out_len]) + SIGMA_FLOOR
        return RestorationResult(restored=restored, uncertainty=uncertainty)

    def trend_restore(self, trend: torch.Tensor, fused_global: torch.Tensor,
                      out_len: Optional[int] = None) -> RestorationResult:
        """Restore the global signal from trend features combined channel-wise
        with the fused global features. No uncertainty head."""
        out_len = out_len or trend.shape[-1]
        trend_tokens = self.encode_trend(trend)
        combined = self.trend_proj(torch.cat([trend_tokens, fused_global], dim=-1))
        h = self.trend_decoder(combined.transpose(1, 2))
        restored = self.trend_rest_head(h)[..., :out_len]
        return RestorationResult(restored=restored, uncertainty=None)

    # ---- heads ----------------------------------------------------------
    def predict_heads(self, fused_global: torch.Tensor, trend_tokens: torch.Tensor):
        pooled = torch.cat([fused_global.mean(dim=1), trend_tokens.mean(dim=1)], dim=-1)
        return self.attr_head(pooled), self.class_head(pooled)

    # ---- full pass ------------------------------------------------------
    def forward(self, masked_global: torch.Tensor, masked_local: Optional[torch.Tensor],
                trend: torch.Tensor) -> ForwardOutput:
        d_out = masked_global.shape[-1]
        g_tokens = self.encode_global(masked_global)
        l_tokens = None if masked_local is None else self.encode_local(masked_local)
        fused_g, fused_l = self.cross_fuse(g_tokens, l_tokens)
        global_res = self.decode(fused_g, "global", out_len=d_out)
        if fused_l is None:
            empty = torch.zeros(masked_global.shape[0], self.config.n_leads,
                                self.config.d_local, device=masked_global.device)
            local_res = RestorationResult(restored=empty, uncertainty=torch.ones_like(empty))
        else:
            local_res = self.decode(fused_l, "local", out_len=masked_local.shape[-1])
        trend_tokens = self.encode_trend(trend)
        combined = self.trend_proj(torch.cat([trend_tokens, fused_g], dim=-1))
        h = self.trend_decoder(combined.transpose(1, 2))
        trend_res = RestorationResult(restored=self.trend_rest_head(h)[..., :d_out],
                                      uncertainty=None)
        attr_pred, class_logits = self.predict_heads(fused_g, trend_tokens)
        return ForwardOutput(global_branch=global_res, local_branch=local_res,
                             trend_branch=trend_res, attr_pred=attr_pred,
                             class_logits=class_logits)

    def classifier_final_layer(self) -> nn.Module:
        return self.class_head[-1]

    def replace_class_head_final(self, n_classes: int) -> None:
        """Swap the final linear layer for a new taxonomy (linear probing)."""
        c = self.config.feature_dim
        self.class_head[-1] = nn.Linear(c, n_classes)
        self.config = replace(self.config, n_classes=n_classes)
