"""Question-conditioned, scene-text-aware clue tokens for the decoder.

Per-frame global features (pooled entity embeddings or externally supplied
frame vectors) are resampled to a fixed count G, fused with the encoded
question in a self-attention block, then refined by N rounds of
self-attention plus cross-attention into the encoder's scene-text states.
The resulting G rows are prepended to the decoder's cross-attention memory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .attention import BiasedMultiheadAttention, FeedForward
from .errors import ConfigError, ContractViolation

logger = logging.getLogger(__name__)

FINE_GRAINED_SOURCES = ("scene_text", "scene_text_and_objects")
GLOBAL_FEATURE_SOURCES = ("pooled_entities", "external_file")


@dataclass
class CluesConfig:
    G: int = 8  # fixed clue count
    n_layers: int = 2  # self+cross refinement blocks
    fine_grained_source: str = "scene_text"
    global_feature_source: str = "pooled_entities"

    def validate(self) -> None:
        if self.G < 1:
            raise ConfigError(f"G must be >= 1, got {self.G}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.fine_grained_source not in FINE_GRAINED_SOURCES:
            raise ConfigError(f"unknown fine_grained_source {self.fine_grained_source!r}")
        if self.global_feature_source not in GLOBAL_FEATURE_SOURCES:
            raise ConfigError(f"unknown global_feature_source {self.global_feature_source!r}")


def adaptive_frame_bins(T: int, G: int) -> list[tuple[int, int]]:
    """Standard adaptive pooling bins: bin b covers floor(bT/G)..ceil((b+1)T/G)-1."""
    bins = []
    for b in range(G):
        start = (b * T) // G
        end = -(-((b + 1) * T) // G)  # ceil division
        bins.append((start, end))
    return bins


class _Block(nn.Module):
    """Pre-norm self-attention or cross-attention block with feed-forward."""

    def __init__(self, d: int, heads: int, d_z: int, ffw: int, dropout: float = 0.0):
        super().__init__()
        self.ln_attn = nn.LayerNorm(d)
        self.attn = BiasedMultiheadAttention(d, heads, d_z, dropout)
        self.ln_ffn = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffw, dropout)

    def self_attend(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        h = self.ln_attn(x)
        x = x + self.attn(h, h, h, mask=mask)
        return x + self.ffn(self.ln_ffn(x))


class CluesBlock(nn.Module):
    """One refinement round: clue self-attention, cross into entities, FFN."""

    def __init__(self, d: int, heads: int, d_z: int, ffw: int, dropout: float = 0.0):
        super().__init__()
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = BiasedMultiheadAttention(d, heads, d_z, dropout)
        self.ln_cross = nn.LayerNorm(d)
        self.cross_attn = BiasedMultiheadAttention(d, heads, d_z, dropout)
        self.ln_ffn = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffw, dropout)

    def forward(
        self,
        clues: Tensor,
        entity_states: Tensor,
        key_mask: Tensor,
        record=None,
        layer_index: int = 0,
    ) -> Tensor:
        h = self.ln_self(clues)
        clues = clues + self.self_attn(h, h, h)
        h = self.ln_cross(clues)
        mask = key_mask[:, None, :].expand(-1, clues.shape[1], -1)
        out, weights = self.cross_attn(
            h, entity_states, entity_states, mask=mask, need_weights=True
        )
        if record is not None:
            record.add_clues(layer_index, weights)
        clues = clues + out
        return clues + self.ffn(self.ln_ffn(clues))


class CluesModule(nn.Module):
    def __init__(
        self,
        d: int,
        heads: int,
        d_z: int,
        ffw: int,
        cfg: CluesConfig | None = None,
        external_dim: int | None = None,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.cfg = cfg or CluesConfig()
        self.cfg.validate()
        self.frame_proj = nn.Linear(d, d)
        self.external_proj = (
            nn.Linear(external_dim, d) if external_dim is not None else None
        )
        self.length_proj = nn.Linear(d, d)
        self.fusion = _Block(d, heads, d_z, ffw, dropout)
        self.blocks = nn.ModuleList(
            CluesBlock(d, heads, d_z, ffw, dropout) for _ in range(self.cfg.n_layers)
        )

    def frame_global_features(
        self,
        ent_emb: Tensor,  # (B, T, S, d) entity embeddings
        nonpad: Tensor,  # (B, T, S) bool
        frame_features: Tensor | None = None,  # (B, T, d_g)
    ) -> Tensor:
        """Per-frame global vectors: projected external features or pooled entities."""
        if self.cfg.global_feature_source == "external_file":
            if frame_features is None:
                raise ConfigError("external_file global features requested but none supplied")
            if self.external_proj is None:
                raise ConfigError("model was built without an external feature projection")
            return self.external_proj(frame_features.to(ent_emb.dtype))
        counts = nonpad.sum(dim=-1, keepdim=True)  # (B, T, 1)
        pooled = (ent_emb * nonpad[..., None].to(ent_emb.dtype)).sum(dim=2)
        pooled = pooled / counts.clamp(min=1).to(ent_emb.dtype)
        if (counts == 0).any():
            logger.debug("frames without entities pooled to zero vectors")
        return self.frame_proj(pooled)

    def project_fixed_length(self, frame_global: Tensor) -> Tensor:
        """(B, T, d) -> (B, G, d) by adaptive frame binning plus projection."""
        T = frame_global.shape[1]
        rows = [
            frame_global[:, start:end].mean(dim=1)
            for start, end in adaptive_frame_bins(T, self.cfg.G)
        ]
        return self.length_proj(torch.stack(rows, dim=1))

    def question_fusion(
        self, global_tokens: Tensor, q_states: Tensor, q_pad: Tensor | None
    ) -> Tensor:
        """Self-attend over [global; question] and keep the first G rows."""
        B, G, _ = global_tokens.shape
        Q = q_states.shape[1]
        x = torch.cat([global_tokens, q_states], dim=1)
        if Q == 0:
            return self.fusion.self_attend(x)[:, :G]
        key_ok = torch.ones(B, G + Q, dtype=torch.bool, device=x.device)
        if q_pad is not None:
            key_ok[:, G:] = ~q_pad
        mask = key_ok[:, None, :].expand(-1, G + Q, -1).clone()
        # padded question rows keep a self-loop so softmax stays defined
        idx = torch.arange(G + Q, device=x.device)
        mask[:, idx, idx] = True
        return self.fusion.self_attend(x, mask=mask)[:, :G]

    def scene_text_interaction(
        self,
        clues: Tensor,
        entity_states: Tensor,
        eligible: Tensor,  # (B, L) bool: slots used as keys/values
        record=None,
    ) -> Tensor:
        """N rounds of clue refinement against the selected entity states."""
        if not eligible.any(dim=-1).all():
            raise ContractViolation("no eligible entity slots for clue cross-attention")
        for i, block in enumerate(self.blocks):
            clues = block(clues, entity_states, eligible, record=record, layer_index=i)
        return clues

    def forward(
        self,
        ent_emb: Tensor,
        nonpad: Tensor,
        ent_states: Tensor,
        eligible: Tensor,
        q_states: Tensor,
        q_pad: Tensor | None,
        frame_features: Tensor | None = None,
        record=None,
    ) -> Tensor:
        g = self.frame_global_features(ent_emb, nonpad, frame_features)
        clues = self.project_fixed_length(g)
        clues = self.question_fusion(clues, q_states, q_pad)
        return self.scene_text_interaction(clues, ent_states, eligible, record=record)
