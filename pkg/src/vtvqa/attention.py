"""Multi-head attention with additive per-head bias, plus the frame-local fast path."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ContractViolation
from .vocab import PAD_ID


class BiasedMultiheadAttention(nn.Module):
    """Scaled dot-product attention whose logits take an additive bias.

    ``bias`` broadcasts against (..., H, Lq, Lk) and ``mask`` against
    (..., Lq, Lk) with True marking allowed key positions. Every query row
    must keep at least one allowed key.
    """

    def __init__(self, d: int, heads: int, d_z: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.d_z = d_z
        self.q_proj = nn.Linear(d, heads * d_z, bias=False)
        self.k_proj = nn.Linear(d, heads * d_z, bias=False)
        self.v_proj = nn.Linear(d, heads * d_z, bias=False)
        self.o_proj = nn.Linear(heads * d_z, d, bias=False)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        # (..., L, H*Z) -> (..., H, L, Z)
        return x.unflatten(-1, (self.heads, self.d_z)).transpose(-3, -2)

    def forward(
        self,
        q_in: Tensor,
        k_in: Tensor,
        v_in: Tensor,
        bias: Tensor | None = None,
        mask: Tensor | None = None,
        need_weights: bool = False,
    ):
        q = self._split(self.q_proj(q_in))
        k = self._split(self.k_proj(k_in))
        v = self._split(self.v_proj(v_in))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_z)
        if bias is not None:
            logits = logits + bias
        if mask is not None:
            if not mask.any(dim=-1).all():
                raise ContractViolation("attention mask leaves a query row with no keys")
            logits = logits.masked_fill(~mask.unsqueeze(-3), float("-inf"))
        weights = F.softmax(logits, dim=-1)
        ctx = weights @ v  # (..., H, Lq, Z)
        out = self.o_proj(ctx.transpose(-3, -2).flatten(-2))
        out = self.dropout(out)
        if need_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class RelativeBias1D(nn.Module):
    """Learned bucketed relative-position bias for 1-D token sequences."""

    def __init__(self, heads: int, n_buckets: int = 16, max_distance: int = 32, causal: bool = False):
        super().__init__()
        self.n_buckets = n_buckets
        self.max_distance = max_distance
        self.causal = causal
        self.embedding = nn.Embedding(n_buckets, heads)

    def _bucket(self, relative: Tensor) -> Tensor:
        n_buckets = self.n_buckets
        bucket = torch.zeros_like(relative)
        if self.causal:
            relative = -torch.minimum(relative, torch.zeros_like(relative))
        else:
            n_buckets //= 2
            bucket = bucket + (relative > 0).long() * n_buckets
            relative = relative.abs()
        max_exact = n_buckets // 2
        is_small = relative < max_exact
        log_ratio = torch.log(relative.float().clamp(min=1) / max_exact) / math.log(
            self.max_distance / max_exact
        )
        large = max_exact + (log_ratio * (n_buckets - max_exact)).long()
        large = torch.minimum(large, torch.full_like(large, n_buckets - 1))
        return bucket + torch.where(is_small, relative, large)

    def forward(self, len_q: int, len_k: int, device=None) -> Tensor:
        """(H, len_q, len_k) additive bias."""
        q_pos = torch.arange(len_q, device=device)[:, None]
        k_pos = torch.arange(len_k, device=device)[None, :]
        buckets = self._bucket(k_pos - q_pos)
        return self.embedding(buckets).permute(2, 0, 1)


def frame_local_attention(
    attn: BiasedMultiheadAttention,
    ent: Tensor,
    question: Tensor,
    ent_bias: Tensor | None,
    qq_bias: Tensor | None,
    ent_pad: Tensor,
    q_pad: Tensor | None,
) -> tuple[Tensor, Tensor]:
    """One attention layer where entities interact only within their frame.

    ``ent`` is (B, T, S, d); entity queries see the non-padding entities of
    their own frame plus all non-padding question tokens, question queries
    see everything non-padding, and padding slots keep a self-loop. Cost is
    linear in T (T blocks of S^2 logits plus question strips), unlike the
    dense masked product which is quadratic. Output matches the dense path
    with the frame-local mask.
    """
    B, T, S, d = ent.shape
    H, Z = attn.heads, attn.d_z
    scale = 1.0 / math.sqrt(Z)
    nonpad = ~ent_pad  # (B, T, S)

    qe = attn.q_proj(ent).view(B, T, S, H, Z)
    ke = attn.k_proj(ent).view(B, T, S, H, Z)
    ve = attn.v_proj(ent).view(B, T, S, H, Z)

    Q = question.shape[1]
    if Q:
        q_nonpad = ~q_pad if q_pad is not None else torch.ones(
            B, Q, dtype=torch.bool, device=ent.device
        )
        qq = attn.q_proj(question).view(B, Q, H, Z)
        kq = attn.k_proj(question).view(B, Q, H, Z)
        vq = attn.v_proj(question).view(B, Q, H, Z)

    # Entity queries: per-frame block plus the question strip.
    logits_ee = torch.einsum("btihz,btjhz->bhtij", qe, ke) * scale
    if ent_bias is not None:
        logits_ee = logits_ee + ent_bias
    eye = torch.eye(S, dtype=torch.bool, device=ent.device)
    allow_ee = nonpad[..., :, None] & nonpad[..., None, :]
    allow_ee = allow_ee | (ent_pad[..., :, None] & eye)
    allow = allow_ee.unsqueeze(1)
    logits = logits_ee
    if Q:
        logits_eq = torch.einsum("btihz,bqhz->bhtiq", qe, kq) * scale
        allow_eq = (nonpad[..., :, None] & q_nonpad[:, None, None, :]).unsqueeze(1)
        logits = torch.cat([logits, logits_eq], dim=-1)
        allow = torch.cat([allow, allow_eq], dim=-1)
    logits = logits.masked_fill(~allow, float("-inf"))
    weights = F.softmax(logits, dim=-1)
    ctx = torch.einsum("bhtij,btjhz->btihz", weights[..., :S], ve)
    if Q:
        ctx = ctx + torch.einsum("bhtiq,bqhz->btihz", weights[..., S:], vq)
    out_ent = attn.o_proj(ctx.reshape(B, T * S, H * Z))

    if not Q:
        return out_ent, question

    # Question queries: global over all entities and question tokens.
    ke_flat = ke.reshape(B, T * S, H, Z)
    ve_flat = ve.reshape(B, T * S, H, Z)
    logits_qe = torch.einsum("bqhz,blhz->bhql", qq, ke_flat) * scale
    logits_qq = torch.einsum("bqhz,bkhz->bhqk", qq, kq) * scale
    if qq_bias is not None:
        logits_qq = logits_qq + qq_bias
    allow_qe = (q_nonpad[:, :, None] & nonpad.reshape(B, 1, T * S)).unsqueeze(1)
    eye_q = torch.eye(Q, dtype=torch.bool, device=ent.device)
    allow_qq = q_nonpad[:, :, None] & q_nonpad[:, None, :]
    allow_qq = (allow_qq | ((~q_nonpad)[:, :, None] & eye_q)).unsqueeze(1)
    logits_q = torch.cat([logits_qe, logits_qq], dim=-1)
    allow_q = torch.cat([allow_qe, allow_qq], dim=-1)
    logits_q = logits_q.masked_fill(~allow_q, float("-inf"))
    weights_q = F.softmax(logits_q, dim=-1)
    ctx_q = torch.einsum("bhql,blhz->bqhz", weights_q[..., : T * S], ve_flat)
    ctx_q = ctx_q + torch.einsum("bhqk,bkhz->bqhz", weights_q[..., T * S :], vq)
    out_q = attn.o_proj(ctx_q.reshape(B, Q, H * Z))
    return out_ent, out_q


def masked_cross_entropy(logits: Tensor, targets: Tensor, ignore_id: int = PAD_ID) -> Tensor:
    """Mean token-level cross-entropy over positions whose target is not PAD."""
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=ignore_id
    )
