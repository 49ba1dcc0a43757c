"""Miniature encoder-decoder with biased attention over video entity sequences.

The encoder runs pre-norm transformer layers whose self-attention adds the
relative spatial bias on entity pairs and a learned 1-D bucketed bias on
question pairs; a temporal convolution adapter follows each attention
sublayer. Entity attention is frame-local by default (block computation,
linear in the number of frames) with a dense global fallback behind a
flag. The decoder cross-attends over [clues; encoder states] and decodes
greedily.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from .attention import (
    BiasedMultiheadAttention,
    FeedForward,
    RelativeBias1D,
    frame_local_attention,
    masked_cross_entropy,
)
from .clues import CluesConfig, CluesModule
from .entities import EntitySequence, VideoSample
from .errors import CapacityError, ConfigError
from .preparation import PreparedBatch, prepare_batch
from .spatial_bias import (
    SpatialBias,
    SpatialBiasConfig,
    bias_dense_batch,
    bias_frame_blocks,
)
from .temporal_adapter import TemporalAdapter, TemporalAdapterConfig
from .vocab import BOS_ID, EOS_ID, TokenVocab


@dataclass
class ModelConfig:
    d: int = 64
    d_z: int = 16
    heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 2
    ffw: int = 256
    vocab_size: int = 0  # filled in when the model is built
    max_answer_len: int = 8
    frame_local_attention: bool = True
    dropout: float = 0.0
    max_seq_len: int = 512
    M: int = 12  # scene-text slots per frame
    N: int = 4  # object slots per frame
    rel_buckets: int = 16
    rel_max_distance: int = 32
    enable_spatial_bias: bool = True
    enable_temporal_adapter: bool = True
    enable_clues: bool = True
    per_layer_spatial_bias: bool = False
    external_feature_dim: Optional[int] = None

    def validate(self) -> None:
        if self.d != self.heads * self.d_z:
            raise ConfigError(f"d ({self.d}) must equal heads*d_z ({self.heads}*{self.d_z})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.M < 1 or self.N < 0:
            raise ConfigError(f"need M >= 1 and N >= 0, got M={self.M}, N={self.N}")


def frame_local_mask(seq: EntitySequence, question_len: int) -> np.ndarray:
    """Boolean (L+q)x(L+q) mask: True where attention is allowed.

    Entities attend within their frame only; question tokens attend and
    are attended globally; padding slots keep just a self-loop.
    """
    L = len(seq)
    n = L + question_len
    allow = np.zeros((n, n), dtype=bool)
    nonpad = ~seq.is_padding
    same_frame = seq.frame_index[:, None] == seq.frame_index[None, :]
    allow[:L, :L] = same_frame & nonpad[:, None] & nonpad[None, :]
    allow[:L, :L] |= np.diag(seq.is_padding)
    if question_len:
        allow[L:, L:] = True
        allow[:L, L:] = nonpad[:, None]
        allow[L:, :L] = nonpad[None, :]
    return allow


def global_attention_mask(seq: EntitySequence, question_len: int) -> np.ndarray:
    """Mask for the global-attention fallback: no same-frame restriction."""
    L = len(seq)
    n = L + question_len
    allow = np.zeros((n, n), dtype=bool)
    nonpad = ~seq.is_padding
    allow[:L, :L] = nonpad[:, None] & nonpad[None, :]
    allow[:L, :L] |= np.diag(seq.is_padding)
    if question_len:
        allow[L:, L:] = True
        allow[:L, L:] = nonpad[:, None]
        allow[L:, :L] = nonpad[None, :]
    return allow


@dataclass
class MemoryRow:
    kind: str  # clue | entity | question
    frame_index: int
    text: str


class AttentionRecord:
    """Collects cross-attention weights for qualitative dumps."""

    def __init__(self) -> None:
        self.decoder_steps: list[np.ndarray] = []  # per decode step, (memory,)
        self.clues_layers: list[tuple[int, np.ndarray]] = []  # (layer, (G, L))
        self.memory_meta: list[MemoryRow] = []

    def add_clues(self, layer: int, weights: Tensor) -> None:
        # (B, H, G, L) -> head-mean of the first batch element
        self.clues_layers.append((layer, weights[0].mean(dim=0).detach().cpu().numpy()))

    def add_decoder_step(self, weights: Tensor) -> None:
        self.decoder_steps.append(weights.detach().cpu().numpy())


@dataclass
class _EncodeContext:
    B: int
    T: int
    S: int
    L: int
    Q: int
    frame_local: bool
    ent_pad_grid: Tensor  # (B, T, S)
    q_pad: Optional[Tensor]
    qq_bias: Optional[Tensor]
    dense_mask: Optional[Tensor] = None  # (B, n, n) for the global path


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, adapter_cfg: TemporalAdapterConfig):
        super().__init__()
        self.ln_attn = nn.LayerNorm(cfg.d)
        self.attn = BiasedMultiheadAttention(cfg.d, cfg.heads, cfg.d_z, cfg.dropout)
        self.adapter = (
            TemporalAdapter(cfg.d, adapter_cfg) if cfg.enable_temporal_adapter else None
        )
        self.ln_ffn = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffw, cfg.dropout)

    def forward(self, x: Tensor, ctx: _EncodeContext, ent_bias, dense_bias) -> Tensor:
        h = self.ln_attn(x)
        if ctx.frame_local:
            ent_h = h[:, : ctx.L].view(ctx.B, ctx.T, ctx.S, -1)
            out_e, out_q = frame_local_attention(
                self.attn, ent_h, h[:, ctx.L :], ent_bias, ctx.qq_bias,
                ctx.ent_pad_grid, ctx.q_pad,
            )
            out = torch.cat([out_e, out_q], dim=1)
        else:
            out = self.attn(h, h, h, bias=dense_bias, mask=ctx.dense_mask)
        x = x + out
        if self.adapter is not None:
            grid = x[:, : ctx.L].view(ctx.B, ctx.T, ctx.S, -1)
            x = torch.cat([self.adapter(grid).reshape(ctx.B, ctx.L, -1), x[:, ctx.L :]], dim=1)
        return x + self.ffn(self.ln_ffn(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_self = nn.LayerNorm(cfg.d)
        self.self_attn = BiasedMultiheadAttention(cfg.d, cfg.heads, cfg.d_z, cfg.dropout)
        self.ln_cross = nn.LayerNorm(cfg.d)
        self.cross_attn = BiasedMultiheadAttention(cfg.d, cfg.heads, cfg.d_z, cfg.dropout)
        self.ln_ffn = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffw, cfg.dropout)

    def forward(self, y, memory, mem_mask, self_bias, causal_mask, need_weights=False):
        h = self.ln_self(y)
        y = y + self.self_attn(h, h, h, bias=self_bias, mask=causal_mask)
        h = self.ln_cross(y)
        mask = mem_mask[:, None, :].expand(-1, y.shape[1], -1)
        weights = None
        if need_weights:
            out, weights = self.cross_attn(h, memory, memory, mask=mask, need_weights=True)
        else:
            out = self.cross_attn(h, memory, memory, mask=mask)
        y = y + out
        y = y + self.ffn(self.ln_ffn(y))
        return y, weights


class VideoTextQAModel(nn.Module):
    def __init__(
        self,
        config: ModelConfig,
        vocab: TokenVocab,
        spatial_cfg: SpatialBiasConfig | None = None,
        adapter_cfg: TemporalAdapterConfig | None = None,
        clues_cfg: CluesConfig | None = None,
    ):
        super().__init__()
        config.vocab_size = len(vocab)
        config.validate()
        self.config = config
        self.vocab = vocab
        self.spatial_cfg = spatial_cfg or SpatialBiasConfig()
        self.adapter_cfg = adapter_cfg or TemporalAdapterConfig()
        self.clues_cfg = clues_cfg or CluesConfig()

        self.embed = nn.Embedding(config.vocab_size, config.d)
        nn.init.normal_(self.embed.weight, 0.0, 0.02)
        if config.enable_spatial_bias:
            n_bias = config.enc_layers if config.per_layer_spatial_bias else 1
            self.spatial = nn.ModuleList(
                SpatialBias(config.heads, self.spatial_cfg) for _ in range(n_bias)
            )
        else:
            self.spatial = nn.ModuleList()
        self.q_rel_bias = RelativeBias1D(
            config.heads, config.rel_buckets, config.rel_max_distance, causal=False
        )
        self.dec_rel_bias = RelativeBias1D(
            config.heads, config.rel_buckets, config.rel_max_distance, causal=True
        )
        self.encoder = nn.ModuleList(
            EncoderLayer(config, self.adapter_cfg) for _ in range(config.enc_layers)
        )
        self.enc_ln = nn.LayerNorm(config.d)
        self.clues = (
            CluesModule(
                config.d,
                config.heads,
                config.d_z,
                config.ffw,
                self.clues_cfg,
                external_dim=config.external_feature_dim,
                dropout=config.dropout,
            )
            if config.enable_clues
            else None
        )
        self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.dec_layers))
        self.dec_ln = nn.LayerNorm(config.d)
        self.lm_head = nn.Linear(config.d, config.vocab_size, bias=False)

    # ------------------------------------------------------------------
    # encoding

    def embed_entities(self, pb: PreparedBatch) -> Tensor:
        """Per-slot embedding: mean of the sub-token embeddings of the text."""
        emb = self.embed(pb.ent_token_ids)  # (B, L, W, d)
        mask = pb.ent_token_mask[..., None].to(emb.dtype)
        counts = pb.ent_token_mask.sum(dim=-1, keepdim=True).clamp(min=1).to(emb.dtype)
        return (emb * mask).sum(dim=2) / counts

    def _spatial_biases(self, pb: PreparedBatch, dtype: torch.dtype) -> list:
        """Per-encoder-layer entity bias (frame blocks or dense), or Nones."""
        cfg = self.config
        if not cfg.enable_spatial_bias:
            return [None] * cfg.enc_layers
        B, T, S = pb.batch_size, pb.T, pb.S
        builder = bias_frame_blocks if cfg.frame_local_attention else bias_dense_batch
        if cfg.frame_local_attention:
            shape = (B, T, S)
            coords = [xy.view(B, T, S, 2) for xy in (pb.word_xy, pb.line_xy, pb.para_xy)]
            nonpad = (~pb.ent_pad).view(B, T, S)
            is_text = pb.ent_text.view(B, T, S)
        else:
            coords = [pb.word_xy, pb.line_xy, pb.para_xy]
            nonpad = ~pb.ent_pad
            is_text = pb.ent_text
        per_layer = []
        cache: dict[int, Tensor] = {}
        for i in range(cfg.enc_layers):
            idx = i if cfg.per_layer_spatial_bias else 0
            if idx not in cache:
                cache[idx] = builder(*coords, nonpad, is_text, self.spatial[idx], dtype)
            per_layer.append(cache[idx])
        return per_layer

    def _dense_mask(self, pb: PreparedBatch) -> Tensor:
        """(B, L+Q, L+Q) allowed-attention mask for the global path."""
        B, L, Q = pb.batch_size, pb.L, pb.Q
        n = L + Q
        nonpad = ~pb.ent_pad
        allow = torch.zeros(B, n, n, dtype=torch.bool)
        allow[:, :L, :L] = nonpad[:, :, None] & nonpad[:, None, :]
        idx = torch.arange(L)
        allow[:, idx, idx] |= pb.ent_pad
        if Q:
            q_ok = ~pb.q_pad
            allow[:, L:, L:] = q_ok[:, :, None] & q_ok[:, None, :]
            qidx = torch.arange(L, n)
            allow[:, qidx, qidx] = True
            allow[:, :L, L:] = nonpad[:, :, None] & q_ok[:, None, :]
            allow[:, L:, :L] = q_ok[:, :, None] & nonpad[:, None, :]
        return allow

    def encode_prepared(self, pb: PreparedBatch) -> tuple[Tensor, Tensor]:
        """Run the encoder stack; returns (hidden states (B, L+Q, d), entity embeddings)."""
        cfg = self.config
        if pb.L + pb.Q > cfg.max_seq_len:
            raise CapacityError(
                f"sequence length {pb.L + pb.Q} exceeds configured maximum {cfg.max_seq_len}"
            )
        dtype = self.embed.weight.dtype
        ent_emb = self.embed_entities(pb)
        for b, seq in enumerate(pb.seqs):
            seq.embeddings = ent_emb[b].detach()
        B = pb.batch_size
        q_emb = self.embed(pb.q_ids) if pb.Q else ent_emb.new_zeros(B, 0, cfg.d)
        x = torch.cat([ent_emb, q_emb], dim=1)

        qq_bias = self.q_rel_bias(pb.Q, pb.Q).to(dtype) if pb.Q else None
        ent_biases = self._spatial_biases(pb, dtype)
        ctx = _EncodeContext(
            B=B,
            T=pb.T,
            S=pb.S,
            L=pb.L,
            Q=pb.Q,
            frame_local=cfg.frame_local_attention,
            ent_pad_grid=pb.ent_pad.view(B, pb.T, pb.S),
            q_pad=pb.q_pad if pb.Q else None,
            qq_bias=qq_bias,
        )
        dense_biases = [None] * cfg.enc_layers
        if not cfg.frame_local_attention:
            ctx.dense_mask = self._dense_mask(pb)
            n = pb.L + pb.Q
            for i, ent_bias in enumerate(ent_biases):
                dense = x.new_zeros(B, cfg.heads, n, n)
                if ent_bias is not None:
                    dense[:, :, : pb.L, : pb.L] = ent_bias
                if qq_bias is not None:
                    dense[:, :, pb.L :, pb.L :] = qq_bias
                dense_biases[i] = dense
            ent_biases = [None] * cfg.enc_layers

        for i, layer in enumerate(self.encoder):
            x = layer(x, ctx, ent_biases[i], dense_biases[i])
        return self.enc_ln(x), ent_emb

    def forward_memory(
        self, pb: PreparedBatch, record: AttentionRecord | None = None
    ) -> tuple[Tensor, Tensor]:
        """Encode and assemble the decoder memory [clues; encoder states]."""
        enc, ent_emb = self.encode_prepared(pb)
        B = pb.batch_size
        mem_valid = torch.cat([~pb.ent_pad, ~pb.q_pad], dim=1)
        memory = enc
        if self.clues is not None:
            eligible = ~pb.ent_pad
            if self.clues_cfg.fine_grained_source == "scene_text":
                eligible = eligible & pb.ent_text
            frame_features = (
                pb.frame_features
                if self.clues_cfg.global_feature_source == "external_file"
                else None
            )
            clue = self.clues(
                ent_emb.view(B, pb.T, pb.S, -1),
                (~pb.ent_pad).view(B, pb.T, pb.S),
                enc[:, : pb.L],
                eligible,
                enc[:, pb.L :],
                pb.q_pad if pb.Q else None,
                frame_features=frame_features,
                record=record,
            )
            memory = torch.cat([clue, enc], dim=1)
            mem_valid = torch.cat(
                [torch.ones(B, self.clues_cfg.G, dtype=torch.bool), mem_valid], dim=1
            )
        return memory, mem_valid

    # ------------------------------------------------------------------
    # decoding

    def decode(
        self,
        dec_in: Tensor,
        memory: Tensor,
        mem_valid: Tensor,
        need_cross_weights: bool = False,
    ) -> tuple[Tensor, Optional[Tensor]]:
        """Teacher-forced decoder pass; returns (logits, last-layer cross weights)."""
        A = dec_in.shape[1]
        y = self.embed(dec_in)
        causal = torch.tril(torch.ones(A, A, dtype=torch.bool, device=dec_in.device))
        bias = self.dec_rel_bias(A, A).to(y.dtype)
        weights = None
        for i, layer in enumerate(self.decoder):
            want = need_cross_weights and i == len(self.decoder) - 1
            y, w = layer(y, memory, mem_valid, bias, causal, need_weights=want)
            if want:
                weights = w
        return self.lm_head(self.dec_ln(y)), weights

    def loss_on_batch(self, pb: PreparedBatch) -> Tensor:
        if pb.target_ids is None:
            raise ConfigError("batch was prepared without targets")
        memory, mem_valid = self.forward_memory(pb)
        bos = torch.full((pb.batch_size, 1), BOS_ID, dtype=torch.long)
        dec_in = torch.cat([bos, pb.target_ids[:, :-1]], dim=1)
        logits, _ = self.decode(dec_in, memory, mem_valid)
        return masked_cross_entropy(logits, pb.target_ids)

    @torch.no_grad()
    def generate(
        self, sample: VideoSample, record: AttentionRecord | None = None
    ) -> list[str]:
        """Greedy decoding from BOS; returns answer tokens without BOS/EOS."""
        cfg = self.config
        pb = prepare_batch([sample], self.vocab, cfg.M, cfg.N, cfg.max_answer_len)
        memory, mem_valid = self.forward_memory(pb, record=record)
        if record is not None:
            record.memory_meta = self.memory_meta(pb)
        ids = [BOS_ID]
        out: list[int] = []
        for _ in range(cfg.max_answer_len):
            dec_in = torch.tensor([ids], dtype=torch.long)
            logits, weights = self.decode(
                dec_in, memory, mem_valid, need_cross_weights=record is not None
            )
            if record is not None:
                record.add_decoder_step(weights[0, :, -1, :].mean(dim=0))
            next_id = int(logits[0, -1].argmax())
            if next_id == EOS_ID:
                break
            out.append(next_id)
            ids.append(next_id)
        return self.vocab.decode(out)

    def memory_meta(self, pb: PreparedBatch) -> list[MemoryRow]:
        """Row descriptions of the decoder memory for attention dumps."""
        rows: list[MemoryRow] = []
        if self.clues is not None:
            rows.extend(MemoryRow("clue", -1, "") for _ in range(self.clues_cfg.G))
        seq = pb.seqs[0]
        for i, ent in enumerate(seq.slots):
            rows.append(MemoryRow("entity", int(seq.frame_index[i]), ent.text))
        q_tokens = self.vocab.decode(pb.q_ids[0, : int((~pb.q_pad[0]).sum())].tolist())
        rows.extend(MemoryRow("question", -1, tok) for tok in q_tokens)
        return rows


# ----------------------------------------------------------------------
# checkpoint serialization

CHECKPOINT_MAGIC = b"VTVQACKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: VideoTextQAModel, path: str | Path) -> None:
    """Write magic, version, JSON header and raw little-endian float32 tensors."""
    state = model.state_dict()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "spatial": asdict(model.spatial_cfg),
        "adapter": asdict(model.adapter_cfg),
        "clues": asdict(model.clues_cfg),
        "vocab": model.vocab.tokens,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "dtype": "float32",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for value in state.values():
            fh.write(
                value.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
            )


def load_checkpoint(path: str | Path) -> VideoTextQAModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        vocab = TokenVocab(header["vocab"])
        model = VideoTextQAModel(
            ModelConfig(**header["model"]),
            vocab,
            SpatialBiasConfig(**header["spatial"]),
            TemporalAdapterConfig(**header["adapter"]),
            CluesConfig(**header["clues"]),
        )
        state = {}
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            state[meta["name"]] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
    return model
