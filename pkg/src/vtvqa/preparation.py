"""Turns VideoSamples into the padded tensors the model consumes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from .entities import EntitySequence, VideoSample, build_entity_sequence
from .errors import ValidationError
from .vocab import EOS_ID, PAD_ID, TokenVocab


@dataclass
class PreparedBatch:
    """Tensors for a group of samples sharing frame count and slot layout."""

    samples: list[VideoSample]
    seqs: list[EntitySequence]
    T: int
    S: int  # slots per frame, M + N
    L: int  # T * S
    Q: int  # padded question length (0 when all questions are empty)
    ent_token_ids: Tensor  # (B, L, W) long
    ent_token_mask: Tensor  # (B, L, W) bool
    ent_pad: Tensor  # (B, L) bool
    ent_text: Tensor  # (B, L) bool
    word_xy: Tensor  # (B, L, 2) float64
    line_xy: Tensor
    para_xy: Tensor
    q_ids: Tensor  # (B, Q) long
    q_pad: Tensor  # (B, Q) bool
    frame_features: Optional[Tensor] = None  # (B, T, d_g)
    target_ids: Optional[Tensor] = None  # (B, A) long, PAD padded

    @property
    def batch_size(self) -> int:
        return len(self.samples)


def _entity_subtokens(seq: EntitySequence, vocab: TokenVocab) -> list[list[int]]:
    out = []
    for ent in seq.slots:
        ids = vocab.encode(ent.text)
        out.append(ids if ids else [PAD_ID])
    return out


def encode_answer(answer: str, vocab: TokenVocab, max_answer_len: int) -> list[int]:
    """Token ids for a target answer, EOS-terminated, capped at max length."""
    ids = vocab.encode(answer)[: max_answer_len - 1]
    return ids + [EOS_ID]


def prepare_batch(
    samples: Sequence[VideoSample],
    vocab: TokenVocab,
    M: int,
    N: int,
    max_answer_len: int = 8,
    with_targets: bool = False,
) -> PreparedBatch:
    """Build padded batch tensors. All samples must share num_frames."""
    frames = {s.num_frames for s in samples}
    if len(frames) != 1:
        raise ValidationError(f"batch mixes frame counts {sorted(frames)}")
    T = frames.pop()
    S = M + N
    L = T * S
    B = len(samples)

    seqs = [build_entity_sequence(s, M, N) for s in samples]
    sub = [_entity_subtokens(seq, vocab) for seq in seqs]
    W = max(len(ids) for per_seq in sub for ids in per_seq)
    ent_token_ids = torch.full((B, L, W), PAD_ID, dtype=torch.long)
    ent_token_mask = torch.zeros(B, L, W, dtype=torch.bool)
    for b, per_seq in enumerate(sub):
        for i, ids in enumerate(per_seq):
            ent_token_ids[b, i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            ent_token_mask[b, i, : len(ids)] = True

    ent_pad = torch.from_numpy(np.stack([seq.is_padding for seq in seqs]))
    ent_text = torch.from_numpy(np.stack([seq.is_scene_text for seq in seqs]))
    word_xy = torch.from_numpy(np.stack([seq.word_top_left() for seq in seqs]))
    line_xy = torch.from_numpy(np.stack([seq.line_top_left() for seq in seqs]))
    para_xy = torch.from_numpy(np.stack([seq.para_top_left() for seq in seqs]))

    q_encoded = [vocab.encode(s.question) for s in samples]
    Q = max((len(ids) for ids in q_encoded), default=0)
    q_ids = torch.full((B, Q), PAD_ID, dtype=torch.long)
    q_pad = torch.ones(B, Q, dtype=torch.bool)
    for b, ids in enumerate(q_encoded):
        if ids:
            q_ids[b, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            q_pad[b, : len(ids)] = False

    frame_features = None
    if all(s.frame_features is not None for s in samples):
        frame_features = torch.from_numpy(
            np.stack([np.asarray(s.frame_features, dtype=np.float64) for s in samples])
        )

    target_ids = None
    if with_targets:
        encoded = [encode_answer(s.answers[0], vocab, max_answer_len) for s in samples]
        A = max(len(ids) for ids in encoded)
        target_ids = torch.full((B, A), PAD_ID, dtype=torch.long)
        for b, ids in enumerate(encoded):
            target_ids[b, : len(ids)] = torch.tensor(ids, dtype=torch.long)

    return PreparedBatch(
        samples=list(samples),
        seqs=seqs,
        T=T,
        S=S,
        L=L,
        Q=Q,
        ent_token_ids=ent_token_ids,
        ent_token_mask=ent_token_mask,
        ent_pad=ent_pad,
        ent_text=ent_text,
        word_xy=word_xy,
        line_xy=line_xy,
        para_xy=para_xy,
        q_ids=q_ids,
        q_pad=q_pad,
        frame_features=frame_features,
        target_ids=target_ids,
    )


def group_by_shape(samples: Sequence[VideoSample]) -> list[list[int]]:
    """Indices grouped by frame count so each group can be stacked."""
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.num_frames, []).append(i)
    return [groups[k] for k in sorted(groups)]
