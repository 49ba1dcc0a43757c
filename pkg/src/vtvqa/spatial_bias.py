"""Relative spatial attention bias from pairwise box-coordinate differences.

Each ordered entity pair (i, j) gets a per-head additive logit built from
sinusoidal features of (x_i - x_j) and cosine features of (y_i - y_j) of
the boxes' top-left corners, projected by a learned matrix. Scene-text
pairs sum the word-, line- and paragraph-level terms; any pair involving
an object uses the word-level term alone; pairs touching padding are
exactly zero. Feature math runs in float64 so the bias is stable under
translation of all boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .entities import BoundingBox, EntitySequence
from .errors import ConfigError

GRANULARITIES = ("word", "line", "para")


@dataclass
class SpatialBiasConfig:
    d_s: int = 16  # sinusoid features per axis
    base: float = 10000.0
    delta_scale: float = 100.0  # spreads sub-1 normalized deltas over phases
    multi_granularity: bool = True
    init_std: float = 0.02

    def validate(self) -> None:
        if self.d_s % 2 != 0:
            raise ConfigError(f"d_s must be even, got {self.d_s}")


def _frequencies(d_s: int, base: float) -> Tensor:
    k = torch.arange(d_s, dtype=torch.float64)
    return base ** (-2.0 * torch.div(k, 2, rounding_mode="floor") / d_s)


def sinusoidal_features(
    delta: float,
    d_s: int,
    kind: str,
    base: float = 10000.0,
    scale: float = 100.0,
) -> Tensor:
    """Length-d_s sin (or cos) encoding of one scalar difference."""
    if d_s % 2 != 0:
        raise ConfigError(f"d_s must be even, got {d_s}")
    angles = scale * float(delta) * _frequencies(d_s, base)
    if kind == "sin":
        return torch.sin(angles)
    if kind == "cos":
        return torch.cos(angles)
    raise ConfigError(f"kind must be 'sin' or 'cos', got {kind!r}")


def _pairwise_features(xy: Tensor, cfg: SpatialBiasConfig) -> Tensor:
    """(..., L, 2) float64 top-left coords -> (..., L, L, 2*d_s) features."""
    freqs = _frequencies(cfg.d_s, cfg.base).to(xy.device)
    dx = xy[..., :, None, 0] - xy[..., None, :, 0]
    dy = xy[..., :, None, 1] - xy[..., None, :, 1]
    ang_x = cfg.delta_scale * dx[..., None] * freqs
    ang_y = cfg.delta_scale * dy[..., None] * freqs
    return torch.cat([torch.sin(ang_x), torch.cos(ang_y)], dim=-1)


class SpatialBias(nn.Module):
    """Learned per-granularity projections of the pairwise sinusoid features."""

    def __init__(self, num_heads: int, cfg: SpatialBiasConfig | None = None):
        super().__init__()
        self.cfg = cfg or SpatialBiasConfig()
        self.cfg.validate()
        self.num_heads = num_heads
        for name in GRANULARITIES:
            weight = torch.empty(2 * self.cfg.d_s, num_heads)
            weight.normal_(0.0, self.cfg.init_std)
            setattr(self, f"w_{name}", nn.Parameter(weight))

    def weight(self, granularity: str) -> nn.Parameter:
        return getattr(self, f"w_{granularity}")

    def project(self, features: Tensor, granularity: str) -> Tensor:
        """(..., 2*d_s) features -> (..., H) bias values, in feature dtype."""
        w = self.weight(granularity)
        return features @ w.to(features.dtype)


def pair_bias(
    box_i: BoundingBox,
    box_j: BoundingBox,
    weight: Tensor,
    cfg: SpatialBiasConfig,
) -> Tensor:
    """Per-head bias of one ordered box pair under one projection matrix."""
    f_sin = sinusoidal_features(
        box_i.x_tl - box_j.x_tl, cfg.d_s, "sin", cfg.base, cfg.delta_scale
    )
    f_cos = sinusoidal_features(
        box_i.y_tl - box_j.y_tl, cfg.d_s, "cos", cfg.base, cfg.delta_scale
    )
    features = torch.cat([f_sin, f_cos])
    return features @ weight.to(features.dtype)


def _bias_values(
    word_xy: Tensor,
    line_xy: Tensor,
    para_xy: Tensor,
    nonpad: Tensor,
    is_text: Tensor,
    params: SpatialBias,
) -> Tensor:
    """(..., S, 2) coords and (..., S) masks -> (..., S, S, H) float64 bias."""
    cfg = params.cfg
    pair_nonpad = (nonpad[..., :, None] & nonpad[..., None, :]).to(torch.float64)
    pair_text = (is_text[..., :, None] & is_text[..., None, :]).to(torch.float64)
    values = params.project(_pairwise_features(word_xy, cfg), "word") * pair_nonpad[..., None]
    if cfg.multi_granularity:
        for name, xy in (("line", line_xy), ("para", para_xy)):
            term = params.project(_pairwise_features(xy, cfg), name)
            values = values + term * pair_text[..., None]
    return values


def bias_tensor(seq: EntitySequence, params: SpatialBias) -> Tensor:
    """Dense (H, L, L) float64 bias for one entity sequence.

    Word-level term for every non-padding pair, plus line and paragraph
    terms when both sides are scene text (and multi-granularity is on);
    exact zeros on any row/column touching padding.
    """
    device = params.w_word.device
    values = _bias_values(
        torch.from_numpy(seq.word_top_left()).to(device),
        torch.from_numpy(seq.line_top_left()).to(device),
        torch.from_numpy(seq.para_top_left()).to(device),
        torch.from_numpy(~seq.is_padding).to(device),
        torch.from_numpy(seq.is_scene_text).to(device),
        params,
    )
    return values.permute(2, 0, 1)


def bias_frame_blocks(
    word_xy: Tensor,
    line_xy: Tensor,
    para_xy: Tensor,
    nonpad: Tensor,
    is_text: Tensor,
    params: SpatialBias,
    dtype: torch.dtype,
) -> Tensor:
    """Within-frame bias blocks for the frame-local attention fast path.

    Inputs are (B, T, S, 2) float64 coordinates and (B, T, S) masks;
    output is (B, H, T, S, S) in ``dtype``. Equals the same-frame diagonal
    blocks of :func:`bias_tensor` (checked by the test suite).
    """
    values = _bias_values(word_xy, line_xy, para_xy, nonpad, is_text, params)
    return values.permute(0, 4, 1, 2, 3).to(dtype)


def bias_dense_batch(
    word_xy: Tensor,
    line_xy: Tensor,
    para_xy: Tensor,
    nonpad: Tensor,
    is_text: Tensor,
    params: SpatialBias,
    dtype: torch.dtype,
) -> Tensor:
    """Dense (B, H, L, L) bias over full sequences, for global attention."""
    values = _bias_values(word_xy, line_xy, para_xy, nonpad, is_text, params)
    return values.permute(0, 3, 1, 2).to(dtype)


def bias_tensor_to_csv_rows(bias: Tensor) -> list[tuple[int, int, int, float]]:
    """Flatten an (H, L, L) bias tensor into (head, i, j, value) rows."""
    h, l, _ = bias.shape
    arr = bias.detach().cpu().numpy()
    rows = []
    for head in range(h):
        for i in range(l):
            for j in range(l):
                rows.append((head, i, j, float(arr[head, i, j])))
    return rows
