"""Residual bottleneck convolution over the frame-by-slot entity grid.

The entity sequence is reshaped to a T x (M+N) grid, down-projected,
mixed by a small 2-D convolution spanning neighbouring frames and slots,
up-projected and added back. The up-projection starts at zero so a fresh
adapter is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ConfigError, NumericError, ValidationError


@dataclass
class TemporalAdapterConfig:
    r: int = 4  # channel reduction ratio
    k_t: int = 3  # kernel extent over frames
    k_e: int = 3  # kernel extent over entity slots
    depthwise: bool = True
    init_std: float = 0.02

    def validate(self, d: int) -> None:
        if self.k_t % 2 == 0 or self.k_e % 2 == 0:
            raise ConfigError(f"kernel sizes must be odd, got ({self.k_t}, {self.k_e})")
        if d % self.r != 0:
            raise ConfigError(f"model width {d} not divisible by reduction ratio {self.r}")


def reshape_to_grid(v: Tensor, T: int, M: int, N: int) -> Tensor:
    """(T*(M+N), d) sequence -> (T, M+N, d) grid, row-major."""
    s = M + N
    if v.shape[0] != T * s:
        raise ValidationError(f"sequence has {v.shape[0]} rows, expected T*(M+N) = {T * s}")
    return v.reshape(T, s, v.shape[-1])


def grid_to_sequence(grid: Tensor) -> Tensor:
    """Inverse of :func:`reshape_to_grid`."""
    t, s, d = grid.shape
    return grid.reshape(t * s, d)


class TemporalAdapter(nn.Module):
    """v' = v + Conv2D(v @ W_down) @ W_up with 'same' zero padding."""

    def __init__(self, d: int, cfg: TemporalAdapterConfig | None = None):
        super().__init__()
        self.cfg = cfg or TemporalAdapterConfig()
        self.cfg.validate(d)
        channels = d // self.cfg.r
        self.w_down = nn.Parameter(torch.empty(d, channels).normal_(0.0, self.cfg.init_std))
        self.w_up = nn.Parameter(torch.zeros(channels, d))
        self.conv = nn.Conv2d(
            channels,
            channels,
            kernel_size=(self.cfg.k_t, self.cfg.k_e),
            padding=(self.cfg.k_t // 2, self.cfg.k_e // 2),
            groups=channels if self.cfg.depthwise else 1,
            bias=True,
        )

    def forward(self, grid: Tensor) -> Tensor:
        """(..., T, S, d) -> same shape; batch dimension optional."""
        squeeze = grid.dim() == 3
        if squeeze:
            grid = grid.unsqueeze(0)
        h = grid @ self.w_down  # (B, T, S, c)
        h = self.conv(h.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        out = grid + h @ self.w_up
        return out.squeeze(0) if squeeze else out


def temporal_conv_forward(grid: Tensor, adapter: TemporalAdapter) -> Tensor:
    """Adapter forward with a finiteness check on the input grid."""
    if not torch.isfinite(grid).all():
        bad = (~torch.isfinite(grid)).nonzero()[0].tolist()
        raise NumericError(f"non-finite input at grid position {tuple(bad)}")
    return adapter(grid)


def temporal_conv_backward(
    grid: Tensor, upstream: Tensor, adapter: TemporalAdapter
) -> dict[str, Tensor]:
    """Gradients of sum(forward(grid) * upstream) for the input and parameters."""
    grid = grid.detach().requires_grad_(True)
    out = adapter(grid)
    params = {
        "input": grid,
        "w_down": adapter.w_down,
        "w_up": adapter.w_up,
        "kernel": adapter.conv.weight,
        "bias": adapter.conv.bias,
    }
    grads = torch.autograd.grad(
        (out * upstream).sum(), list(params.values()), allow_unused=False
    )
    return dict(zip(params.keys(), grads))
