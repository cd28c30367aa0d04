"""Alpha-trimap refinement: two full-resolution residual blocks over every per-frame signal."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import ResBlock, conv, norm_layer


@dataclass
class FrameOutputs:
    alpha: torch.Tensor  # B x 1 x H x W
    trimap: torch.Tensor  # B x 3 x H x W
    fg: torch.Tensor
    bg: torch.Tensor
    hidden: torch.Tensor  # B x 16 x H x W


class Refiner(nn.Module):
    """Corrects trimap and alpha and emits a hidden feature for the memory encoder.

    Alpha is refined as ``clamp(alpha + delta)``. The trimap gets additive
    log-space corrections ``z`` (soft-bounded to +-15) and is re-normalized:
    ``p * exp(z) / sum(p * exp(z))``, written with ``expm1`` so that ``z = 0``
    returns ``p`` bit for bit. ``delta`` and ``z`` come from zero-initialized
    heads, so a fresh module returns alpha and trimap unchanged.
    """

    def __init__(self, cfg):
        super().__init__()
        ch = cfg.refine_channels
        cin = 3 + 3 + 1 + cfg.alpha_hidden
        self.stem = nn.Sequential(conv(cin, ch, 1, norm=cfg.norm), norm_layer(ch, cfg.norm), nn.ReLU(inplace=True))
        self.blocks = nn.Sequential(ResBlock(ch, norm=cfg.norm), ResBlock(ch, norm=cfg.norm))
        self.act = nn.ReLU(inplace=False)
        # output channels: alpha delta, trimap corrections (3), fg (3), bg (3), hidden
        self.split = [1, 3, 3, 3, cfg.refine_hidden]
        self.heads = nn.Conv2d(ch, sum(self.split), 3, padding=1)
        self.reset_corrections()

    @torch.no_grad()
    def reset_corrections(self):
        """Zero the alpha-delta and trimap-correction channels."""
        self.heads.weight[:4].zero_()
        self.heads.bias[:4].zero_()

    def forward(self, frame, trimap, alpha, hidden64):
        if hidden64 is None:
            raise ValueError("refine requires the alpha decoder's hidden features")
        x = torch.cat([frame, trimap, alpha, hidden64], dim=1)
        x = self.act(self.blocks(self.stem(x)))
        delta, z, fg, bg, hidden = self.heads(x).split(self.split, dim=1)
        alpha_out = (alpha + delta).clamp(0.0, 1.0)
        e = torch.expm1(15.0 * torch.tanh(z / 15.0))
        trimap_out = trimap * (1.0 + e) / (1.0 + (trimap * e).sum(1, keepdim=True))
        return FrameOutputs(
            alpha=alpha_out, trimap=trimap_out, fg=torch.sigmoid(fg), bg=torch.sigmoid(bg), hidden=hidden
        )

    refine = forward
