"""Trimap-conditioned alpha prediction with foreground/background colour heads.

Encoder-decoder in the FBA style: the encoder sees rgb plus an 8-channel
trimap encoding, keeps stride 8 at its deepest two stages (dilation 2 and 4),
and a pyramid pooling module widens the receptive field before the decoder
climbs back to full resolution. The decoder emits
``1 + 3 + 3 + hidden`` channels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .layers import ConvNormAct, ResBlock, check_divisible, replace_convs_with_ws


@dataclass
class AlphaOutputs:
    alpha: torch.Tensor  # B x 1 x H x W
    fg: torch.Tensor  # B x 3 x H x W
    bg: torch.Tensor  # B x 3 x H x W
    hidden: torch.Tensor  # B x 64 x H x W


def gaussian_kernel1d(sigma, radius=None, dtype=torch.float64):
    radius = int(math.ceil(3 * sigma)) if radius is None else radius
    x = torch.arange(-radius, radius + 1, dtype=dtype)
    k = torch.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(x, sigma):
    """Separable Gaussian blur of a B x C x H x W tensor with reflective borders."""
    h, w = x.shape[-2:]
    radius = min(int(math.ceil(3 * sigma)), h - 1, w - 1)
    if radius < 1:
        return x
    k = gaussian_kernel1d(sigma, radius, dtype=x.dtype).to(x.device)
    c = x.shape[1]
    x = F.pad(x, (radius, radius, radius, radius), mode="reflect")
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = F.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return x


def encode_trimap_channels(trimap, sigmas=(1.0, 2.0, 4.0)):
    """B x 3 x H x W trimap probabilities (bg, unk, fg) -> B x 8 encoding.

    Channels: fg prob, bg prob, blurred fg at each sigma, blurred bg at each sigma.
    """
    if trimap.dim() != 4 or trimap.shape[1] != 3:
        raise ValueError(f"expected a B x 3 x H x W trimap, got {tuple(trimap.shape)}")
    fg, bg = trimap[:, 2:3], trimap[:, 0:1]
    fg_blur = [gaussian_blur(fg, s) for s in sigmas]
    bg_blur = [gaussian_blur(bg, s) for s in sigmas]
    return torch.cat([fg, bg, *fg_blur, *bg_blur], dim=1)


def validate_trimap(trimap, tol=1e-4):
    if trimap.dim() != 4 or trimap.shape[1] != 3:
        raise ValueError(f"expected a B x 3 x H x W trimap, got {tuple(trimap.shape)}")
    if not torch.isfinite(trimap).all() or (trimap < -tol).any():
        raise ValueError("trimap probabilities must be finite and nonnegative")
    if ((trimap.sum(dim=1) - 1).abs() > tol).any():
        raise ValueError("trimap probabilities must sum to 1 per pixel")


class ToyAlphaEncoder(nn.Module):
    def __init__(self, cin, channels, norm):
        super().__init__()
        c1, c2, c3, c4, c5 = channels
        self.conv1 = ConvNormAct(cin, c1, 3, stride=2, norm=norm)  # stride 2
        self.layer1 = ResBlock(c1, c2, stride=2, norm=norm)  # stride 4
        self.layer2 = ResBlock(c2, c3, stride=2, norm=norm)  # stride 8
        self.layer3 = ResBlock(c3, c4, dilation=2, norm=norm)  # stride 8, dilated
        self.layer4 = ResBlock(c4, c5, dilation=4, norm=norm)  # stride 8, dilated
        self.skip_channels = (c1, c2)
        self.out_channels = c5

    def forward(self, x):
        s2 = self.conv1(x)
        s4 = self.layer1(s2)
        x = self.layer4(self.layer3(self.layer2(s4)))
        return x, s4, s2


class ResNet50AlphaEncoder(nn.Module):
    """ResNet50 with GroupNorm + weight standardization; res4/res5 dilated (2, 4)."""

    def __init__(self, cin):
        super().__init__()
        net = torchvision.models.resnet50(
            weights=None,
            replace_stride_with_dilation=[False, True, True],
            norm_layer=lambda c: nn.GroupNorm(32, c),
        )
        net.conv1 = nn.Conv2d(cin, 64, 7, 2, 3, bias=False)
        replace_convs_with_ws(net)
        self.conv1 = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layers = nn.Sequential(net.layer1, net.layer2, net.layer3, net.layer4)
        self.skip_channels = (64, 256)
        self.out_channels = 2048

    def forward(self, x):
        s2 = self.conv1(x)
        s4 = self.layers[0](self.pool(s2))
        x = self.layers[3](self.layers[2](self.layers[1](s4)))
        return x, s4, s2


class PPM(nn.Module):
    def __init__(self, cin, ch, bins, norm):
        super().__init__()
        self.stages = nn.ModuleList(
            nn.Sequential(nn.AdaptiveAvgPool2d(b), ConvNormAct(cin, ch, 1, norm=norm, act="lrelu")) for b in bins
        )
        self.out_channels = cin + ch * len(bins)

    def forward(self, x):
        size = x.shape[-2:]
        pooled = [F.interpolate(s(x), size=size, mode="bilinear", align_corners=False) for s in self.stages]
        return torch.cat([x, *pooled], dim=1)


class AlphaNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        norm = cfg.norm
        cin = 3 + 8
        if cfg.backbone == "resnet50":
            self.encoder = ResNet50AlphaEncoder(cin)
        else:
            self.encoder = ToyAlphaEncoder(cin, cfg.alpha_channels, norm)
        ch = cfg.alpha_decoder_channels
        s2_ch, s4_ch = self.encoder.skip_channels
        self.ppm = PPM(self.encoder.out_channels, cfg.ppm_channels, cfg.ppm_bins, norm)
        self.conv_ppm = ConvNormAct(self.ppm.out_channels, ch, 3, norm=norm, act="lrelu")
        self.conv_s4 = ConvNormAct(ch + s4_ch, ch, 3, norm=norm, act="lrelu")
        self.conv_s2 = ConvNormAct(ch + s2_ch, ch, 3, norm=norm, act="lrelu")
        self.conv_s1 = nn.Sequential(
            nn.Conv2d(ch + cin, ch // 2, 3, padding=1), nn.LeakyReLU(0.01, inplace=True)
        )
        self.head = nn.Conv2d(ch // 2, 1 + 3 + 3 + cfg.alpha_hidden, 1)
        with torch.no_grad():
            # start alpha mid-range so the clamp does not swallow early gradients
            self.head.bias[0] = 0.5

    def forward(self, frame, trimap):
        check_divisible(frame)
        validate_trimap(trimap)
        enc = encode_trimap_channels(trimap, self.cfg.blur_sigmas)
        x_in = torch.cat([frame, enc], dim=1)
        x, s4, s2 = self.encoder(x_in)
        x = self.conv_ppm(self.ppm(x))
        x = F.interpolate(x, size=s4.shape[-2:], mode="bilinear", align_corners=False)
        x = self.conv_s4(torch.cat([x, s4], dim=1))
        x = F.interpolate(x, size=s2.shape[-2:], mode="bilinear", align_corners=False)
        x = self.conv_s2(torch.cat([x, s2], dim=1))
        x = F.interpolate(x, size=frame.shape[-2:], mode="bilinear", align_corners=False)
        out = self.head(self.conv_s1(torch.cat([x, x_in], dim=1)))
        alpha, fg, bg, hidden = out.split([1, 3, 3, out.shape[1] - 7], dim=1)
        return AlphaOutputs(alpha=alpha.clamp(0.0, 1.0), fg=torch.sigmoid(fg), bg=torch.sigmoid(bg), hidden=hidden)

    predict_alpha = forward
