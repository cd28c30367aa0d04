"""Space-time-memory trimap propagation.

Memory frames are encoded from [rgb, trimap, alpha, hidden16] (23 channels),
query frames from rgb alone. Both encoders stop at stride 16. Keys and values
come from four independent 3x3 convolutions; the decoder upsamples the
concatenation of retrieved memory value and query value back to a 3-class
trimap using stride-8 and stride-4 skip features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .layers import ResBlock, check_divisible, freeze_batchnorm

MEMORY_INPUTS = ("trimap", "alpha", "hidden")


@dataclass
class MemoryEntry:
    key: torch.Tensor  # B x Ck x h x w
    value: torch.Tensor  # B x Cv x h x w
    frame_index: int


@dataclass
class MemoryBank:
    reference: MemoryEntry | None = None
    previous: MemoryEntry | None = None
    intermediates: list = field(default_factory=list)

    def __len__(self):
        n = len(self.intermediates)
        n += self.reference is not None
        n += self.previous is not None
        return n

    def entries(self):
        """Distinct memory frames in temporal order; a frame held in two slots is read once."""
        seen, out = set(), []
        slots = [self.reference, *self.intermediates, self.previous]
        for e in slots:
            if e is not None and e.frame_index not in seen:
                seen.add(e.frame_index)
                out.append(e)
        return out

    def frame_indices(self):
        return [e.frame_index for e in self.entries()]


class ToyEncoder(nn.Module):
    """Four-stage residual CNN with strides 2/4/8/16; returns (f16, f8, f4)."""

    def __init__(self, cin, channels=(16, 24, 32, 48)):
        super().__init__()
        c0, c1, c2, c3 = channels
        self.stem = nn.Sequential(nn.Conv2d(cin, c0, 3, 2, 1, bias=False), nn.BatchNorm2d(c0), nn.ReLU(inplace=True))
        self.res2 = ResBlock(c0, c1, stride=2, norm="bn")
        self.res3 = ResBlock(c1, c2, stride=2, norm="bn")
        self.res4 = ResBlock(c2, c3, stride=2, norm="bn")
        self.out_channels = channels

    def forward(self, x):
        f4 = self.res2(self.stem(x))
        f8 = self.res3(f4)
        f16 = self.res4(f8)
        return f16, f8, f4


class ResNet50Encoder(nn.Module):
    """ResNet50 up to res4 (stride 16); the first convolution accepts ``cin`` channels."""

    def __init__(self, cin):
        super().__init__()
        net = torchvision.models.resnet50(weights=None)
        net.conv1 = nn.Conv2d(cin, 64, 7, 2, 3, bias=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.res2, self.res3, self.res4 = net.layer1, net.layer2, net.layer3
        self.out_channels = (64, 256, 512, 1024)

    def forward(self, x):
        f4 = self.res2(self.stem(x))
        f8 = self.res3(f4)
        f16 = self.res4(f8)
        return f16, f8, f4


def make_encoder(cfg, cin):
    if cfg.backbone == "resnet50":
        return ResNet50Encoder(cin)
    return ToyEncoder(cin, cfg.prop_channels)


class UpBlock(nn.Module):
    def __init__(self, skip_ch, ch):
        super().__init__()
        self.skip = nn.Conv2d(skip_ch, ch, 3, padding=1)
        self.block = ResBlock(ch, norm="none")

    def forward(self, x, skip):
        s = self.skip(skip)
        x = s + F.interpolate(x, size=s.shape[-2:], mode="bilinear", align_corners=False)
        return self.block(x)


class TrimapDecoder(nn.Module):
    def __init__(self, cin, ch, skip8_ch, skip4_ch):
        super().__init__()
        self.conv_in = nn.Conv2d(cin, ch, 3, padding=1)
        self.block = ResBlock(ch, norm="none")
        self.up8 = UpBlock(skip8_ch, ch)
        self.up4 = UpBlock(skip4_ch, ch)
        self.head = nn.Conv2d(ch, 3, 3, padding=1)

    def forward(self, x, f8, f4):
        x = self.block(self.conv_in(x))
        x = self.up4(self.up8(x, f8), f4)
        return self.head(F.relu(x))


def attention_read(mem_key, mem_value, q_key):
    """Dot-product softmax attention over all memory locations.

    mem_key: B x Ck x N, mem_value: B x Cv x N, q_key: B x Ck x h x w.
    Returns B x Cv x h x w.
    """
    b, ck, h, w = q_key.shape
    q = q_key.reshape(b, ck, h * w)
    logits = torch.einsum("bcn,bcq->bnq", mem_key, q)  # B x N x HW
    weights = torch.softmax(logits, dim=1)
    out = torch.einsum("bvn,bnq->bvq", mem_value, weights)
    return out.reshape(b, -1, h, w)


def memory_read(bank, q_key, q_value):
    """Retrieve memory values for each query location and concatenate with the query value."""
    entries = bank.entries() if isinstance(bank, MemoryBank) else list(bank)
    if not entries:
        raise ValueError("memory bank is empty")
    ck = {e.key.shape[1] for e in entries} | {q_key.shape[1]}
    if len(ck) != 1:
        raise ValueError(f"key dimensions disagree: {sorted(ck)}")
    b = q_key.shape[0]
    mk = torch.cat([e.key.reshape(b, e.key.shape[1], -1) for e in entries], dim=2)
    mv = torch.cat([e.value.reshape(b, e.value.shape[1], -1) for e in entries], dim=2)
    return torch.cat([attention_read(mk, mv, q_key), q_value], dim=1)


class TrimapPropagation(nn.Module):
    def __init__(self, cfg, hidden_channels=16):
        super().__init__()
        self.cfg = cfg
        self.hidden_channels = hidden_channels
        self.memory_encoder = make_encoder(cfg, 3 + 3 + 1 + hidden_channels)
        self.query_encoder = make_encoder(cfg, 3)
        c16 = self.memory_encoder.out_channels[3]
        self.memory_key = nn.Conv2d(c16, cfg.key_dim, 3, padding=1)
        self.memory_value = nn.Conv2d(c16, cfg.value_dim, 3, padding=1)
        self.query_key = nn.Conv2d(c16, cfg.key_dim, 3, padding=1)
        self.query_value = nn.Conv2d(c16, cfg.value_dim, 3, padding=1)
        _, c4, c8, _ = self.query_encoder.out_channels
        self.decoder = TrimapDecoder(2 * cfg.value_dim, cfg.decoder_channels, c8, c4)
        self.register_buffer("input_mask", torch.ones(len(MEMORY_INPUTS)))
        freeze_batchnorm(self)

    def train(self, mode=True):
        super().train(mode)
        freeze_batchnorm(self)
        return self

    # -- which memory inputs are active --------------------------------------
    @property
    def memory_inputs(self):
        return {n for n, m in zip(MEMORY_INPUTS, self.input_mask.tolist()) if m}

    def set_memory_inputs(self, names):
        names = set(names)
        unknown = names - set(MEMORY_INPUTS)
        if unknown:
            raise ValueError(f"unknown memory inputs {sorted(unknown)}")
        self.input_mask.copy_(torch.tensor([float(n in names) for n in MEMORY_INPUTS]))

    # -- ops ------------------------------------------------------------------
    def encode_memory(self, frame, trimap, alpha=None, hidden=None, frame_index=0):
        check_divisible(frame)
        b, _, h, w = frame.shape
        if alpha is None:
            alpha = frame.new_zeros(b, 1, h, w)
        if hidden is None:
            hidden = frame.new_zeros(b, self.hidden_channels, h, w)
        elif hidden.shape[-2:] != (h, w):
            hidden = F.interpolate(hidden, size=(h, w), mode="bilinear", align_corners=False)
        m = self.input_mask
        x = torch.cat([frame, trimap * m[0], alpha * m[1], hidden * m[2]], dim=1)
        f16, _, _ = self.memory_encoder(x)
        return MemoryEntry(self.memory_key(f16), self.memory_value(f16), int(frame_index))

    def encode_query(self, frame):
        check_divisible(frame)
        f16, f8, f4 = self.query_encoder(frame)
        return self.query_key(f16), self.query_value(f16), (f8, f4)

    def decode_trimap(self, read_out, skips, size=None):
        if skips is None or len(skips) != 2 or any(s is None for s in skips):
            raise ValueError("decode_trimap needs stride-8 and stride-4 skip features")
        f8, f4 = skips
        logits = self.decoder(read_out, f8, f4)
        size = size or (f4.shape[-2] * 4, f4.shape[-1] * 4)
        logits = F.interpolate(logits, size=size, mode="bilinear", align_corners=False)
        return torch.softmax(logits, dim=1)

    def propagate(self, bank, frame):
        q_key, q_value, skips = self.encode_query(frame)
        read = memory_read(bank, q_key, q_value)
        return self.decode_trimap(read, skips, size=frame.shape[-2:])

    forward = propagate
