import torch
import torch.nn as nn
import torch.nn.functional as F


class WSConv2d(nn.Conv2d):
    """Conv2d with weight standardization (zero mean, unit variance per output filter)."""

    def forward(self, x):
        w = self.weight
        mean = w.mean(dim=(1, 2, 3), keepdim=True)
        std = w.std(dim=(1, 2, 3), keepdim=True, unbiased=False)
        w = (w - mean) / (std + 1e-5)
        return F.conv2d(x, w, self.bias, self.stride, self.padding, self.dilation, self.groups)


def group_count(channels):
    for g in (32, 16, 8, 4, 2):
        if channels % g == 0 and channels // g >= 2:
            return g
    return 1


def conv(cin, cout, k=3, stride=1, dilation=1, norm="gn_ws", bias=None):
    pad = dilation * (k - 1) // 2
    cls = WSConv2d if norm == "gn_ws" else nn.Conv2d
    if bias is None:
        bias = norm == "none"
    return cls(cin, cout, k, stride=stride, padding=pad, dilation=dilation, bias=bias)


def norm_layer(channels, norm="gn_ws"):
    if norm == "gn_ws":
        return nn.GroupNorm(group_count(channels), channels)
    if norm == "bn":
        return nn.BatchNorm2d(channels)
    return nn.Identity()


class ConvNormAct(nn.Sequential):
    def __init__(self, cin, cout, k=3, stride=1, dilation=1, norm="gn_ws", act="relu"):
        layers = [conv(cin, cout, k, stride, dilation, norm), norm_layer(cout, norm)]
        if act == "relu":
            layers.append(nn.ReLU(inplace=True))
        elif act == "lrelu":
            layers.append(nn.LeakyReLU(0.01, inplace=True))
        super().__init__(*layers)


class ResBlock(nn.Module):
    """Pre-activation residual block; a 1x1 projection is used when shape changes."""

    def __init__(self, cin, cout=None, stride=1, dilation=1, norm="gn_ws"):
        super().__init__()
        cout = cout or cin
        self.norm1 = norm_layer(cin, norm)
        self.conv1 = conv(cin, cout, 3, stride, dilation, norm)
        self.norm2 = norm_layer(cout, norm)
        self.conv2 = conv(cout, cout, 3, 1, dilation, norm)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = conv(cin, cout, 1, stride, 1, norm)

    def forward(self, x):
        r = self.conv1(F.relu(self.norm1(x)))
        r = self.conv2(F.relu(self.norm2(r)))
        skip = x if self.proj is None else self.proj(x)
        return skip + r


def freeze_batchnorm(module):
    """Put every BatchNorm layer in eval mode and stop its affine parameters from training."""
    for m in module.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            m.eval()
            for p in m.parameters():
                p.requires_grad_(False)


def upsample_to(x, ref):
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


def replace_convs_with_ws(module):
    for name, child in module.named_children():
        if type(child) is nn.Conv2d:
            ws = WSConv2d(
                child.in_channels, child.out_channels, child.kernel_size, child.stride,
                child.padding, child.dilation, child.groups, child.bias is not None,
            )
            setattr(module, name, ws)
        else:
            replace_convs_with_ws(child)
    return module


def check_divisible(x, factor=16):
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} must be divisible by {factor}")


@torch.no_grad()
def zero_(module):
    for p in module.parameters():
        p.zero_()
    return module
