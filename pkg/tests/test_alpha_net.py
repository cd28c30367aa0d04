import numpy as np
import pytest
import torch
from scipy.signal import convolve2d

from otvm.alpha_net import AlphaNet, encode_trimap_channels, gaussian_blur, gaussian_kernel1d
from otvm.layers import WSConv2d
from otvm.losses import alpha_losses


def onehot(cls, b=1, h=16, w=16):
    t = torch.zeros(b, 3, h, w, dtype=torch.float64)
    t[:, cls] = 1.0
    return t


def test_encoding_of_constant_trimaps():
    enc = encode_trimap_channels(onehot(2))
    assert enc.shape[1] == 8
    torch.testing.assert_close(enc[:, [0, 2, 3, 4]], torch.ones(1, 4, 16, 16, dtype=torch.float64))
    assert torch.equal(enc[:, [1, 5, 6, 7]], torch.zeros(1, 4, 16, 16, dtype=torch.float64))
    assert torch.equal(encode_trimap_channels(onehot(1)), torch.zeros(1, 8, 16, 16, dtype=torch.float64))


def test_single_pixel_blur_matches_dense_convolution():
    tri = onehot(0, h=9, w=9)
    tri[0, :, 4, 4] = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    enc = encode_trimap_channels(tri)
    k1 = gaussian_kernel1d(1.0).numpy()
    k2 = np.outer(k1, k1)
    impulse = np.zeros((9, 9))
    impulse[4, 4] = 1.0
    oracle = convolve2d(impulse, k2, mode="same")
    np.testing.assert_allclose(enc[0, 2].numpy(), oracle, atol=1e-12)
    assert abs(enc[0, 2].sum().item() - 1.0) < 1e-12


@pytest.mark.parametrize("sigma", [1.0, 2.0, 4.0])
def test_blur_preserves_mass(sigma):
    g = torch.Generator().manual_seed(0)
    x = torch.zeros(1, 1, 48, 48, dtype=torch.float64)
    x[..., 14:34, 14:34] = torch.rand(1, 1, 20, 20, generator=g, dtype=torch.float64)
    assert abs(gaussian_blur(x, sigma).sum().item() - x.sum().item()) < 1e-4


def test_encoding_channels_in_unit_range():
    tri = torch.softmax(torch.randn(2, 3, 32, 32, dtype=torch.float64), 1)
    enc = encode_trimap_channels(tri)
    assert enc.min() >= 0 and enc.max() <= 1 + 1e-12


@pytest.fixture
def net(tiny_cfg):
    return AlphaNet(tiny_cfg).eval()


def test_output_shapes_and_ranges(net):
    frame = torch.rand(2, 3, 32, 48)
    tri = torch.softmax(torch.randn(2, 3, 32, 48) * 3, 1)
    with torch.no_grad():
        out = net(frame, tri)
    assert out.alpha.shape == (2, 1, 32, 48)
    assert out.fg.shape == out.bg.shape == (2, 3, 32, 48)
    assert out.hidden.shape == (2, 64, 32, 48)
    for x in (out.alpha, out.fg, out.bg):
        assert x.min() >= 0 and x.max() <= 1
    assert torch.isfinite(out.hidden).all()


def test_uses_weight_standardized_group_norm(net):
    assert any(isinstance(m, WSConv2d) for m in net.modules())
    assert any(isinstance(m, torch.nn.GroupNorm) for m in net.modules())
    assert net.head.out_channels == 1 + 3 + 3 + 64


def test_rejects_bad_inputs(net):
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 30, 32), torch.softmax(torch.randn(1, 3, 30, 32), 1))
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32) + 1)


def test_pure(net):
    frame, tri = torch.rand(1, 3, 32, 32), torch.softmax(torch.randn(1, 3, 32, 32), 1)
    with torch.no_grad():
        a, b = net(frame, tri), net(frame, tri)
    assert torch.equal(a.alpha, b.alpha) and torch.equal(a.hidden, b.hidden)


def test_soft_trimap_continuity(net):
    labels = torch.randint(0, 3, (1, 32, 32))
    hard = torch.nn.functional.one_hot(labels, 3).permute(0, 3, 1, 2).float()
    eps = 1e-6
    soft = hard * (1 - 3 * eps) + eps
    frame = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        a, b = net(frame, hard), net(frame, soft)
    for x, y in zip((a.alpha, a.fg, a.bg, a.hidden), (b.alpha, b.fg, b.bg, b.hidden)):
        assert float((x - y).abs().max()) < 1e-3


def test_head_gradient_finite_difference(net):
    net = net.double()
    g = torch.Generator().manual_seed(3)
    frame = torch.rand(1, 1, 3, 16, 16, generator=g, dtype=torch.float64)
    tri = torch.softmax(3 * torch.randn(1, 3, 16, 16, generator=g, dtype=torch.float64), 1)
    gt = torch.rand(1, 1, 1, 16, 16, generator=g, dtype=torch.float64)
    fg = torch.rand(1, 1, 3, 16, 16, generator=g, dtype=torch.float64)

    def loss():
        a = net(frame[:, 0], tri).alpha.unsqueeze(1)
        return alpha_losses(a, gt, frame, fg, fg)["l1"]

    net.zero_grad()
    loss().backward()
    w = net.head.weight
    analytic = w.grad[0].clone()  # alpha row
    numeric = torch.zeros_like(analytic)
    h = 1e-4
    with torch.no_grad():
        for i in range(analytic.numel()):
            idx = np.unravel_index(i, analytic.shape)
            w[(0, *idx)] += h
            lp = loss()
            w[(0, *idx)] -= 2 * h
            lm = loss()
            w[(0, *idx)] += h
            numeric[idx] = (lp - lm) / (2 * h)
    rel = float((analytic - numeric).norm() / numeric.norm())
    assert rel < 1e-3
