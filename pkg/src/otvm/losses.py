"""Training objectives for trimaps, alpha mattes and foreground/background colours.

Sequence tensors are shaped ``B x T x C x H x W``. Every spatial term is a
per-pixel mean within a frame and is summed over frames, so magnitudes do not
depend on resolution. Foreground/background terms are restricted to the
ground-truth unknown region, and foreground terms further to ``alpha > 0``;
masks are applied with ``torch.where`` before any spatial operator, so values
outside the mask never reach the loss.
"""
from __future__ import annotations

import json
import math
import warnings

import torch
import torch.nn.functional as F

CE_EPS = 1e-8
FB_WEIGHT = 0.25
ALPHA_TERMS = ("l1", "comp", "lap", "grad", "tc")
FB_TERMS = ("l1", "comp", "lap", "excl", "tc")


# -- trimap ------------------------------------------------------------------


def check_onehot(gt, dim=1):
    binary = (gt == 0) | (gt == 1)
    if not bool(binary.all()) or not bool((gt.sum(dim=dim) == 1).all()):
        raise ValueError("ground-truth trimap must be one-hot")


def trimap_ce(pred, gt, eps=CE_EPS):
    """Mean over pixels of -sum_c gt_c log(pred_c); class dimension is 1."""
    check_onehot(gt)
    logp = torch.log(pred.clamp(min=eps, max=1.0))
    return -(gt * logp).sum(dim=1).mean()


def trimap_total(pred_seq, refined_seq, gt_seq):
    """Propagated-trimap CE for frames 1.. plus refined-trimap CE for every frame.

    ``pred_seq[0]`` is ignored: frame 0 receives the user trimap, so only its
    refined output is supervised (against that same trimap).
    """
    zero = gt_seq[0].new_zeros(())
    tri = sum((trimap_ce(p, g) for p, g in zip(pred_seq[1:], gt_seq[1:])), zero)
    tri_ref = sum((trimap_ce(p, g) for p, g in zip(refined_seq, gt_seq)), zero)
    return tri, tri_ref


# -- Laplacian pyramid -------------------------------------------------------

_BINOMIAL = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0])


def _gauss5(x, pad=True):
    k = (_BINOMIAL / 16.0).to(dtype=x.dtype, device=x.device)
    c = x.shape[1]
    if pad:
        x = F.pad(x, (2, 2, 2, 2), mode="replicate")
    x = F.conv2d(x, k.view(1, 1, 1, 5).expand(c, 1, 1, 5), groups=c)
    return F.conv2d(x, k.view(1, 1, 5, 1).expand(c, 1, 5, 1), groups=c)


def pyr_down(x):
    return _gauss5(x)[..., ::2, ::2]


def pyr_up(x, size):
    """Zero-insert upsampling to ``size``.

    The low-pass image is edge-padded before zero insertion so every filter tap
    lands on a real sample and constants are preserved up to the border.
    """
    h, w = x.shape[-2:]
    xp = F.pad(x, (1, 1, 1, 1), mode="replicate")
    up = x.new_zeros(x.shape[:2] + (2 * h + 4, 2 * w + 4))
    up[..., ::2, ::2] = xp
    return 4.0 * _gauss5(up, pad=False)[..., : size[0], : size[1]]


def laplacian_pyramid(x, levels=5, return_lowpass=False):
    """Band-pass decomposition of an N x C x H x W tensor (finest band first)."""
    min_side = min(x.shape[-2:])
    if min_side < 2**levels:
        reduced = max(int(math.floor(math.log2(min_side))), 0)
        warnings.warn(f"{min_side}px input is too small for {levels} pyramid levels; using {reduced}")
        levels = reduced
    bands, cur = [], x
    for _ in range(levels):
        low = pyr_down(cur)
        bands.append(cur - pyr_up(low, cur.shape[-2:]))
        cur = low
    return (bands, cur) if return_lowpass else bands


def reconstruct_pyramid(bands, lowpass):
    cur = lowpass
    for band in reversed(bands):
        cur = band + pyr_up(cur, band.shape[-2:])
    return cur


def _flat(x):
    return x.reshape((-1,) + x.shape[2:])


def _unflat(x, b):
    return x.reshape((b, -1) + x.shape[1:])


def _frame_mean(x):
    """B x T x ... -> sum over T of the per-frame mean."""
    return x.mean(dim=tuple(d for d in range(x.dim()) if d != 1)).sum()


def _frame_sum(x):
    return x.sum(dim=tuple(d for d in range(x.dim()) if d != 1))


def _dx(x):
    return x[..., :, 1:] - x[..., :, :-1]


def _dy(x):
    return x[..., 1:, :] - x[..., :-1, :]


def _dt(x):
    return x[:, 1:] - x[:, :-1]


# -- alpha -------------------------------------------------------------------


def alpha_losses(pred, gt, image, fg_gt, bg_gt, levels=5):
    """L1, compositional, Laplacian, gradient and temporal-coherence losses on every pixel."""
    b = pred.shape[0]
    out = {}
    out["l1"] = _frame_mean((gt - pred).abs())
    out["comp"] = _frame_mean((image - pred * fg_gt - (1 - pred) * bg_gt).abs())
    bands_gt = laplacian_pyramid(_flat(gt), levels)
    bands_p = laplacian_pyramid(_flat(pred), levels)
    out["lap"] = sum(
        2**s * _frame_mean(_unflat((g - p).abs(), b)) for s, (g, p) in enumerate(zip(bands_gt, bands_p))
    )
    out["grad"] = _frame_mean((_dx(gt) - _dx(pred)).abs()) + _frame_mean((_dy(gt) - _dy(pred)).abs())
    if pred.shape[1] < 2:
        out["tc"] = pred.new_zeros(())
    else:
        out["tc"] = _frame_mean((_dt(gt) - _dt(pred)).abs())
    return out


# -- foreground / background -------------------------------------------------


def fb_losses(pF, pB, F_gt, B_gt, image, alpha_gt, unknown, levels=5):
    """Colour losses on the unknown region; foreground terms also need ``alpha_gt > 0``."""
    b = pF.shape[0]
    m = unknown.bool()
    mf = m & (alpha_gt > 0)
    zero = pF.new_zeros(())
    channels = pF.shape[2]
    norm = (_frame_sum(m.to(pF.dtype)) * channels).clamp(min=1.0)  # per frame

    def masked(x, mask):
        return torch.where(mask, x, zero)

    def per_frame(x, denom=norm):
        return (_frame_sum(x) / denom).sum()

    out = {}
    out["l1"] = per_frame(masked((F_gt - pF).abs(), mf)) + per_frame(masked((B_gt - pB).abs(), m))
    recon = image - alpha_gt * pF - (1 - alpha_gt) * pB
    out["comp"] = per_frame(masked(recon.abs(), m))

    lap = zero
    pairs = ((masked(F_gt, mf), masked(pF, mf)), (masked(B_gt, m), masked(pB, m)))
    for gt_x, p_x in pairs:
        bands_gt = laplacian_pyramid(_flat(gt_x), levels)
        bands_p = laplacian_pyramid(_flat(p_x), levels)
        for s, (g, p) in enumerate(zip(bands_gt, bands_p)):
            lap = lap + 2**s * per_frame(_unflat((g - p).abs(), b))
    out["lap"] = lap

    excl = zero
    for d in (_dx, _dy):
        pair_m = _pair_mask(m, d)
        pair_mf = _pair_mask(mf, d)
        gF = masked(d(pF).abs(), pair_mf)
        gB = masked(d(pB).abs(), pair_m)
        excl = excl + per_frame(gF * gB)
    out["excl"] = excl

    if pF.shape[1] < 2:
        out["tc"] = zero
    else:
        mt = m[:, 1:] & m[:, :-1]
        mft = mf[:, 1:] & mf[:, :-1]
        tnorm = (_frame_sum(mt.to(pF.dtype)) * channels).clamp(min=1.0)
        tc_f = masked((_dt(F_gt) - _dt(pF)).abs(), mft)
        tc_b = masked((_dt(B_gt) - _dt(pB)).abs(), mt)
        out["tc"] = per_frame(tc_f, tnorm) + per_frame(tc_b, tnorm)
    return out


def _pair_mask(mask, d):
    """True where both pixels of a finite difference lie inside ``mask``."""
    if d is _dx:
        return mask[..., :, 1:] & mask[..., :, :-1]
    return mask[..., 1:, :] & mask[..., :-1, :]


# -- totals ------------------------------------------------------------------


def combine_totals(tri_total, alpha_total, fb_total):
    return tri_total + alpha_total + FB_WEIGHT * fb_total


def unknown_mask(trimap_gt):
    """B x T x 3 x H x W one-hot trimaps -> B x T x 1 x H x W boolean unknown mask."""
    return trimap_gt[:, :, 1:2] > 0.5


def total_loss(
    *,
    trimap_pred,
    trimap_refined,
    trimap_gt,
    alpha_pred,
    alpha_refined,
    alpha_gt,
    fg_pred,
    bg_pred,
    fg_refined,
    bg_refined,
    fg_gt,
    bg_gt,
    image,
):
    """Assemble every loss term into a flat dict of scalars ending in ``total``.

    ``trimap_pred`` is a list over frames whose first element is ignored; the
    remaining arguments are ``B x T x C x H x W`` tensors.
    """
    T = trimap_gt.shape[1]
    gt_seq = [trimap_gt[:, t] for t in range(T)]
    refined_seq = [trimap_refined[:, t] for t in range(T)]
    bundle = {}
    bundle["tri"], bundle["tri_refined"] = trimap_total(list(trimap_pred), refined_seq, gt_seq)
    bundle["tri_total"] = bundle["tri"] + bundle["tri_refined"]

    for prefix, p in (("alpha", alpha_pred), ("alpha_refined", alpha_refined)):
        for k, v in alpha_losses(p, alpha_gt, image, fg_gt, bg_gt).items():
            bundle[f"{prefix}_{k}"] = v
    bundle["alpha_total"] = sum(bundle[f"{p}_{k}"] for p in ("alpha", "alpha_refined") for k in ALPHA_TERMS)

    unk = unknown_mask(trimap_gt)
    for prefix, pF, pB in (("fb", fg_pred, bg_pred), ("fb_refined", fg_refined, bg_refined)):
        for k, v in fb_losses(pF, pB, fg_gt, bg_gt, image, alpha_gt, unk).items():
            bundle[f"{prefix}_{k}"] = v
    bundle["fb_total"] = sum(bundle[f"{p}_{k}"] for p in ("fb", "fb_refined") for k in FB_TERMS)

    bundle["total"] = combine_totals(bundle["tri_total"], bundle["alpha_total"], bundle["fb_total"])
    return bundle


def bundle_to_json(bundle):
    return json.dumps({k: float(v.detach()) for k, v in bundle.items()}, sort_keys=True)
