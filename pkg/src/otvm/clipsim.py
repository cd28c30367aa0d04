"""Synthetic training clips from still (fg, alpha, bg) layers.

Arrays here are numpy, channels-last, float64 in [0, 1]. Trimaps are one-hot
H x W x 3 with class order (background, unknown, foreground).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from skimage.exposure import match_histograms

from .config import SimConfig

BG, UNK, FG = 0, 1, 2
EVAL_KERNELS = {"narrow": 11, "medium": 25, "wide": 41}


@dataclass
class ClipSample:
    frames: list
    alphas: list
    trimaps: list
    fg: list
    bg: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frames)
        if not all(len(x) == n for x in (self.alphas, self.trimaps, self.fg, self.bg)):
            raise ValueError("ClipSample fields must all have the same length")

    @property
    def T(self):
        return len(self.frames)


def composite(fg, alpha, bg):
    """Blend ``fg`` over ``bg`` with ``alpha`` (H x W or H x W x 1)."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 2:
        alpha = alpha[..., None]
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape[:2]:
        raise ValueError(
            f"shape mismatch: fg {fg.shape}, alpha {alpha.shape[:2]}, bg {bg.shape}"
        )
    return np.clip(alpha * fg + (1.0 - alpha) * bg, 0.0, 1.0)


def dilate(mask, kernel):
    """Binary dilation with a kernel x kernel square; pixels outside the image count as unset."""
    if kernel == 1:
        return mask.astype(bool).copy()
    se = np.ones((kernel, kernel), np.uint8)
    return cv2.dilate(mask.astype(np.uint8), se, borderType=cv2.BORDER_CONSTANT, borderValue=0) > 0


def labels_to_onehot(labels):
    return np.eye(3, dtype=np.float64)[labels]


def make_trimap(alpha, kernel):
    alpha = np.asarray(alpha)
    if alpha.ndim == 3:
        alpha = alpha[..., 0]
    kernel = int(kernel)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"trimap kernel must be a positive odd integer, got {kernel}")
    labels = np.full(alpha.shape, UNK, dtype=np.int64)
    labels[alpha >= 1] = FG
    labels[alpha <= 0] = BG
    unknown = dilate(labels == UNK, kernel)
    labels[unknown] = UNK
    return labels_to_onehot(labels)


def eval_trimap_set(alpha, setting):
    try:
        kernel = EVAL_KERNELS[setting]
    except KeyError:
        raise ValueError(f"unknown trimap setting {setting!r}; expected narrow, medium or wide") from None
    return make_trimap(alpha, kernel)


def trimap_labels(trimap):
    return np.asarray(trimap).argmax(axis=-1)


def trimap_to_png(trimap):
    """Hard trimap as uint8: 0 = background, 128 = unknown, 255 = foreground."""
    return np.array([0, 128, 255], np.uint8)[trimap_labels(trimap)]


def trimap_from_png(img):
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[..., 0]
    labels = np.full(img.shape, UNK, dtype=np.int64)
    labels[img < 64] = BG
    labels[img > 191] = FG
    return labels_to_onehot(labels)


# -- affine motion -----------------------------------------------------------


def _affine_matrix(size, flip, rotation, shear, zoom, translation):
    h, w = size
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = math.radians(rotation)
    sh = math.radians(shear)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear_m = np.array([[1.0, math.tan(sh)], [0.0, 1.0]])
    lin = zoom * rot @ shear_m
    if flip:
        lin = lin @ np.diag([-1.0, 1.0])
    center = np.array([cx, cy])
    offset = center + np.array([translation[0] * w, translation[1] * h]) - lin @ center
    return np.hstack([lin, offset[:, None]])


def _sample_pose(rng, cfg, scale=1.0):
    return dict(
        rotation=rng.uniform(-1, 1) * cfg.max_rotation * scale,
        shear=rng.uniform(-1, 1) * cfg.max_shear * scale,
        log_zoom=rng.uniform(math.log(cfg.zoom[0]), math.log(cfg.zoom[1])) * scale,
        tx=rng.uniform(-1, 1) * cfg.max_translation * scale,
        ty=rng.uniform(-1, 1) * cfg.max_translation * scale,
    )


def _frame_matrices(rng, cfg, size, T):
    flip = bool(rng.random() < cfg.flip_prob)
    base = _sample_pose(rng, cfg)
    mats = []
    for _ in range(T):
        d = _sample_pose(rng, cfg, cfg.motion_fraction)
        mats.append(
            _affine_matrix(
                size,
                flip,
                base["rotation"] + d["rotation"],
                base["shear"] + d["shear"],
                math.exp(base["log_zoom"] + d["log_zoom"]),
                (base["tx"] + d["tx"], base["ty"] + d["ty"]),
            )
        )
    return mats


def snap_alpha(alpha, tol=1e-6):
    """Clip to [0, 1] and snap interpolation round-off so flat regions stay exactly 0 or 1."""
    alpha = np.clip(alpha, 0.0, 1.0)
    alpha[alpha < tol] = 0.0
    alpha[alpha > 1.0 - tol] = 1.0
    return alpha


def _warp(img, mat, border):
    h, w = img.shape[:2]
    out = cv2.warpAffine(img, mat, (w, h), flags=cv2.INTER_LINEAR, borderMode=border)
    return out.reshape(img.shape)


# -- augmentation ------------------------------------------------------------


def _motion_kernel(length, angle):
    k = np.zeros((length, length), np.float64)
    c = (length - 1) / 2.0
    dx, dy = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    for s in np.linspace(-c, c, 4 * length):
        x, y = int(round(c + s * dx)), int(round(c + s * dy))
        k[y, x] = 1.0
    return k / k.sum()


def _blur(img, kernel):
    return cv2.filter2D(img, -1, kernel, borderType=cv2.BORDER_REFLECT).reshape(img.shape)


def motion_blur_layers(fg, alpha, bg, kernel):
    """Blur premultiplied foreground and alpha together so the layers stay consistent."""
    a = alpha[..., None]
    a_b = snap_alpha(_blur(alpha, kernel))
    premult = _blur(fg * a, kernel)
    fg_b = np.where(a_b[..., None] > 1e-6, premult / np.maximum(a_b[..., None], 1e-6), fg)
    return np.clip(fg_b, 0.0, 1.0), a_b, np.clip(_blur(bg, kernel), 0.0, 1.0)


def jpeg_roundtrip(img, quality):
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    ok, buf = cv2.imencode(".jpg", u8, [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    return cv2.imdecode(buf, cv2.IMREAD_UNCHANGED).astype(np.float64) / 255.0


def sample_post_augment(rng, cfg):
    """Draw the post-composite chain parameters: (noise sigma or 0, jpeg quality or None)."""
    sigma = rng.uniform(0.0, cfg.max_noise_sigma) if rng.random() < cfg.noise_prob else 0.0
    quality = None
    if rng.random() < cfg.jpeg_prob:
        quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
    return sigma, quality


def post_augment(image, sigma, quality, noise_seed):
    out = image
    if sigma > 0:
        noise = np.random.default_rng(noise_seed).normal(0.0, sigma, size=image.shape)
        out = np.clip(out + noise, 0.0, 1.0)
    if quality is not None:
        out = jpeg_roundtrip(out, quality)
    return out


# -- cropping ----------------------------------------------------------------


def _crop_center(alpha, rng):
    unknown = np.argwhere((alpha > 0) & (alpha < 1))
    if len(unknown):
        y, x = unknown[rng.integers(len(unknown))]
        return int(y), int(x), "unknown"
    # no soft pixel: fall back to the alpha centroid, then to the image center
    total = alpha.sum()
    if total > 0:
        ys, xs = np.indices(alpha.shape)
        return int(round((ys * alpha).sum() / total)), int(round((xs * alpha).sum() / total)), "centroid"
    return alpha.shape[0] // 2, alpha.shape[1] // 2, "center"


def _crop(img, top, left, size, border):
    h, w = img.shape[:2]
    pad = [(max(0, -top), max(0, top + size - h)), (max(0, -left), max(0, left + size - w))]
    if any(p for pair in pad for p in pair):
        pad += [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, pad, mode=border)
        top += pad[0][0]
        left += pad[1][0]
    return img[top : top + size, left : left + size]


def _resize(img, size):
    if img.shape[0] == size and img.shape[1] == size:
        return img
    out = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
    return out.reshape((size, size) + img.shape[2:])


def sample_trimap_kernel(rng, kernel_range):
    lo, hi = kernel_range
    odd = [k for k in range(lo, hi + 1) if k % 2 == 1]
    return int(odd[rng.integers(len(odd))])


def simulate_clip(fg, alpha, bg, T=3, rng_seed=0, config=None):
    """Turn one still (fg, alpha, bg) triplet into a ``T``-frame training clip.

    The result is a pure function of the inputs and ``rng_seed``.
    """
    cfg = config or SimConfig()
    fg = np.asarray(fg, np.float64)
    bg = np.asarray(bg, np.float64)
    alpha = np.asarray(alpha, np.float64)
    if alpha.ndim == 3:
        alpha = alpha[..., 0]
    if fg.shape[:2] != alpha.shape:
        raise ValueError(f"fg {fg.shape} and alpha {alpha.shape} are not aligned")
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if bg.shape[:2] != fg.shape[:2]:
        bg = cv2.resize(bg, (fg.shape[1], fg.shape[0]), interpolation=cv2.INTER_LINEAR)

    size = fg.shape[:2]
    if cfg.affine:
        fg_mats = _frame_matrices(rng, cfg, size, T)
        bg_mats = _frame_matrices(rng, cfg, size, T)
        fgs = [_warp(fg, m, cv2.BORDER_REPLICATE) for m in fg_mats]
        alphas = [snap_alpha(_warp(alpha, m, cv2.BORDER_CONSTANT)) for m in fg_mats]
        bgs = [_warp(bg, m, cv2.BORDER_REFLECT) for m in bg_mats]
    else:
        fgs, alphas, bgs = [fg] * T, [alpha] * T, [bg] * T

    crop = int(cfg.crop_sizes[rng.integers(len(cfg.crop_sizes))])
    cy, cx, center_rule = _crop_center(alphas[0], rng)
    top, left = cy - crop // 2, cx - crop // 2
    fgs = [_resize(_crop(x, top, left, crop, "edge"), cfg.out_size) for x in fgs]
    alphas = [snap_alpha(_resize(_crop(x, top, left, crop, "constant"), cfg.out_size)) for x in alphas]
    bgs = [_resize(_crop(x, top, left, crop, "reflect"), cfg.out_size) for x in bgs]

    kernel = sample_trimap_kernel(rng, cfg.trimap_kernel)
    frames, aug_log = [], []
    for t in range(T):
        f, a, b = fgs[t], alphas[t], bgs[t]
        entry = {}
        if cfg.augment:
            if rng.random() < cfg.hist_match_prob:
                w = rng.uniform(0.0, cfg.hist_match_strength)
                matched = match_histograms(f, b, channel_axis=-1)
                f = np.clip((1 - w) * f + w * matched, 0.0, 1.0)
                entry["hist_match"] = w
            if rng.random() < cfg.motion_blur_prob:
                length = int(rng.integers(1, cfg.max_blur_length + 1))
                angle = float(rng.uniform(0, 180))
                if length > 1:
                    f, a, b = motion_blur_layers(f, a, b, _motion_kernel(length, angle))
                    entry["motion_blur"] = [length, angle]
        image = composite(f, a, b)
        if cfg.augment:
            sigma, quality = sample_post_augment(rng, cfg)
            noise_seed = int(rng.integers(2**31))
            image = post_augment(image, sigma, quality, noise_seed)
            entry.update(noise_sigma=sigma, jpeg_quality=quality, noise_seed=noise_seed)
        fgs[t], alphas[t], bgs[t] = f, a, b
        frames.append(image)
        aug_log.append(entry)

    trimaps = [make_trimap(a, kernel) for a in alphas]
    params = dict(
        seed=int(rng_seed),
        crop_size=crop,
        crop_top=int(top),
        crop_left=int(left),
        crop_center_rule=center_rule,
        trimap_kernel=kernel,
        augment=aug_log,
    )
    return ClipSample(frames, alphas, trimaps, fgs, bgs, params)
