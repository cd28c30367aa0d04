"""Procedural (fg, alpha, bg) triplets for smoke tests and desk-scale training."""
import numpy as np
from scipy.ndimage import gaussian_filter


def soft_blob(size, rng, soft_width=3.0):
    """An ellipse-ish blob whose boundary ramps linearly from 1 to 0 over ``soft_width`` pixels."""
    h = w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = rng.uniform(0.4, 0.6) * h, rng.uniform(0.4, 0.6) * w
    ry, rx = rng.uniform(0.18, 0.3) * h, rng.uniform(0.18, 0.3) * w
    angle = np.arctan2(ys - cy, xs - cx)
    # a few low-frequency harmonics make the outline non-convex
    wobble = 1.0 + sum(rng.uniform(-0.12, 0.12) * np.cos(k * angle + rng.uniform(0, 2 * np.pi)) for k in (2, 3, 5))
    r = np.sqrt(((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2) / wobble
    dist = (r - 1.0) * min(ry, rx)
    return np.clip(0.5 - dist / soft_width, 0.0, 1.0)


def smooth_color(size, rng):
    base = rng.uniform(0.2, 0.9, size=3)
    ramp = rng.uniform(-0.15, 0.15, size=(2, 3))
    ys, xs = np.mgrid[0:size, 0:size] / size
    img = base + ys[..., None] * ramp[0] + xs[..., None] * ramp[1]
    return np.clip(img, 0.0, 1.0)


def texture(size, rng, sigma=3.0):
    noise = rng.uniform(size=(size, size, 3))
    img = np.stack([gaussian_filter(noise[..., c], sigma) for c in range(3)], axis=-1)
    img = (img - img.min()) / max(img.max() - img.min(), 1e-8)
    tint = rng.uniform(0.3, 1.0, size=3)
    return np.clip(0.1 + 0.8 * img * tint, 0.0, 1.0)


def make_sources(n=3, size=128, seed=0, soft_width=3.0):
    """Return ``n`` (fg, alpha, bg) triplets of float64 arrays in [0, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        alpha = soft_blob(size, rng, soft_width)
        out.append((smooth_color(size, rng), alpha, texture(size, rng)))
    return out
