"""Input checks shared by the estimator, the engine and the CLI."""
from __future__ import annotations

import numpy as np

TRIMAP_SUM_TOL = 1e-5


def check_frame(img, name="frame"):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {a.shape}")
    if not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def check_alpha(alpha, name="alpha"):
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim != 2:
        raise ValueError(f"{name} must be H x W, got shape {a.shape}")
    if not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def check_trimap(trimap, name="trimap"):
    """Soft trimap H x W x 3 with non-negative probabilities summing to 1."""
    a = np.asarray(trimap, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3 (bg, unknown, fg), got shape {a.shape}")
    if not np.isfinite(a).all() or a.min() < 0.0:
        raise ValueError(f"{name} has negative or non-finite probabilities")
    if np.abs(a.sum(axis=-1) - 1.0).max() > TRIMAP_SUM_TOL:
        raise ValueError(f"{name} channels must sum to 1")
    return a


def check_sequence(frames, first_trimap=None):
    """Validate a frame list (and optional first-frame trimap); returns float64 arrays."""
    if frames is None or len(frames) == 0:
        raise ValueError("frame list is empty")
    out = [check_frame(f, f"frame {t}") for t, f in enumerate(frames)]
    shape = out[0].shape
    for t, f in enumerate(out):
        if f.shape != shape:
            raise ValueError(f"frame {t} is {f.shape[:2]}, frame 0 is {shape[:2]}")
    if first_trimap is None:
        return out, None
    tri = check_trimap(first_trimap, "first trimap")
    if tri.shape[:2] != shape[:2]:
        raise ValueError(f"first trimap is {tri.shape[:2]}, frames are {shape[:2]}")
    return out, tri


def check_sources(sources):
    """(fg, alpha, bg) still triplets for clip simulation."""
    if sources is None or len(sources) == 0:
        raise ValueError("no (fg, alpha, bg) sources given")
    out = []
    for i, src in enumerate(sources):
        if len(src) != 3:
            raise ValueError(f"source {i} is not an (fg, alpha, bg) triplet")
        fg = check_frame(src[0], f"source {i} fg")
        alpha = check_alpha(src[1], f"source {i} alpha")
        bg = check_frame(src[2], f"source {i} bg")
        if fg.shape[:2] != alpha.shape:
            raise ValueError(f"source {i}: fg and alpha are not aligned")
        out.append((fg, alpha, bg))
    return out
