"""Auto-regressive inference: alpha prediction -> refinement -> memory write -> propagation."""
from __future__ import annotations

import resource
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .refine import FrameOutputs
from .trimap_prop import MemoryBank

MEMORY_EVERY = 10
MAX_INTERMEDIATES = 3


def memory_policy(bank, entry, t, every=MEMORY_EVERY, max_intermediates=MAX_INTERMEDIATES):
    """Return the bank after writing frame ``t``.

    Frame 0 becomes the permanent reference. Every frame replaces the
    ``previous`` slot. Every ``every``-th frame is also kept as an intermediate,
    and only the latest ``max_intermediates`` of those survive.
    """
    if t < 0:
        raise ValueError("frame index must be >= 0")
    bank = bank or MemoryBank()
    reference = entry if t == 0 else bank.reference
    intermediates = list(bank.intermediates)
    if t > 0 and t % every == 0:
        intermediates = (intermediates + [entry])[-max_intermediates:]
    return MemoryBank(reference=reference, previous=entry, intermediates=intermediates)


@dataclass
class UnrollOutputs:
    """Per-frame tensors from one pass over a clip (lists indexed by frame)."""

    propagated: list  # trimap from propagation, None at frame 0
    alpha: list = None  # AlphaOutputs per frame
    refined: list = None  # FrameOutputs per frame
    banks: list = None  # bank sizes seen by each propagation


def unroll(model, frames, first_trimap, with_alpha=True):
    """Run the joint network over ``frames`` (list of B x 3 x H x W tensors).

    ``with_alpha=False`` runs the propagation module alone, writing its own
    predicted trimap to memory (no alpha, no hidden features).
    """
    if len(frames) == 0:
        raise ValueError("no frames to process")
    prop = model.trimap_prop
    bank = None
    out = UnrollOutputs(propagated=[], alpha=[], refined=[], banks=[])
    for t, frame in enumerate(frames):
        if t == 0:
            trimap = first_trimap
            out.propagated.append(None)
        else:
            out.banks.append(bank.frame_indices())
            trimap = prop.propagate(bank, frame)
            out.propagated.append(trimap)
        if with_alpha:
            a = model.alpha_net(frame, trimap)
            r = model.refine(frame, trimap, a.alpha, a.hidden)
            out.alpha.append(a)
            out.refined.append(r)
            entry = prop.encode_memory(frame, r.trimap, r.alpha, r.hidden, frame_index=t)
        else:
            entry = prop.encode_memory(frame, trimap, frame_index=t)
        bank = memory_policy(bank, entry, t)
    return out


def _pad16(x):
    h, w = x.shape[-2:]
    ph, pw = (-h) % 16, (-w) % 16
    if ph == 0 and pw == 0:
        return x
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


def _to_tensor(img, dtype):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return torch.from_numpy(a.transpose(2, 0, 1).copy()).unsqueeze(0).to(dtype)


def _to_numpy(x, h, w):
    a = x[0, :, :h, :w].detach().cpu().double().numpy().transpose(1, 2, 0)
    return a[..., 0] if a.shape[-1] == 1 else a


@dataclass
class FrameResult:
    """Numpy outputs for one frame (H x W alpha, H x W x C others)."""

    alpha: np.ndarray
    trimap: np.ndarray
    fg: np.ndarray
    bg: np.ndarray
    hidden: np.ndarray
    propagated: np.ndarray | None = None
    seconds: float = 0.0
    peak_rss_mb: float = 0.0


def _peak_rss_mb():
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


@torch.no_grad()
def run_sequence(frames, first_trimap, model):
    """Matte a whole sequence from its first-frame trimap.

    ``frames`` are H x W x 3 arrays in [0, 1]; ``first_trimap`` is H x W x 3
    (bg, unk, fg) probabilities. Sizes are reflect-padded to multiples of 16
    internally and cropped back.
    """
    if len(frames) == 0:
        raise ValueError("frame list is empty")
    h, w = np.asarray(frames[0]).shape[:2]
    if np.asarray(first_trimap).shape[:2] != (h, w):
        raise ValueError("first trimap is not aligned with frame 0")
    model.eval()
    dtype = next(model.parameters()).dtype
    prop = model.trimap_prop
    bank = None
    results = []
    for t, img in enumerate(frames):
        if np.asarray(img).shape[:2] != (h, w):
            raise ValueError(f"frame {t} has a different size")
        start = time.perf_counter()
        frame = _pad16(_to_tensor(img, dtype))
        propagated = None
        if t == 0:
            trimap = _pad16(_to_tensor(first_trimap, dtype))
        else:
            trimap = prop.propagate(bank, frame)
            propagated = _to_numpy(trimap, h, w)
        a = model.alpha_net(frame, trimap)
        r = model.refine(frame, trimap, a.alpha, a.hidden)
        entry = prop.encode_memory(frame, r.trimap, r.alpha, r.hidden, frame_index=t)
        bank = memory_policy(bank, entry, t)
        results.append(
            FrameResult(
                alpha=_to_numpy(r.alpha, h, w),
                trimap=_to_numpy(r.trimap, h, w),
                fg=_to_numpy(r.fg, h, w),
                bg=_to_numpy(r.bg, h, w),
                hidden=_to_numpy(r.hidden, h, w),
                propagated=propagated,
                seconds=time.perf_counter() - start,
                peak_rss_mb=_peak_rss_mb(),
            )
        )
    return results


__all__ = ["FrameOutputs", "FrameResult", "memory_policy", "run_sequence", "unroll"]
