"""Stage-wise training.

=====  ======================  =====================  =========
stage  trainable               memory inputs          data
=====  ======================  =====================  =========
1a     alpha_net               trimap                 image_sim
1b     trimap_prop             trimap                 image_sim
2      alpha_net, refine       trimap                 image_sim
3      trimap_prop             trimap, alpha, hidden  image_sim
4      everything              trimap, alpha, hidden  video
=====  ======================  =====================  =========

Stage 1a trains the alpha network on ground-truth trimaps and 1b the
propagation network on its own predictions; from Stage 2 on the full
pipeline runs and frozen modules still pass gradients through.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .clipsim import simulate_clip
from .config import STAGE_NAMES, TrainConfig
from .engine import unroll
from .layers import freeze_batchnorm
from .losses import FB_WEIGHT, alpha_losses, fb_losses, total_loss, trimap_ce, unknown_mask
from .model import MODULE_NAMES, save_checkpoint

log = logging.getLogger(__name__)

ALL_MEMORY_INPUTS = frozenset({"trimap", "alpha", "hidden"})


@dataclass
class StageConfig:
    stage: str
    trainable: frozenset
    enabled_memory_inputs: frozenset
    iterations: int
    dataset: str

    def __post_init__(self):
        if self.stage not in STAGE_NAMES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGE_NAMES}")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")


_STAGE_TABLE = {
    "1a": ({"alpha_net"}, {"trimap"}, "image_sim"),
    "1b": ({"trimap_prop"}, {"trimap"}, "image_sim"),
    "2": ({"alpha_net", "refine"}, {"trimap"}, "image_sim"),
    "3": ({"trimap_prop"}, ALL_MEMORY_INPUTS, "image_sim"),
    "4": (set(MODULE_NAMES), ALL_MEMORY_INPUTS, "video"),
}
_PREREQUISITES = {"1a": (), "1b": (), "2": ("1a", "1b"), "3": ("2",), "4": ("3",)}


def stage_config(stage, iterations=None, train_cfg=None):
    if stage not in _STAGE_TABLE:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGE_NAMES}")
    trainable, inputs, dataset = _STAGE_TABLE[stage]
    if iterations is None:
        iterations = (train_cfg or TrainConfig()).iterations[stage]
    return StageConfig(stage, frozenset(trainable), frozenset(inputs), int(iterations), dataset)


def lr_schedule(step, total, base_lr=1e-5, drop_at=0.9, factor=0.1):
    """Constant ``base_lr``, dropped once by ``factor`` from ``drop_at`` of the run (inclusive)."""
    return base_lr * factor if step >= drop_at * total else base_lr


# -- data ----------------------------------------------------------------------


def collate(clips, dtype=torch.float32):
    """List of ClipSample -> dict of B x T x C x H x W tensors."""

    def stack(attr, expand=False):
        arr = np.stack([np.stack(getattr(c, attr)) for c in clips])  # B x T x H x W [x C]
        if expand:
            arr = arr[..., None]
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 1, 4, 2, 3))).to(dtype)

    return {
        "image": stack("frames"),
        "alpha": stack("alphas", expand=True),
        "trimap": stack("trimaps"),
        "fg": stack("fg"),
        "bg": stack("bg"),
    }


class SimulatedClips:
    """Fresh clips every step, simulated from still (fg, alpha, bg) sources."""

    def __init__(self, sources, sim_cfg, frames=3, batch_size=4, seed=0, dtype=torch.float32):
        if not sources:
            raise ValueError("no sources to simulate from")
        self.sources, self.sim_cfg = list(sources), sim_cfg
        self.frames, self.batch_size, self.seed, self.dtype = frames, batch_size, seed, dtype

    def clips(self, step):
        out = []
        for j in range(self.batch_size):
            k = step * self.batch_size + j
            fg, alpha, bg = self.sources[k % len(self.sources)]
            seed = int(np.random.SeedSequence([self.seed, k]).generate_state(1)[0])
            out.append(simulate_clip(fg, alpha, bg, self.frames, seed, self.sim_cfg))
        return out

    def batch(self, step):
        return collate(self.clips(step), self.dtype)


class FixedClips:
    """A fixed set of clips visited in order, ``batch_size`` at a time."""

    def __init__(self, clips, batch_size=4, dtype=torch.float32):
        if not clips:
            raise ValueError("no clips")
        self.clips, self.batch_size, self.dtype = list(clips), batch_size, dtype
        self._cache = {}

    def batch(self, step):
        n = len(self.clips)
        idx = tuple((step * self.batch_size + j) % n for j in range(self.batch_size))
        if idx not in self._cache:
            self._cache[idx] = collate([self.clips[i] for i in idx], self.dtype)
        return self._cache[idx]


def simulate_video_clips(sources, n, frames, seed, sim_cfg):
    """``n`` fixed clips standing in for video data.

    Video frames are exact composites of their layers, so appearance
    augmentation is off; motion and crops are kept.
    """
    cfg = replace(sim_cfg, augment=False)
    return [simulate_clip(*sources[i % len(sources)], frames, seed * 1000 + i, cfg) for i in range(n)]


# -- forward / step ------------------------------------------------------------


def set_trainable(model, trainable):
    for name in MODULE_NAMES:
        for p in getattr(model, name).parameters():
            p.requires_grad_(name in trainable)
    freeze_batchnorm(model)


def forward_losses(model, batch, stage):
    """Run the stage's forward pass over one batch and return its loss bundle."""
    image, alpha_gt, trimap_gt = batch["image"], batch["alpha"], batch["trimap"]
    fg_gt, bg_gt = batch["fg"], batch["bg"]
    T = image.shape[1]
    frames = [image[:, t] for t in range(T)]

    if stage == "1a":
        outs = [model.alpha_net(frames[t], trimap_gt[:, t]) for t in range(T)]
        p_alpha = torch.stack([o.alpha for o in outs], dim=1)
        pF = torch.stack([o.fg for o in outs], dim=1)
        pB = torch.stack([o.bg for o in outs], dim=1)
        bundle = {f"alpha_{k}": v for k, v in alpha_losses(p_alpha, alpha_gt, image, fg_gt, bg_gt).items()}
        fb = fb_losses(pF, pB, fg_gt, bg_gt, image, alpha_gt, unknown_mask(trimap_gt))
        bundle.update({f"fb_{k}": v for k, v in fb.items()})
        bundle["alpha_total"] = sum(v for k, v in bundle.items() if k.startswith("alpha_"))
        bundle["fb_total"] = sum(v for k, v in bundle.items() if k.startswith("fb_"))
        bundle["total"] = bundle["alpha_total"] + FB_WEIGHT * bundle["fb_total"]
        return bundle

    if stage == "1b":
        out = unroll(model, frames, trimap_gt[:, 0], with_alpha=False)
        tri = sum((trimap_ce(out.propagated[t], trimap_gt[:, t]) for t in range(1, T)), image.new_zeros(()))
        return {"tri": tri, "tri_total": tri, "total": tri}

    out = unroll(model, frames, trimap_gt[:, 0])

    def seq(items, attr):
        return torch.stack([getattr(o, attr) for o in items], dim=1)

    return total_loss(
        trimap_pred=out.propagated,
        trimap_refined=seq(out.refined, "trimap"),
        trimap_gt=trimap_gt,
        alpha_pred=seq(out.alpha, "alpha"),
        alpha_refined=seq(out.refined, "alpha"),
        alpha_gt=alpha_gt,
        fg_pred=seq(out.alpha, "fg"),
        bg_pred=seq(out.alpha, "bg"),
        fg_refined=seq(out.refined, "fg"),
        bg_refined=seq(out.refined, "bg"),
        fg_gt=fg_gt,
        bg_gt=bg_gt,
        image=image,
    )


def training_step(model, batch, stage):
    """Forward + backward for one batch. Returns ``(bundle, grads)``.

    ``grads`` maps every parameter name to its gradient; frozen parameters
    get zeros. A non-finite loss skips the backward pass and returns ``None``.
    """
    model.zero_grad(set_to_none=True)
    bundle = forward_losses(model, batch, stage)
    if not torch.isfinite(bundle["total"]):
        log.warning("stage %s: non-finite loss, step skipped", stage)
        return bundle, None
    bundle["total"].backward()
    grads = {
        name: (p.grad if p.grad is not None else torch.zeros_like(p)) for name, p in model.named_parameters()
    }
    return bundle, grads


# -- stage loop ----------------------------------------------------------------


@dataclass
class StageResult:
    stage: str
    losses: list = field(default_factory=list)  # total loss per step (nan when skipped)
    skipped: int = 0


def check_stage_order(model, stage):
    missing = [s for s in _PREREQUISITES[stage] if s not in model.completed_stages]
    if missing:
        warnings.warn(f"running stage {stage} without stage(s) {', '.join(missing)}", stacklevel=3)


def run_stage(model, cfg, data, train_cfg=None, log_path=None, checkpoint_path=None):
    """Train ``model`` in place for one stage; returns a StageResult."""
    train_cfg = train_cfg or TrainConfig()
    check_stage_order(model, cfg.stage)
    model.trimap_prop.set_memory_inputs(cfg.enabled_memory_inputs)
    model.train()
    set_trainable(model, cfg.trainable)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.RAdam(params, lr=train_cfg.lr)
    result = StageResult(cfg.stage)
    log_file = open(log_path, "a") if log_path else None
    try:
        for step in range(cfg.iterations):
            lr = lr_schedule(step, cfg.iterations, train_cfg.lr, train_cfg.lr_drop_at, train_cfg.lr_drop_factor)
            for group in opt.param_groups:
                group["lr"] = lr
            bundle, grads = training_step(model, data.batch(step), cfg.stage)
            total = bundle["total"].item()
            if grads is None:
                result.skipped += 1
                result.losses.append(math.nan)
                continue
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, train_cfg.grad_clip)
            opt.step()
            result.losses.append(total)
            if log_file:
                record = {"step": step, "stage": cfg.stage, "lr": lr}
                record.update({k: v.item() for k, v in bundle.items()})
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if checkpoint_path and train_cfg.checkpoint_every and (step + 1) % train_cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model)
    finally:
        if log_file:
            log_file.close()
    model.zero_grad(set_to_none=True)
    set_trainable(model, set(MODULE_NAMES))
    model.completed_stages.append(cfg.stage)
    return result
