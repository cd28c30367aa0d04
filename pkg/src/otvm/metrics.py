"""Alpha-matte and trimap-quality metrics.

Every alpha metric is computed per frame over a region mask and averaged over
frames. ``region="unknown"`` restricts to the ground-truth trimap's unknown
class; ``region="full"`` uses every pixel and labels columns with ``-V``.
A frame whose mask is empty contributes 0 and still counts toward the mean.

Per-frame definitions (``p`` prediction, ``y`` ground truth, ``M`` mask):

=======  ==============================================  ======
metric   per frame                                        scale
=======  ==============================================  ======
MSE      mean_M (p - y)^2                                 1e3
MAD      mean_M |p - y|                                   1e3
SAD      sum_M |p - y|                                    1e-3
SSDA     sum_M (p - y)^2                                  1e2
dtSSD    sqrt(sum_M (dp/dt - dy/dt)^2), t >= 1            1e2
MESSDdt  sum_M |E_t - warp(E_t-1)|, E = (p - y)^2          1e3
Grad     sum_M (|G p| - |G y|)^2, Gaussian sigma 1.4      1e-3
Conn     classical connectivity error, steps of 0.1       1e-3
=======  ==============================================  ======

Temporal metrics use the mask of the later frame and average over the T-1
transitions (0 for a single frame). ``warp`` moves 8x8 blocks of the previous
frame by the displacement (search radius 4) that best matches the
ground-truth alpha.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .clipsim import BG, EVAL_KERNELS, FG, UNK, dilate, make_trimap, trimap_labels

METRIC_NAMES = ("SSDA", "MSE", "MAD", "SAD", "Grad", "Conn", "dtSSD", "MESSDdt")
DEFAULT_SCALES = {
    "SSDA": 1e2,
    "MSE": 1e3,
    "MAD": 1e3,
    "SAD": 1e-3,
    "Grad": 1e-3,
    "Conn": 1e-3,
    "dtSSD": 1e2,
    "MESSDdt": 1e3,
}
REGIONS = ("unknown", "full")
PRECISION_KERNEL = 41


@dataclass
class MetricReport:
    values: dict  # metric name -> scaled value
    region: str = "unknown"
    scales: dict = field(default_factory=lambda: dict(DEFAULT_SCALES))

    def columns(self):
        """Values keyed by column name (``-V`` suffix on the full region)."""
        suffix = "-V" if self.region == "full" else ""
        return {f"{k}{suffix}": v for k, v in self.values.items()}

    def __getitem__(self, key):
        return self.values[key]


@dataclass
class TrimapQuality:
    precision_t: float
    recall_t: float


# -- per-frame pieces --------------------------------------------------------


def _masked_mean(x, mask):
    n = mask.sum()
    return float(x[mask].sum() / n) if n else 0.0


def _masked_sum(x, mask):
    return float(x[mask].sum())


def gradient_error(pred, gt, mask, sigma=1.4):
    gp = ndimage.gaussian_gradient_magnitude(pred, sigma)
    gy = ndimage.gaussian_gradient_magnitude(gt, sigma)
    return _masked_sum((gp - gy) ** 2, mask)


def connectivity_error(pred, gt, mask, step=0.1):
    thresholds = np.arange(0.0, 1.0 + step / 2, step)
    round_down = -np.ones_like(gt)
    for i in range(1, len(thresholds)):
        both = ((pred >= thresholds[i]) & (gt >= thresholds[i])).astype(np.uint8)
        n, labels, stats, _ = cv2.connectedComponentsWithStats(both, connectivity=4)
        omega = np.zeros_like(both)
        if n > 1:
            largest = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
            omega = (labels == largest).astype(np.uint8)
        flag = (round_down == -1) & (omega == 0)
        round_down[flag] = thresholds[i - 1]
    round_down[round_down == -1] = 1.0
    dp, dy = pred - round_down, gt - round_down
    phi_p = 1.0 - dp * (dp >= 0.15)
    phi_y = 1.0 - dy * (dy >= 0.15)
    return _masked_sum(np.abs(phi_p - phi_y), mask)


def block_motion(prev, cur, block=8, radius=4):
    """Per-block integer displacement (dy, dx) taking ``prev`` to ``cur``.

    Returns an array of shape (ceil(H/block), ceil(W/block), 2); ties keep the
    smallest displacement, so static content maps to (0, 0).
    """
    h, w = cur.shape
    pad = np.pad(prev, radius, mode="edge")
    nby, nbx = -(-h // block), -(-w // block)
    motion = np.zeros((nby, nbx, 2), dtype=int)
    offsets = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (abs(d[0]) + abs(d[1]), d),
    )
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = by * block, bx * block
            target = cur[y0 : y0 + block, x0 : x0 + block]
            bh, bw = target.shape
            best, best_cost = (0, 0), np.inf
            for dy, dx in offsets:
                cand = pad[y0 + radius - dy : y0 + radius - dy + bh, x0 + radius - dx : x0 + radius - dx + bw]
                cost = float(((cand - target) ** 2).sum())
                if cost < best_cost - 1e-12:
                    best, best_cost = (dy, dx), cost
            motion[by, bx] = best
    return motion


def warp_blocks(x, motion, block=8, radius=4):
    """Move each block of ``x`` by its displacement (edge-padded source)."""
    h, w = x.shape
    pad = np.pad(x, radius, mode="edge")
    out = np.empty_like(x)
    for by in range(motion.shape[0]):
        for bx in range(motion.shape[1]):
            dy, dx = motion[by, bx]
            y0, x0 = by * block, bx * block
            bh, bw = min(block, h - y0), min(block, w - x0)
            out[y0 : y0 + bh, x0 : x0 + bw] = pad[
                y0 + radius - dy : y0 + radius - dy + bh, x0 + radius - dx : x0 + radius - dx + bw
            ]
    return out


# -- sequence metrics ----------------------------------------------------------


def region_masks(gt, gt_trimaps=None, region="unknown"):
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}")
    if region == "full":
        return [np.ones(g.shape, dtype=bool) for g in gt]
    if gt_trimaps is None:
        raise ValueError("region='unknown' needs ground-truth trimaps")
    if len(gt_trimaps) != len(gt):
        raise ValueError("trimap count does not match frame count")
    return [trimap_labels(t) == UNK for t in gt_trimaps]


def _as_sequence(seq, name):
    arrs = [np.asarray(a, dtype=np.float64) for a in seq]
    if not arrs:
        raise ValueError(f"{name} is empty")
    for a in arrs:
        if a.ndim != 2:
            raise ValueError(f"{name} frames must be H x W")
    return arrs


def alpha_metrics(pred, gt, gt_trimaps=None, region="unknown", scales=None, metrics=METRIC_NAMES):
    """Scaled metric report for aligned prediction / ground-truth alpha sequences."""
    pred, gt = _as_sequence(pred, "pred"), _as_sequence(gt, "gt")
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted frames vs {len(gt)} ground-truth frames")
    for p, y in zip(pred, gt):
        if p.shape != y.shape:
            raise ValueError("prediction and ground truth differ in shape")
    scales = dict(DEFAULT_SCALES, **(scales or {}))
    masks = region_masks(gt, gt_trimaps, region)
    T = len(gt)

    raw = {}
    diffs = [p - y for p, y in zip(pred, gt)]
    if "MSE" in metrics:
        raw["MSE"] = np.mean([_masked_mean(d**2, m) for d, m in zip(diffs, masks)])
    if "MAD" in metrics:
        raw["MAD"] = np.mean([_masked_mean(np.abs(d), m) for d, m in zip(diffs, masks)])
    if "SAD" in metrics:
        raw["SAD"] = np.mean([_masked_sum(np.abs(d), m) for d, m in zip(diffs, masks)])
    if "SSDA" in metrics:
        raw["SSDA"] = np.mean([_masked_sum(d**2, m) for d, m in zip(diffs, masks)])
    if "Grad" in metrics:
        raw["Grad"] = np.mean([gradient_error(p, y, m) for p, y, m in zip(pred, gt, masks)])
    if "Conn" in metrics:
        raw["Conn"] = np.mean([connectivity_error(p, y, m) for p, y, m in zip(pred, gt, masks)])
    if "dtSSD" in metrics:
        vals = [
            np.sqrt(_masked_sum((diffs[t] - diffs[t - 1]) ** 2, masks[t])) for t in range(1, T)
        ]
        raw["dtSSD"] = float(np.mean(vals)) if vals else 0.0
    if "MESSDdt" in metrics:
        vals = []
        for t in range(1, T):
            motion = block_motion(gt[t - 1], gt[t])
            e_prev = warp_blocks(diffs[t - 1] ** 2, motion)
            vals.append(_masked_sum(np.abs(diffs[t] ** 2 - e_prev), masks[t]))
        raw["MESSDdt"] = float(np.mean(vals)) if vals else 0.0

    values = {k: float(raw[k]) * scales[k] for k in metrics}
    return MetricReport(values=values, region=region, scales=scales)


def trimap_quality(pred_trimaps, gt_alphas, kernel=PRECISION_KERNEL):
    """Precision-T / Recall-T (percent) of the predicted unknown area, averaged over frames.

    ``pred_trimaps`` may be soft (H x W x 3) or hard label maps (H x W).
    Precision is 100 for a frame with no predicted unknown pixels; recall is
    100 for a frame whose ground truth has no fractional alpha.
    """
    if len(pred_trimaps) != len(gt_alphas):
        raise ValueError("trimap count does not match alpha count")
    if len(gt_alphas) == 0:
        raise ValueError("empty sequence")
    precision, recall = [], []
    for pt, a in zip(pred_trimaps, gt_alphas):
        pt = np.asarray(pt)
        labels = trimap_labels(pt) if pt.ndim == 3 else pt
        a = np.asarray(a, dtype=np.float64)
        pu = labels == UNK
        gu = (a > 0) & (a < 1)
        n_pred, n_gt = int(pu.sum()), int(gu.sum())
        precision.append(100.0 * (pu & dilate(gu, kernel)).sum() / n_pred if n_pred else 100.0)
        recall.append(100.0 * (pu & gu).sum() / n_gt if n_gt else 100.0)
    return TrimapQuality(float(np.mean(precision)), float(np.mean(recall)))


def evaluate_sequence(pred, gt, setting="medium", region="unknown", with_trimap_quality=False, pred_trimaps=None):
    """Metric columns for one sequence under a ground-truth trimap setting."""
    if setting not in EVAL_KERNELS:
        raise ValueError(f"setting must be one of {sorted(EVAL_KERNELS)}")
    gt_trimaps = [make_trimap(np.asarray(a, dtype=np.float64), EVAL_KERNELS[setting]) for a in gt]
    report = alpha_metrics(pred, gt, gt_trimaps, region=region)
    row = {"setting": setting, "region": region}
    row.update(report.columns())
    if with_trimap_quality:
        if pred_trimaps is None:
            raise ValueError("trimap quality needs predicted trimaps")
        q = trimap_quality(pred_trimaps, gt)
        row.update({"Precision-T": q.precision_t, "Recall-T": q.recall_t})
    return row


# -- report writers ----------------------------------------------------------


def write_csv(rows, path):
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


def write_json(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
        f.write("\n")


__all__ = [
    "BG",
    "FG",
    "UNK",
    "DEFAULT_SCALES",
    "METRIC_NAMES",
    "MetricReport",
    "TrimapQuality",
    "alpha_metrics",
    "evaluate_sequence",
    "trimap_quality",
    "write_csv",
    "write_json",
]
