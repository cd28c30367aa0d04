"""Files on disk: PNG frames/mattes/trimaps, clip folders and JSON manifests.

Images are read as RGB float64 in [0, 1]. Alpha mattes are single-channel
PNGs, 8- or 16-bit. Trimaps are 8-bit PNGs with 0 = background,
128 = unknown, 255 = foreground.

A clip folder written by :func:`write_clip` looks like::

    clip_0000/
        manifest.json
        frame_000.png  alpha_000.png  trimap_000.png  fg_000.png  bg_000.png
        ...
"""
from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .clipsim import ClipSample, composite, simulate_clip, trimap_from_png, trimap_to_png

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST = "manifest.json"


class DataError(OSError):
    """Missing, empty or malformed input data."""


# -- single images -------------------------------------------------------------


def _imread(path, flags):
    img = cv2.imread(str(path), flags)
    if img is None:
        raise DataError(f"cannot read image {path}")
    return img


def _to_unit(img):
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    return img.astype(np.float64) / 255.0


def read_image(path):
    """H x W x 3 RGB in [0, 1]."""
    img = _imread(path, cv2.IMREAD_COLOR)
    return _to_unit(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))


def read_rgba(path):
    """(rgb, alpha) from a 4-channel image; alpha is all ones if the file has none."""
    img = _imread(path, cv2.IMREAD_UNCHANGED)
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2BGR)
    rgb = _to_unit(cv2.cvtColor(img[..., :3], cv2.COLOR_BGR2RGB))
    alpha = _to_unit(img[..., 3]) if img.shape[2] == 4 else np.ones(img.shape[:2])
    return rgb, alpha


def write_image(path, img, bits=8):
    img = np.clip(np.asarray(img, np.float64), 0.0, 1.0)
    scale, dtype = (65535.0, np.uint16) if bits == 16 else (255.0, np.uint8)
    out = np.round(img * scale).astype(dtype)
    if out.ndim == 3:
        out = cv2.cvtColor(out, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), out):
        raise DataError(f"cannot write {path}")


def read_alpha(path):
    img = _imread(path, cv2.IMREAD_UNCHANGED)
    if img.ndim == 3:
        img = img[..., -1] if img.shape[2] == 4 else img[..., 0]
    return _to_unit(img)


def write_alpha(path, alpha, bits=8):
    alpha = np.asarray(alpha, np.float64)
    if alpha.ndim == 3:
        alpha = alpha[..., 0]
    write_image(path, alpha, bits)


def read_trimap(path):
    return trimap_from_png(_imread(path, cv2.IMREAD_GRAYSCALE))


def write_trimap(path, trimap):
    if not cv2.imwrite(str(path), trimap_to_png(trimap)):
        raise DataError(f"cannot write {path}")


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def read_frames(directory):
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no frames in {directory}")
    return [read_image(p) for p in paths], paths


# -- manifests -----------------------------------------------------------------


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# -- clips ---------------------------------------------------------------------


def write_clip(directory, clip, sources=None):
    """Write every layer of ``clip`` (alpha as 16-bit PNG) plus a clip manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in range(clip.T):
        names = {k: f"{k}_{t:03d}.png" for k in ("frame", "alpha", "trimap", "fg", "bg")}
        write_image(d / names["frame"], clip.frames[t])
        write_alpha(d / names["alpha"], clip.alphas[t], bits=16)
        write_trimap(d / names["trimap"], clip.trimaps[t])
        write_image(d / names["fg"], clip.fg[t])
        write_image(d / names["bg"], clip.bg[t])
        entries.append(names)
    manifest = {"kind": "clip", "T": clip.T, "frames": entries, "params": clip.params}
    if sources:
        manifest["sources"] = sources
    write_json(d / MANIFEST, manifest)
    return manifest


def read_clip(directory):
    d = Path(directory)
    m = read_json(d / MANIFEST)
    layers = {k: [] for k in ("frame", "alpha", "trimap", "fg", "bg")}
    for names in m["frames"]:
        layers["frame"].append(read_image(d / names["frame"]))
        layers["alpha"].append(read_alpha(d / names["alpha"]))
        layers["trimap"].append(read_trimap(d / names["trimap"]))
        layers["fg"].append(read_image(d / names["fg"]))
        layers["bg"].append(read_image(d / names["bg"]))
    return ClipSample(
        layers["frame"], layers["alpha"], layers["trimap"], layers["fg"], layers["bg"], m.get("params", {})
    )


def read_clip_set(directory):
    """All clips listed in a datagen output folder."""
    d = Path(directory)
    m = read_json(d / MANIFEST)
    if m.get("kind") != "clip_set":
        raise DataError(f"{d} is not a clip set")
    return [read_clip(d / name) for name in m["clips"]]


# -- still sources ---------------------------------------------------------------


def load_fg_sources(fg_dir, alpha_dir=None):
    """Foregrounds with their mattes: RGBA files, or RGB files paired by name with ``alpha_dir``."""
    paths = list_images(fg_dir)
    if not paths:
        raise DataError(f"no foreground images in {fg_dir}")
    out = []
    for p in paths:
        if alpha_dir is None:
            rgb, alpha = read_rgba(p)
        else:
            rgb = read_image(p)
            match = [q for q in list_images(alpha_dir) if q.stem == p.stem]
            if not match:
                raise DataError(f"no matte for {p.name} in {alpha_dir}")
            alpha = read_alpha(match[0])
            if alpha.shape != rgb.shape[:2]:
                raise DataError(f"matte {match[0].name} does not match {p.name}")
        out.append((p.name, rgb, alpha))
    return out


def load_bg_sources(bg_dir):
    paths = list_images(bg_dir)
    if not paths:
        raise DataError(f"no background images in {bg_dir}")
    return [(p.name, read_image(p)) for p in paths]


def load_source_dir(directory):
    """(fg, alpha, bg) triplets from a folder with ``fg/``, ``alpha/`` and ``bg/`` subfolders.

    Backgrounds are paired with foregrounds cyclically.
    """
    d = Path(directory)
    fgs = load_fg_sources(d / "fg", d / "alpha" if (d / "alpha").is_dir() else None)
    bgs = load_bg_sources(d / "bg")
    return [(rgb, alpha, bgs[i % len(bgs)][1]) for i, (_, rgb, alpha) in enumerate(fgs)]


def load_video_triplets(root, T=3, stride=1):
    """Fixed T-frame clips from sequences laid out as ``root/<seq>/{fg,alpha,bg}/``.

    Frames are paired by sorted order; trimaps are left empty here and made
    by the caller (``make_trimap``) so the kernel stays a training choice.
    """
    root = Path(root)
    seqs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not seqs:
        raise DataError(f"no sequences under {root}")
    windows = []
    for seq in seqs:
        fg_p, a_p, bg_p = (list_images(seq / k) for k in ("fg", "alpha", "bg"))
        if not (len(fg_p) == len(a_p) == len(bg_p)) or not fg_p:
            raise DataError(f"{seq}: fg/alpha/bg frame counts differ or are empty")
        fg = [read_image(p) for p in fg_p]
        al = [read_alpha(p) for p in a_p]
        bg = [read_image(p) for p in bg_p]
        for s in range(0, len(fg) - T + 1, stride):
            idx = range(s, s + T)
            frames = [composite(fg[i], al[i], bg[i]) for i in idx]
            windows.append(
                dict(
                    sequence=seq.name,
                    start=s,
                    frames=frames,
                    alphas=[al[i] for i in idx],
                    fg=[fg[i] for i in idx],
                    bg=[bg[i] for i in idx],
                )
            )
    return windows


def generate_clip_set(out_dir, fg_sources, bg_sources, count, T=3, seed=0, sim_cfg=None):
    """Simulate ``count`` clips and write them with a top-level manifest.

    Source pairing and per-clip seeds derive from ``seed`` only, so two runs
    with the same inputs write identical files.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        fi, bi = int(rng.integers(len(fg_sources))), int(rng.integers(len(bg_sources)))
        clip_seed = int(rng.integers(2**31))
        fname, fg, alpha = fg_sources[fi]
        bname, bg = bg_sources[bi]
        clip = simulate_clip(fg, alpha, bg, T, clip_seed, sim_cfg)
        name = f"clip_{i:04d}"
        write_clip(out / name, clip, sources={"fg": fname, "bg": bname})
        names.append(name)
    write_json(out / MANIFEST, {"kind": "clip_set", "count": count, "frames": T, "seed": seed, "clips": names})
    return names
