"""scikit-learn style front end.

>>> from otvm.synthetic import make_sources
>>> est = OneTrimapVideoMatting(iterations={"1a": 5, "1b": 5, "2": 5, "3": 5, "4": 5})
>>> est.fit(make_sources(3, 96))                              # doctest: +SKIP
>>> alphas = est.predict((frames, first_trimap))              # doctest: +SKIP
"""
from __future__ import annotations

import copy

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clipsim import make_trimap
from .config import STAGE_NAMES, get_config, load_config
from .engine import run_sequence
from .model import build_model, load_checkpoint, save_checkpoint
from .trainer import FixedClips, SimulatedClips, run_stage, simulate_video_clips, stage_config
from .validation import check_alpha, check_sequence, check_sources


class OneTrimapVideoMatting(BaseEstimator):
    """Joint trimap propagation and alpha matting, trained stage by stage.

    ``fit`` takes still (fg, alpha, bg) triplets; clips are simulated from
    them for the image stages. The final stage trains on fixed clips: those
    passed as ``video`` or, by default, ``n_video_clips`` exact composites
    simulated once.
    ``predict`` takes ``(frames, first_trimap)`` and returns one alpha matte
    per frame.
    """

    def __init__(
        self,
        preset="toy",
        config=None,
        stages=STAGE_NAMES,
        iterations=None,
        batch_size=None,
        lr=None,
        frames=3,
        n_video_clips=3,
        seed=0,
        log_path=None,
        warm_start=False,
    ):
        self.preset = preset
        self.config = config
        self.stages = stages
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.frames = frames
        self.n_video_clips = n_video_clips
        self.seed = seed
        self.log_path = log_path
        self.warm_start = warm_start

    def _resolve_config(self):
        if self.config is None:
            cfg = get_config(self.preset)
        elif isinstance(self.config, (str, bytes)) or hasattr(self.config, "__fspath__"):
            cfg = load_config(self.config)
        else:
            cfg = copy.deepcopy(self.config)
        if self.iterations is not None:
            cfg.train.iterations = {**cfg.train.iterations, **self.iterations}
        if self.batch_size is not None:
            cfg.train.batch_size = int(self.batch_size)
        if self.lr is not None:
            cfg.train.lr = float(self.lr)
        cfg.train.frames = int(self.frames)
        cfg.train.seed = int(self.seed)
        return cfg

    def fit(self, X, y=None, video=None):
        for s in self.stages:
            if s not in STAGE_NAMES:
                raise ValueError(f"unknown stage {s!r}")
        cfg = self._resolve_config()
        sources = check_sources(X)
        if not (self.warm_start and hasattr(self, "model_")):
            self.model_ = build_model(cfg.model, seed=self.seed)
        torch.manual_seed(self.seed)
        if video is None:
            video = simulate_video_clips(sources, self.n_video_clips, cfg.train.frames, self.seed, cfg.sim)
        self.video_clips_ = list(video)
        image_data = SimulatedClips(sources, cfg.sim, cfg.train.frames, cfg.train.batch_size, self.seed)
        video_data = FixedClips(self.video_clips_, cfg.train.batch_size)
        self.stage_results_ = {}
        for s in self.stages:
            sc = stage_config(s, train_cfg=cfg.train)
            data = video_data if sc.dataset == "video" else image_data
            self.stage_results_[s] = run_stage(self.model_, sc, data, cfg.train, log_path=self.log_path)
        self.config_ = cfg
        return self

    def _split_input(self, X):
        try:
            frames, first_trimap = X
        except (TypeError, ValueError):
            raise ValueError("expected X = (frames, first_trimap)") from None
        return check_sequence(frames, first_trimap)

    def predict_outputs(self, X):
        """Every per-frame output (alpha, trimap, fg, bg, hidden, timing)."""
        check_is_fitted(self, "model_")
        frames, tri = self._split_input(X)
        return run_sequence(frames, tri, self.model_)

    def predict(self, X):
        return [r.alpha for r in self.predict_outputs(X)]

    def score(self, X, y):
        """Negative full-frame alpha MSE against ground-truth mattes ``y``."""
        pred = self.predict(X)
        if len(pred) != len(y):
            raise ValueError("ground truth length does not match the frame count")
        return -float(np.mean([np.mean((p - check_alpha(g)) ** 2) for p, g in zip(pred, y)]))

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_)

    @classmethod
    def from_checkpoint(cls, path, **params):
        model, header = load_checkpoint(path)
        est = cls(preset=header["preset"], **params)
        est.model_ = model
        est.config_ = get_config(header["preset"])
        est.config_.model = model.cfg
        return est


class TrimapGenerator(TransformerMixin, BaseEstimator):
    """Alpha mattes -> one-hot trimaps by dilating the fractional region."""

    def __init__(self, kernel=25):
        self.kernel = kernel

    def fit(self, X=None, y=None):
        k = int(self.kernel)
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {self.kernel}")
        self.kernel_ = k
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        return np.stack([make_trimap(check_alpha(a), self.kernel_) for a in X])
