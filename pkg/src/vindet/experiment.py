"""Desk-scale overfit experiment.

Trains on a small synthetic set together with authentic twins of the same
scenes (empty masks), so the detector must key on fill evidence rather than
scene identity. Inpainted clips are oversampled 3:1 against twins. Training
runs in segments; after each segment the inpainted-clip masks and the
authentic-vs-inpainted frame AUC are measured and the best checkpoint by
mask quality is kept. Total iterations never exceed the configured budget.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .data import generate_dataset
from .model import InpaintingDetector
from .objectives import f1_metric, frame_score, frame_score_auc, miou_metric
from .tokenizer import VideoClip
from .train import evaluate_model, load_checkpoint, train


@dataclass
class OverfitResult:
    iterations: int
    train_miou: float
    train_f1: float
    auc: float
    checkpoint: str
    inpainted_scores: list[float] = field(default_factory=list)
    authentic_scores: list[float] = field(default_factory=list)
    history: list[str] = field(default_factory=list)


def _measure(model: InpaintingDetector, inpainted, twins):
    ious, f1s, pos_scores, neg_scores = [], [], [], []
    for _, clip, mask in inpainted:
        with T.no_grad():
            m = model(clip.frames).data
        ious.append(miou_metric(m, mask))
        f1s.append(f1_metric(m, mask))
        pos_scores.append(frame_score(m))
    for _, clip, _ in twins:
        with T.no_grad():
            neg_scores.append(frame_score(model(clip.frames).data))
    auc = frame_score_auc(pos_scores + neg_scores,
                          [1] * len(pos_scores) + [0] * len(neg_scores))
    return float(np.mean(ious)), float(np.mean(f1s)), auc, pos_scores, neg_scores


def run_overfit_experiment(cfg: ExperimentConfig, work_dir: str,
                           n_clips: int = 8, first_check: int = 300,
                           check_every: int = 25,
                           stop_miou: float = 0.955,
                           stop_f1: float = 0.975,
                           stop_auc: float = 0.99) -> OverfitResult:
    cfg.validate()
    os.makedirs(work_dir, exist_ok=True)
    clips = generate_dataset(n_clips, cfg.seed, cfg)
    inpainted = [(f"clip_{i:04d}", sc.clip, sc.gt_mask) for i, sc in enumerate(clips)]
    twins = [
        (f"auth_{i:04d}", VideoClip(sc.recipe.render(False)[0]),
         np.zeros((cfg.geometry.height, cfg.geometry.width)))
        for i, sc in enumerate(clips)
    ]
    train_set = inpainted * 3 + twins

    max_iter = cfg.train.iters
    checkpoints = sorted({min(max_iter, k) for k in
                          range(first_check, max_iter + check_every, check_every)})
    history: list[str] = []
    best = None
    resume = None
    model = InpaintingDetector(cfg)
    for stop in checkpoints:
        seg_dir = os.path.join(work_dir, f"seg_{stop:04d}")
        res = train(cfg, seg_dir, resume=resume, dataset=train_set, stop_iter=stop)
        resume = res.checkpoint
        load_checkpoint(res.checkpoint, model)
        miou, f1, auc, pos, neg = _measure(model, inpainted, twins)
        history.append(f"iter={res.final_iter} miou={miou:.4f} f1={f1:.4f} auc={auc:.4f}")
        cand = OverfitResult(res.final_iter, miou, f1, auc, res.checkpoint, pos, neg)
        if best is None or cand.train_miou > best.train_miou:
            best = cand
        if miou >= stop_miou and f1 >= stop_f1 and auc >= stop_auc:
            best = cand
            break
    best.history = history
    return best
