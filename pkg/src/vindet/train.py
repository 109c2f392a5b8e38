"""SGD training with poly learning-rate decay, evaluation, checkpoints.

Encoder and decoder parameters use separate learning rates. Batch selection
is a stateless function of (seed, iteration) so resuming from a checkpoint
replays the exact remaining trajectory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn, serialize
from . import tensor as T
from .config import ExperimentConfig
from .data import apply_perturbation, load_dataset
from .model import InpaintingDetector
from .objectives import f1_metric, frame_score, frame_score_auc, miou_metric, total_loss
from .tensor import Tensor, backward


class NumericalError(RuntimeError):
    """Loss or gradients became non-finite."""


def poly_lr(it: int, max_iter: int, lr0: float, min_lr: float = 1e-5,
            power: float = 0.9) -> float:
    """(lr0 - min) * (1 - it/max)^power + min; clamps past the end."""
    if it >= max_iter or max_iter == 0:
        return min_lr
    it = max(it, 0)
    return (lr0 - min_lr) * (1.0 - it / max_iter) ** power + min_lr


def poly_lr_pair(it: int, cfg: ExperimentConfig) -> tuple[float, float]:
    o = cfg.optim
    n = cfg.train.iters
    return (poly_lr(it, n, o.lr_encoder, o.min_lr, o.poly_power),
            poly_lr(it, n, o.lr_decoder, o.min_lr, o.poly_power))


def sgd_step(registry: dict[str, nn.Parameter], lr_of, weight_decay: float,
             momentum: float, velocities: dict[str, np.ndarray]) -> None:
    """v <- mu*v + g + wd*theta; theta <- theta - lr*v, in name order."""
    for name, p in registry.items():
        if p.tensor.grad is None:
            raise ValueError(f"sgd_step: parameter {name} has no gradient")
        g = p.tensor.grad + weight_decay * p.data
        v = velocities.get(name)
        v = g if v is None else momentum * v + g
        velocities[name] = v
        p.data[...] = p.data - lr_of(name) * v


def _batch_indices(rng: np.random.Generator, n: int, batch: int,
                   positives: np.ndarray | None = None) -> np.ndarray:
    """Uniform batch sampling; when the dataset mixes empty and non-empty
    masks, batches are stratified to the dataset's class ratio so per-batch
    gradients do not swing with composition."""
    if positives is None or positives.all() or not positives.any():
        return rng.choice(n, size=batch, replace=n < batch)
    pos_idx = np.flatnonzero(positives)
    neg_idx = np.flatnonzero(~positives)
    n_pos = min(max(int(round(batch * pos_idx.size / n)), 1), batch - 1)
    take_p = rng.choice(pos_idx, size=n_pos, replace=pos_idx.size < n_pos)
    take_n = rng.choice(neg_idx, size=batch - n_pos,
                        replace=neg_idx.size < batch - n_pos)
    return np.concatenate([take_p, take_n])


def _dihedral(frames: np.ndarray, mask: np.ndarray, k: int):
    """One of the 8 square symmetries applied to a clip and its mask."""
    f = np.rot90(frames, k % 4, axes=(1, 2))
    m = np.rot90(mask, k % 4)
    if k >= 4:
        f = f[:, :, ::-1]
        m = m[:, ::-1]
    return np.ascontiguousarray(f), np.ascontiguousarray(m)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: InpaintingDetector,
                    velocities: dict[str, np.ndarray], iteration: int):
    blobs: dict[str, np.ndarray] = {}
    for name, p in model.registry().items():
        blobs[f"param/{name}"] = p.data
    for name, v in velocities.items():
        blobs[f"opt/momentum/{name}"] = v
    blobs["meta/iter"] = np.array(float(iteration))
    serialize.save_container(path, blobs)


def load_checkpoint(path, model: InpaintingDetector):
    blobs = serialize.load_container(path)
    registry = model.registry()
    for name, p in registry.items():
        key = f"param/{name}"
        if key not in blobs:
            raise ValueError(f"checkpoint missing parameter {name}")
        if blobs[key].shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        p.data[...] = blobs[key]
    velocities = {
        name[len("opt/momentum/"):]: arr
        for name, arr in blobs.items() if name.startswith("opt/momentum/")
    }
    iteration = int(blobs.get("meta/iter", np.array(0.0)).reshape(()))
    return velocities, iteration


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    lines: list[str]
    mean_miou: float
    mean_f1: float
    auc: float | None

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def evaluate_model(model: InpaintingDetector, dataset, cfg: ExperimentConfig,
                   perturb: bool = False, dump_dir: str | None = None) -> EvalReport:
    """Per-clip metrics plus frame-level AUC when both classes appear.

    ``dataset`` is a list of (clip_id, VideoClip, mask) triples. With
    ``dump_dir`` set, each prediction is written as `<clip_id>_pred.pgm`
    (round(255*M)) and `<clip_id>_mask.pgm` (255 where M > 0.5).
    """
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
    lines = []
    ious, f1s, scores, labels = [], [], [], []
    for idx, (clip_id, clip, mask) in enumerate(dataset):
        if perturb:
            clip = apply_perturbation(clip, cfg, cfg.seed * 1009 + idx)
        with T.no_grad():
            m = model(clip.frames).data
        if dump_dir is not None:
            from .tokenizer import write_pgm

            write_pgm(os.path.join(dump_dir, f"{clip_id}_pred.pgm"), m)
            write_pgm(os.path.join(dump_dir, f"{clip_id}_mask.pgm"),
                      (m > 0.5).astype(np.float64))
        iou = miou_metric(m, mask)
        f1 = f1_metric(m, mask)
        score = frame_score(m)
        ious.append(iou)
        f1s.append(f1)
        scores.append(score)
        labels.append(bool(mask.any()))
        lines.append(f"{clip_id} {iou:.6f} {f1:.6f} {score:.6f}")
    auc = None
    if any(labels) and not all(labels):
        auc = frame_score_auc(scores, labels)
    mean_miou = float(np.mean(ious))
    mean_f1 = float(np.mean(f1s))
    summary = f"summary {mean_miou:.6f} {mean_f1:.6f} n={len(dataset)}"
    if auc is not None:
        summary += f" auc={auc:.6f}"
    lines.append(summary)
    return EvalReport(lines, mean_miou, mean_f1, auc)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: str
    metrics_log: str
    final_iter: int
    final_miou: float
    final_f1: float
    log_lines: list[str] = field(default_factory=list)


def train(cfg: ExperimentConfig, out_dir: str, resume: str | None = None,
          dataset=None, stop_iter: int | None = None) -> TrainResult:
    """Run the training loop; ``stop_iter`` pauses the configured schedule
    early (the poly decay still spans cfg.train.iters) so segments can be
    chained through checkpoints."""
    cfg.validate()
    if dataset is None:
        dataset = load_dataset(cfg.data.dir)
    os.makedirs(out_dir, exist_ok=True)

    model = InpaintingDetector(cfg)
    registry = model.registry()
    enc_names = model.encoder_param_names()
    velocities: dict[str, np.ndarray] = {}
    start = 0
    if resume is not None:
        velocities, start = load_checkpoint(resume, model)

    n = len(dataset)
    positives = np.array([bool(np.any(mask > 0.5)) for _, _, mask in dataset])
    log: list[str] = []
    last_miou = last_f1 = 0.0
    end = cfg.train.iters if stop_iter is None else min(stop_iter, cfg.train.iters)
    it = start
    for it in range(start, end):
        lr_enc, lr_dec = poly_lr_pair(it, cfg)
        lr_of = lambda name: lr_enc if name in enc_names else lr_dec
        nn.zero_grads(registry.values())

        rng = np.random.default_rng([cfg.seed, 7919, it])
        batch = _batch_indices(rng, n, cfg.train.batch, positives)
        loss = None
        for bi in batch:
            _, clip, mask = dataset[int(bi)]
            frames = clip.frames
            if cfg.train.augment:
                frames, mask = _dihedral(frames, mask, int(rng.integers(0, 8)))
            term = total_loss(model(frames), Tensor(mask), cfg.loss)
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / len(batch))
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss at iteration {it}")
        backward(loss)
        sgd_step(registry, lr_of, cfg.optim.weight_decay, cfg.optim.momentum, velocities)

        done = it + 1
        if done % cfg.train.eval_every == 0 or done == end:
            rep = evaluate_model(model, dataset, cfg)
            last_miou, last_f1 = rep.mean_miou, rep.mean_f1
            log.append(f"iter={done} loss={value:.8e} lr_enc={lr_enc:.8e} "
                       f"lr_dec={lr_dec:.8e} miou={rep.mean_miou:.6f} f1={rep.mean_f1:.6f}")
            if cfg.train.target_miou and rep.mean_miou >= cfg.train.target_miou:
                break

    ckpt = os.path.join(out_dir, "checkpoint.mpci")
    final = it + 1 if end > start else start
    save_checkpoint(ckpt, model, velocities, final)
    log_path = os.path.join(out_dir, "metrics.log")
    with open(log_path, "w") as fh:
        fh.write("\n".join(log) + ("\n" if log else ""))
    return TrainResult(ckpt, log_path, final, last_miou, last_f1, log)
