"""Optimization loop: deterministic per-seed training with decoupled weight
decay, per-epoch validation metrics and exactly resumable checkpoints."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data.augment import augment, sample_rng
from .data.manifest import Manifest
from .data.normalize import NormStats, compute_stats, normalize_volume
from .data.samples import SliceSample, build_slice_samples
from .errors import TrainingError
from .losses import combined_loss, detection_loss, dice_loss, tversky_loss
from .model.net import GatedSegNet, load_checkpoint, save_checkpoint
from .optim import AdamW

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "train_seg_loss", "train_det_loss",
                  "val_dice_loss_mean", "val_dice_loss_std", "val_det_auc")


def batch_tensors(samples: list[SliceSample]):
    image = torch.from_numpy(np.stack([s.image for s in samples]))
    prev = torch.from_numpy(np.stack([s.prev_mask for s in samples])).float()
    gt = torch.from_numpy(np.stack([s.gt_mask for s in samples])).float()
    presence = torch.from_numpy(np.stack([s.presence for s in samples])).float()
    return image, prev, gt, presence


def _epoch_samples(volumes, config: TrainConfig, epoch: int) -> list[SliceSample]:
    samples = []
    for vol in volumes:
        for s in build_slice_samples(vol, "ground_truth"):
            if config.augment.enabled:
                rng = sample_rng(config.seed, epoch, s.subject_id, s.slice_index)
                s = augment(s, rng, config.augment)
            samples.append(s)
    return samples


@torch.no_grad()
def _validate(model: GatedSegNet, volumes, stats: NormStats, config: TrainConfig):
    """Per-slice Dice loss (hard counts at 0.5) and detection AUC on the
    validation split, teacher-forced context, augmentation disabled."""
    from .evaluation import detection_auc_values

    model.eval()
    dice_vals, det_probs, presences = [], [], []
    for vol in volumes:
        vol = normalize_volume(vol, stats)
        samples = build_slice_samples(vol, "ground_truth")
        for i in range(0, len(samples), config.batch_size):
            image, prev, gt, presence = batch_tensors(samples[i:i + config.batch_size])
            pred = model(image, prev)
            from .model.net import gate
            gated = gate(pred.seg_logits, pred.det_probs, config.eval_gating_mode,
                         config.model.gating_threshold)
            hard = (gated.seg_probs >= 0.5).float()
            dice_vals.append(dice_loss(hard, gt).flatten())
            det_probs.append(pred.det_probs)
            presences.append(presence)
    model.train()
    if not dice_vals:
        return float("nan"), float("nan"), float("nan")
    dice_all = torch.cat(dice_vals)
    det = torch.cat(det_probs).numpy()
    pres = torch.cat(presences).numpy()
    aucs = [a for a in detection_auc_values(det, pres) if a is not None]
    auc = float(np.mean(aucs)) if aucs else float("nan")
    return float(dice_all.mean()), float(dice_all.std(unbiased=False)), auc


def train(manifest: Manifest, config: TrainConfig, out_dir: str | Path,
          resume_from: str | Path | None = None) -> Path:
    """Train on the manifest's train split; returns the final checkpoint path.

    Writes metrics.csv (one row per epoch), periodic checkpoints and a LATEST
    pointer file into out_dir. Fully deterministic for a fixed config/seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_vols = manifest.load_split("train")
    if not train_vols:
        raise TrainingError("manifest train split is empty")
    val_vols = manifest.load_split("val") if "val" in manifest.splits else []

    torch.manual_seed(config.seed)
    model = GatedSegNet(config.model)
    model.train()
    stats = compute_stats(train_vols)
    train_vols = [normalize_volume(v, stats) for v in train_vols]

    optimizer = AdamW(dict(model.named_parameters()), lr=config.learning_rate,
                      weight_decay=config.weight_decay, beta1=config.beta1,
                      beta2=config.beta2, eps=config.eps)
    start_epoch, step = 0, 0
    metrics_rows: list[dict] = []

    if resume_from is not None:
        model_resumed, extra = load_checkpoint(resume_from)
        model.load_state_dict(model_resumed.state_dict())
        model.train()
        optimizer.load_state_dict(extra["optimizer"])
        start_epoch = extra["epoch"] + 1
        step = extra["step"]
        stats = NormStats.from_dict(extra["norm_stats"])
        metrics_rows = list(extra.get("metrics_rows", []))

    def checkpoint(path: Path, epoch: int):
        save_checkpoint(path, model, extra={
            "optimizer": optimizer.state_dict(),
            "epoch": epoch,
            "step": step,
            "norm_stats": stats.to_dict(),
            "train_config": config.to_dict(),
            "metrics_rows": metrics_rows,
        })
        (out_dir / "LATEST").write_text(path.name + "\n")

    for epoch in range(start_epoch, config.epochs):
        samples = _epoch_samples(train_vols, config, epoch)
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch, 1])
        ).permutation(len(samples))
        seg_losses, det_losses = [], []
        for i in range(0, len(samples), config.batch_size):
            batch = [samples[j] for j in order[i:i + config.batch_size]]
            image, prev, gt, presence = batch_tensors(batch)
            pred = model(image, prev)
            seg_term = tversky_loss(torch.sigmoid(pred.seg_logits), gt, config.tversky)
            det_term = detection_loss(pred.det_logits, presence)
            try:
                loss = combined_loss(seg_term, det_term, config.lambda_det)
            except Exception as exc:
                raise TrainingError(
                    f"epoch {epoch} step {step}: {exc} "
                    f"(batch subjects {[s.subject_id for s in batch]}, "
                    f"slices {[s.slice_index for s in batch]})"
                ) from exc
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            step += 1
            seg_losses.append(float(seg_term.detach()))
            det_losses.append(float(det_term.detach()))

        val_mean, val_std, val_auc = _validate(model, val_vols, stats, config)
        row = {
            "epoch": epoch,
            "step": step,
            "train_seg_loss": float(np.mean(seg_losses)),
            "train_det_loss": float(np.mean(det_losses)),
            "val_dice_loss_mean": val_mean,
            "val_dice_loss_std": val_std,
            "val_det_auc": val_auc,
        }
        metrics_rows.append(row)
        log.info("epoch %d: seg %.4f det %.4f val_dice %.4f",
                 epoch, row["train_seg_loss"], row["train_det_loss"], val_mean)
        if (epoch + 1) % config.checkpoint_every == 0:
            checkpoint(out_dir / f"ckpt_epoch{epoch:04d}.pt", epoch)

    final = out_dir / "final.pt"
    checkpoint(final, config.epochs - 1)
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in metrics_rows:
            writer.writerow({k: _fmt(row[k]) for k in METRIC_COLUMNS})
    return final


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v
