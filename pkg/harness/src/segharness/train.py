"""Training loop, early stopping, restarts and full-image evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from segharness.augment import augment, biased_crop
from segharness.data import load_pair, manifest_samples, normalize, tiling_plan
from segharness.metrics import N_CLASSES, confusion_matrix, scores_from_confusion
from segharness.model import UNetResNet50

SYNTHETIC_CLASS_WEIGHTS = (1.0, 2.0, 2.0)
REAL_CLASS_WEIGHTS = (1.0, 1.5, 1.5)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol for the segmentation experiments."""

    class_weights: tuple = SYNTHETIC_CLASS_WEIGHTS
    learning_rate: float = 1e-4
    fine_tune_learning_rate: float = 1e-5
    weight_decay: float = 1e-5
    max_epochs: int = 1000
    early_stop_patience: int = 5       # consecutive validations ...
    early_stop_rel_improvement: float = 1e-2  # ... without this much gain
    crop_size: int = 256
    crop_threshold: float = 15.0
    batch_size: int = 4
    eval_grid: int = 3
    restarts: int = 5
    pretrained: bool = True
    use_augmentation: bool = True
    seed: int = 0

    def __post_init__(self):
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def _batches(samples, manifest, config: TrainConfig, rng, epoch: int):
    order = rng.permutation(len(samples))
    for start in range(0, len(order), config.batch_size):
        imgs, masks = [], []
        for j, idx in enumerate(order[start:start + config.batch_size]):
            img, mask = load_pair(manifest, samples[idx])
            aug_seed = int(rng.integers(0, 2**63 - 1))
            if config.use_augmentation:
                img, mask = augment(img, mask, aug_seed)
            img, mask = biased_crop(img, mask, config.crop_size,
                                    config.crop_threshold, aug_seed ^ 0x5A5A)
            imgs.append(normalize(img))
            masks.append(mask.astype(np.int64))
        x = torch.from_numpy(np.stack(imgs)[:, None])
        y = torch.from_numpy(np.stack(masks))
        yield x, y


def _epoch_loss(model, manifest, samples, config, weights, optimizer=None,
                rng=None, epoch=0):
    total, count = 0.0, 0
    training = optimizer is not None
    model.train(training)
    rng = rng or np.random.default_rng(0)
    with torch.set_grad_enabled(training):
        for x, y in _batches(samples, manifest, config, rng, epoch):
            logits = model(x)
            loss = F.cross_entropy(logits, y, weight=weights)
            if training:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            total += float(loss.detach()) * x.shape[0]
            count += x.shape[0]
    return total / max(count, 1)


def train(config: TrainConfig, train_manifest, train_samples,
          val_manifest=None, val_samples=None, fine_tune_from=None):
    """Optimize one model; returns {'model', 'history', 'best_val'}.

    Validation runs once per epoch; training stops after
    early_stop_patience consecutive validations improving the best loss by
    less than the relative threshold, or at max_epochs.
    """
    torch.manual_seed(config.seed)
    model = UNetResNet50(N_CLASSES, pretrained=config.pretrained)
    lr = config.learning_rate
    if fine_tune_from is not None:
        model.load_state_dict(fine_tune_from)
        lr = config.fine_tune_learning_rate
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr,
                                  weight_decay=config.weight_decay)
    weights = torch.tensor(config.class_weights, dtype=torch.float32)
    rng = np.random.default_rng(np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF))

    history = {"train_loss": [], "val_loss": []}
    best_val = np.inf
    stale = 0
    for epoch in range(config.max_epochs):
        train_loss = _epoch_loss(model, train_manifest, train_samples, config,
                                 weights, optimizer, rng, epoch)
        history["train_loss"].append(train_loss)
        if val_manifest is not None and val_samples:
            val_loss = _epoch_loss(model, val_manifest, val_samples,
                                   replace(config, use_augmentation=False),
                                   weights)
            history["val_loss"].append(val_loss)
            if best_val - val_loss >= config.early_stop_rel_improvement * abs(best_val):
                stale = 0
            else:
                stale += 1
            best_val = min(best_val, val_loss)
            if stale >= config.early_stop_patience:
                break
    return {"model": model, "history": history,
            "best_val": None if best_val == np.inf else best_val}


def train_with_restarts(config: TrainConfig, train_manifest, train_samples,
                        val_manifest=None, val_samples=None):
    """Independent restarts from different seeds; the best validation (or
    final training) loss wins."""
    results = []
    for r in range(config.restarts):
        res = train(replace(config, seed=config.seed + r), train_manifest,
                    train_samples, val_manifest, val_samples)
        key = res["best_val"] if res["best_val"] is not None \
            else res["history"]["train_loss"][-1]
        results.append((key, res))
    return min(results, key=lambda kr: kr[0])[1]


@torch.no_grad()
def predict_full(model, image: np.ndarray, grid: int = 3) -> np.ndarray:
    """Full-image class map via the zero-padded tile grid."""
    model.eval()
    h, w = image.shape
    plan = tiling_plan(h, w, grid=grid)
    padded = np.pad(normalize(image), ((0, plan["pad_h"]), (0, plan["pad_w"])))
    out = np.zeros(padded.shape, dtype=np.int64)
    th, tw = plan["tile_h"], plan["tile_w"]
    for r0, c0 in plan["tiles"]:
        tile = padded[r0:r0 + th, c0:c0 + tw]
        logits = model(torch.from_numpy(tile[None, None]))
        out[r0:r0 + th, c0:c0 + tw] = logits.argmax(dim=1)[0].numpy()
    return out[:h, :w]


def evaluate(model, manifest, samples, grid: int = 3) -> dict:
    """mP/mR/mF1/mIoU over full images, background excluded from means."""
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for rec in samples:
        img, mask = load_pair(manifest, rec)
        pred = predict_full(model, img, grid=grid)
        conf += confusion_matrix(pred, mask)
    return scores_from_confusion(conf)
