"""Pieces shared by the search and training loops."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as D
from .autodiff import Tensor
from .config import DataConfig, TaskConfig, to_dict
from .errors import NumericalError
from .losses import LossConfig, psnr, restoration_loss, ssim_value

log = logging.getLogger("hinas")


class MetricsLog:
    """Append-only JSON-lines file; records hold no wall-clock fields so reruns diff cleanly."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        if not append:
            self.path.write_text("")

    def write(self, **record) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_config_echo(out_dir, cfg, extra: dict | None = None) -> None:
    doc = {"config": to_dict(cfg)}
    if extra:
        doc.update(extra)
    (Path(out_dir) / "config_echo.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_pairs(dc: DataConfig, task_cfg: TaskConfig, seed_offset: int = 0,
               count: int | None = None) -> list[D.ImagePair]:
    """Manifest images, or a synthetic set degraded with the configured noise/scale."""
    task = task_cfg.build()
    if dc.manifest is not None:
        doc, pairs = D.load_manifest(dc.manifest)
        want = "denoise" if task.kind == "denoise" else "sr"
        if doc["task"] != want:
            raise ValueError(f"manifest task {doc['task']!r} does not match {want!r}")
        return pairs
    seed = dc.seed + seed_offset
    clean = D.synth_dataset(dc.kind, dc.count if count is None else count, dc.size, seed)
    return D.make_pairs(clean, task, seed=seed + 7919, sigma=task_cfg.sigma, prefix=f"s{seed}_")


@dataclasses.dataclass
class Batch:
    x: Tensor
    y: Tensor
    split: str  # provenance tag: "W", "A" or "train"


def draw_batch(pairs: Sequence[D.ImagePair], split: str, batch: int, patch: int, augment: bool,
               rng: np.random.Generator, task_cfg: TaskConfig, resample_noise: bool) -> Batch:
    scale = task_cfg.scale if task_cfg.kind == "sr" else 1
    deg, clean = D.make_batch(pairs, batch, patch, augment, rng, scale)
    if resample_noise and task_cfg.kind == "denoise":
        deg = D.degrade_batch(clean, task_cfg.sigma, rng)
    return Batch(Tensor(deg), Tensor(clean), split)


def gradient_step(net, batch: Batch, loss_cfg: LossConfig, trainable, frozen):
    """Forward/backward with only ``trainable`` collecting gradients; returns (loss, output)."""
    for p in frozen:
        p.requires_grad = False
        p.grad = None
    for p in trainable:
        p.requires_grad = True
        p.grad = None
    out = net(batch.x)
    loss = restoration_loss(out, batch.y, loss_cfg)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} on a {batch.split} batch")
    loss.backward()
    for p in frozen:
        p.requires_grad = True
    return value, out


def evaluate_pairs(net, pairs: Sequence[D.ImagePair], tile: int, scale: int = 1,
                   loss_cfg: LossConfig | None = None) -> dict:
    """Tiled inference over ``pairs``; per-image and mean PSNR/SSIM (plus loss if asked)."""
    was_training = net.training
    net.eval()
    rows = []
    try:
        for p in pairs:
            if p.degraded.shape[-2] * scale != p.clean.shape[-2] or \
                    p.degraded.shape[-1] * scale != p.clean.shape[-1]:
                raise ValueError(f"{p.id}: degraded/clean shapes do not match scale {scale}")
            pred = D.tiled_inference(net, p.degraded, tile=tile, scale=scale)
            row = {"id": p.id, "psnr": psnr(pred, p.clean), "ssim": ssim_value(pred, p.clean)}
            if loss_cfg is not None:
                row["loss"] = float(restoration_loss(Tensor(pred[None].astype(np.float64)),
                                                     Tensor(p.clean[None].astype(np.float64)),
                                                     loss_cfg).data)
            rows.append(row)
    finally:
        net.train(was_training)
    report = {"images": rows,
              "psnr": float(np.mean([r["psnr"] for r in rows])),
              "ssim": float(np.mean([r["ssim"] for r in rows]))}
    if loss_cfg is not None:
        report["loss"] = float(np.mean([r["loss"] for r in rows]))
    return report


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state
