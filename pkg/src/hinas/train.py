"""Training and evaluation of derived compact networks."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from . import derive
from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import TaskConfig, TrainConfig, from_dict, to_dict
from .data import ImagePair, SplitSpec, split_wav
from .engine import (MetricsLog, draw_batch, evaluate_pairs, gradient_step, load_pairs, log,
                     rng_state, write_config_echo)
from .errors import NumericalError
from .losses import psnr, ssim_value
from .optim import SGD, clip_grad_norm, cosine_lr


@dataclasses.dataclass
class TrainResult:
    net: derive.CompactNet
    final_val: dict
    best_val_psnr: float
    best_iteration: int
    params: int
    out_dir: str


def architecture_doc(genotypes, path: derive.WidthPath | None, width: int, task_cfg: TaskConfig,
                     node_widths: Sequence[int] | None = None) -> dict:
    return {"genotypes": [g.to_json() for g in genotypes],
            "path": path.to_json() if path is not None else None,
            "node_widths": list(node_widths) if node_widths is not None else None,
            "width": width, "task": dataclasses.asdict(task_cfg)}


def net_from_architecture(doc: dict, seed: int = 0, slope: float = 0.2) -> derive.CompactNet:
    genotypes = [derive.CellGenotype.from_json(g) for g in doc["genotypes"]]
    path = derive.WidthPath.from_json(doc["path"]) if doc.get("path") else None
    task = from_dict(TaskConfig, doc["task"]).build()
    n_layers = len(path.levels) if path is not None else len(doc["node_widths"])
    net = derive.build_compact_net(genotypes, path, doc["width"], task, n_layers=n_layers,
                                   node_widths=doc.get("node_widths"), seed=seed, slope=slope)
    return net


def training_data(cfg: TrainConfig) -> tuple[list[ImagePair], list[ImagePair]]:
    """Training pairs and a disjoint validation set."""
    pairs = load_pairs(cfg.data, cfg.task)
    if cfg.data.manifest is not None:
        by_id = {p.id: p for p in pairs}
        w, a, v = split_wav(sorted(by_id), SplitSpec(cfg.data.frac_val, cfg.seed))
        return [by_id[i] for i in w + a], [by_id[i] for i in v]
    # synthetic: an independently seeded validation set
    return pairs, load_pairs(cfg.data, cfg.task, seed_offset=100_003, count=cfg.val_count)


def run_train(genotypes, path: derive.WidthPath | None, cfg: TrainConfig, out_dir,
              node_widths: Sequence[int] | None = None) -> TrainResult:
    """Fresh compact net trained with momentum SGD under a per-iteration cosine schedule."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch = architecture_doc(genotypes, path, cfg.width, cfg.task, node_widths)
    write_config_echo(out, cfg, {"command": "train", "architecture": arch})
    task = cfg.task.build()
    scale = task.scale if task.kind == "sr" else 1
    net = net_from_architecture(arch, seed=cfg.seed, slope=cfg.leaky_slope).train()
    n_params = derive.count_params(net)
    train_pairs, val_pairs = training_data(cfg)
    named = list(net.named_parameters())
    params = [p for _, p in named]
    sgd = SGD(named, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    metrics = MetricsLog(out / "metrics.jsonl")
    best_psnr, best_it, val = -math.inf, 0, {}

    def meta(it):
        return {"kind": "train", "config": to_dict(cfg), "iteration": it, "architecture": arch,
                "rng": rng_state(rng), "best_val_psnr": best_psnr}

    window = []
    for it in range(1, cfg.iterations + 1):
        lr = cosine_lr(it - 1, cfg.iterations, cfg.lr0, cfg.lr_min)
        b = draw_batch(train_pairs, "train", cfg.batch_size, cfg.patch, cfg.augment, rng, cfg.task,
                       cfg.data.resample_noise)
        try:
            value, _ = gradient_step(net, b, cfg.loss, params, [])
            clip_grad_norm(params, cfg.grad_clip)
            sgd.step(lr)
        except NumericalError:
            save_checkpoint(out / "failed.ckpt", net, meta(it), {"sgd": sgd})
            raise
        window.append(value)
        if it % cfg.log_every == 0 or it == cfg.iterations:
            metrics.write(step=it, split="train", loss=float(np.mean(window)), lr=lr, psnr=None,
                          ssim=None)
            window = []
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            val = evaluate_pairs(net, val_pairs, cfg.val_tile, scale, cfg.loss)
            metrics.write(step=it, split="val", loss=val["loss"], psnr=val["psnr"], ssim=val["ssim"])
            log.info("iter %d  val PSNR %.3f  SSIM %.4f", it, val["psnr"], val["ssim"])
            if val["psnr"] > best_psnr:
                best_psnr, best_it = val["psnr"], it
                save_checkpoint(out / "best.ckpt", net, meta(it), {"sgd": sgd})
    save_checkpoint(out / "final.ckpt", net, meta(cfg.iterations), {"sgd": sgd})
    summary = {"params": n_params, "best_val_psnr": best_psnr, "best_iteration": best_it,
               "final_val_psnr": val["psnr"], "final_val_ssim": val["ssim"]}
    (out / "train_result.json").write_text(json.dumps(summary, indent=2) + "\n")
    return TrainResult(net, val, best_psnr, best_it, n_params, str(out))


def load_trained(path) -> tuple[derive.CompactNet, dict]:
    """Compact net plus checkpoint header from a training checkpoint."""
    ck = load_checkpoint(path)
    if ck.meta.get("kind") != "train":
        raise ValueError(f"{path} is not a training checkpoint")
    net = net_from_architecture(ck.meta["architecture"])
    restore(ck, net)
    return net.eval(), ck.meta


def run_eval(net, pairs: Sequence[ImagePair], tile: int = 64) -> dict:
    """Per-image and mean PSNR/SSIM, with the degraded input's own scores for reference.

    For super-resolution the reference is the bicubic upscale of the input.
    """
    task = net.task
    scale = task.scale if task.kind == "sr" else 1
    for p in pairs:
        if p.degraded.shape[-1] * scale != p.clean.shape[-1]:
            raise ValueError(f"{p.id}: pair does not fit a {task.kind} task with scale {scale}")
    report = evaluate_pairs(net, pairs, tile, scale)
    for row, p in zip(report["images"], pairs):
        ref = p.degraded if scale == 1 else _bicubic_up(p.degraded, scale)
        row["input_psnr"] = psnr(ref, p.clean)
        row["input_ssim"] = ssim_value(ref, p.clean)
    report["input_psnr"] = float(np.mean([r["input_psnr"] for r in report["images"]]))
    report["input_ssim"] = float(np.mean([r["input_ssim"] for r in report["images"]]))
    report["count"] = len(pairs)
    return report


def _bicubic_up(img: np.ndarray, scale: int) -> np.ndarray:
    from .autodiff import Tensor, no_grad
    from .autodiff import functional as F

    with no_grad():
        return F.bicubic_resize(Tensor(img[None]), scale, "up").data[0]
