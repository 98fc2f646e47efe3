"""Alternating kernel/architecture optimisation of the supernet."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Callable

import numpy as np

from . import derive
from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import SearchConfig, to_dict
from .data import SplitSpec, split_wav
from .engine import (MetricsLog, draw_batch, evaluate_pairs, gradient_step, load_pairs, log,
                     rng_state, set_rng_state, write_config_echo)
from .errors import NumericalError
from .optim import SGD, Adam, clip_grad_norm, cosine_lr
from .supernet import SuperNet


@dataclasses.dataclass
class SearchResult:
    best_epoch: int
    best_val_psnr: float
    best_val_ssim: float
    genotypes: list
    path: derive.WidthPath
    checkpoint: str
    steps_by_split: dict

    def to_json(self) -> dict:
        return {"best_epoch": self.best_epoch, "best_val_psnr": self.best_val_psnr,
                "best_val_ssim": self.best_val_ssim,
                "genotypes": [g.to_json() for g in self.genotypes], "path": self.path.to_json(),
                "checkpoint": self.checkpoint, "steps_by_split": self.steps_by_split}


def build_supernet(cfg: SearchConfig) -> SuperNet:
    return SuperNet(cfg.width, cfg.nodes, cfg.layers, cfg.task.build(), seed=cfg.seed, lwas=cfg.lwas,
                    cell_sharing=cfg.cell_sharing, affine=cfg.bn_affine, slope=cfg.leaky_slope)


def snapshot(net: SuperNet) -> dict:
    return {"alpha": [a.tolist() for a in net.alpha_logits()],
            "beta": [[b.tolist() for b in layer] for layer in net.beta_logits()]}


def decode(net: SuperNet) -> tuple[list[derive.CellGenotype], derive.WidthPath]:
    alphas = net.alpha_logits() if net.lwas else net.alpha_logits()[:1]
    return derive.derive_genotypes(alphas, net.n_nodes), derive.viterbi_widths(net.beta_logits())


def split_data(cfg: SearchConfig):
    pairs = load_pairs(cfg.data, cfg.task)
    by_id = {p.id: p for p in pairs}
    w_ids, a_ids, v_ids = split_wav(sorted(by_id), SplitSpec(cfg.data.frac_val, cfg.seed))
    return [by_id[i] for i in w_ids], [by_id[i] for i in a_ids], [by_id[i] for i in v_ids]


def run_search(cfg: SearchConfig, out_dir, resume: str | None = None,
               on_epoch: Callable[[int, SuperNet], None] | None = None) -> SearchResult:
    """Warm up kernels, then alternate kernel (W) and architecture (A) steps each iteration.

    From ``eval_from_epoch`` the validation split is scored every epoch and the
    best-PSNR state is kept; the architecture is decoded from that state.
    ``on_epoch(epoch, net)`` runs after each epoch's updates.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(out, cfg, {"command": "search"})
    task = cfg.task.build()
    scale = task.scale if task.kind == "sr" else 1

    w_pairs, a_pairs, v_pairs = split_data(cfg)
    if not (w_pairs and a_pairs and v_pairs):
        raise ValueError("empty W/A/V split")
    net = build_supernet(cfg).train()
    arch = net.arch_parameters()
    arch_ids = {id(p) for p in arch}
    named = list(net.named_parameters())
    weights = [p for _, p in named if id(p) not in arch_ids]
    sgd = SGD([(n, p) for n, p in named if id(p) not in arch_ids],
              momentum=cfg.sgd.momentum, weight_decay=cfg.sgd.weight_decay)
    adam = Adam([(n, p) for n, p in named if id(p) in arch_ids], lr=cfg.adam.lr,
                weight_decay=cfg.adam.weight_decay, beta1=cfg.adam.beta1, beta2=cfg.adam.beta2,
                eps=cfg.adam.eps)
    optimizers = {"sgd": sgd, "adam": adam}
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    iters = math.ceil(len(w_pairs) / cfg.batch_size)
    steps = {"W": 0, "A": 0, "V": 0}
    best = {"epoch": 0, "psnr": -math.inf, "ssim": float("nan")}
    start = 1
    metrics = MetricsLog(out / "metrics.jsonl", append=resume is not None)

    def meta(epoch):
        return {"kind": "search", "config": to_dict(cfg), "epoch": epoch, "rng": rng_state(rng),
                "steps": dict(steps), "best": dict(best), "arch": snapshot(net)}

    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.meta.get("kind") != "search":
            raise ValueError(f"{resume} is not a search checkpoint")
        restore(ck, net, optimizers)
        set_rng_state(rng, ck.meta["rng"])
        steps.update(ck.meta["steps"])
        best.update(ck.meta["best"])
        start = ck.meta["epoch"] + 1

    best_path = out / "best.ckpt"
    for epoch in range(start, cfg.epochs_max + 1):
        lr = cosine_lr(epoch - 1, cfg.epochs_max, cfg.sgd.lr_max, cfg.sgd.lr_min)
        searching = epoch > cfg.warmup_epochs
        w_losses, a_losses = [], []
        try:
            for _ in range(iters):
                b = draw_batch(w_pairs, "W", cfg.batch_size, cfg.patch, cfg.augment, rng,
                               cfg.task, cfg.data.resample_noise)
                assert b.split == "W"
                value, _ = gradient_step(net, b, cfg.loss, weights, arch)
                clip_grad_norm(weights, cfg.sgd.grad_clip)
                sgd.step(lr)
                steps["W"] += 1
                w_losses.append(value)
                if searching:
                    b = draw_batch(a_pairs, "A", cfg.batch_size, cfg.patch, cfg.augment, rng,
                                   cfg.task, cfg.data.resample_noise)
                    assert b.split == "A"
                    value, _ = gradient_step(net, b, cfg.loss, arch, weights)
                    adam.step()
                    steps["A"] += 1
                    a_losses.append(value)
        except NumericalError:
            save_checkpoint(out / "failed.ckpt", net, meta(epoch), optimizers)
            raise
        if on_epoch is not None:
            on_epoch(epoch, net)
        record = {"step": steps["W"], "epoch": epoch, "split": "W", "loss": float(np.mean(w_losses)),
                  "lr": lr, "psnr": None, "ssim": None}
        metrics.write(**record)
        if a_losses:
            metrics.write(step=steps["W"], epoch=epoch, split="A", loss=float(np.mean(a_losses)),
                          psnr=None, ssim=None)
        if epoch >= cfg.eval_from_epoch:
            rep = evaluate_pairs(net, v_pairs, cfg.val_tile, scale, cfg.loss)
            steps["V"] += 1
            metrics.write(step=steps["W"], epoch=epoch, split="V", loss=rep["loss"], psnr=rep["psnr"],
                          ssim=rep["ssim"])
            if rep["psnr"] > best["psnr"]:
                best.update(epoch=epoch, psnr=rep["psnr"], ssim=rep["ssim"])
                save_checkpoint(best_path, net, meta(epoch), optimizers)
            log.info("epoch %d  W loss %.5f  val PSNR %.3f", epoch, record["loss"], rep["psnr"])
        else:
            log.info("epoch %d  W loss %.5f", epoch, record["loss"])
        save_checkpoint(out / "last.ckpt", net, meta(epoch), optimizers)

    restore(load_checkpoint(best_path), net)
    genotypes, path = decode(net)
    derive.save_architecture(out / "architecture.json", genotypes, path)
    result = SearchResult(best["epoch"], best["psnr"], best["ssim"], genotypes, path, str(best_path),
                          dict(steps))
    (out / "search_result.json").write_text(json.dumps(result.to_json(), indent=2) + "\n")
    return result


def derive_from_checkpoint(path) -> tuple[list[derive.CellGenotype], derive.WidthPath]:
    """Rebuild the supernet recorded in a search checkpoint and decode it."""
    ck = load_checkpoint(path)
    if ck.meta.get("kind") != "search":
        raise ValueError(f"{path} is not a search checkpoint")
    from .config import from_dict

    cfg = from_dict(SearchConfig, ck.meta["config"])
    net = build_supernet(cfg)
    restore(ck, net)
    return decode(net)
