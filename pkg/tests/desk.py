"""Desk-scale search/train runs shared by the slow tests, cached on disk.

A run is keyed by a hash of the package sources plus its configuration, so
editing the code invalidates the cache. Set ``HINAS_DESK_CACHE`` to move it.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path

from hinas import derive
from hinas.config import SearchConfig, TaskConfig, TrainConfig, to_dict
from hinas.engine import load_pairs
from hinas.losses import LossConfig
from hinas.search import run_search
from hinas.train import load_trained, run_eval, run_train

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("HINAS_DESK_CACHE", ROOT / ".desk_cache"))
TEST_OFFSET = 200_003
TEST_COUNT = 10
SEEDS = (0, 1, 2)

VARIANTS = {
    "base": {},
    "residual_off": {"task": TaskConfig(residual=False)},
    "lam0": {"loss": LossConfig(lam=0.0)},
}


def source_hash() -> str:
    h = hashlib.sha256()
    for f in sorted((ROOT / "src" / "hinas").rglob("*")):
        if f.suffix in (".py", ".pyx", ".pxd"):
            h.update(str(f.relative_to(ROOT)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def _key(*parts) -> str:
    doc = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256((source_hash() + doc).encode()).hexdigest()[:16]


def search_config(seed: int) -> SearchConfig:
    return SearchConfig.desk(seed)


def train_config(seed: int, variant: str = "base") -> TrainConfig:
    return TrainConfig.desk(seed, **VARIANTS[variant])


@dataclasses.dataclass
class DeskRun:
    out_dir: Path
    seconds: float
    summary: dict


def _cached(name: str, key: str, run) -> DeskRun:
    out = CACHE / f"{name}-{key}"
    done = out / "done.json"
    if done.exists():
        doc = json.loads(done.read_text())
        return DeskRun(out, doc["seconds"], doc["summary"])
    t0 = time.perf_counter()
    summary = run(out)
    seconds = time.perf_counter() - t0
    done.write_text(json.dumps({"seconds": seconds, "summary": summary}, indent=2))
    return DeskRun(out, seconds, summary)


def search(seed: int, out_dir: Path | None = None) -> DeskRun:
    """Desk search for ``seed``; a given ``out_dir`` bypasses the cache."""
    cfg = search_config(seed)

    def go(out):
        return run_search(cfg, out).to_json()

    if out_dir is not None:
        t0 = time.perf_counter()
        summary = go(out_dir)
        return DeskRun(Path(out_dir), time.perf_counter() - t0, summary)
    return _cached(f"search-s{seed}", _key("search", to_dict(cfg)), go)


def evaluate(train_dir: Path, cfg: TrainConfig) -> dict:
    """Final compact net against the noisy input on held-out synthetic images."""
    net, _ = load_trained(Path(train_dir) / "final.ckpt")
    pairs = load_pairs(cfg.data, cfg.task, seed_offset=TEST_OFFSET, count=TEST_COUNT)
    rep = run_eval(net, pairs, tile=cfg.val_tile)
    return {k: rep[k] for k in ("psnr", "ssim", "input_psnr", "input_ssim", "count")}


def train(seed: int, variant: str = "base", search_run: DeskRun | None = None,
          out_dir: Path | None = None) -> DeskRun:
    """Derive from the seed's desk search, train a compact net and score it on held-out images."""
    search_run = search_run or search(seed)
    genotypes, path = derive.load_architecture(search_run.out_dir / "architecture.json")
    cfg = train_config(seed, variant)

    def go(out):
        res = run_train(genotypes, path, cfg, out)
        return {"final_val": {k: res.final_val[k] for k in ("psnr", "ssim")},
                "params": res.params, "test": evaluate(out, cfg)}

    if out_dir is not None:
        t0 = time.perf_counter()
        summary = go(out_dir)
        return DeskRun(Path(out_dir), time.perf_counter() - t0, summary)
    arch = json.loads((search_run.out_dir / "architecture.json").read_text())
    return _cached(f"train-s{seed}-{variant}", _key("train", to_dict(cfg), arch), go)
