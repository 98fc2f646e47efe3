"""Synthetic images, degradations, W/A/V splits, patch sampling, tiling and PNG I/O.

Images are float32 numpy arrays shaped (3, H, W) with values in [0, 1].
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import functional as F

SYNTH_KINDS = ("textures", "gradients", "mixed")
MIN_SYNTH_SIZE = 32


@dataclasses.dataclass
class ImagePair:
    clean: np.ndarray
    degraded: np.ndarray
    id: str


# ---------------------------------------------------------------------------
# procedural images


def _normalise(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    return (a - lo) / (hi - lo) if hi > lo else np.full_like(a, 0.5)


def _band_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    # white noise filtered to a random annulus in frequency
    f = np.fft.fftfreq(size)
    r = np.hypot(f[:, None], f[None, :])
    lo = rng.uniform(0.01, 0.08)
    hi = lo + rng.uniform(0.05, 0.25)
    mask = np.exp(-((r - (lo + hi) / 2) / (hi - lo)) ** 2)
    out = np.empty((3, size, size))
    base = np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * mask).real
    for c in range(3):
        own = np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * mask).real
        out[c] = _normalise(0.7 * base + 0.3 * own)
    return out


def _stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(3, 12)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    return np.stack([0.5 + 0.5 * np.sin(2 * np.pi * freq * u + p) for p in phase])


def _ramp(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    out = np.empty((3, size, size))
    for c in range(3):
        a, b = rng.uniform(-1, 1, size=2)
        q = rng.uniform(-1, 1)
        out[c] = a * xx + b * yy + q * (xx - 0.5) * (yy - 0.5) * 4
    return _normalise(out) * rng.uniform(0.6, 1.0) + rng.uniform(0, 0.2)


def _shapes(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.tile(rng.uniform(0, 1, size=(3, 1, 1)), (1, size, size))
    for _ in range(int(rng.integers(3, 8))):
        cy, cx = rng.uniform(0, size, size=2)
        rad = rng.uniform(size / 10, size / 3)
        colour = rng.uniform(0, 1, size=(3, 1))
        if rng.random() < 0.5:
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        else:
            m = (np.abs(yy - cy) < rad) & (np.abs(xx - cx) < rad * rng.uniform(0.3, 1.0))
        out[:, m] = colour
    return out


def _one_image(kind: str, rng: np.random.Generator, size: int) -> np.ndarray:
    if kind == "textures":
        img = _band_noise(rng, size) if rng.random() < 0.5 else _stripes(rng, size)
    elif kind == "gradients":
        img = _ramp(rng, size)
    else:
        w = rng.dirichlet(np.ones(3))
        img = w[0] * _band_noise(rng, size) + w[1] * _stripes(rng, size) + w[2] * _ramp(rng, size)
        img = 0.5 * img + 0.5 * _shapes(rng, size) if rng.random() < 0.5 else img
        img = _normalise(img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_dataset(kind: str, count: int, size: int, seed: int) -> list[np.ndarray]:
    """``count`` procedural RGB images of ``size`` x ``size``, reproducible per seed."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if size < MIN_SYNTH_SIZE:
        raise ValueError(f"size must be at least {MIN_SYNTH_SIZE}")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]
    return [_one_image(kind, r, size) for r in rngs]


# ---------------------------------------------------------------------------
# degradations


def add_gaussian_noise(img: np.ndarray, sigma_255: float, seed: int, clip: bool = True) -> np.ndarray:
    """Additive white Gaussian noise with std ``sigma_255 / 255``."""
    if sigma_255 < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float32)
    if sigma_255 == 0:
        return img.copy()
    noise = np.random.default_rng(seed).standard_normal(img.shape) * (sigma_255 / 255.0)
    out = img + noise.astype(np.float32)
    return np.clip(out, 0.0, 1.0) if clip else out


def bicubic_degrade(img: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic downscale by ``scale``, clipped to [0, 1]."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(f"image {h}x{w} not divisible by scale {scale}")
    with no_grad():
        out = F.bicubic_resize(Tensor(img[None]), scale, "down").data[0]
    return np.clip(out, 0.0, 1.0)


def crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return img[..., : h - h % scale, : w - w % scale]


def make_pairs(clean: Sequence[np.ndarray], task, seed: int, sigma: float = 25.0,
               prefix: str = "img") -> list[ImagePair]:
    """Degrade every clean image once (noise drawn per image from ``seed``)."""
    pairs = []
    seeds = np.random.SeedSequence(seed).generate_state(len(clean))
    for n, img in enumerate(clean):
        ident = f"{prefix}{n:04d}"
        if task.kind == "denoise":
            pairs.append(ImagePair(img, add_gaussian_noise(img, sigma, int(seeds[n])), ident))
        else:
            hr = crop_to_multiple(img, task.scale)
            pairs.append(ImagePair(hr, bicubic_degrade(hr, task.scale), ident))
    return pairs


def degrade_batch(clean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Fresh noise for a (B, 3, H, W) batch (per-step resampling mode)."""
    noise = rng.standard_normal(clean.shape).astype(np.float32) * np.float32(sigma / 255.0)
    return np.clip(clean + noise, 0.0, 1.0)


# ---------------------------------------------------------------------------
# splitting


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    frac_val: float = 0.02
    seed: int = 0


def split_sizes(n: int, frac_val: float = 0.02) -> tuple[int, int, int]:
    if n < 3:
        raise ValueError(f"need at least 3 items to split, got {n}")
    v = min(n - 2, max(1, math.floor(frac_val * n + 0.5)))
    rest = n - v
    return rest - rest // 2, rest // 2, v


def split_wav(ids: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[list, list, list]:
    """Shuffle ``ids`` and cut them into kernel-training, architecture-training and validation sets."""
    ids = list(ids)
    n_w, n_a, _ = split_sizes(len(ids), spec.frac_val)
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]
    return shuffled[:n_w], shuffled[n_w:n_w + n_a], shuffled[n_w + n_a:]


# ---------------------------------------------------------------------------
# patches and augmentation


def transform(img: np.ndarray, rot: int, hflip: bool, vflip: bool) -> np.ndarray:
    out = np.rot90(img, rot, axes=(-2, -1))
    if hflip:
        out = out[..., ::-1]
    if vflip:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def crop_coords(lr_shape: tuple[int, int], patch_lr: int, rng: np.random.Generator) -> tuple[int, int]:
    h, w = lr_shape
    if h < patch_lr or w < patch_lr:
        raise ValueError(f"image {h}x{w} smaller than patch {patch_lr}")
    return int(rng.integers(0, h - patch_lr + 1)), int(rng.integers(0, w - patch_lr + 1))


def sample_patch(pair: ImagePair, patch: int = 64, augment: bool = True, seed=0,
                 scale: int = 1) -> ImagePair:
    """Aligned random crop (``patch`` is the clean-side size) with optional rotation/flips."""
    if patch % scale:
        raise ValueError(f"patch {patch} not divisible by scale {scale}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p_lr = patch // scale
    y, x = crop_coords(pair.degraded.shape[-2:], p_lr, rng)
    deg = pair.degraded[:, y:y + p_lr, x:x + p_lr]
    cln = pair.clean[:, y * scale:y * scale + patch, x * scale:x * scale + patch]
    if augment:
        rot = int(rng.integers(4))
        hf, vf = bool(rng.integers(2)), bool(rng.integers(2))
        deg, cln = transform(deg, rot, hf, vf), transform(cln, rot, hf, vf)
    return ImagePair(np.ascontiguousarray(cln), np.ascontiguousarray(deg), f"{pair.id}@{y},{x}")


def make_batch(pairs: Sequence[ImagePair], batch: int, patch: int, augment: bool,
               rng: np.random.Generator, scale: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``batch`` patches (images sampled with replacement); returns (degraded, clean)."""
    idx = rng.integers(len(pairs), size=batch)
    crops = [sample_patch(pairs[k], patch, augment, rng, scale) for k in idx]
    return (np.stack([c.degraded for c in crops]), np.stack([c.clean for c in crops]))


# ---------------------------------------------------------------------------
# tiled inference


def tiled_inference(net: Callable[[Tensor], Tensor], img: np.ndarray, tile: int = 64,
                    scale: int = 1, batch: int = 16) -> np.ndarray:
    """Run ``net`` on adjacent non-overlapping tiles and stitch the results.

    The right/bottom remainder is reflect-padded to a full tile and cropped afterwards.
    """
    img = np.asarray(img, dtype=np.float32)
    c, h, w = img.shape
    ph, pw = -h % tile, -w % tile
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") if ph or pw else img
    ny, nx = padded.shape[1] // tile, padded.shape[2] // tile
    tiles = [padded[:, i * tile:(i + 1) * tile, j * tile:(j + 1) * tile]
             for i in range(ny) for j in range(nx)]
    outs = []
    with no_grad():
        for k in range(0, len(tiles), batch):
            outs.append(net(Tensor(np.stack(tiles[k:k + batch]))).data)
    outs = np.concatenate(outs)
    t = tile * scale
    canvas = np.empty((outs.shape[1], ny * t, nx * t), dtype=outs.dtype)
    for n, o in enumerate(outs):
        i, j = divmod(n, nx)
        canvas[:, i * t:(i + 1) * t, j * t:(j + 1) * t] = o
    return canvas[:, : h * scale, : w * scale]


# ---------------------------------------------------------------------------
# PNG and manifests


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(np.asarray(img)), mode="RGB").save(path, format="PNG")


def load_png_folder(folder) -> list[tuple[str, np.ndarray]]:
    """All ``*.png`` files in ``folder`` sorted by name, as (stem, image)."""
    files = sorted(Path(folder).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {folder}")
    return [(f.stem, load_png(f)) for f in files]


def write_manifest(out_dir, pairs: Sequence[ImagePair], task, sigma: float | None = None) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    items = []
    for p in pairs:
        cp, dp = Path("clean") / f"{p.id}.png", Path("degraded") / f"{p.id}.png"
        save_png(out_dir / cp, p.clean)
        save_png(out_dir / dp, p.degraded)
        items.append({"id": p.id, "clean_path": str(cp), "degraded_path": str(dp)})
    doc = {"task": "denoise" if task.kind == "denoise" else "sr", "items": items}
    if task.kind == "denoise":
        doc["sigma"] = sigma
    else:
        doc["scale"] = task.scale
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def load_manifest(path) -> tuple[dict, list[ImagePair]]:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("task") not in ("denoise", "sr"):
        raise ValueError(f"manifest task must be 'denoise' or 'sr', got {doc.get('task')!r}")
    root = path.parent
    pairs = [ImagePair(load_png(root / it["clean_path"]), load_png(root / it["degraded_path"]), it["id"])
             for it in doc["items"]]
    return doc, pairs


def file_checksum(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

