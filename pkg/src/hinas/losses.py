"""Composite restoration loss and the PSNR/SSIM metrics."""
from __future__ import annotations

import dataclasses
import functools

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F
from .errors import NumericalError

PSNR_CLAMP_DB = 100.0


@dataclasses.dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


@dataclasses.dataclass(frozen=True)
class LossConfig:
    lam: float = 0.6
    use_ssim_term: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@functools.lru_cache(maxsize=8)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    w.setflags(write=False)
    return w


def _filter(x: Tensor, window: Tensor) -> Tensor:
    return F.conv2d(x, window, groups=x.shape[1])


def ssim(x: Tensor, y: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Mean SSIM over all valid window positions, channels and batch items."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise ValueError("ssim expects (N, C, H, W) tensors")
    if min(x.shape[2:]) < cfg.window:
        raise ValueError(f"image {x.shape[2:]} smaller than the {cfg.window}x{cfg.window} window")
    c = x.shape[1]
    w = np.broadcast_to(gaussian_window(cfg.window, cfg.sigma), (c, 1, cfg.window, cfg.window))
    win = Tensor(np.ascontiguousarray(w), dtype=x.dtype)
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    mu_xx, mu_yy, mu_xy = F.square(mu_x), F.square(mu_y), F.mul(mu_x, mu_y)
    var_x = F.sub(_filter(F.square(x), win), mu_xx)
    var_y = F.sub(_filter(F.square(y), win), mu_yy)
    cov = F.sub(_filter(F.mul(x, y), win), mu_xy)
    num = F.mul(F.add(F.mul(mu_xy, 2.0), cfg.c1), F.add(F.mul(cov, 2.0), cfg.c2))
    den = F.mul(F.add(F.add(mu_xx, mu_yy), cfg.c1), F.add(F.add(var_x, var_y), cfg.c2))
    return F.mean(F.div(num, den))


def l_ssim(x: Tensor, y: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """``log10(1 / ssim(x, y))``."""
    s = ssim(x, y, cfg)
    if not float(s.data) > 0:
        # negative covariance can push the mean below zero; the log is undefined there
        raise NumericalError(f"l_ssim undefined for ssim = {float(s.data):.4g}")
    return F.mul(F.log10(s), -1.0)


def restoration_loss(pred: Tensor, target: Tensor, cfg: LossConfig = LossConfig(),
                     ssim_cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Mean squared error plus ``lam * l_ssim`` (the term is skipped when disabled or ``lam == 0``)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    loss = F.mse_loss(pred, target)
    if cfg.use_ssim_term and cfg.lam > 0:
        loss = F.add(loss, F.mul(l_ssim(pred, target, ssim_cfg), cfg.lam))
    return loss


def psnr(x, y, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; identical inputs give the 100 dB clamp."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    b = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CLAMP_DB
    return min(PSNR_CLAMP_DB, 10.0 * np.log10(peak * peak / mse))


def ssim_value(x, y, cfg: SsimConfig = SsimConfig()) -> float:
    """SSIM of numpy images ((C, H, W) or (N, C, H, W)), computed in float64."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    b = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if a.ndim == 3:
        a, b = a[None], b[None]
    from .autodiff import no_grad

    with no_grad():
        return float(ssim(Tensor(a), Tensor(b), cfg).data)
