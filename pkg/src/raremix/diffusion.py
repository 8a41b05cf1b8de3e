"""Denoising diffusion core: schedule, noising, loss, training, DDIM and guided inpainting.

Timesteps are 1-based (1..T) with the convention alpha_bar(0) = 1. Images are float
tensors in [-1, 1], shape (B, C, H, W) or (C, H, W).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .unet import TinyUNet, parameter_count

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "raremix-ddpm"
CHECKPOINT_VERSION = 1

NoisePredictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


class DiffusionError(RuntimeError):
    pass


class DivergenceError(DiffusionError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray  # betas[t - 1] is beta_t
    beta_start: float
    beta_end: float

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def posterior_betas(self) -> np.ndarray:
        ab = self.alpha_bars
        ab_prev = np.concatenate([[1.0], ab[:-1]])
        return (1.0 - ab_prev) / (1.0 - ab) * self.betas

    def abar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise DiffusionError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise DiffusionError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise DiffusionError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return DiffusionSchedule(T=T, betas=betas, beta_start=beta_start, beta_end=beta_end)


def forward_sample(sch: DiffusionSchedule, x0, t: int, eps):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps (numpy or torch inputs)."""
    if not 1 <= t <= sch.T:
        raise DiffusionError(f"timestep {t} outside [1, {sch.T}]")
    ab = sch.abar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    return (x[None], True) if x.ndim == 3 else (x, False)


def predict_eps(model: NoisePredictor, x_t: torch.Tensor, t: int) -> torch.Tensor:
    xb, squeeze = _batched(x_t)
    tt = torch.full((xb.shape[0],), t, dtype=torch.long, device=xb.device)
    out = model(xb, tt)
    return out[0] if squeeze else out


def training_loss(sch: DiffusionSchedule, model: NoisePredictor, x0: torch.Tensor,
                  generator: torch.Generator | None = None) -> torch.Tensor:
    """Batch mean of ||eps - eps_theta(x_t, t)||^2 with t ~ U{1..T}, eps ~ N(0, I)."""
    b = x0.shape[0]
    t = torch.randint(1, sch.T + 1, (b,), generator=generator, device=x0.device)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    ab = torch.as_tensor(sch.alpha_bars, dtype=x0.dtype, device=x0.device)[t - 1].view(-1, *[1] * (x0.ndim - 1))
    x_t = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    pred = model(x_t, t)
    return ((eps - pred) ** 2).flatten(1).sum(1).mean()


def smooth(values, window: int = 100) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    window = max(1, min(window, v.size))
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


def train(model: nn.Module, textures: torch.Tensor, sch: DiffusionSchedule, steps: int,
          lr: float = 2e-3, batch_size: int = 16, seed: int = 0,
          divergence_factor: float = 10.0, log_every: int = 250) -> tuple[nn.Module, list[float]]:
    """Adam on the simple noise-prediction objective; returns the model and per-step losses."""
    if len(textures) == 0:
        raise DiffusionError("empty texture set")
    losses: list[float] = []
    if steps <= 0:
        return model, losses
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps, eta_min=lr * 0.05)
    model.train()
    initial = None
    for step in range(steps):
        idx = torch.randint(0, len(textures), (batch_size,), generator=g)
        loss = training_loss(sch, model, textures[idx], generator=g)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        val = float(loss.detach())
        losses.append(val)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite loss at step {step}")
        if step == 19:
            initial = float(np.mean(losses))
        if initial is not None and step >= 50 and np.mean(losses[-20:]) > divergence_factor * initial:
            raise DivergenceError(f"loss {np.mean(losses[-20:]):.3g} > {divergence_factor}x initial {initial:.3g} at step {step}")
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.4f", step + 1, np.mean(losses[-log_every:]))
    model.eval()
    return model, losses


def tweedie_x0(sch: DiffusionSchedule, model: NoisePredictor | None, x_t, t: int, eps=None):
    """Posterior-mean estimate (x_t - sqrt(1 - abar_t) eps_theta) / sqrt(abar_t)."""
    ab = sch.abar(t)
    if ab <= 0.0:
        raise DiffusionError(f"alpha_bar({t}) = 0; Tweedie estimate undefined")
    if eps is None:
        eps = predict_eps(model, x_t, t)
    return (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def ddim_step(sch: DiffusionSchedule, model: NoisePredictor | None, x_t, t: int, t_prev: int,
              eps=None, clip_denoised: bool = False):
    """Deterministic (eta = 0) DDIM update from t to t_prev; returns (x_prev, x0_hat)."""
    if not (0 <= t_prev < t <= sch.T):
        raise DiffusionError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if eps is None:
        eps = predict_eps(model, x_t, t)
    x0 = tweedie_x0(sch, None, x_t, t, eps=eps)
    if clip_denoised:
        x0 = x0.clamp(-1.0, 1.0)
        ab = sch.abar(t)
        eps = (x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
    ab_prev = sch.abar(t_prev)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps, x0


def ddim_timesteps(T: int, n_steps: int) -> list[tuple[int, int]]:
    """Descending (t, t_prev) pairs from T to 0, evenly spaced."""
    n_steps = max(1, min(n_steps, T))
    ts = np.unique(np.round(np.linspace(0, T, n_steps + 1)).astype(int))[::-1]
    return list(zip(ts[:-1].tolist(), ts[1:].tolist()))


@dataclass
class Measurement:
    y: torch.Tensor  # masked condition image, same shape as the sample
    mask: torch.Tensor  # 1 = observed; broadcastable to y

    def A(self, x: torch.Tensor) -> torch.Tensor:
        return self.mask * x

    @classmethod
    def from_image(cls, image: torch.Tensor, observed: torch.Tensor) -> "Measurement":
        m = observed.to(image.dtype)
        while m.ndim < image.ndim:
            m = m.unsqueeze(-3)
        m = m.expand_as(image).clone()
        return cls(y=image * m, mask=m)


def measurement_residual(meas: Measurement, x0: torch.Tensor) -> torch.Tensor:
    return ((meas.y - meas.A(x0)) ** 2).sum()


def guidance_gradient(sch: DiffusionSchedule, model: NoisePredictor, x_t: torch.Tensor, t: int,
                      meas: Measurement) -> torch.Tensor:
    """Gradient of ||y - A(x0_hat(x_t))||^2 w.r.t. x_t, through the noise predictor."""
    with torch.enable_grad():
        x = x_t.detach().requires_grad_(True)
        x0 = tweedie_x0(sch, model, x, t)
        (grad,) = torch.autograd.grad(measurement_residual(meas, x0), x)
    return grad


def guided_inpaint(sch: DiffusionSchedule, model: NoisePredictor, meas: Measurement, n_steps: int = 250,
                   guidance_scale: float = 1.0, hard_consistency: bool = True,
                   generator: torch.Generator | None = None, clip_denoised: bool = True,
                   x_T: torch.Tensor | None = None) -> torch.Tensor:
    """Sample x from noise so that A(x) matches y.

    Each step takes the DDIM update, subtracts ``guidance_scale`` times the measurement
    gradient, and, with ``hard_consistency``, replaces observed pixels by y noised to the
    next level (exactly y at the end).
    """
    y, mask = meas.y, meas.mask
    if x_T is None:
        x = torch.randn(y.shape, generator=generator, dtype=y.dtype, device=y.device)
    else:
        x = x_T.clone()
    for t, t_prev in ddim_timesteps(sch.T, n_steps):
        with torch.enable_grad():
            xg = x.detach().requires_grad_(guidance_scale != 0.0)
            eps = predict_eps(model, xg, t)
            x0 = tweedie_x0(sch, None, xg, t, eps=eps)
            grad = None
            if guidance_scale != 0.0:
                (grad,) = torch.autograd.grad(measurement_residual(meas, x0), xg)
        x_prev, _ = ddim_step(sch, None, x.detach(), t, t_prev, eps=eps.detach(), clip_denoised=clip_denoised)
        if grad is not None:
            x_prev = x_prev - guidance_scale * grad
        if hard_consistency:
            if t_prev == 0:
                known = y
            else:
                noise = torch.randn(y.shape, generator=generator, dtype=y.dtype, device=y.device)
                known = forward_sample(sch, y, t_prev, noise)
            x_prev = torch.where(mask > 0, known, x_prev)
        if not torch.isfinite(x_prev).all():
            raise DiffusionError(f"non-finite values at step t={t} -> {t_prev} "
                                 f"(max |x_t|={float(x.abs().max()):.3g}, guidance_scale={guidance_scale})")
        x = x_prev.detach()
    return x


def save_checkpoint(path: str | os.PathLike, model: TinyUNet, sch: DiffusionSchedule, train_info: dict | None = None) -> None:
    """Versioned container: format tag, schedule config, model config, parameter blob."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "schedule": sch.to_dict(),
        "model": {"class": type(model).__name__, "config": model.config, "parameters": parameter_count(model)},
        "train": train_info or {},
        "state_dict": model.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[TinyUNet, DiffusionSchedule, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise DiffusionError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise DiffusionError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    cfg = dict(blob["model"]["config"])
    cfg["mult"] = tuple(cfg["mult"])
    model = TinyUNet(**cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    sch = build_schedule(**blob["schedule"])
    return model, sch, blob.get("train", {})


def write_loss_curve(path: str | os.PathLike, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])


def to_model_space(pixels: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    return torch.from_numpy(pixels.astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def to_pixels(x: torch.Tensor) -> np.ndarray:
    arr = ((x.detach().clamp(-1, 1) + 1.0) * 127.5).permute(1, 2, 0).numpy()
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)
