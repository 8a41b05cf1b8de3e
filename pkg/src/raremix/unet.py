"""Small time-conditioned U-Net noise predictor for desk-scale experiments."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class TinyUNet(nn.Module):
    """Two-level encoder/decoder; inputs of any size are reflect-padded to a multiple of 4."""

    def __init__(self, in_channels: int = 3, base: int = 32, mult: tuple[int, ...] = (1, 2, 2), tdim: int = 128):
        super().__init__()
        self.config = {"in_channels": in_channels, "base": base, "mult": list(mult), "tdim": tdim}
        self.tdim = tdim
        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        chans = [base * m for m in mult]
        self.inc = nn.Conv2d(in_channels, chans[0], 3, padding=1)
        self.enc0 = ResBlock(chans[0], chans[0], tdim)
        self.down1 = nn.Conv2d(chans[0], chans[1], 3, stride=2, padding=1)
        self.enc1 = ResBlock(chans[1], chans[1], tdim)
        self.down2 = nn.Conv2d(chans[1], chans[2], 3, stride=2, padding=1)
        self.mid = ResBlock(chans[2], chans[2], tdim)
        self.up2 = nn.ConvTranspose2d(chans[2], chans[1], 4, stride=2, padding=1)
        self.dec1 = ResBlock(2 * chans[1], chans[1], tdim)
        self.up1 = nn.ConvTranspose2d(chans[1], chans[0], 4, stride=2, padding=1)
        self.dec0 = ResBlock(2 * chans[0], chans[0], tdim)
        self.out = nn.Sequential(nn.GroupNorm(8, chans[0]), nn.SiLU(), nn.Conv2d(chans[0], in_channels, 3, padding=1))
        nn.init.zeros_(self.out[-1].weight)
        nn.init.zeros_(self.out[-1].bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        h0, w0 = x.shape[-2:]
        ph, pw = (-h0) % 4, (-w0) % 4
        if ph or pw:
            mode = "reflect" if min(h0, w0) > max(ph, pw) else "replicate"
            x = F.pad(x, (0, pw, 0, ph), mode=mode)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.tdim).to(x.dtype))
        a = self.enc0(self.inc(x), temb)
        b = self.enc1(self.down1(a), temb)
        c = self.mid(self.down2(b), temb)
        d = self.dec1(torch.cat([self.up2(c), b], dim=1), temb)
        e = self.dec0(torch.cat([self.up1(d), a], dim=1), temb)
        return self.out(e)[..., :h0, :w0]


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
