"""Deformation networks mapping (canonical translation, time) to pose residuals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

ACTIVATIONS = {"softplus": nn.Softplus, "silu": nn.SiLU, "relu": nn.ReLU}


@dataclass(frozen=True)
class PosEncConfig:
    k_pos: int = 10
    k_time: int = 6
    include_input: bool = True

    def __post_init__(self):
        if self.k_pos < 1 or self.k_time < 1:
            raise ValueError("frequency counts must be >= 1")

    def dims(self) -> tuple[int, int]:
        m = 1 if self.include_input else 0
        return 3 * (m + 2 * self.k_pos), 1 * (m + 2 * self.k_time)


def positional_encode(p, k: int, include_input: bool = True):
    """[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(k-1) pi p), cos(...)] along the last axis."""
    if k < 1:
        raise ValueError("k must be >= 1")
    p = torch.as_tensor(p)
    if p.dim() == 0:
        p = p[None]
    parts = [p] if include_input else []
    for j in range(k):
        f = (2.0**j) * math.pi
        parts += [torch.sin(f * p), torch.cos(f * p)]
    return torch.cat(parts, dim=-1)


class DeformNet(nn.Module):
    """MLP D(xi(T), xi(t)) -> (dT, dR); ``depth`` hidden layers then a linear head.

    The translation rows of the head start at exactly zero; the rotation rows
    start tiny so rot6 + dR stays close to rot6.
    """

    def __init__(self, depth: int = 8, width: int = 256, encoding: PosEncConfig = PosEncConfig(),
                 activation: str = "silu", seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.depth, self.width, self.encoding, self.activation = depth, width, encoding, activation
        in_pos, in_time = encoding.dims()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            layers: list[nn.Module] = []
            d_in = in_pos + in_time
            for _ in range(depth):
                layers += [nn.Linear(d_in, width), ACTIVATIONS[activation]()]
                d_in = width
            self.trunk = nn.Sequential(*layers)
            self.head = nn.Linear(width, 9)
            with torch.no_grad():
                self.head.weight[:3].zero_()
                self.head.bias.zero_()
                self.head.weight[3:].normal_(0.0, 1e-4)
        self.to(dtype)

    def forward(self, T, t):
        t = torch.as_tensor(t, dtype=T.dtype)
        if t.dim() == T.dim() - 1:
            t = t[..., None]
        t = t.expand(*T.shape[:-1], 1)
        x = torch.cat([
            positional_encode(T, self.encoding.k_pos, self.encoding.include_input),
            positional_encode(t, self.encoding.k_time, self.encoding.include_input),
        ], dim=-1)
        out = self.head(self.trunk(x))
        return out[..., :3], out[..., 3:]

    def architecture(self) -> dict:
        return {"depth": self.depth, "width": self.width, "k_pos": self.encoding.k_pos,
                "k_time": self.encoding.k_time, "include_input": self.encoding.include_input,
                "activation": self.activation}

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def deform(net: DeformNet, T, t):
    """Pose residual (dT, dR) of a primitive with canonical translation T at time t."""
    return net(T, t)


def inverse_deform(net_inv: DeformNet, T_obs, t):
    """Residual mapping an observed translation at time t back to canonical space."""
    return net_inv(T_obs, t)
