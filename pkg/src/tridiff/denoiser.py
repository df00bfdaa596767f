"""Tokenized transformer denoiser.

The noisy triple, the object conditioning, and three per-modality timesteps
become a fixed 59-token sequence: 51 pose-joint tokens (6-d rotation each),
one token each for shape, human global pose, object global pose, and the
interaction latent, one object-conditioning token, and three sinusoidal time
tokens. Full self-attention, no masking; per-modality linear heads read back
their token slots and predict the clean sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container
from .rotations import (
    axis_angle_to_matrix_t,
    matrix_to_axis_angle_t,
    matrix_to_rot6d_t,
    rot6d_to_matrix_t,
)

COND_DIM = 1024 + 40
SEQ_LEN = 51 + 5 + 3  # joint tokens, five modality/cond tokens, three time tokens
SLOT_BETA, SLOT_GH, SLOT_GO, SLOT_Z, SLOT_COND = 51, 52, 53, 54, 55
SLOT_TIME = 56  # three consecutive time slots (human, object, interaction)


@dataclass(frozen=True)
class DenoiserConfig:
    token_dim: int = 128
    layers: int = 4
    heads: int = 4
    ff_mult: float = 1.5

    def __post_init__(self):
        if self.token_dim % self.heads:
            raise ValueError("token_dim must be divisible by heads")

    @classmethod
    def paper(cls) -> "DenoiserConfig":
        return cls(token_dim=512, layers=8, heads=8)

    @classmethod
    def desk(cls) -> "DenoiserConfig":
        return cls(token_dim=128, layers=4, heads=4)


@dataclass
class DenoiserOutput:
    """Structured clean-sample prediction."""

    theta: torch.Tensor  # (B, 51, 3) axis-angle
    beta: torch.Tensor   # (B, 10)
    g_h: torch.Tensor    # (B, 9)
    g_o: torch.Tensor    # (B, 9)
    z: torch.Tensor      # (B, 128)

    def flat(self):
        h = torch.cat([self.theta.flatten(1), self.beta, self.g_h], dim=-1)
        return h, self.g_o, self.z


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer position features of integer timesteps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t.unsqueeze(-1) * freqs
    emb = torch.cat([args.sin(), args.cos()], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        d = self.config.token_dim
        self.embed_joint = nn.Linear(6, d)
        self.embed_beta = nn.Linear(10, d)
        self.embed_gh = nn.Linear(9, d)
        self.embed_go = nn.Linear(9, d)
        self.embed_z = nn.Linear(128, d)
        self.embed_cond = nn.Linear(COND_DIM, d)
        self.embed_time = nn.Linear(d, d)
        self.pos = nn.Parameter(torch.zeros(SEQ_LEN, d))
        nn.init.normal_(self.pos, std=0.02)

        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=self.config.heads,
            dim_feedforward=int(self.config.ff_mult * d),
            dropout=0.0, activation="gelu", batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=self.config.layers, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(d)

        self.head_joint = nn.Linear(d, 6)
        self.head_beta = nn.Linear(d, 10)
        self.head_gh = nn.Linear(d, 9)
        self.head_go = nn.Linear(d, 9)
        self.head_z = nn.Linear(d, 128)

    def tokenize(self, h: torch.Tensor, o: torch.Tensor, i: torch.Tensor,
                 t_h: torch.Tensor, t_o: torch.Tensor, t_i: torch.Tensor,
                 cond: torch.Tensor) -> torch.Tensor:
        """(B, 59, token_dim) sequence with learned slot position embeddings.
        Joint rotations enter as 6-d representations."""
        batch = h.shape[0]
        if h.shape[-1] != 172 or o.shape[-1] != 9 or i.shape[-1] != 128:
            raise ValueError("bad modality dimensions")
        if cond.shape[-1] != COND_DIM:
            raise ValueError(f"conditioning must be {COND_DIM}-d")
        theta = h[:, :153].reshape(batch, 51, 3)
        rot6d = matrix_to_rot6d_t(axis_angle_to_matrix_t(theta))
        tokens = torch.cat(
            [
                self.embed_joint(rot6d),
                self.embed_beta(h[:, 153:163]).unsqueeze(1),
                self.embed_gh(h[:, 163:172]).unsqueeze(1),
                self.embed_go(o).unsqueeze(1),
                self.embed_z(i).unsqueeze(1),
                self.embed_cond(cond).unsqueeze(1),
                self.embed_time(sinusoidal_embedding(
                    torch.stack([t_h, t_o, t_i], dim=-1).to(h.dtype),
                    self.config.token_dim)),
            ],
            dim=1,
        )
        return tokens + self.pos

    def denoise(self, tokens: torch.Tensor) -> DenoiserOutput:
        """Full self-attention pass plus per-modality output heads."""
        for p in self.parameters():
            if not torch.isfinite(p).all():
                raise RuntimeError("denoiser weights contain non-finite values")
        x = self.final_norm(self.encoder(tokens))
        rot6d = self.head_joint(x[:, :51])
        theta = matrix_to_axis_angle_t(rot6d_to_matrix_t(rot6d))
        return DenoiserOutput(
            theta=theta,
            beta=self.head_beta(x[:, SLOT_BETA]),
            g_h=self.head_gh(x[:, SLOT_GH]),
            g_o=self.head_go(x[:, SLOT_GO]),
            z=self.head_z(x[:, SLOT_Z]),
        )

    def forward(self, h, o, i, t_h, t_o, t_i, cond):
        """Flat-triple interface used by the sampling loop and training."""
        return self.denoise(self.tokenize(h, o, i, t_h, t_o, t_i, cond)).flat()


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_denoiser(net: Denoiser, path, extra_manifest: dict | None = None) -> None:
    arrays = {f"param/{k}": v.detach().numpy() for k, v in net.state_dict().items()}
    manifest = {
        "kind": "denoiser_checkpoint",
        "token_dim": net.config.token_dim,
        "layers": net.config.layers,
        "heads": net.config.heads,
        "ff_mult": net.config.ff_mult,
    }
    manifest.update(extra_manifest or {})
    write_container(path, manifest=manifest, arrays=arrays)


def load_denoiser(path) -> tuple[Denoiser, dict]:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "denoiser_checkpoint":
        raise ValueError("container does not hold a denoiser checkpoint")
    config = DenoiserConfig(
        token_dim=manifest["token_dim"], layers=manifest["layers"],
        heads=manifest["heads"], ff_mult=manifest["ff_mult"])
    net = Denoiser(config)
    state = {k[len("param/"):]: torch.as_tensor(v)
             for k, v in arrays.items() if k.startswith("param/")}
    net.load_state_dict(state)
    net.eval()
    return net, manifest
