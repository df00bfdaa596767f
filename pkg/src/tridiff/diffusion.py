"""Diffusion core: noise schedule, closed-form forward noising, clean-sample
prediction reverse step, timestep routing over the three modalities, and the
ancestral sampling loop covering all seven generation modes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .guidance import GuidanceConfig, guidance_update

log = logging.getLogger(__name__)

H_DIM, O_DIM, I_DIM = 172, 9, 128
MODALITY_DIMS = {"h": H_DIM, "o": O_DIM, "i": I_DIM}
MODE_STRINGS = ("h", "o", "i", "ho", "hi", "oi", "hoi")


class ModalityTimesteps(NamedTuple):
    t_h: int
    t_o: int
    t_i: int


def parse_mode(mode) -> frozenset:
    """Mode names the generated subset; conditions are the complement."""
    if isinstance(mode, frozenset):
        letters = mode
    else:
        text = str(mode).lower()
        letters = frozenset(text)
        if len(text) != len(letters):  # repeated modality letters
            letters = frozenset()
    if not letters or not letters <= {"h", "o", "i"}:
        raise ValueError(
            f"unknown mode {mode!r}; valid modes: {', '.join(MODE_STRINGS)}")
    return letters


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha_bar tables with the t=0 slot clean (beta[0] = 0)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def sqrt_terms(self, dtype=torch.float32):
        ab = torch.as_tensor(self.alpha_bar, dtype=dtype)
        return ab.sqrt(), (1.0 - ab).sqrt()


def make_schedule(T: int, kind: str = "linear", beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule. The default endpoints suit T=1000; shorter
    chains should scale them up (the desk profile uses 1000/T times these)
    so the terminal state stays near-Gaussian."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return NoiseSchedule(T, beta, alpha, np.cumprod(alpha))


def forward_diffuse(z0, t: int, eps, sched: NoiseSchedule):
    """Closed-form noising: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {eps.shape}")
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def denoise_step(z_t, z0_hat, t: int, eps, sched: NoiseSchedule):
    """One reverse step: re-noise the predicted clean sample to level t-1."""
    if t < 1:
        raise ValueError("cannot step below 0")
    if t > sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch: {z0_hat.shape} vs {eps.shape}")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * z0_hat + np.sqrt(1.0 - ab) * eps


def forward_diffuse_t(z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                      sched: NoiseSchedule) -> torch.Tensor:
    """Torch batched variant; t is a (B,) integer tensor per sample."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    sq_ab, sq_1mab = sched.sqrt_terms(z0.dtype)
    shape = (-1,) + (1,) * (z0.dim() - 1)
    return sq_ab[t].view(shape) * z0 + sq_1mab[t].view(shape) * eps


def route_timesteps(mode, t: int) -> ModalityTimesteps:
    """Generated modalities share the trajectory timestep; conditions sit at
    0 (clean) throughout."""
    generate = parse_mode(mode)
    return ModalityTimesteps(*(t if m in generate else 0 for m in "hoi"))


def sample(mode, *, object_spec, denoiser, sched: NoiseSchedule,
           conditions: dict | None = None, n: int = 1,
           guidance: GuidanceConfig | None = None, codec=None, model=None,
           rng=None) -> dict:
    """Ancestral sampling in one of the seven modes.

    ``conditions`` must hold a flat array for every non-generated modality
    ("h": 172, "o": 9, "i": 128; a single vector is broadcast over the batch).
    Conditioned modalities come back bit-identical to their inputs. Guidance
    (when enabled) needs ``codec`` and ``model`` to evaluate the contact
    supervision.
    """
    generate = parse_mode(mode)
    conditions = dict(conditions or {})
    if object_spec is None:
        raise ValueError("object conditioning (object_spec) is required")
    for m in "hoi":
        if m not in generate and m not in conditions:
            raise ValueError(f"mode {''.join(sorted(generate))!r} requires a "
                             f"condition for modality {m!r}")

    if rng is None or isinstance(rng, int):
        gen = torch.Generator().manual_seed(0 if rng is None else int(rng))
    else:
        gen = rng
    dtype = torch.float32

    cond_vec = torch.as_tensor(object_spec.conditioning(), dtype=dtype)
    cond_batch = cond_vec.expand(n, -1)
    points = object_spec.points_t(dtype)

    state, fixed_np = {}, {}
    for m in "hoi":
        dim = MODALITY_DIMS[m]
        if m in generate:
            state[m] = torch.randn((n, dim), generator=gen, dtype=dtype)
        else:
            arr = np.asarray(conditions[m], dtype=np.float32)
            fixed_np[m] = arr
            tens = torch.as_tensor(arr.reshape(-1, dim), dtype=dtype)
            state[m] = tens.expand(n, dim) if tens.shape[0] == 1 else tens
            if state[m].shape[0] != n:
                raise ValueError(f"condition {m!r} has batch {state[m].shape[0]}, expected {n}")

    sq_ab, sq_1mab = sched.sqrt_terms(dtype)
    guided = guidance is not None and guidance.enabled and guidance.lam > 0.0

    for t in range(sched.T, 0, -1):
        ts = route_timesteps(generate, t)
        t_vec = [torch.full((n,), ts[k], dtype=torch.long) for k in range(3)]
        apply_guidance = guided and t <= guidance.guided_steps
        if apply_guidance:
            noisy = {m: state[m].detach().clone().requires_grad_(m in generate)
                     for m in "hoi"}
            pred = denoiser(noisy["h"], noisy["o"], noisy["i"], *t_vec, cond_batch)
            pred = guidance_update(
                noisy, pred, guidance.lam, generate=generate,
                object_points=points, codec=codec, model=model)
            pred = {m: p.detach() for m, p in zip("hoi", pred)}
        else:
            with torch.no_grad():
                out = denoiser(state["h"], state["o"], state["i"], *t_vec, cond_batch)
            pred = dict(zip("hoi", out))

        for m in generate:
            eps = torch.randn(state[m].shape, generator=gen, dtype=dtype)
            state[m] = sq_ab[t - 1] * pred[m] + sq_1mab[t - 1] * eps
        # conditioned modalities stay clean in `state` untouched

    out = {}
    for m in "hoi":
        out[m] = state[m].numpy() if m in generate else fixed_np[m]
    return out
