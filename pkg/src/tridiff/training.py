"""Trilateral training: per-modality noising with independent timesteps,
loss assembly with the published weights, mirror augmentation, and the
AdamW + warmup/cosine optimization loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .body import BodyModel, skin_body_t
from .codec import mirror_label
from .diffusion import NoiseSchedule, forward_diffuse_t
from .geometry import place_object_t, vertex_distances_t

G_MIRROR_MASK = np.array([-1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0])
THETA_MIRROR_MASK = np.array([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class LossWeights:
    """Weights for (human params, object params, latent, human vertices,
    object vertices, distances)."""

    w_hn: float = 2.0
    w_on: float = 1.0
    w_in: float = 1.0
    w_hv: float = 6.0
    w_ov: float = 2.0
    w_iv: float = 4.0

    def __post_init__(self):
        if min(self.w_hn, self.w_on, self.w_in, self.w_hv, self.w_ov, self.w_iv) < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.w_hn, self.w_on, self.w_in, self.w_hv, self.w_ov, self.w_iv)


@dataclass
class TrainConfig:
    batch_size: int = 1024
    lr: float = 1e-4
    warmup_steps: int = 50_000
    total_steps: int = 300_000
    schedule: str = "cosine"
    seed: int = 0
    mirror_prob: float = 0.5
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    log_every: int = 100

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to zero."""
        if self.schedule != "cosine":
            raise ValueError(f"unknown lr schedule {self.schedule!r}")
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        frac = min(1.0, (step - self.warmup_steps) / span)
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def compute_losses(pred_h: torch.Tensor, pred_o: torch.Tensor,
                   pred_i: torch.Tensor, batch: dict, weights: LossWeights,
                   model: BodyModel):
    """Weighted training loss against clean targets plus realized geometry.

    ``batch`` holds targets h/o/i, precomputed v_h, v_o, d, and the canonical
    object points per sample. Returns (total, components), components given
    unweighted.
    """
    h, o, i = batch["h"], batch["o"], batch["i"]
    if pred_h.shape != h.shape or pred_o.shape != o.shape or pred_i.shape != i.shape:
        raise ValueError("prediction/target shape mismatch")
    n = h.shape[0]

    l_hn = (h[:, :163] - pred_h[:, :163]).abs().sum(-1) \
        + (h[:, 163:] - pred_h[:, 163:]).abs().sum(-1)
    l_on = (o - pred_o).abs().sum(-1)
    l_in = (i - pred_i).norm(dim=-1)

    theta = pred_h[:, :153].reshape(n, 51, 3)
    v_h_hat = skin_body_t(model, theta, pred_h[:, 153:163], pred_h[:, 163:172])
    v_o_hat = place_object_t(batch["points"], pred_o)
    d_hat = vertex_distances_t(v_h_hat, v_o_hat)

    l_hv = (batch["v_h"] - v_h_hat).flatten(1).norm(dim=-1)
    l_ov = (batch["v_o"] - v_o_hat).flatten(1).norm(dim=-1)
    l_iv = (batch["d"] - d_hat).norm(dim=-1)

    components = {
        "human_param": l_hn.mean(), "object_param": l_on.mean(),
        "latent": l_in.mean(), "human_vertex": l_hv.mean(),
        "object_vertex": l_ov.mean(), "distance": l_iv.mean(),
    }
    total = (weights.w_hn * components["human_param"]
             + weights.w_on * components["object_param"]
             + weights.w_in * components["latent"]
             + weights.w_hv * components["human_vertex"]
             + weights.w_ov * components["object_vertex"]
             + weights.w_iv * components["distance"])
    return total, components


def train_step(batch: dict, denoiser, sched: NoiseSchedule,
               weights: LossWeights, optimizer, rng: torch.Generator,
               model: BodyModel):
    """Noise each modality at an independent uniform timestep, denoise,
    compute losses, and apply one optimizer update."""
    n = batch["h"].shape[0]
    ts = torch.randint(0, sched.T + 1, (n, 3), generator=rng)
    noisy = {}
    for k, m in enumerate("hoi"):
        eps = torch.randn(batch[m].shape, generator=rng, dtype=batch[m].dtype)
        noisy[m] = forward_diffuse_t(batch[m], ts[:, k], eps, sched)

    pred_h, pred_o, pred_i = denoiser(
        noisy["h"], noisy["o"], noisy["i"], ts[:, 0], ts[:, 1], ts[:, 2],
        batch["cond"])
    total, components = compute_losses(pred_h, pred_o, pred_i, batch, weights, model)
    if not torch.isfinite(total):
        bad = [k for k, v in components.items() if not torch.isfinite(v)]
        raise RuntimeError(f"NaN loss in components: {', '.join(bad) or 'total'}")

    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return float(total.detach()), {k: float(v.detach()) for k, v in components.items()}


def mirror_batch_tensors(batch: dict, flags: torch.Tensor, model: BodyModel,
                         codec) -> dict:
    """Mirror the flagged rows of a training batch through the ZY plane.

    Parameter fields transform by sign masks and permutations (bit-exact
    involution); v_o is re-placed from the mirrored pose; the latent target is
    re-encoded from the mirrored contact map with the frozen codec.
    """
    out = dict(batch)
    idx = torch.nonzero(flags, as_tuple=True)[0]
    if idx.numel() == 0:
        return out
    perm = torch.as_tensor(model.joint_mirror[1:] - 1)
    vmap = torch.as_tensor(model.mirror_map)
    g_mask = torch.as_tensor(G_MIRROR_MASK, dtype=batch["h"].dtype)
    t_mask = torch.as_tensor(THETA_MIRROR_MASK, dtype=batch["h"].dtype)
    v_mask = torch.as_tensor([-1.0, 1.0, 1.0], dtype=batch["h"].dtype)

    h = out["h"].clone()
    theta = h[idx, :153].reshape(-1, 51, 3)
    h[idx, :153] = (theta * t_mask)[:, perm].reshape(-1, 153)
    h[idx, 163:] = h[idx, 163:] * g_mask
    out["h"] = h

    o = out["o"].clone()
    o[idx] = o[idx] * g_mask
    out["o"] = o

    for key in ("contact", "d"):
        arr = out[key].clone()
        arr[idx] = arr[idx][:, vmap]
        out[key] = arr

    v_h = out["v_h"].clone()
    v_h[idx] = v_h[idx][:, vmap] * v_mask
    out["v_h"] = v_h

    v_o = out["v_o"].clone()
    v_o[idx] = place_object_t(out["points"][idx], out["o"][idx])
    out["v_o"] = v_o

    if "i" in out and codec is not None:
        z = out["i"].clone()
        with torch.no_grad():
            z[idx] = codec.encode_contact_t(out["contact"][idx])
        out["i"] = z

    if "labels" in out:
        labels = list(out["labels"])
        for j in idx.tolist():
            labels[j] = mirror_label(labels[j])
        out["labels"] = labels
    return out


def augment_batch(batch: dict, p: float, rng: torch.Generator,
                  model: BodyModel, codec=None) -> dict:
    """Independently mirror each sample with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("mirror probability must lie in [0, 1]")
    n = batch["h"].shape[0]
    if p == 0.0:
        return dict(batch)
    flags = torch.rand(n, generator=rng) < p
    return mirror_batch_tensors(batch, flags, model, codec)


class Trainer:
    """Minimal single-process training loop over a synthetic dataset."""

    def __init__(self, dataset, specs: dict, model: BodyModel, codec,
                 denoiser, sched: NoiseSchedule,
                 config: TrainConfig | None = None,
                 weights: LossWeights | None = None, log_path=None):
        from .data import realize_human_vertices

        self.config = config or TrainConfig()
        self.weights = weights or LossWeights()
        self.model = model
        self.codec = codec
        self.denoiser = denoiser
        self.sched = sched
        self.log_path = log_path

        n = dataset.count
        cls = dataset.class_ids.astype(np.int64)
        class_ids = sorted(specs)
        row_of = {cid: k for k, cid in enumerate(class_ids)}
        points = torch.stack([specs[cid].points_t(torch.float32) for cid in class_ids])
        conds = torch.stack([
            torch.as_tensor(specs[cid].conditioning(), dtype=torch.float32)
            for cid in class_ids])
        rows = torch.as_tensor([row_of[c] for c in cls])

        g_o = torch.as_tensor(dataset.g_o, dtype=torch.float32)
        self.data = {
            "h": torch.as_tensor(np.concatenate(
                [dataset.theta.reshape(n, 153), dataset.beta, dataset.g_h], axis=1),
                dtype=torch.float32),
            "o": g_o,
            "contact": torch.as_tensor(dataset.contact, dtype=torch.float32),
            "d": torch.as_tensor(dataset.dist, dtype=torch.float32),
            "points": points[rows],
            "cond": conds[rows],
            "labels": list(dataset.labels),
        }
        self.data["v_h"] = realize_human_vertices(model, self.data["h"])
        self.data["v_o"] = place_object_t(self.data["points"], g_o)
        with torch.no_grad():
            if dataset.z is not None:
                self.data["i"] = torch.as_tensor(dataset.z, dtype=torch.float32)
            else:
                self.data["i"] = codec.encode_contact_t(self.data["contact"])
        self.n = n

        self.optimizer = torch.optim.AdamW(
            denoiser.parameters(), lr=self.config.lr,
            betas=self.config.betas, weight_decay=self.config.weight_decay)
        self.rng = torch.Generator().manual_seed(self.config.seed)
        self.history = []

    def _batch(self) -> dict:
        idx = torch.randint(self.n, (min(self.config.batch_size, self.n),),
                            generator=self.rng)
        batch = {k: (v[idx] if isinstance(v, torch.Tensor) else [v[j] for j in idx.tolist()])
                 for k, v in self.data.items()}
        return augment_batch(batch, self.config.mirror_prob, self.rng,
                             self.model, self.codec)

    def run(self, steps: int | None = None, progress=None) -> list:
        steps = self.config.total_steps if steps is None else steps
        log_lines = []
        for step in range(steps):
            lr = self.config.lr_at(step)
            for group in self.optimizer.param_groups:
                group["lr"] = lr
            total, comps = train_step(
                self._batch(), self.denoiser, self.sched, self.weights,
                self.optimizer, self.rng, self.model)
            self.history.append(total)
            if step % self.config.log_every == 0 or step == steps - 1:
                parts = " ".join(f"{k}={v:.4f}" for k, v in comps.items())
                log_lines.append(f"step={step} lr={lr:.6g} loss={total:.4f} {parts}")
                if progress is not None:
                    progress(step, total, comps)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write("\n".join(log_lines) + "\n")
        return self.history
