"""Contact-based reconstruction guidance for the reverse diffusion loop.

Each guided step decodes the predicted interaction latent into contact
probabilities, measures how far active-contact vertices are from the placed
object, and nudges the predictions against the gradient of that score taken
with respect to the noisy inputs (full backpropagation through the denoiser).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidanceConfig:
    lam: float = 2.0
    guided_steps: int = 200  # applied on the last `guided_steps` reverse steps
    enabled: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("guidance scale must be >= 0")
        if self.guided_steps < 0:
            raise ValueError("guided step count must be >= 0")


def supervising_f_t(h_hat: torch.Tensor, o_hat: torch.Tensor,
                    z_hat: torch.Tensor, object_points: torch.Tensor,
                    codec, model) -> torch.Tensor:
    """Per-sample contact violation score (B,): sum over vertices of
    |predicted contact probability * distance to the placed object|."""
    from .body import skin_body_t
    from .geometry import place_object_t, vertex_distances_t

    batch = h_hat.shape[0]
    theta = h_hat[:, :153].reshape(batch, 51, 3)
    beta = h_hat[:, 153:163]
    g_h = h_hat[:, 163:172]
    v_h = skin_body_t(model, theta, beta, g_h)
    v_o = place_object_t(object_points, o_hat)
    if v_o.dim() == 2:
        v_o = v_o.unsqueeze(0).expand(batch, -1, -1)
    dist = vertex_distances_t(v_h, v_o)
    contact = codec.decode_t(z_hat)
    return (contact * dist).abs().sum(dim=-1)


def supervising_f(h_hat, o_hat, z_hat, object_spec, codec, model) -> float:
    """Numpy facade over :func:`supervising_f_t` for a single sample."""
    if not getattr(codec, "fitted", False):
        raise RuntimeError("codec not fitted")
    dtype = next(codec.parameters()).dtype
    with torch.no_grad():
        f = supervising_f_t(
            torch.as_tensor(np.asarray(h_hat, dtype=np.float64).reshape(1, 172), dtype=dtype),
            torch.as_tensor(np.asarray(o_hat, dtype=np.float64).reshape(1, 9), dtype=dtype),
            torch.as_tensor(np.asarray(z_hat, dtype=np.float64).reshape(1, 128), dtype=dtype),
            object_spec.points_t(dtype), codec, model)
    return float(f[0])


def guidance_update(noisy: dict, predicted, lam: float, *, generate,
                    object_points: torch.Tensor = None, codec=None, model=None,
                    score_fn=None):
    """Correct the predicted triple by the gradient of the supervising score
    with respect to the noisy inputs of generated modalities.

    ``noisy`` maps modality letters to the leaf tensors that fed the
    denoiser; ``predicted`` is the (h, o, i) output, still connected to those
    leaves through the graph. Conditioned modalities are never touched.
    Non-finite gradients skip the step with a warning. ``score_fn`` replaces
    the contact supervision (mainly for tests).
    """
    h_hat, o_hat, i_hat = predicted
    if lam == 0.0 or not generate:
        return h_hat, o_hat, i_hat
    if score_fn is None and (codec is None or model is None):
        raise ValueError("guidance requires a fitted codec and a body model")

    if score_fn is not None:
        score = score_fn(h_hat, o_hat, i_hat).sum()
    else:
        score = supervising_f_t(h_hat, o_hat, i_hat, object_points, codec, model).sum()
    leaves = [noisy[m] for m in "hoi" if m in generate]
    grads = torch.autograd.grad(score, leaves, allow_unused=True)

    grad_map = dict(zip([m for m in "hoi" if m in generate], grads))
    out = []
    for m, pred in zip("hoi", (h_hat, o_hat, i_hat)):
        g = grad_map.get(m)
        if m not in generate or g is None:
            out.append(pred)
        elif not torch.isfinite(g).all():
            log.warning("non-finite guidance gradient for modality %r; skipping", m)
            out.append(pred)
        else:
            out.append(pred - lam * g)
    return tuple(out)
