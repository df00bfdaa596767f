"""Two-stage optimization post-processing: pull predicted contact vertices
onto the object surface and push penetrating geometry out, while staying
close to the initial pose prediction.

Stage one adjusts the shoulder/elbow/wrist chains; stage two re-weights the
energies and opens up the finger joints. Plain gradient descent with a
halving line search keeps accepted energy monotone non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .body import BodyModel, posed_capsules_t, skin_body_t
from .convex import ConvexProxy, point_segment_distance_t, signed_distance_t
from .geometry import HumanParams, ObjectParams, place_object
from .objects import ObjectSpec

log = logging.getLogger(__name__)

ARM_CHAIN_JOINTS = (16, 17, 18, 19, 20, 21)        # shoulders, elbows, wrists
FINGER_JOINTS = tuple(range(22, 52))               # distal hand joints


@dataclass(frozen=True)
class StageConfig:
    w_dis: float
    w_pen: float
    w_reg: float
    w_isect: float
    iterations: int
    joints: tuple

    def __post_init__(self):
        if min(self.w_dis, self.w_pen, self.w_reg, self.w_isect) < 0:
            raise ValueError("energy weights must be non-negative")
        if self.iterations < 1:
            raise ValueError("iteration count must be >= 1")


@dataclass(frozen=True)
class RefineConfig:
    stage1: StageConfig = field(default_factory=lambda: StageConfig(
        w_dis=0.2, w_pen=100.0, w_reg=20.0, w_isect=400.0,
        iterations=1000, joints=ARM_CHAIN_JOINTS))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(
        w_dis=100.0, w_pen=100.0, w_reg=10.0, w_isect=100.0,
        iterations=2000, joints=ARM_CHAIN_JOINTS + FINGER_JOINTS))
    step_size: float = 2e-3
    contact_threshold: float = 0.5


@dataclass(frozen=True)
class EnergyBreakdown:
    e_dis: float
    e_pen: float
    e_reg: float
    e_isect: float
    total: float
    stage: int = 1


def e_reg_t(theta_hat: torch.Tensor, theta_refined: torch.Tensor) -> torch.Tensor:
    if theta_hat.shape != theta_refined.shape:
        raise ValueError("pose shape mismatch")
    return (theta_hat - theta_refined).flatten().norm()


def e_dis_t(vertices: torch.Tensor, active: torch.Tensor, proxy: ConvexProxy) -> torch.Tensor:
    """Attraction: total unsigned hull distance of active-contact vertices."""
    if active.numel() == 0:
        return vertices.sum() * 0.0
    return signed_distance_t(vertices[active], proxy).abs().sum()


def e_pen_t(vertices: torch.Tensor, proxy: ConvexProxy) -> torch.Tensor:
    """Repulsion: total penetration depth over all vertices."""
    return (-signed_distance_t(vertices, proxy)).clamp_min(0.0).sum()


def e_isect_t(vertices: torch.Tensor, proxy: ConvexProxy,
              object_points: torch.Tensor, capsules) -> torch.Tensor:
    """Squared-penetration collision term accumulated symmetrically: body
    vertices inside the object hull, and object vertices inside the body's
    bone capsules."""
    body_depth = (-signed_distance_t(vertices, proxy)).clamp_min(0.0)
    starts, ends, radii = capsules
    seg_d = point_segment_distance_t(object_points, starts, ends)
    object_depth = (radii - seg_d).max(dim=-1).values.clamp_min(0.0)
    return (body_depth**2).sum() + (object_depth**2).sum()


def refinement_energy(theta: torch.Tensor, theta_hat: torch.Tensor,
                      beta: torch.Tensor, g_h: torch.Tensor,
                      active: torch.Tensor, proxy: ConvexProxy,
                      object_points: torch.Tensor, model: BodyModel,
                      stage: StageConfig):
    """Weighted stage energy and its raw terms for one sample. The body/hull
    signed distances are computed once and shared between the terms; only
    vertices that can possibly be inside the hull (plus the active-contact
    vertices) enter the distance kernel, the rest contribute exactly zero to
    every penetration term."""
    t = theta.unsqueeze(0)
    vertices = skin_body_t(model, t, beta, g_h).squeeze(0)

    center, radius = proxy.bounding_sphere()
    with torch.no_grad():
        near = (vertices - torch.as_tensor(center, dtype=vertices.dtype)) \
            .norm(dim=-1) <= radius + 1e-6
        near[active] = True
        keep = torch.nonzero(near, as_tuple=True)[0]
    sd = signed_distance_t(vertices[keep], proxy)
    depth = (-sd).clamp_min(0.0)

    if active.numel():
        active_pos = torch.searchsorted(keep, active.sort().values)
        e_dis = sd[active_pos].abs().sum()
    else:
        e_dis = sd.sum() * 0.0
    e_pen = depth.sum()
    body_sq = (depth**2).sum()
    if stage.w_isect != 0.0:
        capsules = posed_capsules_t(model, t, beta, g_h)
        starts, ends, radii = capsules[0].squeeze(0), capsules[1].squeeze(0), capsules[2]
        seg_d = point_segment_distance_t(object_points, starts, ends)
        object_depth = (radii - seg_d).max(dim=-1).values.clamp_min(0.0)
        e_isect = body_sq + (object_depth**2).sum()
    else:
        e_isect = body_sq * 0.0

    terms = {
        "e_dis": e_dis,
        "e_pen": e_pen,
        "e_reg": e_reg_t(theta_hat, theta),
        "e_isect": e_isect,
    }
    total = (stage.w_dis * terms["e_dis"] + stage.w_pen * terms["e_pen"]
             + stage.w_reg * terms["e_reg"] + stage.w_isect * terms["e_isect"])
    return total, terms


def _run_stage(theta, theta_hat, beta, g_h, active, proxy, points, model,
               stage: StageConfig, step_size: float, stage_index: int, trace):
    mask = torch.zeros_like(theta)
    for j in stage.joints:
        mask[j - 1] = 1.0
    step = step_size
    for _ in range(stage.iterations):
        leaf = theta.clone().requires_grad_(True)
        total, _ = refinement_energy(
            leaf, theta_hat, beta, g_h, active, proxy, points, model, stage)
        if not torch.isfinite(total):
            log.warning("non-finite refinement energy; aborting stage")
            return theta
        (grad,) = torch.autograd.grad(total, leaf)
        grad = grad * mask
        if float(grad.norm()) == 0.0:
            break

        accepted = None
        trial_step = step
        for _ in range(25):
            trial = (theta - trial_step * grad).detach()
            with torch.no_grad():
                t_total, t_terms = refinement_energy(
                    trial, theta_hat, beta, g_h, active, proxy, points, model, stage)
            if torch.isfinite(t_total) and float(t_total) <= float(total.detach()):
                accepted = (trial, t_total, t_terms)
                break
            trial_step /= 2.0
        if accepted is None:
            break
        theta, t_total, t_terms = accepted
        step = min(trial_step * 1.5, 0.05)
        trace.append(EnergyBreakdown(
            e_dis=float(t_terms["e_dis"]), e_pen=float(t_terms["e_pen"]),
            e_reg=float(t_terms["e_reg"]), e_isect=float(t_terms["e_isect"]),
            total=float(t_total), stage=stage_index))
    return theta


def refine(h: HumanParams, o: ObjectParams, z: np.ndarray, spec: ObjectSpec,
           model: BodyModel, codec, config: RefineConfig | None = None):
    """Refine the body pose of one sample against its object.

    Only theta rows of the configured joints change; beta, the global poses,
    and the interaction latent stay untouched. Returns the refined
    HumanParams and the accepted-step energy trace.
    """
    config = config or RefineConfig()
    if not getattr(codec, "fitted", False):
        raise RuntimeError("codec not fitted")
    dtype = torch.float64

    contact_prob = codec.decode_contact(np.asarray(z, dtype=np.float64))
    active = torch.as_tensor(
        np.flatnonzero(contact_prob > config.contact_threshold))

    placed = place_object(spec.points, o)
    proxy = ConvexProxy.from_points(placed)
    points = torch.as_tensor(placed, dtype=dtype)

    theta_hat = torch.as_tensor(h.theta, dtype=dtype)
    beta = torch.as_tensor(h.beta, dtype=dtype).unsqueeze(0)
    g_h = torch.as_tensor(h.g_h.as_vector(), dtype=dtype).unsqueeze(0)

    trace: list = []
    theta = theta_hat.clone()
    theta = _run_stage(theta, theta_hat, beta, g_h, active, proxy, points,
                       model, config.stage1, config.step_size, 1, trace)
    theta = _run_stage(theta, theta_hat, beta, g_h, active, proxy, points,
                       model, config.stage2, config.step_size, 2, trace)

    refined = HumanParams(theta.numpy().copy(), h.beta.copy(),
                          type(h.g_h)(h.g_h.translation.copy(),
                                      h.g_h.rotation6d.copy()))
    return refined, trace
