"""Core geometry: pose parameter types, body/object placement, contact
extraction, ZY-plane mirroring, Procrustes alignment, and keyframe
interpolation. All operations are pure functions over value inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation, Slerp

from .body import BodyModel, skin_body_t
from .rotations import (
    IDENTITY_6D,
    matrix_to_rot6d,
    mirror_axis_angle,
    mirror_rot6d,
    rot6d_to_matrix,
    rot6d_to_matrix_t,
)

MIRROR_SIGN = np.array([-1.0, 1.0, 1.0])
DEFAULT_CONTACT_TAU = 0.02  # meters, inclusive


@dataclass
class Pose6DoF:
    """Rigid transform: 3-d translation plus 6-d rotation (9 reals total)."""

    translation: np.ndarray
    rotation6d: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation6d = np.asarray(self.rotation6d, dtype=np.float64).reshape(6)

    @classmethod
    def identity(cls) -> "Pose6DoF":
        return cls(np.zeros(3), IDENTITY_6D.copy())

    @classmethod
    def from_vector(cls, v) -> "Pose6DoF":
        v = np.asarray(v, dtype=np.float64).reshape(9)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation6d])

    def matrix(self) -> np.ndarray:
        return rot6d_to_matrix(self.rotation6d)

    def mirrored(self) -> "Pose6DoF":
        return Pose6DoF(self.translation * MIRROR_SIGN, mirror_rot6d(self.rotation6d))


@dataclass
class HumanParams:
    """Body pose theta (51x3 axis-angle), shape beta (10), global pose."""

    theta: np.ndarray
    beta: np.ndarray
    g_h: Pose6DoF = field(default_factory=Pose6DoF.identity)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(51, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(10)

    @classmethod
    def rest(cls) -> "HumanParams":
        return cls(np.zeros((51, 3)), np.zeros(10))

    @classmethod
    def from_flat(cls, v) -> "HumanParams":
        v = np.asarray(v, dtype=np.float64).reshape(172)
        return cls(v[:153].reshape(51, 3), v[153:163], Pose6DoF.from_vector(v[163:]))

    def flatten(self) -> np.ndarray:
        """Stable flattening order: theta row-major, beta, then g_h."""
        return np.concatenate([self.theta.ravel(), self.beta, self.g_h.as_vector()])


@dataclass
class ObjectParams:
    """Diffused object state: a single 6-DoF global pose."""

    g_o: Pose6DoF = field(default_factory=Pose6DoF.identity)

    @classmethod
    def from_flat(cls, v) -> "ObjectParams":
        return cls(Pose6DoF.from_vector(v))

    def flatten(self) -> np.ndarray:
        return self.g_o.as_vector()


def skin_body(model: BodyModel, h: HumanParams) -> np.ndarray:
    """Posed body vertices (690, 3): LBS of the shaped template under theta,
    then the global transform."""
    v = skin_body_t(
        model,
        torch.as_tensor(h.theta, dtype=torch.float64).unsqueeze(0),
        torch.as_tensor(h.beta, dtype=torch.float64).unsqueeze(0),
        torch.as_tensor(h.g_h.as_vector(), dtype=torch.float64).unsqueeze(0),
    )
    return v.squeeze(0).numpy()


def body_joints(model: BodyModel, h: HumanParams) -> np.ndarray:
    """Joint locations (52, 3) regressed from the posed vertices."""
    return model.joint_regressor @ skin_body(model, h)


def place_object(points: np.ndarray, o: ObjectParams) -> np.ndarray:
    """Rigidly place canonical points: R @ p + t per point."""
    points = np.asarray(points, dtype=np.float64)
    return points @ o.g_o.matrix().T + o.g_o.translation


def place_object_t(points: torch.Tensor, g_o: torch.Tensor) -> torch.Tensor:
    """Batched torch placement: points (N, 3), g_o (B, 9) -> (B, N, 3)."""
    rot = rot6d_to_matrix_t(g_o[..., 3:9])
    return points @ rot.transpose(-1, -2) + g_o[..., :3].unsqueeze(-2)


def vertex_distances(v_human: np.ndarray, v_object: np.ndarray) -> np.ndarray:
    """Per-human-vertex distance to the closest object vertex. Computed as an
    explicit squared-difference reduction so results match a plain double
    loop bit for bit."""
    v_human = np.asarray(v_human, dtype=np.float64)
    v_object = np.asarray(v_object, dtype=np.float64)
    if v_object.size == 0:
        raise ValueError("empty object point set")
    if v_human.size == 0:
        raise ValueError("empty human point set")
    diff = v_human[:, None, :] - v_object[None, :, :]
    return np.sqrt((diff * diff).sum(-1).min(axis=1))


def vertex_distances_t(v_human: torch.Tensor, v_object: torch.Tensor) -> torch.Tensor:
    """Torch counterpart, batched (B, H, 3) x (B, O, 3) -> (B, H). The hard
    min backpropagates through the argmin pair (lowest index on ties): the
    argmin is found without grad via the squared-distance expansion, then the
    distance of just that pair is recomputed differentiably."""
    squeeze = v_human.dim() == 2
    if squeeze:
        v_human, v_object = v_human.unsqueeze(0), v_object.unsqueeze(0)
    with torch.no_grad():
        # |a|^2 is constant per row and cannot change the argmin
        score = v_human @ v_object.transpose(-1, -2)
        score.mul_(-2.0)
        score.add_(v_object.pow(2).sum(-1).unsqueeze(-2))
        nearest = score.argmin(dim=-1)  # (B, H)
    matched = torch.gather(
        v_object, 1, nearest.unsqueeze(-1).expand(-1, -1, 3))
    out = (v_human - matched).norm(dim=-1)
    return out.squeeze(0) if squeeze else out


def threshold_contacts(distances: np.ndarray, tau: float = DEFAULT_CONTACT_TAU) -> np.ndarray:
    """Binary contact map: 1 where distance <= tau (inclusive boundary)."""
    if tau <= 0:
        raise ValueError("contact threshold tau must be positive")
    return (np.asarray(distances) <= tau).astype(np.float64)


def parts_in_contact(contacts: np.ndarray, model: BodyModel) -> set:
    """Names of parts with at least one vertex flagged in the contact map."""
    contacts = np.asarray(contacts).reshape(-1)
    if contacts.shape[0] != model.template.shape[0]:
        raise ValueError("contact map length does not match the template")
    active = np.unique(model.part_labels[contacts > 0.5])
    return {model.part_names[i] for i in active}


def mirror_sample(h: HumanParams, o: ObjectParams, contacts: np.ndarray,
                  model: BodyModel):
    """Reflect a full sample through the ZY plane.

    Positions negate x; rotations conjugate by diag(-1,1,1); theta rows are
    permuted by the left-right joint map with per-joint axis-angle reflection;
    the contact map follows the vertex mirror permutation. Involution is
    bit-exact (only negations and permutations are involved).
    """
    perm = model.joint_mirror[1:] - 1  # theta row j-1 belongs to joint j
    theta = mirror_axis_angle(h.theta)[perm]
    h_m = HumanParams(theta, h.beta.copy(), h.g_h.mirrored())
    o_m = ObjectParams(o.g_o.mirrored())
    c_m = np.asarray(contacts)[model.mirror_map].copy()
    return h_m, o_m, c_m


def procrustes_align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Similarity-align point set ``a`` onto ``b``: returns s*R@a + t with the
    optimal proper rotation, scale, and translation (least squares)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 3:
        raise ValueError("expected two equal J x 3 arrays with J >= 3")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")

    mu_a, mu_b = a.mean(0), b.mean(0)
    a0, b0 = a - mu_a, b - mu_b
    var_a = (a0**2).sum() / len(a)
    cov = b0.T @ a0 / len(a)
    if np.linalg.matrix_rank(a0, tol=1e-9) < 2 or var_a < 1e-18:
        raise ValueError("degenerate point configuration (collinear or coincident)")

    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u @ vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    scale = np.trace(np.diag(d) @ s) / var_a
    t = mu_b - scale * rot @ mu_a
    return scale * a @ rot.T + t


def interpolate_keyframes(poses, times, query: float) -> Pose6DoF:
    """Pose at ``query``: linear in translation, spherical in rotation,
    between the bracketing keyframes."""
    times = np.asarray(times, dtype=np.float64)
    if len(poses) != len(times) or len(times) == 0:
        raise ValueError("need one timestamp per pose")
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    if query < times[0] or query > times[-1]:
        raise ValueError(f"query time {query} outside [{times[0]}, {times[-1]}]")

    exact = np.flatnonzero(times == query)
    if exact.size:
        p = poses[exact[0]]
        return Pose6DoF(p.translation.copy(), p.rotation6d.copy())

    hi = int(np.searchsorted(times, query))
    lo = hi - 1
    frac = (query - times[lo]) / (times[hi] - times[lo])
    trans = (1.0 - frac) * poses[lo].translation + frac * poses[hi].translation
    keys = Rotation.from_matrix([poses[lo].matrix(), poses[hi].matrix()])
    rot = Slerp([0.0, 1.0], keys)(frac).as_matrix()
    return Pose6DoF(trans, matrix_to_rot6d(rot))
