"""Procedural parametric body: capsule-sampled humanoid point template with a
52-joint kinematic tree, linear blend skinning, shape blendshapes, and an
exactly mirror-symmetric construction.

The template has 690 vertices grouped into 24 named parts. Right-side
vertices are exact x-negated copies of left-side vertices (and central parts
are folded to x>=0 then mirrored), so the mirror map is an index permutation
and mirroring is a bit-exact involution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .container import read_container, write_container
from .rotations import axis_angle_to_matrix_t, rot6d_to_matrix_t

TEMPLATE_SEED = 74190235
N_VERTICES = 690
N_JOINTS = 52
N_POSE_JOINTS = 51
N_SHAPE = 10

JOINT_NAMES = [
    "root", "left_hip", "right_hip", "spine_low", "left_knee", "right_knee",
    "spine_mid", "left_ankle", "right_ankle", "spine_high", "left_toes",
    "right_toes", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
] + [
    f"{side}_{finger}{k}"
    for side in ("left", "right")
    for finger in ("thumb", "index", "middle", "ring", "pinky")
    for k in (1, 2, 3)
]

PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
    + [20, 22, 23, 20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35]
    + [21, 37, 38, 21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50]
)

PART_NAMES = [
    "pelvis", "spine", "chest", "upper_chest", "neck", "head",
    "left_thigh", "left_calf", "left_foot", "left_toes", "left_shoulder",
    "left_upper_arm", "left_forearm", "left_hand", "left_fingers",
    "right_thigh", "right_calf", "right_foot", "right_toes", "right_shoulder",
    "right_upper_arm", "right_forearm", "right_hand", "right_fingers",
]
SITTING_PARTS = frozenset({"pelvis", "left_thigh", "right_thigh"})
HAND_PARTS = frozenset({"left_hand", "right_hand", "left_fingers", "right_fingers"})


def _rest_joints() -> np.ndarray:
    j = np.zeros((N_JOINTS, 3))
    j[0] = (0.0, 0.95, 0.0)
    j[1], j[2] = (0.10, 0.90, 0.0), (-0.10, 0.90, 0.0)
    j[3] = (0.0, 1.04, 0.0)
    j[4], j[5] = (0.11, 0.50, 0.0), (-0.11, 0.50, 0.0)
    j[6] = (0.0, 1.16, 0.0)
    j[7], j[8] = (0.12, 0.09, -0.02), (-0.12, 0.09, -0.02)
    j[9] = (0.0, 1.28, 0.0)
    j[10], j[11] = (0.13, 0.03, 0.10), (-0.13, 0.03, 0.10)
    j[12] = (0.0, 1.45, 0.0)
    j[13], j[14] = (0.05, 1.40, 0.0), (-0.05, 1.40, 0.0)
    j[15] = (0.0, 1.55, 0.0)
    j[16], j[17] = (0.18, 1.42, 0.0), (-0.18, 1.42, 0.0)
    j[18], j[19] = (0.45, 1.42, 0.0), (-0.45, 1.42, 0.0)
    j[20], j[21] = (0.70, 1.42, 0.0), (-0.70, 1.42, 0.0)
    # five fingers per hand, three joints each, extending along +/-x
    wrist = j[20]
    for f, zoff in enumerate((0.05, 0.025, 0.0, -0.025, -0.05)):
        base = 22 + 3 * f
        if f == 0:  # thumb: shorter, angled forward
            j[base] = wrist + (0.035, -0.01, zoff)
            j[base + 1] = j[base] + (0.030, 0.0, 0.015)
            j[base + 2] = j[base + 1] + (0.025, 0.0, 0.010)
        else:
            j[base] = wrist + (0.085, 0.0, zoff)
            j[base + 1] = j[base] + (0.035, 0.0, 0.0)
            j[base + 2] = j[base + 1] + (0.025, 0.0, 0.0)
    for f in range(5):
        left = 22 + 3 * f
        right = 37 + 3 * f
        for k in range(3):
            j[right + k] = j[left + k] * (-1.0, 1.0, 1.0)
    return j


# joint index (or -1 for none) the 52-entry mirror permutation
def _joint_mirror_map() -> np.ndarray:
    m = np.arange(N_JOINTS)
    pairs = [(1, 2), (4, 5), (7, 8), (10, 11), (13, 14), (16, 17), (18, 19), (20, 21)]
    pairs += [(22 + k, 37 + k) for k in range(15)]
    for a, b in pairs:
        m[a], m[b] = b, a
    return m


@dataclass(frozen=True)
class BodyModel:
    """Immutable body template plus skinning/regression data."""

    template: np.ndarray          # (690, 3)
    parents: np.ndarray           # (52,)
    rest_joints: np.ndarray       # (52, 3)
    skin_weights: np.ndarray      # (690, 52), rows sum to 1
    shape_basis: np.ndarray       # (690, 3, 10)
    part_labels: np.ndarray       # (690,) ints in [0, 24)
    part_names: tuple             # 24 strings
    mirror_map: np.ndarray        # (690,) involutive permutation
    joint_mirror: np.ndarray      # (52,) involutive permutation
    joint_regressor: np.ndarray   # (52, 690), rows sum to 1
    bone_joints: np.ndarray       # (n_bones, 2); child -1 means virtual end
    bone_ends: np.ndarray         # (n_bones, 3) rest position of segment end
    bone_radii: np.ndarray        # (n_bones,)
    _torch_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def part_id(self, name: str) -> int:
        return self.part_names.index(name)

    def vertices_of_part(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.part_labels == self.part_id(name))

    def tensors(self, dtype=torch.float32) -> dict:
        """Torch views of the model arrays, cached per dtype."""
        if dtype not in self._torch_cache:
            self._torch_cache[dtype] = {
                name: torch.as_tensor(getattr(self, name), dtype=dtype)
                for name in (
                    "template", "rest_joints", "skin_weights", "shape_basis",
                    "joint_regressor", "bone_ends", "bone_radii",
                )
            }
        return self._torch_cache[dtype]


# part -> list of (parent_joint, child_joint_or_None, radius); vertex budget.
# Central parts list an even budget (half sampled at x>0, half mirrored);
# left parts are mirrored verbatim into the right block.
_CENTRAL_PARTS = {
    "pelvis": ([(0, 1, 0.11), (0, 2, 0.11), (0, 3, 0.11)], 48),
    "spine": ([(3, 6, 0.10)], 30),
    "chest": ([(6, 9, 0.115)], 30),
    "upper_chest": ([(9, 12, 0.10), (9, 13, 0.08), (9, 14, 0.08)], 30),
    "neck": ([(12, 15, 0.05)], 12),
    "head": ([(15, None, 0.09)], 50),
}
_LEFT_PARTS = {
    "left_thigh": ([(1, 4, 0.075)], 30),
    "left_calf": ([(4, 7, 0.055)], 25),
    "left_foot": ([(7, 10, 0.045)], 12),
    "left_toes": ([(10, None, 0.028)], 6),
    "left_shoulder": ([(13, 16, 0.06)], 12),
    "left_upper_arm": ([(16, 18, 0.045)], 25),
    "left_forearm": ([(18, 20, 0.038)], 25),
    "left_hand": ([(20, 22, 0.030), (20, 25, 0.030), (20, 28, 0.030),
                   (20, 31, 0.030), (20, 34, 0.030)], 60),
    "left_fingers": (
        [(22 + 3 * f + k, 22 + 3 * f + k + 1, 0.011) for f in range(5) for k in range(2)]
        + [(22 + 3 * f + 2, None, 0.011) for f in range(5)],
        50,
    ),
}
_VIRTUAL_EXTENT = {  # rest offset of the virtual segment end from its joint
    "head": (0.0, 0.16, 0.0),
    "left_toes": (0.0, 0.0, 0.06),
    "left_fingers": (0.012, 0.0, 0.0),
}


def _segment_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(axis, ref)
    n1 /= np.linalg.norm(n1)
    return n1, np.cross(axis, n1)


def _sample_part(rng, joints, part, count):
    """Sample ``count`` capsule-surface points; returns points plus the
    (parent, child, axial coordinate) used to derive skin weights."""
    segments, ends = [], []
    bones, budget = part
    for a, b, r in bones:
        start = joints[a]
        end = joints[b] if b is not None else start + np.array(_end_for(a, bones))
        segments.append((a, b, start, end, r))
    pts = np.empty((count, 3))
    meta = []
    for i in range(count):
        a, b, start, end, r = segments[rng.integers(len(segments))]
        axis = end - start
        length = np.linalg.norm(axis)
        u = axis / length
        n1, n2 = _segment_frame(u)
        s = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        pts[i] = start + s * axis + r * (np.cos(phi) * n1 + np.sin(phi) * n2)
        meta.append((a, b, s))
    return pts, meta


_END_LOOKUP: dict = {}


def _end_for(joint, bones):
    return _END_LOOKUP[joint]


def _skin_row(a, b, s, joint_map=None):
    """Weight split along a bone: the parent joint drives the segment and the
    far half blends up to 50% toward the child."""
    row = np.zeros(N_JOINTS)
    w_child = 0.0 if b is None else 0.5 * max(0.0, (s - 0.5) / 0.5)
    if joint_map is not None:
        a = joint_map[a]
        b = None if b is None else joint_map[b]
    row[a] = 1.0 - w_child
    if b is not None:
        row[b] = w_child
    return row


def _shape_direction(k: int, pts: np.ndarray) -> np.ndarray:
    """Analytic blendshape k evaluated at points; x-odd / y,z-even so the
    basis mirrors exactly."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    out = np.zeros_like(pts)
    if k == 0:  # overall scale about the root
        out = 0.08 * (pts - np.array([0.0, 0.95, 0.0]))
    elif k == 1:  # height
        out[:, 1] = 0.10 * (y - 0.95)
    elif k == 2:  # girth: radial push from the vertical axis
        out[:, 0], out[:, 2] = 0.05 * x, 0.05 * z
    else:  # height-banded radial wiggles at increasing frequency
        freq = 2.0 + 1.5 * (k - 3)
        gain = 0.02 * np.sin(freq * y + 0.7 * k)
        out[:, 0], out[:, 2] = gain * x, gain * z
    return out


def build_body_model() -> BodyModel:
    """Construct the fixed-seed symmetric body model."""
    joints = _rest_joints()
    joint_mirror = _joint_mirror_map()
    _END_LOOKUP.clear()
    for part_name, offset in _VIRTUAL_EXTENT.items():
        bones = (_CENTRAL_PARTS.get(part_name) or _LEFT_PARTS[part_name])[0]
        for a, b, _ in bones:
            if b is None:
                _END_LOOKUP[a] = np.asarray(offset, dtype=float)

    rng = np.random.default_rng(TEMPLATE_SEED)
    mirror_sign = np.array([-1.0, 1.0, 1.0])

    verts, weights, labels, mirror = [], [], [], []
    bone_joints, bone_ends, bone_radii = [], [], []

    def register_bones(bones, mirrored=False):
        for a, b, r in bones:
            if mirrored:
                a2 = joint_mirror[a]
                b2 = None if b is None else joint_mirror[b]
                end = (joints[b2] if b2 is not None
                       else joints[a2] + _END_LOOKUP[a] * mirror_sign)
                bone_joints.append((a2, -1 if b2 is None else b2))
            else:
                end = joints[b] if b is not None else joints[a] + _END_LOOKUP[a]
                bone_joints.append((a, -1 if b is None else b))
            bone_ends.append(end)
            bone_radii.append(r)

    part_index = {name: i for i, name in enumerate(PART_NAMES)}

    for name, part in _CENTRAL_PARTS.items():
        bones, budget = part
        half = budget // 2
        pts, meta = _sample_part(rng, joints, part, half)
        flip = pts[:, 0] < 0.0
        pts[flip] *= mirror_sign  # fold onto x >= 0
        base = len(verts)
        for i in range(half):
            a, b, s = meta[i]
            jm = joint_mirror if flip[i] else None
            verts.append(pts[i])
            weights.append(_skin_row(a, b, s, jm))
            labels.append(part_index[name])
            mirror.append(base + half + i)
        for i in range(half):  # mirrored twins
            a, b, s = meta[i]
            jm = None if flip[i] else joint_mirror
            verts.append(pts[i] * mirror_sign)
            weights.append(_skin_row(a, b, s, jm))
            labels.append(part_index[name])
            mirror.append(base + i)
        register_bones(bones)

    left_blocks = {}
    for name, part in _LEFT_PARTS.items():
        bones, budget = part
        pts, meta = _sample_part(rng, joints, part, budget)
        left_blocks[name] = (pts, meta, len(verts))
        for i in range(budget):
            a, b, s = meta[i]
            verts.append(pts[i])
            weights.append(_skin_row(a, b, s))
            labels.append(part_index[name])
            mirror.append(-1)  # patched below
        register_bones(bones)

    for name, (pts, meta, base) in left_blocks.items():
        right_name = name.replace("left_", "right_")
        rbase = len(verts)
        for i in range(len(pts)):
            a, b, s = meta[i]
            verts.append(pts[i] * mirror_sign)
            weights.append(_skin_row(a, b, s, joint_mirror))
            labels.append(part_index[right_name])
            mirror.append(base + i)
            mirror[base + i] = rbase + i
        register_bones((_LEFT_PARTS[name])[0], mirrored=True)

    template = np.asarray(verts)
    skin_weights = np.asarray(weights)
    mirror_map = np.asarray(mirror)
    part_labels = np.asarray(labels)
    assert template.shape == (N_VERTICES, 3)

    # shape basis: evaluate on source vertices, copy mirrored values to twins
    basis = np.zeros((N_VERTICES, 3, N_SHAPE))
    for k in range(N_SHAPE):
        direction = _shape_direction(k, template)
        src = np.arange(N_VERTICES) < mirror_map  # one vertex per mirror pair
        direction[~src] = direction[mirror_map[~src]] * mirror_sign
        basis[:, :, k] = direction

    # joint regressor: uniform average of each joint's top-weighted vertices
    # (the full maximal-weight tier, which is mirror-closed by construction)
    regressor = np.zeros((N_JOINTS, N_VERTICES))
    for j in range(N_JOINTS):
        w = skin_weights[:, j]
        top = np.flatnonzero(w >= w.max() - 1e-12)
        regressor[j, top] = 1.0 / len(top)

    return BodyModel(
        template=template,
        parents=PARENTS.copy(),
        rest_joints=joints,
        skin_weights=skin_weights,
        shape_basis=basis,
        part_labels=part_labels,
        part_names=tuple(PART_NAMES),
        mirror_map=mirror_map,
        joint_mirror=joint_mirror,
        joint_regressor=regressor,
        bone_joints=np.asarray(bone_joints, dtype=np.int64),
        bone_ends=np.asarray(bone_ends),
        bone_radii=np.asarray(bone_radii),
    )


def forward_kinematics_t(theta: torch.Tensor, rest_joints: torch.Tensor,
                         parents: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    """Pose the tree. theta (B, 51, 3) axis-angle for joints 1..51 (the root
    has no local rotation); rest_joints (B, 52, 3) or (52, 3).

    Returns world rotations (B, 52, 3, 3) and joint positions (B, 52, 3).
    """
    batch = theta.shape[0]
    if rest_joints.dim() == 2:
        rest_joints = rest_joints.unsqueeze(0).expand(batch, -1, -1)
    local = axis_angle_to_matrix_t(theta)
    eye = torch.eye(3, dtype=theta.dtype, device=theta.device)
    rots = [eye.expand(batch, 3, 3)]
    pos = [rest_joints[:, 0]]
    for j in range(1, N_JOINTS):
        p = parents[j]
        rots.append(rots[p] @ local[:, j - 1])
        pos.append(pos[p] + (rots[p] @ (rest_joints[:, j] - rest_joints[:, p]).unsqueeze(-1)).squeeze(-1))
    return torch.stack(rots, dim=1), torch.stack(pos, dim=1)


def skin_body_t(model: BodyModel, theta: torch.Tensor, beta: torch.Tensor,
                g_h: torch.Tensor, return_joints: bool = False):
    """Differentiable skinning: (B,51,3) theta, (B,10) beta, (B,9) global pose
    -> (B, 690, 3) vertices (and posed joints if requested)."""
    t = model.tensors(theta.dtype)
    offset = torch.einsum("vck,bk->bvc", t["shape_basis"], beta)
    shaped = t["template"] + offset
    joints = t["rest_joints"] + torch.einsum("jv,bvc->bjc", t["joint_regressor"], offset)

    rots, pos = forward_kinematics_t(theta, joints, model.parents)
    trans_part = pos - (rots @ joints.unsqueeze(-1)).squeeze(-1)
    blend_rot = torch.einsum("vj,bjrc->bvrc", t["skin_weights"], rots)
    blend_trans = torch.einsum("vj,bjc->bvc", t["skin_weights"], trans_part)
    verts = (blend_rot @ shaped.unsqueeze(-1)).squeeze(-1) + blend_trans

    g_rot = rot6d_to_matrix_t(g_h[..., 3:9])
    g_t = g_h[..., :3]
    verts = verts @ g_rot.transpose(-1, -2) + g_t.unsqueeze(1)
    if return_joints:
        posed = pos @ g_rot.transpose(-1, -2) + g_t.unsqueeze(1)
        return verts, posed
    return verts


def posed_capsules_t(model: BodyModel, theta: torch.Tensor, beta: torch.Tensor,
                     g_h: torch.Tensor):
    """Posed bone capsule segments (starts, ends, radii) for proximity tests.
    Shapes (B, n_bones, 3) twice plus (n_bones,)."""
    t = model.tensors(theta.dtype)
    offset = torch.einsum("vck,bk->bvc", t["shape_basis"], beta)
    joints = t["rest_joints"] + torch.einsum("jv,bvc->bjc", t["joint_regressor"], offset)
    rots, pos = forward_kinematics_t(theta, joints, model.parents)

    a_idx = model.bone_joints[:, 0]
    b_idx = model.bone_joints[:, 1]
    starts = pos[:, a_idx]
    rest_ends = t["bone_ends"].unsqueeze(0).expand_as(starts)
    moved = (rots[:, a_idx] @ (rest_ends - joints[:, a_idx]).unsqueeze(-1)).squeeze(-1) + pos[:, a_idx]
    real = torch.as_tensor(b_idx >= 0)
    ends = torch.where(real.unsqueeze(-1), pos[:, np.maximum(b_idx, 0)], moved)

    g_rot = rot6d_to_matrix_t(g_h[..., 3:9])
    g_t = g_h[..., :3].unsqueeze(1)
    starts = starts @ g_rot.transpose(-1, -2) + g_t
    ends = ends @ g_rot.transpose(-1, -2) + g_t
    radii = t["bone_radii"]
    return starts, ends, radii


def save_body_model(model: BodyModel, path) -> None:
    write_container(
        path,
        manifest={
            "kind": "body_model",
            "part_names": list(model.part_names),
            "template_seed": TEMPLATE_SEED,
        },
        arrays={
            "template": model.template,
            "parents": model.parents.astype(np.float32),
            "rest_joints": model.rest_joints,
            "skin_weights": model.skin_weights,
            "shape_basis": model.shape_basis,
            "part_labels": model.part_labels.astype(np.float32),
            "mirror_map": model.mirror_map.astype(np.float32),
            "joint_mirror": model.joint_mirror.astype(np.float32),
            "joint_regressor": model.joint_regressor,
            "bone_joints": model.bone_joints.astype(np.float32),
            "bone_ends": model.bone_ends,
            "bone_radii": model.bone_radii,
        },
    )


def load_body_model(path) -> BodyModel:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "body_model":
        raise ValueError("container does not hold a body model")
    return BodyModel(
        template=arrays["template"].astype(np.float64),
        parents=arrays["parents"].astype(np.int64),
        rest_joints=arrays["rest_joints"].astype(np.float64),
        skin_weights=arrays["skin_weights"].astype(np.float64),
        shape_basis=arrays["shape_basis"].astype(np.float64),
        part_labels=arrays["part_labels"].astype(np.int64),
        part_names=tuple(manifest["part_names"]),
        mirror_map=arrays["mirror_map"].astype(np.int64),
        joint_mirror=arrays["joint_mirror"].astype(np.int64),
        joint_regressor=arrays["joint_regressor"].astype(np.float64),
        bone_joints=arrays["bone_joints"].astype(np.int64),
        bone_ends=arrays["bone_ends"].astype(np.float64),
        bone_radii=arrays["bone_radii"].astype(np.float64),
    )


def export_ply(path, vertices: np.ndarray) -> None:
    """ASCII PLY point cloud export for quick visualization."""
    vertices = np.asarray(vertices, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(vertices)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in vertices:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
