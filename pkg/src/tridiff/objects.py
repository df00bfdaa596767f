"""Object specifications: canonical point clouds, deterministic shape
descriptors, the class table, and per-class placement rules.

Canonical clouds are exactly symmetric about their local x=0 plane as point
sets (half sampled at x>0, half mirrored), so mirroring a placed object is a
permutation plus negation of its vertices. ``mirror_perm`` records the pair
permutation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

N_OBJECT_POINTS = 1500
N_CLASSES = 40
DESCRIPTOR_DIM = 1024
SHAPE_SEED = 52030117


@dataclass(frozen=True)
class ClassRule:
    """Placement rule of one object class.

    kind "handheld": center at a hand anchor joint + isotropic N(0, sigma^2),
    uniform rotation. kind "seat": center below the root joint by ``drop``
    with anisotropic jitter, yaw-only rotation. kind "floor": center at the
    feet midpoint on the ground plane with xz jitter, yaw-only rotation.
    """

    name: str
    class_id: int
    kind: str
    shape: str            # "sphere" | "box" | "cylinder"
    dims: tuple           # sphere: (r,); box: (lx, ly, lz); cylinder: (r, h)
    sigma: float = 0.01
    drop: float = 0.0
    hand: str = "right"

    def to_dict(self) -> dict:
        return {
            "name": self.name, "class_id": self.class_id, "kind": self.kind,
            "shape": self.shape, "dims": list(self.dims), "sigma": self.sigma,
            "drop": self.drop, "hand": self.hand,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassRule":
        return cls(d["name"], d["class_id"], d["kind"], d["shape"],
                   tuple(d["dims"]), d["sigma"], d["drop"], d["hand"])


def default_class_table() -> dict:
    """Built-in classes, keyed by id. Two handheld classes give the analytic
    conditional its closed form; seat and floor classes add variety."""
    rules = [
        ClassRule("ball", 0, "handheld", "sphere", (0.040,), sigma=0.01),
        ClassRule("basketball", 1, "handheld", "sphere", (0.055,), sigma=0.01),
        ClassRule("mug", 2, "handheld", "cylinder", (0.035, 0.09), sigma=0.01),
        ClassRule("box", 3, "handheld", "box", (0.07, 0.07, 0.07), sigma=0.01),
        ClassRule("chair", 4, "seat", "box", (0.42, 0.08, 0.42), sigma=0.01, drop=0.15),
        ClassRule("stool", 5, "seat", "cylinder", (0.16, 0.06), sigma=0.01, drop=0.14),
        ClassRule("board", 6, "floor", "box", (0.80, 0.06, 0.60), sigma=0.04),
        ClassRule("bin", 7, "floor", "cylinder", (0.22, 0.14), sigma=0.04),
    ]
    return {r.class_id: r for r in rules}


def class_by_name(table: dict, name: str) -> ClassRule:
    for rule in table.values():
        if rule.name == name:
            return rule
    raise KeyError(f"unknown object class {name!r}")


def _sample_surface(rng, shape: str, dims: tuple, count: int) -> np.ndarray:
    if shape == "sphere":
        (r,) = dims
        v = rng.normal(size=(count, 3))
        return r * v / np.linalg.norm(v, axis=1, keepdims=True)
    if shape == "box":
        lx, ly, lz = dims
        areas = np.array([ly * lz, lx * lz, lx * ly])
        areas = np.repeat(areas, 2)
        face = rng.choice(6, size=count, p=areas / areas.sum())
        uv = rng.uniform(-0.5, 0.5, size=(count, 2))
        pts = np.empty((count, 3))
        half = np.array([lx, ly, lz]) / 2.0
        for i in range(count):
            axis = face[i] // 2
            sign = 1.0 if face[i] % 2 == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[i, axis] = sign * half[axis]
            pts[i, others[0]] = uv[i, 0] * 2.0 * half[others[0]]
            pts[i, others[1]] = uv[i, 1] * 2.0 * half[others[1]]
        return pts
    if shape == "cylinder":
        r, h = dims
        side_area = 2.0 * np.pi * r * h
        cap_area = np.pi * r * r
        p = np.array([side_area, cap_area, cap_area])
        which = rng.choice(3, size=count, p=p / p.sum())
        pts = np.empty((count, 3))
        for i in range(count):
            phi = rng.uniform(0.0, 2.0 * np.pi)
            if which[i] == 0:
                y = rng.uniform(-h / 2.0, h / 2.0)
                pts[i] = (r * np.cos(phi), y, r * np.sin(phi))
            else:
                rad = r * np.sqrt(rng.uniform())
                y = h / 2.0 if which[i] == 1 else -h / 2.0
                pts[i] = (rad * np.cos(phi), y, rad * np.sin(phi))
        return pts
    raise ValueError(f"unknown shape kind {shape!r}")


def _descriptor(points: np.ndarray) -> np.ndarray:
    """Deterministic 1024-d geometry descriptor: moment/extent/histogram raw
    features lifted through a fixed random projection."""
    radii = np.linalg.norm(points, axis=1)
    rmax = max(radii.max(), 1e-9)
    cov = np.cov(points.T)
    eig = np.sort(np.linalg.eigvalsh(cov))
    raw = [np.sqrt(np.maximum(eig, 0.0)), points.max(0) - points.min(0),
           [radii.mean(), radii.std()]]
    raw.append(np.histogram(radii, bins=16, range=(0.0, rmax), density=True)[0] * rmax)
    for axis in range(3):
        span = max(np.abs(points[:, axis]).max(), 1e-9)
        raw.append(np.histogram(points[:, axis], bins=8, range=(-span, span),
                                density=True)[0] * span)
    raw = np.concatenate([np.atleast_1d(np.asarray(r, dtype=np.float64)) for r in raw])
    raw /= max(np.linalg.norm(raw), 1e-12)

    lift_rng = np.random.default_rng(9150331)
    lift = lift_rng.standard_normal((DESCRIPTOR_DIM, raw.size)) / np.sqrt(raw.size)
    f = lift @ raw
    return f / max(np.linalg.norm(f), 1e-12)


@dataclass(frozen=True)
class ObjectSpec:
    """Canonical object: class identity, centered point cloud, descriptor."""

    class_id: int
    name: str
    points: np.ndarray        # (1500, 3), centered, x-symmetric as a set
    mirror_perm: np.ndarray   # (1500,) pair permutation under x negation
    f_o: np.ndarray           # (1024,)
    one_hot: np.ndarray       # (40,)
    _torch_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def conditioning(self) -> np.ndarray:
        """The 1064-d conditioning vector: descriptor then one-hot class."""
        return np.concatenate([self.f_o, self.one_hot])

    def points_t(self, dtype=torch.float32) -> torch.Tensor:
        if dtype not in self._torch_cache:
            self._torch_cache[dtype] = torch.as_tensor(self.points, dtype=dtype)
        return self._torch_cache[dtype]


def make_object_spec(rule: ClassRule) -> ObjectSpec:
    """Build the canonical cloud for a class. Deterministic per class."""
    seed = int.from_bytes(hashlib.sha256(
        f"{SHAPE_SEED}/{rule.class_id}/{rule.name}".encode()).digest()[:4], "little")
    rng = np.random.default_rng(seed)
    half = N_OBJECT_POINTS // 2
    pts = _sample_surface(rng, rule.shape, rule.dims, half)
    pts[:, 0] = np.abs(pts[:, 0])  # fold to x >= 0
    # center the half before mirroring (x-centroid of the full set is zero by
    # construction) so the mirror pairing stays bit-exact
    pts[:, 1:] -= pts[:, 1:].mean(axis=0)
    pts = np.concatenate([pts, pts * np.array([-1.0, 1.0, 1.0])])

    perm = np.concatenate([np.arange(half, 2 * half), np.arange(half)])
    one_hot = np.zeros(N_CLASSES)
    one_hot[rule.class_id] = 1.0
    return ObjectSpec(rule.class_id, rule.name, pts, perm, _descriptor(pts), one_hot)


def spec_library(table: dict | None = None) -> dict:
    """ObjectSpec per class id for a class table."""
    table = default_class_table() if table is None else table
    return {cid: make_object_spec(rule) for cid, rule in table.items()}
