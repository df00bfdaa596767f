"""Procedural scene dataset: humans from a rest-pose prior, objects placed by
per-class analytic rules, contacts/labels derived on the fly. The placement
rules have closed-form translation moments given the human, which is what
makes conditional sampling testable against an oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .body import BodyModel, N_POSE_JOINTS, skin_body_t
from .codec import generate_label
from .container import read_container, write_container
from .geometry import (
    DEFAULT_CONTACT_TAU,
    parts_in_contact,
    place_object_t,
    threshold_contacts,
    vertex_distances_t,
)
from .objects import ClassRule, ObjectSpec, default_class_table, spec_library

GENERATOR_VERSION = 1
BETA_SIGMA = 0.5

# per-joint pose prior scales (radians), indexed by joint id 1..51
_JOINT_SIGMA = {
    "hip": 0.10, "knee": 0.12, "ankle": 0.08, "toes": 0.05,
    "spine": 0.05, "neck": 0.08, "head": 0.10, "collar": 0.05,
    "shoulder": 0.25, "elbow": 0.30, "wrist": 0.25, "finger": 0.08,
}


def _pose_scales() -> np.ndarray:
    from .body import JOINT_NAMES

    scales = np.empty(N_POSE_JOINTS)
    for j in range(1, 52):
        name = JOINT_NAMES[j]
        if "hip" in name:
            key = "hip"
        elif "knee" in name:
            key = "knee"
        elif "ankle" in name:
            key = "ankle"
        elif "toes" in name:
            key = "toes"
        elif "spine" in name:
            key = "spine"
        elif name == "neck":
            key = "neck"
        elif name == "head":
            key = "head"
        elif "collar" in name:
            key = "collar"
        elif "shoulder" in name:
            key = "shoulder"
        elif "elbow" in name:
            key = "elbow"
        elif "wrist" in name:
            key = "wrist"
        else:
            key = "finger"
        scales[j - 1] = _JOINT_SIGMA[key]
    return scales


POSE_SCALES = _pose_scales()

HAND_ANCHOR = {"left": 28, "right": 43}  # middle-finger base joints
ANKLE_JOINTS = (7, 8)
ROOT_JOINT = 0


def _rule_sigma_vec(rule: ClassRule) -> np.ndarray:
    if rule.kind == "handheld":
        return np.full(3, rule.sigma)
    if rule.kind == "seat":
        return np.array([rule.sigma, rule.sigma / 2.0, rule.sigma])
    if rule.kind == "floor":
        return np.array([rule.sigma, 0.0, rule.sigma])
    raise ValueError(f"unknown placement rule kind {rule.kind!r}")


def _half_height(rule: ClassRule) -> float:
    if rule.shape == "sphere":
        return rule.dims[0]
    if rule.shape == "box":
        return rule.dims[1] / 2.0
    return rule.dims[1] / 2.0  # cylinder (r, h)


def _anchor_from_joints(rule: ClassRule, joints: np.ndarray) -> np.ndarray:
    """Mean object translation given posed joints (52, 3)."""
    if rule.kind == "handheld":
        return joints[HAND_ANCHOR[rule.hand]].copy()
    if rule.kind == "seat":
        return joints[ROOT_JOINT] + np.array([0.0, -rule.drop, 0.0])
    if rule.kind == "floor":
        mid = (joints[ANKLE_JOINTS[0]] + joints[ANKLE_JOINTS[1]]) / 2.0
        return np.array([mid[0], _half_height(rule), mid[2]])
    raise ValueError(f"unknown placement rule kind {rule.kind!r}")


@dataclass(frozen=True)
class ConditionalMoments:
    """Closed-form mean/covariance of the object translation given a human."""

    mean: np.ndarray
    cov: np.ndarray


def posed_joints(model: BodyModel, theta, beta, g_h) -> np.ndarray:
    _, joints = skin_body_t(
        model,
        torch.as_tensor(np.asarray(theta, dtype=np.float64)).reshape(1, 51, 3),
        torch.as_tensor(np.asarray(beta, dtype=np.float64)).reshape(1, 10),
        torch.as_tensor(np.asarray(g_h, dtype=np.float64)).reshape(1, 9),
        return_joints=True)
    return joints.squeeze(0).numpy()


def analytic_conditional(class_id: int, theta, beta, g_h, model: BodyModel,
                         table: dict | None = None) -> ConditionalMoments:
    """Oracle moments of p(object translation | human) for a rule class."""
    table = default_class_table() if table is None else table
    if class_id not in table:
        raise KeyError(f"unknown class id {class_id}")
    rule = table[class_id]
    if rule.kind not in ("handheld", "seat", "floor"):
        raise ValueError(f"class {rule.name!r} has no closed-form conditional")
    joints = posed_joints(model, theta, beta, g_h)
    sig = _rule_sigma_vec(rule)
    return ConditionalMoments(_anchor_from_joints(rule, joints), np.diag(sig**2))


@dataclass(eq=False)
class Dataset:
    """In-memory dataset; float32 storage end to end."""

    seed: int
    tau: float
    class_table: dict
    class_ids: np.ndarray   # (n,) int32
    theta: np.ndarray       # (n, 51, 3)
    beta: np.ndarray        # (n, 10)
    g_h: np.ndarray         # (n, 9)
    g_o: np.ndarray         # (n, 9)
    dist: np.ndarray        # (n, 690)
    contact: np.ndarray     # (n, 690)
    labels: list
    z: np.ndarray | None = None
    generator_version: int = GENERATOR_VERSION

    @property
    def count(self) -> int:
        return len(self.class_ids)

    def manifest(self) -> dict:
        return {
            "kind": "dataset",
            "generator_version": self.generator_version,
            "seed": self.seed,
            "tau": self.tau,
            "count": self.count,
            "class_table": {str(cid): rule.to_dict()
                            for cid, rule in sorted(self.class_table.items())},
        }

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return replace(
            self,
            class_ids=self.class_ids[idx], theta=self.theta[idx],
            beta=self.beta[idx], g_h=self.g_h[idx], g_o=self.g_o[idx],
            dist=self.dist[idx], contact=self.contact[idx],
            labels=[self.labels[j] for j in idx],
            z=None if self.z is None else self.z[idx])


def _yaw_6d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    # columns of the yaw matrix about +y
    return np.array([c, 0.0, -s, 0.0, 1.0, 0.0])


def generate_dataset(n: int, seed: int, table: dict | None = None,
                     tau: float = DEFAULT_CONTACT_TAU,
                     model: BodyModel | None = None) -> Dataset:
    """Generate ``n`` scene samples. Per-index rng substreams make the result
    reproducible sample by sample and safe to parallelize."""
    from .body import build_body_model

    if n < 1:
        raise ValueError("dataset size must be >= 1")
    table = default_class_table() if table is None else table
    model = build_body_model() if model is None else model
    class_ids_sorted = sorted(table)
    for rule in table.values():
        _rule_sigma_vec(rule)  # reject unknown rule kinds up front

    cls = np.empty(n, dtype=np.int32)
    theta = np.empty((n, 51, 3), dtype=np.float32)
    beta = np.empty((n, 10), dtype=np.float32)
    g_h = np.empty((n, 9), dtype=np.float32)
    g_o = np.empty((n, 9), dtype=np.float32)
    offsets = np.empty((n, 3))

    for i in range(n):
        rng = np.random.default_rng([seed, i, 0])
        rule = table[class_ids_sorted[rng.integers(len(class_ids_sorted))]]
        cls[i] = rule.class_id
        theta[i] = (rng.standard_normal((51, 3)) * POSE_SCALES[:, None]).astype(np.float32)
        beta[i] = (rng.standard_normal(10) * BETA_SIGMA).astype(np.float32)
        trans = np.array([rng.normal(0.0, 0.3), rng.normal(0.0, 0.02),
                          rng.normal(0.0, 0.3)])
        g_h[i, :3] = trans.astype(np.float32)
        g_h[i, 3:] = _yaw_6d(rng.uniform(0.0, 2.0 * np.pi)).astype(np.float32)
        if rule.kind == "handheld":
            rot = Rotation.random(random_state=rng).as_matrix()
            g_o[i, 3:] = np.concatenate([rot[:, 0], rot[:, 1]]).astype(np.float32)
        else:
            g_o[i, 3:] = _yaw_6d(rng.uniform(0.0, 2.0 * np.pi)).astype(np.float32)
        offsets[i] = rng.standard_normal(3)

    specs = spec_library(table)
    dist = np.empty((n, 690), dtype=np.float32)
    contact = np.empty((n, 690), dtype=np.float32)

    chunk = 16
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        th = torch.as_tensor(theta[start:stop], dtype=torch.float64)
        be = torch.as_tensor(beta[start:stop], dtype=torch.float64)
        gh = torch.as_tensor(g_h[start:stop], dtype=torch.float64)
        v_h, joints = skin_body_t(model, th, be, gh, return_joints=True)
        joints = joints.numpy()
        for k in range(start, stop):
            rule = table[int(cls[k])]
            anchor = _anchor_from_joints(rule, joints[k - start])
            g_o[k, :3] = (anchor + _rule_sigma_vec(rule) * offsets[k]).astype(np.float32)
        go_t = torch.as_tensor(g_o[start:stop].astype(np.float64))
        pts = torch.stack([
            torch.as_tensor(specs[int(c)].points, dtype=torch.float64)
            for c in cls[start:stop]])
        v_o = place_object_t(pts, go_t)
        d = vertex_distances_t(v_h, v_o).numpy()
        dist[start:stop] = d.astype(np.float32)
        contact[start:stop] = (d <= tau).astype(np.float32)

    labels = []
    for i in range(n):
        parts = parts_in_contact(contact[i], model)
        if parts:
            rng = np.random.default_rng([seed, i, 1])
            labels.append(generate_label(parts, table[int(cls[i])].name, rng))
        else:
            labels.append("")

    return Dataset(seed=seed, tau=tau, class_table=dict(table), class_ids=cls,
                   theta=theta, beta=beta, g_h=g_h, g_o=g_o, dist=dist,
                   contact=contact, labels=labels)


def regenerate(manifest: dict, model: BodyModel | None = None) -> Dataset:
    """Rebuild a dataset from its manifest; bit-identical to the original."""
    table = {int(k): ClassRule.from_dict(v)
             for k, v in manifest["class_table"].items()}
    return generate_dataset(manifest["count"], manifest["seed"], table,
                            manifest["tau"], model)


def realize_human_vertices(model: BodyModel, h_flat: torch.Tensor,
                           chunk: int = 128) -> torch.Tensor:
    """Batched skinning of flat (n, 172) human parameters -> (n, 690, 3)."""
    outs = []
    for start in range(0, h_flat.shape[0], chunk):
        part = h_flat[start : start + chunk]
        with torch.no_grad():
            outs.append(skin_body_t(
                model, part[:, :153].reshape(-1, 51, 3),
                part[:, 153:163], part[:, 163:172]))
    return torch.cat(outs)


def save_dataset(dataset: Dataset, path) -> None:
    manifest = dataset.manifest()
    manifest["labels"] = dataset.labels
    manifest["has_z"] = dataset.z is not None
    arrays = {
        "class_id": dataset.class_ids.astype(np.float32),
        "theta": dataset.theta, "beta": dataset.beta,
        "g_h": dataset.g_h, "g_o": dataset.g_o,
        "dist": dataset.dist, "contact": dataset.contact,
    }
    if dataset.z is not None:
        arrays["z"] = dataset.z
    write_container(path, manifest=manifest, arrays=arrays)


def load_dataset(path) -> Dataset:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "dataset":
        raise ValueError("container does not hold a dataset")
    table = {int(k): ClassRule.from_dict(v)
             for k, v in manifest["class_table"].items()}
    return Dataset(
        seed=manifest["seed"], tau=manifest["tau"], class_table=table,
        class_ids=arrays["class_id"].astype(np.int32),
        theta=arrays["theta"], beta=arrays["beta"],
        g_h=arrays["g_h"], g_o=arrays["g_o"],
        dist=arrays["dist"], contact=arrays["contact"],
        labels=list(manifest["labels"]),
        z=arrays.get("z"),
        generator_version=manifest["generator_version"])


def export_csv(dataset: Dataset, path) -> None:
    """Flattened per-sample rows for external analysis."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["index", "class_id", "class_name", "label", "contact_count"]
                  + [f"g_h_{k}" for k in range(9)] + [f"g_o_{k}" for k in range(9)]
                  + [f"beta_{k}" for k in range(10)])
        writer.writerow(header)
        for i in range(dataset.count):
            cid = int(dataset.class_ids[i])
            writer.writerow(
                [i, cid, dataset.class_table[cid].name, dataset.labels[i],
                 int(dataset.contact[i].sum())]
                + [f"{v:.7g}" for v in dataset.g_h[i]]
                + [f"{v:.7g}" for v in dataset.g_o[i]]
                + [f"{v:.7g}" for v in dataset.beta[i]])
