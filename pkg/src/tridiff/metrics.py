"""Generated-distribution quality metrics, geometric consistency errors, the
nearest-neighbor retrieval baseline, and convex-proxy penetration statistics.

Distribution metrics compare feature sets under plain L2: humans are
root-centered regressed joints (flattened), objects are the 9-d global pose
(translation plus 6-d rotation, which avoids angle wrap-around).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .body import BodyModel
from .convex import ConvexProxy, signed_distance
from .geometry import DEFAULT_CONTACT_TAU, procrustes_align

HUMAN_KIND, OBJECT_KIND = "human", "object"


@dataclass(frozen=True)
class FeatureSet:
    kind: str
    x: np.ndarray  # (n, d)

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_2d(np.asarray(self.x, dtype=np.float64)))

    def __len__(self):
        return self.x.shape[0]


def human_features(model: BodyModel, vertices: np.ndarray) -> FeatureSet:
    """Root-centered joints from posed vertices (n, 690, 3)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    joints = np.einsum("jv,nvc->njc", model.joint_regressor, vertices)
    centered = joints - joints[:, :1]
    return FeatureSet(HUMAN_KIND, centered.reshape(len(vertices), -1))


def object_features(g_o: np.ndarray) -> FeatureSet:
    return FeatureSet(OBJECT_KIND, np.asarray(g_o, dtype=np.float64).reshape(-1, 9))


def _check_pair(gen: FeatureSet, ref: FeatureSet):
    if gen.kind != ref.kind:
        raise ValueError(f"feature kind mismatch: {gen.kind!r} vs {ref.kind!r}")
    if len(gen) == 0 or len(ref) == 0:
        raise ValueError("empty feature set")


def cov(gen: FeatureSet, ref: FeatureSet) -> float:
    """Percentage of reference samples matched by some generated sample's
    nearest neighbor."""
    _check_pair(gen, ref)
    nearest = cdist(gen.x, ref.x).argmin(axis=1)
    return 100.0 * len(np.unique(nearest)) / len(ref)


def mmd(gen: FeatureSet, ref: FeatureSet) -> float:
    """Mean distance from each reference sample to its closest generation."""
    _check_pair(gen, ref)
    return float(cdist(ref.x, gen.x).min(axis=1).mean())


def one_nna(gen: FeatureSet, ref: FeatureSet) -> float:
    """Leave-one-out 1-NN accuracy over the union; 50 means the sets are
    statistically indistinguishable."""
    _check_pair(gen, ref)
    if len(gen) != len(ref):
        raise ValueError("1-NNA requires equally sized sets")
    union = np.concatenate([gen.x, ref.x])
    if len(union) < 2:
        raise ValueError("need at least two samples in the union")
    dist = cdist(union, union)
    np.fill_diagonal(dist, np.inf)
    nearest = dist.argmin(axis=1)
    same = (nearest < len(gen)) == (np.arange(len(union)) < len(gen))
    return 100.0 * same.mean()


def diversity(features: FeatureSet | np.ndarray, rng, subset_size: int = 50) -> float:
    """Mean displacement between two disjoint random subsets, paired
    elementwise."""
    x = features.x if isinstance(features, FeatureSet) else np.atleast_2d(features)
    if len(x) < 2 * subset_size:
        raise ValueError(
            f"insufficient samples: need >= {2 * subset_size}, got {len(x)}")
    perm = rng.permutation(len(x))
    s1, s2 = perm[:subset_size], perm[subset_size : 2 * subset_size]
    return float(np.linalg.norm(x[s1] - x[s2], axis=1).mean())


def multimodality(features: FeatureSet | np.ndarray, class_ids, rng,
                  subset_size: int = 50) -> float:
    """Per-class diversity averaged over classes."""
    x = features.x if isinstance(features, FeatureSet) else np.atleast_2d(features)
    class_ids = np.asarray(class_ids)
    values = []
    for cid in np.unique(class_ids):
        values.append(diversity(x[class_ids == cid], rng, subset_size))
    if not values:
        raise ValueError("no classes present")
    return float(np.mean(values))


def mpjpe(j_pred: np.ndarray, j_gt: np.ndarray) -> float:
    """Mean per-joint position error in centimeters."""
    j_pred = np.asarray(j_pred, dtype=np.float64)
    j_gt = np.asarray(j_gt, dtype=np.float64)
    if j_pred.shape != j_gt.shape:
        raise ValueError("joint set shapes differ")
    return float(np.linalg.norm(j_pred - j_gt, axis=-1).mean() * 100.0)


def mpjpe_pa(j_pred: np.ndarray, j_gt: np.ndarray) -> float:
    """MPJPE after similarity (Procrustes) alignment of the prediction."""
    return mpjpe(procrustes_align(j_pred, j_gt), j_gt)


def e_v2v(v_pred: np.ndarray, v_gt: np.ndarray) -> float:
    """Mean per-vertex error in centimeters (same vertex count required)."""
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_gt = np.asarray(v_gt, dtype=np.float64)
    if v_pred.shape != v_gt.shape:
        raise ValueError("vertex count mismatch")
    return float(np.linalg.norm(v_pred - v_gt, axis=-1).mean() * 100.0)


def e_center(v_pred: np.ndarray, v_gt: np.ndarray) -> float:
    """Centroid error in centimeters."""
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_gt = np.asarray(v_gt, dtype=np.float64)
    return float(np.linalg.norm(v_pred.mean(0) - v_gt.mean(0)) * 100.0)


def acc_contact(c_pred: np.ndarray, c_gt: np.ndarray) -> float:
    """Percentage of vertices whose thresholded contact state matches."""
    c_pred = np.asarray(c_pred, dtype=np.float64).reshape(-1)
    c_gt = np.asarray(c_gt, dtype=np.float64).reshape(-1)
    if c_pred.shape != c_gt.shape:
        raise ValueError("contact map length mismatch")
    return float(100.0 * ((c_pred > 0.5) == (c_gt > 0.5)).mean())


def nn_baseline(query: np.ndarray, train: FeatureSet) -> int:
    """Index of the nearest training sample under the kind's feature
    distance; ties break toward the lowest index."""
    if len(train) == 0:
        raise ValueError("empty retrieval set")
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return int(cdist(query, train.x).argmin())


@dataclass(frozen=True)
class PenetrationReport:
    min_distance_cm: float
    contact_pct: float
    depth_cm: float
    score_cm: float


def penetration_report(samples, tau: float = DEFAULT_CONTACT_TAU) -> PenetrationReport:
    """Convex-proxy penetration statistics over (V_H, object points/proxy)
    pairs: mean minimum unsigned distance, fraction of samples with any
    vertex within tau of (or inside) the hull, mean of per-sample max
    penetration depth, and mean penetration score (sum of penetration depths
    over the vertex count). All distances in centimeters."""
    min_d, contact, depth, score = [], [], [], []
    for v_h, obj in samples:
        proxy = obj if isinstance(obj, ConvexProxy) else ConvexProxy.from_points(obj)
        sd = signed_distance(np.asarray(v_h, dtype=np.float64), proxy)
        pen = np.maximum(-sd, 0.0)
        min_d.append(np.abs(sd).min())
        contact.append(float((sd <= tau).any()))
        depth.append(pen.max())
        score.append(pen.sum() / len(sd))
    if not min_d:
        raise ValueError("no samples given")
    return PenetrationReport(
        min_distance_cm=float(np.mean(min_d) * 100.0),
        contact_pct=float(np.mean(contact) * 100.0),
        depth_cm=float(np.mean(depth) * 100.0),
        score_cm=float(np.mean(score) * 100.0),
    )


@dataclass
class MetricValue:
    value: float
    std: float | None = None
    runs: int = 1
    samples: int = 0

    def render(self) -> str:
        out = f"{self.value:.4f}"
        if self.std is not None:
            out += f" +- {self.std:.4f}"
        return out + f"  (runs={self.runs}, n={self.samples})"


@dataclass
class MetricReport:
    entries: dict = field(default_factory=dict)

    def add(self, name: str, values, samples: int):
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        self.entries[name] = MetricValue(
            value=float(values.mean()),
            std=float(values.std(ddof=0)) if values.size > 1 else None,
            runs=int(values.size), samples=samples)

    def render_text(self) -> str:
        lines = ["metric report"]
        for name in sorted(self.entries):
            lines.append(f"  {name}: {self.entries[name].render()}")
        return "\n".join(lines)

    def to_kv(self) -> dict:
        out = {}
        for name, mv in self.entries.items():
            out[name] = mv.value
            if mv.std is not None:
                out[f"{name}_std"] = mv.std
            out[f"{name}_runs"] = mv.runs
            out[f"{name}_n"] = mv.samples
        return out
