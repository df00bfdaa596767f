"""Convex-hull signed distance proxy.

Objects are approximated by the convex hull of their (optionally decimated)
point clouds. Unsigned distance to the hull surface is the exact minimum over
facet triangles (valid inside and outside a convex polytope); the sign comes
from the facet half-space test. The triangle kernel is torch and
differentiable almost everywhere, so refinement energies can run autograd
through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import ConvexHull, QhullError


@dataclass(frozen=True)
class ConvexProxy:
    vertices: np.ndarray    # hull input points actually used
    triangles: np.ndarray   # (F, 3, 3) facet triangles
    equations: np.ndarray   # (F, 4) outward unit normals with offsets
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_points(cls, points, max_vertices: int = 150) -> "ConvexProxy":
        """Build the hull, decimating dense clouds to keep facet counts sane.

        Raises ValueError on degenerate input (fewer than 4 non-coplanar
        points)."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("expected an N x 3 point array")
        if len(points) > max_vertices:
            keep = np.unique(np.linspace(0, len(points) - 1, max_vertices).astype(int))
            points = points[keep]
        try:
            hull = ConvexHull(points)
        except QhullError as exc:
            raise ValueError("degenerate hull: need at least 4 non-coplanar points") from exc
        return cls(points, points[hull.simplices], hull.equations.copy())

    def tensors(self, dtype=torch.float32):
        if dtype not in self._cache:
            self._cache[dtype] = (
                torch.as_tensor(self.triangles, dtype=dtype),
                torch.as_tensor(self.equations, dtype=dtype),
            )
        return self._cache[dtype]

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Centroid and circumradius (cached), for conservative preculling."""
        if "sphere" not in self._cache:
            center = self.vertices.mean(axis=0)
            radius = float(np.linalg.norm(self.vertices - center, axis=1).max())
            self._cache["sphere"] = (center, radius)
        return self._cache["sphere"]


def point_triangle_distance_t(points: torch.Tensor, triangles: torch.Tensor) -> torch.Tensor:
    """Exact distances from points (..., N, 3) to triangles (F, 3, 3),
    returned as (..., N, F). Branchless closest-point construction
    (Ericson), differentiable away from region boundaries."""
    a = triangles[:, 0]
    ab = triangles[:, 1] - a
    ac = triangles[:, 2] - a
    p = points.unsqueeze(-2)          # (..., N, 1, 3)
    ap = p - a

    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = ap - ab
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = ap - ac
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    eps = torch.finfo(points.dtype).tiny
    v_ab = (d1 / (d1 - d3).clamp_min(eps)).clamp(0.0, 1.0)
    w_ac = (d2 / (d2 - d6).clamp_min(eps)).clamp(0.0, 1.0)
    w_bc = ((d4 - d3) / ((d4 - d3) + (d5 - d6)).clamp_min(eps)).clamp(0.0, 1.0)
    denom = (va + vb + vc)
    denom = torch.where(denom.abs() < eps, torch.full_like(denom, eps), denom)
    v_in = vb / denom
    w_in = vc / denom

    zero = torch.zeros_like(d1)
    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_c = (d6 >= 0) & (d5 <= d6)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    v = v_in
    w = w_in
    v = torch.where(on_bc, 1.0 - w_bc, v)
    w = torch.where(on_bc, w_bc, w)
    v = torch.where(on_ac, zero, v)
    w = torch.where(on_ac, w_ac, w)
    v = torch.where(on_ab, v_ab, v)
    w = torch.where(on_ab, zero, w)
    v = torch.where(in_c, zero, v)
    w = torch.where(in_c, torch.ones_like(w), w)
    v = torch.where(in_b, torch.ones_like(v), v)
    w = torch.where(in_b, zero, w)
    v = torch.where(in_a, zero, v)
    w = torch.where(in_a, zero, w)

    closest = a + v.unsqueeze(-1) * ab + w.unsqueeze(-1) * ac
    return (p - closest).norm(dim=-1)


def signed_distance_t(points: torch.Tensor, proxy: ConvexProxy) -> torch.Tensor:
    """Signed distance to the hull surface for points (..., N, 3): negative
    inside, positive outside, zero on the boundary."""
    triangles, equations = proxy.tensors(points.dtype)
    unsigned = point_triangle_distance_t(points, triangles).min(dim=-1).values
    planes = points @ equations[:, :3].T + equations[:, 3]
    inside = planes.max(dim=-1).values <= 0.0
    return torch.where(inside, -unsigned, unsigned)


def signed_distance(points, proxy: ConvexProxy) -> np.ndarray:
    pts = torch.as_tensor(np.asarray(points, dtype=np.float64))
    return signed_distance_t(pts, proxy).numpy()


def point_segment_distance_t(points: torch.Tensor, starts: torch.Tensor,
                             ends: torch.Tensor) -> torch.Tensor:
    """Distances from points (..., N, 3) to segments (..., S, 3): result
    (..., N, S)."""
    axis = ends - starts                                    # (..., S, 3)
    rel = points.unsqueeze(-2) - starts.unsqueeze(-3)       # (..., N, S, 3)
    length_sq = (axis * axis).sum(-1).clamp_min(1e-18)
    t = ((rel * axis.unsqueeze(-3)).sum(-1) / length_sq.unsqueeze(-2)).clamp(0.0, 1.0)
    closest = starts.unsqueeze(-3) + t.unsqueeze(-1) * axis.unsqueeze(-3)
    return (points.unsqueeze(-2) - closest).norm(dim=-1)
