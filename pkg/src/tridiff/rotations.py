"""Rotation representations: 6-d continuous vectors, axis-angle, matrices.

The 6-d representation stores the first two columns of a rotation matrix
(column-major, so ``r[:3]`` is column one). Decoding runs Gram-Schmidt on the
two columns; the third column is their cross product. All kernels are torch
and differentiable; thin numpy wrappers serve non-autograd callers.
"""

from __future__ import annotations

import numpy as np
import torch

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_to_matrix_t(r6: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Decode (..., 6) into (..., 3, 3) proper rotation matrices.

    ``eps`` guards the normalizations so the map stays finite (and usefully
    differentiable) on noisy network inputs; strict degeneracy checking is the
    wrapper's job.
    """
    a, b = r6[..., :3], r6[..., 3:6]
    c1 = a / a.norm(dim=-1, keepdim=True).clamp_min(eps)
    b_orth = b - (c1 * b).sum(-1, keepdim=True) * c1
    c2 = b_orth / b_orth.norm(dim=-1, keepdim=True).clamp_min(eps)
    c3 = torch.cross(c1, c2, dim=-1)
    return torch.stack([c1, c2, c3], dim=-1)


def rot6d_to_matrix(r6) -> np.ndarray:
    """Numpy facade for :func:`rot6d_to_matrix_t` with degeneracy checking.

    Raises ValueError("degenerate 6D rotation") when the first column is
    (near-)zero or the two columns are (near-)parallel.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected 6 components, got shape {r6.shape}")
    if not np.all(np.isfinite(r6)):
        raise ValueError("non-finite 6D rotation")
    a, b = r6[..., :3], r6[..., 3:6]
    na = np.linalg.norm(a, axis=-1)
    if np.any(na < 1e-8):
        raise ValueError("degenerate 6D rotation")
    a_unit = a / na[..., None]
    residual = b - (a_unit * b).sum(-1)[..., None] * a_unit
    if np.any(np.linalg.norm(residual, axis=-1) < 1e-8):
        raise ValueError("degenerate 6D rotation")
    return rot6d_to_matrix_t(torch.from_numpy(r6)).numpy()


def matrix_to_rot6d(mat) -> np.ndarray:
    """First two columns of (..., 3, 3), flattened column-major to (..., 6)."""
    mat = np.asarray(mat, dtype=np.float64)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def matrix_to_rot6d_t(mat: torch.Tensor) -> torch.Tensor:
    return torch.cat([mat[..., :, 0], mat[..., :, 1]], dim=-1)


def axis_angle_to_matrix_t(aa: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula for (..., 3) axis-angle vectors, Taylor-stable at 0."""
    angle = aa.norm(dim=-1, keepdim=True)
    small = angle < 1e-6
    # sin(x)/x and (1-cos(x))/x^2 with series fallbacks near zero
    safe = torch.where(small, torch.ones_like(angle), angle)
    sinc = torch.where(small, 1.0 - angle**2 / 6.0, torch.sin(safe) / safe)
    cosc = torch.where(small, 0.5 - angle**2 / 24.0, (1.0 - torch.cos(safe)) / safe**2)

    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(k.shape)
    return eye + sinc[..., None] * k + cosc[..., None] * (k @ k)


def matrix_to_axis_angle_t(mat: torch.Tensor) -> torch.Tensor:
    """Log map (..., 3, 3) -> (..., 3). Unstable only at angle == pi exactly."""
    trace = mat[..., 0, 0] + mat[..., 1, 1] + mat[..., 2, 2]
    angle = torch.acos(((trace - 1.0) / 2.0).clamp(-1.0 + 1e-7, 1.0 - 1e-7))
    skew = torch.stack(
        [
            mat[..., 2, 1] - mat[..., 1, 2],
            mat[..., 0, 2] - mat[..., 2, 0],
            mat[..., 1, 0] - mat[..., 0, 1],
        ],
        dim=-1,
    )
    # |skew| = 2 sin(angle), so the factor keeps |result| = angle
    factor = angle / (2.0 * torch.sin(angle)).clamp_min(1e-7)
    return skew * factor[..., None]


def axis_angle_to_matrix(aa) -> np.ndarray:
    return axis_angle_to_matrix_t(torch.as_tensor(aa, dtype=torch.float64)).numpy()


def matrix_to_axis_angle(mat) -> np.ndarray:
    return matrix_to_axis_angle_t(torch.as_tensor(mat, dtype=torch.float64)).numpy()


def mirror_rot6d(r6) -> np.ndarray:
    """Conjugate the encoded rotation by diag(-1, 1, 1).

    On the raw 6-d coordinates the conjugation is an exact sign pattern:
    column one flips its y/z entries, column two flips x. Exact involution.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    out = r6.copy()
    out[..., 1] = -out[..., 1]
    out[..., 2] = -out[..., 2]
    out[..., 3] = -out[..., 3]
    return out


def mirror_axis_angle(aa) -> np.ndarray:
    """Axis-angle counterpart of conjugation by diag(-1, 1, 1): negate y, z."""
    aa = np.asarray(aa, dtype=np.float64)
    out = aa.copy()
    out[..., 1] = -out[..., 1]
    out[..., 2] = -out[..., 2]
    return out
