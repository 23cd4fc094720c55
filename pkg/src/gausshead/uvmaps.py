"""UV-space geometry maps: barycentric rasterization of the posed mesh into
position/normal maps, bump displacement, fine-normal derivation, and bilinear
texture sampling.

Map orientation: ``map[i, j]`` has ``u = (j + 0.5) / t`` and ``v = (i + 0.5) / t``
(row 0 = v = 0).  All maps are float64; validity is a boolean map.

:func:`fine_normals` records its difference stencil (neighbor indices and
weights) on the returned geometry so the reverse-mode pass in
:mod:`gausshead.gradients` can replay it exactly.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .headmodel import CoarseMesh, HeadRig
from .mathutil import EPS, normalize

DEGENERATE_UV_AREA = 1e-14  # UV triangles flatter than this are skipped


@dataclass
class TextureSet:
    """Editable appearance maps plus the two learnable disk radii (meters)."""

    albedo: NDArray[np.float64]  # (t, t, 3) in [0, 1]
    bump: NDArray[np.float64]  # (t, t) signed meters
    disk_scale_xy: NDArray[np.float64]  # (2,) positive meters

    def __post_init__(self) -> None:
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.bump = np.asarray(self.bump, dtype=np.float64).reshape(self.albedo.shape[:2])
        self.disk_scale_xy = np.asarray(self.disk_scale_xy, dtype=np.float64).reshape(2)

    @property
    def resolution(self) -> int:
        return int(self.albedo.shape[0])

    def validate(self) -> None:
        from .errors import ValidationError

        t = self.resolution
        if self.albedo.shape != (t, t, 3):
            raise ValidationError(f"albedo must be square RGB, got {self.albedo.shape}")
        if np.any(self.albedo < 0.0) or np.any(self.albedo > 1.0):
            raise ValidationError("albedo values must lie in [0, 1]")
        if not np.all(np.isfinite(self.bump)):
            raise ValidationError("bump map contains non-finite values")
        if np.any(self.disk_scale_xy <= 0.0):
            raise ValidationError(f"disk scales must be positive, got {self.disk_scale_xy}")

    def copy(self) -> "TextureSet":
        return TextureSet(self.albedo.copy(), self.bump.copy(), self.disk_scale_xy.copy())


@dataclass
class UvGeometry:
    """Per-texel geometry maps; fine fields are filled by later stages."""

    coarse_pos: NDArray[np.float64]  # (t, t, 3)
    coarse_normal: NDArray[np.float64]  # (t, t, 3), unit on valid texels
    valid: NDArray[np.bool_]  # (t, t)
    fine_pos: NDArray[np.float64] | None = None
    fine_normal: NDArray[np.float64] | None = None
    degenerate_skipped: int = 0
    # difference-stencil record: texel (i, j) uses columns u_plus/u_minus[i, j]
    # (resp. rows v_plus/v_minus) with weight u_w (1 / uv-span); weights are 0
    # where no valid neighbor exists along the axis.
    u_plus: NDArray[np.int32] | None = None
    u_minus: NDArray[np.int32] | None = None
    u_w: NDArray[np.float64] | None = None
    v_plus: NDArray[np.int32] | None = None
    v_minus: NDArray[np.int32] | None = None
    v_w: NDArray[np.float64] | None = None
    diff_u: NDArray[np.float64] | None = None  # (t, t, 3) recorded du
    diff_v: NDArray[np.float64] | None = None
    cross: NDArray[np.float64] | None = None  # sign-corrected, pre-normalization
    sign: NDArray[np.float64] | None = None  # +-1 orientation fix per texel
    fallback: NDArray[np.bool_] | None = None  # texels that kept coarse_normal

    @property
    def resolution(self) -> int:
        return int(self.valid.shape[0])

    @property
    def interior(self) -> NDArray[np.bool_]:
        """Valid texels whose 4-neighborhood is fully valid (central stencils)."""
        v = self.valid
        out = v.copy()
        out[1:, :] &= v[:-1, :]
        out[:-1, :] &= v[1:, :]
        out[:, 1:] &= v[:, :-1]
        out[:, :-1] &= v[:, 1:]
        out[0, :] = out[-1, :] = False
        out[:, 0] = out[:, -1] = False
        return out


@njit(cache=True)
def _rasterize_kernel(tri_uv, tri_pos, tri_nrm, t):  # pragma: no cover - jitted
    pos = np.zeros((t, t, 3))
    nrm = np.zeros((t, t, 3))
    valid = np.zeros((t, t), dtype=np.uint8)
    degenerate = 0
    for f in range(tri_uv.shape[0]):
        u0, v0 = tri_uv[f, 0, 0], tri_uv[f, 0, 1]
        u1, v1 = tri_uv[f, 1, 0], tri_uv[f, 1, 1]
        u2, v2 = tri_uv[f, 2, 0], tri_uv[f, 2, 1]
        area2 = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area2) < DEGENERATE_UV_AREA:
            degenerate += 1
            continue
        inv = 1.0 / area2
        j_lo = max(0, int(np.ceil(min(u0, u1, u2) * t - 0.5)))
        j_hi = min(t - 1, int(np.floor(max(u0, u1, u2) * t - 0.5)))
        i_lo = max(0, int(np.ceil(min(v0, v1, v2) * t - 0.5)))
        i_hi = min(t - 1, int(np.floor(max(v0, v1, v2) * t - 0.5)))
        for i in range(i_lo, i_hi + 1):
            vc = (i + 0.5) / t
            for j in range(j_lo, j_hi + 1):
                uc = (j + 0.5) / t
                w0 = ((u1 - uc) * (v2 - vc) - (u2 - uc) * (v1 - vc)) * inv
                w1 = ((u2 - uc) * (v0 - vc) - (u0 - uc) * (v2 - vc)) * inv
                w2 = 1.0 - w0 - w1
                if w0 >= -1e-12 and w1 >= -1e-12 and w2 >= -1e-12:
                    for c in range(3):
                        pos[i, j, c] = (
                            w0 * tri_pos[f, 0, c]
                            + w1 * tri_pos[f, 1, c]
                            + w2 * tri_pos[f, 2, c]
                        )
                        nrm[i, j, c] = (
                            w0 * tri_nrm[f, 0, c]
                            + w1 * tri_nrm[f, 1, c]
                            + w2 * tri_nrm[f, 2, c]
                        )
                    valid[i, j] = 1
    return pos, nrm, valid, degenerate


def rasterize_uv(mesh: CoarseMesh, rig: HeadRig, t_tex: int) -> UvGeometry:
    """Bake the posed mesh into coarse position/normal maps by texel-center
    coverage; texels outside every UV triangle stay invalid and zero."""
    tri_uv = np.ascontiguousarray(rig.uv[mesh.faces])  # (F, 3, 2)
    tri_pos = np.ascontiguousarray(mesh.vertices[mesh.faces])
    tri_nrm = np.ascontiguousarray(mesh.normals[mesh.faces])
    pos, nrm, valid_u8, degenerate = _rasterize_kernel(tri_uv, tri_pos, tri_nrm, t_tex)
    valid = valid_u8.astype(bool)
    if degenerate:
        warnings.warn(f"skipped {degenerate} degenerate UV triangles", stacklevel=2)
    nrm[valid] = normalize(nrm[valid], fallback=np.array([0.0, 0.0, 1.0]))
    return UvGeometry(
        coarse_pos=pos, coarse_normal=nrm, valid=valid, degenerate_skipped=degenerate
    )


def apply_bump(geom: UvGeometry, bump: NDArray[np.float64]) -> UvGeometry:
    """Displace along the coarse normal: fine = coarse + bump * normal."""
    t = geom.resolution
    b = np.asarray(bump, dtype=np.float64).reshape(t, t)
    fine = np.zeros_like(geom.coarse_pos)
    fine[geom.valid] = (
        geom.coarse_pos[geom.valid]
        + b[geom.valid, None] * geom.coarse_normal[geom.valid]
    )
    return dataclasses.replace(geom, fine_pos=fine)


def _axis_stencil(valid: NDArray[np.bool_], axis: int):
    """Neighbor indices and weights for one difference axis (0=v rows, 1=u cols)."""
    t = valid.shape[0]
    idx = np.arange(t, dtype=np.int32)
    if axis == 1:
        base = np.broadcast_to(idx[None, :], valid.shape)
        has_lo = np.zeros_like(valid)
        has_lo[:, 1:] = valid[:, :-1]
        has_hi = np.zeros_like(valid)
        has_hi[:, :-1] = valid[:, 1:]
    else:
        base = np.broadcast_to(idx[:, None], valid.shape)
        has_lo = np.zeros_like(valid)
        has_lo[1:, :] = valid[:-1, :]
        has_hi = np.zeros_like(valid)
        has_hi[:-1, :] = valid[1:, :]
    plus = np.where(has_hi, base + 1, base).astype(np.int32)
    minus = np.where(has_lo, base - 1, base).astype(np.int32)
    span = (plus - minus).astype(np.float64) / t  # uv distance covered
    w = np.zeros_like(span)
    np.divide(1.0, span, out=w, where=span > 0)
    w[~valid] = 0.0
    return plus, minus, w


def fine_normals(geom: UvGeometry) -> UvGeometry:
    """Cross the u/v differentials of fine_pos into a unit normal per texel.

    Central differences where both neighbors are valid, one-sided at the
    atlas border; stencils never read invalid texels.  The sign is chosen to
    agree with the coarse normal; degenerate differentials fall back to it.
    """
    if geom.fine_pos is None:
        raise ValueError("fine_pos not populated; call apply_bump first")
    t = geom.resolution
    rows = np.arange(t)[:, None]
    cols = np.arange(t)[None, :]

    u_plus, u_minus, u_w = _axis_stencil(geom.valid, axis=1)
    v_plus, v_minus, v_w = _axis_stencil(geom.valid, axis=0)

    du = (geom.fine_pos[rows, u_plus] - geom.fine_pos[rows, u_minus]) * u_w[..., None]
    dv = (geom.fine_pos[v_plus, cols] - geom.fine_pos[v_minus, cols]) * v_w[..., None]

    raw = np.cross(du, dv)
    sign = np.where(np.sum(raw * geom.coarse_normal, axis=-1) < 0.0, -1.0, 1.0)
    crossed = raw * sign[..., None]
    length = np.linalg.norm(crossed, axis=-1)
    fallback = (length < EPS) & geom.valid

    fine_n = np.zeros_like(crossed)
    ok = geom.valid & ~fallback
    fine_n[ok] = crossed[ok] / length[ok, None]
    fine_n[fallback] = geom.coarse_normal[fallback]

    return dataclasses.replace(
        geom,
        fine_normal=fine_n,
        u_plus=u_plus,
        u_minus=u_minus,
        u_w=u_w,
        v_plus=v_plus,
        v_minus=v_minus,
        v_w=v_w,
        diff_u=du,
        diff_v=dv,
        cross=crossed,
        sign=sign,
        fallback=fallback,
    )


def bilinear_setup(t: int, u: NDArray, v: NDArray):
    """Corner indices and weights for half-texel-centered, border-clamped
    bilinear sampling.  Returns ``(idx, w)`` of shape (N, 4) where ``idx`` are
    flat texel indices ordered (i0j0, i0j1, i1j0, i1j1)."""
    x = np.clip(np.asarray(u, dtype=np.float64) * t - 0.5, 0.0, t - 1.0)
    y = np.clip(np.asarray(v, dtype=np.float64) * t - 0.5, 0.0, t - 1.0)
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    j0 = np.minimum(j0, t - 2) if t > 1 else j0
    i0 = np.minimum(i0, t - 2) if t > 1 else i0
    j1 = np.minimum(j0 + 1, t - 1)
    i1 = np.minimum(i0 + 1, t - 1)
    fx = x - j0
    fy = y - i0
    idx = np.stack([i0 * t + j0, i0 * t + j1, i1 * t + j0, i1 * t + j1], axis=-1)
    w = np.stack(
        [(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=-1
    )
    return idx, w


def sample_map(map_: NDArray, u: NDArray, v: NDArray) -> NDArray:
    """Bilinear map lookup; boolean maps return the conjunction of the four
    contributing texels instead of an interpolated value."""
    t = map_.shape[0]
    idx, w = bilinear_setup(t, u, v)
    flat = map_.reshape(t * t, -1)
    corners = flat[idx]  # (..., 4, C)
    if map_.dtype == bool:
        out = np.all(corners, axis=-2)
    else:
        out = np.sum(w[..., None] * corners, axis=-2)
    if map_.ndim == 2:
        out = out[..., 0]
    return out
