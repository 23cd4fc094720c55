"""Reverse-mode differentiation through the full render: shading adjoints,
compositing adjoints over the recorded trace, EWA projection adjoints, and the
bump/normal/texture-sampling chains back to the editable leaves.

Differentiable leaves: albedo map, bump map, the two shared disk radii, and
the SH lighting coefficients.  Rig pose and hair decoder weights stay frozen;
occlusion factors and the depth sort order are treated as constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .errors import NumericError, ValidationError
from .gaussgen import (
    HairDecoder,
    TriPlane,
    gen_face_gaussians,
    gen_hair_gaussians,
    hair_conditioning,
    merge_clouds,
)
from .headmodel import HeadParams, HeadRig, pose_mesh
from .mathutil import EPS, normalize, quat_to_matrix
from .shading import (
    A_HAT,
    BAND_OF_COEFF,
    Background,
    ShLighting,
    occlusion_map,
    sh_basis,
    shade,
)
from .splatter import DEFAULT_CONFIG, Camera, RasterConfig, rasterize_traced
from .uvmaps import TextureSet, UvGeometry, apply_bump, bilinear_setup, fine_normals, rasterize_uv, sample_map

LEAF_NAMES = ("albedo", "bump", "disk_scale_xy", "sh")


@dataclass
class ParamSet:
    """The trainable leaves with matching gradient buffers."""

    albedo: NDArray[np.float64]  # (t, t, 3)
    bump: NDArray[np.float64]  # (t, t)
    disk_scale_xy: NDArray[np.float64]  # (2,)
    sh: NDArray[np.float64]  # (3, 9)
    albedo_grad: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    bump_grad: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    disk_scale_xy_grad: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    sh_grad: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.bump = np.asarray(self.bump, dtype=np.float64)
        self.disk_scale_xy = np.asarray(self.disk_scale_xy, dtype=np.float64).reshape(2)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(3, 9)
        for name in LEAF_NAMES:
            if getattr(self, f"{name}_grad") is None:
                setattr(self, f"{name}_grad", np.zeros_like(getattr(self, name)))

    @staticmethod
    def from_parts(tex: TextureSet, light: ShLighting) -> "ParamSet":
        return ParamSet(
            albedo=tex.albedo.copy(),
            bump=tex.bump.copy(),
            disk_scale_xy=tex.disk_scale_xy.copy(),
            sh=light.coeffs.copy(),
        )

    @property
    def resolution(self) -> int:
        return int(self.albedo.shape[0])

    def textures(self) -> TextureSet:
        return TextureSet(self.albedo, self.bump, self.disk_scale_xy)

    def lighting(self) -> ShLighting:
        return ShLighting(self.sh)

    def leaves(self) -> Iterator[tuple[str, NDArray, NDArray]]:
        for name in LEAF_NAMES:
            yield name, getattr(self, name), getattr(self, f"{name}_grad")

    def zero_grads(self) -> None:
        for _, _, grad in self.leaves():
            grad[...] = 0.0

    def validate(self) -> None:
        for name, value, grad in self.leaves():
            if grad.shape != value.shape:
                raise ValidationError(f"{name} gradient shape {grad.shape} != {value.shape}")

    def copy(self) -> "ParamSet":
        return ParamSet(
            albedo=self.albedo.copy(),
            bump=self.bump.copy(),
            disk_scale_xy=self.disk_scale_xy.copy(),
            sh=self.sh.copy(),
            albedo_grad=self.albedo_grad.copy(),
            bump_grad=self.bump_grad.copy(),
            disk_scale_xy_grad=self.disk_scale_xy_grad.copy(),
            sh_grad=self.sh_grad.copy(),
        )


@dataclass
class ForwardRecord:
    """Everything backward() needs to replay one render in reverse."""

    geom: UvGeometry
    cloud: object  # merged GaussianCloud, face block first
    face_count: int
    trace: object  # RenderTrace
    buffers: object  # RenderBuffers
    occlusion: NDArray[np.float64]
    image: NDArray[np.float64]
    cam: Camera
    light: ShLighting
    bg: Background
    resolution: int


def render_forward(
    rig: HeadRig,
    pose: HeadParams,
    pset: ParamSet,
    cam: Camera,
    bg: Background,
    hair: tuple[HairDecoder, TriPlane] | None = None,
    alpha_head: float = 0.5,
    coarse: UvGeometry | None = None,
    occlusion: NDArray[np.float64] | None = None,
    config: RasterConfig = DEFAULT_CONFIG,
) -> ForwardRecord:
    """Render one frame and record the trace for the reverse pass.

    Pass a precomputed coarse geometry to reuse the pose rasterization, and a
    fixed occlusion map to keep it constant across evaluations (its gradient
    is stopped either way)."""
    t = pset.resolution
    if coarse is None:
        coarse = rasterize_uv(pose_mesh(rig, pose), rig, t)
    geom = fine_normals(apply_bump(coarse, pset.bump))

    face = gen_face_gaussians(geom, pset.textures(), rig, alpha_head)
    if hair is not None:
        dec, tp = hair
        cloud = merge_clouds(face, gen_hair_gaussians(dec, tp, hair_conditioning(pose)))
    else:
        cloud = face

    buffers, trace = rasterize_traced(cloud, cam, config)
    if occlusion is None:
        occlusion = occlusion_map(buffers, cam)
    light = pset.lighting()
    image = shade(buffers, light, bg, cam, occlusion=occlusion)
    return ForwardRecord(
        geom=geom,
        cloud=cloud,
        face_count=len(face),
        trace=trace,
        buffers=buffers,
        occlusion=occlusion,
        image=image,
        cam=cam,
        light=light,
        bg=bg,
        resolution=t,
    )


def _sh_basis_gradient(n: NDArray[np.float64]) -> NDArray[np.float64]:
    """d Y_k / d n at unit directions: (..., 3) -> (..., 9, 3)."""
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    zero = np.zeros_like(x)
    c1 = 0.4886025119029199
    c2 = 1.0925484305920792
    c20 = 0.31539156525252005
    c22 = 0.5462742152960396
    rows = [
        (zero, zero, zero),
        (zero, c1 + zero, zero),
        (zero, zero, c1 + zero),
        (c1 + zero, zero, zero),
        (c2 * y, c2 * x, zero),
        (zero, c2 * z, c2 * y),
        (zero, zero, c20 * 6.0 * z),
        (c2 * z, zero, c2 * x),
        (c22 * 2.0 * x, -c22 * 2.0 * y, zero),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _normalize_backward(
    vec: NDArray[np.float64], g_unit: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Adjoint of v -> v/|v| (zero where the forward used a fallback)."""
    length = np.linalg.norm(vec, axis=-1, keepdims=True)
    ok = length[..., 0] > EPS
    unit = np.where(ok[..., None], vec / np.maximum(length, EPS), 0.0)
    radial = np.sum(unit * g_unit, axis=-1, keepdims=True)
    out = (g_unit - unit * radial) / np.maximum(length, EPS)
    out[~ok] = 0.0
    return out


def _shade_backward(g_image, rec: ForwardRecord):
    """Reverse of shading.shade: image adjoint -> payload/alpha adjoints + SH."""
    buffers = rec.buffers
    size = buffers.size
    plate = rec.bg.resolved(size)
    occ = rec.occlusion[..., None]
    coeffs = rec.light.coeffs

    n_buf = buffers.normal
    n_hat = normalize(n_buf, fallback=np.array([0.0, 0.0, 1.0]))

    basis_w = sh_basis(n_hat) * A_HAT[BAND_OF_COEFF]
    raw = basis_w @ coeffs.T
    irradiance = np.maximum(raw, 0.0)

    pre = buffers.albedo * irradiance * occ + plate * (1.0 - buffers.alpha[..., None])
    g_pre = np.where((pre > 0.0) & (pre < 1.0), g_image, 0.0)

    g_albedo_buf = g_pre * irradiance * occ
    g_irr = g_pre * buffers.albedo * occ * (raw > 0.0)

    g_sh = np.einsum("ijc,ijk->ck", g_irr, basis_w)

    gk = np.einsum("ijc,ck->ijk", g_irr, coeffs)
    g_nhat = np.einsum("ijk,k,ijkd->ijd", gk, A_HAT[BAND_OF_COEFF], _sh_basis_gradient(n_hat))
    g_nbuf = _normalize_backward(n_buf, g_nhat)

    g_alpha = -np.einsum("ijc,ijc->ij", g_pre, np.broadcast_to(plate, g_pre.shape))
    g_payload_img = np.zeros((size, size, _kernels.PAYLOAD_DIM))
    g_payload_img[..., 4:7] = g_nbuf
    g_payload_img[..., 7:10] = g_albedo_buf
    return g_payload_img, g_alpha, g_sh


def _projection_backward(proj, cloud, cam: Camera, g_mean2d, g_conic, g_payload):
    """EWA projection adjoints: screen-space grads -> world grads per cloud row."""
    n_cloud = len(cloud)
    g_mu = np.zeros((n_cloud, 3))
    g_quat = np.zeros((n_cloud, 4))
    g_scale = np.zeros((n_cloud, 3))
    g_color = np.zeros((n_cloud, 3))
    g_normal = np.zeros((n_cloud, 3))
    if len(proj) == 0:
        return g_mu, g_quat, g_scale, g_color, g_normal

    idx = proj.index
    w_rot = cam.rotation
    quat = cloud.quat[idx]
    scale = cloud.scale[idx]
    rot = quat_to_matrix(quat)
    m_mat = rot * scale[:, None, :]
    a_mat = np.einsum("ab,nbc->nac", w_rot, m_mat)
    cov_cam = np.einsum("nik,njk->nij", a_mat, a_mat)

    t_cam = proj.t_cam
    tx, ty, tz = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    inv_z = 1.0 / tz
    n = idx.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * tx * inv_z**2
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * ty * inv_z**2

    q_mat = np.empty((n, 2, 2))
    q_mat[:, 0, 0] = proj.conic[:, 0]
    q_mat[:, 0, 1] = q_mat[:, 1, 0] = proj.conic[:, 1]
    q_mat[:, 1, 1] = proj.conic[:, 2]
    g_qm = np.empty((n, 2, 2))
    g_qm[:, 0, 0] = g_conic[:, 0]
    g_qm[:, 0, 1] = g_qm[:, 1, 0] = 0.5 * g_conic[:, 1]
    g_qm[:, 1, 1] = g_conic[:, 2]

    # conic = cov2d^-1; then unwind cov2d = J V J^T + dilation
    g_cov2d = -np.einsum("nab,nbc,ncd->nad", q_mat, g_qm, q_mat)
    g_jac = 2.0 * np.einsum("nab,nbc,ncd->nad", g_cov2d, jac, cov_cam)
    g_v = np.einsum("nba,nbc,ncd->nad", jac, g_cov2d, jac)
    g_a = 2.0 * np.einsum("nab,nbc->nac", g_v, a_mat)
    g_m = np.einsum("ba,nbc->nac", w_rot, g_a)
    g_scale[idx] = np.einsum("nik,nik->nk", g_m, rot)
    g_rot = g_m * scale[:, None, :]

    g_quat[idx] = _rotation_backward(quat, g_rot)

    # mean2d and the Jacobian entries both pull on the camera-space position
    g_t = np.einsum("nab,na->nb", jac, g_mean2d)
    g_t[:, 0] += g_jac[:, 0, 2] * (-cam.fx * inv_z**2)
    g_t[:, 1] += g_jac[:, 1, 2] * (-cam.fy * inv_z**2)
    g_t[:, 2] += (
        g_jac[:, 0, 0] * (-cam.fx * inv_z**2)
        + g_jac[:, 1, 1] * (-cam.fy * inv_z**2)
        + g_jac[:, 0, 2] * (2.0 * cam.fx * tx * inv_z**3)
        + g_jac[:, 1, 2] * (2.0 * cam.fy * ty * inv_z**3)
    )
    g_mu_rows = g_t @ w_rot

    # payload depth channel = |mu - camera center|
    dvec = cloud.mu[idx] - cam.center
    g_mu_rows += g_payload[:, 3:4] * dvec / np.maximum(proj.cam_dist[:, None], EPS)

    g_mu[idx] = g_mu_rows
    g_color[idx] = g_payload[:, 7:10]
    g_normal[idx] = g_payload[:, 4:7]
    return g_mu, g_quat, g_scale, g_color, g_normal


def _rotation_backward(quat: NDArray[np.float64], g_rot: NDArray[np.float64]) -> NDArray[np.float64]:
    """Adjoint of the polynomial quaternion-to-matrix map (no renormalization)."""
    w, x, y, z = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    g00, g01, g02 = g_rot[:, 0, 0], g_rot[:, 0, 1], g_rot[:, 0, 2]
    g10, g11, g12 = g_rot[:, 1, 0], g_rot[:, 1, 1], g_rot[:, 1, 2]
    g20, g21, g22 = g_rot[:, 2, 0], g_rot[:, 2, 1], g_rot[:, 2, 2]
    gq = np.empty(quat.shape)
    gq[:, 0] = 2.0 * (z * (g10 - g01) + y * (g02 - g20) + x * (g21 - g12))
    gq[:, 1] = 2.0 * (y * (g01 + g10) + z * (g02 + g20) + w * (g21 - g12)) - 4.0 * x * (g11 + g22)
    gq[:, 2] = 2.0 * (x * (g01 + g10) + w * (g02 - g20) + z * (g12 + g21)) - 4.0 * y * (g00 + g22)
    gq[:, 3] = 2.0 * (w * (g10 - g01) + x * (g02 + g20) + y * (g12 + g21)) - 4.0 * z * (g00 + g11)
    return gq


def _quat_from_normal_backward(
    n_hat: NDArray[np.float64], g_quat: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Adjoint of the +z-to-normal quaternion at unit normals; the antipodal
    tie-break branch is piecewise constant and passes no gradient."""
    out = np.zeros_like(n_hat)
    ok = n_hat[:, 2] > -1.0 + 1e-6
    w = np.sqrt((1.0 + n_hat[ok, 2]) / 2.0)
    nx, ny = n_hat[ok, 0], n_hat[ok, 1]
    gq = g_quat[ok]
    out[ok, 0] = gq[:, 2] / (2.0 * w)
    out[ok, 1] = -gq[:, 1] / (2.0 * w)
    out[ok, 2] = (
        gq[:, 0] / (4.0 * w) + gq[:, 1] * ny / (8.0 * w**3) - gq[:, 2] * nx / (8.0 * w**3)
    )
    return out


def _fine_normals_backward(geom: UvGeometry, g_nmap: NDArray[np.float64]) -> NDArray[np.float64]:
    """Adjoint of fine_normals: normal-map gradient -> fine-position-map
    gradient via the recorded difference stencils."""
    t = geom.resolution
    ok = geom.valid & ~geom.fallback
    g = np.where(ok[..., None], g_nmap, 0.0)

    length = np.linalg.norm(geom.cross, axis=-1, keepdims=True)
    nm = geom.fine_normal
    radial = np.sum(nm * g, axis=-1, keepdims=True)
    g_crossed = np.where(ok[..., None], (g - nm * radial) / np.maximum(length, EPS), 0.0)
    g_raw = geom.sign[..., None] * g_crossed

    g_du = np.cross(geom.diff_v, g_raw)
    g_dv = np.cross(g_raw, geom.diff_u)

    g_fp = np.zeros((t, t, 3))
    rows = np.broadcast_to(np.arange(t)[:, None], (t, t))
    cols = np.broadcast_to(np.arange(t)[None, :], (t, t))
    wu = geom.u_w[..., None]
    wv = geom.v_w[..., None]
    np.add.at(g_fp, (rows, geom.u_plus), g_du * wu)
    np.add.at(g_fp, (rows, geom.u_minus), -g_du * wu)
    np.add.at(g_fp, (geom.v_plus, cols), g_dv * wv)
    np.add.at(g_fp, (geom.v_minus, cols), -g_dv * wv)
    return g_fp


def backward(g_image: NDArray[np.float64], rec: ForwardRecord, pset: ParamSet) -> ParamSet:
    """Accumulate d(loss)/d(leaves) into *pset* for the given image adjoint."""
    if g_image.shape != rec.image.shape:
        raise ValidationError(
            f"image adjoint shape {g_image.shape} does not match render {rec.image.shape}"
        )
    if pset.resolution != rec.resolution:
        raise ValidationError(
            f"parameter resolution {pset.resolution} does not match recorded {rec.resolution}"
        )
    pset.validate()

    g_payload_img, g_alpha_img, g_sh = _shade_backward(g_image, rec)
    pset.sh_grad += g_sh

    trace = rec.trace
    proj = trace.proj
    if len(proj) == 0:
        return pset

    counts = np.diff(trace.offsets)
    max_len = int(counts.max()) if counts.size else 0
    g_pay, g_conic, g_mean, _g_opac = _kernels.composite_backward(
        trace.offsets,
        trace.ids,
        trace.alphas,
        trace.t_final,
        proj.payload,
        proj.conic,
        proj.mean2d,
        proj.opacity,
        g_payload_img,
        g_alpha_img,
        trace.size,
        trace.size,
        trace.config.alpha_clamp,
        max(max_len, 1),
    )

    g_mu, g_quat, g_scale, g_color, g_normal = _projection_backward(
        proj, rec.cloud, rec.cam, g_mean, g_conic, g_pay
    )

    fc = rec.face_count
    if fc == 0:
        return pset
    geom = rec.geom
    t = rec.resolution
    u, v = rec.cloud.uv[:fc, 0], rec.cloud.uv[:fc, 1]
    idx4, w4 = bilinear_setup(t, u, v)

    # disk radii are shared across every face splat
    pset.disk_scale_xy_grad += g_scale[:fc, 0:2].sum(axis=0)

    np.add.at(
        pset.albedo_grad.reshape(t * t, 3), idx4, w4[..., None] * g_color[:fc, None, :]
    )

    # normal chain: payload channel plus the orientation quaternion
    g_nhat = g_normal[:fc] + _quat_from_normal_backward(rec.cloud.normal[:fc], g_quat[:fc])
    sampled = sample_map(geom.fine_normal, u, v)
    g_sampled = _normalize_backward(sampled, g_nhat)

    g_fn_map = np.zeros((t * t, 3))
    np.add.at(g_fn_map, idx4, w4[..., None] * g_sampled[:, None, :])
    g_fp_map = np.zeros((t * t, 3))
    np.add.at(g_fp_map, idx4, w4[..., None] * g_mu[:fc, None, :])

    g_fp = g_fp_map.reshape(t, t, 3) + _fine_normals_backward(geom, g_fn_map.reshape(t, t, 3))
    pset.bump_grad += np.where(
        geom.valid, np.einsum("ijc,ijc->ij", g_fp, geom.coarse_normal), 0.0
    )
    return pset


# -------------------------------------------------------------- losses


def photometric_l2(image: NDArray, target: NDArray) -> tuple[float, NDArray]:
    """Mean squared error and its image adjoint."""
    if image.shape != target.shape:
        raise ValidationError(f"image {image.shape} vs target {target.shape}")
    diff = image - target
    return float(np.mean(diff**2)), (2.0 / diff.size) * diff


def psnr(image: NDArray, target: NDArray) -> float:
    mse = float(np.mean((image - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def _smoothness_parts(map_: NDArray, valid: NDArray | None):
    m = map_ if map_.ndim == 3 else map_[..., None]
    if valid is None:
        valid = np.ones(m.shape[:2], dtype=bool)
    mu = valid[:, 1:] & valid[:, :-1]
    mv = valid[1:, :] & valid[:-1, :]
    du = (m[:, 1:] - m[:, :-1]) * mu[..., None]
    dv = (m[1:, :] - m[:-1, :]) * mv[..., None]
    c = m.shape[-1]
    return du, dv, mu, mv, int(mu.sum()) * c, int(mv.sum()) * c


def reg_smoothness_terms(map_: NDArray, valid: NDArray | None = None) -> tuple[float, float]:
    """Per-direction mean squared forward differences (u term, v term)."""
    du, dv, _, _, nu, nv = _smoothness_parts(map_, valid)
    u_term = float(np.sum(du**2) / nu) if nu else 0.0
    v_term = float(np.sum(dv**2) / nv) if nv else 0.0
    return u_term, v_term


def reg_smoothness(map_: NDArray, valid: NDArray | None = None) -> float:
    """Mean squared forward difference over all valid u and v texel edges."""
    du, dv, _, _, nu, nv = _smoothness_parts(map_, valid)
    total = nu + nv
    if total == 0:
        return 0.0
    return float((np.sum(du**2) + np.sum(dv**2)) / total)


def reg_smoothness_grad(map_: NDArray, valid: NDArray | None = None) -> NDArray:
    du, dv, _, _, nu, nv = _smoothness_parts(map_, valid)
    total = nu + nv
    g = np.zeros(map_.shape if map_.ndim == 3 else map_.shape + (1,))
    if total:
        g[:, 1:] += (2.0 / total) * du
        g[:, :-1] -= (2.0 / total) * du
        g[1:, :] += (2.0 / total) * dv
        g[:-1, :] -= (2.0 / total) * dv
    return g if map_.ndim == 3 else g[..., 0]


def _symmetry_parts(map_: NDArray, valid: NDArray | None):
    m = map_ if map_.ndim == 3 else map_[..., None]
    if valid is None:
        valid = np.ones(m.shape[:2], dtype=bool)
    pair = valid & valid[:, ::-1]
    diff = (m - m[:, ::-1, :]) * pair[..., None]
    return diff, pair, int(pair.sum()) * m.shape[-1]


def reg_symmetry(map_: NDArray, valid: NDArray | None = None) -> float:
    """Mean squared deviation from the map's own u-mirror."""
    diff, _, n = _symmetry_parts(map_, valid)
    return float(np.sum(diff**2) / n) if n else 0.0


def reg_symmetry_grad(map_: NDArray, valid: NDArray | None = None) -> NDArray:
    diff, _, n = _symmetry_parts(map_, valid)
    g = (4.0 / n) * diff if n else np.zeros_like(diff)
    return g if map_.ndim == 3 else g[..., 0]


def reg_bump_l1(bump: NDArray, valid: NDArray | None = None) -> float:
    """Mean absolute displacement over valid texels."""
    if valid is None:
        return float(np.mean(np.abs(bump)))
    if not valid.any():
        return 0.0
    return float(np.mean(np.abs(bump[valid])))


def reg_bump_l1_grad(bump: NDArray, valid: NDArray | None = None) -> NDArray:
    g = np.sign(bump)
    if valid is None:
        return g / bump.size
    g = np.where(valid, g, 0.0)
    n = int(valid.sum())
    return g / n if n else g


def r1_penalty(disc_grad: NDArray, gamma: float, batch_axis: int | None = None) -> float:
    """(gamma / 2) x mean squared gradient norm over samples."""
    g = np.asarray(disc_grad, dtype=np.float64)
    if batch_axis is None:
        return 0.5 * gamma * float(np.sum(g**2))
    g = np.moveaxis(g, batch_axis, 0)
    return 0.5 * gamma * float(np.mean(np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1)))


# ------------------------------------------------------------------ fitting


@dataclass
class LossReport:
    """One iteration's loss breakdown; components are stored unweighted."""

    total: float
    components: dict[str, float]
    weights: dict[str, float]
    iteration: int

    def validate(self) -> None:
        recon = sum(self.weights.get(k, 1.0) * val for k, val in self.components.items())
        if abs(recon - self.total) > 1e-6:
            raise ValidationError(f"loss total {self.total} != weighted sum {recon}")


def history_to_csv(history: Sequence[LossReport], path) -> None:
    names = sorted(history[0].components) if history else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", *names])
        for rep in history:
            writer.writerow([rep.iteration, rep.total, *(rep.components[n] for n in names)])


@dataclass
class FitTarget:
    """One reference view: image in [0,1], its camera, and the head pose."""

    image: NDArray[np.float64]
    cam: Camera
    pose: HeadParams


def _default_lr() -> dict[str, float]:
    return {"albedo": 2e-2, "bump": 2e-4, "disk_scale_xy": 2e-5, "sh": 1e-2}


def _default_weights() -> dict[str, float]:
    return {"photometric": 1.0, "smoothness": 1e-2, "symmetry": 1e-2, "bump_l1": 1e-3}


@dataclass
class FitConfig:
    iters: int = 200
    lr: dict[str, float] = field(default_factory=_default_lr)
    weights: dict[str, float] = field(default_factory=_default_weights)
    leaves: tuple[str, ...] = LEAF_NAMES
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def fit_textures(
    targets: Sequence[FitTarget],
    rig: HeadRig,
    init: ParamSet,
    config: FitConfig = FitConfig(),
    hair: tuple[HairDecoder, TriPlane] | None = None,
    alpha_head: float = 0.5,
    bg: Background | None = None,
) -> tuple[ParamSet, list[LossReport]]:
    """Adam descent on photometric L2 plus map regularizers; rig stays frozen.

    A weight missing from ``config.weights`` switches that loss term off, so the
    gradient always matches the weighted total that ``history`` reports.
    Returns the best-loss parameters seen and the full loss history."""
    if not targets:
        raise ValidationError("fitting needs at least one target view")
    if bg is None:
        bg = Background.constant((0.25, 0.25, 0.25))
    pset = init.copy()
    t = pset.resolution

    unknown = set(config.weights) - set(_default_weights())
    if unknown:
        raise ValidationError(f"unknown loss weight(s): {sorted(unknown)}")
    unknown = set(config.lr) - set(LEAF_NAMES)
    if unknown:
        raise ValidationError(f"unknown learning rate(s): {sorted(unknown)}")
    w = {name: config.weights.get(name, 0.0) for name in _default_weights()}
    lr = {**_default_lr(), **config.lr}

    coarse = [rasterize_uv(pose_mesh(rig, tgt.pose), rig, t) for tgt in targets]
    valid = coarse[0].valid

    moments = {name: (np.zeros_like(val), np.zeros_like(val)) for name, val, _ in pset.leaves()}
    history: list[LossReport] = []
    best = pset.copy()
    best_loss = np.inf

    for it in range(config.iters):
        pset.zero_grads()
        photo = 0.0
        for tgt, geom0 in zip(targets, coarse):
            rec = render_forward(
                rig, tgt.pose, pset, tgt.cam, bg, hair=hair,
                alpha_head=alpha_head, coarse=geom0,
            )
            part, g_img = photometric_l2(rec.image, tgt.image)
            photo += part / len(targets)
            backward(w["photometric"] * g_img / len(targets), rec, pset)

        components = {
            "photometric": photo,
            "smoothness": reg_smoothness(pset.albedo, valid) + reg_smoothness(pset.bump, valid),
            "symmetry": reg_symmetry(pset.albedo, valid),
            "bump_l1": reg_bump_l1(pset.bump, valid),
        }
        if w["smoothness"]:
            pset.albedo_grad += w["smoothness"] * reg_smoothness_grad(pset.albedo, valid)
            pset.bump_grad += w["smoothness"] * reg_smoothness_grad(pset.bump, valid)
        if w["symmetry"]:
            pset.albedo_grad += w["symmetry"] * reg_symmetry_grad(pset.albedo, valid)
        if w["bump_l1"]:
            pset.bump_grad += w["bump_l1"] * reg_bump_l1_grad(pset.bump, valid)

        total = sum(w[k] * val for k, val in components.items())
        if not np.isfinite(total):
            raise NumericError(f"non-finite loss at iteration {it}: {components}")
        report = LossReport(total=total, components=components, weights=dict(w), iteration=it)
        history.append(report)
        if total < best_loss:
            best_loss = total
            best = pset.copy()

        lr_scale = config.lr_decay**it
        step_t = it + 1
        for name, value, grad in pset.leaves():
            if name not in config.leaves:
                continue
            m, v_ = moments[name]
            m[...] = config.beta1 * m + (1.0 - config.beta1) * grad
            v_[...] = config.beta2 * v_ + (1.0 - config.beta2) * grad**2
            m_hat = m / (1.0 - config.beta1**step_t)
            v_hat = v_ / (1.0 - config.beta2**step_t)
            value -= lr[name] * lr_scale * m_hat / (np.sqrt(v_hat) + config.eps)

    return best, history
