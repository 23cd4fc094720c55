"""Perspective projection of 3D Gaussians and multi-channel rasterization.

The 10-channel payload per splat is [group one-hot (eye, face, hair), camera
distance, normal, albedo]; compositing splits it into the mask/depth/normal/
albedo buffers, with alpha = 1 - final transmittance.  The depth channel
carries the Euclidean distance from the camera center (not view z); sorting
uses view-space z.

Two rasterizers share every clamp and cutoff: the production tile pipeline and
a brute-force reference without tiling or early termination, used as the
correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .errors import ValidationError
from .gaussgen import GROUP_EYE, GROUP_FACE, GROUP_HAIR, GaussianCloud
from .mathutil import normalize, quat_to_matrix

PAYLOAD_DIM = _kernels.PAYLOAD_DIM


@dataclass
class Camera:
    """Pinhole camera: world-to-camera extrinsics, +z forward, pixel (i, j)
    centered at (j + 0.5, i + 0.5)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: NDArray[np.float64]  # (3, 3) world-to-camera
    translation: NDArray[np.float64]  # (3,)
    size: int  # image is size x size

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-6:
            raise ValidationError("camera rotation is not orthonormal")

    @property
    def center(self) -> NDArray[np.float64]:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_world(self, p_cam: NDArray[np.float64]) -> NDArray[np.float64]:
        return (p_cam - self.translation) @ self.rotation


def look_at(
    eye: NDArray[np.float64],
    target: NDArray[np.float64],
    size: int = 512,
    fx: float | None = None,
    up: NDArray[np.float64] = (0.0, 1.0, 0.0),
) -> Camera:
    """Camera at *eye* whose optical axis passes through *target* (y-down image)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = normalize(np.asarray(target, dtype=np.float64) - eye)
    right = normalize(np.cross(fwd, np.asarray(up, dtype=np.float64)))
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    f = fx if fx is not None else 1.2 * size
    return Camera(
        fx=f, fy=f, cx=size / 2.0, cy=size / 2.0,
        rotation=rot, translation=-rot @ eye, size=size,
    )


def orbit_camera(
    target: NDArray[np.float64],
    distance: float,
    yaw: float = 0.0,
    pitch: float = 0.0,
    size: int = 512,
    fx: float | None = None,
) -> Camera:
    """Camera on a sphere around *target*; yaw 0 / pitch 0 looks at +z's face."""
    direction = np.array(
        [
            np.sin(yaw) * np.cos(pitch),
            np.sin(pitch),
            np.cos(yaw) * np.cos(pitch),
        ]
    )
    eye = np.asarray(target, dtype=np.float64) + distance * direction
    return look_at(eye, target, size=size, fx=fx)


@dataclass
class RasterConfig:
    """Shared rasterizer constants; identical values feed both pipelines."""

    tile: int = 16
    alpha_clamp: float = 0.99
    t_cutoff: float = 1e-4
    dilation: float = 0.3  # px^2 isotropic covariance floor
    sigma_cutoff: float = 3.0
    near: float = 0.01  # meters

    @property
    def power_cutoff(self) -> float:
        return 0.5 * self.sigma_cutoff**2


DEFAULT_CONFIG = RasterConfig()


@dataclass
class ProjectedCloud:
    """Screen-space splats surviving the cull, plus intermediates the backward
    pass re-uses; ``index`` maps rows back to cloud points."""

    index: NDArray[np.int64]
    mean2d: NDArray[np.float64]  # (M, 2)
    cov2d: NDArray[np.float64]  # (M, 2, 2)
    conic: NDArray[np.float64]  # (M, 3) = (a, b, c) of the inverse covariance
    radius: NDArray[np.float64]  # (M,) binning radius in pixels
    depth: NDArray[np.float64]  # (M,) view-space z, the sort key
    cam_dist: NDArray[np.float64]  # (M,) payload depth channel
    t_cam: NDArray[np.float64]  # (M, 3) camera-space position
    payload: NDArray[np.float64]  # (M, PAYLOAD_DIM)
    opacity: NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.index.shape[0])


@dataclass
class ProjectedGaussian:
    """Single-point projection result (diagnostic / small-scale API)."""

    mean2d: NDArray[np.float64]
    cov2d: NDArray[np.float64]
    view_depth: float
    cam_distance: float
    payload: NDArray[np.float64]
    opacity: float


@dataclass
class RenderBuffers:
    """The composited channels, split from the payload accumulator."""

    mask: NDArray[np.float64]  # (H, W, 3): red=eye, green=face, blue=hair
    depth: NDArray[np.float64]  # (H, W)
    normal: NDArray[np.float64]  # (H, W, 3), composited (unnormalized)
    albedo: NDArray[np.float64]  # (H, W, 3)
    alpha: NDArray[np.float64]  # (H, W)

    @property
    def size(self) -> int:
        return int(self.alpha.shape[0])

    @staticmethod
    def zeros(size: int) -> "RenderBuffers":
        return RenderBuffers(
            mask=np.zeros((size, size, 3)),
            depth=np.zeros((size, size)),
            normal=np.zeros((size, size, 3)),
            albedo=np.zeros((size, size, 3)),
            alpha=np.zeros((size, size)),
        )

    @staticmethod
    def from_accum(accum: NDArray[np.float64], t_final: NDArray[np.float64]) -> "RenderBuffers":
        return RenderBuffers(
            mask=accum[..., 0:3].copy(),
            depth=accum[..., 3].copy(),
            normal=accum[..., 4:7].copy(),
            albedo=accum[..., 7:10].copy(),
            alpha=1.0 - t_final,
        )

    def stacked(self) -> NDArray[np.float64]:
        """All channels as one (H, W, 11) block (payload order plus alpha)."""
        return np.concatenate(
            [self.mask, self.depth[..., None], self.normal, self.albedo, self.alpha[..., None]],
            axis=-1,
        )


@dataclass
class RenderTrace:
    """Per-pixel CSR record of the compositing pass, consumed by backward."""

    proj: ProjectedCloud
    offsets: NDArray[np.int64]  # (H*W + 1,)
    ids: NDArray[np.int64]  # rows into proj arrays, compositing order
    alphas: NDArray[np.float64]
    t_final: NDArray[np.float64]  # (H, W)
    size: int
    config: RasterConfig


def build_payload(cloud: GaussianCloud, cam_dist: NDArray[np.float64]) -> NDArray[np.float64]:
    """Concatenate the channel payload: group one-hot, distance, normal, color."""
    n = len(cloud)
    payload = np.zeros((n, PAYLOAD_DIM))
    payload[cloud.group == GROUP_EYE, 0] = 1.0
    payload[cloud.group == GROUP_FACE, 1] = 1.0
    payload[cloud.group == GROUP_HAIR, 2] = 1.0
    payload[:, 3] = cam_dist
    payload[:, 4:7] = cloud.normal
    payload[:, 7:10] = cloud.color
    return payload


def project_cloud(
    cloud: GaussianCloud, cam: Camera, config: RasterConfig = DEFAULT_CONFIG
) -> ProjectedCloud:
    """EWA projection of every point; near-plane and off-image culling."""
    n = len(cloud)
    if n == 0:
        return _empty_projection()

    w_rot = cam.rotation
    t_cam = cloud.mu @ w_rot.T + cam.translation
    tz = t_cam[:, 2]
    in_front = tz >= config.near

    # Sigma = R diag(s^2) R^T = M M^T with M = R diag(s)
    rot = quat_to_matrix(cloud.quat)
    m_mat = rot * cloud.scale[:, None, :]
    a_mat = np.einsum("ij,njk->nik", w_rot, m_mat)  # camera-frame factor
    cov_cam = np.einsum("nik,njk->nij", a_mat, a_mat)

    safe_z = np.where(in_front, tz, 1.0)
    inv_z = 1.0 / safe_z
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * t_cam[:, 0] * inv_z**2
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * t_cam[:, 1] * inv_z**2

    cov2d = np.einsum("nab,nbc,ndc->nad", jac, cov_cam, jac)
    cov2d[:, 0, 0] += config.dilation
    cov2d[:, 1, 1] += config.dilation

    mean2d = np.stack(
        [
            cam.fx * t_cam[:, 0] * inv_z + cam.cx,
            cam.fy * t_cam[:, 1] * inv_z + cam.cy,
        ],
        axis=1,
    )

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    ok_det = det > 1e-12
    safe_det = np.where(ok_det, det, 1.0)
    conic = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)

    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = config.sigma_cutoff * np.sqrt(np.maximum(lam_max, 0.0))

    on_image = (
        (mean2d[:, 0] + radius >= 0.0)
        & (mean2d[:, 0] - radius <= cam.size)
        & (mean2d[:, 1] + radius >= 0.0)
        & (mean2d[:, 1] - radius <= cam.size)
    )
    keep = in_front & ok_det & on_image
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return _empty_projection()

    cam_dist = np.linalg.norm(cloud.mu[idx] - cam.center, axis=1)
    return ProjectedCloud(
        index=idx,
        mean2d=np.ascontiguousarray(mean2d[idx]),
        cov2d=np.ascontiguousarray(cov2d[idx]),
        conic=np.ascontiguousarray(conic[idx]),
        radius=np.ascontiguousarray(radius[idx]),
        depth=np.ascontiguousarray(tz[idx]),
        cam_dist=cam_dist,
        t_cam=np.ascontiguousarray(t_cam[idx]),
        payload=np.ascontiguousarray(build_payload(cloud, np.zeros(n))[idx]),
        opacity=np.ascontiguousarray(cloud.opacity[idx]),
    )


def _empty_projection() -> ProjectedCloud:
    return ProjectedCloud(
        index=np.zeros(0, dtype=np.int64),
        mean2d=np.zeros((0, 2)),
        cov2d=np.zeros((0, 2, 2)),
        conic=np.zeros((0, 3)),
        radius=np.zeros(0),
        depth=np.zeros(0),
        cam_dist=np.zeros(0),
        t_cam=np.zeros((0, 3)),
        payload=np.zeros((0, PAYLOAD_DIM)),
        opacity=np.zeros(0),
    )


def project_gaussian(
    cloud: GaussianCloud, k: int, cam: Camera, config: RasterConfig = DEFAULT_CONFIG
) -> Optional[ProjectedGaussian]:
    """Project a single cloud point; None when culled."""
    sub = GaussianCloud(
        mu=cloud.mu[k : k + 1],
        normal=cloud.normal[k : k + 1],
        color=cloud.color[k : k + 1],
        scale=cloud.scale[k : k + 1],
        quat=cloud.quat[k : k + 1],
        opacity=cloud.opacity[k : k + 1],
        group=cloud.group[k : k + 1],
    )
    proj = project_cloud(sub, cam, config)
    if len(proj) == 0:
        return None
    return ProjectedGaussian(
        mean2d=proj.mean2d[0],
        cov2d=proj.cov2d[0],
        view_depth=float(proj.depth[0]),
        cam_distance=float(proj.cam_dist[0]),
        payload=proj.payload[0],
        opacity=float(proj.opacity[0]),
    )


def _finish_payload(proj: ProjectedCloud) -> None:
    # payload column 3 is the camera distance, filled post-cull
    proj.payload[:, 3] = proj.cam_dist


def rasterize(
    cloud: GaussianCloud, cam: Camera, config: RasterConfig = DEFAULT_CONFIG
) -> RenderBuffers:
    """Tile-based front-to-back compositing (the production path)."""
    buffers, _ = _rasterize_impl(cloud, cam, config, record=False)
    return buffers


def rasterize_traced(
    cloud: GaussianCloud, cam: Camera, config: RasterConfig = DEFAULT_CONFIG
) -> tuple[RenderBuffers, RenderTrace]:
    """Tile rasterization that also records the per-pixel compositing trace."""
    buffers, trace = _rasterize_impl(cloud, cam, config, record=True)
    assert trace is not None
    return buffers, trace


def _rasterize_impl(cloud, cam, config, record):
    size = cam.size
    proj = project_cloud(cloud, cam, config)
    if len(proj) == 0:
        empty_trace = None
        if record:
            empty_trace = RenderTrace(
                proj=proj,
                offsets=np.zeros(size * size + 1, dtype=np.int64),
                ids=np.zeros(0, dtype=np.int64),
                alphas=np.zeros(0),
                t_final=np.ones((size, size)),
                size=size,
                config=config,
            )
        return RenderBuffers.zeros(size), empty_trace
    _finish_payload(proj)

    accum, t_final, counts = _kernels.composite_tiles(
        proj.mean2d,
        proj.conic,
        proj.radius,
        proj.depth,
        proj.opacity,
        proj.payload,
        size,
        size,
        config.tile,
        config.alpha_clamp,
        config.t_cutoff,
        config.power_cutoff,
    )
    buffers = RenderBuffers.from_accum(accum, t_final)
    if not record:
        return buffers, None

    offsets = np.zeros(size * size + 1, dtype=np.int64)
    np.cumsum(counts.ravel(), out=offsets[1:])
    ids = np.empty(offsets[-1], dtype=np.int64)
    alphas = np.empty(offsets[-1])
    _kernels.fill_trace(
        proj.mean2d,
        proj.conic,
        proj.radius,
        proj.depth,
        proj.opacity,
        size,
        size,
        config.tile,
        config.alpha_clamp,
        config.t_cutoff,
        config.power_cutoff,
        offsets,
        ids,
        alphas,
    )
    trace = RenderTrace(
        proj=proj,
        offsets=offsets,
        ids=ids,
        alphas=alphas,
        t_final=t_final,
        size=size,
        config=config,
    )
    return buffers, trace


def rasterize_reference(
    cloud: GaussianCloud, cam: Camera, config: RasterConfig = DEFAULT_CONFIG
) -> RenderBuffers:
    """Oracle rasterizer: global stable depth sort, every pixel visits every
    splat (behind an output-invariant 3-sigma bbox skip), no early termination."""
    size = cam.size
    proj = project_cloud(cloud, cam, config)
    if len(proj) == 0:
        return RenderBuffers.zeros(size)
    _finish_payload(proj)

    order = np.argsort(proj.depth, kind="stable")
    bbox = np.empty((len(proj), 4), dtype=np.int64)
    bbox[:, 0] = np.ceil(proj.mean2d[:, 0] - proj.radius - 0.5)
    bbox[:, 1] = np.floor(proj.mean2d[:, 0] + proj.radius - 0.5)
    bbox[:, 2] = np.ceil(proj.mean2d[:, 1] - proj.radius - 0.5)
    bbox[:, 3] = np.floor(proj.mean2d[:, 1] + proj.radius - 0.5)

    accum, t_final = _kernels.composite_reference(
        order,
        bbox,
        proj.mean2d,
        proj.conic,
        proj.opacity,
        proj.payload,
        size,
        size,
        config.alpha_clamp,
        config.power_cutoff,
    )
    return RenderBuffers.from_accum(accum, t_final)
