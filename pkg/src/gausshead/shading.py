"""Screen-space shading: band-2 spherical-harmonic irradiance, a deterministic
depth/normal occlusion estimator, and background compositing.

Shading is a pure post-process over render buffers; it never touches the
Gaussian cloud, so relighting reuses a single rasterization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ValidationError
from .mathutil import normalize
from .splatter import Camera, RenderBuffers

# Cosine-lobe gains per SH band: convolving a band-2 environment with the
# clamped cosine kernel scales each band by these factors exactly.
A_HAT = np.array([np.pi, 2.0 * np.pi / 3.0, np.pi / 4.0])
BAND_OF_COEFF = np.array([0, 1, 1, 1, 2, 2, 2, 2, 2])

# real SH basis constants, coefficients ordered (0,0), (1,-1), (1,0), (1,1),
# (2,-2), (2,-1), (2,0), (2,1), (2,2)
_C0 = 0.28209479177387814  # 1/(2 sqrt(pi))
_C1 = 0.4886025119029199
_C2 = 1.0925484305920792
_C20 = 0.31539156525252005
_C22 = 0.5462742152960396


@dataclass
class ShLighting:
    """Band-2 lighting environment: 9 real SH coefficients per RGB channel."""

    coeffs: NDArray[np.float64]  # (3, 9), rows = R, G, B

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(3, 9)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.coeffs)):
            raise ValidationError("lighting coefficients must be finite")
        if np.any(self.coeffs[:, 0] < 0):
            warnings.warn("negative DC lighting coefficient; scene will clamp dark")

    @staticmethod
    def ambient(rgb=(1.0, 1.0, 1.0)) -> "ShLighting":
        coeffs = np.zeros((3, 9))
        coeffs[:, 0] = rgb
        return ShLighting(coeffs)

    def copy(self) -> "ShLighting":
        return ShLighting(self.coeffs.copy())


def sh_basis(n: NDArray[np.float64]) -> NDArray[np.float64]:
    """Evaluate the 9 band-2 real SH basis functions at unit directions
    (..., 3) -> (..., 9)."""
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (9,))
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2 * x * y
    out[..., 5] = _C2 * y * z
    out[..., 6] = _C20 * (3.0 * z * z - 1.0)
    out[..., 7] = _C2 * x * z
    out[..., 8] = _C22 * (x * x - y * y)
    return out


def sh_irradiance(
    light: ShLighting, n: NDArray[np.float64], clamp: bool = True
) -> NDArray[np.float64]:
    """Irradiance from the environment at surface normals (..., 3) -> (..., 3).

    Exact for band-limited light: E(n) = sum_lm A_l * L_lm * Y_lm(n)."""
    basis = sh_basis(n) * A_HAT[BAND_OF_COEFF]
    e = basis @ light.coeffs.T
    return np.maximum(e, 0.0) if clamp else e


def eval_sh_radiance(light: ShLighting, w: NDArray[np.float64]) -> NDArray[np.float64]:
    """Environment radiance along directions (..., 3) -> (..., 3) RGB."""
    return sh_basis(w) @ light.coeffs.T


@dataclass
class Background:
    """Constant color or full image plate behind the avatar."""

    color: NDArray[np.float64] | None = None  # (3,)
    image: NDArray[np.float64] | None = None  # (t, t, 3)

    @staticmethod
    def constant(rgb) -> "Background":
        return Background(color=np.asarray(rgb, dtype=np.float64).reshape(3))

    @staticmethod
    def plate(image: NDArray[np.float64]) -> "Background":
        return Background(image=np.asarray(image, dtype=np.float64))

    def validate(self) -> None:
        if (self.color is None) == (self.image is None):
            raise ValidationError("background needs exactly one of color or image")
        values = self.color if self.image is None else self.image
        if np.min(values) < 0.0 or np.max(values) > 1.0:
            raise ValidationError("background values must lie in [0, 1]")

    def resolved(self, size: int) -> NDArray[np.float64]:
        if self.image is not None:
            if self.image.shape != (size, size, 3):
                raise ValidationError(
                    f"background plate is {self.image.shape}, render is {size}x{size}"
                )
            return self.image
        return np.broadcast_to(self.color, (size, size, 3))


@dataclass
class OcclusionConfig:
    """Tunables for the screen-space occlusion estimator."""

    samples: int = 8
    radius: float = 8.0  # pixels
    bias: float = 0.01  # meters above the tangent plane before counting

    def __post_init__(self) -> None:
        if self.samples < 1 or self.radius <= 0:
            raise ValidationError("occlusion estimator needs samples >= 1, radius > 0")


DEFAULT_OCCLUSION = OcclusionConfig()


def _pixel_rays(cam: Camera, size: int) -> NDArray[np.float64]:
    """Unit ray directions through every pixel center, camera frame."""
    idx = np.arange(size) + 0.5
    jj, ii = np.meshgrid(idx, idx)
    dirs = np.stack(
        [(jj - cam.cx) / cam.fx, (ii - cam.cy) / cam.fy, np.ones_like(jj)], axis=-1
    )
    return normalize(dirs)


def _box3(img: NDArray[np.float64]) -> NDArray[np.float64]:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += padded[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out / 9.0


def occlusion_map(
    buffers: RenderBuffers, cam: Camera, config: OcclusionConfig = DEFAULT_OCCLUSION
) -> NDArray[np.float64]:
    """Per-pixel light attenuation in [0, 1] from neighboring depths.

    For each foreground pixel, unproject it and a ring of neighbors along
    their camera rays; a neighbor occludes when it rises above the pixel's
    tangent plane by more than the bias.  Background pixels pass 1."""
    size = buffers.size
    alpha = buffers.alpha
    fg = alpha > 0.5
    if not fg.any():
        return np.ones((size, size))

    # buffers store alpha-premultiplied channels; recover per-pixel values
    safe_alpha = np.maximum(alpha, 1e-12)
    distance = buffers.depth / safe_alpha
    n_world = normalize(buffers.normal, fallback=np.array([0.0, 0.0, 1.0]))
    n_cam = n_world @ cam.rotation.T

    points = _pixel_rays(cam, size) * distance[..., None]

    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    angles = 2.0 * np.pi * np.arange(config.samples) / config.samples
    occluded = np.zeros((size, size))
    for theta in angles:
        di = int(np.rint(config.radius * np.sin(theta)))
        dj = int(np.rint(config.radius * np.cos(theta)))
        i2 = ii + di
        j2 = jj + dj
        inside = (i2 >= 0) & (i2 < size) & (j2 >= 0) & (j2 < size)
        i2c, j2c = np.clip(i2, 0, size - 1), np.clip(j2, 0, size - 1)
        valid = inside & fg[i2c, j2c]
        rises = np.einsum("ijc,ijc->ij", points[i2c, j2c] - points, n_cam)
        occluded += np.where(valid & (rises > config.bias), 1.0, 0.0)

    factor = np.where(fg, 1.0 - occluded / config.samples, 1.0)
    factor = _box3(factor)
    factor[~fg] = 1.0
    return np.clip(factor, 0.0, 1.0)


def shade(
    buffers: RenderBuffers,
    light: ShLighting,
    bg: Background,
    cam: Camera,
    occlusion: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """Final image: albedo x irradiance x occlusion over the background.

    out = albedo_hat * E(n_hat) * occ * alpha + bg * (1 - alpha), evaluated in
    premultiplied form (albedo buffer already carries the alpha factor), then
    clamped to [0, 1].  Pass a precomputed occlusion map to reuse one."""
    size = buffers.size
    if cam.size != size:
        raise ValidationError(f"camera renders {cam.size}^2 but buffers are {size}^2")
    plate = bg.resolved(size)
    if occlusion is None:
        occlusion = occlusion_map(buffers, cam)
    elif occlusion.shape != (size, size):
        raise ValidationError(f"occlusion map is {occlusion.shape}, expected {(size, size)}")

    n_hat = normalize(buffers.normal, fallback=np.array([0.0, 0.0, 1.0]))
    irradiance = sh_irradiance(light, n_hat)
    fg = buffers.albedo * irradiance * occlusion[..., None]
    out = fg + plate * (1.0 - buffers.alpha[..., None])
    return np.clip(out, 0.0, 1.0)
