"""Single render core shared by the CLI and the session service.

Both front ends must produce byte-identical frames for identical state, so
everything between (bundle, params, camera, lighting) and final pixels lives
here: cloud construction, the attribute cache and its invalidation rules,
shading, texture edits, and hair swaps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .assets import AvatarBundle, SceneTrack
from .errors import ValidationError
from .gaussgen import (
    AttributeCache,
    GaussianCloud,
    animate_cached,
    cache_attributes,
    gen_face_gaussians,
    gen_hair_gaussians,
    hair_conditioning,
    merge_clouds,
)
from .headmodel import HeadParams, HeadRig, pose_mesh
from .shading import (
    DEFAULT_OCCLUSION,
    Background,
    OcclusionConfig,
    ShLighting,
    occlusion_map,
    shade,
)
from .splatter import (
    DEFAULT_CONFIG,
    Camera,
    RasterConfig,
    RenderBuffers,
    orbit_camera,
    rasterize,
)
from .uvmaps import TextureSet, apply_bump, fine_normals, rasterize_uv

DEFAULT_BACKGROUND = Background.constant((1.0, 1.0, 1.0))


@dataclass
class Frame:
    """One rendered view plus the intermediates exports and tests reuse."""

    image: NDArray[np.float64]  # (H, W, 3) in [0, 1]
    buffers: RenderBuffers
    cloud: GaussianCloud


def default_camera(
    rig: HeadRig,
    size: int = 512,
    yaw: float = 0.0,
    pitch: float = 0.0,
    distance: float | None = None,
) -> Camera:
    """Front-facing orbit framing the rig's bounding sphere."""
    center = rig.template.mean(axis=0)
    if distance is None:
        radius = float(np.linalg.norm(rig.template - center, axis=1).max())
        distance = 6.0 * radius
    return orbit_camera(center, distance, yaw=yaw, pitch=pitch, size=size)


class Avatar:
    """A loaded bundle plus its attribute cache and render settings.

    Parameter changes keep the cache (positions re-derive from it); texture
    and hair changes drop it, since the cached appearance came from those
    assets.
    """

    def __init__(
        self,
        bundle: AvatarBundle,
        raster: RasterConfig = DEFAULT_CONFIG,
        occlusion: OcclusionConfig = DEFAULT_OCCLUSION,
        background: Background = DEFAULT_BACKGROUND,
    ) -> None:
        bundle.validate()
        self.bundle = bundle
        self.raster = raster
        self.occlusion = occlusion
        self.background = background
        self._cache: AttributeCache | None = None

    @property
    def cache_ready(self) -> bool:
        return self._cache is not None

    def invalidate_cache(self) -> None:
        self._cache = None

    def build_cloud(self, params: HeadParams) -> GaussianCloud:
        """Regenerate every Gaussian from the maps (the authoritative path)."""
        b = self.bundle
        geom = rasterize_uv(pose_mesh(b.rig, params), b.rig, b.textures.resolution)
        geom = fine_normals(apply_bump(geom, b.textures.bump))
        face = gen_face_gaussians(geom, b.textures, b.rig)
        hair = gen_hair_gaussians(b.decoder, b.triplane, hair_conditioning(params))
        return merge_clouds(face, hair)

    def cloud_for(self, params: HeadParams, use_cache: bool = True) -> GaussianCloud:
        """Cached path: frame 1 builds the cache, later frames only move points.

        Replayed positions sample the same maps at the recorded UVs, so a
        static-params replay reproduces the full regeneration bit for bit.
        """
        if not use_cache:
            return self.build_cloud(params)
        b = self.bundle
        if self._cache is None:
            cloud = self.build_cloud(params)
            self._cache = cache_attributes(cloud, b.rig, b.textures.resolution)
            return cloud
        return animate_cached(self._cache, b.rig, params, b.textures.bump, b.decoder)

    def render(
        self,
        params: HeadParams | None = None,
        camera: Camera | None = None,
        lighting: ShLighting | None = None,
        use_cache: bool = True,
    ) -> Frame:
        b = self.bundle
        if params is None:
            params = b.params
        if lighting is None:
            lighting = b.lighting
        if camera is None:
            camera = default_camera(b.rig)
        cloud = self.cloud_for(params, use_cache)
        buffers = rasterize(cloud, camera, self.raster)
        occ = occlusion_map(buffers, camera, self.occlusion)
        image = shade(buffers, lighting, self.background, camera, occ)
        return Frame(image=image, buffers=buffers, cloud=cloud)


def render_track(
    avatar: Avatar, track: SceneTrack, use_cache: bool = True, jobs: int = 1
) -> list[Frame]:
    """Render a scene track in frame order.

    The first frame always renders alone so the cache it seeds is visible to
    the rest; remaining frames are pure and may run on a worker pool.
    """
    n = len(track)
    frames: list[Frame | None] = [None] * n
    if n == 0:
        return []

    def one(i: int) -> Frame:
        return avatar.render(track.params[i], track.cameras[i], track.lighting[i], use_cache)

    start = 0
    if use_cache and not avatar.cache_ready:
        frames[0] = one(0)
        start = 1
    rest = range(start, n)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for i, frame in zip(rest, pool.map(one, rest)):
                frames[i] = frame
    else:
        for i in rest:
            frames[i] = one(i)
    return frames  # type: ignore[return-value]


def texel_rect(uv_rect, t: int) -> tuple[int, int, int, int]:
    """Map a [u0, v0, u1, v1] rectangle to texel bounds (row0, row1, col0, col1).

    Texel column j covers u in [j/t, (j+1)/t); row 0 is v=0.
    """
    rect = np.asarray(uv_rect, dtype=np.float64).reshape(-1)
    if rect.shape != (4,):
        raise ValidationError(f"uv_rect must be [u0, v0, u1, v1], got {uv_rect!r}")
    u0, v0, u1, v1 = rect
    if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
        raise ValidationError(
            f"uv_rect must lie inside the unit square with positive extent, got {rect.tolist()}"
        )
    col0, col1 = int(round(u0 * t)), int(round(u1 * t))
    row0, row1 = int(round(v0 * t)), int(round(v1 * t))
    if col1 <= col0 or row1 <= row0:
        raise ValidationError(f"uv_rect {rect.tolist()} spans no texels at resolution {t}")
    return row0, row1, col0, col1


def apply_texture_edit(textures: TextureSet, patch: NDArray, uv_rect) -> None:
    """Paste an image into the albedo map over uv_rect, in place.

    Geometry maps are untouched; callers owning a cache must invalidate it.
    """
    arr = np.asarray(patch, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"texture patch must be (h, w) or (h, w, 3), got {arr.shape}")
    row0, row1, col0, col1 = texel_rect(uv_rect, textures.resolution)
    want = (row1 - row0, col1 - col0)
    if arr.shape[:2] != want:
        raise ValidationError(
            f"patch is {arr.shape[0]}x{arr.shape[1]} texels but uv_rect spans "
            f"{want[0]}x{want[1]}"
        )
    textures.albedo[row0:row1, col0:col1] = np.clip(arr, 0.0, 1.0)


def swap_hair(a: AvatarBundle, b: AvatarBundle) -> AvatarBundle:
    """A's face assets with B's hair generator (decoder and feature planes)."""
    out = AvatarBundle(
        rig=a.rig,
        textures=a.textures.copy(),
        decoder=b.decoder,
        triplane=b.triplane,
        params=a.params.copy(),
        lighting=a.lighting.copy(),
        version=a.version,
    )
    out.validate()  # rejects donors whose conditioning size disagrees with a's rig
    return out
