"""Gaussian point-cloud generation.

Face points live on a fixed (alpha_head * t_tex)^2 UV grid: positions come from
the fine position map, colors from the albedo map, orientations from the fine
normal, and each point is a thin disk (learnable x/y radii, epsilon z).  Hair
points are decoded from a conditioning vector through a bounded position head
(``output_scale * tanh(W^T cond) + b``) and a tri-plane feature MLP.

:class:`AttributeCache` freezes everything except positions so animation moves
points without touching appearance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ValidationError
from .headmodel import HeadParams, HeadRig, pose_mesh
from .mathutil import normalize
from .uvmaps import TextureSet, UvGeometry, apply_bump, fine_normals, rasterize_uv, sample_map

GROUP_EYE = 0
GROUP_FACE = 1
GROUP_HAIR = 2
GROUP_NAMES = ("eye", "face", "hair")

EPSILON_RADIUS_RATIO = 1e-4  # disk thickness = this fraction of the head radius
DEFAULT_OUTPUT_SCALE = 0.05  # meters; hair drift bound around the bias cloud
DEFAULT_MAX_SCALE = 0.01  # meters; hair scale head multiplier
ATTR_WIDTHS = (3, 3, 3, 4, 1)  # c, n, s, q, o slices of the decoder output


@dataclass
class GaussianCloud:
    """Struct-of-arrays point cloud; all arrays share length N."""

    mu: NDArray[np.float64]  # (N, 3) meters
    normal: NDArray[np.float64]  # (N, 3) unit
    color: NDArray[np.float64]  # (N, 3) in [0, 1]
    scale: NDArray[np.float64]  # (N, 3) positive meters
    quat: NDArray[np.float64]  # (N, 4) unit, (w, x, y, z)
    opacity: NDArray[np.float64]  # (N,) in [0, 1]
    group: NDArray[np.uint8]  # (N,) GROUP_* tags
    # provenance used by caching and gradients: UV sample coordinates for face
    # points (NaN for hair) and decoder row indices for hair points (-1 for face)
    uv: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    hair_index: NDArray[np.int64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.mu)
        if self.uv is None:
            self.uv = np.full((n, 2), np.nan)
        if self.hair_index is None:
            self.hair_index = np.full(n, -1, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    def validate(self) -> None:
        n = len(self)
        for name in ("mu", "normal", "color", "scale", "quat", "opacity", "group"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValidationError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if n == 0:
            return
        if np.abs(np.linalg.norm(self.quat, axis=1) - 1.0).max() > 1e-6:
            raise ValidationError("quaternions must be unit length")
        if np.abs(np.linalg.norm(self.normal, axis=1) - 1.0).max() > 1e-6:
            raise ValidationError("normals must be unit length")
        if np.any(self.scale <= 0.0):
            raise ValidationError("scales must be positive")
        if np.any((self.opacity < 0.0) | (self.opacity > 1.0)):
            raise ValidationError("opacities must lie in [0, 1]")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            mu=self.mu.copy(),
            normal=self.normal.copy(),
            color=self.color.copy(),
            scale=self.scale.copy(),
            quat=self.quat.copy(),
            opacity=self.opacity.copy(),
            group=self.group.copy(),
            uv=self.uv.copy(),
            hair_index=self.hair_index.copy(),
        )


def empty_cloud() -> GaussianCloud:
    return GaussianCloud(
        mu=np.zeros((0, 3)),
        normal=np.zeros((0, 3)),
        color=np.zeros((0, 3)),
        scale=np.zeros((0, 3)),
        quat=np.zeros((0, 4)),
        opacity=np.zeros(0),
        group=np.zeros(0, dtype=np.uint8),
    )


@dataclass
class TriPlane:
    """Axis-aligned feature planes (xy, xz, yz) over an origin-centered cube."""

    planes: NDArray[np.float64]  # (3, t_tri, t_tri, F)
    cube_side: float  # meters

    @property
    def resolution(self) -> int:
        return int(self.planes.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.planes.shape[3])

    def validate(self) -> None:
        if self.planes.ndim != 4 or self.planes.shape[0] != 3:
            raise ValidationError(f"planes must be (3, t, t, F), got {self.planes.shape}")
        if self.planes.shape[1] != self.planes.shape[2]:
            raise ValidationError("feature planes must be square")
        if self.cube_side <= 0:
            raise ValidationError("cube side must be positive")


@dataclass
class HairDecoder:
    """Bounded position head plus a 2-hidden-layer attribute perceptron."""

    w_pos: NDArray[np.float64]  # (cond_dim, n_hair, 3)
    bias: NDArray[np.float64]  # (n_hair, 3) rest positions
    mlp_w1: NDArray[np.float64]  # (F, H)
    mlp_b1: NDArray[np.float64]
    mlp_w2: NDArray[np.float64]  # (H, H)
    mlp_b2: NDArray[np.float64]
    mlp_w3: NDArray[np.float64]  # (H, 14)
    mlp_b3: NDArray[np.float64]
    output_scale: float = DEFAULT_OUTPUT_SCALE
    max_scale: float = DEFAULT_MAX_SCALE

    @property
    def n_hair(self) -> int:
        return int(self.bias.shape[0])

    @property
    def cond_dim(self) -> int:
        return int(self.w_pos.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.mlp_w1.shape[0])

    def validate(self) -> None:
        if self.w_pos.shape != (self.cond_dim, self.n_hair, 3):
            raise ValidationError(
                f"position weights {self.w_pos.shape} do not match bias rows {self.n_hair}"
            )
        h = self.mlp_w1.shape[1]
        shapes = {
            "mlp_b1": (h,),
            "mlp_w2": (h, h),
            "mlp_b2": (h,),
            "mlp_w3": (h, sum(ATTR_WIDTHS)),
            "mlp_b3": (sum(ATTR_WIDTHS),),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValidationError(f"{name} has shape {got}, expected {want}")
        if self.output_scale <= 0 or self.max_scale <= 0:
            raise ValidationError("decoder scales must be positive")


@dataclass
class AttributeCache:
    """Frozen non-position attributes plus the metadata to recompute positions."""

    normal: NDArray[np.float64]
    color: NDArray[np.float64]
    scale: NDArray[np.float64]
    quat: NDArray[np.float64]
    opacity: NDArray[np.float64]
    group: NDArray[np.uint8]
    uv: NDArray[np.float64]
    hair_index: NDArray[np.int64]
    rig_vertices: int
    t_tex: int

    def __len__(self) -> int:
        return int(self.color.shape[0])


def hair_count(alpha_hair: float, t_tri: int) -> int:
    """Point budget rule: (alpha_hair * t_tri) squared."""
    return int(round(alpha_hair * t_tri)) ** 2


def quat_from_normal(n: NDArray[np.float64]) -> NDArray[np.float64]:
    """Minimal rotation taking +z to *n*, as (w, x, y, z) unit quaternions.

    Antipodal inputs (n ~ -z) take the declared tie-break: 180 degrees about x.
    """
    n = np.asarray(n, dtype=np.float64)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    length = np.linalg.norm(n, axis=1)
    if np.any(length < 1e-12):
        raise ValueError("cannot orient a zero normal")
    n = n / length[:, None]

    q = np.zeros((n.shape[0], 4))
    flip = n[:, 2] < -1.0 + 1e-6
    q[flip] = (0.0, 1.0, 0.0, 0.0)
    ok = ~flip
    w = np.sqrt((1.0 + n[ok, 2]) / 2.0)
    q[ok, 0] = w
    q[ok, 1] = -n[ok, 1] / (2.0 * w)
    q[ok, 2] = n[ok, 0] / (2.0 * w)
    return q[0] if single else q


def face_grid(alpha_head: float, t_tex: int) -> tuple[NDArray, NDArray]:
    """The fixed (u_k, v_k) sample lattice: a centered m x m grid over [0,1]^2
    with m = alpha_head * t_tex."""
    m = int(round(alpha_head * t_tex))
    centers = (np.arange(m) + 0.5) / m
    uu, vv = np.meshgrid(centers, centers, indexing="xy")
    return uu.ravel(), vv.ravel()


def default_epsilon(rig: HeadRig) -> float:
    return EPSILON_RADIUS_RATIO * rig.bounding_radius()


def gen_face_gaussians(
    geom: UvGeometry,
    tex: TextureSet,
    rig: HeadRig,
    alpha_head: float = 0.5,
    epsilon: float | None = None,
) -> GaussianCloud:
    """Sample the UV maps on the fixed grid and build thin-disk Gaussians.

    Grid points whose bilinear validity footprint touches an invalid texel are
    dropped, so gutter texels never spawn phantom points.
    """
    if not 0.0 < alpha_head <= 1.0:
        raise ValueError(f"alpha_head must lie in (0, 1], got {alpha_head}")
    if geom.fine_pos is None or geom.fine_normal is None:
        raise ValueError("geometry maps incomplete: run apply_bump and fine_normals first")
    if epsilon is None:
        epsilon = default_epsilon(rig)

    u, v = face_grid(alpha_head, tex.resolution)
    keep = sample_map(geom.valid, u, v)
    u, v = u[keep], v[keep]
    n_pts = u.size
    if n_pts == 0:
        return empty_cloud()

    mu = sample_map(geom.fine_pos, u, v)
    nrm = normalize(sample_map(geom.fine_normal, u, v), fallback=np.array([0.0, 0.0, 1.0]))
    color = sample_map(tex.albedo, u, v)

    eye = sample_map(rig.eye_uv_mask, u, v)
    group = np.where(eye, GROUP_EYE, GROUP_FACE).astype(np.uint8)

    scale = np.empty((n_pts, 3))
    scale[:, 0] = tex.disk_scale_xy[0]
    scale[:, 1] = tex.disk_scale_xy[1]
    scale[:, 2] = epsilon

    return GaussianCloud(
        mu=mu,
        normal=nrm,
        color=color,
        scale=scale,
        quat=quat_from_normal(nrm),
        opacity=np.ones(n_pts),
        group=group,
        uv=np.stack([u, v], axis=1),
        hair_index=np.full(n_pts, -1, dtype=np.int64),
    )


def gen_hair_positions(dec: HairDecoder, cond: NDArray[np.float64]) -> NDArray[np.float64]:
    """Bounded position head: output_scale * tanh(W^T cond) + b."""
    cond = np.asarray(cond, dtype=np.float64).reshape(-1)
    if cond.shape[0] != dec.cond_dim:
        raise ValueError(
            f"conditioning vector has {cond.shape[0]} entries, decoder expects {dec.cond_dim}"
        )
    pre = np.einsum("chk,c->hk", dec.w_pos, cond)
    return dec.output_scale * np.tanh(pre) + dec.bias


def sample_triplane(tp: TriPlane, p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum of bilinear samples from the xy, xz, and yz planes (clamped)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    coords = (p / tp.cube_side) + 0.5  # world cube -> [0,1] per axis
    pairs = ((0, 1), (0, 2), (1, 2))
    out = np.zeros((p.shape[0], tp.feature_dim))
    for plane, (a, b) in enumerate(pairs):
        out += sample_map(tp.planes[plane], coords[:, a], coords[:, b])
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def decode_hair_attrs(feat: NDArray[np.float64], dec: HairDecoder):
    """MLP forward pass with per-head activations.

    Heads: color/opacity via logistic; normal = normalize(+z anchor + raw);
    scale = max_scale * softplus(raw); quaternion = normalize(identity + raw).
    """
    feat = np.atleast_2d(np.asarray(feat, dtype=np.float64))
    h = np.maximum(feat @ dec.mlp_w1 + dec.mlp_b1, 0.0)
    h = np.maximum(h @ dec.mlp_w2 + dec.mlp_b2, 0.0)
    raw = h @ dec.mlp_w3 + dec.mlp_b3

    c_raw, n_raw, s_raw, q_raw, o_raw = np.split(raw, np.cumsum(ATTR_WIDTHS)[:-1], axis=1)
    color = _sigmoid(c_raw)
    nrm = normalize(n_raw + np.array([0.0, 0.0, 1.0]), fallback=np.array([0.0, 0.0, 1.0]))
    scale = dec.max_scale * _softplus(s_raw)
    quat = normalize(q_raw + np.array([1.0, 0.0, 0.0, 0.0]), fallback=np.array([1.0, 0.0, 0.0, 0.0]))
    opacity = _sigmoid(o_raw[:, 0])
    return color, nrm, scale, quat, opacity


def hair_conditioning(params: HeadParams) -> NDArray[np.float64]:
    """Decoder conditioning = identity and expression coefficients, concatenated."""
    return np.concatenate([params.identity, params.expression])


def gen_hair_gaussians(
    dec: HairDecoder, tp: TriPlane, cond: NDArray[np.float64]
) -> GaussianCloud:
    """Full hair branch: positions, tri-plane features, decoded attributes."""
    mu = gen_hair_positions(dec, cond)
    feats = sample_triplane(tp, mu)
    color, nrm, scale, quat, opacity = decode_hair_attrs(feats, dec)
    n = mu.shape[0]
    return GaussianCloud(
        mu=mu,
        normal=nrm,
        color=color,
        scale=scale,
        quat=quat,
        opacity=opacity,
        group=np.full(n, GROUP_HAIR, dtype=np.uint8),
        uv=np.full((n, 2), np.nan),
        hair_index=np.arange(n, dtype=np.int64),
    )


def merge_clouds(face: GaussianCloud, hair: GaussianCloud) -> GaussianCloud:
    """Concatenate (face block first); group tags ride along unchanged."""
    return GaussianCloud(
        mu=np.concatenate([face.mu, hair.mu]),
        normal=np.concatenate([face.normal, hair.normal]),
        color=np.concatenate([face.color, hair.color]),
        scale=np.concatenate([face.scale, hair.scale]),
        quat=np.concatenate([face.quat, hair.quat]),
        opacity=np.concatenate([face.opacity, hair.opacity]),
        group=np.concatenate([face.group, hair.group]),
        uv=np.concatenate([face.uv, hair.uv]),
        hair_index=np.concatenate([face.hair_index, hair.hair_index]),
    )


def cache_attributes(
    cloud: GaussianCloud,
    rig: HeadRig,
    t_tex: int,
    face_uv: NDArray[np.float64] | None = None,
    hair_ids: NDArray[np.int64] | None = None,
) -> AttributeCache:
    """Deep-copy everything except positions, plus resampling metadata."""
    return AttributeCache(
        normal=cloud.normal.copy(),
        color=cloud.color.copy(),
        scale=cloud.scale.copy(),
        quat=cloud.quat.copy(),
        opacity=cloud.opacity.copy(),
        group=cloud.group.copy(),
        uv=(face_uv if face_uv is not None else cloud.uv).copy(),
        hair_index=(hair_ids if hair_ids is not None else cloud.hair_index).copy(),
        rig_vertices=rig.n_vertices,
        t_tex=t_tex,
    )


def animate_cached(
    cache: AttributeCache,
    rig: HeadRig,
    params: HeadParams,
    bump: NDArray[np.float64],
    dec: HairDecoder | None,
) -> GaussianCloud:
    """Re-derive positions for new params; appearance comes from the cache.

    Face points also refresh normal and quaternion from the new fine-normal
    map (they are functions of position); hair keeps its cached attributes and
    only re-decodes positions.
    """
    if rig.n_vertices != cache.rig_vertices:
        raise ValueError(
            f"rig has {rig.n_vertices} vertices but cache was built for {cache.rig_vertices}"
        )
    mesh = pose_mesh(rig, params)
    geom = fine_normals(apply_bump(rasterize_uv(mesh, rig, cache.t_tex), bump))

    n = len(cache)
    mu = np.zeros((n, 3))
    nrm = cache.normal.copy()
    quat = cache.quat.copy()

    is_face = cache.hair_index < 0
    if np.any(is_face):
        u = cache.uv[is_face, 0]
        v = cache.uv[is_face, 1]
        mu[is_face] = sample_map(geom.fine_pos, u, v)
        face_n = normalize(
            sample_map(geom.fine_normal, u, v), fallback=np.array([0.0, 0.0, 1.0])
        )
        nrm[is_face] = face_n
        quat[is_face] = quat_from_normal(face_n)

    is_hair = ~is_face
    if np.any(is_hair):
        if dec is None:
            raise ValueError("cache contains hair points but no decoder was given")
        hair_mu = gen_hair_positions(dec, hair_conditioning(params))
        mu[is_hair] = hair_mu[cache.hair_index[is_hair]]

    return GaussianCloud(
        mu=mu,
        normal=nrm,
        color=cache.color.copy(),
        scale=cache.scale.copy(),
        quat=quat,
        opacity=cache.opacity.copy(),
        group=cache.group.copy(),
        uv=cache.uv.copy(),
        hair_index=cache.hair_index.copy(),
    )


def random_triplane(
    seed: int, t_tri: int = 64, feature_dim: int = 32, cube_side: float = 0.4
) -> TriPlane:
    """Seeded feature planes for desk-scale runs (trained planes are external)."""
    rng = np.random.default_rng(seed)
    return TriPlane(
        planes=rng.normal(scale=0.1, size=(3, t_tri, t_tri, feature_dim)),
        cube_side=cube_side,
    )


def random_hair_decoder(
    seed: int,
    cond_dim: int,
    bias: NDArray[np.float64],
    feature_dim: int = 32,
    hidden: int = 64,
    output_scale: float = DEFAULT_OUTPUT_SCALE,
    max_scale: float = DEFAULT_MAX_SCALE,
) -> HairDecoder:
    """Seeded decoder around a given rest cloud (trained weights are external)."""
    rng = np.random.default_rng(seed)
    n_out = sum(ATTR_WIDTHS)
    return HairDecoder(
        w_pos=rng.normal(scale=0.5, size=(cond_dim, bias.shape[0], 3)),
        bias=np.asarray(bias, dtype=np.float64),
        mlp_w1=rng.normal(scale=np.sqrt(2.0 / feature_dim), size=(feature_dim, hidden)),
        mlp_b1=np.zeros(hidden),
        mlp_w2=rng.normal(scale=np.sqrt(2.0 / hidden), size=(hidden, hidden)),
        mlp_b2=np.zeros(hidden),
        mlp_w3=rng.normal(scale=np.sqrt(1.0 / hidden), size=(hidden, n_out)),
        mlp_b3=np.zeros(n_out),
        output_scale=output_scale,
        max_scale=max_scale,
    )
