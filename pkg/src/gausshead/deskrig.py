"""Procedural test head ("desk rig"): an icosphere-derived ellipsoid with jaw,
eyes, blend bases, and a seam-free UV atlas.

Everything here is deterministic so golden files and checksum tests are stable.
The mesh is a level-4 icosphere (2562 vertices) scaled to head-like radii with
the rear cap removed; the remaining open surface maps injectively onto a UV
disk via an azimuthal projection, which keeps the atlas overlap-free without
duplicating seam vertices.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .headmodel import HeadRig, compute_vertex_normals
from .mathutil import normalize

SUBDIVISIONS = 4  # level-4 icosphere: 2562 vertices, 5120 faces before trimming
HEAD_RADII = np.array([0.075, 0.105, 0.090])  # meters; +z is the face direction
CAP_ANGLE = np.deg2rad(140.0)  # faces fully beyond this angle from +z are dropped
UV_DISK_RADIUS = 0.45  # atlas disk radius inside the unit UV square
EYE_CONE = np.deg2rad(9.0)
EYE_DIRS = normalize(np.array([[0.33, 0.27, 0.90], [-0.33, 0.27, 0.90]]))
EYE_PIVOT_DEPTH = 0.85  # pivot = this fraction of the eye patch centroid
EYE_MASK_RES = 256
N_IDENTITY = 8
N_EXPRESSION = 8


def icosphere(subdivisions: int) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Unit icosphere by repeated edge-midpoint subdivision of an icosahedron."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts = normalize(verts)
    for _ in range(subdivisions):
        vert_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                p = vert_list[a] + vert_list[b]
                vert_list.append(p / np.linalg.norm(p))
                idx = len(vert_list) - 1
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        verts = np.array(vert_list)
        faces = np.array(new_faces, dtype=np.int64)
    return verts, faces


def _disk_uv(dirs: NDArray[np.float64]) -> NDArray[np.float64]:
    """Azimuthal map: polar angle from +z becomes UV radius, so the kept cap
    (theta <= CAP_ANGLE) lands injectively on a disk of radius UV_DISK_RADIUS."""
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    r = UV_DISK_RADIUS * np.minimum(theta, CAP_ANGLE) / CAP_ANGLE
    return 0.5 + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def uv_to_direction(u: NDArray, v: NDArray) -> NDArray[np.float64]:
    """Inverse of the azimuthal atlas map (used for analytic UV-region masks)."""
    du = np.asarray(u, dtype=np.float64) - 0.5
    dv = np.asarray(v, dtype=np.float64) - 0.5
    r = np.sqrt(du * du + dv * dv)
    theta = np.minimum(r / UV_DISK_RADIUS, 1.0) * CAP_ANGLE
    phi = np.arctan2(dv, du)
    sin_t = np.sin(theta)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)], axis=-1)


def _bump_basis(
    dirs: NDArray[np.float64], n_modes: int, amplitude: float, sigma: float, seed: int
) -> NDArray[np.float64]:
    """Radial Gaussian-bump displacement modes centered on seeded directions
    within the kept cap; amplitudes are millimeter-scale so posed meshes stay
    far from self-intersection."""
    rng = np.random.default_rng(seed)
    basis = np.empty((dirs.shape[0], 3, n_modes))
    made = 0
    while made < n_modes:
        center = normalize(rng.normal(size=3))
        if np.arccos(np.clip(center[2], -1.0, 1.0)) > 0.75 * CAP_ANGLE:
            continue  # keep modes on the visible cap
        ang = np.arccos(np.clip(dirs @ center, -1.0, 1.0))
        weight = amplitude * np.exp(-0.5 * (ang / sigma) ** 2)
        basis[:, :, made] = weight[:, None] * dirs
        made += 1
    return basis


def make_desk_rig() -> HeadRig:
    """Build the deterministic test head."""
    dirs, faces = icosphere(SUBDIVISIONS)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    keep = np.all(theta[faces] <= CAP_ANGLE, axis=1)
    faces = faces[keep]

    template = dirs * HEAD_RADII
    uv = _disk_uv(dirs)

    eye_sets = []
    for side in range(2):
        cos_ang = dirs @ EYE_DIRS[side]
        eye_sets.append(np.nonzero(cos_ang >= np.cos(EYE_CONE))[0].astype(np.int64))
    eye_pivots = np.stack(
        [EYE_PIVOT_DEPTH * template[s].mean(axis=0) for s in eye_sets]
    )

    in_eye = np.zeros(dirs.shape[0], dtype=bool)
    in_eye[np.concatenate(eye_sets)] = True
    jaw_set = np.nonzero(
        (dirs[:, 1] < -0.35) & (dirs[:, 2] > 0.25) & (theta <= CAP_ANGLE) & ~in_eye
    )[0].astype(np.int64)

    # Eye-region UV mask from the analytic inverse of the atlas map.
    centers = (np.arange(EYE_MASK_RES) + 0.5) / EYE_MASK_RES
    uu, vv = np.meshgrid(centers, centers, indexing="xy")
    texel_dirs = uv_to_direction(uu, vv)
    mask = np.zeros((EYE_MASK_RES, EYE_MASK_RES), dtype=bool)
    for side in range(2):
        mask |= texel_dirs @ EYE_DIRS[side] >= np.cos(EYE_CONE)

    return HeadRig(
        template=template,
        identity_basis=_bump_basis(dirs, N_IDENTITY, 0.003, 0.6, seed=11),
        expression_basis=_bump_basis(dirs, N_EXPRESSION, 0.004, 0.4, seed=13),
        faces=faces,
        uv=uv,
        jaw_pivot=np.array([0.0, -0.35 * HEAD_RADII[1], 0.0]),
        jaw_axis=np.array([1.0, 0.0, 0.0]),
        jaw_vertices=jaw_set,
        eye_pivots=eye_pivots,
        eye_yaw_axes=np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]),
        eye_pitch_axes=np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        eye_vertices=(eye_sets[0], eye_sets[1]),
        eye_uv_mask=mask,
    )


def default_hair_bias(n_hair: int = 1024, seed: int = 17) -> NDArray[np.float64]:
    """Rest positions for the hair cloud: seeded points on a slightly inflated
    scalp shell (upper or rear part of the head)."""
    rng = np.random.default_rng(seed)
    points = np.empty((n_hair, 3))
    made = 0
    while made < n_hair:
        d = normalize(rng.normal(size=(n_hair, 3)))
        scalp = (d[:, 1] > 0.15) | (d[:, 2] < -0.25)
        d = d[scalp][: n_hair - made]
        points[made : made + d.shape[0]] = 1.03 * d * HEAD_RADII
        made += d.shape[0]
    return points


def default_albedo(t_tex: int = 256) -> NDArray[np.float64]:
    """Deterministic skin-toned albedo with enough structure for edit and
    fitting tests: darker mouth band, light eye patches, mild mottling."""
    centers = (np.arange(t_tex) + 0.5) / t_tex
    uu, vv = np.meshgrid(centers, centers, indexing="xy")
    d = uv_to_direction(uu, vv)

    albedo = np.empty((t_tex, t_tex, 3))
    albedo[...] = (0.78, 0.60, 0.52)
    # low-frequency mottling keyed to surface direction (deterministic)
    mottle = 0.06 * np.sin(9.0 * d[..., 0]) * np.cos(7.0 * d[..., 1])
    albedo += mottle[..., None]

    mouth = (d[..., 1] < -0.42) & (d[..., 1] > -0.62) & (d[..., 2] > 0.55)
    albedo[mouth] = (0.55, 0.25, 0.25)
    for side in range(2):
        eye = d @ EYE_DIRS[side] >= np.cos(EYE_CONE)
        albedo[eye] = (0.92, 0.92, 0.95)
        brow = (d @ EYE_DIRS[side] >= np.cos(np.deg2rad(14.0))) & (
            d[..., 1] > EYE_DIRS[side, 1] + 0.12
        )
        albedo[brow] = (0.30, 0.22, 0.18)
    return np.clip(albedo, 0.0, 1.0)
