"""Parametric coarse head model: linear shape/expression basis plus jaw and eye joints.

A :class:`HeadRig` bundles the template mesh, the identity / expression blend
bases, the rigid sub-rigs (jaw, two eyeballs), per-vertex UVs, and a bit mask
in UV space marking eyeball texels.  :func:`pose_mesh` evaluates the rig for a
concrete :class:`HeadParams` and returns a posed :class:`CoarseMesh` with
area-weighted vertex normals.

Rigs round-trip through a little-endian binary container (magic ``EGRIG\\0``);
see ``docs/formats.md`` for the exact layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
from numpy.typing import NDArray

from .errors import AssetError, ValidationError
from .mathutil import normalize, rodrigues

RIG_MAGIC = b"EGRIG\0"
RIG_VERSION = 1


@dataclass
class HeadParams:
    """Pose and shape coefficients consumed by :func:`pose_mesh`.

    ``eyes`` holds per-eye ``[yaw, pitch]`` radians, row 0 = left, row 1 = right.
    """

    identity: NDArray[np.float64]
    expression: NDArray[np.float64]
    jaw: float = 0.0
    eyes: NDArray[np.float64] = field(
        default_factory=lambda: np.zeros((2, 2), dtype=np.float64)
    )

    def __post_init__(self) -> None:
        self.identity = np.asarray(self.identity, dtype=np.float64).reshape(-1)
        self.expression = np.asarray(self.expression, dtype=np.float64).reshape(-1)
        self.eyes = np.asarray(self.eyes, dtype=np.float64)
        if self.eyes.shape != (2, 2):
            raise ValueError(f"eyes must be (2, 2) [yaw, pitch] rows, got {self.eyes.shape}")
        self.jaw = float(self.jaw)

    def copy(self) -> "HeadParams":
        return HeadParams(
            identity=self.identity.copy(),
            expression=self.expression.copy(),
            jaw=self.jaw,
            eyes=self.eyes.copy(),
        )


@dataclass
class CoarseMesh:
    """A posed triangle mesh with per-vertex UVs and unit normals."""

    vertices: NDArray[np.float64]  # (V, 3)
    faces: NDArray[np.int64]  # (F, 3), CCW
    uv: NDArray[np.float64]  # (V, 2) in [0, 1]
    normals: NDArray[np.float64]  # (V, 3), unit length


@dataclass
class HeadRig:
    """Template geometry, blend bases, joint definitions, and UV layout."""

    template: NDArray[np.float64]  # (V, 3)
    identity_basis: NDArray[np.float64]  # (V, 3, n_id)
    expression_basis: NDArray[np.float64]  # (V, 3, n_exp)
    faces: NDArray[np.int64]  # (F, 3)
    uv: NDArray[np.float64]  # (V, 2)
    jaw_pivot: NDArray[np.float64]  # (3,)
    jaw_axis: NDArray[np.float64]  # (3,), unit
    jaw_vertices: NDArray[np.int64]  # indices rotated by the jaw joint
    eye_pivots: NDArray[np.float64]  # (2, 3), row 0 = left
    eye_yaw_axes: NDArray[np.float64]  # (2, 3), unit
    eye_pitch_axes: NDArray[np.float64]  # (2, 3), unit
    eye_vertices: tuple[NDArray[np.int64], NDArray[np.int64]]  # (left, right)
    eye_uv_mask: NDArray[np.bool_]  # (m, m), True where a texel shows eyeball

    @property
    def n_vertices(self) -> int:
        return int(self.template.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def n_identity(self) -> int:
        return int(self.identity_basis.shape[2])

    @property
    def n_expression(self) -> int:
        return int(self.expression_basis.shape[2])

    def neutral_params(self) -> HeadParams:
        """All-zero coefficients: posing with these reproduces the template."""
        return HeadParams(
            identity=np.zeros(self.n_identity),
            expression=np.zeros(self.n_expression),
        )

    def bounding_radius(self) -> float:
        """Radius of the template's bounding sphere about its centroid."""
        center = self.template.mean(axis=0)
        return float(np.linalg.norm(self.template - center, axis=1).max())

    def validate(self) -> None:
        """Raise :class:`ValidationError` on any structural inconsistency."""
        v = self.n_vertices
        if self.template.shape != (v, 3):
            raise ValidationError(f"template must be (V, 3), got {self.template.shape}")
        if self.identity_basis.shape[:2] != (v, 3):
            raise ValidationError(
                f"identity basis shape {self.identity_basis.shape} does not match V={v}"
            )
        if self.expression_basis.shape[:2] != (v, 3):
            raise ValidationError(
                f"expression basis shape {self.expression_basis.shape} does not match V={v}"
            )
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= v:
            raise ValidationError("face indices out of vertex range")
        if self.uv.shape != (v, 2):
            raise ValidationError(f"uv must be (V, 2), got {self.uv.shape}")
        if np.any(self.uv < 0.0) or np.any(self.uv > 1.0):
            bad = self.uv[np.any((self.uv < 0.0) | (self.uv > 1.0), axis=1)][0]
            raise ValidationError(f"uv coordinates must lie in [0, 1], found {bad}")
        for name, idx in (
            ("jaw", self.jaw_vertices),
            ("left eye", self.eye_vertices[0]),
            ("right eye", self.eye_vertices[1]),
        ):
            if idx.size and (idx.min() < 0 or idx.max() >= v):
                raise ValidationError(f"{name} vertex set out of range")
        if np.intersect1d(self.eye_vertices[0], self.eye_vertices[1]).size:
            raise ValidationError("eye vertex sets overlap")
        m = self.eye_uv_mask
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"eye uv mask must be square, got {m.shape}")


def compute_vertex_normals(
    vertices: NDArray[np.float64], faces: NDArray[np.int64]
) -> NDArray[np.float64]:
    """Area-weighted vertex normals; isolated vertices fall back to +z."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    # Cross product magnitude is twice the face area, so plain accumulation
    # of unnormalized face normals already weights by area.
    face_n = np.cross(v1 - v0, v2 - v0)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], face_n)
    return normalize(acc, fallback=np.array([0.0, 0.0, 1.0]))


def pose_mesh(rig: HeadRig, params: HeadParams) -> CoarseMesh:
    """Evaluate the rig: linear blend, then jaw and eye rotations about pivots."""
    if params.identity.shape[0] != rig.n_identity:
        raise ValueError(
            f"identity has {params.identity.shape[0]} coefficients, rig expects {rig.n_identity}"
        )
    if params.expression.shape[0] != rig.n_expression:
        raise ValueError(
            f"expression has {params.expression.shape[0]} coefficients, "
            f"rig expects {rig.n_expression}"
        )

    verts = (
        rig.template
        + rig.identity_basis @ params.identity
        + rig.expression_basis @ params.expression
    )

    if params.jaw != 0.0 and rig.jaw_vertices.size:
        rot = rodrigues(rig.jaw_axis, params.jaw)
        sel = rig.jaw_vertices
        verts[sel] = (verts[sel] - rig.jaw_pivot) @ rot.T + rig.jaw_pivot

    for side in range(2):
        yaw, pitch = params.eyes[side]
        sel = rig.eye_vertices[side]
        if sel.size == 0 or (yaw == 0.0 and pitch == 0.0):
            continue
        rot = rodrigues(rig.eye_yaw_axes[side], yaw) @ rodrigues(
            rig.eye_pitch_axes[side], pitch
        )
        pivot = rig.eye_pivots[side]
        verts[sel] = (verts[sel] - pivot) @ rot.T + pivot

    normals = compute_vertex_normals(verts, rig.faces)
    return CoarseMesh(vertices=verts, faces=rig.faces.copy(), uv=rig.uv.copy(), normals=normals)


# --- binary container ---------------------------------------------------------


def _write_f32(fh: BinaryIO, arr: NDArray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_u32(fh: BinaryIO, arr: NDArray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def _write_index_set(fh: BinaryIO, idx: NDArray) -> None:
    fh.write(struct.pack("<I", int(idx.size)))
    _write_u32(fh, idx)


def save_rig(path: str, rig: HeadRig) -> None:
    """Serialize a validated rig to the ``EGRIG`` container."""
    rig.validate()
    with open(path, "wb") as fh:
        write_rig_stream(fh, rig)


def write_rig_stream(fh: BinaryIO, rig: HeadRig) -> None:
    rig.validate()
    fh.write(RIG_MAGIC)
    fh.write(
        struct.pack(
            "<5I",
            RIG_VERSION,
            rig.n_vertices,
            rig.n_faces,
            rig.n_identity,
            rig.n_expression,
        )
    )
    _write_f32(fh, rig.template)
    _write_f32(fh, rig.identity_basis)
    _write_f32(fh, rig.expression_basis)
    _write_f32(fh, rig.jaw_pivot)
    _write_f32(fh, rig.jaw_axis)
    _write_f32(fh, rig.eye_pivots)
    _write_f32(fh, rig.eye_yaw_axes)
    _write_f32(fh, rig.eye_pitch_axes)
    _write_u32(fh, rig.faces)
    _write_f32(fh, rig.uv)
    _write_index_set(fh, rig.jaw_vertices)
    _write_index_set(fh, rig.eye_vertices[0])
    _write_index_set(fh, rig.eye_vertices[1])
    m = rig.eye_uv_mask.shape[0]
    fh.write(struct.pack("<I", m))
    fh.write(np.packbits(rig.eye_uv_mask.reshape(-1), bitorder="little").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise AssetError(f"corrupt rig: {what} block short")
    return buf


def _read_f32(fh: BinaryIO, shape: tuple[int, ...], what: str) -> NDArray[np.float64]:
    n = int(np.prod(shape))
    buf = _read_exact(fh, 4 * n, what)
    return np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)


def _read_u32(fh: BinaryIO, shape: tuple[int, ...], what: str) -> NDArray[np.int64]:
    n = int(np.prod(shape))
    buf = _read_exact(fh, 4 * n, what)
    return np.frombuffer(buf, dtype="<u4").astype(np.int64).reshape(shape)


def _read_index_set(fh: BinaryIO, what: str) -> NDArray[np.int64]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4, what))
    return _read_u32(fh, (count,), what)


def load_rig(path: str) -> HeadRig:
    """Read and validate an ``EGRIG`` container."""
    with open(path, "rb") as fh:
        return read_rig_stream(fh)


def read_rig_stream(fh: BinaryIO) -> HeadRig:
    magic = fh.read(len(RIG_MAGIC))
    if magic != RIG_MAGIC:
        raise AssetError(f"not a rig file: bad magic {magic!r}")
    version, nv, nf, n_id, n_exp = struct.unpack("<5I", _read_exact(fh, 20, "header"))
    if version != RIG_VERSION:
        raise AssetError(f"unsupported rig version {version}")
    rig = HeadRig(
        template=_read_f32(fh, (nv, 3), "vertex"),
        identity_basis=_read_f32(fh, (nv, 3, n_id), "identity basis"),
        expression_basis=_read_f32(fh, (nv, 3, n_exp), "expression basis"),
        jaw_pivot=_read_f32(fh, (3,), "jaw pivot"),
        jaw_axis=_read_f32(fh, (3,), "jaw axis"),
        eye_pivots=_read_f32(fh, (2, 3), "eye pivots"),
        eye_yaw_axes=_read_f32(fh, (2, 3), "eye yaw axes"),
        eye_pitch_axes=_read_f32(fh, (2, 3), "eye pitch axes"),
        faces=_read_u32(fh, (nf, 3), "face"),
        uv=_read_f32(fh, (nv, 2), "uv"),
        jaw_vertices=_read_index_set(fh, "jaw index"),
        eye_vertices=(
            _read_index_set(fh, "left eye index"),
            _read_index_set(fh, "right eye index"),
        ),
        eye_uv_mask=np.zeros((0, 0), dtype=bool),
    )
    (m,) = struct.unpack("<I", _read_exact(fh, 4, "mask header"))
    packed = _read_exact(fh, (m * m + 7) // 8, "mask")
    mask = np.unpackbits(
        np.frombuffer(packed, dtype=np.uint8), count=m * m, bitorder="little"
    )
    rig.eye_uv_mask = mask.reshape(m, m).astype(bool)
    rig.validate()
    return rig
