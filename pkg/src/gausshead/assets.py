"""All persistence for the avatar pipeline.

One module owns every byte that crosses a process boundary: texture and
buffer images (PNG / PFM), Gaussian point clouds as 3DGS-convention PLY,
binary containers for hair decoders and feature planes, the single-file
avatar bundle, and the JSON/TOML sidecar formats consumed by the CLI and
service (scenes, lighting, rasterizer config).

Binary layouts are little-endian throughout with f32 payloads; every
save/load pair is a bitwise roundtrip at f32 resolution.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, fields as dataclass_fields
from typing import BinaryIO

import numpy as np
import tomli
from numpy.typing import NDArray
from PIL import Image

from .errors import AssetError, ValidationError
from .gaussgen import ATTR_WIDTHS, GROUP_NAMES, GaussianCloud, HairDecoder, TriPlane
from .headmodel import HeadParams, HeadRig, read_rig_stream, write_rig_stream
from .shading import OcclusionConfig, ShLighting
from .splatter import Camera, RasterConfig, RenderBuffers, look_at, orbit_camera
from .uvmaps import TextureSet

# Y_00 = 1 / (2 sqrt(pi)); the 3DGS ecosystem stores DC color as (c - 0.5) / Y_00.
SH_C0 = 0.28209479177387814
_LOGIT_CLIP = 1e-7  # face points carry opacity exactly 1, whose logit is infinite

PLY_FLOAT_PROPS = (
    "x", "y", "z",
    "nx", "ny", "nz",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

CONTAINER_VERSION = 1
HAIR_MAGIC = b"EGHAIR\0"
TRI_MAGIC = b"EGTRI\0"
BUNDLE_MAGIC = b"EGAVA\0"
BUNDLE_VERSION = 1

BUFFER_NAMES = ("mask", "depth", "normal", "albedo", "alpha")


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise AssetError(f"{what} truncated")
    return data


def _f32_bytes(arr: NDArray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_f32(fh: BinaryIO, shape: tuple[int, ...], what: str) -> NDArray[np.float64]:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, 4 * count, what)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# Gaussian cloud <-> PLY


def ply_bytes(cloud: GaussianCloud) -> bytes:
    """Serialize the cloud in the interchange convention used by 3DGS viewers.

    DC color is ``(c - 0.5) / Y_00``, scales are natural logs, opacity is a
    logit; an extra uchar ``group`` property (plus a comment with per-group
    counts) carries the eye/face/hair tag, which conventional readers skip.
    """
    cloud.validate()
    counts = [int(np.sum(cloud.group == g)) for g in range(len(GROUP_NAMES))]
    header_lines = [
        "ply",
        "format binary_little_endian 1.0",
        "comment groups " + " ".join(
            f"{name}={n}" for name, n in zip(GROUP_NAMES, counts)
        ),
        f"element vertex {len(cloud)}",
        *(f"property float {p}" for p in PLY_FLOAT_PROPS),
        "property uchar group",
        "end_header",
    ]

    record = np.dtype([(p, "<f4") for p in PLY_FLOAT_PROPS] + [("group", "u1")])
    rows = np.empty(len(cloud), dtype=record)
    for axis, name in enumerate(("x", "y", "z")):
        rows[name] = cloud.mu[:, axis]
        rows["n" + name] = cloud.normal[:, axis]
    for c in range(3):
        rows[f"f_dc_{c}"] = (cloud.color[:, c] - 0.5) / SH_C0
        rows[f"scale_{c}"] = np.log(cloud.scale[:, c])
    o = np.clip(cloud.opacity, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
    rows["opacity"] = np.log(o / (1.0 - o))
    for c in range(4):
        rows[f"rot_{c}"] = cloud.quat[:, c]
    rows["group"] = cloud.group
    return ("\n".join(header_lines) + "\n").encode("ascii") + rows.tobytes()


def export_ply(cloud: GaussianCloud, path: str) -> None:
    """Write :func:`ply_bytes` to disk."""
    data = ply_bytes(cloud)
    with open(path, "wb") as fh:
        fh.write(data)


def import_ply(path: str) -> GaussianCloud:
    """Inverse of :func:`export_ply`; UV provenance and hair indices are not
    part of the interchange format and come back as their defaults."""
    with open(path, "rb") as fh:
        data = fh.read()
    marker = b"end_header\n"
    split = data.find(marker)
    if not data.startswith(b"ply\n") or split < 0:
        raise AssetError(f"{path}: not a PLY file")
    header = data[: split + len(marker)].decode("ascii", errors="replace")
    body = data[split + len(marker):]

    count = -1
    props: list[tuple[str, str]] = []
    for line in header.splitlines()[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise AssetError(f"{path}: unsupported PLY format {' '.join(tokens[1:])}")
        elif tokens[0] == "element":
            if tokens[1] != "vertex" or count >= 0:
                raise AssetError(f"{path}: expected a single vertex element")
            count = int(tokens[2])
        elif tokens[0] == "property":
            props.append((tokens[1], tokens[2]))
        elif tokens[0] != "end_header":
            raise AssetError(f"{path}: unexpected header line {line!r}")
    expected = [("float", p) for p in PLY_FLOAT_PROPS] + [("uchar", "group")]
    if count < 0 or props != expected:
        raise AssetError(f"{path}: vertex properties do not match the gaussian layout")

    record = np.dtype([(p, "<f4") for p in PLY_FLOAT_PROPS] + [("group", "u1")])
    if len(body) < count * record.itemsize:
        raise AssetError(f"{path}: vertex data truncated")
    rows = np.frombuffer(body[: count * record.itemsize], dtype=record)

    def stack(names):
        return np.stack([rows[n].astype(np.float64) for n in names], axis=1)

    cloud = GaussianCloud(
        mu=stack(("x", "y", "z")),
        normal=stack(("nx", "ny", "nz")),
        color=stack(("f_dc_0", "f_dc_1", "f_dc_2")) * SH_C0 + 0.5,
        scale=np.exp(stack(("scale_0", "scale_1", "scale_2"))),
        quat=stack(("rot_0", "rot_1", "rot_2", "rot_3")),
        opacity=1.0 / (1.0 + np.exp(-rows["opacity"].astype(np.float64))),
        group=rows["group"].copy(),
    )
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# Image formats: PFM for float maps, PNG for 8-bit color


def save_pfm(path: str, data: NDArray) -> None:
    """Write a float map (grayscale ``Pf`` or 3-channel ``PF``), little-endian.

    Array row 0 is v=0; PFM scanlines run bottom-to-top, so rows are flipped
    on the way out and restored by :func:`load_pfm`.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValidationError(f"PFM maps must be (h, w) or (h, w, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def load_pfm(path: str) -> NDArray[np.float64]:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise AssetError(f"{path}: not a PFM file")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise AssetError(f"{path}: bad PFM header ({exc})") from None
    if w <= 0 or h <= 0 or scale == 0.0:
        raise AssetError(f"{path}: bad PFM header")
    body = parts[3]
    need = w * h * channels * 4
    if len(body) < need:
        raise AssetError(f"{path}: PFM payload truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(body[:need], dtype=dtype).astype(np.float64)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))[::-1]
    if abs(scale) != 1.0:
        arr = arr * abs(scale)
    return np.ascontiguousarray(arr)


def encode_png(image: NDArray) -> bytes:
    """Quantize a [0, 1] float image (grayscale or RGB) to 8-bit PNG bytes.

    Every consumer encodes through here so identical float images yield
    identical files.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValidationError(f"PNG images must be (h, w) or (h, w, 3), got {arr.shape}")
    quant = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return buf.getvalue()


def save_png(path: str, image: NDArray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))


def load_png(path: str) -> NDArray[np.float64]:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise AssetError(f"{path}: cannot read PNG ({exc})") from None
    return arr / 255.0


# ---------------------------------------------------------------------------
# Render buffer dumps (the golden-file layout)


def dump_buffers(dirpath: str, buffers: RenderBuffers) -> None:
    """Write the five composited channels as PFMs plus a preview PNG."""
    os.makedirs(dirpath, exist_ok=True)
    for name in BUFFER_NAMES:
        save_pfm(os.path.join(dirpath, name + ".pfm"), getattr(buffers, name))
    save_png(os.path.join(dirpath, "preview.png"), buffers.albedo)


def load_buffers(dirpath: str) -> RenderBuffers:
    maps = {n: load_pfm(os.path.join(dirpath, n + ".pfm")) for n in BUFFER_NAMES}
    return RenderBuffers(**maps)


def buffer_checksums(dirpath: str) -> dict[str, str]:
    """SHA-256 of every file in a buffer dump, keyed by filename; the golden values."""
    out = {}
    for fname in sorted(os.listdir(dirpath)):
        full = os.path.join(dirpath, fname)
        if not os.path.isfile(full):
            continue
        with open(full, "rb") as fh:
            out[fname] = hashlib.sha256(fh.read()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# Hair decoder and feature-plane containers


def write_decoder_stream(fh: BinaryIO, dec: HairDecoder) -> None:
    dec.validate()
    hidden = int(dec.mlp_w1.shape[1])
    fh.write(HAIR_MAGIC)
    fh.write(struct.pack(
        "<5I", CONTAINER_VERSION, dec.cond_dim, dec.n_hair, dec.feature_dim, hidden
    ))
    fh.write(struct.pack("<2f", dec.output_scale, dec.max_scale))
    for name in ("w_pos", "bias", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "mlp_w3", "mlp_b3"):
        fh.write(_f32_bytes(getattr(dec, name)))


def read_decoder_stream(fh: BinaryIO) -> HairDecoder:
    magic = _read_exact(fh, len(HAIR_MAGIC), "hair decoder header")
    if magic != HAIR_MAGIC:
        raise AssetError("not a hair decoder container (bad magic)")
    version, cond, n, feat, hidden = struct.unpack(
        "<5I", _read_exact(fh, 20, "hair decoder header")
    )
    if version != CONTAINER_VERSION:
        raise AssetError(f"hair decoder container version {version} unsupported")
    out_scale, max_scale = struct.unpack("<2f", _read_exact(fh, 8, "hair decoder header"))
    width = sum(ATTR_WIDTHS)
    dec = HairDecoder(
        w_pos=_read_f32(fh, (cond, n, 3), "hair decoder w_pos"),
        bias=_read_f32(fh, (n, 3), "hair decoder bias"),
        mlp_w1=_read_f32(fh, (feat, hidden), "hair decoder mlp_w1"),
        mlp_b1=_read_f32(fh, (hidden,), "hair decoder mlp_b1"),
        mlp_w2=_read_f32(fh, (hidden, hidden), "hair decoder mlp_w2"),
        mlp_b2=_read_f32(fh, (hidden,), "hair decoder mlp_b2"),
        mlp_w3=_read_f32(fh, (hidden, width), "hair decoder mlp_w3"),
        mlp_b3=_read_f32(fh, (width,), "hair decoder mlp_b3"),
        output_scale=float(out_scale),
        max_scale=float(max_scale),
    )
    dec.validate()
    return dec


def save_decoder(path: str, dec: HairDecoder) -> None:
    with open(path, "wb") as fh:
        write_decoder_stream(fh, dec)


def load_decoder(path: str) -> HairDecoder:
    with open(path, "rb") as fh:
        return read_decoder_stream(fh)


def write_triplane_stream(fh: BinaryIO, tri: TriPlane) -> None:
    tri.validate()
    fh.write(TRI_MAGIC)
    fh.write(struct.pack("<3I", CONTAINER_VERSION, tri.resolution, tri.feature_dim))
    fh.write(struct.pack("<f", tri.cube_side))
    fh.write(_f32_bytes(tri.planes))


def read_triplane_stream(fh: BinaryIO) -> TriPlane:
    magic = _read_exact(fh, len(TRI_MAGIC), "feature plane header")
    if magic != TRI_MAGIC:
        raise AssetError("not a feature plane container (bad magic)")
    version, t, feat = struct.unpack("<3I", _read_exact(fh, 12, "feature plane header"))
    if version != CONTAINER_VERSION:
        raise AssetError(f"feature plane container version {version} unsupported")
    (cube_side,) = struct.unpack("<f", _read_exact(fh, 4, "feature plane header"))
    tri = TriPlane(
        planes=_read_f32(fh, (3, t, t, feat), "feature plane payload"),
        cube_side=float(cube_side),
    )
    tri.validate()
    return tri


def save_triplane(path: str, tri: TriPlane) -> None:
    with open(path, "wb") as fh:
        write_triplane_stream(fh, tri)


def load_triplane(path: str) -> TriPlane:
    with open(path, "rb") as fh:
        return read_triplane_stream(fh)


# ---------------------------------------------------------------------------
# Avatar bundle: one file holding everything a session needs


@dataclass
class AvatarBundle:
    """A renderable avatar: rig, appearance, hair generator, and defaults."""

    rig: HeadRig
    textures: TextureSet
    decoder: HairDecoder
    triplane: TriPlane
    params: HeadParams
    lighting: ShLighting
    version: int = BUNDLE_VERSION

    def validate(self) -> None:
        self.rig.validate()
        self.textures.validate()
        self.decoder.validate()
        self.triplane.validate()
        self.lighting.validate()
        if self.triplane.feature_dim != self.decoder.feature_dim:
            raise ValidationError(
                f"triplane.feature_dim {self.triplane.feature_dim} does not match "
                f"decoder.feature_dim {self.decoder.feature_dim}"
            )
        want_cond = self.rig.n_identity + self.rig.n_expression
        if self.decoder.cond_dim != want_cond:
            raise ValidationError(
                f"decoder.cond_dim {self.decoder.cond_dim} does not match "
                f"rig identity+expression size {want_cond}"
            )
        if self.params.identity.shape[0] != self.rig.n_identity:
            raise ValidationError(
                f"params.identity has {self.params.identity.shape[0]} coefficients, "
                f"rig expects {self.rig.n_identity}"
            )
        if self.params.expression.shape[0] != self.rig.n_expression:
            raise ValidationError(
                f"params.expression has {self.params.expression.shape[0]} coefficients, "
                f"rig expects {self.rig.n_expression}"
            )


def _texture_section(tex: TextureSet) -> bytes:
    t = tex.resolution
    return b"".join([
        struct.pack("<I", t),
        _f32_bytes(tex.albedo),
        _f32_bytes(tex.bump),
        _f32_bytes(tex.disk_scale_xy),
    ])


def _parse_texture_section(body: bytes) -> TextureSet:
    fh = io.BytesIO(body)
    (t,) = struct.unpack("<I", _read_exact(fh, 4, "texture section"))
    return TextureSet(
        albedo=_read_f32(fh, (t, t, 3), "texture albedo"),
        bump=_read_f32(fh, (t, t), "texture bump"),
        disk_scale_xy=_read_f32(fh, (2,), "texture disk scales"),
    )


def _params_section(params: HeadParams) -> bytes:
    return b"".join([
        struct.pack("<2I", params.identity.shape[0], params.expression.shape[0]),
        _f32_bytes(params.identity),
        _f32_bytes(params.expression),
        struct.pack("<f", params.jaw),
        _f32_bytes(params.eyes),
    ])


def _parse_params_section(body: bytes) -> HeadParams:
    fh = io.BytesIO(body)
    n_id, n_exp = struct.unpack("<2I", _read_exact(fh, 8, "params section"))
    identity = _read_f32(fh, (n_id,), "params identity")
    expression = _read_f32(fh, (n_exp,), "params expression")
    (jaw,) = struct.unpack("<f", _read_exact(fh, 4, "params jaw"))
    eyes = _read_f32(fh, (2, 2), "params eyes")
    return HeadParams(identity=identity, expression=expression, jaw=jaw, eyes=eyes)


def save_bundle(bundle: AvatarBundle, path: str) -> None:
    """Single-file container: magic, version, tagged sections, SHA-256 tail."""
    bundle.validate()

    rig_buf = io.BytesIO()
    write_rig_stream(rig_buf, bundle.rig)
    dec_buf = io.BytesIO()
    write_decoder_stream(dec_buf, bundle.decoder)
    tri_buf = io.BytesIO()
    write_triplane_stream(tri_buf, bundle.triplane)
    sections = [
        (b"RIG0", rig_buf.getvalue()),
        (b"TEXA", _texture_section(bundle.textures)),
        (b"HAIR", dec_buf.getvalue()),
        (b"TRIP", tri_buf.getvalue()),
        (b"PARM", _params_section(bundle.params)),
        (b"LITE", _f32_bytes(bundle.lighting.coeffs)),
    ]

    head = io.BytesIO()
    head.write(BUNDLE_MAGIC)
    head.write(struct.pack("<2I", BUNDLE_VERSION, len(sections)))
    for tag, body in sections:
        head.write(tag)
        head.write(struct.pack("<Q", len(body)))
        head.write(body)
    blob = head.getvalue()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(hashlib.sha256(blob).digest())


def load_bundle(path: str) -> AvatarBundle:
    """Load and validate a bundle; corruption never yields a partial result."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(BUNDLE_MAGIC):
        raise AssetError(f"{path}: not an avatar bundle (bad magic)")
    if len(data) < len(BUNDLE_MAGIC) + 8 + 32:
        raise AssetError(f"{path}: bundle checksum mismatch (truncated or corrupt)")
    head, tail = data[:-32], data[-32:]
    if hashlib.sha256(head).digest() != tail:
        raise AssetError(f"{path}: bundle checksum mismatch (truncated or corrupt)")

    fh = io.BytesIO(head)
    fh.seek(len(BUNDLE_MAGIC))
    version, n_sections = struct.unpack("<2I", _read_exact(fh, 8, "bundle header"))
    if version != BUNDLE_VERSION:
        raise AssetError(
            f"{path}: bundle format version {version} unsupported (reader is "
            f"version {BUNDLE_VERSION})"
        )
    sections: dict[bytes, bytes] = {}
    for _ in range(n_sections):
        tag = _read_exact(fh, 4, "bundle section tag")
        (length,) = struct.unpack("<Q", _read_exact(fh, 8, "bundle section length"))
        body = _read_exact(fh, length, f"bundle section {tag.decode('ascii', 'replace')}")
        if tag in sections:
            raise AssetError(f"{path}: duplicate bundle section {tag.decode()}")
        sections[tag] = body
    missing = [t.decode() for t in (b"RIG0", b"TEXA", b"HAIR", b"TRIP", b"PARM", b"LITE")
               if t not in sections]
    if missing:
        raise AssetError(f"{path}: bundle missing sections {', '.join(missing)}")
    unknown = [t for t in sections if t not in
               (b"RIG0", b"TEXA", b"HAIR", b"TRIP", b"PARM", b"LITE")]
    if unknown:
        raise AssetError(f"{path}: unknown bundle section {unknown[0].decode('ascii', 'replace')}")

    bundle = AvatarBundle(
        rig=read_rig_stream(io.BytesIO(sections[b"RIG0"])),
        textures=_parse_texture_section(sections[b"TEXA"]),
        decoder=read_decoder_stream(io.BytesIO(sections[b"HAIR"])),
        triplane=read_triplane_stream(io.BytesIO(sections[b"TRIP"])),
        params=_parse_params_section(sections[b"PARM"]),
        lighting=ShLighting(
            np.frombuffer(sections[b"LITE"], dtype="<f4", count=27)
            .astype(np.float64)
            .reshape(3, 9)
        ),
        version=version,
    )
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Scene files


@dataclass
class SceneTrack:
    """Per-frame camera, pose, and lighting tracks with a shared resolution."""

    cameras: list[Camera]
    params: list[HeadParams]
    lighting: list[ShLighting]
    resolution: int

    def __len__(self) -> int:
        return len(self.cameras)


def parse_camera(spec: object, size: int, where: str) -> Camera:
    if not isinstance(spec, dict):
        raise AssetError(f"{where}: camera must be an object")
    size = int(spec.get("size", size))

    if "orbit" in spec:
        o = spec["orbit"]
        if not isinstance(o, dict) or "distance" not in o:
            raise AssetError(f"{where}: orbit camera needs 'distance'")
        return orbit_camera(
            target=np.asarray(o.get("target", (0.0, 0.0, 0.0)), dtype=np.float64),
            distance=float(o["distance"]),
            yaw=np.deg2rad(float(o.get("yaw", 0.0))),
            pitch=np.deg2rad(float(o.get("pitch", 0.0))),
            size=size,
            fx=float(o["fx"]) if "fx" in o else None,
        )
    if "look_at" in spec:
        l = spec["look_at"]
        if not isinstance(l, dict) or "eye" not in l or "target" not in l:
            raise AssetError(f"{where}: look_at camera needs 'eye' and 'target'")
        return look_at(
            eye=np.asarray(l["eye"], dtype=np.float64),
            target=np.asarray(l["target"], dtype=np.float64),
            size=size,
            fx=float(l["fx"]) if "fx" in l else None,
            up=np.asarray(l.get("up", (0.0, 1.0, 0.0)), dtype=np.float64),
        )

    for key in ("fx", "fy", "cx", "cy", "rotation", "translation"):
        if key not in spec:
            raise AssetError(f"{where}: camera field '{key}' required")
    rotation = np.asarray(spec["rotation"], dtype=np.float64)
    if rotation.size != 9:
        raise AssetError(f"{where}: camera rotation must have 9 values")
    translation = np.asarray(spec["translation"], dtype=np.float64)
    if translation.size != 3:
        raise AssetError(f"{where}: camera translation must have 3 values")
    cam = Camera(
        fx=float(spec["fx"]), fy=float(spec["fy"]),
        cx=float(spec["cx"]), cy=float(spec["cy"]),
        rotation=rotation.reshape(3, 3), translation=translation, size=size,
    )
    try:
        cam.validate()
    except ValidationError as exc:
        raise AssetError(f"{where}: {exc}") from None
    return cam


_PARAM_KEYS = ("identity", "expression", "jaw", "eyes")


def parse_params(spec: object, base: HeadParams, where: str) -> HeadParams:
    if spec is None:
        return base.copy()
    if not isinstance(spec, dict):
        raise AssetError(f"{where}: params must be an object")
    for key in spec:
        if key not in _PARAM_KEYS:
            raise AssetError(f"{where}: unknown params field '{key}'")
    try:
        out = HeadParams(
            identity=np.asarray(spec.get("identity", base.identity), dtype=np.float64),
            expression=np.asarray(spec.get("expression", base.expression), dtype=np.float64),
            jaw=float(spec.get("jaw", base.jaw)),
            eyes=np.asarray(spec.get("eyes", base.eyes), dtype=np.float64).reshape(2, 2),
        )
    except (TypeError, ValueError) as exc:
        raise AssetError(f"{where}: bad params ({exc})") from None
    # a zero-size base means the caller has no rig to check against; otherwise
    # a wrong-length vector would sail through and blow up at pose time
    for name in ("identity", "expression"):
        got, want = getattr(out, name), getattr(base, name)
        if name in spec and want.size and got.shape != want.shape:
            raise AssetError(
                f"{where}: {name} must have {want.size} coefficients, got {got.size}"
            )
    return out


def parse_lighting(values: object, where: str = "lighting") -> ShLighting:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != 27:
        raise AssetError(f"{where}: lighting must have 27 values, got {arr.size}")
    return ShLighting(arr.reshape(3, 9))


def load_scene(
    path: str,
    default_params: HeadParams | None = None,
    default_lighting: ShLighting | None = None,
    size: int = 512,
) -> SceneTrack:
    """Parse a JSON scene into per-frame tracks.

    Each frame must carry a camera (explicit intrinsics+extrinsics, an
    ``orbit`` spec, or a ``look_at`` spec; orbit angles in degrees); params
    and lighting fall back per-field to the supplied defaults.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AssetError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise AssetError(f"{path}: scene must be an object with a 'frames' list")
    frames = doc["frames"]
    if not frames:
        raise AssetError(f"{path}: scene has no frames")
    resolution = int(doc.get("resolution", size))
    if resolution <= 0:
        raise AssetError(f"{path}: resolution must be positive")

    base_params = default_params if default_params is not None else HeadParams(
        identity=np.zeros(0), expression=np.zeros(0)
    )
    base_lighting = default_lighting if default_lighting is not None else ShLighting.ambient()

    track = SceneTrack(cameras=[], params=[], lighting=[], resolution=resolution)
    for i, frame in enumerate(frames):
        where = f"frame {i}"
        if not isinstance(frame, dict):
            raise AssetError(f"{where}: frame must be an object")
        if "camera" not in frame:
            raise AssetError(f"{where}: camera required")
        track.cameras.append(parse_camera(frame["camera"], resolution, where))
        track.params.append(parse_params(frame.get("params"), base_params, where))
        if frame.get("lighting") is None:
            track.lighting.append(base_lighting.copy())
        else:
            track.lighting.append(parse_lighting(frame["lighting"], where))

    first = track.params[0]
    for i, p in enumerate(track.params[1:], start=1):
        if p.identity.shape != first.identity.shape:
            raise AssetError(
                f"frame {i}: identity has {p.identity.shape[0]} coefficients, "
                f"frame 0 has {first.identity.shape[0]}"
            )
        if p.expression.shape != first.expression.shape:
            raise AssetError(
                f"frame {i}: expression has {p.expression.shape[0]} coefficients, "
                f"frame 0 has {first.expression.shape[0]}"
            )
    return track


# ---------------------------------------------------------------------------
# Lighting and config sidecars


def load_lighting(path: str) -> ShLighting:
    """Read 27 SH coefficients from a JSON or whitespace-separated text file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AssetError(f"{path}: not valid JSON ({exc})") from None
        values = doc.get("coeffs") if isinstance(doc, dict) else doc
        arr = np.asarray(values, dtype=np.float64)
    else:
        tokens = []
        for line in text.splitlines():
            tokens.extend(line.split("#", 1)[0].split())
        try:
            arr = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise AssetError(f"{path}: bad lighting value ({exc})") from None
    if arr.size != 27:
        raise AssetError(f"{path}: lighting file must hold 27 values, got {arr.size}")
    return ShLighting(arr.reshape(3, 9))


def load_config(path: str) -> tuple[RasterConfig, OcclusionConfig]:
    """Read rasterizer and occlusion tunables from a TOML file.

    Recognized sections are ``[raster]`` and ``[occlusion]``; omitted keys
    keep their defaults, unknown keys are errors.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise AssetError(f"{path}: not valid TOML ({exc})") from None

    known = {"raster", "occlusion"}
    for section in doc:
        if section not in known:
            raise AssetError(f"{path}: unknown config section '{section}'")

    def build(cls, table: dict, label: str):
        allowed = {f.name for f in dataclass_fields(cls)}
        for key in table:
            if key not in allowed:
                raise AssetError(f"{path}: unknown {label} option '{key}'")
        try:
            return cls(**table)
        except (TypeError, ValidationError) as exc:
            raise AssetError(f"{path}: bad {label} config ({exc})") from None

    return (
        build(RasterConfig, doc.get("raster", {}), "raster"),
        build(OcclusionConfig, doc.get("occlusion", {}), "occlusion"),
    )


# ---------------------------------------------------------------------------
# Desk-scale default bundle


def make_desk_bundle(
    seed: int = 0, t_tex: int = 256, n_hair: int = 1024, t_tri: int = 64
) -> AvatarBundle:
    """Fully populated bundle around the procedural desk rig; deterministic
    in *seed* so checksum tests stay stable."""
    from .deskrig import (
        N_EXPRESSION, N_IDENTITY, default_albedo, default_hair_bias, make_desk_rig,
    )
    from .gaussgen import random_hair_decoder, random_triplane

    coeffs = np.zeros((3, 9))
    coeffs[:, 0] = 1.0
    coeffs[:, 2] = 0.25  # brighter toward +z, the face direction
    return AvatarBundle(
        rig=make_desk_rig(),
        textures=TextureSet(
            albedo=default_albedo(t_tex),
            bump=np.zeros((t_tex, t_tex)),
            disk_scale_xy=np.array([0.0025, 0.0025]),
        ),
        decoder=random_hair_decoder(
            seed + 23, N_IDENTITY + N_EXPRESSION, default_hair_bias(n_hair)
        ),
        triplane=random_triplane(seed + 29, t_tri=t_tri),
        params=HeadParams(identity=np.zeros(N_IDENTITY), expression=np.zeros(N_EXPRESSION)),
        lighting=ShLighting(coeffs),
    )
