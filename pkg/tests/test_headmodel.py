"""Blendshape posing, joint rotations, and the rig binary container."""

import numpy as np
import pytest

from gausshead.errors import AssetError, ValidationError
from gausshead.headmodel import (
    CoarseMesh,
    HeadParams,
    compute_vertex_normals,
    load_rig,
    pose_mesh,
    save_rig,
)
from gausshead.mathutil import rodrigues


def params(rig, **kw):
    p = rig.neutral_params()
    for key, val in kw.items():
        setattr(p, key, np.asarray(val, dtype=np.float64) if key != "jaw" else val)
    return p


def test_zero_params_reproduce_template(desk_rig):
    mesh = pose_mesh(desk_rig, desk_rig.neutral_params())
    np.testing.assert_array_equal(mesh.vertices, desk_rig.template)


def test_unit_expression_adds_one_basis_column(desk_rig):
    e1 = np.zeros(desk_rig.n_expression)
    e1[1] = 1.0
    mesh = pose_mesh(desk_rig, params(desk_rig, expression=e1))
    np.testing.assert_allclose(
        mesh.vertices, desk_rig.template + desk_rig.expression_basis[:, :, 1], atol=1e-12
    )


def test_zero_pose_is_pure_blendshape_sum(desk_rig, rng):
    beta = rng.normal(size=desk_rig.n_identity)
    p = params(desk_rig, identity=beta)
    p.jaw = 0.0
    mesh = pose_mesh(desk_rig, p)
    expected = desk_rig.template + desk_rig.identity_basis @ beta
    np.testing.assert_allclose(mesh.vertices, expected, atol=1e-12)


def test_blendshape_linearity_at_zero_pose(desk_rig, rng):
    b1 = rng.normal(size=desk_rig.n_identity)
    b2 = rng.normal(size=desk_rig.n_identity)
    d = lambda b: pose_mesh(desk_rig, params(desk_rig, identity=b)).vertices - desk_rig.template
    np.testing.assert_allclose(d(b1 + b2), d(b1) + d(b2), atol=1e-6)


def test_jaw_rotation_inverts(desk_rig):
    theta = 0.35
    blend = pose_mesh(desk_rig, desk_rig.neutral_params())
    opened = pose_mesh(desk_rig, params(desk_rig, jaw=theta))
    undo = rodrigues(desk_rig.jaw_axis, -theta)
    sel = desk_rig.jaw_vertices
    restored = opened.vertices.copy()
    restored[sel] = (restored[sel] - desk_rig.jaw_pivot) @ undo.T + desk_rig.jaw_pivot
    np.testing.assert_allclose(restored, blend.vertices, atol=1e-6)


def test_jaw_moves_only_its_vertex_set(desk_rig):
    base = pose_mesh(desk_rig, desk_rig.neutral_params())
    opened = pose_mesh(desk_rig, params(desk_rig, jaw=0.4))
    moved = np.nonzero(np.abs(opened.vertices - base.vertices).max(axis=1) > 1e-12)[0]
    assert set(moved) <= set(desk_rig.jaw_vertices.tolist())
    assert moved.size > 0


def test_eye_rotation_moves_only_eye_sets(desk_rig):
    base = pose_mesh(desk_rig, desk_rig.neutral_params())
    p = params(desk_rig, eyes=[[0.25, -0.1], [0.0, 0.0]])
    turned = pose_mesh(desk_rig, p)
    moved = np.nonzero(np.abs(turned.vertices - base.vertices).max(axis=1) > 1e-12)[0]
    assert set(moved) == set(desk_rig.eye_vertices[0].tolist())


def test_normals_unit_and_flip_with_winding(desk_rig, rng):
    p = params(desk_rig, identity=rng.normal(size=desk_rig.n_identity))
    mesh = pose_mesh(desk_rig, p)
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-6)

    flipped = compute_vertex_normals(mesh.vertices, mesh.faces[:, ::-1])
    used = np.unique(mesh.faces)  # vertices untouched by any face keep the fallback
    np.testing.assert_allclose(flipped[used], -mesh.normals[used], atol=1e-12)


def test_dimension_mismatch_rejected(desk_rig):
    p = desk_rig.neutral_params()
    p.identity = np.zeros(desk_rig.n_identity + 1)
    with pytest.raises(ValueError, match="identity"):
        pose_mesh(desk_rig, p)


def test_rig_roundtrip(desk_rig, tmp_path):
    path = tmp_path / "head.egrig"
    save_rig(str(path), desk_rig)
    loaded = load_rig(str(path))

    assert loaded.n_vertices == 2562
    assert loaded.n_identity == 8 and loaded.n_expression == 8
    np.testing.assert_allclose(loaded.template, desk_rig.template, atol=1e-6)
    np.testing.assert_array_equal(loaded.faces, desk_rig.faces)
    np.testing.assert_array_equal(loaded.jaw_vertices, desk_rig.jaw_vertices)
    np.testing.assert_array_equal(loaded.eye_uv_mask, desk_rig.eye_uv_mask)

    # second save of the loaded rig is byte-identical (stable container)
    path2 = tmp_path / "head2.egrig"
    save_rig(str(path2), loaded)
    save_rig(str(path), loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_truncated_vertex_block(desk_rig, tmp_path):
    path = tmp_path / "head.egrig"
    save_rig(str(path), desk_rig)
    raw = path.read_bytes()
    path.write_bytes(raw[: 6 + 20 + 100])  # magic + header + partial vertex block
    with pytest.raises(AssetError, match="corrupt rig: vertex block short"):
        load_rig(str(path))


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.egrig"
    path.write_bytes(b"NOTRIG" + b"\0" * 64)
    with pytest.raises(AssetError, match="magic"):
        load_rig(str(path))


def test_out_of_range_uv_rejected(desk_rig):
    bad = HeadParams(np.zeros(8), np.zeros(8))  # touch the type for coverage
    assert bad.jaw == 0.0
    rig = make_bad_uv_rig(desk_rig)
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        rig.validate()


def make_bad_uv_rig(rig):
    import dataclasses

    bad_uv = rig.uv.copy()
    bad_uv[0, 0] = 1.2
    return dataclasses.replace(rig, uv=bad_uv)


def test_mesh_type_holds_shared_faces(desk_rig):
    mesh = pose_mesh(desk_rig, desk_rig.neutral_params())
    assert isinstance(mesh, CoarseMesh)
    assert mesh.vertices.shape[0] == desk_rig.n_vertices
    np.testing.assert_array_equal(mesh.faces, desk_rig.faces)
