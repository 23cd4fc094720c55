"""Face/hair Gaussian generation, tri-plane sampling, and attribute caching."""

import numpy as np
import pytest

from gausshead.deskrig import default_albedo, default_hair_bias
from gausshead.gaussgen import (
    GROUP_EYE,
    GROUP_FACE,
    GROUP_HAIR,
    AttributeCache,
    GaussianCloud,
    TriPlane,
    animate_cached,
    cache_attributes,
    decode_hair_attrs,
    default_epsilon,
    empty_cloud,
    face_grid,
    gen_face_gaussians,
    gen_hair_gaussians,
    gen_hair_positions,
    hair_conditioning,
    hair_count,
    merge_clouds,
    quat_from_normal,
    random_hair_decoder,
    random_triplane,
    sample_triplane,
)
from gausshead.headmodel import pose_mesh
from gausshead.mathutil import normalize, quat_to_matrix
from gausshead.uvmaps import TextureSet, UvGeometry, apply_bump, fine_normals, rasterize_uv


def build_face_cloud(rig, params, t_tex=128, albedo=None, bump=None, alpha_head=0.5):
    tex = TextureSet(
        albedo=albedo if albedo is not None else default_albedo(t_tex),
        bump=bump if bump is not None else np.zeros((t_tex, t_tex)),
        disk_scale_xy=np.array([0.002, 0.002]),
    )
    mesh = pose_mesh(rig, params)
    geom = fine_normals(apply_bump(rasterize_uv(mesh, rig, t_tex), tex.bump))
    return gen_face_gaussians(geom, tex, rig, alpha_head=alpha_head), tex, geom


def desk_decoder(n_hair=256, cond_dim=16, seed=19):
    return random_hair_decoder(seed, cond_dim, default_hair_bias(n_hair))


# --- quat_from_normal ---------------------------------------------------------


def test_quat_identity_for_plus_z():
    np.testing.assert_allclose(quat_from_normal(np.array([0.0, 0.0, 1.0])), [1, 0, 0, 0])


def test_quat_tie_break_for_minus_z():
    np.testing.assert_allclose(quat_from_normal(np.array([0.0, 0.0, -1.0])), [0, 1, 0, 0])


def test_quat_third_column_equals_normal(rng):
    n = normalize(rng.normal(size=(1000, 3)))
    q = quat_from_normal(n)
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
    third = quat_to_matrix(q)[:, :, 2]
    np.testing.assert_allclose(third, n, atol=1e-6)


def test_quat_rejects_zero_vector():
    with pytest.raises(ValueError, match="zero normal"):
        quat_from_normal(np.zeros(3))


def test_quat_normalizes_non_unit_input():
    q = quat_from_normal(np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(q, [1, 0, 0, 0])


# --- gen_face_gaussians ---------------------------------------------------------


def fully_valid_geom(t=16):
    pos = np.zeros((t, t, 3))
    pos[..., 2] = 1.0
    nrm = np.zeros((t, t, 3))
    nrm[..., 2] = 1.0
    geom = UvGeometry(coarse_pos=pos, coarse_normal=nrm, valid=np.ones((t, t), bool))
    return fine_normals(apply_bump(geom, np.zeros((t, t))))


def test_face_count_on_fully_valid_atlas():
    geom = fully_valid_geom()
    tex = TextureSet(np.full((512, 512, 3), 0.5), np.zeros((512, 512)), np.array([1e-3, 1e-3]))

    class StubRig:
        eye_uv_mask = np.zeros((8, 8), dtype=bool)

        def bounding_radius(self):
            return 0.1

    cloud = gen_face_gaussians(geom, tex, StubRig(), alpha_head=0.5)
    assert len(cloud) == 65536
    np.testing.assert_allclose(cloud.color, 0.5)
    assert np.all(cloud.opacity == 1.0)
    assert np.all(cloud.group == GROUP_FACE)


def test_face_count_never_exceeds_grid(desk_rig):
    cloud, tex, geom = build_face_cloud(desk_rig, desk_rig.neutral_params())
    m = int(round(0.5 * 128))
    assert 0 < len(cloud) <= m * m
    u, v = face_grid(0.5, 128)
    from gausshead.uvmaps import sample_map

    assert len(cloud) == int(sample_map(geom.valid, u, v).sum())


def test_face_points_satisfy_invariants(desk_rig):
    cloud, tex, _ = build_face_cloud(desk_rig, desk_rig.neutral_params())
    cloud.validate()
    third = quat_to_matrix(cloud.quat)[:, :, 2]
    np.testing.assert_allclose(third, cloud.normal, atol=1e-5)
    np.testing.assert_allclose(cloud.scale[:, 0], tex.disk_scale_xy[0])
    np.testing.assert_allclose(cloud.scale[:, 2], default_epsilon(desk_rig))
    assert np.any(cloud.group == GROUP_EYE)  # the rig's eye mask tags some points


def test_expression_changes_positions_not_appearance(desk_rig):
    p1 = desk_rig.neutral_params()
    p2 = desk_rig.neutral_params()
    p2.expression = p2.expression.copy()
    p2.expression[0] = 0.8
    c1, _, _ = build_face_cloud(desk_rig, p1)
    c2, _, _ = build_face_cloud(desk_rig, p2)
    assert len(c1) == len(c2)
    np.testing.assert_array_equal(c1.color, c2.color)
    np.testing.assert_array_equal(c1.uv, c2.uv)
    assert np.abs(c1.mu - c2.mu).max() > 1e-6
    assert np.abs(c1.quat - c2.quat).max() > 0  # q follows the re-derived normal


def test_albedo_edit_locality(desk_rig):
    base, tex, geom = build_face_cloud(desk_rig, desk_rig.neutral_params())
    edited_albedo = tex.albedo.copy()
    ti, tj = 64, 70
    edited_albedo[ti, tj] = (0.0, 1.0, 0.0)
    edited = gen_face_gaussians(
        geom,
        TextureSet(edited_albedo, tex.bump, tex.disk_scale_xy),
        desk_rig,
        alpha_head=0.5,
    )
    np.testing.assert_array_equal(base.mu, edited.mu)  # positions bit-identical
    changed = np.any(base.color != edited.color, axis=1)
    from gausshead.uvmaps import bilinear_setup

    idx, w = bilinear_setup(128, base.uv[:, 0], base.uv[:, 1])
    covers = np.any((idx == ti * 128 + tj) & (w > 0), axis=1)
    assert np.all(changed <= covers)
    assert changed.any()


def test_empty_validity_gives_empty_cloud():
    t = 8
    geom = UvGeometry(
        coarse_pos=np.zeros((t, t, 3)),
        coarse_normal=np.zeros((t, t, 3)),
        valid=np.zeros((t, t), bool),
    )
    geom = fine_normals(apply_bump(geom, np.zeros((t, t))))
    tex = TextureSet(np.full((t, t, 3), 0.5), np.zeros((t, t)), np.array([1e-3, 1e-3]))

    class StubRig:
        eye_uv_mask = np.zeros((8, 8), dtype=bool)

        def bounding_radius(self):
            return 0.1

    assert len(gen_face_gaussians(geom, tex, StubRig())) == 0


# --- hair ----------------------------------------------------------------------


def test_zero_weights_return_bias_exactly():
    dec = desk_decoder()
    dec.w_pos = np.zeros_like(dec.w_pos)
    mu = gen_hair_positions(dec, np.zeros(16))
    np.testing.assert_array_equal(mu, dec.bias)


def test_hair_positions_bounded_by_output_scale(rng):
    dec = desk_decoder()
    for _ in range(20):
        cond = rng.normal(scale=3.0, size=16)
        mu = gen_hair_positions(dec, cond)
        assert np.all(np.abs(mu - dec.bias) <= dec.output_scale + 1e-12)


def test_hair_count_formula():
    assert hair_count(0.5, 256) == 16384
    assert hair_count(0.5, 64) == 1024


def test_hair_conditioning_dimension_mismatch(desk_rig):
    dec = desk_decoder()
    with pytest.raises(ValueError, match="conditioning"):
        gen_hair_positions(dec, np.zeros(7))


def test_hair_cloud_satisfies_invariants():
    dec = desk_decoder()
    tp = random_triplane(5, t_tri=32)
    cloud = gen_hair_gaussians(dec, tp, np.zeros(16))
    cloud.validate()
    assert np.all(cloud.group == GROUP_HAIR)
    assert np.array_equal(cloud.hair_index, np.arange(len(cloud)))


# --- tri-plane -------------------------------------------------------------------


def test_triplane_constant_planes_sum():
    f = np.arange(4.0)
    tp = TriPlane(planes=np.tile(f, (3, 8, 8, 1)), cube_side=0.4)
    out = sample_triplane(tp, np.array([[0.01, -0.05, 0.1]]))
    np.testing.assert_allclose(out[0], 3 * f, atol=1e-12)


def test_triplane_center_texel_oracle():
    t = 5  # odd so the cube center hits texel (2, 2) exactly
    planes = np.zeros((3, t, t, 2))
    planes[0, 2, 2] = (1.0, 10.0)
    planes[1, 2, 2] = (2.0, 20.0)
    planes[2, 2, 2] = (4.0, 40.0)
    tp = TriPlane(planes=planes, cube_side=0.4)
    out = sample_triplane(tp, np.zeros((1, 3)))
    np.testing.assert_allclose(out[0], [7.0, 70.0], atol=1e-12)


def test_triplane_out_of_cube_clamps():
    tp = random_triplane(3, t_tri=16, feature_dim=4)
    far = sample_triplane(tp, np.array([[10.0, 0.0, 0.0]]))
    edge = sample_triplane(tp, np.array([[tp.cube_side / 2, 0.0, 0.0]]))
    np.testing.assert_allclose(far, edge, atol=1e-12)


# --- decode_hair_attrs -----------------------------------------------------------


def test_decode_zero_network_midpoints():
    dec = desk_decoder()
    for name in ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "mlp_w3", "mlp_b3"):
        setattr(dec, name, np.zeros_like(getattr(dec, name)))
    c, n, s, q, o = decode_hair_attrs(np.zeros((1, 32)), dec)
    np.testing.assert_allclose(c[0], [0.5, 0.5, 0.5])
    np.testing.assert_allclose(o[0], 0.5)
    np.testing.assert_allclose(q[0], [1, 0, 0, 0])
    np.testing.assert_allclose(n[0], [0, 0, 1])
    np.testing.assert_allclose(s[0], dec.max_scale * np.log(2.0))


def test_decode_outputs_satisfy_invariants(rng):
    dec = desk_decoder()
    c, n, s, q, o = decode_hair_attrs(rng.normal(scale=2.0, size=(200, 32)), dec)
    assert np.all((c >= 0) & (c <= 1))
    assert np.all((o >= 0) & (o <= 1))
    assert np.all(s > 0)
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9)


def test_decode_matches_straight_line_reimplementation():
    dec = random_hair_decoder(42, 16, default_hair_bias(64))
    rng = np.random.default_rng(42)
    feat = rng.normal(size=(5, 32))
    c, n, s, q, o = decode_hair_attrs(feat, dec)

    for row in range(5):
        x = feat[row]
        h1 = np.maximum(dec.mlp_w1.T @ x + dec.mlp_b1, 0.0)
        h2 = np.maximum(dec.mlp_w2.T @ h1 + dec.mlp_b2, 0.0)
        raw = dec.mlp_w3.T @ h2 + dec.mlp_b3
        np.testing.assert_allclose(c[row], 1 / (1 + np.exp(-raw[0:3])), atol=1e-12)
        nn = raw[3:6] + [0, 0, 1]
        np.testing.assert_allclose(n[row], nn / np.linalg.norm(nn), atol=1e-12)
        np.testing.assert_allclose(
            s[row], dec.max_scale * np.log1p(np.exp(raw[6:9])), atol=1e-9
        )
        qq = raw[9:13] + [1, 0, 0, 0]
        np.testing.assert_allclose(q[row], qq / np.linalg.norm(qq), atol=1e-12)
        np.testing.assert_allclose(o[row], 1 / (1 + np.exp(-raw[13])), atol=1e-12)


# --- merge / cache ---------------------------------------------------------------


def test_merge_with_empty_is_identity(desk_rig):
    cloud, _, _ = build_face_cloud(desk_rig, desk_rig.neutral_params(), t_tex=64)
    merged = merge_clouds(cloud, empty_cloud())
    np.testing.assert_array_equal(merged.mu, cloud.mu)
    np.testing.assert_array_equal(merged.group, cloud.group)


def test_merge_lengths_add_and_blocks_ordered(desk_rig):
    face, _, _ = build_face_cloud(desk_rig, desk_rig.neutral_params(), t_tex=64)
    hair = gen_hair_gaussians(desk_decoder(), random_triplane(5, 32), np.zeros(16))
    merged = merge_clouds(face, hair)
    assert len(merged) == len(face) + len(hair)
    assert np.all(merged.group[len(face) :] == GROUP_HAIR)
    np.testing.assert_array_equal(merged.mu[: len(face)], face.mu)


def test_hair_swap_keeps_face_block(desk_rig):
    face, _, _ = build_face_cloud(desk_rig, desk_rig.neutral_params(), t_tex=64)
    hair_b = gen_hair_gaussians(desk_decoder(seed=99), random_triplane(9, 32), np.zeros(16))
    merged = merge_clouds(face, hair_b)
    np.testing.assert_array_equal(merged.color[: len(face)], face.color)
    assert np.all(merged.group[len(face) :] == GROUP_HAIR)


def test_cache_roundtrip_same_params(desk_rig):
    params = desk_rig.neutral_params()
    face, tex, _ = build_face_cloud(desk_rig, params)
    hair = gen_hair_gaussians(desk_decoder(), random_triplane(5, 32), hair_conditioning(params))
    cloud = merge_clouds(face, hair)
    cache = cache_attributes(cloud, desk_rig, t_tex=128)
    assert len(cache) == len(cloud)

    replay = animate_cached(cache, desk_rig, params, tex.bump, desk_decoder())
    np.testing.assert_allclose(replay.mu, cloud.mu, atol=1e-6)
    np.testing.assert_array_equal(replay.color, cloud.color)
    np.testing.assert_array_equal(replay.opacity, cloud.opacity)


def test_cache_expression_change_moves_only_positions(desk_rig):
    params = desk_rig.neutral_params()
    face, tex, _ = build_face_cloud(desk_rig, params)
    cache = cache_attributes(face, desk_rig, t_tex=128)

    p2 = params.copy()
    p2.expression[2] = 1.0
    moved = animate_cached(cache, desk_rig, p2, tex.bump, None)
    np.testing.assert_array_equal(moved.color, face.color)
    np.testing.assert_array_equal(moved.scale, face.scale)
    np.testing.assert_array_equal(moved.opacity, face.opacity)
    np.testing.assert_array_equal(moved.group, face.group)
    assert np.abs(moved.mu - face.mu).max() > 1e-7
    assert np.abs(moved.normal - face.normal).max() > 0


def test_cache_jaw_moves_only_jaw_region_points(desk_rig):
    params = desk_rig.neutral_params()
    face, tex, geom0 = build_face_cloud(desk_rig, params)
    cache = cache_attributes(face, desk_rig, t_tex=128)

    p2 = params.copy()
    p2.jaw = 0.3
    moved_cloud = animate_cached(cache, desk_rig, p2, tex.bump, None)

    mesh2 = pose_mesh(desk_rig, p2)
    geom2 = fine_normals(apply_bump(rasterize_uv(mesh2, desk_rig, 128), tex.bump))
    changed_texels = np.any(geom2.fine_pos != geom0.fine_pos, axis=-1).ravel()

    from gausshead.uvmaps import bilinear_setup

    idx, w = bilinear_setup(128, face.uv[:, 0], face.uv[:, 1])
    touches = np.any(changed_texels[idx] & (w > 0), axis=1)
    point_moved = np.any(moved_cloud.mu != face.mu, axis=1)
    assert np.all(point_moved <= touches)
    assert point_moved.any()


def test_cache_colors_constant_across_animation(desk_rig, rng):
    params = desk_rig.neutral_params()
    face, tex, _ = build_face_cloud(desk_rig, params, t_tex=64)
    cache = cache_attributes(face, desk_rig, t_tex=64)
    for _ in range(10):
        p = params.copy()
        p.expression = rng.normal(scale=0.5, size=8)
        frame = animate_cached(cache, desk_rig, p, tex.bump, None)
        np.testing.assert_array_equal(frame.color, face.color)


def test_cache_topology_mismatch_rejected(desk_rig):
    face, tex, _ = build_face_cloud(desk_rig, desk_rig.neutral_params(), t_tex=64)
    cache = cache_attributes(face, desk_rig, t_tex=64)
    import dataclasses

    bad = dataclasses.replace(cache, rig_vertices=cache.rig_vertices + 1)
    with pytest.raises(ValueError, match="vertices"):
        animate_cached(bad, desk_rig, desk_rig.neutral_params(), tex.bump, None)
