import numpy as np
import pytest

from gausshead import assets, engine
from gausshead.errors import ValidationError
from gausshead.gaussgen import GROUP_HAIR
from gausshead.splatter import DEFAULT_CONFIG, orbit_camera, project_cloud


@pytest.fixture(scope="module")
def bundle_a():
    return assets.make_desk_bundle(t_tex=64, n_hair=48, t_tri=8)


@pytest.fixture(scope="module")
def bundle_b():
    # same rig and geometry as bundle_a; different hair generator and albedo
    b = assets.make_desk_bundle(seed=5, t_tex=64, n_hair=48, t_tri=8)
    b.textures.albedo = np.clip(b.textures.albedo * 0.7 + 0.1, 0.0, 1.0)
    return b


def make_camera(rig, size=64, yaw=0.0):
    return orbit_camera(rig.template.mean(axis=0), 0.62, yaw=yaw, size=size, fx=1.4 * size)


def make_track(bundle, n, size=64, expression_amp=0.0):
    cams, params, lights = [], [], []
    for k in range(n):
        cams.append(make_camera(bundle.rig, size=size, yaw=0.05 * k))
        p = bundle.params.copy()
        if expression_amp:
            p.expression[k % p.expression.size] = expression_amp
            p.jaw = 0.02 * k
        params.append(p)
        lights.append(bundle.lighting.copy())
    return assets.SceneTrack(cameras=cams, params=params, lighting=lights, resolution=size)


def test_render_deterministic_and_encodable(bundle_a):
    avatar = engine.Avatar(bundle_a)
    cam = make_camera(bundle_a.rig)
    f1 = avatar.render(camera=cam)
    f2 = avatar.render(camera=cam)
    assert np.array_equal(f1.image, f2.image)
    assert f1.image.shape == (64, 64, 3)
    assert 0.0 <= f1.image.min() and f1.image.max() <= 1.0
    assert assets.encode_png(f1.image) == assets.encode_png(f2.image)
    # the head actually covers pixels
    assert f1.buffers.alpha.max() > 0.9


def test_static_track_same_frames_with_and_without_cache(bundle_a):
    track = make_track(bundle_a, 3)
    cached = engine.render_track(engine.Avatar(bundle_a), track, use_cache=True)
    direct = engine.render_track(engine.Avatar(bundle_a), track, use_cache=False)
    for fc, fd in zip(cached, direct):
        assert np.array_equal(fc.image, fd.image)
        assert np.array_equal(fc.cloud.mu, fd.cloud.mu)
        assert np.array_equal(fc.cloud.color, fd.cloud.color)


def test_expression_track_cached_colors_frozen(bundle_a):
    track = make_track(bundle_a, 5, expression_amp=0.6)
    frames = engine.render_track(engine.Avatar(bundle_a), track, use_cache=True)
    base = frames[0].cloud
    moved = False
    for frame in frames[1:]:
        assert np.array_equal(frame.cloud.color, base.color)
        assert np.array_equal(frame.cloud.scale, base.scale)
        assert np.array_equal(frame.cloud.opacity, base.opacity)
        moved |= not np.array_equal(frame.cloud.mu, base.mu)
    assert moved  # the expressions really deformed the head


def test_param_changes_keep_cache_texture_edits_drop_it(bundle_a):
    avatar = engine.Avatar(bundle_a)
    cam = make_camera(bundle_a.rig)
    avatar.render(camera=cam)
    assert avatar.cache_ready
    cache_obj = avatar._cache

    p = bundle_a.params.copy()
    p.jaw = 0.1
    avatar.render(params=p, camera=cam)
    assert avatar._cache is cache_obj  # parameter mutations reuse the cache

    engine.apply_texture_edit(
        avatar.bundle.textures, np.full((8, 8, 3), 0.5), (0.25, 0.25, 0.375, 0.375)
    )
    avatar.invalidate_cache()
    assert not avatar.cache_ready


def test_render_track_parallel_matches_serial(bundle_a):
    track = make_track(bundle_a, 4, expression_amp=0.4)
    serial = engine.render_track(engine.Avatar(bundle_a), track, jobs=1)
    parallel = engine.render_track(engine.Avatar(bundle_a), track, jobs=3)
    for fs, fp in zip(serial, parallel):
        assert np.array_equal(fs.image, fp.image)


def test_texel_rect_mapping():
    assert engine.texel_rect((0.0, 0.0, 1.0, 1.0), 64) == (0, 64, 0, 64)
    # an 8-texel brush at (0.25, 0.5) on a 64-map
    rect = (0.25, 0.5, 0.25 + 8 / 64, 0.5 + 8 / 64)
    assert engine.texel_rect(rect, 64) == (32, 40, 16, 24)
    with pytest.raises(ValidationError, match="unit square"):
        engine.texel_rect((-0.1, 0.0, 0.5, 0.5), 64)
    with pytest.raises(ValidationError, match="unit square"):
        engine.texel_rect((0.2, 0.2, 1.2, 0.4), 64)
    with pytest.raises(ValidationError, match="unit square"):
        engine.texel_rect((0.5, 0.5, 0.5, 0.6), 64)
    with pytest.raises(ValidationError, match="spans no texels"):
        engine.texel_rect((0.5, 0.5, 0.5001, 0.5001), 64)


def test_apply_texture_edit_shapes(bundle_a):
    tex = bundle_a.textures.copy()
    patch = np.zeros((8, 8, 3))
    engine.apply_texture_edit(tex, patch, (0.25, 0.5, 0.375, 0.625))
    assert np.all(tex.albedo[32:40, 16:24] == 0.0)
    # grayscale broadcasts across channels
    engine.apply_texture_edit(tex, np.ones((8, 8)), (0.25, 0.5, 0.375, 0.625))
    assert np.all(tex.albedo[32:40, 16:24] == 1.0)
    with pytest.raises(ValidationError, match="spans"):
        engine.apply_texture_edit(tex, np.zeros((4, 4, 3)), (0.25, 0.5, 0.375, 0.625))
    # values clamp into the albedo domain
    engine.apply_texture_edit(tex, np.full((8, 8, 3), 7.0), (0.25, 0.5, 0.375, 0.625))
    assert tex.albedo.max() <= 1.0


def test_edit_locality(bundle_a):
    """An albedo paste only changes pixels under the affected splats."""
    cam = make_camera(bundle_a.rig, size=96)
    base = engine.Avatar(bundle_a).render(camera=cam)

    t = bundle_a.textures.resolution
    rect = (0.45, 0.42, 0.45 + 8 / t, 0.42 + 8 / t)
    edited_bundle = assets.AvatarBundle(
        rig=bundle_a.rig,
        textures=bundle_a.textures.copy(),
        decoder=bundle_a.decoder,
        triplane=bundle_a.triplane,
        params=bundle_a.params,
        lighting=bundle_a.lighting,
    )
    engine.apply_texture_edit(edited_bundle.textures, np.zeros((8, 8, 3)), rect)
    edited = engine.Avatar(edited_bundle).render(camera=cam)

    # geometry buffers can't see an albedo edit
    assert np.array_equal(base.buffers.mask, edited.buffers.mask)
    assert np.array_equal(base.buffers.depth, edited.buffers.depth)
    assert np.array_equal(base.buffers.normal, edited.buffers.normal)
    assert np.array_equal(base.buffers.alpha, edited.buffers.alpha)
    assert np.array_equal(base.cloud.mu, edited.cloud.mu)

    # points whose bilinear footprint can touch the rect (one-texel margin)
    row0, row1, col0, col1 = engine.texel_rect(rect, t)
    u, v = base.cloud.uv[:, 0], base.cloud.uv[:, 1]
    pad = 1.5 / t
    affected = (
        (u >= col0 / t - pad) & (u <= col1 / t + pad)
        & (v >= row0 / t - pad) & (v <= row1 / t + pad)
    )
    assert affected.any()

    proj = project_cloud(base.cloud, cam, DEFAULT_CONFIG)
    allowed = np.zeros((96, 96), dtype=bool)
    jj, ii = np.meshgrid(np.arange(96) + 0.5, np.arange(96) + 0.5)
    for row in np.flatnonzero(affected[proj.index]):
        dx = jj - proj.mean2d[row, 0]
        dy = ii - proj.mean2d[row, 1]
        allowed |= dx * dx + dy * dy <= (proj.radius[row] + 1.0) ** 2

    changed = np.any(base.image != edited.image, axis=-1)
    assert changed.any()  # the edit is visible
    assert not np.any(changed & ~allowed)


def test_swap_hair_self_is_identity(bundle_a):
    cam = make_camera(bundle_a.rig)
    swapped = engine.swap_hair(bundle_a, bundle_a)
    f1 = engine.Avatar(bundle_a).render(camera=cam)
    f2 = engine.Avatar(swapped).render(camera=cam)
    assert np.array_equal(f1.image, f2.image)


def test_swap_hair_takes_donor_hair_and_keeps_face(bundle_a, bundle_b):
    cam = make_camera(bundle_a.rig, size=96)
    swapped = engine.swap_hair(bundle_a, bundle_b)
    fa = engine.Avatar(bundle_a).render(camera=cam)
    fb = engine.Avatar(bundle_b).render(camera=cam)
    fs = engine.Avatar(swapped).render(camera=cam)

    # hair points equal the donor's (same conditioning, donor decoder)
    hair_s = fs.cloud.group == GROUP_HAIR
    hair_b = fb.cloud.group == GROUP_HAIR
    assert np.array_equal(fs.cloud.mu[hair_s], fb.cloud.mu[hair_b])
    assert np.array_equal(fs.cloud.color[hair_s], fb.cloud.color[hair_b])

    # same head geometry either side: the hair silhouette matches the donor's
    assert np.array_equal(fs.buffers.mask[..., 2], fb.buffers.mask[..., 2])

    # pixels whose whole occlusion-sampling window is hair-free in both
    # renders show a's face unchanged (occlusion reads an 8 px depth ring)
    tainted = (fa.buffers.mask[..., 2] != 0.0) | (fs.buffers.mask[..., 2] != 0.0)
    pad = 10
    padded = np.pad(tainted, pad, constant_values=True)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (2 * pad + 1, 2 * pad + 1))
    clean = ~windows.any(axis=(2, 3))
    assert clean.any()
    assert np.array_equal(fa.image[clean], fs.image[clean])


def test_swap_hair_twice_restores_original(bundle_a, bundle_b, tmp_path):
    once = engine.swap_hair(bundle_a, bundle_b)
    twice = engine.swap_hair(once, bundle_a)
    p1, p2 = str(tmp_path / "a.egava"), str(tmp_path / "round.egava")
    assets.save_bundle(bundle_a, p1)
    assets.save_bundle(twice, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_default_camera_sees_whole_head(bundle_a):
    cam = engine.default_camera(bundle_a.rig, size=128)
    verts = bundle_a.rig.template
    p = verts @ cam.rotation.T + cam.translation
    assert np.all(p[:, 2] > 0)  # everything in front of the camera
    px = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    py = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    assert px.min() > 0 and px.max() < 128
    assert py.min() > 0 and py.max() < 128
