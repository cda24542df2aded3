import numpy as np
import pytest

from pfan.data import (
    DatasetError,
    augment,
    crop_flip,
    from_clips,
    read_dataset,
    read_ppm,
    read_ppm_u8,
    write_dataset,
    write_ppm,
)
from pfan.losses import PSNR_CAP, capped, psnr, quantize8
from pfan.synth import (
    SceneSpec,
    Sprite,
    _texture_modes,
    camera_position,
    exposure_times,
    random_scene,
    render,
    render_clip,
)
from pfan.tensor import ContractError


def dark_spec(**kw):
    base = dict(height=8, width=8, frames=3, exposures=2, texture_contrast=0.0, background=(0, 0, 0))
    base.update(kw)
    return SceneSpec(**base)


def moving_spec(speed, frames=4, seed=3):
    spec = SceneSpec(height=32, width=32, frames=frames, exposures=6, texture_seed=seed, texture_contrast=0.3)
    spec.camera = [(0.6 * speed, 0.8 * speed)] * frames
    return spec


# ---------------------------------------------------------------- rendering


@pytest.mark.parametrize("E", [1, 3, 8])
def test_static_scene_blur_equals_sharp(E):
    spec = SceneSpec(height=16, width=16, frames=3, exposures=E)
    spec.sprites = [Sprite("disc", 5, 8, 8, color=(1, 0, 0))]
    clip = render_clip(spec)
    np.testing.assert_allclose(clip.blurry, clip.sharp, atol=1e-12)
    assert psnr(quantize8(clip.blurry), quantize8(clip.sharp)) == float("inf")


def test_single_exposure_blur_equals_sharp_despite_motion():
    spec = moving_spec(4.0)
    spec.exposures = 1
    clip = render_clip(spec)
    np.testing.assert_array_equal(clip.blurry, clip.sharp)


def test_moving_pixel_two_exposures_splits_energy():
    spec = dark_spec()
    spec.sprites = [Sprite("square", 1.0, 4.5, 4.0, vy=0.0, vx=1.0)]
    clip = render_clip(spec)
    # centre x at t=1 is 5.0; the exposures at t -/+ 0.5 land on pixels 4 and 5
    row = clip.blurry[1, 0, 4]
    np.testing.assert_allclose(row[[4, 5]], 0.5, atol=1e-12)
    assert row.sum() == pytest.approx(1.0)


def test_blur_is_mean_of_sub_exposures():
    spec = random_scene(np.random.default_rng(0), height=32, width=32, frames=3)
    clip = render_clip(spec)
    modes = _texture_modes(spec, spec.texture_seed)
    for t in range(spec.frames):
        subs = [render(spec, float(tau), modes)[0] for tau in exposure_times(spec, t)[::-1]]
        np.testing.assert_allclose(clip.blurry[t], np.mean(subs, axis=0), atol=1e-6)


def test_psnr_decreases_with_velocity():
    scores = []
    for speed in (0.0, 1.0, 2.0, 4.0):
        clip = render_clip(moving_spec(speed))
        scores.append(capped(psnr(clip.blurry[1:], clip.sharp[1:])))
    assert scores[0] == PSNR_CAP
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_exposure_times_centred_on_frame():
    spec = dark_spec(exposures=5)
    ts = exposure_times(spec, 4)
    assert ts.mean() == pytest.approx(4.0)
    assert ts[-1] - ts[0] == pytest.approx(1.0)
    assert exposure_times(dark_spec(exposures=1), 2).tolist() == [2.0]


def test_render_is_deterministic():
    a = render_clip(random_scene(np.random.default_rng(5), height=16, width=16, frames=3))
    b = render_clip(random_scene(np.random.default_rng(5), height=16, width=16, frames=3))
    assert a.blurry.tobytes() == b.blurry.tobytes()
    assert a.flow.tobytes() == b.flow.tobytes()


def test_flow_matches_camera_and_sprite_velocities():
    spec = SceneSpec(height=32, width=32, frames=3, exposures=2)
    spec.camera = [(1.0, -2.0)] * 3
    spec.sprites = [Sprite("square", 8, 16, 16, vy=2.0, vx=1.0)]
    clip = render_clip(spec)
    f = clip.flow[1]
    # background moves with the camera, the sprite with camera + own velocity
    np.testing.assert_allclose(f[:, 0, 0], [-1.0, 2.0])
    np.testing.assert_allclose(f[:, 19, 15], [-3.0, 1.0])


def test_displacement_cap_enforced():
    spec = SceneSpec(frames=2, max_displacement=8.0)
    spec.camera = [(6.0, 6.0)] * 2
    with pytest.raises(ValueError):
        render_clip(spec)
    spec = SceneSpec(frames=2, exposures=0)
    with pytest.raises(ValueError):
        render_clip(spec)


def test_wrapping_noted():
    spec = SceneSpec(height=16, width=16, frames=4)
    spec.sprites = [Sprite("square", 4, 8, 13, vx=2.0)]
    assert render_clip(spec).wrapped
    spec.sprites = [Sprite("square", 4, 8, 8)]
    assert not render_clip(spec).wrapped


def test_toroidal_motion_conserves_sprite_mass():
    spec = dark_spec(height=16, width=16, frames=6, exposures=1)
    spec.sprites = [Sprite("square", 4, 8, 13, vx=2.0)]
    clip = render_clip(spec)
    np.testing.assert_allclose(clip.sharp[:, 0].sum(axis=(1, 2)), 16.0)


def test_pure_translation_scene_is_global_motion():
    spec = random_scene(np.random.default_rng(1), pure_translation=True)
    assert all(s.vy == s.vx == 0 for s in spec.sprites)
    v = np.hypot(*spec.camera[0])
    assert 1.0 <= v <= 4.0
    assert camera_position(spec, 2.0) == pytest.approx(2 * np.asarray(spec.camera[0]))


# ---------------------------------------------------------------- disk format


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(3, 5, 7))
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_ppm_u8(tmp_path / "a.ppm"), quantize8(img))
    assert read_ppm(tmp_path / "a.ppm").dtype == np.float32


def test_ppm_with_comment(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    np.testing.assert_array_equal(read_ppm_u8(tmp_path / "c.ppm")[:, 0, 1], [4, 5, 6])


def small_clips(n=2, frames=5):
    rng = np.random.default_rng(7)
    return [render_clip(random_scene(rng, height=16, width=16, frames=frames, exposures=2)) for _ in range(n)]


def test_dataset_round_trip_is_bitwise(tmp_path):
    clips = small_clips()
    write_dataset(clips, tmp_path, radius=1, exposures=2)
    ds = read_dataset(tmp_path)
    mem = from_clips(clips)
    assert ds.radius == 1 and ds.exposures == 2
    for a, b in zip(ds.clips, mem.clips):
        assert a.blurry.tobytes() == b.blurry.tobytes()
        assert a.sharp.tobytes() == b.sharp.tobytes()
        assert a.flow.tobytes() == b.flow.tobytes()
        assert a.name == b.name and a.wrapped == b.wrapped
    # a second write/read cycle stays fixed
    write_dataset([type(clips[0])(sharp=c.sharp, blurry=c.blurry, flow=c.flow, wrapped=c.wrapped)
                   for c in ds.clips], tmp_path / "again")
    again = read_dataset(tmp_path / "again")
    assert again.clips[0].blurry.tobytes() == ds.clips[0].blurry.tobytes()


def test_manifest_frame_count_mismatch(tmp_path):
    write_dataset(small_clips(1), tmp_path)
    path = tmp_path / "manifest.txt"
    path.write_text(path.read_text().replace("clip_0000 5", "clip_0000 6"))
    with pytest.raises(DatasetError, match=r"manifest.txt:7"):
        read_dataset(tmp_path)


@pytest.mark.parametrize("line,bad", [(1, "pfan-synth 9"), (3, "exposures x"), (7, "clip_0000 five -")])
def test_malformed_manifest_reports_line(tmp_path, line, bad):
    write_dataset(small_clips(1), tmp_path)
    path = tmp_path / "manifest.txt"
    lines = path.read_text().splitlines()
    lines[line - 1] = bad
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=rf"manifest.txt:{line}:"):
        read_dataset(tmp_path)


def test_windowing_drops_borders():
    ds = from_clips(small_clips(1, frames=10))
    assert len(ds.windows(1)) == 8
    assert len(ds.windows(2)) == 6
    assert [t for _, t in ds.windows(1)] == list(range(1, 9))
    s = ds.sample(0, 1)
    assert s.blurry.shape == (3, 3, 16, 16)
    np.testing.assert_array_equal(s.blurry[1], ds.clips[0].blurry[1])


def test_sharp_pyramid_uses_box_downsampling():
    ds = from_clips(small_clips(1))
    pyr = ds.sample(0, 2).sharp_pyramid(3)
    assert [p.shape for p in pyr] == [(3, 16, 16), (3, 8, 8), (3, 4, 4)]
    np.testing.assert_allclose(pyr[1][0, 0, 0], pyr[0][0, :2, :2].mean(), atol=1e-7)


# ---------------------------------------------------------------- augmentation


def sample():
    return from_clips(small_clips(1)).sample(0, 2)


def test_flip_twice_is_identity():
    s = sample()
    twice = crop_flip(crop_flip(s, 0, 0, 16, True), 0, 0, 16, True)
    np.testing.assert_array_equal(twice.blurry, s.blurry)
    np.testing.assert_array_equal(twice.flow, s.flow)


def test_zero_offset_no_flip_is_top_left():
    s = sample()
    c = crop_flip(s, 0, 0, 8, False)
    np.testing.assert_array_equal(c.blurry, s.blurry[..., :8, :8])
    np.testing.assert_array_equal(c.sharp, s.sharp[..., :8, :8])


def test_flip_negates_horizontal_flow():
    s = sample()
    f = crop_flip(s, 0, 0, 16, True)
    np.testing.assert_array_equal(f.flow[0], s.flow[0][:, ::-1])
    np.testing.assert_array_equal(f.flow[1], -s.flow[1][:, ::-1])


def augment_sequence(s, seed):
    rng = np.random.default_rng(seed)
    return [augment(s, rng, 8).sharp.tobytes() for _ in range(5)]


def test_augment_is_deterministic():
    s = sample()
    assert augment_sequence(s, 4) == augment_sequence(s, 4)


def test_augment_preserves_correspondence():
    s = sample()
    c = augment(s, np.random.default_rng(3), 8)
    matches = [
        crop_flip(s, y0, x0, 8, flip)
        for y0 in range(9) for x0 in range(9) for flip in (False, True)
        if crop_flip(s, y0, x0, 8, flip).sharp.tobytes() == c.sharp.tobytes()
    ]
    assert matches
    for d in matches:
        np.testing.assert_array_equal(d.blurry, c.blurry)
        assert psnr(d.blurry[1], d.sharp) == psnr(c.blurry[1], c.sharp)


def test_crop_too_large():
    with pytest.raises(ContractError):
        augment(sample(), np.random.default_rng(0), 17)
