import numpy as np
import pytest

from convreg.bbox import BBox
from convreg.synth import SUITES, SynthConfig, generate_sequence, save_otb, suite_config


def test_static_sequence_places_texture_at_box():
    cfg = SynthConfig(background="flat", n_frames=3)
    frames, gt = generate_sequence(cfg)
    assert gt == [BBox(68, 48, 24, 24)] * 3
    f = frames[0]
    assert f.dtype == np.uint8 and f.shape == (120, 160)
    outside = f.copy()
    outside[48:72, 68:92] = 128
    assert np.all(outside == 128)
    assert np.array_equal(frames[0], frames[2])


def test_linear_motion_boxes():
    cfg = SynthConfig(motion="linear", velocity=(2.0, -1.0), start=(10, 50), n_frames=5)
    _, gt = generate_sequence(cfg)
    assert [(b.x, b.y) for b in gt] == [(10 + 2 * t, 50 - t) for t in range(5)]


def test_object_pixels_track_the_box():
    cfg = SynthConfig(motion="linear", velocity=(3.0, 2.0), start=(5, 5), background="flat", n_frames=4)
    frames, gt = generate_sequence(cfg)
    crop0 = frames[0][5:29, 5:29]
    for f, b in zip(frames, gt):
        x, y = int(b.x), int(b.y)
        assert np.array_equal(f[y : y + 24, x : x + 24], crop0)


def test_sinusoidal_returns_after_period():
    cfg = SynthConfig(motion="sinusoidal", amplitude=(20, 10), period=10, n_frames=11)
    _, gt = generate_sequence(cfg)
    assert gt[0] == gt[10]
    assert gt[5] == gt[0]  # sin(pi) rounds back to the start
    assert gt[2].x - gt[0].x == round(20 * np.sin(2 * np.pi * 2 / 10))


def test_occluder_covers_object():
    cfg = SynthConfig(background="flat", occlusion=(2, 3, 1.0), n_frames=5)
    frames, gt = generate_sequence(cfg)
    b = gt[0]
    sl = np.s_[int(b.y) : int(b.y + b.h), int(b.x) : int(b.x + b.w)]
    assert not np.array_equal(frames[1][sl], frames[2][sl])
    assert np.array_equal(frames[2][sl], frames[3][sl])
    assert np.array_equal(frames[1][sl], frames[4][sl])
    assert np.all((frames[2][sl] >= 100) & (frames[2][sl] <= 156))


def test_partial_occlusion_left_columns():
    cfg = SynthConfig(background="flat", occlusion=(0, 0, 0.5), n_frames=2)
    frames, gt = generate_sequence(cfg)
    b = gt[0]
    y, x = int(b.y), int(b.x)
    assert np.array_equal(frames[0][y : y + 24, x + 12 : x + 24], frames[1][y : y + 24, x + 12 : x + 24])
    assert not np.array_equal(frames[0][y : y + 24, x : x + 12], frames[1][y : y + 24, x : x + 12])


def test_scale_drift_grows_box_about_centre():
    cfg = SynthConfig(scale_drift=1.05, n_frames=6)
    _, gt = generate_sequence(cfg)
    assert gt[5].w == round(24 * 1.05**5)
    assert abs(gt[5].center[0] - gt[0].center[0]) <= 0.5


def test_deterministic_and_seed_dependent():
    a = generate_sequence(suite_config("clutter", 3))
    b = generate_sequence(suite_config("clutter", 3))
    c = generate_sequence(suite_config("clutter", 4))
    assert all(np.array_equal(x, y) for x, y in zip(a[0], b[0])) and a[1] == b[1]
    assert not np.array_equal(a[0][0], c[0][0])


def test_leaving_frame_raises():
    with pytest.raises(ValueError, match="leaves the frame"):
        generate_sequence(SynthConfig(motion="linear", velocity=(10, 0), n_frames=20))


@pytest.mark.parametrize(
    "kw",
    [dict(motion="spiral"), dict(background="stars"), dict(n_frames=0), dict(occlusion=(1, 2, 1.5))],
)
def test_bad_config_rejected(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


@pytest.mark.parametrize("suite", SUITES)
def test_suites_generate_for_many_seeds(suite):
    for seed in range(10):
        frames, gt = generate_sequence(suite_config(suite, seed))
        assert len(frames) == len(gt)


def test_easy_suite_speed_bound():
    for seed in range(10):
        _, gt = generate_sequence(suite_config("easy", seed))
        for p, q in zip(gt, gt[1:]):
            # integer rounding of the box adds at most one pixel per axis
            assert np.hypot(q.x - p.x, q.y - p.y) <= 3.0 + np.sqrt(2)


def test_occlusion_suite_is_five_full_frames():
    cfg = suite_config("occlusion", 0)
    assert cfg.occlusion == (8, 12, 1.0)


def test_save_otb_layout(tmp_path):
    frames, gt = generate_sequence(SynthConfig(n_frames=2))
    root = save_otb(frames, gt, tmp_path / "s")
    assert sorted(p.name for p in (root / "img").iterdir()) == ["0001.png", "0002.png"]
    assert (root / "groundtruth_rect.txt").read_text() == "69,49,24,24\n69,49,24,24\n"
