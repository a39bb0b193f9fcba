import csv
import subprocess
import sys

import numpy as np
import pytest

from convreg.cli import build_parser, main
from convreg.evaluation import iou, read_boxes
from convreg.features import extract_hog, save_feature_map
from convreg.synth import generate_sequence, save_otb, suite_config


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    for seed in range(2):
        frames, gt = generate_sequence(suite_config("easy", seed, n_frames=6))
        save_otb(frames, gt, root / f"easy_{seed:03d}")
    return root


def test_help_exits_zero_and_lists_flags():
    out = subprocess.run([sys.executable, "-m", "convreg.cli", "track", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--config", "--out", "--seed", "--threads", "--scales"):
        assert flag in out.stdout


def test_every_flag_has_help():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        for action in p._actions:
            assert action.help, f"{name} {action.option_strings or action.dest} lacks help"


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["track"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["track", "x", "--scales", "a,b"])
    assert e.value.code == 2


def test_track_writes_boxes_and_timing(corpus, tmp_path):
    assert main(["track", str(corpus / "easy_000"), "--out", str(tmp_path)]) == 0
    boxes = read_boxes(tmp_path / "boxes" / "easy_000.txt")
    gt = read_boxes(corpus / "easy_000" / "groundtruth_rect.txt")
    assert len(boxes) == len(gt)
    assert all(iou(b, g) > 0.5 for b, g in zip(boxes, gt))
    rows = list(csv.reader(open(tmp_path / "timing.csv")))
    assert rows[0] == ["name", "frames", "seconds", "fps"] and rows[1][1] == "6"
    assert float(rows[1][3]) > 0


def test_track_missing_groundtruth(tmp_path, capsys):
    seq = tmp_path / "seq"
    (seq / "img").mkdir(parents=True)
    assert main(["track", str(seq), "--out", str(tmp_path / "o")]) == 2
    assert str(seq / "groundtruth_rect.txt") in capsys.readouterr().err


def test_track_bad_config(corpus, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("learning_rate = 1\n")
    assert main(["track", str(corpus / "easy_000"), "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_track_same_seed_identical(corpus, tmp_path):
    outs = []
    for k, threads in enumerate(("1", "3")):
        d = tmp_path / str(k)
        assert main(["track", str(corpus / "easy_001"), "--out", str(d), "--seed", "7", "--threads", threads]) == 0
        outs.append((d / "boxes" / "easy_001.txt").read_bytes())
    assert outs[0] == outs[1]


def test_eval_writes_report(corpus, tmp_path):
    assert main(["eval", str(corpus), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    assert [r[0] for r in rows] == ["name", "easy_000", "easy_001", "mean"]
    for f in ("precision.csv", "precision.svg", "success.csv", "success.svg"):
        assert (tmp_path / "curves" / f).exists()


def test_eval_missing_corpus(tmp_path):
    assert main(["eval", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


def test_synth_layout(tmp_path):
    assert main(["synth", "--suite", "occlusion", "--count", "2", "--frames", "3", "--seed", "5", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["occlusion_005", "occlusion_006"]
    assert len(list((tmp_path / "occlusion_005" / "img").iterdir())) == 3


def test_converge_outputs(tmp_path):
    assert main(["converge", "--steps", "20", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "snr.csv")))
    assert rows[0] == ["step", "th=0,a=0", "th=0.05,a=0", "th=0.05,a=1"]
    assert len(rows) == 22
    assert rows[1][1] == rows[1][2] == rows[1][3]  # shared initial model
    trace = list(csv.reader(open(tmp_path / "trace.csv")))
    assert trace[0] == ["th", "a", "step", "data_loss", "total_loss", "snr"]
    assert len(trace) == 1 + 3 * 21
    assert (tmp_path / "snr.svg").exists()


def test_converge_zero_steps(tmp_path):
    assert main(["converge", "--steps", "0", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "snr.csv")))
    assert len(rows) == 2 and rows[1][0] == "0"


def test_converge_flat_target_stays_near_one(tmp_path):
    assert main(["converge", "--steps", "50", "--flat-target", "--configs", "0.05,0", "--out", str(tmp_path)]) == 0
    snr = [float(r[1]) for r in list(csv.reader(open(tmp_path / "snr.csv")))[1:]]
    assert all(1.0 <= s < 1.2 for s in snr)
    assert snr[-1] <= snr[0]


def test_converge_divergence_reported_others_continue(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("converge_lr = 0.5\n")
    rc = main(["converge", "--steps", "200", "--config", str(cfg), "--configs", "0,0;0.05,1", "--out", str(tmp_path)])
    assert rc == 1
    assert "diverged" in capsys.readouterr().err


def test_converge_from_feature_file(tmp_path):
    rng = np.random.default_rng(0)
    fmap = extract_hog(rng.uniform(0, 255, (48, 64)))
    save_feature_map(fmap, tmp_path / "p.crfm")
    assert main(["converge", "--patch", str(tmp_path / "p.crfm"), "--steps", "5", "--out", str(tmp_path / "o")]) == 2
    assert main(["converge", "--patch", str(tmp_path / "p.crfm"), "--rf", "3,4", "--steps", "5", "--out", str(tmp_path / "o")]) == 0
    assert main(["converge", "--patch", str(tmp_path / "nope.crfm"), "--rf", "3,4", "--out", str(tmp_path / "o")]) == 2


def test_ablate_single_sequence_corpus(corpus, tmp_path):
    single = tmp_path / "one"
    single.mkdir()
    (single / "easy_000").symlink_to(corpus / "easy_000")
    assert main(["ablate", str(single), "--dimension", "patch_size", "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "ablation_patch_size.csv")))
    assert [r[0] for r in rows] == ["config", "9x5", "7x5", "5x3", "3x3"]
    assert all(r[4] == "1" for r in rows[1:])
