"""Command line: reproducible runs, file outputs, error handling."""

import json

import numpy as np
import pytest
from PIL import Image

from i2idiff.pipeline.cli import _parse_schedule, main
from i2idiff.schedule import INFERENCE_DEFAULTS
from i2idiff.tasks import make_task_sample
from i2idiff.pipeline.data import make_color_modes_dataset


CONFIG = {
    "train": {"batch_size": 4, "total_steps": 5, "learning_rate": 1e-3,
              "warmup_steps": 2, "ema_decay": 0.99,
              "schedule": [1e-3, 0.12, 25]},
    "arch": {"base_channels": 8, "channel_multipliers": [1, 2],
             "blocks_per_level": 1, "variant": "global_self_attention",
             "attention_resolutions": [8], "heads": 2, "groups": 4,
             "input_size": 16},
}


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(CONFIG))
    return path


@pytest.fixture(scope="module")
def trained_checkpoint(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("train") / "model.ckpt"
    code = main(["train", "--seed", "7", "--config", str(config_path),
                 "--num-images", "32", "--out", str(out)])
    assert code == 0
    return out


def test_train_is_reproducible(tmp_path, config_path):
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    for out in (a, b):
        code = main(["train", "--seed", "3", "--config", str(config_path),
                     "--num-images", "32", "--out", str(out)])
        assert code == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_resume(tmp_path, config_path, trained_checkpoint):
    # resuming a 3-step run for the final 2 steps matches the 5-step run
    mid = tmp_path / "mid.ckpt"
    final = tmp_path / "final.ckpt"
    cfg = json.loads(config_path.read_text())
    cfg["train"]["total_steps"] = 3
    short = tmp_path / "short.json"
    short.write_text(json.dumps(cfg))
    assert main(["train", "--seed", "7", "--config", str(short),
                 "--num-images", "32", "--out", str(mid)]) == 0
    assert main(["train", "--seed", "7", "--config", str(config_path),
                 "--num-images", "32", "--resume", str(mid), "--steps", "5",
                 "--out", str(final)]) == 0
    assert final.read_bytes() == trained_checkpoint.read_bytes()


def test_sample_writes_composited_outputs(tmp_path, trained_checkpoint):
    out = tmp_path / "samples"
    code = main(["sample", "--seed", "11", "--checkpoint",
                 str(trained_checkpoint), "--task", "inpainting",
                 "--num", "2", "--inference-schedule", "1e-3,0.35,2",
                 "--out", str(out)])
    assert code == 0
    for i in range(2):
        for suffix in ("x", "sample", "y0"):
            assert (out / f"{i:04d}_{suffix}.png").exists()
    # replicate the rng: first the dataset stream, then the task stream
    images, _ = make_color_modes_dataset(2, size=16,
                                         rng=np.random.default_rng(12))
    s = make_task_sample("inpainting", images[0], np.random.default_rng(11))
    x_png = np.asarray(Image.open(out / "0000_x.png"))
    sample_png = np.asarray(Image.open(out / "0000_sample.png"))
    observed = np.transpose(s.mask == 0.0, (1, 2, 0))
    assert observed.any()
    np.testing.assert_array_equal(sample_png[observed], x_png[observed])
    assert not np.array_equal(sample_png[~observed], x_png[~observed])


def test_eval_writes_metric_record(tmp_path, trained_checkpoint):
    out = tmp_path / "metrics.jsonl"
    extractor_path = tmp_path / "extractor.ckpt"
    code = main(["eval", "--seed", "5", "--checkpoint",
                 str(trained_checkpoint), "--num", "8",
                 "--inference-schedule", "1e-3,0.35,2",
                 "--extractor", str(extractor_path), "--out", str(out)])
    assert code == 0
    assert extractor_path.exists()
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == 1
    rec = records[0]
    for key in ("fid_proxy", "inception_score", "perceptual_distance",
                "classification_accuracy", "task", "checkpoint", "step"):
        assert key in rec
    assert rec["task"] == "colorization"
    assert rec["step"] == 5
    assert np.isfinite(rec["fid_proxy"])


def test_panorama_output_size(tmp_path, trained_checkpoint):
    out = tmp_path / "pano.png"
    code = main(["panorama", "--seed", "2", "--checkpoint",
                 str(trained_checkpoint), "--steps", "2",
                 "--inference-schedule", "1e-3,0.35,2", "--out", str(out)])
    assert code == 0
    with Image.open(out) as im:
        assert im.size == (16 + 2 * 2 * 8, 16)


def test_diversity_report(tmp_path, trained_checkpoint):
    out = tmp_path / "diversity.json"
    extractor_path = tmp_path / "extractor.ckpt"
    code = main(["diversity", "--seed", "9", "--checkpoint-l1",
                 str(trained_checkpoint), "--checkpoint-l2",
                 str(trained_checkpoint), "--num", "4", "--k", "2",
                 "--inference-schedule", "1e-3,0.35,2",
                 "--extractor", str(extractor_path), "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report["models"]) == {"l1", "l2"}
    assert "feature_diversity_l2_minus_l1" in report["diff_ci"]
    assert report["k"] == 2 and report["n_inputs"] == 4


def test_make_fixtures_deterministic(tmp_path):
    dirs = [tmp_path / "f1", tmp_path / "f2"]
    for d in dirs:
        code = main(["make-fixtures", "--seed", "4", "--num", "4",
                     "--size", "16", "--out", str(d)])
        assert code == 0
    names = [sorted(p.name for p in d.iterdir()) for d in dirs]
    assert names[0] == names[1]
    assert "manifest.jsonl" in names[0]
    for name in names[0]:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_parse_schedule():
    s = _parse_schedule("2e-3,0.3,7", None)
    assert s.num_steps == 7
    assert s.beta(1) == pytest.approx(2e-3)
    assert s.beta(7) == pytest.approx(0.3)
    s = _parse_schedule("default", None)
    assert s.num_steps == INFERENCE_DEFAULTS[2]
    meta = {"train_config": {"schedule": [1e-3, 0.12, 25]}}
    assert _parse_schedule("train", meta).num_steps == 25
    with pytest.raises(ValueError, match="schedule must be"):
        _parse_schedule("fast", None)
    with pytest.raises(ValueError, match="checkpoint metadata"):
        _parse_schedule("train", None)


def test_missing_seed_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_errors_return_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["train", "--seed", "0", "--config", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["sample", "--seed", "0", "--checkpoint",
                 str(tmp_path / "missing.ckpt"), "--out",
                 str(tmp_path / "s")]) == 1
