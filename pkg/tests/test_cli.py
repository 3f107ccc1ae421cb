import json

import numpy as np
import pytest

from gatedseg.cli import run

TINY_TOML = """
epochs = 2
batch_size = 4
learning_rate = 1e-3
seed = 0

[model]
image_size = [32, 32]
patch_size = [4, 4]
embed_dim = 16
stage_depths = [1, 1, 1, 1]
num_heads = [2, 2, 4, 4]
decoder_depths = [1, 1, 1, 1]
window_size = 2
det_hidden = 32

[augment]
enabled = false
"""


def synth(out, seed=0):
    return run(["synth", "--subjects", "4", "--seed", str(seed),
                "--shape", "8,32,32", "--splits", "train=2,val=1,test=1",
                "-o", str(out)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth + train shared by the CLI tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert synth(root / "data") == 0
    (root / "tiny.toml").write_text(TINY_TOML)
    assert run(["train", "--manifest", str(root / "data" / "manifest.json"),
                "--config", str(root / "tiny.toml"), "-o", str(root / "run")]) == 0
    return root


def test_synth_is_bitwise_deterministic(tmp_path):
    assert synth(tmp_path / "a") == 0
    assert synth(tmp_path / "b") == 0
    for rel in ("manifest.json", "subject000/image.f32", "subject002/masks.u8"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert synth(tmp_path / "c", seed=1) == 0
    assert (tmp_path / "a" / "subject000/image.f32").read_bytes() != \
        (tmp_path / "c" / "subject000/image.f32").read_bytes()


def test_synth_split_count_mismatch_is_usage_error(tmp_path):
    assert run(["synth", "--subjects", "5", "--splits", "train=2,val=1",
                "--shape", "8,32,32", "-o", str(tmp_path)]) == 1


def test_train_writes_artifacts(pipeline):
    run_dir = pipeline / "run"
    assert (run_dir / "final.pt").exists()
    assert (run_dir / "metrics.csv").exists()
    snapshot = json.loads((run_dir / "run_config.json").read_text())
    assert snapshot["config"]["epochs"] == 2
    assert snapshot["config"]["model"]["window_size"] == 2


def test_set_override_beats_config_file(pipeline, tmp_path):
    code = run(["train", "--manifest", str(pipeline / "data" / "manifest.json"),
                "--config", str(pipeline / "tiny.toml"),
                "--set", "epochs=1", "--set", "model.gating_mode=hard",
                "-o", str(tmp_path / "run")])
    assert code == 0
    snapshot = json.loads((tmp_path / "run" / "run_config.json").read_text())
    assert snapshot["config"]["epochs"] == 1
    assert snapshot["config"]["model"]["gating_mode"] == "hard"


def test_unknown_config_key_is_usage_error(pipeline, tmp_path):
    code = run(["train", "--manifest", str(pipeline / "data" / "manifest.json"),
                "--config", str(pipeline / "tiny.toml"),
                "--set", "warmup_epochs=5", "-o", str(tmp_path / "run")])
    assert code == 1


def test_infer_writes_prediction_archive(pipeline, tmp_path):
    code = run(["infer", "--checkpoint", str(pipeline / "run" / "final.pt"),
                "--manifest", str(pipeline / "data" / "manifest.json"),
                "--subject", "subject003", "--gating", "hard",
                "-o", str(tmp_path)])
    assert code == 0
    archive = np.load(tmp_path / "subject003_prediction.npz")
    assert archive["probs"].shape == (3, 8, 32, 32)
    assert archive["masks"].shape == (3, 8, 32, 32)
    assert archive["det_probs"].shape == (8, 3)


def test_eval_and_compare_produce_figure_2_style_artifacts(pipeline, tmp_path):
    manifest = str(pipeline / "data" / "manifest.json")
    ckpt = str(pipeline / "run" / "final.pt")
    assert run(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                "--split", "test", "--gating", "hard", "--run-id", "gated",
                "-o", str(tmp_path / "gated")]) == 0
    assert run(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                "--split", "test", "--gating", "none", "--run-id", "nongated",
                "-o", str(tmp_path / "nongated")]) == 0
    assert run(["compare",
                "--report-a", str(tmp_path / "gated" / "gated_records.csv"),
                "--report-b", str(tmp_path / "nongated" / "nongated_records.csv"),
                "-o", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "dice_curve_comparison.png").exists()
    assert (tmp_path / "cmp" / "comparison.csv").exists()
    payload = json.loads((tmp_path / "cmp" / "comparison_summary.json").read_text())
    assert payload["run_a"] == "gated"
    assert "reference" in payload


def test_missing_checkpoint_is_data_error(pipeline, tmp_path):
    code = run(["eval", "--checkpoint", str(tmp_path / "nope.pt"),
                "--manifest", str(pipeline / "data" / "manifest.json"),
                "-o", str(tmp_path)])
    assert code == 2


def test_missing_manifest_is_data_error(pipeline, tmp_path):
    code = run(["train", "--manifest", str(tmp_path / "nope.json"),
                "--config", str(pipeline / "tiny.toml"), "-o", str(tmp_path)])
    assert code == 2


def test_help_and_bad_subcommand_exit_codes(capsys):
    assert run(["--help"]) == 0
    capsys.readouterr()
    assert run(["frobnicate"]) == 1


def test_ingest_dicom_to_volume_dir(tmp_path):
    from gatedseg.data.dicom_io import write_ct_series, write_rtstruct
    from gatedseg.data.volume import load_volume_dir

    image = np.zeros((4, 32, 32), dtype=np.int16)
    _, frame_uid = write_ct_series(tmp_path / "ct", image)
    contour = np.array([[8.5, 8.5], [18.5, 8.5], [18.5, 18.5], [8.5, 18.5]])
    write_rtstruct(tmp_path / "rs.dcm", [("prostate", [(1.0, contour)])], frame_uid)
    code = run(["ingest", "--ct-dir", str(tmp_path / "ct"),
                "--rtstruct", str(tmp_path / "rs.dcm"),
                "--classes", "prostate", "--subject-id", "pat01",
                "-o", str(tmp_path / "out")])
    assert code == 0
    vol = load_volume_dir(tmp_path / "out" / "pat01")
    assert vol.image.shape == (4, 32, 32)
    assert vol.masks[0, 1].sum() == 100
    assert vol.class_names == ["prostate"]
