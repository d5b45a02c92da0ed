import json

from entrypoints.cli.pipeline import main
from tripletswap.services.face_dataset import read_samples
from tripletswap.services.triplet_builder import read_manifest


def _error_record(err: str) -> dict:
    lines = [line for line in err.splitlines() if line.startswith("{")]
    assert lines, err
    return json.loads(lines[-1])


def test_no_arguments_prints_usage():
    assert main([]) == 2


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == 2


def test_gen_data_writes_samples_and_run_config(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--count", "4", "--out", str(out), "--workers", "0", "--seed", "3"]) == 0
    samples = read_samples(out)
    assert len(samples) == 4
    assert samples[0].id_key == samples[1].id_key
    run_cfg = json.loads((out / "run_config.json").read_text())
    assert run_cfg["command"] == "gen-data"
    assert run_cfg["seed"] == 3


def test_build_triplets_with_transform_alias(tmp_path):
    out = tmp_path / "triplets"
    code = main(["build-triplets", "--count", "3", "--out", str(out), "--transform", "glasses", "--workers", "0"])
    assert code == 0
    manifest = read_manifest(out)
    assert len(manifest.records) == 3
    assert manifest.transform == "preserve_glasses"


def test_unknown_transform_is_usage_error(tmp_path):
    assert main(["build-triplets", "--count", "2", "--out", str(tmp_path), "--transform", "blur"]) == 2


def test_unsupported_sampler_steps_is_usage_error(tmp_path):
    args = ["swap", "--ckpt", str(tmp_path / "m.safetensors"), "--source", "a.png", "--target", "b.png"]
    assert main([*args, "--out", str(tmp_path / "o.png"), "--steps", "3"]) == 2


def test_missing_checkpoint_reports_path(tmp_path, capsys):
    missing = tmp_path / "missing.safetensors"
    code = main(
        [
            "swap",
            "--ckpt",
            str(missing),
            "--source",
            str(tmp_path / "a.png"),
            "--target",
            str(tmp_path / "b.png"),
            "--out",
            str(tmp_path / "out.png"),
        ]
    )
    assert code == 1
    record = _error_record(capsys.readouterr().err)
    assert record["error"] == "file_not_found"
    assert record["context"]["path"] == str(missing)
    assert not (tmp_path / "out.png").exists()


def test_invalid_config_file_is_reported(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"base_width": 20}}))
    code = main(["gen-data", "--count", "2", "--out", str(tmp_path / "d"), "--config", str(bad)])
    assert code == 1
    assert _error_record(capsys.readouterr().err)["error"] == "invalid_config"


def test_help_exits_cleanly():
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0


def test_unparseable_option_value_is_usage_error(tmp_path):
    args = ["gen-data", "--count", "many", "--out", str(tmp_path / "d")]
    assert main(args) == 2
    assert not (tmp_path / "d").exists()


def test_cli_does_not_depend_on_a_separate_click():
    import entrypoints.cli.pipeline as pipeline

    assert not hasattr(pipeline, "click")
