import json

import pytest

from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.run_config import EvalConfig, RunConfig
from tripletswap.services.ablation import SUITES, run_ablation, suite_variants
from tripletswap.services.eval import REPORT_JSON
from tripletswap.services.triplet_builder import read_manifest

from .fixtures.faces import tiny_model_config, tiny_train_config


def _run_config(**train_overrides) -> RunConfig:
    return RunConfig(
        command="ablate",
        model=tiny_model_config(),
        train=tiny_train_config(steps=1, **train_overrides),
        eval=EvalConfig(n_pairs=20, batch_size=20, plots=False),
    )


def test_suites_are_known():
    assert set(SUITES) == {"architecture", "losses", "proxy", "steps"}
    names = [v.name for v in suite_variants("architecture")]
    assert names[0] == "full" and "no_facenet" in names and "no_id_adapter" in names
    assert [v.k_steps for v in suite_variants("steps")] == [1, 4]
    with pytest.raises(ConfigValidationError):
        suite_variants("everything")


def test_failed_variants_are_recorded(triplet_dir, eval_triplet_dir, oracles, tmp_path):
    result = run_ablation(
        "losses",
        _run_config(),
        oracles,
        read_manifest(eval_triplet_dir),
        eval_triplet_dir,
        tmp_path / "out",
        train_manifest=read_manifest(triplet_dir),
        train_root=tmp_path / "no_images_here",
    )
    assert result.reports == []
    assert [f["variant"] for f in result.failures] == ["full", "no_id_loss", "no_rec_loss"]
    written = json.loads((tmp_path / "out" / REPORT_JSON).read_text())
    assert written["suite"] == "losses"
    assert len(written["failures"]) == 3
    assert (tmp_path / "out" / "run_config.json").exists()


def test_steps_suite_reuses_one_model(triplet_dir, eval_triplet_dir, oracles, tmp_path):
    result = run_ablation(
        "steps",
        _run_config(),
        oracles,
        read_manifest(eval_triplet_dir),
        eval_triplet_dir,
        tmp_path / "out",
        train_manifest=read_manifest(triplet_dir),
        train_root=triplet_dir,
    )
    assert not result.failures, result.failures
    assert [r.label for r in result.reports] == ["1-step", "4-step"]
    assert [r.provenance["k_steps"] for r in result.reports] == [1, 4]
    assert (tmp_path / "out" / "1-step" / "model.safetensors").exists()
    assert not (tmp_path / "out" / "4-step").exists()


def test_reruns_give_identical_tables(triplet_dir, eval_triplet_dir, oracles, tmp_path):
    tables = []
    for run in ("a", "b"):
        result = run_ablation(
            "steps",
            _run_config(),
            oracles,
            read_manifest(eval_triplet_dir),
            eval_triplet_dir,
            tmp_path / run,
            train_manifest=read_manifest(triplet_dir),
            train_root=triplet_dir,
        )
        tables.append([(r.label, r.id_similarity, r.pose_l2, r.expression_l2, r.frechet) for r in result.reports])
    assert tables[0] == tables[1]
