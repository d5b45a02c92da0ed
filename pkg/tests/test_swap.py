import pytest
import torch

from entrypoints.cli.pipeline import main
from tripletswap.adapters.image_io import load_png, save_png
from tripletswap.analysis.render import render
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.services.swap import Swapper, swap
from tripletswap.services.trainer import train_loop
from tripletswap.services.triplet_builder import read_manifest

from .fixtures.faces import tiny_model_config, tiny_train_config


@pytest.fixture(scope="module")
def checkpoint(triplet_dir, oracles, tmp_path_factory):
    out = tmp_path_factory.mktemp("swap") / "model.safetensors"
    train_loop(read_manifest(triplet_dir), triplet_dir, oracles, tiny_model_config(), tiny_train_config(steps=1), out, workers=0)
    return out


@pytest.fixture(scope="module")
def pairs(triplet_dir):
    records = read_manifest(triplet_dir).records[:3]
    sources = torch.stack([render(r.source) for r in records])
    targets = torch.stack([render(r.pseudo_target) for r in records])
    return sources, targets


def test_swap_batch_shape_and_range(checkpoint, oracles, pairs):
    swapper = Swapper.from_checkpoint(checkpoint, oracles, device="cpu")
    for k in (1, 4):
        out = swapper.swap_batch(*pairs, k=k, seed=0)
        assert out.shape == (3, 3, 64, 64)
        assert torch.isfinite(out).all()
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_pair_output_does_not_depend_on_batch(checkpoint, oracles, pairs):
    swapper = Swapper.from_checkpoint(checkpoint, oracles, device="cpu")
    sources, targets = pairs
    batched = swapper.swap_batch(sources, targets, seed=5)
    alone = swapper.swap_batch(sources[2:], targets[2:], seed=5, offset=2)
    assert torch.allclose(batched[2:], alone, atol=1e-5)
    assert torch.equal(batched, swapper.swap_batch(sources, targets, seed=5))


def test_unsupported_steps_and_mismatched_batches(checkpoint, oracles, pairs):
    swapper = Swapper.from_checkpoint(checkpoint, oracles, device="cpu")
    sources, targets = pairs
    with pytest.raises(ConfigValidationError):
        swapper.swap_batch(sources, targets, k=3)
    with pytest.raises(ConfigValidationError):
        swapper.swap_batch(sources, targets[:2])


def test_single_image_swap_needs_oracles_for_a_path(checkpoint, oracles, pairs):
    sources, targets = pairs
    with pytest.raises(ConfigValidationError):
        swap(sources[0], targets[0], checkpoint)
    out = swap(sources[0], targets[0], checkpoint, oracles=oracles)
    assert out.shape == (3, 64, 64)


def test_cli_swap_writes_png(checkpoint, oracles, pairs, tmp_path):
    sources, targets = pairs
    oracle_path = oracles.save(tmp_path / "oracles.safetensors")
    src = save_png(sources[0], tmp_path / "a.png")
    tar = save_png(targets[0], tmp_path / "b.png")
    out = tmp_path / "out" / "swapped.png"
    args = ["swap", "--ckpt", str(checkpoint), "--source", str(src), "--target", str(tar)]
    assert main([*args, "--oracles", str(oracle_path), "--out", str(out), "--steps", "4"]) == 0
    assert load_png(out).shape == (3, 64, 64)
    assert (out.parent / "run_config.json").exists()
