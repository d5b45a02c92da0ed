import pytest
import torch

from tripletswap.adapters.checkpoint_io import load_checkpoint, save_checkpoint
from tripletswap.domain.errors import CheckpointError
from tripletswap.services.trainer import TripletTrainer, load_swap_model

from .fixtures.faces import tiny_model, tiny_train_config, triplet_batch


@pytest.fixture
def trained_bundle(oracles):
    trainer = TripletTrainer(tiny_model(), oracles, tiny_train_config(), device="cpu")
    trainer.train_step(triplet_batch(oracles))
    return trainer.bundle()


def test_checkpoint_round_trip(trained_bundle, tmp_path):
    path = save_checkpoint(trained_bundle, tmp_path / "model.safetensors")
    loaded = load_checkpoint(path)
    assert loaded.step == 1
    assert loaded.parameter_hash() == trained_bundle.parameter_hash()
    assert loaded.oracle_hash == trained_bundle.oracle_hash
    assert loaded.config == trained_bundle.config
    assert set(loaded.optimizer_state) == set(trained_bundle.optimizer_state)
    assert torch.equal(loaded.schedule["alpha_bars"], trained_bundle.schedule["alpha_bars"])

    model, codec, _ = load_swap_model(path, device="cpu")
    assert model.config.base_width == 16
    assert codec.block == 4


def test_corrupted_checkpoint_is_rejected(trained_bundle, tmp_path):
    path = save_checkpoint(trained_bundle, tmp_path / "model.safetensors")
    raw = bytearray(path.read_bytes())
    raw[-8] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_oracle_file_is_not_a_model_checkpoint(oracles, tmp_path):
    path = oracles.save(tmp_path / "oracles.safetensors")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.safetensors")
