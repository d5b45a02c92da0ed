# tests/conftest.py
import pytest

from tripletswap.domain.run_config import ProxyConfig
from tripletswap.models.oracles import build_oracles
from tripletswap.services.triplet_builder import build_manifest

# run tests from repo root; pyproject puts src/ and . on the path


@pytest.fixture(scope="session")
def oracles():
    """Untrained, frozen oracle pair: deterministic and cheap, enough for plumbing tests."""
    return build_oracles(width=8, seed=0).freeze()


@pytest.fixture(scope="session")
def triplet_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("triplets")
    build_manifest(8, ProxyConfig(), None, 0, out, workers=0)
    return out


@pytest.fixture(scope="session")
def eval_triplet_dir(tmp_path_factory):
    # 20 pairs: the Fréchet estimate needs more samples than its 17 feature dims
    out = tmp_path_factory.mktemp("eval_triplets")
    build_manifest(20, ProxyConfig(), None, 0, out, namespace="eval", workers=0)
    return out


@pytest.fixture(scope="session")
def glasses_triplet_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("glasses_triplets")
    build_manifest(4, ProxyConfig(), "preserve_glasses", 0, out, workers=0)
    return out
