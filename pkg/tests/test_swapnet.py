import pytest
import torch

from tripletswap.adapters.checkpoint_io import module_hash
from tripletswap.analysis.diffusion import add_noise
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.models.attention import AdapterCrossAttention, FusedSelfAttention
from tripletswap.models.swapnet import ConditionBundle, swapnet_forward, trainable_parameter_count

from .fixtures.faces import random_condition, tiny_model, tiny_model_config

T_MAX = 999


def _noise(n: int = 2, seed: int = 7) -> torch.Tensor:
    return torch.randn(n, 48, 16, 16, generator=torch.Generator().manual_seed(seed))


def _replace(cond: ConditionBundle, **fields) -> ConditionBundle:
    values = dict(
        target_latent=cond.target_latent,
        landmark_image=cond.landmark_image,
        source_latent=cond.source_latent,
        id_embedding=cond.id_embedding,
    )
    values.update(fields)
    return ConditionBundle(**values)


def _perturb(model, scale: float = 0.05, seed: int = 0) -> None:
    """Move every parameter off its initial value, as a few training steps would."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen))


# ----------------------------
# Attention algebra
# ----------------------------

def test_fused_self_attention_duplication_identity():
    torch.manual_seed(0)
    attn = FusedSelfAttention(32, 16).double()
    x = torch.randn(2, 10, 32, dtype=torch.float64)
    plain = attn(x)
    fused = attn(x, x.clone())
    assert float((fused - plain).norm() / plain.norm()) < 1e-5


def test_fused_self_attention_shapes_and_empty_reference():
    torch.manual_seed(1)
    attn = FusedSelfAttention(32, 16)
    x = torch.randn(2, 10, 32)
    assert torch.equal(attn(x, torch.zeros(2, 0, 32)), attn(x))
    assert attn(x, torch.randn(2, 37, 32)).shape == (2, 10, 32)
    with pytest.raises(ConfigValidationError):
        attn(x, torch.randn(2, 5, 16))


def test_adapter_cross_attention_is_neutral_at_init():
    torch.manual_seed(2)
    with_adapter = AdapterCrossAttention(32, 16, 16, use_id_adapter=True)
    tokens = torch.randn(2, 10, 32)
    context = torch.randn(2, 3, 16)
    id_tokens = torch.randn(2, 2, 16)
    out = with_adapter(tokens, context, id_tokens)
    assert out.shape == tokens.shape
    assert torch.equal(out, with_adapter(tokens, context, None))
    with pytest.raises(ConfigValidationError):
        with_adapter(tokens, torch.randn(2, 3, 8), id_tokens)


# ----------------------------
# Initialisation
# ----------------------------

def test_init_is_deterministic_per_seed():
    assert module_hash(tiny_model(seed=3)) == module_hash(tiny_model(seed=3))
    assert module_hash(tiny_model(seed=3)) != module_hash(tiny_model(seed=4))
    assert trainable_parameter_count(tiny_model()) > 0


def test_facenet_inherits_swapnet_encoder():
    model = tiny_model()
    swap_state = model.trunk.state_dict()
    for name, tensor in model.facenet.trunk.state_dict().items():
        assert torch.equal(tensor, swap_state[name])
    assert torch.equal(model.facenet.conv_in.weight, model.conv_in.noise.weight)


def test_expanded_input_conv_has_zero_target_slice():
    model = tiny_model()
    c = model.config.latent_channels
    weight = model.conv_in.weight
    assert weight.shape[1] == 2 * c
    assert not weight[:, c:].any()


def test_pose_guider_is_zero_at_init():
    model = tiny_model()
    feature = model.pose_guider_forward(torch.rand(2, 3, 64, 64))
    assert feature.shape == (2, 48, 16, 16)
    assert not feature.any()


def test_x0_head_is_zero_at_init():
    model = tiny_model()
    eps_hat, x0_hat = model(_noise(), random_condition(model), T_MAX)
    assert not x0_hat.any()
    assert eps_hat.shape == (2, 48, 16, 16)


def test_forward_is_invariant_to_conditions_at_init():
    model = tiny_model(parameterization="eps")
    # leave the three zero-initialised condition paths alone, move everything else
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "conv_in.target" in name or "pose_guider.out" in name or "to_out_id" in name:
                continue
            p.add_(0.05 * torch.randn(p.shape, generator=gen))

    cond = random_condition(model, seed=1)
    other = random_condition(model, seed=2)
    z = _noise()
    eps_ref, _ = model(z, cond, 500)
    for field in ("target_latent", "id_embedding", "landmark_image"):
        eps, _ = model(z, _replace(cond, **{field: getattr(other, field)}), 500)
        assert torch.equal(eps, eps_ref), field

    eps, _ = model(z, _replace(cond, source_latent=other.source_latent), 500)
    assert not torch.equal(eps, eps_ref)


def test_facenet_cache_matches_attention_sites():
    model = tiny_model()
    source = torch.randn(2, 48, 16, 16, generator=torch.Generator().manual_seed(5))
    cache = model.facenet_extract(source)
    sites = model.trunk.attention_sites()
    assert len(cache) == len(sites)
    for tokens, site in zip(cache.tokens, sites):
        assert tokens.shape[-1] == site.proj_in.out_channels
    again = model.facenet_extract(source)
    assert all(torch.equal(a, b) for a, b in zip(cache.tokens, again.tokens))


def test_forward_batch_independence():
    model = tiny_model()
    _perturb(model)
    cond = random_condition(model, n=3, seed=8)
    z = _noise(3, seed=9)
    eps, x0 = swapnet_forward(z, cond, 700, model)
    perm = torch.tensor([2, 0, 1])
    permuted = ConditionBundle(
        target_latent=cond.target_latent[perm],
        landmark_image=cond.landmark_image[perm],
        source_latent=cond.source_latent[perm],
        id_embedding=cond.id_embedding[perm],
    )
    eps_p, x0_p = swapnet_forward(z[perm], permuted, 700, model)
    torch.testing.assert_close(eps_p, eps[perm])
    torch.testing.assert_close(x0_p, x0[perm])
    assert x0.shape == z.shape


def test_incomplete_or_mismatched_condition_is_rejected():
    model = tiny_model()
    cond = random_condition(model)
    with pytest.raises(ConfigValidationError):
        model(_noise(), _replace(cond, id_embedding=None), T_MAX)
    with pytest.raises(ConfigValidationError):
        model(_noise(), _replace(cond, id_embedding=cond.id_embedding[:1]), T_MAX)


def test_ablated_models_drop_their_branches():
    no_facenet = tiny_model(use_facenet=False)
    assert no_facenet.facenet is None
    with pytest.raises(ConfigValidationError):
        no_facenet.facenet_extract(torch.zeros(1, 48, 16, 16))
    no_adapter = tiny_model(use_id_adapter=False)
    assert no_adapter.id_projector is None
    assert trainable_parameter_count(no_adapter) < trainable_parameter_count(tiny_model())

    cond = random_condition(no_facenet)
    eps, x0 = no_facenet(_noise(), cond, T_MAX)
    assert eps.shape == x0.shape == (2, 48, 16, 16)


def test_zero_init_does_not_gate_learning():
    model = tiny_model(parameterization="eps")
    gated = ("conv_in.target", "pose_guider.out", "to_out_id")
    cond = random_condition(model, seed=3)
    z0 = torch.randn(2, 48, 16, 16, generator=torch.Generator().manual_seed(4))
    eps = _noise()
    z_t = add_noise(z0, eps, T_MAX, model.schedule)
    # a step on the zero-initialised output heads first opens the gated paths
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    for _ in range(2):
        opt.zero_grad()
        eps_hat, _ = model(z_t, cond, T_MAX)
        ((eps_hat - eps) ** 2).mean().backward()
        opt.step()
    grads = {n: p.grad for n, p in model.named_parameters() if p.grad is not None}
    for path in gated:
        assert any(grads[n].abs().sum() > 0 for n in grads if path in n), path


def test_model_config_validation():
    with pytest.raises(ValueError):
        tiny_model_config(base_width=20)
