import torch

from tripletswap.models.oracles import build_oracles
from tripletswap.services.trainer import TripletBatch, TripletTrainer

from .fixtures.faces import tiny_model, tiny_train_config, triplet_batch

N_CHECKED = 64
H = 1e-5
REL_TOL = 1e-4


def _double_batch(batch: TripletBatch) -> TripletBatch:
    return TripletBatch(
        source=batch.source.double(),
        pseudo_target=batch.pseudo_target.double(),
        ground_truth=batch.ground_truth.double(),
        landmarks=batch.landmarks.double(),
        id_embedding=batch.id_embedding.double(),
    )


def _double_trainer(parameterization: str = "x0") -> tuple[TripletTrainer, TripletBatch]:
    oracles = build_oracles(width=8, seed=1).freeze()
    batch = _double_batch(triplet_batch(oracles, n=2, seed=5))
    oracles.to(torch.float64)

    model = tiny_model(seed=2, parameterization=parameterization).double()
    # off the zero-initialised heads, otherwise most analytic gradients are exactly zero
    gen = torch.Generator().manual_seed(9)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    trainer = TripletTrainer(model, oracles, tiny_train_config(), device="cpu")
    return trainer, batch


def _sampled_entries(trainer: TripletTrainer, n: int, seed: int) -> list[tuple[torch.nn.Parameter, int]]:
    params = [p for p in trainer.model.parameters() if p.requires_grad]
    sizes = torch.tensor([p.numel() for p in params], dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed)
    picks = torch.multinomial(sizes / sizes.sum(), n, replacement=True, generator=gen)
    out = []
    for which in picks.tolist():
        p = params[which]
        out.append((p, int(torch.randint(p.numel(), (1,), generator=gen))))
    return out


def _check(parameterization: str) -> None:
    trainer, batch = _double_trainer(parameterization)
    noise = torch.randn(2, 48, 16, 16, generator=torch.Generator().manual_seed(3), dtype=torch.float64)

    trainer.model.zero_grad()
    total, *_ = trainer.losses(batch, noise)
    total.backward()

    failures = []
    for p, idx in _sampled_entries(trainer, N_CHECKED, seed=11):
        analytic = float(p.grad.reshape(-1)[idx])
        flat = p.data.view(-1)
        orig = float(flat[idx])
        with torch.no_grad():
            flat[idx] = orig + H
            up = float(trainer.losses(batch, noise)[0])
            flat[idx] = orig - H
            down = float(trainer.losses(batch, noise)[0])
            flat[idx] = orig
        numeric = (up - down) / (2 * H)
        scale = max(abs(analytic), abs(numeric))
        if abs(analytic - numeric) > REL_TOL * scale + 1e-9:
            failures.append((analytic, numeric))
    assert not failures, failures


def test_total_loss_gradients_match_central_differences():
    _check("x0")


def test_eps_parameterisation_gradients_match_central_differences():
    _check("eps")


def test_oracle_parameters_receive_no_gradient():
    trainer, batch = _double_trainer()
    noise = torch.randn(2, 48, 16, 16, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    total, *_ = trainer.losses(batch, noise)
    total.backward()
    for module in (trainer.oracles.identity, trainer.oracles.attributes):
        assert all(p.grad is None for p in module.parameters())
    trainer.policy.verify(trainer.oracles)
