import pytest
import torch

from zsugr_core.errors import NumericalError
from zsugr_core.models.featgen import (
    FeatureCritic,
    FeatureGenerator,
    critic_loss,
    generator_loss,
    gradient_penalty,
    mode_seeking_ratio,
    resample_close_pairs,
    sample_noise_pair,
)
from zsugr_core.services.gan_service import GanService
from zsugr_core.storage.feature_cache import FeatureSet


def _linear_critic(w):
    return lambda x, a: x @ w


def test_zero_critic_without_penalty_gives_zero_loss():
    real, fake, a = torch.randn(4, 3), torch.randn(4, 3), torch.randn(4, 2)
    loss = critic_loss(lambda x, a: torch.zeros(x.size(0)), real, fake, a, gp_lambda=0.0)
    assert loss.item() == 0.0


def test_linear_critic_penalty_closed_form():
    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        w = torch.randn(6, generator=g, dtype=torch.float64)
        real = torch.randn(5, 6, generator=g, dtype=torch.float64)
        fake = torch.randn(5, 6, generator=g, dtype=torch.float64)
        penalty = gradient_penalty(_linear_critic(w), real, fake, torch.zeros(5, 1, dtype=torch.float64))
        assert penalty.item() == pytest.approx((w.norm().item() - 1) ** 2, abs=1e-5)


def test_linear_critic_loss_with_identical_batches():
    w = torch.zeros(4, dtype=torch.float64)
    w[0] = 2.0
    x = torch.randn(3, 4, dtype=torch.float64)
    loss = critic_loss(_linear_critic(w), x, x.clone(), torch.zeros(3, 1, dtype=torch.float64), gp_lambda=1.0)
    assert loss.item() == pytest.approx(1.0, abs=1e-9)


def test_larger_score_gap_lowers_loss():
    critic = lambda x, a: x.sum(dim=1)  # noqa: E731
    fake, a = torch.zeros(4, 2), torch.zeros(4, 1)
    near = critic_loss(critic, torch.ones(4, 2), fake, a, gp_lambda=0.0)
    far = critic_loss(critic, 3 * torch.ones(4, 2), fake, a, gp_lambda=0.0)
    assert far < near


def test_non_finite_gradient_norm_raises():
    critic = lambda x, a: (x * float("inf")).sum(dim=1)  # noqa: E731
    with pytest.raises(NumericalError):
        gradient_penalty(critic, torch.ones(2, 3), torch.zeros(2, 3), torch.zeros(2, 1))


@pytest.mark.parametrize("scale", [0.5, 1.0, 2.0, 3.0, -2.0])
def test_mode_seeking_ratio_is_scale_covariant(scale):
    z1, z2 = sample_noise_pair(8, 5, torch.Generator().manual_seed(1), dtype=torch.float64)
    ratio = mode_seeking_ratio(scale * z1, scale * z2, z1, z2)
    assert torch.allclose(ratio, torch.full((8,), abs(scale), dtype=torch.float64), atol=1e-6)


def test_generator_ignoring_noise_has_no_mode_seeking_term():
    critic = lambda x, a: x.sum(dim=1)  # noqa: E731
    constant = lambda z, a: a * 2.0  # noqa: E731
    z1, z2 = sample_noise_pair(4, 3)
    a = torch.randn(4, 3)
    with_ms = generator_loss(constant, critic, z1, z2, a, ms_alpha=1.0)
    without = generator_loss(constant, critic, z1, z2, a, ms_alpha=0.0)
    assert with_ms.item() == pytest.approx(without.item())


def test_generator_loss_subtracts_ratio():
    critic = lambda x, a: torch.zeros(x.size(0))  # noqa: E731
    identity = lambda z, a: z  # noqa: E731
    z1, z2 = sample_noise_pair(4, 3)
    loss = generator_loss(identity, critic, z1, z2, torch.zeros(4, 1), ms_alpha=0.5)
    assert loss.item() == pytest.approx(-0.5)


def test_close_noise_pairs_are_resampled():
    g = torch.Generator().manual_seed(2)
    z1 = torch.randn(6, 4, generator=g)
    z2 = z1.clone()
    z2[3] = torch.randn(4, generator=g)
    kept = z2[3].clone()
    fresh = resample_close_pairs(z1, z2, g)
    assert ((z1 - fresh).abs().sum(dim=1) >= 1e-8).all()
    assert torch.equal(fresh[3], kept)


def test_network_shapes():
    generator = FeatureGenerator(noise_dim=4, semantic_dim=3, feature_dim=7, hidden_dim=16)
    critic = FeatureCritic(feature_dim=7, semantic_dim=3, hidden_dim=16)
    z, a = torch.randn(5, 4), torch.randn(5, 3)
    features = generator(z, a)
    assert features.shape == (5, 7)
    assert critic(features, a).shape == (5,)


def test_one_descent_step_lowers_critic_loss():
    torch.manual_seed(0)
    critic = FeatureCritic(feature_dim=4, semantic_dim=2, hidden_dim=16)
    real, fake, a = torch.randn(16, 4) + 1.0, torch.randn(16, 4) - 1.0, torch.randn(16, 2)
    optimizer = torch.optim.SGD(critic.parameters(), lr=1e-3)
    before = critic_loss(critic, real, fake, a, gp_lambda=0.0)
    optimizer.zero_grad()
    before.backward()
    optimizer.step()
    after = critic_loss(critic, real, fake, a, gp_lambda=0.0)
    assert after.item() < before.item()


def test_generator_loss_with_identical_noise_is_finite():
    generator = FeatureGenerator(noise_dim=4, semantic_dim=3, feature_dim=5, hidden_dim=16)
    critic = FeatureCritic(feature_dim=5, semantic_dim=3, hidden_dim=16)
    z = torch.randn(6, 4)
    loss = generator_loss(generator, critic, z, z.clone(), torch.randn(6, 3), ms_alpha=1.0,
                          generator=torch.Generator().manual_seed(0))
    assert torch.isfinite(loss)


def _class_mean_distance(synthetic, real):
    """Среднее по классам расстояние между центрами синтетических и реальных признаков."""
    gaps = []
    for class_id in real.class_counts():
        fake = synthetic.select_classes([class_id]).features.mean(dim=0)
        true = real.select_classes([class_id]).features.mean(dim=0)
        gaps.append((fake - true).norm())
    return torch.stack(gaps).mean()


@pytest.mark.slow
def test_shuffled_semantics_move_synthetic_class_means(tiny_config):
    tiny_config.gan.epochs = 300
    tiny_config.gan.lr = 1e-3
    tiny_config.gan.critic_steps = 2
    g = torch.Generator().manual_seed(0)
    centers = torch.tensor([[2.0, 0.0, 0.0, 0.0], [0.0, -2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 2.0]])
    real = FeatureSet(
        sample_ids=[f"s{i}" for i in range(96)],
        features=centers.repeat_interleave(32, dim=0) + 0.1 * torch.randn(96, 4, generator=g),
        class_ids=torch.arange(3).repeat_interleave(32),
    )
    semantics = {c: torch.eye(3)[c] for c in range(3)}
    shuffled = {c: semantics[(c + 1) % 3] for c in range(3)}

    service = GanService(tiny_config)
    bundle = service.train_gan(real, semantics)
    matched = service.synthesize(bundle, semantics, [0, 1, 2], n_per_class=200)
    mismatched = service.synthesize(bundle, shuffled, [0, 1, 2], n_per_class=200)
    assert _class_mean_distance(mismatched, real) > _class_mean_distance(matched, real)
