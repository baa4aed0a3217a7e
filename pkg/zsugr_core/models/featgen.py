"""
Условный генератор признаков (WGAN-GP) с регуляризатором mode-seeking.

Генератор G(z, a) и критик D(x, a) - многослойные перцептроны над конкатенацией входа
и семантического вектора класса. Знаки функций потерь следуют стандартной формулировке WGAN-GP:
критик минимизирует E[D(fake)] − E[D(real)] + λ·GP, генератор максимизирует отношение mode-seeking.
"""

from __future__ import annotations

from typing import Callable, Optional, Tuple

import torch
import torch.nn as nn

from ..errors import NumericalError

# Пары шума с меньшим L1-расстоянием пересэмплируются
MIN_NOISE_DISTANCE = 1e-8

ScoreFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _mlp(in_dim: int, hidden_dim: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden_dim),
        nn.LeakyReLU(0.2),
        nn.Linear(hidden_dim, hidden_dim),
        nn.LeakyReLU(0.2),
        nn.Linear(hidden_dim, out_dim),
    )


class FeatureGenerator(nn.Module):
    """G: concat(z, a) → признак размерности feature_dim (без выходной нелинейности)."""

    def __init__(self, noise_dim: int, semantic_dim: int, feature_dim: int, hidden_dim: int = 4096):
        super().__init__()
        self.noise_dim = noise_dim
        self.semantic_dim = semantic_dim
        self.feature_dim = feature_dim
        self.net = _mlp(noise_dim + semantic_dim, hidden_dim, feature_dim)

    def forward(self, z: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat((z, a), dim=1))


class FeatureCritic(nn.Module):
    """D: concat(x, a) → скалярная оценка «реальности»."""

    def __init__(self, feature_dim: int, semantic_dim: int, hidden_dim: int = 4096):
        super().__init__()
        self.net = _mlp(feature_dim + semantic_dim, hidden_dim, 1)

    def forward(self, x: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat((x, a), dim=1)).squeeze(1)


def gradient_penalty(
    critic: ScoreFn,
    real: torch.Tensor,
    fake: torch.Tensor,
    a: torch.Tensor,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    E[(‖∇_x̂ D(x̂, a)‖₂ − 1)²] по интерполяциям x̂ = ρ·real + (1 − ρ)·fake, ρ ~ U(0, 1) своё для каждой строки.
    """
    rho = torch.rand(real.size(0), 1, generator=generator, dtype=real.dtype, device=real.device)
    interpolates = (rho * real.detach() + (1 - rho) * fake.detach()).requires_grad_(True)
    scores = critic(interpolates, a)
    gradients = torch.autograd.grad(
        outputs=scores,
        inputs=interpolates,
        grad_outputs=torch.ones_like(scores),
        create_graph=True,
        retain_graph=True,
    )[0]
    norms = gradients.norm(2, dim=1)
    if not torch.isfinite(norms).all():
        raise NumericalError("штраф градиента: нечисловая норма градиента критика")
    return ((norms - 1) ** 2).mean()


def critic_loss(
    critic: ScoreFn,
    real: torch.Tensor,
    fake: torch.Tensor,
    a: torch.Tensor,
    gp_lambda: float,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """E[D(fake, a)] − E[D(real, a)] + λ·GP. Критик минимизирует эту величину."""
    loss = critic(fake, a).mean() - critic(real, a).mean()
    if gp_lambda:
        loss = loss + gp_lambda * gradient_penalty(critic, real, fake, a, generator)
    return loss


def mode_seeking_ratio(g1: torch.Tensor, g2: torch.Tensor, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Построчное отношение ‖G(z₁,a) − G(z₂,a)‖₁ / ‖z₁ − z₂‖₁."""
    return (g1 - g2).abs().sum(dim=1) / (z1 - z2).abs().sum(dim=1)


def sample_noise_pair(
    n: int,
    dim: int,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Две независимые выборки шума N(0, I); слишком близкие пары пересэмплируются."""
    z1 = torch.randn(n, dim, generator=generator, dtype=dtype)
    z2 = torch.randn(n, dim, generator=generator, dtype=dtype)
    return z1, resample_close_pairs(z1, z2, generator)


def resample_close_pairs(
    z1: torch.Tensor,
    z2: torch.Tensor,
    generator: Optional[torch.Generator] = None,
    min_distance: float = MIN_NOISE_DISTANCE,
) -> torch.Tensor:
    """Возвращает z2, в котором строки с ‖z₁ − z₂‖₁ < min_distance заменены новыми."""
    z2 = z2.clone()
    close = (z1 - z2).abs().sum(dim=1) < min_distance
    while close.any():
        z2[close] = torch.randn(int(close.sum()), z2.size(1), generator=generator, dtype=z2.dtype)
        close = (z1 - z2).abs().sum(dim=1) < min_distance
    return z2


def generator_loss(
    generator_fn: ScoreFn,
    critic: ScoreFn,
    z1: torch.Tensor,
    z2: torch.Tensor,
    a: torch.Tensor,
    ms_alpha: float,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    −E[D(G(z₁,a), a)] − α·E[отношение mode-seeking].
    Пары шума ближе MIN_NOISE_DISTANCE пересэмплируются до вычисления отношения.
    """
    z2 = resample_close_pairs(z1, z2, generator)
    g1 = generator_fn(z1, a)
    loss = -critic(g1, a).mean()
    if ms_alpha:
        g2 = generator_fn(z2, a)
        loss = loss - ms_alpha * mode_seeking_ratio(g1, g2, z1, z2).mean()
    return loss
