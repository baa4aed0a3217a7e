"""
Сервис второго этапа: обучение условного WGAN-GP на признаках видимых классов
и синтез признаков невиданных классов по их семантике.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import torch

from ..config import RunConfig
from ..errors import DataError, NumericalError
from ..models.featgen import FeatureCritic, FeatureGenerator, critic_loss, generator_loss, sample_noise_pair
from ..storage.artifacts import load_checkpoint, save_checkpoint
from ..storage.feature_cache import FeatureSet
from ..utils.hashing import derive_seed


@dataclass
class GanCurves:
    """Потери по шагам: критик - на каждом своём шаге, генератор - на каждом своём."""

    critic: List[float] = field(default_factory=list)
    generator: List[float] = field(default_factory=list)

    def as_dict(self) -> Dict[str, List[float]]:
        return {"critic": self.critic, "generator": self.generator}


@dataclass
class GanBundle:
    """Обученные генератор и критик с размерностями, нужными для восстановления из чекпоинта."""

    generator: FeatureGenerator
    critic: FeatureCritic
    curves: GanCurves = field(default_factory=GanCurves)

    @property
    def dims(self) -> Dict[str, int]:
        return {
            "noise_dim": self.generator.noise_dim,
            "semantic_dim": self.generator.semantic_dim,
            "feature_dim": self.generator.feature_dim,
        }


def _semantics_rows(semantics: Mapping[int, torch.Tensor], class_ids: torch.Tensor) -> torch.Tensor:
    missing = sorted({int(c) for c in class_ids} - set(semantics))
    if missing:
        raise DataError(f"нет семантики для классов {missing}")
    return torch.stack([semantics[int(c)] for c in class_ids])


class GanService:
    """
    Обучение генератора признаков.
    Потоки случайных чисел (шум, интерполяции ρ, перемешивание) сидируются независимо.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.settings = config.gan
        self.logger = logging.getLogger(self.__class__.__name__)

    def _stream(self, purpose: str) -> torch.Generator:
        return torch.Generator().manual_seed(derive_seed(self.config.seed, purpose))

    def build_bundle(self, feature_dim: int, semantic_dim: int) -> GanBundle:
        s = self.settings
        torch.manual_seed(derive_seed(self.config.seed, "gan/init"))
        return GanBundle(
            generator=FeatureGenerator(s.noise_dim, semantic_dim, feature_dim, s.hidden_dim),
            critic=FeatureCritic(feature_dim, semantic_dim, s.hidden_dim),
        )

    def train_gan(
        self,
        features: FeatureSet,
        semantics: Mapping[int, torch.Tensor],
        split_index: int = 0,
    ) -> GanBundle:
        """
        Чередует critic_steps шагов критика и один шаг генератора (Adam, β1 из настроек).
        Прерывается с NumericalError, если |потеря критика| превышает divergence_limit.
        """
        s = self.settings
        if len(features) == 0:
            raise DataError("обучение WGAN: нет признаков видимых классов")
        real_all = features.features.detach()
        a_all = _semantics_rows(semantics, features.class_ids)
        bundle = self.build_bundle(features.dim, a_all.size(1))
        generator, critic = bundle.generator, bundle.critic

        opt_g = torch.optim.Adam(generator.parameters(), lr=s.lr, betas=(s.beta1, 0.999))
        opt_d = torch.optim.Adam(critic.parameters(), lr=s.lr, betas=(s.beta1, 0.999))
        noise = self._stream(f"gan/noise/{split_index}")
        rho = self._stream(f"gan/rho/{split_index}")
        shuffle = self._stream(f"gan/shuffle/{split_index}")

        self.logger.info(
            "Разбиение %d: обучение WGAN-GP на %d признаках (d=%d), %d эпох.",
            split_index, len(features), features.dim, s.epochs,
        )
        critic_step = 0
        for epoch in range(1, s.epochs + 1):
            generator.train()
            critic.train()
            order = torch.randperm(len(features), generator=shuffle)
            for start in range(0, len(order), s.batch_size):
                index = order[start:start + s.batch_size]
                real, a = real_all[index], a_all[index]

                # Шаг критика: генератор заморожен
                z = torch.randn(len(index), s.noise_dim, generator=noise)
                with torch.no_grad():
                    fake = generator(z, a)
                d_loss = critic_loss(critic, real, fake, a, s.gp_lambda, rho)
                if not torch.isfinite(d_loss) or abs(d_loss.item()) > s.divergence_limit:
                    raise NumericalError(
                        f"WGAN расходится: потеря критика {d_loss.item():.3g} (порог {s.divergence_limit:g})"
                    )
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                bundle.curves.critic.append(d_loss.item())
                critic_step += 1
                self.logger.debug("Шаг критика %d: %.5f", critic_step, d_loss.item())

                if critic_step % s.critic_steps:
                    continue
                # Шаг генератора на том же батче условий
                z1, z2 = sample_noise_pair(len(index), s.noise_dim, noise)
                g_loss = generator_loss(generator, critic, z1, z2, a, s.ms_alpha, noise)
                if not torch.isfinite(g_loss):
                    raise NumericalError("WGAN: нечисловая потеря генератора")
                opt_g.zero_grad()
                g_loss.backward()
                opt_g.step()
                bundle.curves.generator.append(g_loss.item())
                self.logger.debug("Шаг генератора %d: %.5f", len(bundle.curves.generator), g_loss.item())

            last_g = bundle.curves.generator[-1] if bundle.curves.generator else float("nan")
            self.logger.info(
                "Эпоха %d/%d: критик %.4f, генератор %.4f", epoch, s.epochs, bundle.curves.critic[-1], last_g
            )
        generator.eval()
        critic.eval()
        return bundle

    @torch.no_grad()
    def synthesize(
        self,
        bundle: GanBundle,
        semantics: Mapping[int, torch.Tensor],
        class_ids: Sequence[int],
        n_per_class: int,
        split_index: int = 0,
        workers: int = 1,
    ) -> FeatureSet:
        """
        n_per_class признаков для каждого запрошенного класса со свежим шумом на каждый признак.
        Шум каждого класса сидируется отдельно, поэтому результат не зависит от числа воркеров.
        """
        generator = bundle.generator.eval()
        dim = generator.feature_dim

        def run(class_id: int) -> torch.Tensor:
            noise = self._stream(f"gan/synthesize/{split_index}/{class_id}")
            z = torch.randn(n_per_class, generator.noise_dim, generator=noise)
            a = semantics[class_id].unsqueeze(0).expand(n_per_class, -1)
            with torch.no_grad():
                return generator(z, a)

        class_ids = [int(c) for c in class_ids]
        _semantics_rows(semantics, torch.tensor(class_ids, dtype=torch.long))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(run, class_ids))
        else:
            outputs = [run(c) for c in class_ids]

        features = torch.cat(outputs) if outputs else torch.zeros(0, dim)
        if not torch.isfinite(features).all():
            raise NumericalError("синтез признаков: нечисловые значения")
        self.logger.info("Синтезировано %d признаков для %d классов.", features.size(0), len(class_ids))
        return FeatureSet(
            sample_ids=[f"syn:{c}:{i}" for c in class_ids for i in range(n_per_class)],
            features=features,
            class_ids=torch.tensor([c for c in class_ids for _ in range(n_per_class)], dtype=torch.long),
            synthetic=True,
        )

    def save_bundle(self, bundle: GanBundle, path: Union[str, Path]) -> Path:
        return save_checkpoint(
            path,
            "gan",
            {"generator": bundle.generator, "critic": bundle.critic},
            self.config.as_dict(),
            extra={"dims": bundle.dims, "curves": bundle.curves.as_dict()},
        )

    def load_bundle(self, path: Union[str, Path]) -> GanBundle:
        payload = load_checkpoint(path, "gan", "train-gan")
        dims = payload["extra"]["dims"]
        bundle = self.build_bundle(dims["feature_dim"], dims["semantic_dim"])
        bundle.generator.load_state_dict(payload["modules"]["generator"])
        bundle.critic.load_state_dict(payload["modules"]["critic"])
        curves = payload["extra"].get("curves", {})
        bundle.curves = GanCurves(critic=list(curves.get("critic", [])), generator=list(curves.get("generator", [])))
        bundle.generator.eval()
        bundle.critic.eval()
        return bundle
