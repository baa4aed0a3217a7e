"""
Сервис первого этапа: обучение GCAT с классификатором Φ_c, инициализированным семантикой
видимых классов, извлечение признаков жестов и карты внимания декодера.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import RunConfig
from ..data.manifest import SampleRecord
from ..data.splits import SplitSpec
from ..errors import ConfigError, DataError, NumericalError
from ..models.gcat import GatedCrossAttentionTransformer, SemanticClassifierHead
from ..storage.feature_cache import FeatureSet
from ..utils.hashing import derive_seed
from .providers import BaseProvider


@dataclass
class Stage1Result:
    """Результат первого этапа: обученная модель, голова Φ_c и кривая потерь по эпохам."""

    model: GatedCrossAttentionTransformer
    head: Optional[SemanticClassifierHead]
    epoch_losses: List[float] = field(default_factory=list)
    train_accuracy: float = 0.0


def _batches(items: Sequence, size: int) -> List[Sequence]:
    return [items[i:i + size] for i in range(0, len(items), size)]


class GcatService:
    """
    Обучение и инференс трансформера GCAT.
    Провайдер признаков внедряется через конструктор; сервис не хранит состояния между вызовами.
    """

    def __init__(self, config: RunConfig, provider: BaseProvider):
        self.config = config
        self.settings = config.gcat
        self.provider = provider
        self.logger = logging.getLogger(self.__class__.__name__)

    def build_model(self) -> GatedCrossAttentionTransformer:
        """Создаёт модель; начальные веса зависят только от сида запуска."""
        torch.manual_seed(derive_seed(self.config.seed, "gcat/init"))
        return GatedCrossAttentionTransformer.from_settings(self.config.provider, self.settings)

    def build_optimizer(self, parameters) -> torch.optim.Optimizer:
        """AdamW (Adam с раздельным weight decay) с параметрами первого этапа."""
        return torch.optim.AdamW(parameters, lr=self.settings.lr, weight_decay=self.settings.weight_decay)

    def stage1_train(self, split: SplitSpec, records: Dict[str, SampleRecord]) -> Stage1Result:
        """
        Совместно обучает GCAT и Φ_c кросс-энтропией на seen_train_ids.
        Строка i головы Φ_c инициализирована семантикой i-го видимого класса и затем дообучается.
        Для абляции backbone_only обучаемых параметров нет, модель возвращается как есть.
        """
        train = [records[sid] for sid in split.seen_train_ids]
        if not train:
            raise DataError(f"разбиение {split.split_index}: пустой seen_train, обучать нечего")

        model = self.build_model()
        if not model.trainable:
            self.logger.info("Абляция %s: первый этап пропущен.", self.settings.ablation)
            return Stage1Result(model=model.eval(), head=None)

        label_of = {class_id: i for i, class_id in enumerate(split.seen_classes)}
        head = SemanticClassifierHead(self.provider.semantics_matrix(split.seen_classes))
        optimizer = self.build_optimizer(list(model.parameters()) + list(head.parameters()))
        shuffle = torch.Generator().manual_seed(derive_seed(self.config.seed, f"gcat/shuffle/{split.split_index}"))
        torch.manual_seed(derive_seed(self.config.seed, f"gcat/dropout/{split.split_index}"))

        result = Stage1Result(model=model, head=head)
        self.logger.info(
            "Разбиение %d: обучение GCAT (%s) на %d образцах, %d эпох.",
            split.split_index, self.settings.ablation, len(train), self.settings.epochs,
        )
        for epoch in range(1, self.settings.epochs + 1):
            model.train()
            head.train()
            order = torch.randperm(len(train), generator=shuffle).tolist()
            total_loss, correct = 0.0, 0
            for batch_index in _batches(order, self.settings.batch_size):
                batch = [train[i] for i in batch_index]
                v_b, v_c = self.provider.batch(batch)
                labels = torch.tensor([label_of[r.class_id] for r in batch], dtype=torch.long)

                logits = head(model(v_b, v_c))
                loss = F.cross_entropy(logits, labels)
                if not torch.isfinite(loss):
                    raise NumericalError(f"первый этап, эпоха {epoch}: нечисловая функция потерь")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

                total_loss += loss.item() * len(batch)
                correct += int((logits.argmax(dim=1) == labels).sum())
            result.epoch_losses.append(total_loss / len(train))
            result.train_accuracy = 100.0 * correct / len(train)
            self.logger.info(
                "Эпоха %d/%d: loss=%.4f, точность на обучении %.2f%%",
                epoch, self.settings.epochs, result.epoch_losses[-1], result.train_accuracy,
            )
        model.eval()
        head.eval()
        return result

    @torch.no_grad()
    def extract_features(
        self,
        model: GatedCrossAttentionTransformer,
        records: Sequence[SampleRecord],
        workers: int = 1,
    ) -> FeatureSet:
        """
        Признаки жестов для списка образцов в режиме инференса.
        Батчи могут обрабатываться в нескольких потоках; порядок результатов совпадает с порядком входа.
        """
        model.eval()
        records = list(records)
        if not records:
            return FeatureSet.empty(model.feature_dim)

        def run(batch: Sequence[SampleRecord]) -> torch.Tensor:
            # Режим градиентов не наследуется потоками пула
            with torch.no_grad():
                v_b, v_c = self.provider.batch(batch)
                return model(v_b, v_c)

        chunks = _batches(records, self.settings.batch_size)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(run, chunks))
        else:
            outputs = [run(chunk) for chunk in chunks]

        features = torch.cat(outputs)
        if not torch.isfinite(features).all():
            raise NumericalError("извлечение признаков: нечисловые значения")
        return FeatureSet(
            sample_ids=[r.sample_id for r in records],
            features=features,
            class_ids=torch.tensor([r.class_id for r in records], dtype=torch.long),
        )

    @torch.no_grad()
    def attention_maps(self, model: GatedCrossAttentionTransformer, record: SampleRecord) -> List[torch.Tensor]:
        """
        Карты внимания левой ветви декодера: по одной карте H′×W′ на блок.
        Веса усредняются по головам и запросам; каждая строка исходного внимания суммируется в 1,
        поэтому и карта суммируется в 1.
        """
        if model.ablation != "full":
            raise ConfigError(f"карты внимания недоступны для абляции {model.ablation}")
        model.eval()
        v_b, v_c = self.provider.batch([record])
        output = model.decode(model.encode(v_b), v_c)
        height, width = model.grid
        return [trace.attn_left[0].mean(dim=(0, 1)).view(height, width) for trace in output.traces]


def count_parameters(module: Optional[nn.Module]) -> int:
    return sum(p.numel() for p in module.parameters()) if module is not None else 0
