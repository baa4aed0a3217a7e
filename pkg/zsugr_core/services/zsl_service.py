"""
Сервис финального классификатора: сборка обучающей выборки из реальных признаков видимых
и синтетических признаков невиданных классов, обучение линейного softmax-классификатора
и предсказания CZSL/GZSL с ограничением пространства меток.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import RunConfig
from ..errors import ConfigError, DataError
from ..storage.artifacts import load_checkpoint, save_checkpoint
from ..storage.feature_cache import FeatureSet
from ..utils.hashing import derive_seed

MODES = ("czsl", "gzsl")
PREDICTION_COLUMNS = ("sample_id", "true", "predicted", "top1", "p1", "top2", "p2", "top3", "p3")


@dataclass
class TrainingSet:
    """Размеченная выборка для классификатора и упорядоченное пространство меток."""

    features: FeatureSet
    label_order: List[int]
    mode: str


@dataclass
class ClassifierWeights:
    """Линейное отображение d → n_classes со смещением и таблица порядка классов."""

    linear: nn.Linear
    label_order: List[int]

    @property
    def n_classes(self) -> int:
        return len(self.label_order)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features)


@dataclass
class PredictionResult:
    """Предсказание для образца: вероятности идут в порядке label_order (суженного пространства меток)."""

    sample_id: str
    true_class: int
    predicted_class: int
    probabilities: torch.Tensor
    label_order: List[int]

    def top_k(self, k: int = 3) -> List[tuple]:
        k = min(k, len(self.label_order))
        values, index = torch.topk(self.probabilities, k)
        return [(self.label_order[int(i)], float(v)) for v, i in zip(values, index)]


def build_training_set(
    real_seen: FeatureSet,
    synthetic_unseen: FeatureSet,
    mode: str,
    seen_classes: Sequence[int],
    unseen_classes: Sequence[int],
) -> TrainingSet:
    """
    czsl - только синтетические признаки невиданных классов (метки из 𝒰);
    gzsl - объединение реальных видимых и синтетических невиданных (метки из 𝒮 ∪ 𝒰).
    Класс без единого признака - ошибка с его идентификатором.
    """
    if mode not in MODES:
        raise ConfigError(f"неизвестный режим обучающей выборки {mode!r}")
    unseen = sorted(int(c) for c in unseen_classes)
    parts = [synthetic_unseen.select_classes(unseen)]
    expected = list(unseen)
    if mode == "gzsl":
        seen = sorted(int(c) for c in seen_classes)
        parts.insert(0, real_seen.select_classes(seen))
        expected = seen + unseen

    counts: Dict[int, int] = {}
    for part in parts:
        for class_id, n in part.class_counts().items():
            counts[class_id] = counts.get(class_id, 0) + n
    for class_id in expected:
        if counts.get(class_id, 0) == 0:
            raise DataError(f"класс {class_id}: нет ни одного признака для обучения классификатора")

    combined = FeatureSet(
        sample_ids=[sid for part in parts for sid in part.sample_ids],
        features=torch.cat([part.features for part in parts]),
        class_ids=torch.cat([part.class_ids for part in parts]),
        synthetic=mode == "czsl",
    )
    return TrainingSet(features=combined, label_order=sorted(expected), mode=mode)


class ZslService:
    """Обучение и применение финального линейного softmax-классификатора Φ_cls."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.settings = config.classifier
        self.logger = logging.getLogger(self.__class__.__name__)

    def train_classifier(self, training_set: TrainingSet, purpose: str = "classifier") -> ClassifierWeights:
        """
        Кросс-энтропия, Adam. При batch_size = 0 каждый шаг - полный батч, поэтому результат
        не зависит от порядка строк выборки.
        """
        s = self.settings
        data = training_set.features
        if len(data) == 0:
            raise DataError("обучающая выборка классификатора пуста")
        index_of = {c: i for i, c in enumerate(training_set.label_order)}
        targets = torch.tensor([index_of[int(c)] for c in data.class_ids], dtype=torch.long)
        x = data.features.detach()

        torch.manual_seed(derive_seed(self.config.seed, f"{purpose}/init"))
        linear = nn.Linear(data.dim, len(training_set.label_order))
        optimizer = torch.optim.Adam(linear.parameters(), lr=s.lr)
        shuffle = torch.Generator().manual_seed(derive_seed(self.config.seed, f"{purpose}/shuffle"))
        batch_size = s.batch_size or len(data)

        for epoch in range(1, s.epochs + 1):
            order = torch.randperm(len(data), generator=shuffle) if s.batch_size else torch.arange(len(data))
            total = 0.0
            for start in range(0, len(data), batch_size):
                index = order[start:start + batch_size]
                loss = F.cross_entropy(linear(x[index]), targets[index])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * len(index)
            if epoch == s.epochs or epoch % 10 == 0:
                self.logger.info("Классификатор %s, эпоха %d/%d: loss=%.4f",
                                 training_set.mode, epoch, s.epochs, total / len(data))
        linear.eval()
        return ClassifierWeights(linear=linear, label_order=list(training_set.label_order))

    @staticmethod
    @torch.no_grad()
    def predict(
        weights: ClassifierWeights,
        features: FeatureSet,
        restrict_to: Sequence[int],
    ) -> List[PredictionResult]:
        """
        argmax по суженному набору классов; вероятности перенормированы по этому набору
        (softmax по логитам разрешённых классов).
        """
        restriction = sorted(set(int(c) for c in restrict_to))
        if not restriction:
            raise DataError("пустое ограничение пространства меток")
        outside = [c for c in restriction if c not in weights.label_order]
        if outside:
            raise ConfigError(f"классы {outside} не входят в пространство меток классификатора")
        columns = torch.tensor([weights.label_order.index(c) for c in restriction], dtype=torch.long)
        if len(features) == 0:
            return []

        probabilities = F.softmax(weights.logits(features.features)[:, columns], dim=1)
        best = probabilities.argmax(dim=1)
        return [
            PredictionResult(
                sample_id=sample_id,
                true_class=int(features.class_ids[i]),
                predicted_class=restriction[int(best[i])],
                probabilities=probabilities[i],
                label_order=restriction,
            )
            for i, sample_id in enumerate(features.sample_ids)
        ]

    def save_weights(self, weights: ClassifierWeights, path: Union[str, Path], head: str) -> Path:
        return save_checkpoint(
            path,
            "classifier",
            {"linear": weights.linear},
            self.config.as_dict(),
            extra={"label_order": weights.label_order, "head": head, "feature_dim": weights.linear.in_features},
        )

    def load_weights(self, path: Union[str, Path]) -> ClassifierWeights:
        payload = load_checkpoint(path, "classifier", "train-classifier")
        extra = payload["extra"]
        linear = nn.Linear(extra["feature_dim"], len(extra["label_order"]))
        linear.load_state_dict(payload["modules"]["linear"])
        return ClassifierWeights(linear=linear.eval(), label_order=list(extra["label_order"]))


def export_predictions(
    predictions: Sequence[PredictionResult],
    path: Union[str, Path],
    class_names: Optional[Sequence[str]] = None,
) -> Path:
    """Выгружает предсказания в CSV: sample_id, истинный и предсказанный класс, топ-3 с вероятностями."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)

    def name(class_id: int) -> str:
        return class_names[class_id] if class_names else str(class_id)

    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for p in predictions:
            row = [p.sample_id, name(p.true_class), name(p.predicted_class)]
            top = p.top_k(3)
            for class_id, probability in top + [(None, None)] * (3 - len(top)):
                row += ["", ""] if class_id is None else [name(class_id), f"{probability:.6f}"]
            writer.writerow(row)
    return out
