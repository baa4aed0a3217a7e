"""
Оценка по протоколу ZSL: top-1 точность, усреднённая по классам (и микро-точность рядом),
CZSL на невиданных, GZSL seen/unseen и их гармоническое среднее, агрегация по разбиениям,
матрицы ошибок и базовый косинусный классификатор.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel
from sklearn.metrics import confusion_matrix

from ..errors import DataError
from ..storage.feature_cache import FeatureSet
from .zsl_service import PredictionResult

REPORT_SCHEMA_VERSION = 1
METRICS = ("U_czsl", "S_gzsl", "U_gzsl", "H")

logger = logging.getLogger(__name__)


@dataclass
class TopOneResult:
    """Точность по классам, число образцов, среднее по классам и микро-точность (всё в процентах)."""

    per_class: Dict[int, float]
    counts: Dict[int, int]
    mean: float
    micro: float
    excluded: List[int] = field(default_factory=list)


def per_class_top1(predictions: Sequence[PredictionResult], label_set: Sequence[int]) -> TopOneResult:
    """
    accuracy(c) = верных(c) / всего(c); итоговое число - невзвешенное среднее по классам с образцами.
    Классы без образцов исключаются и перечисляются в excluded.
    """
    if not predictions:
        raise DataError("пустой список предсказаний")
    labels = sorted(set(int(c) for c in label_set))
    counts = {c: 0 for c in labels}
    correct = {c: 0 for c in labels}
    for p in predictions:
        if p.true_class not in counts:
            raise DataError(f"образец {p.sample_id}: истинный класс {p.true_class} вне набора меток")
        counts[p.true_class] += 1
        correct[p.true_class] += int(p.predicted_class == p.true_class)

    per_class = {c: 100.0 * correct[c] / counts[c] for c in labels if counts[c] > 0}
    excluded = [c for c in labels if counts[c] == 0]
    if excluded:
        logger.warning("Классы без образцов исключены из усреднения: %s", excluded)
    return TopOneResult(
        per_class=per_class,
        counts={c: n for c, n in counts.items() if n > 0},
        mean=float(np.mean(list(per_class.values()))),
        micro=100.0 * sum(correct.values()) / len(predictions),
        excluded=excluded,
    )


def harmonic_mean(s: float, u: float) -> float:
    """H = 2su / (s + u); 0, если s + u = 0."""
    if s + u <= 0:
        return 0.0
    return 2.0 * s * u / (s + u)


class GzslScores(BaseModel):
    S_gzsl: float
    U_gzsl: float
    H: float


class MicroScores(GzslScores):
    U_czsl: float


class EvalReport(BaseModel):
    """Отчёт по одному разбиению. Все точности в процентах."""

    schema_version: int = REPORT_SCHEMA_VERSION
    split_index: int
    U_czsl: float
    S_gzsl: float
    U_gzsl: float
    H: float
    micro: MicroScores
    per_class: Dict[str, float]
    n_samples: Dict[str, int]
    excluded_classes: List[int] = []
    baseline: Optional[GzslScores] = None

    def metric(self, name: str) -> float:
        return float(getattr(self, name))


class MetricSummary(BaseModel):
    mean: float
    std: float


class AggregateReport(BaseModel):
    """Среднее и стандартное отклонение (популяционное) каждой метрики по разбиениям."""

    schema_version: int = REPORT_SCHEMA_VERSION
    std_kind: str = "population"
    n_splits: int
    split_indices: List[int]
    metrics: Dict[str, MetricSummary]
    micro: Dict[str, MetricSummary]
    baseline: Optional[Dict[str, MetricSummary]] = None


def _summary(values: Sequence[float]) -> MetricSummary:
    array = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(array.mean()), std=float(array.std(ddof=0)))


def evaluate_split(
    split_index: int,
    czsl: Sequence[PredictionResult],
    gzsl_seen: Sequence[PredictionResult],
    gzsl_unseen: Sequence[PredictionResult],
    seen_classes: Sequence[int],
    unseen_classes: Sequence[int],
    class_names: Optional[Sequence[str]] = None,
    baseline_seen: Optional[Sequence[PredictionResult]] = None,
    baseline_unseen: Optional[Sequence[PredictionResult]] = None,
) -> EvalReport:
    """
    U_czsl - по невиданным образцам с ограничением на 𝒰; S_gzsl и U_gzsl - по отложенным видимым
    и по невиданным образцам соответственно, с полным пространством 𝒮 ∪ 𝒰.
    """
    u_czsl = per_class_top1(czsl, unseen_classes)
    s_gzsl = per_class_top1(gzsl_seen, seen_classes)
    u_gzsl = per_class_top1(gzsl_unseen, unseen_classes)

    def key(class_id: int) -> str:
        return class_names[class_id] if class_names else str(class_id)

    per_class = {key(c): v for c, v in sorted({**s_gzsl.per_class, **u_gzsl.per_class}.items())}
    counts = {key(c): n for c, n in sorted({**s_gzsl.counts, **u_gzsl.counts}.items())}

    baseline = None
    if baseline_seen is not None and baseline_unseen is not None:
        b_s = per_class_top1(baseline_seen, seen_classes).mean
        b_u = per_class_top1(baseline_unseen, unseen_classes).mean
        baseline = GzslScores(S_gzsl=b_s, U_gzsl=b_u, H=harmonic_mean(b_s, b_u))

    return EvalReport(
        split_index=split_index,
        U_czsl=u_czsl.mean,
        S_gzsl=s_gzsl.mean,
        U_gzsl=u_gzsl.mean,
        H=harmonic_mean(s_gzsl.mean, u_gzsl.mean),
        micro=MicroScores(
            U_czsl=u_czsl.micro, S_gzsl=s_gzsl.micro, U_gzsl=u_gzsl.micro,
            H=harmonic_mean(s_gzsl.micro, u_gzsl.micro),
        ),
        per_class=per_class,
        n_samples=counts,
        excluded_classes=sorted(set(s_gzsl.excluded + u_gzsl.excluded + u_czsl.excluded)),
        baseline=baseline,
    )


def aggregate_splits(reports: Sequence[EvalReport]) -> AggregateReport:
    """
    Среднее и популяционное стандартное отклонение по ровно переданным отчётам.
    H усредняется по разбиениям, а не пересчитывается из средних S и U.
    """
    if not reports:
        raise DataError("нечего агрегировать: нет отчётов по разбиениям")
    metrics = {name: _summary([r.metric(name) for r in reports]) for name in METRICS}
    micro = {name: _summary([getattr(r.micro, name) for r in reports]) for name in METRICS}
    baseline = None
    if all(r.baseline is not None for r in reports):
        baseline = {
            name: _summary([getattr(r.baseline, name) for r in reports]) for name in ("S_gzsl", "U_gzsl", "H")
        }
    return AggregateReport(
        n_splits=len(reports),
        split_indices=[r.split_index for r in reports],
        metrics=metrics,
        micro=micro,
        baseline=baseline,
    )


@torch.no_grad()
def baseline_cosine_predict(
    features: FeatureSet,
    semantics: Mapping[int, torch.Tensor],
    label_set: Sequence[int],
) -> List[PredictionResult]:
    """
    Нулевой шаг без генератора: класс = argmax по label_set косинусной близости признака
    к семантическому вектору. Вероятности - softmax по косинусам.
    """
    labels = sorted(set(int(c) for c in label_set))
    if not labels:
        raise DataError("пустой набор меток для косинусного классификатора")
    if len(features) == 0:
        return []
    norms = features.features.norm(dim=1)
    zero = (norms == 0).nonzero(as_tuple=True)[0]
    if zero.numel():
        raise DataError(f"образец {features.sample_ids[int(zero[0])]}: нулевая норма признака")

    anchors = torch.stack([semantics[c] for c in labels]).to(features.features.dtype)
    if anchors.size(1) != features.dim:
        raise DataError(f"размерность признаков {features.dim} не совпадает с семантикой {anchors.size(1)}")
    cosine = F.normalize(features.features, dim=1) @ F.normalize(anchors, dim=1).T
    probabilities = F.softmax(cosine, dim=1)
    best = cosine.argmax(dim=1)
    return [
        PredictionResult(
            sample_id=sample_id,
            true_class=int(features.class_ids[i]),
            predicted_class=labels[int(best[i])],
            probabilities=probabilities[i],
            label_order=labels,
        )
        for i, sample_id in enumerate(features.sample_ids)
    ]


@dataclass
class ConfusionMatrix:
    """Квадратная матрица по набору меток; строки - истинный класс, столбцы - предсказанный."""

    labels: List[int]
    matrix: np.ndarray

    def row_sums(self) -> Dict[int, int]:
        return {c: int(n) for c, n in zip(self.labels, self.matrix.sum(axis=1))}

    def to_csv(self, path: Union[str, Path], class_names: Optional[Sequence[str]] = None) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        names = [class_names[c] if class_names else str(c) for c in self.labels]
        with open(out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\predicted"] + names)
            for name, row in zip(names, self.matrix.tolist()):
                writer.writerow([name] + row)
        return out


def confusion(predictions: Sequence[PredictionResult], label_set: Sequence[int]) -> ConfusionMatrix:
    """Счётчики пар (истинный, предсказанный) по набору меток."""
    labels = sorted(set(int(c) for c in label_set))
    if not predictions:
        return ConfusionMatrix(labels=labels, matrix=np.zeros((len(labels), len(labels)), dtype=np.int64))
    y_true = [p.true_class for p in predictions]
    y_pred = [p.predicted_class for p in predictions]
    outside = [p.sample_id for p in predictions if p.true_class not in labels or p.predicted_class not in labels]
    if outside:
        raise DataError(f"классы вне набора меток матрицы ошибок {labels}: образцы {outside[:3]}")
    matrix = confusion_matrix(y_true, y_pred, labels=labels).astype(np.int64)
    return ConfusionMatrix(labels=labels, matrix=matrix)
