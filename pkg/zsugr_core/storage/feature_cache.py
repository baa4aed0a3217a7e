"""
Модуль кэша признаков жестов.
Сохраняет признаки по спискам образцов (roster) на диск (файловый кэш) или в оперативную память.
Синтетические признаки хранятся в том же формате с флагом synthetic=true.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch
from pydantic import BaseModel

from ..errors import DataError, MissingArtifactError

CACHE_INFO_FILE = "cache.json"


@dataclass
class FeatureSet:
    """
    Набор признаков: матрица N × d, идентификаторы образцов и классов в одном порядке.
    Для синтетических признаков sample_id имеет вид syn:<class_id>:<i>.
    """

    sample_ids: List[str]
    features: torch.Tensor
    class_ids: torch.Tensor
    synthetic: bool = False

    def __post_init__(self):
        self.class_ids = torch.as_tensor(self.class_ids, dtype=torch.long)
        if self.features.dim() != 2:
            raise DataError(f"матрица признаков должна быть двумерной, получено {tuple(self.features.shape)}")
        if not (len(self.sample_ids) == self.features.size(0) == self.class_ids.numel()):
            raise DataError("длины sample_ids, features и class_ids не совпадают")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def dim(self) -> int:
        return int(self.features.size(1))

    @classmethod
    def empty(cls, dim: int, synthetic: bool = False) -> "FeatureSet":
        return cls(sample_ids=[], features=torch.zeros(0, dim), class_ids=torch.zeros(0, dtype=torch.long),
                   synthetic=synthetic)

    def select_classes(self, class_ids: Sequence[int]) -> "FeatureSet":
        """Подмножество строк, чьи классы входят в class_ids (порядок строк сохраняется)."""
        keep = torch.isin(self.class_ids, torch.as_tensor(list(class_ids), dtype=torch.long))
        index = keep.nonzero(as_tuple=True)[0]
        return FeatureSet(
            sample_ids=[self.sample_ids[i] for i in index.tolist()],
            features=self.features[index],
            class_ids=self.class_ids[index],
            synthetic=self.synthetic,
        )

    def class_counts(self) -> Dict[int, int]:
        ids, counts = torch.unique(self.class_ids, return_counts=True)
        return {int(c): int(n) for c, n in zip(ids, counts)}

    def to_payload(self) -> dict:
        return {
            "sample_ids": list(self.sample_ids),
            "features": self.features.detach().cpu().contiguous(),
            "class_ids": self.class_ids.cpu(),
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FeatureSet":
        return cls(
            sample_ids=list(payload["sample_ids"]),
            features=payload["features"],
            class_ids=payload["class_ids"],
            synthetic=bool(payload.get("synthetic", False)),
        )


class CacheInfo(BaseModel):
    """Описание содержимого каталога кэша (cache.json)."""

    feature_dim: int
    provider_fingerprint: str = ""
    synthetic: bool = False
    rosters: Dict[str, int] = {}


class BaseFeatureCache:
    """
    Абстрактный интерфейс кэша признаков.
    Определяет методы, которые должны реализовать конкретные хранилища (диск или RAM).
    """

    def save(self, roster: str, features: FeatureSet, provider_fingerprint: str = "") -> None:
        """Сохраняет набор признаков под именем списка образцов."""
        raise NotImplementedError

    def load(self, roster: str) -> FeatureSet:
        """Загружает набор признаков; если его нет - MissingArtifactError."""
        raise NotImplementedError

    def exists(self, roster: str) -> bool:
        """Есть ли в кэше набор с таким именем."""
        raise NotImplementedError

    def rosters(self) -> List[str]:
        """Имена сохранённых наборов."""
        raise NotImplementedError


class FileFeatureCache(BaseFeatureCache):
    """
    Файловый кэш: <каталог>/<roster>.pt (torch.save) и общий cache.json с размерностью,
    отпечатком провайдера и флагом synthetic.
    """

    def __init__(self, directory: Path, producer: str = "extract"):
        self.directory = Path(directory)
        self.producer = producer
        self.logger = logging.getLogger(self.__class__.__name__)

    def path_for(self, roster: str) -> Path:
        return self.directory / f"{roster}.pt"

    def _info(self) -> Optional[CacheInfo]:
        info_path = self.directory / CACHE_INFO_FILE
        if not info_path.exists():
            return None
        return CacheInfo.model_validate_json(info_path.read_text(encoding="utf-8"))

    def save(self, roster: str, features: FeatureSet, provider_fingerprint: str = "") -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        torch.save(features.to_payload(), self.path_for(roster))

        info = self._info() or CacheInfo(
            feature_dim=features.dim, provider_fingerprint=provider_fingerprint, synthetic=features.synthetic
        )
        if info.feature_dim != features.dim:
            raise DataError(f"кэш {self.directory}: размерность {features.dim} не совпадает с {info.feature_dim}")
        info.rosters[roster] = len(features)
        info.rosters = dict(sorted(info.rosters.items()))
        (self.directory / CACHE_INFO_FILE).write_text(info.model_dump_json(indent=2) + "\n", encoding="utf-8")
        self.logger.info("Сохранено %d признаков (%s) в %s", len(features), roster, self.path_for(roster))

    def load(self, roster: str) -> FeatureSet:
        path = self.path_for(roster)
        if not path.exists():
            raise MissingArtifactError(str(path), self.producer)
        return FeatureSet.from_payload(torch.load(path, map_location="cpu", weights_only=False))

    def exists(self, roster: str) -> bool:
        return self.path_for(roster).exists()

    def rosters(self) -> List[str]:
        info = self._info()
        return list(info.rosters) if info else []


class MemoryFeatureCache(BaseFeatureCache):
    """
    In-memory реализация кэша признаков.
    Используется в тестах и при прогоне без записи на диск.
    """

    def __init__(self, producer: str = "extract"):
        self.producer = producer
        self._sets: Dict[str, FeatureSet] = {}

    def save(self, roster: str, features: FeatureSet, provider_fingerprint: str = "") -> None:
        self._sets[roster] = features

    def load(self, roster: str) -> FeatureSet:
        if roster not in self._sets:
            raise MissingArtifactError(f"memory:{roster}", self.producer)
        return self._sets[roster]

    def exists(self, roster: str) -> bool:
        return roster in self._sets

    def rosters(self) -> List[str]:
        return sorted(self._sets)


def feature_cache_factory(directory: Optional[Path], producer: str = "extract") -> BaseFeatureCache:
    """
    Фабричный метод для выбора стратегии хранения.
    Если задан каталог - возвращает FileFeatureCache, иначе MemoryFeatureCache.
    """
    if directory is not None:
        return FileFeatureCache(Path(directory), producer)
    return MemoryFeatureCache(producer)
