"""
Модуль для чтения манифеста размеченных изображений жестов.
Манифест - CSV в UTF-8 с заголовком (sample_id, image_ref, class_name).
Реальная раскладка каталогов CADDY приводится к этому формату отдельным конвертером.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from ..errors import ManifestError
from ..ui.messages import CADDIAN_CLASSES

MANIFEST_COLUMNS = ("sample_id", "image_ref", "class_name")

# Префикс ссылок синтетических образцов: synth:<class_id>:<index>
SYNTHETIC_REF_PREFIX = "synth:"

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GestureClass:
    """Класс жеста: непрерывный индекс в [0, N) и человекочитаемое имя."""

    id: int
    name: str


@dataclass(frozen=True)
class SampleRecord:
    """
    Одна строка манифеста: уникальный идентификатор образца, ссылка на изображение
    (путь к файлу или синтетический сид) и идентификатор класса.
    """

    sample_id: str
    image_ref: str
    class_id: int


def build_classes(class_names: Sequence[str] = CADDIAN_CLASSES) -> List[GestureClass]:
    """Реестр классов: идентификатор - позиция имени в списке."""
    names = [str(n) for n in class_names]
    if len(set(names)) != len(names) or not all(n.strip() for n in names):
        raise ManifestError("имена классов должны быть уникальны и непусты")
    return [GestureClass(id=i, name=name) for i, name in enumerate(names)]


def load_manifest(
    source: Union[str, Path],
    class_names: Sequence[str] = CADDIAN_CLASSES,
) -> Tuple[List[SampleRecord], List[GestureClass]]:
    """
    Читает манифест и возвращает записи в порядке файла и полный реестр классов.

    Ошибки:
        - файл не найден или пуст → ManifestError ("no records");
        - неизвестное имя класса → ManifestError с номером строки;
        - повторный sample_id → ManifestError с номером строки.
    """
    path = Path(source)
    if not path.exists():
        raise ManifestError(f"манифест не найден: {path}")

    classes = build_classes(class_names)
    by_name: Dict[str, int] = {c.name: c.id for c in classes}
    records: List[SampleRecord] = []
    seen_ids: Dict[str, int] = {}

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in MANIFEST_COLUMNS if col not in header]
        if not header:
            raise ManifestError(f"no records: манифест {path} пуст")
        if missing:
            raise ManifestError(f"в заголовке манифеста {path} нет колонок: {', '.join(missing)}")
        # Строка 1 - заголовок, данные начинаются со строки 2
        for row_number, row in enumerate(reader, start=2):
            sample_id = (row.get("sample_id") or "").strip()
            image_ref = (row.get("image_ref") or "").strip()
            class_name = (row.get("class_name") or "").strip()
            if not sample_id:
                raise ManifestError(f"строка {row_number}: пустой sample_id")
            if class_name not in by_name:
                raise ManifestError(f"строка {row_number}: неизвестный класс '{class_name}'")
            if sample_id in seen_ids:
                raise ManifestError(
                    f"строка {row_number}: повторный sample_id '{sample_id}' (впервые в строке {seen_ids[sample_id]})"
                )
            seen_ids[sample_id] = row_number
            records.append(SampleRecord(sample_id=sample_id, image_ref=image_ref, class_id=by_name[class_name]))

    if not records:
        raise ManifestError(f"no records: в манифесте {path} нет строк данных")
    logger.info("Манифест %s: %d записей, %d классов.", path, len(records), len(classes))
    return records, classes


def write_synthetic_manifest(
    path: Union[str, Path],
    per_class_counts: Sequence[int],
    class_names: Sequence[str] = CADDIAN_CLASSES,
) -> Path:
    """
    Записывает синтетический манифест: для класса c создаётся per_class_counts[c] строк
    со ссылками вида synth:<c>:<i>, которые понимает синтетический провайдер.
    """
    if len(per_class_counts) != len(class_names):
        raise ManifestError("число счётчиков должно совпадать с числом классов")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for class_id, (name, count) in enumerate(zip(class_names, per_class_counts)):
            for i in range(int(count)):
                writer.writerow((f"{name}_{i:05d}", f"{SYNTHETIC_REF_PREFIX}{class_id}:{i}", name))
    return out


def long_tail_counts(total: int, n_classes: int, decay: float = 0.82) -> List[int]:
    """
    Длиннохвостое распределение числа образцов по классам с заданной суммой
    (в реальном наборе 18 478 изображений распределены по 16 классам очень неравномерно).
    """
    weights = [decay ** i for i in range(n_classes)]
    scale = total / sum(weights)
    counts = [max(1, int(w * scale)) for w in weights]
    # Остаток от округления отдаём самым крупным классам
    i = 0
    while sum(counts) < total:
        counts[i % n_classes] += 1
        i += 1
    while sum(counts) > total:
        j = counts.index(max(counts))
        counts[j] -= 1
    return counts
