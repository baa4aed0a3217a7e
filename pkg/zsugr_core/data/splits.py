"""
Модуль генерации случайных разбиений классов на видимые (seen) и невиданные (unseen).
Для каждого разбиения часть образцов видимых классов откладывается для теста GZSL
(стратифицированно по классам), остальное идёт в обучение.
"""

from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict

from ..errors import ConfigError
from ..utils.hashing import derive_seed
from .manifest import GestureClass, SampleRecord

logger = logging.getLogger(__name__)


class SplitSpec(BaseModel):
    """
    Разбиение seen/unseen и списки образцов для трёх ролей:
    seen_train_ids - обучение, seen_test_ids - отложенные видимые, unseen_test_ids - все невиданные.
    Списки идентификаторов хранятся в порядке манифеста.
    """

    model_config = ConfigDict(frozen=True)

    split_index: int
    seen_classes: List[int]
    unseen_classes: List[int]
    seen_train_ids: List[str]
    seen_test_ids: List[str]
    unseen_test_ids: List[str]
    rng_seed: int
    schema_version: int = 1

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def round_half_up(value: float) -> int:
    """Округление x.5 вверх (встроенный round() округляет к чётному)."""
    return int(math.floor(value + 0.5))


def _holdout_quotas(counts: Dict[int, int], fraction: float) -> Dict[int, int]:
    """
    Распределяет глобальную квоту round_half_up(fraction · N) по классам методом наибольших остатков.
    Класс, чья собственная доля округляется к нулю, исключается с предупреждением.
    """
    eligible = {c: n for c, n in counts.items() if round_half_up(fraction * n) >= 1}
    for c in sorted(set(counts) - set(eligible)):
        logger.warning("Класс %d слишком мал (%d образцов) для отложенной выборки - пропускаем.", c, counts[c])
    if not eligible:
        return {c: 0 for c in counts}

    target = round_half_up(fraction * sum(eligible.values()))
    quotas = {c: int(math.floor(fraction * n)) for c, n in eligible.items()}
    remainder = target - sum(quotas.values())
    # Наибольшие дробные остатки получают по одному дополнительному образцу; ничьи - по id класса
    order = sorted(eligible, key=lambda c: (-(fraction * eligible[c] - quotas[c]), c))
    for c in order[:max(0, remainder)]:
        quotas[c] += 1
    return {c: quotas.get(c, 0) for c in counts}


def generate_splits(
    classes: Sequence[GestureClass],
    records: Sequence[SampleRecord],
    n_splits: int = 3,
    n_seen: int = 10,
    n_unseen: int = 6,
    holdout_fraction: float = 0.10,
    rng_seed: int = 0,
) -> List[SplitSpec]:
    """
    Генерирует n_splits разбиений. Чистая функция от (манифест, параметры, rng_seed):
    для разбиения i используется производный сид derive_seed(rng_seed, "split/i").

    Классы выбираются равномерно без возвращения; внутри каждого видимого класса
    отложенные образцы выбираются случайно, их число пропорционально размеру класса.
    """
    if n_seen + n_unseen != len(classes):
        raise ConfigError(f"n_seen + n_unseen = {n_seen + n_unseen}, а классов {len(classes)}")
    if not 0 < holdout_fraction < 1:
        raise ConfigError(f"holdout_fraction должна лежать в (0, 1), получено {holdout_fraction}")

    class_ids = sorted(c.id for c in classes)
    by_class: Dict[int, List[str]] = defaultdict(list)
    for record in records:
        by_class[record.class_id].append(record.sample_id)

    splits: List[SplitSpec] = []
    for split_index in range(n_splits):
        sub_seed = derive_seed(rng_seed, f"split/{split_index}")
        rng = random.Random(sub_seed)
        shuffled = list(class_ids)
        rng.shuffle(shuffled)
        seen = sorted(shuffled[:n_seen])
        unseen = sorted(shuffled[n_seen:n_seen + n_unseen])

        quotas = _holdout_quotas({c: len(by_class.get(c, [])) for c in seen}, holdout_fraction)
        holdout: set = set()
        for c in seen:
            ids = list(by_class.get(c, []))
            random.Random(derive_seed(sub_seed, f"class/{c}")).shuffle(ids)
            holdout.update(ids[:quotas[c]])

        seen_set, unseen_set = set(seen), set(unseen)
        seen_train = [r.sample_id for r in records if r.class_id in seen_set and r.sample_id not in holdout]
        seen_test = [r.sample_id for r in records if r.class_id in seen_set and r.sample_id in holdout]
        unseen_test = [r.sample_id for r in records if r.class_id in unseen_set]

        split = SplitSpec(
            split_index=split_index,
            seen_classes=seen,
            unseen_classes=unseen,
            seen_train_ids=seen_train,
            seen_test_ids=seen_test,
            unseen_test_ids=unseen_test,
            rng_seed=sub_seed,
        )
        logger.info(
            "Разбиение %d: seen=%s unseen=%s | обучение %d, отложено %d, невиданные %d",
            split_index, seen, unseen, len(seen_train), len(seen_test), len(unseen_test),
        )
        splits.append(split)
    return splits


def validate_split(
    split: SplitSpec,
    records: Sequence[SampleRecord],
    n_seen: Optional[int] = None,
    n_unseen: Optional[int] = None,
) -> List[str]:
    """
    Проверяет инварианты разбиения относительно манифеста.
    Нарушения возвращаются списком строк (пустой список - разбиение корректно), исключений нет.
    """
    violations: List[str] = []
    seen, unseen = set(split.seen_classes), set(split.unseen_classes)

    for c in sorted(seen & unseen):
        violations.append(f"class overlap: id {c}")
    if n_seen is not None and len(seen) != n_seen:
        violations.append(f"seen class count: {len(seen)} != {n_seen}")
    if n_unseen is not None and len(unseen) != n_unseen:
        violations.append(f"unseen class count: {len(unseen)} != {n_unseen}")

    class_of = {r.sample_id: r.class_id for r in records}
    rosters = {
        "seen_train_ids": split.seen_train_ids,
        "seen_test_ids": split.seen_test_ids,
        "unseen_test_ids": split.unseen_test_ids,
    }
    owner: Dict[str, str] = {}
    for roster_name, ids in rosters.items():
        for sample_id in ids:
            if sample_id in owner:
                violations.append(f"duplicate: sample {sample_id} in {owner[sample_id]} and {roster_name}")
                continue
            owner[sample_id] = roster_name
            if sample_id not in class_of:
                violations.append(f"unknown sample: {sample_id} in {roster_name}")
                continue
            class_id = class_of[sample_id]
            if roster_name == "unseen_test_ids" and class_id not in unseen:
                violations.append(f"leakage: sample {sample_id} of class {class_id} in unseen_test_ids")
            elif roster_name != "unseen_test_ids" and class_id not in seen:
                violations.append(f"seen roster: sample {sample_id} of class {class_id} not in seen classes")

    uncovered = [sid for sid in class_of if sid not in owner]
    if uncovered:
        violations.append(f"coverage: {len(uncovered)} manifest samples in no roster (first: {uncovered[0]})")
    return violations


def save_split(split: SplitSpec, path: Union[str, Path]) -> Path:
    """Сохраняет разбиение одним JSON-документом."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(split.to_json(), encoding="utf-8")
    return out


def load_split(path: Union[str, Path]) -> SplitSpec:
    """Читает разбиение из JSON-документа."""
    return SplitSpec.model_validate_json(Path(path).read_text(encoding="utf-8"))
