"""
Стабильное хеширование конфигураций и файлов, производные сиды для генераторов случайных чисел.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Union


def stable_hash(payload: Any, length: int = 16) -> str:
    """
    Хеш произвольной JSON-совместимой структуры.
    Ключи сортируются, поэтому порядок полей в словарях не влияет на результат.
    """
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:length]


def file_sha256(path: Union[str, Path]) -> str:
    """SHA-256 содержимого файла, читается блоками по 1 МиБ."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(seed: int, purpose: str) -> int:
    """
    Производный сид для отдельного потока случайных чисел.
    Например, derive_seed(7, "split/0") и derive_seed(7, "gan/noise") независимы,
    а добавление нового потока не сдвигает уже существующие.
    """
    h = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    # torch.Generator.manual_seed принимает 64-битное значение; берём 63 бита, чтобы остаться положительными
    return int.from_bytes(h[:8], "big") & ((1 << 63) - 1)
