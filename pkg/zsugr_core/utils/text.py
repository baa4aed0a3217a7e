"""
Текстовые утилиты: безопасные ключи для имён файлов и форматирование чисел в отчётах.
"""

from __future__ import annotations

import re


def make_safe_key(label: str) -> str:
    """
    Преобразует произвольную строку в безопасный технический ключ.
    Используется для имён файлов рисунков (например, имя класса жеста).
    Оставляет только латинские буквы и цифры, заменяя всё остальное на подчеркивание.
    """
    return re.sub(r"[^0-9a-zA-Z]+", "_", label).strip("_").lower()


def format_pm(mean: float, std: float, digits: int = 2) -> str:
    """Форматирует пару среднее/отклонение как '45.91 ± 4.71'."""
    return f"{mean:.{digits}f} ± {std:.{digits}f}"
