"""
Иерархия исключений конвейера.
Каждое исключение несёт код завершения процесса, который возвращает CLI:
0 - успех, 2 - ошибка конфигурации, 3 - нет артефакта предыдущей стадии, 4 - численный сбой.
"""

from __future__ import annotations


class ZsugrError(Exception):
    """Базовая ошибка конвейера. Код завершения по умолчанию - 1."""

    exit_code = 1


class ConfigError(ZsugrError):
    """Некорректная конфигурация: неизвестное значение перечисления, неверная размерность, путь и т.п."""

    exit_code = 2


class ManifestError(ConfigError):
    """Ошибка разбора манифеста изображений (неизвестный класс, дубликат sample_id, пустой файл)."""


class MissingArtifactError(ZsugrError):
    """
    Нет артефакта, который должна была оставить предыдущая стадия.
    В сообщении указывается команда, которую нужно запустить.
    """

    exit_code = 3

    def __init__(self, artifact: str, command: str):
        self.artifact = artifact
        self.command = command
        super().__init__(f"не найден артефакт {artifact}; сначала выполните команду '{command}'")


class NumericalError(ZsugrError):
    """Нечисловые значения (NaN/Inf) или расходимость при обучении."""

    exit_code = 4


class ProviderError(ZsugrError):
    """Провайдер не смог вернуть признаки для образца (файл не читается, адаптер недоступен)."""

    def __init__(self, sample_id: str, reason: str):
        self.sample_id = sample_id
        super().__init__(f"провайдер не обработал образец {sample_id}: {reason}")


class DataError(ZsugrError):
    """Входные данные не подходят для операции (пустая выборка, класс без признаков и т.п.)."""
