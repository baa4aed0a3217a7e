"""Вспомогательные утилиты конвейера."""
