"""Пакет данных: манифест изображений и разбиения seen/unseen."""
