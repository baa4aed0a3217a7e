"""Тексты, таблицы и рисунки для отчётов."""
