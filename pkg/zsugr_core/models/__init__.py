"""Нейросетевые модули: трансформер GCAT и генератор признаков."""
