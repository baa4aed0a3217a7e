"""Базовый пакет конвейера ZSUGR.

Двухэтапное распознавание жестов водолазов без обучающих примеров (zero-shot):
трансформер GCAT строит признаки жестов, условный WGAN синтезирует признаки
невиданных классов, финальный softmax-классификатор и протокол оценки CZSL/GZSL.
"""

__version__ = "0.3.0"
