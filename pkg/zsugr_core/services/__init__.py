"""Пакет сервисов: провайдеры признаков, обучение GCAT и WGAN, классификатор, оценка."""
