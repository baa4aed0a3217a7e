#!/usr/bin/env python3
"""
Точка входа в приложение.
Загружает переменные окружения, настраивает логирование и передаёт аргументы командной строки
приложению конвейера, код завершения которого становится кодом процесса.
"""

from __future__ import annotations

import logging
import os
import sys

from dotenv import load_dotenv

# Загрузка переменных окружения из .env (например, ZSUGR_RUN_OUTPUT_DIR)
load_dotenv(os.path.join(os.path.dirname(__file__), ".env"))

from zsugr_core.config import setup_logging  # noqa: E402
from zsugr_core.pipeline_app import PipelineApplication  # noqa: E402


def main() -> int:
    """Основная функция запуска."""
    setup_logging(logging.INFO)
    app = PipelineApplication()
    return app.run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
