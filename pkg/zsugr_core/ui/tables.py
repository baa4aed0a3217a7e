"""Текстовые таблицы результатов: строка на метод, колонки U_czsl, S_gzsl, U_gzsl, H (среднее ± отклонение)."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

from ..utils.text import format_pm
from .messages import TABLE_COLUMNS


def _render(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *rows)]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def fmt(cells: Sequence[str]) -> str:
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

    return "\n".join([line, fmt(header), line, *(fmt(r) for r in rows), line]) + "\n"


def results_table(rows: Sequence[Tuple[str, Dict[str, Tuple[float, float]]]]) -> str:
    """
    rows: [(имя метода, {метрика: (среднее, отклонение)})].
    Отсутствующая метрика печатается как «-».
    """
    body: List[List[str]] = []
    for method, metrics in rows:
        cells = [method]
        for name in TABLE_COLUMNS[1:]:
            cells.append(format_pm(*metrics[name]) if name in metrics else "-")
        body.append(cells)
    return _render(TABLE_COLUMNS, body)


def per_split_table(rows: Sequence[Tuple[int, Dict[str, float]]]) -> str:
    """Метрики по каждому разбиению отдельно."""
    header = ("Split",) + TABLE_COLUMNS[1:]
    body = [[str(index)] + [f"{metrics[name]:.2f}" if name in metrics else "-" for name in TABLE_COLUMNS[1:]]
            for index, metrics in rows]
    return _render(header, body)
