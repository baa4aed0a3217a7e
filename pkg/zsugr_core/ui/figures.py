"""
Рисунки: тепловые карты матриц ошибок и карты внимания декодера.
Карты внимания сохраняются без потерь в градациях серого (PNG через Pillow) и как сводный рисунок matplotlib.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from ..services.eval_service import ConfusionMatrix  # noqa: E402


def save_confusion_heatmap(
    matrix: ConfusionMatrix,
    path: Union[str, Path],
    class_names: Optional[Sequence[str]] = None,
    title: str = "GZSL confusion matrix",
) -> Path:
    """Тепловая карта по строкам, нормированным на число образцов класса."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    counts = matrix.matrix.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    names = [class_names[c] if class_names else str(c) for c in matrix.labels]

    size = max(4.0, 0.45 * len(names) + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(normalized, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(names)))
    ax.set_yticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_attention_png(attention: torch.Tensor, path: Union[str, Path], scale: int = 32) -> Path:
    """Карта H′×W′ → PNG в градациях серого (максимум карты = белый), каждая ячейка - квадрат scale×scale."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    values = attention.detach().cpu().double().numpy()
    peak = values.max()
    pixels = np.zeros_like(values) if peak <= 0 else values / peak
    image = Image.fromarray(np.round(pixels * 255).astype(np.uint8))
    image = image.resize((values.shape[1] * scale, values.shape[0] * scale), Image.Resampling.NEAREST)
    image.save(out, format="PNG")
    return out


def save_attention_overlay(
    maps: Sequence[torch.Tensor],
    path: Union[str, Path],
    title: str = "",
) -> Path:
    """Один рисунок: по панели на блок декодера."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(maps), figsize=(3 * len(maps), 3), squeeze=False)
    for i, (ax, attention) in enumerate(zip(axes[0], maps)):
        im = ax.imshow(attention.detach().cpu().numpy(), cmap="viridis")
        ax.set_title(f"block {i + 1}")
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
