"""
Провайдеры внешних представлений, которые потребляет конвейер:
    - карта признаков бэкбона V_b (C′×H′×W′, по умолчанию 256×7×7);
    - токены вспомогательного энкодера изображений V_c (k×C″, по умолчанию 50×768, токен 0 - сводный);
    - семантический вектор класса a (512), полученный из промпта "A photo of a diver gesturing [name]".

Синтетический провайдер детерминирован и нужен для тестов и настольных прогонов.
Адаптер предобученных моделей (ResNet-50 + CLIP) подключается опционально.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from ..config import ProviderSettings
from ..data.manifest import SYNTHETIC_REF_PREFIX, SampleRecord
from ..errors import ConfigError, ProviderError
from ..ui.messages import PROMPT_TEMPLATE
from ..utils.hashing import derive_seed, stable_hash

# Попытка импорта предобученных моделей. Если библиотек нет, адаптер пометит себя как недоступный.
try:
    import open_clip
except Exception:  # pragma: no cover
    open_clip = None
try:
    from PIL import Image
    from torchvision import models as tv_models
    from torchvision import transforms as tv_transforms
except Exception:  # pragma: no cover
    Image = None
    tv_models = None
    tv_transforms = None


@dataclass
class FeatureMap:
    """Пространственные признаки бэкбона V_b формы C′×H′×W′."""

    data: torch.Tensor
    source_sample: str


@dataclass
class ClipTokenGrid:
    """Токены вспомогательного энкодера V_c формы k×C″; токен 0 - сводный."""

    data: torch.Tensor
    source_sample: str

    def patch_tokens(self) -> torch.Tensor:
        """Токены без сводного (k−1)×C″."""
        return strip_summary_token(self.data)


@dataclass
class SemanticVector:
    """L2-нормированный семантический вектор класса."""

    data: torch.Tensor
    class_id: int


def strip_summary_token(tokens: torch.Tensor) -> torch.Tensor:
    """Удаляет токен 0 по оси токенов: (k, C) → (k−1, C), (B, k, C) → (B, k−1, C)."""
    return tokens[..., 1:, :]


def render_prompt(class_name: str) -> str:
    """Подставляет имя класса в шаблон промпта."""
    if not class_name or not class_name.strip():
        raise ConfigError("имя класса для семантики не может быть пустым")
    return PROMPT_TEMPLATE.format(name=class_name.strip())


class BaseProvider:
    """
    Единый интерфейс провайдеров. Все провайдеры чистые: результат зависит только
    от (конфигурации, входа), поэтому их можно вызывать из нескольких потоков.
    """

    def __init__(self, settings: ProviderSettings, class_names: Sequence[str]):
        self.settings = settings
        self.class_names = list(class_names)
        self.logger = logging.getLogger(self.__class__.__name__)

    @property
    def backbone_shape(self) -> Tuple[int, int, int]:
        s = self.settings
        return (s.backbone_channels, s.grid_height, s.grid_width)

    @property
    def clip_shape(self) -> Tuple[int, int]:
        return (self.settings.clip_tokens, self.settings.clip_channels)

    def backbone_features(self, image_ref: str, sample_id: str = "") -> FeatureMap:
        """Возвращает V_b для изображения."""
        raise NotImplementedError

    def clip_image_tokens(self, image_ref: str, sample_id: str = "") -> ClipTokenGrid:
        """Возвращает V_c для изображения."""
        raise NotImplementedError

    def class_semantics(self, class_name: str, class_id: int = -1) -> SemanticVector:
        """Возвращает семантический вектор класса по его имени."""
        raise NotImplementedError

    def fingerprint(self) -> str:
        """Отпечаток провайдера для кэша признаков: тип, размерности, сид."""
        return stable_hash({"class": self.__class__.__name__, "settings": vars(self.settings)})

    # ---------- Пакетные помощники ----------
    def batch(self, records: Sequence[SampleRecord]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Собирает батч (V_b: B×C′×H′×W′, V_c: B×k×C″) для списка записей."""
        v_b = [self.backbone_features(r.image_ref, r.sample_id).data for r in records]
        v_c = [self.clip_image_tokens(r.image_ref, r.sample_id).data for r in records]
        return torch.stack(v_b), torch.stack(v_c)

    def semantics_matrix(self, class_ids: Sequence[int]) -> torch.Tensor:
        """Матрица семантик (len(class_ids) × d) в порядке class_ids."""
        rows = [self.class_semantics(self.class_names[c], c).data for c in class_ids]
        return torch.stack(rows)

    def _check(self, tensor: torch.Tensor, shape: Tuple[int, ...], sample_id: str) -> torch.Tensor:
        if tuple(tensor.shape) != tuple(shape):
            raise ProviderError(sample_id, f"форма {tuple(tensor.shape)} вместо {tuple(shape)}")
        if not torch.isfinite(tensor).all():
            raise ProviderError(sample_id, "нечисловые значения в признаках")
        return tensor


class SyntheticProvider(BaseProvider):
    """
    Детерминированный синтетический провайдер.

    У каждого класса есть латентный код h_c (размерность latent_rank), зависящий только от промпта.
    Семантика, якорь V_b и якорь V_c - фиксированные случайные линейные образы h_c,
    поэтому зрительные якоря невиданных классов предсказуемы по их семантике.
    Образец = якорь своего класса + гауссов шум с σ = noise_sigma (шум зависит от image_ref).
    """

    def __init__(self, settings: ProviderSettings, class_names: Sequence[str]):
        super().__init__(settings, class_names)
        s = settings
        r = s.latent_rank
        g = torch.Generator().manual_seed(derive_seed(s.seed, "synthetic/basis"))
        # Базисы общие для всех классов и не меняются после построения
        self._semantic_basis = torch.randn(s.semantic_dim, r, generator=g)
        backbone_numel = s.backbone_channels * s.grid_height * s.grid_width
        self._backbone_map = torch.randn(backbone_numel, r, generator=g) / r ** 0.5
        self._clip_map = torch.randn(s.clip_tokens * s.clip_channels, r, generator=g) / r ** 0.5

        self._backbone_anchors: List[torch.Tensor] = []
        self._clip_anchors: List[torch.Tensor] = []
        for name in self.class_names:
            latent = self._latent(name)
            self._backbone_anchors.append((self._backbone_map @ latent).view(*self.backbone_shape))
            self._clip_anchors.append((self._clip_map @ latent).view(*self.clip_shape))
        self.logger.info("Синтетический провайдер готов: %d классов, σ=%.3f.", len(self.class_names), s.noise_sigma)

    def _latent(self, class_name: str) -> torch.Tensor:
        prompt = render_prompt(class_name)
        g = torch.Generator().manual_seed(derive_seed(self.settings.seed, f"synthetic/latent/{prompt}"))
        return torch.randn(self.settings.latent_rank, generator=g)

    def _parse_ref(self, image_ref: str, sample_id: str) -> int:
        if not image_ref.startswith(SYNTHETIC_REF_PREFIX):
            raise ProviderError(sample_id or image_ref, f"ссылка {image_ref!r} не синтетическая")
        try:
            class_id = int(image_ref[len(SYNTHETIC_REF_PREFIX):].split(":")[0])
        except ValueError:
            raise ProviderError(sample_id or image_ref, f"не удалось разобрать ссылку {image_ref!r}") from None
        if not 0 <= class_id < len(self.class_names):
            raise ProviderError(sample_id or image_ref, f"класс {class_id} вне реестра")
        return class_id

    def _noise(self, purpose: str, image_ref: str, shape: Tuple[int, ...]) -> torch.Tensor:
        g = torch.Generator().manual_seed(derive_seed(self.settings.seed, f"synthetic/{purpose}/{image_ref}"))
        return torch.randn(*shape, generator=g) * self.settings.noise_sigma

    def class_anchor(self, class_id: int) -> torch.Tensor:
        """Среднее распределения V_b для класса (нужно для проверок Монте-Карло)."""
        return self._backbone_anchors[class_id].clone()

    def backbone_features(self, image_ref: str, sample_id: str = "") -> FeatureMap:
        class_id = self._parse_ref(image_ref, sample_id)
        data = self._backbone_anchors[class_id] + self._noise("backbone", image_ref, self.backbone_shape)
        return FeatureMap(data=self._check(data, self.backbone_shape, sample_id), source_sample=sample_id)

    def clip_image_tokens(self, image_ref: str, sample_id: str = "") -> ClipTokenGrid:
        class_id = self._parse_ref(image_ref, sample_id)
        data = self._clip_anchors[class_id] + self._noise("clip", image_ref, self.clip_shape)
        return ClipTokenGrid(data=self._check(data, self.clip_shape, sample_id), source_sample=sample_id)

    def class_semantics(self, class_name: str, class_id: int = -1) -> SemanticVector:
        vector = F.normalize(self._semantic_basis @ self._latent(class_name), dim=0)
        return SemanticVector(data=self._check(vector, (self.settings.semantic_dim,), class_name), class_id=class_id)


class TokenCapture:
    """
    Перехват выхода подмодуля через forward hook.
    Результат хранится отдельно для каждого потока, поэтому один энкодер можно вызывать из пула.
    """

    def __init__(self, module: torch.nn.Module):
        self._local = threading.local()
        self.handle = module.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output) -> None:
        self._local.tokens = output[0] if isinstance(output, tuple) else output

    def run(self, fn, *args) -> Optional[torch.Tensor]:
        self._local.tokens = None
        fn(*args)
        tokens, self._local.tokens = self._local.tokens, None
        return tokens


class PretrainedProvider(BaseProvider):
    """
    Адаптер предобученных моделей: ствол ResNet-50 (torchvision) с замороженной свёрткой 1×1
    до C′ каналов, токены и текстовый энкодер CLIP (open_clip). Веса не обучаются.
    """

    def __init__(self, settings: ProviderSettings, class_names: Sequence[str]):
        super().__init__(settings, class_names)
        self.available = bool(open_clip and tv_models and Image)
        if not self.available:
            raise ConfigError("provider.kind=pretrained требует пакетов open_clip-torch, torchvision и Pillow")
        weights = tv_models.ResNet50_Weights.DEFAULT
        resnet = tv_models.resnet50(weights=weights)
        self._trunk = torch.nn.Sequential(*list(resnet.children())[:-2]).eval()
        # Фиксированная проекция 2048 → C′: сид делает её воспроизводимой между запусками
        g = torch.Generator().manual_seed(derive_seed(settings.seed, "pretrained/reduce"))
        self._reduce = torch.randn(settings.backbone_channels, 2048, generator=g) / 2048 ** 0.5
        self._resnet_transform = weights.transforms()

        self._clip, _, self._clip_transform = open_clip.create_model_and_transforms(
            settings.clip_model, pretrained=settings.clip_pretrained
        )
        self._clip.eval()
        self._tokenizer = open_clip.get_tokenizer(settings.clip_model)
        self._capture = TokenCapture(self._clip.visual.transformer)
        self.logger.info("Адаптер предобученных моделей загружен (CLIP %s).", settings.clip_model)

    def _open(self, image_ref: str, sample_id: str):
        path = Path(self.settings.image_root) / image_ref if self.settings.image_root else Path(image_ref)
        try:
            return Image.open(path).convert("RGB")
        except Exception as exc:
            raise ProviderError(sample_id or image_ref, f"не удалось прочитать изображение {path}: {exc}") from exc

    @torch.no_grad()
    def backbone_features(self, image_ref: str, sample_id: str = "") -> FeatureMap:
        image = self._resnet_transform(self._open(image_ref, sample_id)).unsqueeze(0)
        trunk = self._trunk(image)[0]                          # 2048×7×7
        data = torch.einsum("oc,chw->ohw", self._reduce, trunk)
        return FeatureMap(data=self._check(data, self.backbone_shape, sample_id), source_sample=sample_id)

    @torch.no_grad()
    def clip_image_tokens(self, image_ref: str, sample_id: str = "") -> ClipTokenGrid:
        image = self._clip_transform(self._open(image_ref, sample_id)).unsqueeze(0)
        tokens = self._capture.run(self._clip.visual, image)
        if tokens is None:
            raise ProviderError(sample_id or image_ref, "энкодер CLIP не вернул токены")
        # В зависимости от версии open_clip последовательность идёт первой или второй осью
        if tokens.shape[0] != 1 and tokens.shape[1] == 1:
            tokens = tokens.permute(1, 0, 2)
        data = tokens[0].float()
        return ClipTokenGrid(data=self._check(data, self.clip_shape, sample_id), source_sample=sample_id)

    @torch.no_grad()
    def class_semantics(self, class_name: str, class_id: int = -1) -> SemanticVector:
        text = self._tokenizer([render_prompt(class_name)])
        vector = F.normalize(self._clip.encode_text(text)[0].float(), dim=0)
        return SemanticVector(data=self._check(vector, (self.settings.semantic_dim,), class_name), class_id=class_id)


def provider_factory(settings: ProviderSettings, class_names: Sequence[str]) -> BaseProvider:
    """
    Фабрика провайдеров по ключу provider.kind.
    Синтетический провайдер не требует внешних весов; pretrained требует опциональных пакетов.
    """
    if settings.kind == "synthetic":
        return SyntheticProvider(settings, class_names)
    if settings.kind == "pretrained":
        return PretrainedProvider(settings, class_names)
    raise ConfigError(f"provider.kind: неизвестный провайдер {settings.kind!r}")
