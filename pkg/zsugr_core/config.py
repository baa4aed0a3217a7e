"""
Модуль для загрузки конфигурации запуска и настройки логирования.
Здесь определены структуры данных для всех настроек конвейера: провайдеры признаков,
разбиения, трансформер GCAT, WGAN, финальный классификатор.

Порядок приоритетов: YAML-документ < переменные окружения ZSUGR_<SECTION>_<KEY> < флаги CLI.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from .errors import ConfigError
from .ui.messages import CADDIAN_CLASSES

PROVIDER_KINDS = ("synthetic", "pretrained")
GATE_ACTIVATIONS = ("gelu", "elu", "relu", "sigmoid", "silu")
FUSION_MODES = ("gated", "sum")
ABLATIONS = ("full", "encoder_only", "backbone_only")
CZSL_HEADS = ("combined", "dedicated")

# Поля, которые не влияют на результат и не попадают в хеш конфигурации
RUNTIME_ONLY_FIELDS = ("output_dir", "workers")


def setup_logging(level: int = logging.INFO) -> None:
    """
    Единая точка настройки логирования для всего проекта.
    Устанавливает формат вывода: время [уровень] имя_модуля: сообщение.
    """
    logging.basicConfig(level=level, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")


@dataclass
class ProviderSettings:
    """
    Настройки провайдеров внешних представлений: карта признаков бэкбона V_b,
    токены вспомогательного энкодера изображений V_c и семантические векторы классов.
    """

    kind: str = "synthetic"         # synthetic | pretrained
    backbone_channels: int = 256    # C′
    grid_height: int = 7            # H′
    grid_width: int = 7             # W′
    clip_tokens: int = 50           # k, токен 0 - сводный токен
    clip_channels: int = 768        # C″
    semantic_dim: int = 512         # размерность семантического вектора
    noise_sigma: float = 0.5        # разброс образцов вокруг якоря класса (синтетический провайдер)
    latent_rank: int = 8            # размерность общего латентного кода классов (синтетический провайдер)
    seed: int = 0
    image_root: str = ""            # корень для относительных путей изображений (pretrained)
    clip_model: str = "ViT-B-32"
    clip_pretrained: str = "openai"


@dataclass
class SplitSettings:
    """Параметры генерации случайных разбиений seen/unseen."""

    n_splits: int = 3
    n_seen: int = 10
    n_unseen: int = 6
    holdout_fraction: float = 0.10
    class_names: List[str] = field(default_factory=lambda: list(CADDIAN_CLASSES))


@dataclass
class GcatSettings:
    """Гиперпараметры трансформера GCAT и первого этапа обучения."""

    encoder_layers: int = 3
    decoder_layers: int = 3
    heads: int = 8
    feature_dim: int = 512          # d, размерность признака жеста O_T
    encoder_ffn_dim: int = 1024
    decoder_ffn_dim: int = 1536
    dropout: float = 0.1
    gate_activation: str = "gelu"   # gelu | elu | relu | sigmoid | silu
    fusion: str = "gated"           # gated (конкатенация гейтов) | sum (буквальная сумма A_L + A_R)
    ablation: str = "full"          # full | encoder_only | backbone_only
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-5
    weight_decay: float = 1e-4


@dataclass
class GanSettings:
    """Гиперпараметры условного WGAN-GP с регуляризатором mode-seeking."""

    noise_dim: int = 512
    hidden_dim: int = 4096
    gp_lambda: float = 10.0
    ms_alpha: float = 1e-4
    lr: float = 1e-4
    beta1: float = 0.5
    critic_steps: int = 5
    epochs: int = 30
    batch_size: int = 64
    n_syn_per_class: int = 400
    divergence_limit: float = 1e6


@dataclass
class ClassifierSettings:
    """Настройки финального линейного softmax-классификатора."""

    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 0             # 0 - полный батч
    czsl_head: str = "combined"     # combined (общая голова с ограничением) | dedicated


SECTIONS = {
    "provider": ProviderSettings,
    "split": SplitSettings,
    "gcat": GcatSettings,
    "gan": GanSettings,
    "classifier": ClassifierSettings,
}


def _cast(raw: Any, current: Any, name: str) -> Any:
    """
    Приводит значение (строку из окружения или флага) к типу текущего значения поля.
    Списки задаются через запятую.
    """
    if not isinstance(raw, str):
        if isinstance(current, float) and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(current, list) and isinstance(raw, (list, tuple)):
            return [str(x) for x in raw]
        if type(raw) is not type(current):
            raise ConfigError(f"поле {name}: ожидался тип {type(current).__name__}, получено {raw!r}")
        return raw
    try:
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [part.strip() for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"поле {name}: не удалось разобрать значение {raw!r}") from None
    return raw


@dataclass
class RunConfig:
    """
    Глобальный класс конфигурации, объединяющий все настройки запуска.
    Создаётся через RunConfig.load(), который читает YAML и накладывает переопределения.
    """

    seed: int = 7
    manifest: str = "data/manifest.csv"
    output_dir: str = "runs"
    workers: int = 1
    deterministic: bool = True
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    gcat: GcatSettings = field(default_factory=GcatSettings)
    gan: GanSettings = field(default_factory=GanSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        """
        Строит конфигурацию из словаря (содержимого YAML-документа).
        Неизвестные секции и ключи считаются ошибкой, чтобы опечатки не терялись молча.
        """
        config = cls()
        for key, value in (raw or {}).items():
            if key in SECTIONS:
                if not isinstance(value, Mapping):
                    raise ConfigError(f"секция {key} должна быть словарём")
                section = getattr(config, key)
                for sub_key, sub_value in value.items():
                    config._set(section, key, sub_key, sub_value)
            else:
                config._set(config, "run", key, value)
        return config

    @classmethod
    def load(
        cls,
        path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "RunConfig":
        """
        Загружает конфигурацию запуска.
        1. YAML-документ (если путь задан).
        2. Переменные окружения ZSUGR_<SECTION>_<KEY> (верхнеуровневые ключи - секция RUN).
        3. Переопределения из флагов CLI вида {"gcat.gate_activation": "sigmoid"}.
        """
        raw: Dict[str, Any] = {}
        if path:
            config_path = Path(path)
            if not config_path.exists():
                raise ConfigError(f"файл конфигурации не найден: {path}")
            with open(config_path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
            if not isinstance(raw, Mapping):
                raise ConfigError(f"конфигурация {path} должна быть словарём верхнего уровня")
        config = cls.from_dict(raw)
        config.apply_environment(os.environ if environ is None else environ)
        for dotted, value in (overrides or {}).items():
            config.apply_override(dotted, value)
        return config

    def _set(self, target: Any, section: str, key: str, value: Any) -> None:
        """Устанавливает поле с приведением типа; неизвестное поле - ConfigError."""
        names = {f.name for f in dataclasses.fields(target)}
        if key not in names or key in SECTIONS:
            raise ConfigError(f"неизвестный параметр {section}.{key}")
        current = getattr(target, key)
        setattr(target, key, _cast(value, current, f"{section}.{key}"))

    def apply_environment(self, environ: Mapping[str, str]) -> None:
        """Накладывает переопределения из переменных окружения с префиксом ZSUGR_."""
        for name in sorted(environ):
            if not name.startswith("ZSUGR_"):
                continue
            rest = name[len("ZSUGR_"):]
            section, _, key = rest.partition("_")
            section = section.lower()
            if not key:
                raise ConfigError(f"переменная окружения {name}: ожидается ZSUGR_<SECTION>_<KEY>")
            if section == "run":
                self._set(self, "run", key.lower(), environ[name])
            elif section in SECTIONS:
                self._set(getattr(self, section), section, key.lower(), environ[name])
            else:
                raise ConfigError(f"переменная окружения {name}: неизвестная секция {section}")

    def apply_override(self, dotted: str, value: Any) -> None:
        """Переопределение вида 'gcat.lr' -> 1e-3 (или 'seed' для верхнего уровня)."""
        section, _, key = dotted.partition(".")
        if not key:
            self._set(self, "run", section, value)
        elif section in SECTIONS:
            self._set(getattr(self, section), section, key, value)
        else:
            raise ConfigError(f"неизвестная секция в переопределении {dotted}")

    def validate(self, check_paths: bool = True) -> "RunConfig":
        """
        Проверяет согласованность конфигурации. Ошибка называет конкретное поле.
        Возвращает self, чтобы можно было писать RunConfig.load(...).validate().
        """
        p, s, g, gan, c = self.provider, self.split, self.gcat, self.gan, self.classifier

        def require(condition: bool, name: str, message: str) -> None:
            if not condition:
                raise ConfigError(f"{name}: {message}")

        require(p.kind in PROVIDER_KINDS, "provider.kind", f"допустимо {PROVIDER_KINDS}")
        require(g.gate_activation in GATE_ACTIVATIONS, "gcat.gate_activation", f"допустимо {GATE_ACTIVATIONS}")
        require(g.fusion in FUSION_MODES, "gcat.fusion", f"допустимо {FUSION_MODES}")
        require(g.ablation in ABLATIONS, "gcat.ablation", f"допустимо {ABLATIONS}")
        require(c.czsl_head in CZSL_HEADS, "classifier.czsl_head", f"допустимо {CZSL_HEADS}")

        for name in ("backbone_channels", "grid_height", "grid_width", "clip_tokens", "clip_channels",
                     "semantic_dim", "latent_rank"):
            require(getattr(p, name) > 0, f"provider.{name}", "должно быть положительным")
        require(p.noise_sigma >= 0, "provider.noise_sigma", "не может быть отрицательным")
        require(p.clip_tokens >= 2, "provider.clip_tokens", "нужно хотя бы 2 токена")
        require(p.clip_tokens - 1 == p.grid_height * p.grid_width, "provider.clip_tokens",
                "после удаления сводного токена число токенов должно совпадать с H′·W′")
        require(p.clip_channels % 2 == 0, "provider.clip_channels", "должно быть чётным (гейт делит каналы пополам)")
        require(p.backbone_channels % 4 == 0, "provider.backbone_channels",
                "должно делиться на 4 (двумерное синусоидальное позиционное кодирование)")

        require(len(set(s.class_names)) == len(s.class_names), "split.class_names", "имена классов должны быть уникальны")
        require(all(name.strip() for name in s.class_names), "split.class_names", "пустое имя класса")
        require(s.n_seen > 0 and s.n_unseen > 0, "split.n_seen", "нужны и видимые, и невиданные классы")
        require(s.n_seen + s.n_unseen == len(s.class_names), "split.n_seen",
                f"n_seen + n_unseen должно равняться числу классов ({len(s.class_names)})")
        require(0 < s.holdout_fraction < 1, "split.holdout_fraction", "должно лежать в (0, 1)")
        require(s.n_splits >= 1, "split.n_splits", "нужно хотя бы одно разбиение")

        for name in ("encoder_layers", "decoder_layers", "heads", "feature_dim", "encoder_ffn_dim",
                     "decoder_ffn_dim", "epochs", "batch_size"):
            require(getattr(g, name) > 0, f"gcat.{name}", "должно быть положительным")
        require(p.backbone_channels % g.heads == 0, "gcat.heads", "должно делить provider.backbone_channels")
        require(p.clip_channels % g.heads == 0, "gcat.heads", "должно делить provider.clip_channels")
        require(0 <= g.dropout < 1, "gcat.dropout", "должно лежать в [0, 1)")
        if g.ablation != "backbone_only":
            require(g.feature_dim == p.semantic_dim, "gcat.feature_dim",
                    "должно совпадать с provider.semantic_dim (голова инициализируется семантикой)")

        require(gan.gp_lambda >= 0, "gan.gp_lambda", "не может быть отрицательным")
        require(gan.ms_alpha >= 0, "gan.ms_alpha", "не может быть отрицательным")
        require(gan.critic_steps >= 1, "gan.critic_steps", "нужен хотя бы один шаг критика")
        for name in ("noise_dim", "hidden_dim", "epochs", "batch_size", "n_syn_per_class"):
            require(getattr(gan, name) > 0, f"gan.{name}", "должно быть положительным")
        require(c.epochs > 0, "classifier.epochs", "должно быть положительным")
        require(c.batch_size >= 0, "classifier.batch_size", "не может быть отрицательным")
        require(self.workers >= 1, "workers", "нужен хотя бы один воркер")

        if check_paths:
            require(Path(self.manifest).exists(), "manifest", f"файл {self.manifest} не найден")
        return self

    def as_dict(self) -> Dict[str, Any]:
        """Эхо конфигурации для чекпоинтов и манифестов стадий."""
        return dataclasses.asdict(self)

    def hash_payload(self) -> Dict[str, Any]:
        """Часть конфигурации, влияющая на результаты (без путей вывода и числа воркеров)."""
        payload = self.as_dict()
        for name in RUNTIME_ONLY_FIELDS:
            payload.pop(name, None)
        return payload
