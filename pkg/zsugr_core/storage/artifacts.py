"""
Модуль артефактов стадий: чекпоинты, манифесты стадий и контентная адресация каталогов.

Раскладка: <outdir>/<split_index>/<stage>/<key>/, где key - хеш параметров стадии и ключа
предыдущей стадии. Агрегаты по разбиениям лежат в <outdir>/all/eval/<key>/.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import torch
import torch.nn as nn
from pydantic import BaseModel

from .. import __version__
from ..config import RunConfig
from ..errors import ConfigError, MissingArtifactError
from ..utils.hashing import file_sha256, stable_hash

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
AGGREGATE_DIR = "all"

# Стадия → команда CLI, которая её создаёт
STAGE_COMMANDS = {
    "split": "split",
    "gcat": "train-gcat",
    "features": "extract",
    "gan": "train-gan",
    "synthetic": "synthesize",
    "classifier": "train-classifier",
    "eval": "eval",
    "attention": "visualize",
}

logger = logging.getLogger(__name__)


# ---------- Чекпоинты ----------
def save_checkpoint(
    path: Union[str, Path],
    kind: str,
    modules: Mapping[str, nn.Module],
    config: Mapping[str, Any],
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Сохраняет один архив torch.save: параметры модулей по путям, эхо конфигурации,
    состояние генератора случайных чисел и версию формата.
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "modules": {name: module.state_dict() for name, module in modules.items()},
        "config": dict(config),
        "rng_state": torch.get_rng_state(),
        "extra": dict(extra or {}),
    }
    torch.save(payload, out)
    logger.info("Чекпоинт %s сохранён: %s", kind, out)
    return out


def load_checkpoint(path: Union[str, Path], kind: str, command: str) -> Dict[str, Any]:
    """Загружает чекпоинт и проверяет версию формата и тип."""
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(str(source), command)
    payload = torch.load(source, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"чекпоинт {source}: неизвестная версия формата {version!r}")
    if payload.get("kind") != kind:
        raise ConfigError(f"чекпоинт {source}: ожидался тип {kind}, получен {payload.get('kind')!r}")
    return payload


# ---------- Манифесты стадий ----------
class InputRecord(BaseModel):
    """Артефакт предыдущей стадии, который потребила текущая: ключ и sha256 файлов."""

    stage: str
    key: str
    files: Dict[str, str] = {}


class StageManifest(BaseModel):
    stage: str
    split_index: Optional[int] = None
    key: str
    config_hash: str
    inputs: Dict[str, InputRecord] = {}
    library_version: str = __version__
    torch_version: str = torch.__version__
    schema_version: int = 1


def config_hash(config: RunConfig) -> str:
    """Хеш конфигурации без полей, не влияющих на результат."""
    return stable_hash(config.hash_payload())


@dataclass(frozen=True)
class StageKeys:
    """Цепочка ключей стадий для одной конфигурации (общая для всех разбиений)."""

    split: str
    gcat: str
    features: str
    gan: str
    synthetic: str
    classifier: str
    eval: str

    def for_stage(self, stage: str) -> str:
        if stage == "attention":
            return self.gcat
        return getattr(self, stage)


def compute_stage_keys(config: RunConfig, manifest_sha: str) -> StageKeys:
    """
    Каждый ключ зависит только от параметров своей стадии и ключа предыдущей, поэтому
    абляции, меняющие лишь классификатор, переиспользуют признаки и генератор.
    """
    common = {"seed": config.seed, "deterministic": config.deterministic}
    split = stable_hash({"stage": "split", "manifest": manifest_sha, "split": vars(config.split), **common})
    gcat = stable_hash({"stage": "gcat", "up": split, "provider": vars(config.provider), "gcat": vars(config.gcat)})
    features = stable_hash({"stage": "features", "up": gcat})
    gan = stable_hash({"stage": "gan", "up": features, "gan": vars(config.gan)})
    synthetic = stable_hash({"stage": "synthetic", "up": gan})
    classifier = stable_hash({"stage": "classifier", "up": synthetic, "classifier": vars(config.classifier)})
    evaluation = stable_hash({"stage": "eval", "up": classifier})
    return StageKeys(split=split, gcat=gcat, features=features, gan=gan, synthetic=synthetic,
                     classifier=classifier, eval=evaluation)


class ArtifactStore:
    """
    Доступ к каталогам стадий под output_dir.
    Отвечает за пути, запись и чтение манифестов и проверку наличия входных артефактов.
    """

    def __init__(self, output_dir: Union[str, Path], keys: StageKeys, config_hash: str):
        self.root = Path(output_dir)
        self.keys = keys
        self.config_hash = config_hash
        self.logger = logging.getLogger(self.__class__.__name__)

    def stage_dir(self, split_index: Optional[int], stage: str) -> Path:
        part = AGGREGATE_DIR if split_index is None else str(split_index)
        return self.root / part / stage / self.keys.for_stage(stage)

    def split_path(self, split_index: int) -> Path:
        return self.stage_dir(split_index, "split") / "split.json"

    def require(self, split_index: Optional[int], stage: str, filename: str) -> Path:
        """Путь к файлу предыдущей стадии; если его нет - MissingArtifactError с именем команды."""
        path = self.stage_dir(split_index, stage) / filename
        if not path.exists():
            raise MissingArtifactError(str(path), STAGE_COMMANDS[stage])
        return path

    def is_complete(self, split_index: Optional[int], stage: str) -> bool:
        """Стадия считается выполненной, если её манифест записан (он пишется последним)."""
        return (self.stage_dir(split_index, stage) / MANIFEST_FILE).exists()

    def input_record(self, split_index: Optional[int], stage: str, *filenames: str) -> InputRecord:
        files = {name: file_sha256(self.require(split_index, stage, name)) for name in filenames}
        return InputRecord(stage=stage, key=self.keys.for_stage(stage), files=files)

    def write_manifest(
        self,
        split_index: Optional[int],
        stage: str,
        inputs: Optional[Mapping[str, InputRecord]] = None,
    ) -> Path:
        manifest = StageManifest(
            stage=stage,
            split_index=split_index,
            key=self.keys.for_stage(stage),
            config_hash=self.config_hash,
            inputs=dict(inputs or {}),
        )
        path = self.stage_dir(split_index, stage) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    def read_manifest(self, split_index: Optional[int], stage: str) -> StageManifest:
        path = self.require(split_index, stage, MANIFEST_FILE)
        return StageManifest.model_validate_json(path.read_text(encoding="utf-8"))

    def stale_inputs(self, split_index: Optional[int], stage: str) -> List[str]:
        """
        Входы стадии, чьё текущее содержимое не совпадает с sha256 из её манифеста
        (файл изменён, пересчитан или удалён).
        """
        part = AGGREGATE_DIR if split_index is None else str(split_index)
        stale = []
        for record in self.read_manifest(split_index, stage).inputs.values():
            directory = self.root / part / record.stage / record.key
            for name, digest in record.files.items():
                path = directory / name
                if not path.exists() or file_sha256(path) != digest:
                    stale.append(str(path))
        return stale
