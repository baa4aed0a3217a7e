"""
Главный класс приложения: командная строка конвейера ZSUGR.
Модуль объединяет все компоненты: конфигурацию, провайдеры, сервисы обоих этапов и хранилище артефактов.
Здесь регистрируются команды и происходит их последовательный запуск по разбиениям.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import torch

from .config import RunConfig
from .data.manifest import GestureClass, SampleRecord, load_manifest
from .data.splits import SplitSpec, generate_splits, load_split, save_split, validate_split
from .errors import ConfigError, DataError, ZsugrError
from .models.gcat import GatedCrossAttentionTransformer
from .services.eval_service import (
    EvalReport,
    aggregate_splits,
    baseline_cosine_predict,
    confusion,
    evaluate_split,
)
from .services.gan_service import GanService
from .services.gcat_service import GcatService, count_parameters
from .services.providers import BaseProvider, provider_factory
from .services.zsl_service import ZslService, build_training_set, export_predictions
from .storage.artifacts import (
    ArtifactStore,
    InputRecord,
    compute_stage_keys,
    config_hash,
    load_checkpoint,
    save_checkpoint,
)
from .storage.feature_cache import BaseFeatureCache, feature_cache_factory
from .ui.figures import save_attention_overlay, save_attention_png, save_confusion_heatmap
from .ui.messages import COMMAND_HELP
from .ui.tables import per_split_table, results_table
from .utils.hashing import file_sha256
from .utils.text import make_safe_key

ROSTERS = ("seen_train", "seen_test", "unseen_test")

# Значения флага --ablate → gcat.ablation
ABLATE_FLAGS = {
    "decoder=off": "encoder_only",
    "gcat=off": "backbone_only",
}

ProviderFactory = Callable[..., BaseProvider]


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class PipelineApplication:
    """
    Инкапсулирует разбор аргументов и запуск команд конвейера.
    Каждая команда идемпотентна: выполненная стадия (есть manifest.json) пропускается, если не задан --force.
    """

    def __init__(
        self,
        provider_builder: ProviderFactory = provider_factory,
        environ: Optional[Mapping[str, str]] = None,
    ):
        """Инициализация с внедрением фабрики провайдеров (в тестах подменяется)."""
        self.provider_builder = provider_builder
        self.environ = environ
        self.logger = logging.getLogger(self.__class__.__name__)
        self.parser = self._build_parser()

        self.config: Optional[RunConfig] = None
        self.store: Optional[ArtifactStore] = None
        self.records: List[SampleRecord] = []
        self.classes: List[GestureClass] = []
        self.records_by_id: Dict[str, SampleRecord] = {}
        self.force = False
        self._provider: Optional[BaseProvider] = None
        self._semantics: Optional[Dict[int, torch.Tensor]] = None

        self.commands: Dict[str, Callable[[List[int]], None]] = {
            "split": self.cmd_split,
            "train-gcat": self._per_split(self.cmd_train_gcat),
            "extract": self._per_split(self.cmd_extract),
            "train-gan": self._per_split(self.cmd_train_gan),
            "synthesize": self._per_split(self.cmd_synthesize),
            "train-classifier": self._per_split(self.cmd_train_classifier),
            "eval": self.cmd_eval,
            "visualize": self._per_split(self.cmd_visualize),
            "run-all": self.cmd_run_all,
        }

    # ---------- Разбор аргументов ----------
    def _build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="YAML-документ конфигурации")
        common.add_argument("--outdir", help="каталог артефактов (run.output_dir)")
        common.add_argument("--seed", type=int)
        common.add_argument("--n-seen", type=int, dest="n_seen")
        common.add_argument("--n-unseen", type=int, dest="n_unseen")
        common.add_argument("--gate-activation", dest="gate_activation")
        common.add_argument("--ablate", action="append", default=[], help="decoder=off | gcat=off")
        common.add_argument("--workers", type=int)
        common.add_argument("--split", type=int, action="append", dest="splits", help="индекс разбиения")
        common.add_argument("--set", action="append", default=[], dest="overrides",
                            help="переопределение section.key=value")
        common.add_argument("--force", action="store_true", help="пересчитать выполненные стадии")
        common.add_argument("--verbose", action="store_true")

        parser = argparse.ArgumentParser(prog="zsugr", description="Двухэтапный zero-shot конвейер распознавания жестов")
        sub = parser.add_subparsers(dest="command", required=True)
        for name, text in COMMAND_HELP.items():
            sub.add_parser(name, parents=[common], help=text, description=text)
        return parser

    @staticmethod
    def collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
        """Флаги CLI → словарь переопределений вида {"gcat.gate_activation": "sigmoid"}."""
        overrides: Dict[str, object] = {}
        for item in args.overrides:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"--set: ожидается section.key=value, получено {item!r}")
            overrides[key.strip()] = value.strip()
        direct = {
            "output_dir": args.outdir,
            "seed": args.seed,
            "workers": args.workers,
            "split.n_seen": args.n_seen,
            "split.n_unseen": args.n_unseen,
            "gcat.gate_activation": args.gate_activation,
        }
        overrides.update({k: v for k, v in direct.items() if v is not None})
        for flag in args.ablate:
            normalized = flag.replace(" ", "").lower()
            if normalized not in ABLATE_FLAGS:
                raise ConfigError(f"--ablate: неизвестное значение {flag!r}, допустимо {tuple(ABLATE_FLAGS)}")
            overrides["gcat.ablation"] = ABLATE_FLAGS[normalized]
        return overrides

    # ---------- Запуск ----------
    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Разбирает аргументы, выполняет команду и возвращает код завершения процесса."""
        args = self.parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        try:
            self.prepare(args)
            splits = self._select_splits(args.splits)
            self.logger.info("Команда %s, разбиения %s, вывод в %s", args.command, splits, self.store.root)
            self.commands[args.command](splits)
        except ZsugrError as exc:
            self.logger.error("%s: %s", exc.__class__.__name__, exc)
            return exc.exit_code
        self.logger.info("Команда %s завершена.", args.command)
        return 0

    def prepare(self, args: argparse.Namespace) -> None:
        """Загружает и проверяет конфигурацию, читает манифест, строит хранилище артефактов."""
        config = RunConfig.load(args.config, self.collect_overrides(args), self.environ).validate()
        self.config = config
        self.force = args.force
        if config.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        self.records, self.classes = load_manifest(config.manifest, config.split.class_names)
        self.records_by_id = {r.sample_id: r for r in self.records}
        keys = compute_stage_keys(config, file_sha256(config.manifest))
        self.store = ArtifactStore(config.output_dir, keys, config_hash(config))
        self._provider = None
        self._semantics = None

    def _select_splits(self, requested: Optional[List[int]]) -> List[int]:
        available = list(range(self.config.split.n_splits))
        if not requested:
            return available
        unknown = [i for i in requested if i not in available]
        if unknown:
            raise ConfigError(f"--split: разбиений {unknown} нет (split.n_splits = {self.config.split.n_splits})")
        return sorted(set(requested))

    def _per_split(self, command: Callable[[int], None]) -> Callable[[List[int]], None]:
        def runner(splits: List[int]) -> None:
            for index in splits:
                command(index)
        return runner

    def _skip(self, index: Optional[int], stage: str) -> bool:
        if self.store.is_complete(index, stage) and not self.force:
            self.logger.info("Стадия %s (разбиение %s) уже выполнена: %s", stage, index,
                             self.store.stage_dir(index, stage))
            return True
        return False

    # ---------- Общие ресурсы ----------
    @property
    def provider(self) -> BaseProvider:
        if self._provider is None:
            self._provider = self.provider_builder(self.config.provider, self.config.split.class_names)
        return self._provider

    @property
    def semantics(self) -> Dict[int, torch.Tensor]:
        """Семантические векторы всех классов реестра."""
        if self._semantics is None:
            ids = [c.id for c in self.classes]
            matrix = self.provider.semantics_matrix(ids)
            self._semantics = {c: matrix[i] for i, c in enumerate(ids)}
        return self._semantics

    @property
    def class_names(self) -> List[str]:
        return [c.name for c in self.classes]

    def _load_split(self, index: int) -> SplitSpec:
        return load_split(self.store.require(index, "split", "split.json"))

    def _roster(self, split: SplitSpec, roster: str) -> List[SampleRecord]:
        return [self.records_by_id[sid] for sid in getattr(split, f"{roster}_ids")]

    def _load_gcat(self, index: int, service: GcatService) -> GatedCrossAttentionTransformer:
        payload = load_checkpoint(self.store.require(index, "gcat", "gcat.pt"), "gcat", "train-gcat")
        model = service.build_model()
        model.load_state_dict(payload["modules"]["model"])
        return model.eval()

    def _features(self, index: int) -> BaseFeatureCache:
        return feature_cache_factory(self.store.stage_dir(index, "features"), producer="extract")

    # ---------- Команды ----------
    def cmd_split(self, splits: List[int]) -> None:
        """Генерирует все разбиения (чистая функция сида) и сохраняет выбранные."""
        s = self.config.split
        generated = generate_splits(
            self.classes, self.records, s.n_splits, s.n_seen, s.n_unseen, s.holdout_fraction, self.config.seed
        )
        manifest_input = InputRecord(stage="manifest", key=file_sha256(self.config.manifest),
                                     files={Path(self.config.manifest).name: file_sha256(self.config.manifest)})
        for split in generated:
            if split.split_index not in splits:
                continue
            violations = validate_split(split, self.records, s.n_seen, s.n_unseen)
            if violations:
                raise DataError(f"разбиение {split.split_index} некорректно: {violations[:3]}")
            path = save_split(split, self.store.split_path(split.split_index))
            self.store.write_manifest(split.split_index, "split", {"manifest": manifest_input})
            self.logger.info("Разбиение %d сохранено: %s", split.split_index, path)

    def cmd_train_gcat(self, index: int) -> None:
        if self._skip(index, "gcat"):
            return
        split = self._load_split(index)
        service = GcatService(self.config, self.provider)
        result = service.stage1_train(split, self.records_by_id)
        out = self.store.stage_dir(index, "gcat")
        modules = {"model": result.model}
        if result.head is not None:
            modules["head"] = result.head
        save_checkpoint(
            out / "gcat.pt", "gcat", modules, self.config.as_dict(),
            extra={"seen_classes": split.seen_classes, "train_accuracy": result.train_accuracy},
        )
        _write_json(out / "losses.json", {"epoch_losses": result.epoch_losses, "train_accuracy": result.train_accuracy})
        self.logger.info("GCAT: %d обучаемых параметров.", count_parameters(result.model) + count_parameters(result.head))
        self.store.write_manifest(index, "gcat", {"split": self.store.input_record(index, "split", "split.json")})

    def cmd_extract(self, index: int) -> None:
        if self._skip(index, "features"):
            return
        split = self._load_split(index)
        service = GcatService(self.config, self.provider)
        model = self._load_gcat(index, service)
        cache = self._features(index)
        for roster in ROSTERS:
            features = service.extract_features(model, self._roster(split, roster), self.config.workers)
            cache.save(roster, features, self.provider.fingerprint())
        self.store.write_manifest(index, "features", {"gcat": self.store.input_record(index, "gcat", "gcat.pt")})

    def cmd_train_gan(self, index: int) -> None:
        if self._skip(index, "gan"):
            return
        seen_train = self._features(index).load("seen_train")
        service = GanService(self.config)
        bundle = service.train_gan(seen_train, self.semantics, index)
        out = self.store.stage_dir(index, "gan")
        service.save_bundle(bundle, out / "gan.pt")
        _write_json(out / "losses.json", bundle.curves.as_dict())
        self.store.write_manifest(
            index, "gan", {"features": self.store.input_record(index, "features", "seen_train.pt")}
        )

    def _synthetic(self, index: int) -> BaseFeatureCache:
        return feature_cache_factory(self.store.stage_dir(index, "synthetic"), producer="synthesize")

    def cmd_synthesize(self, index: int) -> None:
        if self._skip(index, "synthetic"):
            return
        split = self._load_split(index)
        service = GanService(self.config)
        bundle = service.load_bundle(self.store.require(index, "gan", "gan.pt"))
        synthetic = service.synthesize(
            bundle, self.semantics, split.unseen_classes, self.config.gan.n_syn_per_class, index, self.config.workers
        )
        self._synthetic(index).save("unseen", synthetic, self.provider.fingerprint())
        self.store.write_manifest(index, "synthetic", {"gan": self.store.input_record(index, "gan", "gan.pt")})

    def cmd_train_classifier(self, index: int) -> None:
        if self._skip(index, "classifier"):
            return
        split = self._load_split(index)
        seen_train = self._features(index).load("seen_train")
        synthetic = self._synthetic(index).load("unseen")
        service = ZslService(self.config)
        out = self.store.stage_dir(index, "classifier")

        gzsl = build_training_set(seen_train, synthetic, "gzsl", split.seen_classes, split.unseen_classes)
        service.save_weights(service.train_classifier(gzsl, f"classifier/gzsl/{index}"), out / "gzsl.pt", "gzsl")
        if self.config.classifier.czsl_head == "dedicated":
            czsl = build_training_set(seen_train, synthetic, "czsl", split.seen_classes, split.unseen_classes)
            service.save_weights(service.train_classifier(czsl, f"classifier/czsl/{index}"), out / "czsl.pt", "czsl")
        self.store.write_manifest(index, "classifier", {
            "features": self.store.input_record(index, "features", "seen_train.pt"),
            "synthetic": self.store.input_record(index, "synthetic", "unseen.pt"),
        })

    def _check_hashes(self, splits: List[int]) -> None:
        """
        Проверка согласованности входов eval перед агрегированием.

        Каталоги стадий адресуются ключом конфигурации, поэтому при обычной работе хеши совпадают.
        Расхождение возможно при ручной правке манифестов или если вход классификатора
        (признаки seen_train, синтетические признаки) перезаписан после его обучения:
        тогда sha256 в манифесте classifier не совпадает с файлом на диске.
        Оба случая - ConfigError, с --force только предупреждение.
        """
        problems = []
        hashes = {i: self.store.read_manifest(i, "classifier").config_hash for i in splits}
        if len(set(hashes.values())) > 1:
            problems.append(f"входы eval получены при разных конфигурациях: {hashes}")
        for i in splits:
            stale = self.store.stale_inputs(i, "classifier")
            if stale:
                problems.append(f"разбиение {i}: классификатор обучен на других версиях файлов {stale}")
        for message in problems:
            if not self.force:
                raise ConfigError(message + "; используйте --force")
            self.logger.warning("%s (--force)", message)

    def evaluate_one(self, index: int) -> EvalReport:
        """Предсказания CZSL/GZSL, базовый косинусный классификатор, матрица ошибок и отчёт по разбиению."""
        split = self._load_split(index)
        service = ZslService(self.config)
        gzsl = service.load_weights(self.store.require(index, "classifier", "gzsl.pt"))
        czsl = gzsl
        if self.config.classifier.czsl_head == "dedicated":
            czsl = service.load_weights(self.store.require(index, "classifier", "czsl.pt"))

        cache = self._features(index)
        seen_test, unseen_test = cache.load("seen_test"), cache.load("unseen_test")
        all_classes = sorted(split.seen_classes + split.unseen_classes)

        czsl_pred = service.predict(czsl, unseen_test, split.unseen_classes)
        leaked = [p.sample_id for p in czsl_pred if p.predicted_class not in split.unseen_classes]
        if leaked:
            raise DataError(f"CZSL-предсказания вне невиданных классов: {leaked[:3]}")
        seen_pred = service.predict(gzsl, seen_test, all_classes)
        unseen_pred = service.predict(gzsl, unseen_test, all_classes)

        baseline_seen = baseline_unseen = None
        semantic_dim = next(iter(self.semantics.values())).numel()
        if seen_test.dim == semantic_dim:
            baseline_seen = baseline_cosine_predict(seen_test, self.semantics, all_classes)
            baseline_unseen = baseline_cosine_predict(unseen_test, self.semantics, all_classes)
        else:
            self.logger.info("Косинусный baseline пропущен: размерность признаков %d ≠ %d.", seen_test.dim, semantic_dim)

        report = evaluate_split(
            index, czsl_pred, seen_pred, unseen_pred, split.seen_classes, split.unseen_classes,
            self.class_names, baseline_seen, baseline_unseen,
        )
        out = self.store.stage_dir(index, "eval")
        export_predictions(czsl_pred, out / "predictions_czsl.csv", self.class_names)
        export_predictions(seen_pred + unseen_pred, out / "predictions_gzsl.csv", self.class_names)
        matrix = confusion(seen_pred + unseen_pred, all_classes)
        matrix.to_csv(out / "confusion_gzsl.csv", self.class_names)
        save_confusion_heatmap(matrix, out / "confusion_gzsl.png", self.class_names,
                               title=f"GZSL confusion matrix, split {index}")
        (out / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        (out / "table.txt").write_text(
            per_split_table([(index, {name: report.metric(name) for name in ("U_czsl", "S_gzsl", "U_gzsl", "H")})]),
            encoding="utf-8",
        )
        self.store.write_manifest(index, "eval", {
            "classifier": self.store.input_record(index, "classifier", "gzsl.pt"),
            "features": self.store.input_record(index, "features", "seen_test.pt", "unseen_test.pt"),
        })
        self.logger.info("Разбиение %d: U_czsl=%.2f S=%.2f U=%.2f H=%.2f",
                         index, report.U_czsl, report.S_gzsl, report.U_gzsl, report.H)
        return report

    def cmd_eval(self, splits: List[int]) -> None:
        """Отчёты по разбиениям и агрегат (среднее ± популяционное отклонение) в <outdir>/all/eval/<key>/."""
        self._check_hashes(splits)
        reports = [self.evaluate_one(index) for index in splits]
        aggregate = aggregate_splits(reports)

        out = self.store.stage_dir(None, "eval")
        out.mkdir(parents=True, exist_ok=True)
        (out / "aggregate.json").write_text(aggregate.model_dump_json(indent=2) + "\n", encoding="utf-8")
        method = f"GCAT-{self.config.gcat.ablation}-{self.config.gcat.gate_activation}"
        rows = [(method, {k: (v.mean, v.std) for k, v in aggregate.metrics.items()}),
                (f"{method} (micro)", {k: (v.mean, v.std) for k, v in aggregate.micro.items()})]
        if aggregate.baseline:
            rows.append(("cosine baseline", {k: (v.mean, v.std) for k, v in aggregate.baseline.items()}))
        table = results_table(rows)
        (out / "table.txt").write_text(table, encoding="utf-8")
        self.store.write_manifest(None, "eval", {
            f"eval/{i}": self.store.input_record(i, "eval", "report.json") for i in splits
        })
        self.logger.info("Итог по %d разбиениям:\n%s", len(reports), table)

    def cmd_visualize(self, index: int) -> None:
        """Карты внимания левой ветви для первого образца каждого невиданного класса."""
        split = self._load_split(index)
        service = GcatService(self.config, self.provider)
        model = self._load_gcat(index, service)
        out = self.store.stage_dir(index, "attention")
        chosen: Dict[int, SampleRecord] = {}
        for record in self._roster(split, "unseen_test"):
            chosen.setdefault(record.class_id, record)
        for class_id, record in sorted(chosen.items()):
            maps = service.attention_maps(model, record)
            stem = make_safe_key(f"{self.class_names[class_id]}_{record.sample_id}")
            for block, attention in enumerate(maps, start=1):
                save_attention_png(attention, out / f"{stem}_block{block}.png")
            torch.save(torch.stack(maps), out / f"{stem}.pt")
            save_attention_overlay(maps, out / f"{stem}_overlay.png", title=self.class_names[class_id])
        self.store.write_manifest(index, "attention", {"gcat": self.store.input_record(index, "gcat", "gcat.pt")})
        self.logger.info("Карты внимания (%d образцов) сохранены в %s", len(chosen), out)

    def cmd_run_all(self, splits: List[int]) -> None:
        """Полный конвейер: разбиения, оба этапа по каждому разбиению, затем оценка и агрегат."""
        self.cmd_split(splits)
        for index in splits:
            self.cmd_train_gcat(index)
            self.cmd_extract(index)
            self.cmd_train_gan(index)
            self.cmd_synthesize(index)
            self.cmd_train_classifier(index)
        self.cmd_eval(splits)
