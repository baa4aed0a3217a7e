"""Общие фикстуры: миниатюрные конфигурации, манифест и синтетический провайдер."""

from __future__ import annotations

from pathlib import Path

import pytest
import torch
import yaml

from zsugr_core.config import GcatSettings, ProviderSettings, RunConfig
from zsugr_core.data.manifest import load_manifest, write_synthetic_manifest
from zsugr_core.models.gcat import GatedCrossAttentionTransformer
from zsugr_core.services.providers import SyntheticProvider

TINY_CLASSES = ["alpha", "beta", "gamma", "delta", "eps", "zeta"]
PER_CLASS = 12


def tiny_config_dict(tmp_path: Path) -> dict:
    """Конфигурация, на которой весь конвейер проходит за секунды."""
    return {
        "seed": 3,
        "manifest": str(tmp_path / "manifest.csv"),
        "output_dir": str(tmp_path / "runs"),
        "workers": 1,
        "deterministic": True,
        "provider": {
            "kind": "synthetic",
            "backbone_channels": 8,
            "grid_height": 2,
            "grid_width": 2,
            "clip_tokens": 5,
            "clip_channels": 8,
            "semantic_dim": 8,
            "noise_sigma": 0.1,
            "latent_rank": 4,
            "seed": 0,
        },
        "split": {"n_splits": 2, "n_seen": 4, "n_unseen": 2, "holdout_fraction": 0.1, "class_names": TINY_CLASSES},
        "gcat": {
            "encoder_layers": 1,
            "decoder_layers": 2,
            "heads": 2,
            "feature_dim": 8,
            "encoder_ffn_dim": 16,
            "decoder_ffn_dim": 16,
            "dropout": 0.0,
            "epochs": 2,
            "batch_size": 16,
            "lr": 1e-3,
        },
        "gan": {"noise_dim": 8, "hidden_dim": 32, "epochs": 2, "batch_size": 16, "n_syn_per_class": 10},
        "classifier": {"epochs": 5},
    }


@pytest.fixture
def manifest_path(tmp_path: Path) -> Path:
    return write_synthetic_manifest(tmp_path / "manifest.csv", [PER_CLASS] * len(TINY_CLASSES), TINY_CLASSES)


@pytest.fixture
def tiny_config(tmp_path: Path, manifest_path: Path) -> RunConfig:
    return RunConfig.from_dict(tiny_config_dict(tmp_path)).validate()


@pytest.fixture
def config_file(tmp_path: Path, manifest_path: Path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config_dict(tmp_path)), encoding="utf-8")
    return path


@pytest.fixture
def records_and_classes(manifest_path: Path):
    return load_manifest(manifest_path, TINY_CLASSES)


@pytest.fixture
def tiny_provider(tiny_config: RunConfig) -> SyntheticProvider:
    return SyntheticProvider(tiny_config.provider, TINY_CLASSES)


@pytest.fixture
def mini_settings():
    """Миниатюрный GCAT: 4 токена, ширина 8, без dropout."""
    provider = ProviderSettings(
        backbone_channels=8, grid_height=2, grid_width=2, clip_tokens=5, clip_channels=8, semantic_dim=8
    )
    gcat = GcatSettings(
        encoder_layers=1, decoder_layers=2, heads=2, feature_dim=8,
        encoder_ffn_dim=16, decoder_ffn_dim=16, dropout=0.0,
    )
    return provider, gcat


@pytest.fixture
def mini_model(mini_settings) -> GatedCrossAttentionTransformer:
    torch.manual_seed(0)
    return GatedCrossAttentionTransformer.from_settings(*mini_settings).eval()
