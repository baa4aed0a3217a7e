import pytest
import torch

from zsugr_core.data.splits import generate_splits
from zsugr_core.errors import ConfigError, DataError
from zsugr_core.services.gcat_service import GcatService


@pytest.fixture
def split(records_and_classes, tiny_config):
    records, classes = records_and_classes
    s = tiny_config.split
    return generate_splits(classes, records, 1, s.n_seen, s.n_unseen, s.holdout_fraction, tiny_config.seed)[0]


@pytest.fixture
def records_by_id(records_and_classes):
    records, _ = records_and_classes
    return {r.sample_id: r for r in records}


def test_optimizer_settings(tiny_config, tiny_provider):
    tiny_config.gcat.lr, tiny_config.gcat.weight_decay = 1e-5, 1e-4
    service = GcatService(tiny_config, tiny_provider)
    optimizer = service.build_optimizer(service.build_model().parameters())
    assert isinstance(optimizer, torch.optim.AdamW)
    assert optimizer.defaults["lr"] == 1e-5
    assert optimizer.defaults["weight_decay"] == 1e-4


def test_stage1_train_logs_epoch_losses(tiny_config, tiny_provider, split, records_by_id):
    result = GcatService(tiny_config, tiny_provider).stage1_train(split, records_by_id)
    assert len(result.epoch_losses) == tiny_config.gcat.epochs
    assert all(loss > 0 for loss in result.epoch_losses)
    assert result.head.linear.weight.shape == (len(split.seen_classes), tiny_config.gcat.feature_dim)
    assert not result.model.training


def test_stage1_train_is_reproducible(tiny_config, tiny_provider, split, records_by_id):
    service = GcatService(tiny_config, tiny_provider)
    first = service.stage1_train(split, records_by_id)
    second = service.stage1_train(split, records_by_id)
    assert first.epoch_losses == second.epoch_losses


def test_empty_seen_train_is_an_error(tiny_config, tiny_provider, split, records_by_id):
    empty = split.model_copy(update={"seen_train_ids": []})
    with pytest.raises(DataError):
        GcatService(tiny_config, tiny_provider).stage1_train(empty, records_by_id)


def test_backbone_only_skips_training(tiny_config, tiny_provider, split, records_by_id):
    tiny_config.gcat.ablation = "backbone_only"
    result = GcatService(tiny_config, tiny_provider).stage1_train(split, records_by_id)
    assert result.head is None
    assert result.epoch_losses == []


def test_extract_features_is_deterministic(tiny_config, tiny_provider, records_and_classes):
    records, _ = records_and_classes
    service = GcatService(tiny_config, tiny_provider)
    model = service.build_model()
    first = service.extract_features(model, records[:20])
    second = service.extract_features(model, records[:20])
    threaded = service.extract_features(model, records[:20], workers=3)
    assert len(first) == 20
    assert first.features.shape == (20, tiny_config.gcat.feature_dim)
    assert first.sample_ids == [r.sample_id for r in records[:20]]
    assert torch.equal(first.features, second.features)
    assert torch.equal(first.features, threaded.features)
    assert not threaded.features.requires_grad


def test_attention_maps(tiny_config, tiny_provider, records_and_classes):
    records, _ = records_and_classes
    service = GcatService(tiny_config, tiny_provider)
    maps = service.attention_maps(service.build_model(), records[0])
    assert len(maps) == tiny_config.gcat.decoder_layers
    for attention in maps:
        assert attention.shape == (2, 2)
        assert (attention >= 0).all()
        assert attention.sum().item() == pytest.approx(1.0, abs=1e-5)


def test_attention_maps_need_decoder(tiny_config, tiny_provider, records_and_classes):
    records, _ = records_and_classes
    tiny_config.gcat.ablation = "encoder_only"
    service = GcatService(tiny_config, tiny_provider)
    with pytest.raises(ConfigError):
        service.attention_maps(service.build_model(), records[0])


@pytest.mark.slow
def test_separable_provider_is_learned_in_five_epochs(tiny_config, split, records_by_id):
    from zsugr_core.services.providers import SyntheticProvider
    from .conftest import TINY_CLASSES

    tiny_config.provider.noise_sigma = 0.05
    tiny_config.gcat.epochs = 5
    tiny_config.gcat.batch_size = 4
    provider = SyntheticProvider(tiny_config.provider, TINY_CLASSES)
    result = GcatService(tiny_config, provider).stage1_train(split, records_by_id)
    assert result.train_accuracy > 95.0
