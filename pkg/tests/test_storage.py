import pytest
import torch
import torch.nn as nn

from zsugr_core.config import RunConfig
from zsugr_core.errors import ConfigError, DataError, MissingArtifactError
from zsugr_core.storage.artifacts import (
    ArtifactStore,
    compute_stage_keys,
    config_hash,
    load_checkpoint,
    save_checkpoint,
)
from zsugr_core.storage.feature_cache import (
    FeatureSet,
    FileFeatureCache,
    MemoryFeatureCache,
    feature_cache_factory,
)


def _set(n=3, dim=4, synthetic=False):
    return FeatureSet(
        sample_ids=[f"s{i}" for i in range(n)],
        features=torch.arange(n * dim, dtype=torch.float32).view(n, dim),
        class_ids=torch.tensor([i % 2 for i in range(n)]),
        synthetic=synthetic,
    )


def test_factory_picks_storage(tmp_path):
    assert isinstance(feature_cache_factory(tmp_path), FileFeatureCache)
    assert isinstance(feature_cache_factory(None), MemoryFeatureCache)


def test_file_cache_roundtrip(tmp_path):
    cache = FileFeatureCache(tmp_path / "features")
    cache.save("seen_train", _set(), provider_fingerprint="abc")
    cache.save("unseen_test", _set(2))
    loaded = cache.load("seen_train")
    assert loaded.sample_ids == ["s0", "s1", "s2"]
    assert torch.equal(loaded.features, _set().features)
    assert cache.rosters() == ["seen_train", "unseen_test"]
    assert cache.exists("unseen_test")
    assert '"provider_fingerprint": "abc"' in (tmp_path / "features" / "cache.json").read_text(encoding="utf-8")


def test_file_cache_rejects_other_width(tmp_path):
    cache = FileFeatureCache(tmp_path)
    cache.save("a", _set(dim=4))
    with pytest.raises(DataError):
        cache.save("b", _set(dim=5))


def test_missing_roster_names_producer(tmp_path):
    with pytest.raises(MissingArtifactError) as info:
        FileFeatureCache(tmp_path, producer="synthesize").load("unseen")
    assert info.value.exit_code == 3
    assert "synthesize" in str(info.value)
    with pytest.raises(MissingArtifactError):
        MemoryFeatureCache().load("seen_train")


def test_feature_set_helpers():
    data = _set(5)
    assert data.class_counts() == {0: 3, 1: 2}
    only_odd = data.select_classes([1])
    assert only_odd.sample_ids == ["s1", "s3"]
    assert len(FeatureSet.empty(7)) == 0
    assert FeatureSet.empty(7).dim == 7


def test_checkpoint_roundtrip(tmp_path):
    module = nn.Linear(3, 2)
    path = save_checkpoint(tmp_path / "c.pt", "classifier", {"linear": module}, {"seed": 1}, {"k": [1, 2]})
    payload = load_checkpoint(path, "classifier", "train-classifier")
    assert payload["extra"] == {"k": [1, 2]}
    assert payload["config"] == {"seed": 1}
    assert torch.equal(payload["modules"]["linear"]["weight"], module.weight)


def test_checkpoint_kind_and_version(tmp_path):
    path = save_checkpoint(tmp_path / "c.pt", "gan", {}, {})
    with pytest.raises(ConfigError):
        load_checkpoint(path, "gcat", "train-gcat")
    payload = torch.load(path, weights_only=False)
    payload["format_version"] = 99
    torch.save(payload, path)
    with pytest.raises(ConfigError, match="99"):
        load_checkpoint(path, "gan", "train-gan")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(MissingArtifactError, match="train-gan"):
        load_checkpoint(tmp_path / "nope.pt", "gan", "train-gan")


def test_stage_keys_are_chained():
    base = compute_stage_keys(RunConfig(), "sha")
    classifier_only = RunConfig.load(None, {"classifier.epochs": "7"}, {})
    changed = compute_stage_keys(classifier_only, "sha")
    assert (changed.gcat, changed.features, changed.gan, changed.synthetic) == (
        base.gcat, base.features, base.gan, base.synthetic,
    )
    assert changed.classifier != base.classifier
    assert changed.eval != base.eval

    other_gcat = compute_stage_keys(RunConfig.load(None, {"gcat.gate_activation": "silu"}, {}), "sha")
    assert other_gcat.split == base.split
    assert other_gcat.gcat != base.gcat
    assert other_gcat.classifier != base.classifier
    assert compute_stage_keys(RunConfig(), "other").split != base.split


def test_config_hash_ignores_output_dir():
    a = RunConfig.load(None, {"output_dir": "x"}, {})
    b = RunConfig.load(None, {"output_dir": "y"}, {})
    assert config_hash(a) == config_hash(b)


def test_store_layout_and_manifests(tmp_path):
    keys = compute_stage_keys(RunConfig(), "sha")
    store = ArtifactStore(tmp_path, keys, "cfg")
    assert store.stage_dir(0, "gan") == tmp_path / "0" / "gan" / keys.gan
    assert store.stage_dir(None, "eval") == tmp_path / "all" / "eval" / keys.eval
    assert store.stage_dir(1, "attention") == tmp_path / "1" / "attention" / keys.gcat

    with pytest.raises(MissingArtifactError, match="train-gcat"):
        store.require(0, "gcat", "gcat.pt")
    assert not store.is_complete(0, "gcat")

    weights = store.stage_dir(0, "gcat") / "gcat.pt"
    weights.parent.mkdir(parents=True)
    weights.write_bytes(b"weights")
    record = store.input_record(0, "gcat", "gcat.pt")
    store.write_manifest(0, "features", {"gcat": record})
    manifest = store.read_manifest(0, "features")
    assert manifest.config_hash == "cfg"
    assert manifest.inputs["gcat"].files["gcat.pt"] == record.files["gcat.pt"]
    assert store.is_complete(0, "features")

    assert store.stale_inputs(0, "features") == []
    weights.write_bytes(b"retrained")
    assert store.stale_inputs(0, "features") == [str(weights)]
    weights.unlink()
    assert store.stale_inputs(0, "features") == [str(weights)]
