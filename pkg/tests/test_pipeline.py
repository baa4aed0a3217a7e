"""Сквозные прогоны CLI на миниатюрной конфигурации с синтетическим провайдером."""

import json
import statistics
from pathlib import Path

import pytest
import torch

from zsugr_core.data.manifest import write_synthetic_manifest
from zsugr_core.errors import ConfigError
from zsugr_core.pipeline_app import PipelineApplication
from zsugr_core.services.gcat_service import GcatService
from zsugr_core.ui.messages import CADDIAN_CLASSES

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.yaml"


def _run(*argv):
    return PipelineApplication(environ={}).run(list(argv))


def _one(root, pattern):
    found = sorted(root.glob(pattern))
    assert len(found) == 1, found
    return found[0]


@pytest.fixture
def finished_run(config_file, tmp_path):
    assert _run("run-all", "--config", str(config_file)) == 0
    return tmp_path / "runs"


def test_run_all_writes_aggregate(finished_run):
    aggregate = json.loads(_one(finished_run, "all/eval/*/aggregate.json").read_text(encoding="utf-8"))
    assert aggregate["n_splits"] == 2
    assert aggregate["split_indices"] == [0, 1]
    assert aggregate["std_kind"] == "population"
    for name in ("U_czsl", "S_gzsl", "U_gzsl", "H"):
        assert 0.0 <= aggregate["metrics"][name]["mean"] <= 100.0
    assert "Method" in _one(finished_run, "all/eval/*/table.txt").read_text(encoding="utf-8")
    for index in (0, 1):
        assert _one(finished_run, f"{index}/classifier/*/gzsl.pt").exists()
        assert _one(finished_run, f"{index}/eval/*/confusion_gzsl.png").exists()
        assert _one(finished_run, f"{index}/features/*/cache.json").exists()


def test_eval_rerun_is_byte_identical(finished_run, config_file):
    report = _one(finished_run, "0/eval/*/report.json")
    before = report.read_bytes()
    assert _run("eval", "--config", str(config_file)) == 0
    assert report.read_bytes() == before


def test_rerun_skips_finished_stages(finished_run, config_file):
    weights = _one(finished_run, "0/gcat/*/gcat.pt")
    stamp = weights.stat().st_mtime_ns
    assert _run("train-gcat", "--config", str(config_file), "--split", "0") == 0
    assert weights.stat().st_mtime_ns == stamp


def test_missing_upstream_artifact_exits_3(config_file, tmp_path):
    assert _run("train-gan", "--config", str(config_file), "--outdir", str(tmp_path / "fresh")) == 3


def test_bad_gate_activation_exits_2(config_file):
    assert _run("split", "--config", str(config_file), "--gate-activation", "tanh") == 2


def test_unknown_split_index_exits_2(config_file):
    assert _run("split", "--config", str(config_file), "--split", "5") == 2


def test_bad_set_override():
    args = PipelineApplication().parser.parse_args(["eval", "--set", "no-equals-sign"])
    with pytest.raises(ConfigError):
        PipelineApplication.collect_overrides(args)


def test_flags_become_overrides():
    args = PipelineApplication().parser.parse_args(
        ["run-all", "--seed", "9", "--n-seen", "12", "--n-unseen", "4", "--ablate", "decoder=off",
         "--set", "gan.epochs=3"]
    )
    overrides = PipelineApplication.collect_overrides(args)
    assert overrides == {
        "seed": 9, "split.n_seen": 12, "split.n_unseen": 4,
        "gcat.ablation": "encoder_only", "gan.epochs": "3",
    }


def test_encoder_only_ablation_runs(config_file, tmp_path):
    outdir = tmp_path / "ablation"
    assert _run("run-all", "--config", str(config_file), "--outdir", str(outdir), "--ablate", "decoder=off") == 0
    assert _one(outdir, "all/eval/*/aggregate.json").exists()


def test_mixed_configuration_needs_force(finished_run, config_file):
    manifest = _one(finished_run, "1/classifier/*/manifest.json")
    payload = json.loads(manifest.read_text(encoding="utf-8"))
    payload["config_hash"] = "tampered"
    manifest.write_text(json.dumps(payload), encoding="utf-8")
    assert _run("eval", "--config", str(config_file)) == 2
    assert _run("eval", "--config", str(config_file), "--force") == 0


def test_classifier_inputs_rewritten_after_training_need_force(finished_run, config_file):
    synthetic = _one(finished_run, "0/synthetic/*/unseen.pt")
    synthetic.write_bytes(synthetic.read_bytes() + b"\0")
    assert _run("eval", "--config", str(config_file)) == 2
    assert _run("eval", "--config", str(config_file), "--force") == 0


def test_visualize_writes_attention_maps(finished_run, config_file):
    assert _run("visualize", "--config", str(config_file), "--split", "0") == 0
    pngs = sorted(finished_run.glob("0/attention/*/*_block*.png"))
    # два невиданных класса, два блока декодера
    assert len(pngs) == 4
    assert len(sorted(finished_run.glob("0/attention/*/*_overlay.png"))) == 2


def test_cached_features_equal_fresh_extraction(finished_run, config_file):
    app = PipelineApplication(environ={})
    app.prepare(app.parser.parse_args(["extract", "--config", str(config_file)]))
    split = app._load_split(0)
    service = GcatService(app.config, app.provider)
    model = app._load_gcat(0, service)
    cache = app._features(0)
    for roster in ("seen_train", "seen_test", "unseen_test"):
        cached = cache.load(roster)
        fresh = service.extract_features(model, app._roster(split, roster), workers=2)
        assert cached.sample_ids == fresh.sample_ids
        assert torch.equal(cached.features, fresh.features)


def _desk_argv(tmp_path, *extra):
    manifest = tmp_path / "desk.csv"
    if not manifest.exists():
        write_synthetic_manifest(manifest, [200] * len(CADDIAN_CLASSES), CADDIAN_CLASSES)
    return ["--config", str(DESK_CONFIG), "--outdir", str(tmp_path / "desk"), "--set", f"manifest={manifest}", *extra]


@pytest.mark.slow
def test_desk_benchmark_beats_chance(tmp_path):
    assert _run("run-all", *_desk_argv(tmp_path)) == 0
    aggregate = _one(tmp_path / "desk", "all/eval/*/aggregate.json")
    metrics = json.loads(aggregate.read_text(encoding="utf-8"))["metrics"]
    chance = 100.0 / 6
    assert metrics["U_czsl"]["mean"] >= 3 * chance
    assert metrics["H"]["mean"] > 0.0
    before = aggregate.read_bytes()
    assert _run("eval", *_desk_argv(tmp_path)) == 0
    assert aggregate.read_bytes() == before


@pytest.mark.slow
def test_ablation_ordering_on_desk_profile(tmp_path):
    scores = {"full": [], "decoder=off": [], "gcat=off": []}
    for seed in (1, 2, 3):
        for variant in scores:
            extra = ["--seed", str(seed), "--set", "split.n_splits=1"]
            if variant != "full":
                extra += ["--ablate", variant]
            outdir = tmp_path / f"{variant.replace('=', '_')}_{seed}"
            argv = _desk_argv(tmp_path, *extra)
            argv[argv.index("--outdir") + 1] = str(outdir)
            assert _run("run-all", *argv) == 0
            aggregate = json.loads(_one(outdir, "all/eval/*/aggregate.json").read_text(encoding="utf-8"))
            scores[variant].append(aggregate["metrics"]["H"]["mean"])
    median = {variant: statistics.median(values) for variant, values in scores.items()}
    assert median["full"] >= median["decoder=off"] >= median["gcat=off"]
