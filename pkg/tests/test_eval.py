import logging
import math

import numpy as np
import pytest
import torch

from zsugr_core.errors import DataError
from zsugr_core.services.eval_service import (
    EvalReport,
    MicroScores,
    aggregate_splits,
    baseline_cosine_predict,
    confusion,
    evaluate_split,
    harmonic_mean,
    per_class_top1,
)
from zsugr_core.services.zsl_service import PredictionResult
from zsugr_core.storage.feature_cache import FeatureSet


def _pred(true, predicted, i=0):
    return PredictionResult(
        sample_id=f"s{i}", true_class=true, predicted_class=predicted,
        probabilities=torch.tensor([1.0]), label_order=[predicted],
    )


def _preds(pairs):
    return [_pred(t, p, i) for i, (t, p) in enumerate(pairs)]


def _report(split_index, s, u, czsl=50.0):
    h = harmonic_mean(s, u)
    return EvalReport(
        split_index=split_index, U_czsl=czsl, S_gzsl=s, U_gzsl=u, H=h,
        micro=MicroScores(U_czsl=czsl, S_gzsl=s, U_gzsl=u, H=h),
        per_class={}, n_samples={},
    )


def test_harmonic_mean():
    assert harmonic_mean(94.11, 2.58) == pytest.approx(5.02, abs=0.01)
    assert harmonic_mean(37.5, 37.5) == pytest.approx(37.5)
    assert harmonic_mean(80.0, 0.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


def test_per_class_mean_differs_from_micro():
    # класс 0: 99 из 99 верно, класс 1: 0 из 1
    predictions = _preds([(0, 0)] * 99 + [(1, 0)])
    result = per_class_top1(predictions, [0, 1])
    assert result.per_class == {0: 100.0, 1: 0.0}
    assert result.mean == pytest.approx(50.0)
    assert result.micro == pytest.approx(99.0)


def test_per_class_is_order_invariant():
    pairs = [(0, 0), (0, 1), (1, 1), (2, 0), (2, 2), (2, 2)]
    forward = per_class_top1(_preds(pairs), [0, 1, 2])
    backward = per_class_top1(_preds(pairs[::-1]), [0, 1, 2])
    assert forward.mean == backward.mean
    assert forward.mean == pytest.approx((50.0 + 100.0 + 200.0 / 3) / 3)


def test_empty_predictions():
    with pytest.raises(DataError):
        per_class_top1([], [0, 1])


def test_true_class_outside_label_set():
    with pytest.raises(DataError, match="вне набора"):
        per_class_top1(_preds([(5, 5)]), [0, 1])


def test_classes_without_samples_are_excluded(caplog):
    with caplog.at_level(logging.WARNING):
        result = per_class_top1(_preds([(0, 0), (0, 1)]), [0, 1, 2])
    assert result.excluded == [1, 2]
    assert result.mean == pytest.approx(50.0)
    assert "исключены" in caplog.text


def test_evaluate_split():
    report = evaluate_split(
        0,
        czsl=_preds([(2, 2), (3, 2)]),
        gzsl_seen=_preds([(0, 0), (1, 1), (1, 2)]),
        gzsl_unseen=_preds([(2, 0), (3, 3)]),
        seen_classes=[0, 1],
        unseen_classes=[2, 3],
        class_names=["a", "b", "c", "d"],
    )
    assert report.U_czsl == pytest.approx(50.0)
    assert report.S_gzsl == pytest.approx(75.0)
    assert report.U_gzsl == pytest.approx(50.0)
    assert report.H == pytest.approx(60.0)
    assert report.per_class == {"a": 100.0, "b": 50.0, "c": 0.0, "d": 100.0}
    assert report.n_samples == {"a": 1, "b": 2, "c": 1, "d": 1}
    assert report.micro.S_gzsl == pytest.approx(200.0 / 3)
    assert report.baseline is None


def test_aggregate_population_std():
    reports = [_report(0, 20.0, 20.0), _report(1, 30.0, 30.0), _report(2, 40.0, 40.0)]
    aggregate = aggregate_splits(reports)
    assert aggregate.n_splits == 3
    assert aggregate.split_indices == [0, 1, 2]
    assert aggregate.std_kind == "population"
    assert aggregate.metrics["H"].mean == pytest.approx(30.0)
    assert aggregate.metrics["H"].std == pytest.approx(math.sqrt(200.0 / 3), abs=1e-3)


def test_aggregate_averages_h_per_split():
    aggregate = aggregate_splits([_report(0, 90.0, 10.0), _report(1, 10.0, 90.0)])
    assert aggregate.metrics["H"].mean == pytest.approx(18.0)
    assert harmonic_mean(aggregate.metrics["S_gzsl"].mean, aggregate.metrics["U_gzsl"].mean) == pytest.approx(50.0)


def test_aggregate_single_split_has_zero_std():
    aggregate = aggregate_splits([_report(4, 70.0, 30.0)])
    assert all(summary.std == 0.0 for summary in aggregate.metrics.values())
    assert aggregate.baseline is None


def test_aggregate_needs_reports():
    with pytest.raises(DataError):
        aggregate_splits([])


def _features(rows, class_ids):
    return FeatureSet(
        sample_ids=[f"f{i}" for i in range(len(rows))],
        features=torch.tensor(rows, dtype=torch.float32),
        class_ids=torch.tensor(class_ids),
    )


def test_cosine_baseline_picks_closest_semantics():
    semantics = {0: torch.tensor([1.0, 0.0]), 1: torch.tensor([0.0, 1.0]), 2: torch.tensor([-1.0, 0.0])}
    features = _features([[3.0, 0.1], [0.2, 5.0], [-1.0, 0.5]], [0, 1, 2])
    predictions = baseline_cosine_predict(features, semantics, [0, 1, 2])
    assert [p.predicted_class for p in predictions] == [0, 1, 2]
    restricted = baseline_cosine_predict(features, semantics, [1, 2])
    assert restricted[0].predicted_class in (1, 2)
    assert restricted[0].probabilities.sum().item() == pytest.approx(1.0)


def test_cosine_baseline_rejects_zero_features():
    semantics = {0: torch.tensor([1.0, 0.0])}
    with pytest.raises(DataError, match="f1"):
        baseline_cosine_predict(_features([[1.0, 0.0], [0.0, 0.0]], [0, 0]), semantics, [0])


def test_confusion_matrix(tmp_path):
    predictions = _preds([(0, 0), (0, 1), (1, 1), (2, 0), (2, 2)])
    matrix = confusion(predictions, [0, 1, 2])
    assert np.array_equal(np.diag(matrix.matrix), [1, 1, 1])
    assert matrix.row_sums() == {0: 2, 1: 1, 2: 2}
    assert int(matrix.matrix.sum()) == len(predictions)
    text = matrix.to_csv(tmp_path / "confusion.csv", ["a", "b", "c"]).read_text(encoding="utf-8")
    assert text.splitlines()[0] == "true\\predicted,a,b,c"


def test_confusion_rejects_classes_outside_label_set():
    with pytest.raises(DataError, match="s1"):
        confusion(_preds([(0, 0), (0, 5)]), [0, 1])
    with pytest.raises(DataError):
        confusion(_preds([(4, 0)]), [0, 1])


def test_confusion_without_predictions():
    matrix = confusion([], [3, 1])
    assert matrix.labels == [1, 3]
    assert matrix.matrix.shape == (2, 2)
    assert matrix.matrix.sum() == 0
