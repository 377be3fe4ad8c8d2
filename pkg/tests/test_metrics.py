import json
import logging

import numpy as np
import pytest
from sklearn.metrics import classification_report

from capsulefusion.errors import DataError, ShapeError
from capsulefusion.metrics import (
    ConfusionMatrix,
    balanced_accuracy,
    confusion,
    f1_score,
    render,
    report,
    report_from_json,
    summarize,
    variant_table,
)

# Per-class (precision, recall, F1, support) of the published fusion model.
PUBLISHED = [
    ("angioectasia", 0.865, 0.813, 0.838, 497),
    ("bleeding", 0.840, 0.822, 0.831, 359),
    ("erosion", 0.785, 0.764, 0.774, 1155),
    ("erythema", 0.614, 0.535, 0.572, 297),
    ("foreign body", 0.911, 0.844, 0.876, 340),
    ("lymphangiectasia", 0.888, 0.854, 0.871, 343),
    ("normal", 0.978, 0.986, 0.982, 12287),
    ("polyp", 0.692, 0.752, 0.721, 500),
    ("ulcer", 0.989, 0.976, 0.982, 286),
    ("worms", 0.944, 1.000, 0.971, 68),
]
ROUNDING = 0.0015


@pytest.fixture
def published():
    return summarize([(name, p, r, s) for name, p, r, _, s in PUBLISHED])


class TestConfusion:
    def test_diagonal(self):
        labels = [0, 1, 1, 9, 9, 9]
        cm = confusion(labels, labels)
        assert np.array_equal(np.diagonal(cm.counts), [1, 2, 0, 0, 0, 0, 0, 0, 0, 3])
        assert cm.total == 6

    def test_single_sample(self):
        cm = confusion([3], [7])
        assert cm.counts[3, 7] == 1 and cm.total == 1

    def test_matches_pairwise_count(self):
        rng = np.random.default_rng(5)
        labels, preds = rng.integers(0, 10, 1000), rng.integers(0, 10, 1000)
        expected = np.zeros((10, 10), dtype=np.int64)
        for t, p in zip(labels, preds):
            expected[t, p] += 1
        np.testing.assert_array_equal(confusion(labels, preds).counts, expected)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([1, 2], [1])

    def test_out_of_range(self):
        with pytest.raises(ShapeError) as err:
            confusion([1, 10], [1, 1])
        assert err.value.details["position"] == 1


class TestReport:
    def test_perfect(self):
        rep = report(confusion(range(10), range(10)))
        assert rep.accuracy == rep.balanced_accuracy == 1.0
        assert all(r.precision == r.recall == r.f1 == 1.0 for r in rep.rows)
        assert "1.000" in render(rep)

    def test_two_class_hand_counts(self):
        rep = report(ConfusionMatrix(np.array([[9, 1], [0, 10]])), class_names=("a", "b"))
        assert [r.precision for r in rep.rows] == pytest.approx([1.0, 10 / 11])
        assert [r.recall for r in rep.rows] == pytest.approx([0.9, 1.0])
        assert rep.accuracy == pytest.approx(0.95)
        assert rep.balanced_accuracy == pytest.approx(0.95)

    def test_balanced_accuracy_skips_unsupported_classes(self):
        cm = ConfusionMatrix(np.array([[3, 1, 0], [0, 0, 0], [0, 1, 1]]))
        assert balanced_accuracy(cm) == pytest.approx((0.75 + 0.5) / 2)

    def test_balanced_accuracy_is_macro_recall(self):
        rng = np.random.default_rng(2)
        rep = report(confusion(rng.integers(0, 10, 300), rng.integers(0, 10, 300)))
        assert rep.balanced_accuracy == pytest.approx(rep.macro_avg[1])

    def test_zero_denominators_are_flagged(self, caplog):
        with caplog.at_level(logging.WARNING, logger="capsulefusion.metrics"):
            rep = report(confusion([0, 0, 1], [0, 0, 0]))
        row = rep.rows[1]
        assert row.precision == 0.0 and row.precision_undefined
        assert not row.recall_undefined
        assert rep.rows[5].recall_undefined
        assert "undefined" in caplog.text
        parsed = json.loads(render(rep, "json"))
        assert parsed["rows"][1]["precision_undefined"] is True

    def test_f1_bounds(self):
        assert f1_score(0.0, 0.0) == 0.0
        assert 0.5 <= f1_score(0.5, 1.0) <= 1.0

    def test_empty(self):
        with pytest.raises(DataError):
            report(ConfusionMatrix(np.zeros((10, 10), dtype=np.int64)))

    def test_json_restores_report(self):
        rep = report(confusion([0, 1, 2, 2, 3], [0, 1, 2, 3, 3]))
        assert report_from_json(render(rep, "json")) == rep

    def test_unknown_format(self):
        with pytest.raises(ShapeError):
            render(report(confusion([0], [0])), "html")

    def test_agrees_with_sklearn_classification_report(self):
        rng = np.random.default_rng(9)
        labels, preds = rng.integers(0, 10, 400), rng.integers(0, 10, 400)
        expected = classification_report(labels, preds, labels=list(range(10)), output_dict=True, zero_division=0)
        rep = report(confusion(labels, preds))
        for k, row in enumerate(rep.rows):
            assert row.precision == pytest.approx(expected[str(k)]["precision"])
            assert row.recall == pytest.approx(expected[str(k)]["recall"])
            assert row.f1 == pytest.approx(expected[str(k)]["f1-score"])
            assert row.support == expected[str(k)]["support"]
        assert rep.weighted_avg[2] == pytest.approx(expected["weighted avg"]["f1-score"])


class TestPublishedTable:
    def test_recomputed_f1(self, published):
        for row, (_, _, _, f1, _) in zip(published.rows, PUBLISHED):
            assert row.f1 == pytest.approx(f1, abs=ROUNDING)

    def test_averages(self, published):
        assert published.macro_avg == pytest.approx((0.851, 0.835, 0.842), abs=ROUNDING)
        assert published.weighted_avg == pytest.approx((0.939, 0.940, 0.939), abs=ROUNDING)
        assert published.accuracy == pytest.approx(0.940, abs=ROUNDING)
        assert published.total_support == 16132

    def test_accuracy_and_balanced_accuracy_differ(self, published):
        assert published.balanced_accuracy == pytest.approx(0.835, abs=ROUNDING)
        assert published.accuracy - published.balanced_accuracy > 0.1

    def test_text_rows(self, published):
        lines = [l.strip() for l in render(published).splitlines()]
        for name, p, r, f1, support in PUBLISHED:
            line = next(l for l in lines if l.startswith(name.title()))
            assert line.split()[-4:] == [f"{p:.3f}", f"{r:.3f}", f"{f1:.3f}", str(support)]
        assert next(l for l in lines if l.startswith("Macro Avg")).split()[-4:] == \
            ["0.851", "0.835", "0.842", "16132"]
        assert next(l for l in lines if l.startswith("Accuracy")).split()[1] == "0.940"

    def test_variant_table(self):
        text = variant_table([
            ("Efficient Fusion U-Net with Attention", 0.929),
            ("Efficient", 0.919),
            ("U-Net", 0.814),
            ("Efficient Fusion U-Net", 0.94),
        ])
        lines = [l.strip() for l in text.splitlines()]
        assert lines[0].split() == ["Model", "Accuracy"]
        assert lines[-1].split()[-1] == "0.940"
        assert lines[3].split() == ["U-Net", "0.814"]
