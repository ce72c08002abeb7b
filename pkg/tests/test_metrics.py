import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechclf.metrics import (
    ClassMetrics,
    ConfusionMatrix,
    LengthMismatch,
    confusion,
    f1_score,
    metrics,
    render_report,
)

from conftest import REFERENCE_CONFUSION


class TestConfusion:
    def test_all_correct_balanced(self):
        labels = [0, 0, 0, 1, 1, 1, 2, 2, 2]
        cm = confusion(labels, labels)
        np.testing.assert_array_equal(cm.counts, np.diag([3, 3, 3]))

    def test_empty_input(self):
        cm = confusion([], [])
        assert cm.counts.sum() == 0

    def test_orientation_rows_are_actual(self):
        cm = confusion(predictions=[2], labels=[0])
        assert cm.counts[0, 2] == 1

    def test_matches_tally_oracle(self, rng):
        preds = rng.integers(0, 3, 500)
        labels = rng.integers(0, 3, 500)
        cm = confusion(preds, labels)
        expected = np.zeros((3, 3), dtype=np.int64)
        for p, a in zip(preds, labels):  # independent scripted tally
            expected[a][p] += 1
        np.testing.assert_array_equal(cm.counts, expected)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion([0, 1], [0])

    def test_bad_class_index(self):
        with pytest.raises(ValueError):
            confusion([3], [0])


class TestMetrics:
    def test_published_psychotic_f1_identity(self):
        # recall 81.16%, precision 80.00% -> F1 80.58%
        assert f1_score(0.8116, 0.80) * 100 == pytest.approx(80.58, abs=0.02)

    def test_published_depressed_f1_identity(self):
        # recall 13.33%, precision 66.67% -> F1 22.22% (printed as 22.21)
        assert f1_score(0.1333, 0.6667) * 100 == pytest.approx(22.22, abs=0.02)

    def test_reference_matrix_reproduces_published_table(self):
        # One integer matrix consistent with every published figure for the
        # best text model: recalls, precisions, F1s and 75.68% accuracy.
        m = metrics(ConfusionMatrix(REFERENCE_CONFUSION))
        np.testing.assert_allclose(100 * m.recall, [81.16, 13.33, 84.38],
                                   atol=0.005)
        np.testing.assert_allclose(100 * m.precision, [80.00, 66.67, 72.00],
                                   atol=0.005)
        np.testing.assert_allclose(100 * m.f1, [80.58, 22.22, 77.70],
                                   atol=0.005)
        assert 100 * m.accuracy == pytest.approx(75.68, abs=0.005)

    def test_perfect_diagonal(self):
        m = metrics(ConfusionMatrix(np.diag([5, 7, 2])))
        np.testing.assert_array_equal(m.recall, 1.0)
        np.testing.assert_array_equal(m.precision, 1.0)
        np.testing.assert_array_equal(m.f1, 1.0)
        assert m.accuracy == 1.0

    def test_zero_denominators_give_zero(self):
        counts = np.array([[4, 0, 0], [3, 0, 0], [0, 0, 2]])
        m = metrics(ConfusionMatrix(counts))
        assert m.recall[1] == 0.0
        assert m.precision[1] == 0.0
        assert m.f1[1] == 0.0

    def test_zero_matrix(self):
        m = metrics(ConfusionMatrix(np.zeros((3, 3), dtype=int)))
        assert m.accuracy == 0.0
        np.testing.assert_array_equal(m.f1, 0.0)

    @given(st.lists(st.integers(0, 50), min_size=9, max_size=9))
    @settings(max_examples=200, deadline=None)
    def test_micro_recall_equals_accuracy(self, cells):
        counts = np.array(cells).reshape(3, 3)
        cm = ConfusionMatrix(counts)
        m = metrics(cm)
        total = counts.sum()
        if total:
            micro = (m.recall * counts.sum(axis=1)).sum() / total
            assert micro == pytest.approx(m.accuracy, abs=1e-12)

    @given(st.lists(st.integers(0, 30), min_size=9, max_size=9),
           st.integers(2, 7))
    @settings(max_examples=100, deadline=None)
    def test_scale_covariance(self, cells, k):
        counts = np.array(cells).reshape(3, 3)
        a = metrics(ConfusionMatrix(counts))
        b = metrics(ConfusionMatrix(counts * k))
        np.testing.assert_allclose(a.recall, b.recall, atol=1e-12)
        np.testing.assert_allclose(a.precision, b.precision, atol=1e-12)
        np.testing.assert_allclose(a.f1, b.f1, atol=1e-12)
        assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)

    def test_matches_pairwise_oracle(self, rng):
        # Recompute every metric from the raw (prediction, label) pairs.
        for _ in range(50):
            preds = rng.integers(0, 3, 100)
            labels = rng.integers(0, 3, 100)
            m = metrics(confusion(preds, labels))
            for c in range(3):
                tp = int(((preds == c) & (labels == c)).sum())
                actual = int((labels == c).sum())
                predicted = int((preds == c).sum())
                assert m.recall[c] == (tp / actual if actual else 0.0)
                assert m.precision[c] == (tp / predicted if predicted else 0.0)
            assert m.accuracy == (preds == labels).mean()


class TestReport:
    def _sections(self):
        cm = ConfusionMatrix(REFERENCE_CONFUSION)
        return {"test": (cm, metrics(cm))}

    def test_byte_identical_across_runs(self):
        a_json, a_text = render_report(self._sections(), {"run": "x"})
        b_json, b_text = render_report(self._sections(), {"run": "x"})
        assert a_json == b_json
        assert a_text == b_text

    def test_json_round_trip_exact(self):
        json_text, _ = render_report(self._sections(), {})
        doc = json.loads(json_text)
        section = doc["sections"]["test"]
        m = metrics(ConfusionMatrix(np.array(section["confusion"])))
        assert section["accuracy"] == m.accuracy
        assert section["per_class"]["psychotic"]["f1"] == m.f1[0]

    def test_zero_matrix_renders(self):
        cm = ConfusionMatrix(np.zeros((3, 3), dtype=int))
        json_text, text = render_report({"val": (cm, metrics(cm))}, {})
        assert "0.00%" in text
        assert json.loads(json_text)["sections"]["val"]["accuracy"] == 0.0

    def test_two_sections_side_by_side(self):
        cm = ConfusionMatrix(REFERENCE_CONFUSION)
        sections = {"validation": (cm, metrics(cm)),
                    "test": (cm, metrics(cm))}
        json_text, text = render_report(sections, {})
        doc = json.loads(json_text)
        assert list(doc["sections"]) == ["validation", "test"]
        assert "== validation ==" in text and "== test ==" in text
        assert "75.68%" in text
