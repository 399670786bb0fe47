import numpy as np
import pytest

from tcdfern import evaluation as E
from tcdfern.errors import StructuralError


def test_confusion_perfect_is_diagonal():
    labels = np.array([0, 1, 2, 3, 0, 2])
    cm = E.confusion(labels, labels, 4)
    assert (cm.counts == np.diag([2, 1, 2, 1])).all()


def test_confusion_single_column():
    labels = np.array([0, 1, 2, 3])
    preds = np.zeros(4, dtype=int)
    cm = E.confusion(preds, labels, 4)
    assert (cm.counts[:, 0] == 1).all() and cm.counts[:, 1:].sum() == 0


def test_confusion_empty_is_zero():
    cm = E.confusion(np.array([], dtype=int), np.array([], dtype=int), 4)
    assert cm.counts.sum() == 0


def test_confusion_out_of_range():
    with pytest.raises(StructuralError):
        E.confusion(np.array([4]), np.array([0]), 4)


def test_metrics_diagonal_all_ones():
    r = E.metrics(E.ConfusionMatrix(np.diag([5, 3, 2, 7])))
    assert r.accuracy == 1.0 and r.macro_f1 == 1.0
    np.testing.assert_array_equal(r.precision, 1.0)


def test_metrics_hand_computed_binary():
    # [[8,2],[2,8]]: accuracy 16/20, precision 8/10, recall 8/10, f1 0.8
    r = E.metrics(E.ConfusionMatrix(np.array([[8, 2], [2, 8]])))
    assert abs(r.accuracy - 0.8) < 1e-12
    np.testing.assert_allclose(r.precision, [0.8, 0.8])
    np.testing.assert_allclose(r.recall, [0.8, 0.8])
    np.testing.assert_allclose(r.f1, [0.8, 0.8])
    assert abs(r.macro_f1 - 0.8) < 1e-12


def test_metrics_zero_support_excluded():
    cm = E.ConfusionMatrix(np.array([[5, 0, 0], [1, 4, 0], [0, 0, 0]]))
    r = E.metrics(cm)
    assert r.excluded_classes == (2,)
    # macro over the two supported classes only
    assert abs(r.macro_recall - (1.0 + 0.8) / 2) < 1e-12


def test_metrics_single_class_support():
    cm = E.ConfusionMatrix(np.array([[7, 3], [0, 0]]))
    r = E.metrics(cm)
    assert abs(r.accuracy - r.recall[0]) < 1e-12


def test_metrics_accuracy_matches_direct_rate():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=500)
    preds = rng.integers(0, 4, size=500)
    r = E.metrics(E.confusion(preds, labels, 4))
    assert abs(r.accuracy - (preds == labels).mean()) < 1e-12


def test_metrics_empty_rejected():
    with pytest.raises(StructuralError):
        E.metrics(E.ConfusionMatrix(np.zeros((2, 2), dtype=int)))


def test_regroup_scenario3_identity():
    preds = np.array([1, 2, 3, 4])
    labels = np.array([4, 3, 2, 1])
    p, l = E.regroup_scenario(preds, labels, 3)
    np.testing.assert_array_equal(p, preds - 1)
    np.testing.assert_array_equal(l, labels - 1)
    assert len(p) == len(preds)  # scenario 3 conserves every sample


def test_regroup_scenario1_drops_rx_cases():
    preds = np.array([1, 2, 2, 4, 3, 1])
    labels = np.array([1, 2, 3, 4, 1, 2])
    p, l = E.regroup_scenario(preds, labels, 1)
    # labels 3 and 4 dropped -> samples 0, 1, 4, 5 remain with labels 1,2,1,2
    np.testing.assert_array_equal(l, [0, 1, 0, 1])
    # kept predictions 1,2,3,1: case 2 maps to TX presence, cases 1 and 3 to empty
    np.testing.assert_array_equal(p, [0, 1, 0, 0])


def test_regroup_scenario2_keeps_empty_and_both():
    preds = np.array([1, 4, 2, 4])
    labels = np.array([1, 4, 4, 2])
    p, l = E.regroup_scenario(preds, labels, 2)
    np.testing.assert_array_equal(l, [0, 1, 1])  # case 4 -> second class
    np.testing.assert_array_equal(p, [0, 1, 1])


def test_regroup_unknown_scenario():
    with pytest.raises(StructuralError):
        E.regroup_scenario(np.array([1]), np.array([1]), 4)


def test_voting_ablation_identical_perfect_pairs():
    n = 40
    tx = np.tile([0, 1], n // 2)
    perfect = np.zeros((n, 4))
    perfect[tx == 0, 0] = 1.0
    perfect[tx == 1, 1] = 1.0
    rep = E.voting_ablation({1: perfect, 2: perfect.copy()}, tx)
    assert rep.per_pair_accuracy == (1.0, 1.0)
    assert rep.voted_accuracy == 1.0 and rep.gain_over_mean == 0.0


def test_voting_ablation_strong_pair_carries_weak():
    # derived by enumeration: pair 1 always right with margin 0.8/0.2;
    # pair 2 wrong on one sample with margin 0.6/0.4 -> vote fixes it
    tx = np.array([0, 1, 1, 0])
    def binary(pv):  # embed binary TX probs into 4-case form [e, p, 0, 0]
        return np.stack([pv[:, 0], pv[:, 1], np.zeros(len(pv)), np.zeros(len(pv))], axis=1)
    strong = binary(np.array([[0.8, 0.2], [0.2, 0.8], [0.2, 0.8], [0.8, 0.2]]))
    weak = binary(np.array([[0.6, 0.4], [0.4, 0.6], [0.4, 0.6], [0.4, 0.6]]))
    rep = E.voting_ablation({1: strong, 2: weak}, tx)
    assert rep.per_pair_accuracy == (1.0, 0.75)
    assert rep.voted_accuracy == 1.0
    assert rep.voted_accuracy >= max(rep.per_pair_accuracy)


def test_voting_ablation_needs_two_pairs():
    with pytest.raises(StructuralError):
        E.voting_ablation({1: np.zeros((4, 4))}, np.zeros(4, dtype=int))


def test_format_metric_table_runs():
    r = E.metrics(E.ConfusionMatrix(np.array([[8, 2], [2, 8]])))
    text = E.format_metric_table("demo", {"pair1": r})
    assert "pair1" in text and "0.8000" in text
