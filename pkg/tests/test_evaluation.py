import csv
import io
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from matterlens.errors import MisalignedTraces
from matterlens.evaluation import (
    LABEL_ORDER,
    Subset,
    SweepKind,
    device_csv,
    device_table,
    evaluate_devices,
    evaluate_labels,
    labeling_table,
    reports_json,
    robustness_sweep,
    score_predictions,
    summarize,
    sweep_csv,
)
from matterlens.model import DeviceType as T, InteractionLabel as L
from matterlens.synth import load_scenario

TRUTH_LABELS = [lab for lab in L if lab is not L.UNKNOWN]


def test_counting_oracle_99():
    truth = {i: L.IRA1 if i % 2 else L.END for i in range(100)}
    pred = dict(truth)
    pred[0] = L.UNKNOWN
    rep = evaluate_labels(pred, truth)
    assert rep.accuracy == 99.0
    assert rep.support == 100
    assert rep.classes == ("END", "IRA1")
    # END recall 49/50, IRA1 recall 1; both precisions 1
    assert rep.recall == pytest.approx(100 * (49 / 50 + 1) / 2)
    assert rep.precision == pytest.approx(100.0)


def test_never_predicted_class_has_zero_precision():
    truth = {1: L.IRA1, 2: L.WRA1}
    pred = {1: L.IRA1, 2: L.IRA1}
    rep = evaluate_labels(pred, truth)
    assert rep.precision == pytest.approx(100 * (0.5 + 0.0) / 2)
    assert rep.recall == pytest.approx(50.0)


def test_unusual_subset_filters_truth():
    truth = {1: L.IRA1, 2: L.END, 3: L.WRA1, 4: L.IRA2}
    pred = {1: L.IRA1, 2: L.IRA1, 3: L.UNKNOWN, 4: L.IRA2}
    rep = evaluate_labels(pred, truth, Subset.UNUSUAL)
    assert rep.support == 2 and rep.accuracy == 50.0


def test_lost_packets_are_not_scored():
    truth = {1: L.IRA1, 2: L.IRA2, 3: L.END}
    rep = evaluate_labels({1: L.IRA1, 3: L.END}, truth)
    assert rep.support == 2 and rep.accuracy == 100.0


def test_misaligned_inputs():
    with pytest.raises(MisalignedTraces):
        evaluate_labels({5: L.END}, {1: L.END})
    with pytest.raises(MisalignedTraces):
        evaluate_labels({}, {1: L.END})
    with pytest.raises(MisalignedTraces):
        evaluate_labels({1: L.END}, {1: L.UNKNOWN})
    with pytest.raises(MisalignedTraces):
        evaluate_devices({("d", "x"): T.PLUG}, {("d", "y"): T.PLUG})
    with pytest.raises(MisalignedTraces):
        score_predictions(["a"], ["a", "b"], ["a", "b"])


pairs = st.lists(
    st.tuples(st.sampled_from(TRUTH_LABELS), st.sampled_from(list(L))),
    min_size=1,
    max_size=60,
)


@settings(max_examples=300, deadline=None)
@given(pairs)
def test_metrics_agree_with_sklearn(rows):
    truth = [t.value for t, _ in rows]
    pred = [p.value for _, p in rows]
    rep = score_predictions(truth, pred, LABEL_ORDER)
    present = sorted(set(truth), key=LABEL_ORDER.index)
    p, r, f, _ = precision_recall_fscore_support(truth, pred, labels=present, average=None, zero_division=0)
    assert rep.accuracy == pytest.approx(100 * accuracy_score(truth, pred))
    assert rep.precision == pytest.approx(100 * p.mean())
    assert rep.recall == pytest.approx(100 * r.mean())
    assert rep.f1 == pytest.approx(100 * f.mean())
    assert (rep.confusion == confusion_matrix(truth, pred, labels=list(LABEL_ORDER))).all()


@settings(max_examples=200, deadline=None)
@given(pairs, st.randoms())
def test_metrics_invariant_under_row_order(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a = evaluate_labels({i: p for i, (_, p) in enumerate(rows)}, {i: t for i, (t, _) in enumerate(rows)})
    b = score_predictions([t.value for t, _ in shuffled], [p.value for _, p in shuffled], LABEL_ORDER)
    for m in ("accuracy", "precision", "recall", "f1"):
        assert getattr(a, m) == pytest.approx(getattr(b, m))


def test_device_report():
    truth = {("a", "d1"): T.LIGHTING, ("a", "d2"): T.LIGHTING, ("b", "d1"): T.PLUG}
    pred = {("a", "d1"): T.LIGHTING, ("a", "d2"): T.PLUG, ("b", "d1"): T.PLUG}
    rep = evaluate_devices(pred, truth)
    assert rep.accuracy == pytest.approx(200 / 3)
    assert rep.classes == ("Lighting", "Plug")
    doc = rep.to_json()
    assert doc["averaging"] == "macro" and doc["support"] == 3


def test_sweep_outputs():
    cfg = replace(load_scenario("d2"), days=10)
    reports = robustness_sweep(cfg, [0.0, 0.25], SweepKind.DELAY, seeds=[1, 2])
    assert len(reports) == 2 * 2 * 2
    rows = summarize(reports)
    assert [(r.level, r.subset, r.n_seeds) for r in rows] == [
        (0.0, "All", 2),
        (0.0, "UnusualOnly", 2),
        (0.25, "All", 2),
        (0.25, "UnusualOnly", 2),
    ]
    table = list(csv.DictReader(io.StringIO(sweep_csv(rows))))
    assert table[0]["accuracy"] == "100.0000" and table[0]["kind"] == "delay"
    assert float(table[2]["accuracy"]) < 100
    assert len(json.loads(reports_json(reports))) == 8
    with pytest.raises(ValueError):
        robustness_sweep(cfg, [1.5], SweepKind.LOSS, seeds=[1])


def test_labeling_table_is_perfect_without_perturbation():
    rows = labeling_table(replace(load_scenario("d2"), days=10), seeds=[1, 2, 3])
    assert all(r.mean["accuracy"] == 100.0 and r.std["accuracy"] == 0.0 for r in rows)


def test_device_table_has_oracle_column():
    rows = device_table({"exp1": replace(load_scenario("exp1"), days=50)}, seed=1)
    assert rows[0].oracle_accuracy == pytest.approx(90.0096)
    text = device_csv(rows)
    assert text.splitlines()[0].startswith("experiment,accuracy")
    assert "90.0096" in text
